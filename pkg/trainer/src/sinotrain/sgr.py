"""Minimal SGR1 raster I/O.

The trainer talks to the simulation pipeline only through files, so it
carries its own reader/writer for the container: 4-byte magic "SGR1",
dtype byte (0=float32, 1=uint8), reserved byte, LE u16 version=1,
LE u32 rows, LE u32 cols, then the row-major little-endian payload.
"""

import struct

import numpy as np

MAGIC = b"SGR1"
VERSION = 1
_HEADER = struct.Struct("<4sBBHII")
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("uint8")}


class SgrError(ValueError):
    pass


def read_sgr(path) -> np.ndarray:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < _HEADER.size:
        raise SgrError(f"{path}: truncated header")
    magic, code, _res, version, rows, cols = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise SgrError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise SgrError(f"{path}: bad version {version}")
    if code not in _DTYPES:
        raise SgrError(f"{path}: bad dtype code {code}")
    dt = _DTYPES[code]
    payload = raw[_HEADER.size:]
    if len(payload) != rows * cols * dt.itemsize:
        raise SgrError(f"{path}: payload size {len(payload)} != "
                       f"{rows * cols * dt.itemsize}")
    arr = np.frombuffer(payload, dtype=dt).reshape(rows, cols)
    return arr.astype(np.float32) if code == 0 else arr.copy()


def write_sgr(arr: np.ndarray, path) -> None:
    arr = np.asarray(arr)
    if arr.ndim != 2:
        raise SgrError(f"raster must be 2D, got {arr.shape}")
    if arr.dtype == np.uint8:
        code, payload = 1, np.ascontiguousarray(arr)
    else:
        code, payload = 0, np.ascontiguousarray(arr, dtype="<f4")
    header = _HEADER.pack(MAGIC, code, 0, VERSION, arr.shape[0], arr.shape[1])
    with open(path, "wb") as f:
        f.write(header)
        f.write(payload.tobytes())
