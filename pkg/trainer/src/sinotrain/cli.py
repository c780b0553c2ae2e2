"""Command line: `sinotrain train` and `sinotrain predict`."""

import argparse
import json
import os
import sys

from .config import ConfigError, InferenceError, TrainConfig
from .data import load_manifest, split_samples
from .predict import predict
from .sgr import SgrError
from .train import train


def _cmd_train(args):
    if args.config:
        cfg = TrainConfig.from_json(args.config)
        if args.manifest:
            cfg.manifest = args.manifest
    else:
        if not args.manifest:
            raise ConfigError("need --config or --manifest")
        cfg = TrainConfig(manifest=args.manifest, epochs=args.epochs,
                          batch_size=args.batch_size, lr=args.lr,
                          seed=args.seed, device=args.device)
    out = train(cfg, args.out)
    print(out)
    return 0


def _cmd_predict(args):
    if args.manifest:
        manifest, root = load_manifest(args.manifest)
        samples = split_samples(manifest, args.split)
        inputs = [os.path.join(root, s["paths"]["sino"]) for s in samples]
        rel_root = root
    else:
        inputs = args.inputs
        rel_root = None
    if not inputs:
        raise ConfigError("nothing to predict")
    written = predict(args.model, inputs, args.out, rel_root=rel_root,
                      device=args.device)
    print(json.dumps({"n_masks": len(written)}))
    return 0


def run(argv=None) -> int:
    p = argparse.ArgumentParser(prog="sinotrain")
    sub = p.add_subparsers(dest="cmd", required=True)

    sp = sub.add_parser("train")
    sp.add_argument("--config", default=None)
    sp.add_argument("--manifest", default=None)
    sp.add_argument("--out", required=True)
    sp.add_argument("--epochs", type=int, default=20)
    sp.add_argument("--batch-size", type=int, default=4)
    sp.add_argument("--lr", type=float, default=1e-3)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--device", default="cpu")
    sp.set_defaults(fn=_cmd_train)

    sp = sub.add_parser("predict")
    sp.add_argument("--model", required=True)
    sp.add_argument("--manifest", default=None)
    sp.add_argument("--split", default="all",
                    choices=["train", "val", "test", "all"])
    sp.add_argument("--inputs", nargs="*", default=None)
    sp.add_argument("--out", required=True)
    sp.add_argument("--device", default="cpu")
    sp.set_defaults(fn=_cmd_predict)

    args = p.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, InferenceError, SgrError) as e:
        sys.stderr.write(f"sinotrain: error: {e}\n")
        return 1
    except OSError as e:
        sys.stderr.write(f"sinotrain: i/o error: {e}\n")
        return 2


def main():
    raise SystemExit(run())


if __name__ == "__main__":
    main()
