"""Batch command-line front end.

Subcommands: gen, project, segment, instances, analyze, pipeline, eval,
render. Exit codes: 0 success, 1 validation/usage error, 2 I/O error.
All randomness flows from --seed; repeated runs with identical arguments
produce byte-identical outputs. SINOLOCATE_LOG={error,info,debug} controls
stderr verbosity.
"""

from __future__ import annotations

import argparse
import json
import logging
import multiprocessing
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import analysis, instanceseg, metrics, phantomgen, segmenter
from .core import (FormatError, ScanGeometry, SinolocateError, ValidationError,
                   estimates_from_json, estimates_to_json, read_raster,
                   records_from_json, write_pgm, write_raster)
from .projector import radon

log = logging.getLogger("sinolocate")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(1)


def _setup_logging():
    level = os.environ.get("SINOLOCATE_LOG", "error").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO,
              "debug": logging.DEBUG}
    logging.basicConfig(stream=sys.stderr,
                        level=levels.get(level, logging.ERROR),
                        format="%(levelname)s %(name)s: %(message)s")


def _geometry_for_mask(mask, image_size=None):
    n_angles, det_w = mask.shape
    size = det_w if image_size is None else image_size
    return ScanGeometry(size, size, n_angles, det_w)


# ---------------------------------------------------------------------------
# subcommand implementations
# ---------------------------------------------------------------------------

def _cmd_gen(args):
    try:
        spec = phantomgen.DatasetSpec.from_json(args.spec)
    except (KeyError, TypeError) as e:
        raise ValidationError(f"bad dataset spec: {e}") from e
    if args.seed is not None:
        spec = phantomgen.DatasetSpec.from_dict(
            {**spec.to_dict(), "seed": args.seed})
    manifest = phantomgen.gen_dataset(spec, args.out, jobs=args.jobs)
    log.info("gen: wrote %d samples to %s", len(manifest["samples"]), args.out)
    return 0


def _cmd_project(args):
    phantom = read_raster(args.infile)
    size = phantom.shape[1]
    g = ScanGeometry.square(size,
                            args.angles if args.angles else size,
                            args.detector if args.detector else size)
    sino = radon(phantom.astype(np.float64), g)
    write_raster(sino.astype(np.float32), args.out)
    return 0


def _cmd_segment(args):
    if args.method == "oracle":
        if not (args.clean and args.sino):
            raise ValidationError("oracle method needs --clean and --sino")
        mask = segmenter.oracle_segment(read_raster(args.clean),
                                        read_raster(args.sino), args.eps)
    elif args.method == "threshold":
        if not (args.sino and args.reference):
            raise ValidationError("threshold method needs --sino and --reference")
        mask = segmenter.threshold_segment(read_raster(args.sino),
                                           read_raster(args.reference), args.k)
    elif args.method == "degraded":
        if not args.mask:
            raise ValidationError("degraded method needs --mask")
        mask = segmenter.degrade_mask(read_raster(args.mask),
                                      args.p_fn, args.p_fp,
                                      args.seed if args.seed is not None else 0)
    else:  # external
        if not args.mask:
            raise ValidationError("external method needs --mask")
        mask = segmenter.load_mask(args.mask)
    write_raster(mask, args.out)
    return 0


def _cmd_instances(args):
    mask = segmenter.load_mask(args.mask)
    g = _geometry_for_mask(mask, args.image_size)
    result = instanceseg.separate_instances(mask, g, close_gap=args.close_gap)
    os.makedirs(args.out, exist_ok=True)
    for i, m in enumerate(result.masks):
        write_raster(m, os.path.join(args.out, f"instance_{i:02d}.sgr"))
    sin_payload = [{"label": i + 1, **s.to_dict(),
                    "amplitude": s.amplitude(g), "phase": s.phase(g)}
                   for i, s in enumerate(result.sinusoids)]
    with open(os.path.join(args.out, "sinusoids.json"), "w") as f:
        json.dump(sin_payload, f, indent=1, sort_keys=True)
    log.info("instances: %d defects", len(result.masks))
    return 0


def _cmd_analyze(args):
    masks = [segmenter.load_mask(p) for p in args.masks]
    if not masks:
        estimates = []
        g = None
    else:
        g = _geometry_for_mask(masks[0], args.image_size)
        estimates = analysis.analyze(masks, args.shape, g)
    estimates_to_json(estimates, args.out)
    return 0


def _cmd_render(args):
    r = read_raster(args.infile)
    vmin = args.vmin if args.vmin is not None else float(r.min())
    vmax = args.vmax if args.vmax is not None else float(r.max())
    if vmax <= vmin:
        vmax = vmin + 1.0
    write_pgm(r, args.out, vmin, vmax)
    return 0


# --- pipeline ---------------------------------------------------------------

def _external_mask_path(masks_dir, sample):
    flat = os.path.join(masks_dir, f"{sample['id']}.mask.sgr")
    if os.path.exists(flat):
        return flat
    sino_rel = sample["paths"]["sino"]
    base, _ext = os.path.splitext(sino_rel)
    mirrored = os.path.join(masks_dir, base + ".mask.sgr")
    if os.path.exists(mirrored):
        return mirrored
    raise FormatError(f"no external mask for sample {sample['id']} "
                      f"(tried {flat} and {mirrored})")


def _pipeline_sample(task):
    (sample, manifest_dir, out_dir, method, shape, seed, p_fn, p_fp, k,
     masks_dir, close_gap, iou_min, spec_dict) = task
    g = phantomgen.DatasetSpec.from_dict(spec_dict).geometry()
    paths = sample["paths"]
    join = lambda rel: os.path.join(manifest_dir, rel)
    gt_union = segmenter.load_mask(join(paths["mask"]))
    gt_instm = [segmenter.load_mask(join(p)) for p in paths["instance_masks"]]
    records = records_from_json(join(paths["records"]))

    if method == "oracle":
        pred_union = segmenter.oracle_segment(read_raster(join(paths["clean_sino"])),
                                              read_raster(join(paths["sino"])))
    elif method == "threshold":
        pred_union = segmenter.threshold_segment(read_raster(join(paths["sino"])),
                                                 read_raster(join(paths["clean_sino"])),
                                                 k)
    elif method == "degraded":
        ss = np.random.SeedSequence([seed, sample["order"]])
        pred_union = segmenter.degrade_mask(gt_union, p_fn, p_fp, ss)
    elif method == "external":
        pred_union = segmenter.load_mask(_external_mask_path(masks_dir, sample))
    else:
        raise ValidationError(f"unknown method {method!r}")

    result = instanceseg.separate_instances(pred_union, g, close_gap=close_gap)
    pix = metrics.pixel_metrics(pred_union, gt_union)
    inst = metrics.instance_correct_rate(result.masks, gt_instm, iou_min)
    estimates = analysis.analyze(result.masks, shape, g)
    loc_errors = []
    pairs = []
    for (pi, gj, iou) in inst["matches"]:
        err = metrics.localization_errors(estimates[pi], records[gj], g)
        loc_errors.append(err)
        pairs.append({"pred": pi, "gt": gj, "iou": iou, **err})

    sdir = os.path.join(out_dir, "samples", sample["id"])
    os.makedirs(sdir, exist_ok=True)
    write_raster(pred_union, os.path.join(sdir, "pred_mask.sgr"))
    for i, m in enumerate(result.masks):
        write_raster(m, os.path.join(sdir, f"instance_{i:02d}.sgr"))
    estimates_to_json(estimates, os.path.join(sdir, "estimates.json"))
    row = {"id": sample["id"], "pixel": pix,
           "instance_correct": inst["correct"], "n_pred": len(result.masks),
           "n_gt": len(gt_instm), "matches": pairs}
    with open(os.path.join(sdir, "sample_metrics.json"), "w") as f:
        json.dump(row, f, indent=1, sort_keys=True)
    return row, pix, inst, loc_errors


def _cmd_pipeline(args):
    manifest = phantomgen.load_manifest(args.manifest)
    manifest_dir = os.path.dirname(os.path.abspath(args.manifest))
    samples = manifest["samples"]
    if args.split != "all":
        samples = [s for s in samples if s["split"] == args.split]
    if not samples:
        raise ValidationError(f"no samples in split {args.split!r}")
    os.makedirs(args.out, exist_ok=True)
    tasks = []
    for order, sample in enumerate(samples):
        s = dict(sample)
        s["order"] = order
        tasks.append((s, manifest_dir, args.out, args.method, args.shape,
                      args.seed if args.seed is not None else 0,
                      args.p_fn, args.p_fp, args.k, args.masks_dir,
                      args.close_gap, args.iou_min, manifest["spec"]))
    if args.jobs > 1 and len(tasks) > 1:
        # spawn: the JIT'd projector's threading layer does not survive fork
        ctx = multiprocessing.get_context("spawn")
        with ProcessPoolExecutor(max_workers=args.jobs, mp_context=ctx) as pool:
            results = list(pool.map(_pipeline_sample, tasks, chunksize=1))
    else:
        results = [_pipeline_sample(t) for t in tasks]

    agg = metrics.Aggregate()
    rows = []
    for row, pix, inst, loc in results:
        agg.add_sample(pix, inst, loc)
        rows.append(row)
    report = agg.report()
    with open(os.path.join(args.out, "metrics.json"), "w") as f:
        json.dump(report, f, indent=1, sort_keys=True)
    with open(os.path.join(args.out, "per_sample.json"), "w") as f:
        json.dump(rows, f, indent=1, sort_keys=True)
    metrics.report_to_csv(report, os.path.join(args.out, "report.csv"))
    log.info("pipeline: %d samples, correct rate %.3f", len(rows),
             report["instance_segmentation"]["correct_rate"])
    return 0


def _cmd_eval(args):
    manifest = phantomgen.load_manifest(args.manifest)
    manifest_dir = os.path.dirname(os.path.abspath(args.manifest))
    g = phantomgen.DatasetSpec.from_dict(manifest["spec"]).geometry()
    samples = manifest["samples"]
    if args.split != "all":
        samples = [s for s in samples if s["split"] == args.split]
    agg = metrics.Aggregate()
    for sample in samples:
        sdir = os.path.join(args.results, "samples", sample["id"])
        if not os.path.isdir(sdir):
            raise FormatError(f"missing results for sample {sample['id']}")
        join = lambda rel: os.path.join(manifest_dir, rel)
        gt_union = segmenter.load_mask(join(sample["paths"]["mask"]))
        gt_instm = [segmenter.load_mask(join(p))
                    for p in sample["paths"]["instance_masks"]]
        records = records_from_json(join(sample["paths"]["records"]))
        pred_union_path = os.path.join(sdir, "pred_mask.sgr")
        pix = None
        if os.path.exists(pred_union_path):
            pix = metrics.pixel_metrics(segmenter.load_mask(pred_union_path),
                                        gt_union)
        pred_masks = []
        i = 0
        while os.path.exists(os.path.join(sdir, f"instance_{i:02d}.sgr")):
            pred_masks.append(segmenter.load_mask(
                os.path.join(sdir, f"instance_{i:02d}.sgr")))
            i += 1
        estimates = estimates_from_json(os.path.join(sdir, "estimates.json"))
        inst = metrics.instance_correct_rate(pred_masks, gt_instm, args.iou_min)
        loc = [metrics.localization_errors(estimates[pi], records[gj], g)
               for (pi, gj, _iou) in inst["matches"]]
        agg.add_sample(pix, inst, loc)
    report = agg.report()
    with open(args.out, "w") as f:
        json.dump(report, f, indent=1, sort_keys=True)
    return 0


# ---------------------------------------------------------------------------

def _build_parser() -> _Parser:
    p = _Parser(prog="sinolocate",
                description="Sinogram-space defect localization pipeline")
    sub = p.add_subparsers(dest="cmd", required=True)

    def common(sp):
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--jobs", type=int, default=1)

    sp = sub.add_parser("gen", help="generate a dataset from a spec JSON")
    sp.add_argument("--spec", required=True)
    sp.add_argument("--out", required=True)
    common(sp)
    sp.set_defaults(fn=_cmd_gen)

    sp = sub.add_parser("project", help="forward-project a phantom raster")
    sp.add_argument("--in", dest="infile", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--angles", type=int, default=None)
    sp.add_argument("--detector", type=int, default=None)
    sp.set_defaults(fn=_cmd_project)

    sp = sub.add_parser("segment", help="produce a binary defect mask")
    sp.add_argument("--method", required=True,
                    choices=["oracle", "threshold", "degraded", "external"])
    sp.add_argument("--sino")
    sp.add_argument("--clean")
    sp.add_argument("--reference")
    sp.add_argument("--mask")
    sp.add_argument("--eps", type=float, default=None)
    sp.add_argument("--k", type=float, default=5.0)
    sp.add_argument("--p-fn", type=float, default=0.0)
    sp.add_argument("--p-fp", type=float, default=0.0)
    sp.add_argument("--out", required=True)
    common(sp)
    sp.set_defaults(fn=_cmd_segment)

    sp = sub.add_parser("instances", help="split a mask into per-defect masks")
    sp.add_argument("--mask", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--image-size", type=int, default=None)
    sp.add_argument("--close-gap", type=int, default=3)
    sp.set_defaults(fn=_cmd_instances)

    sp = sub.add_parser("analyze", help="estimate center/size per defect mask")
    sp.add_argument("--masks", nargs="+", required=True)
    sp.add_argument("--shape", default="auto",
                    choices=["circle", "square", "auto"])
    sp.add_argument("--image-size", type=int, default=None)
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=_cmd_analyze)

    sp = sub.add_parser("pipeline", help="run segmentation->instances->analysis"
                                         " over a manifest and score it")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--method", default="oracle",
                    choices=["oracle", "threshold", "degraded", "external"])
    sp.add_argument("--shape", default="auto",
                    choices=["circle", "square", "auto"])
    sp.add_argument("--split", default="all",
                    choices=["train", "val", "test", "all"])
    sp.add_argument("--out", required=True)
    sp.add_argument("--p-fn", type=float, default=0.0)
    sp.add_argument("--p-fp", type=float, default=0.0)
    sp.add_argument("--k", type=float, default=5.0)
    sp.add_argument("--masks-dir", default=None)
    sp.add_argument("--close-gap", type=int, default=3)
    sp.add_argument("--iou-min", type=float, default=0.5)
    common(sp)
    sp.set_defaults(fn=_cmd_pipeline)

    sp = sub.add_parser("eval", help="score stored pipeline results vs a manifest")
    sp.add_argument("--results", required=True)
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--split", default="all",
                    choices=["train", "val", "test", "all"])
    sp.add_argument("--iou-min", type=float, default=0.5)
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=_cmd_eval)

    sp = sub.add_parser("render", help="raster to 8-bit PGM")
    sp.add_argument("--in", dest="infile", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--min", dest="vmin", type=float, default=None)
    sp.add_argument("--max", dest="vmax", type=float, default=None)
    sp.set_defaults(fn=_cmd_render)

    return p


def run(argv=None) -> int:
    _setup_logging()
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.fn(args)
    except (ValidationError, FormatError, SinolocateError) as e:
        sys.stderr.write(f"sinolocate: error: {e}\n")
        return 1
    except OSError as e:
        sys.stderr.write(f"sinolocate: i/o error: {e}\n")
        return 2


def main():
    raise SystemExit(run())


if __name__ == "__main__":
    main()
