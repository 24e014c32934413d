"""Command line: ``strav inpaint | synth | eval | eval-losses``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import io as fio
from . import synthgen
from .core import InvalidInputError
from .losses import LOSS_NAMES
from .metrics import MetricReport, region_metrics, sequence_report, write_csv
from .pipeline import PipelineConfig, VideoJob, evaluate_sequence_losses, run

log = logging.getLogger("strav")


def _config(args):
    overrides = dict(
        scale=args.scale, reference_window=args.refs, flow_radius=args.flow_radius, tau=args.temp,
        tau_s=args.temp_s, patch=args.patch, workers=args.workers, alignment=args.alignment,
        emit_intermediates=True if getattr(args, "emit_intermediates", False) else None,
    )
    if args.config:
        return PipelineConfig.from_file(args.config, **overrides)
    return PipelineConfig().replace(**overrides)


def _add_config_flags(p):
    p.add_argument("--scale", type=int)
    p.add_argument("--refs", type=int, help="reference window (frames)")
    p.add_argument("--flow-radius", type=int)
    p.add_argument("--temp", type=float, help="temporal softmax temperature")
    p.add_argument("--temp-s", type=float, help="spatial softmax temperature")
    p.add_argument("--patch", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--alignment", choices=("joint", "affine", "flow"))
    p.add_argument("--config", help="flat 'key = value' file; flags override it")


def cmd_inpaint(args):
    cfg = _config(args)
    job = VideoJob(args.frames, args.masks, args.out, args.gt)
    report = run(job, cfg)
    if report is not None:
        print(f"mean  l1={report.l1:.6f}  psnr={report.psnr:.6f}  ssim={report.ssim:.6f}")
    return 0


def cmd_synth(args):
    suite = synthgen.get_suite(args.suite)
    spec = suite.spec(seed=args.seed, low_size=(args.size, args.size), scale=args.scale, frames=args.frames)
    seq = synthgen.generate(spec)
    names = fio.frame_names(len(seq.frames))
    fio.write_sequence(os.path.join(args.out, "frames"), seq.frames, names)
    fio.write_sequence(os.path.join(args.out, "masks"), seq.masks, names, writer=fio.write_mask)
    fio.write_sequence(os.path.join(args.out, "gt"), seq.ground_truth, names)
    print(f"wrote {len(names)} frames of suite {suite.name!r} to {args.out}")
    return 0


def cmd_eval(args):
    names = fio.list_images(args.a)
    if set(names) != set(fio.list_images(args.b)):
        raise InvalidInputError("directories hold different frame names")
    rows = []
    for name in names:
        a = fio.read_frame(os.path.join(args.a, name))
        b = fio.read_frame(os.path.join(args.b, name))
        if args.region:
            rows.append(region_metrics(a, b, fio.read_mask(os.path.join(args.region, name))))
        else:
            rows.append(sequence_report([a], [b]).per_frame[0])
    report = MetricReport(*[float(np.mean([r.as_row()[k] for r in rows])) for k in range(3)], per_frame=rows)
    if args.csv:
        write_csv(report, args.csv, names)
    print("frame,l1,psnr,ssim")
    for name, r in zip(names, rows):
        print(name + "," + ",".join(f"{v:.6f}" for v in r.as_row()))
    print("mean," + ",".join(f"{v:.6f}" for v in report.as_row()))
    return 0


def cmd_eval_losses(args):
    cfg = _config(args)
    names = fio.matched_names(args.frames, args.masks)

    def load(d, reader=fio.read_frame):
        return [reader(os.path.join(d, n)) for n in names]

    losses = evaluate_sequence_losses(
        load(args.frames), load(args.masks, fio.read_mask), load(args.gt), load(args.outputs), cfg
    )
    for k in LOSS_NAMES + ("total",):
        print(f"{k}={losses[k]:.6f}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(losses, fh, indent=2)
    return 0


def build_parser():
    ap = argparse.ArgumentParser(prog="strav", description="Low-resolution video inpainting with residual aggregation")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("inpaint", help="inpaint a frame directory")
    p.add_argument("--frames", required=True)
    p.add_argument("--masks", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--gt", help="ground-truth directory; enables metrics.csv")
    p.add_argument("--emit-intermediates", action="store_true")
    _add_config_flags(p)
    p.set_defaults(func=cmd_inpaint)

    p = sub.add_parser("synth", help="write a synthetic sequence")
    p.add_argument("--suite", required=True, choices=[s.name for s in synthgen.standard_suites()])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--size", type=int, default=128, help="low-resolution side length")
    p.add_argument("--scale", type=int, default=4)
    p.add_argument("--frames", type=int, default=5)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("eval", help="L1/PSNR/SSIM between two frame directories")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--region", help="mask directory restricting the metrics")
    p.add_argument("--csv")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("eval-losses", help="evaluate the eight loss terms on a finished sequence")
    p.add_argument("--frames", required=True)
    p.add_argument("--masks", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--outputs", required=True)
    p.add_argument("--json")
    _add_config_flags(p)
    p.set_defaults(func=cmd_eval_losses)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=[logging.WARNING, logging.INFO, logging.DEBUG][min(args.verbose, 2)],
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (InvalidInputError, OSError) as exc:
        print(f"strav: error: {exc}", file=sys.stderr)
        return 1
