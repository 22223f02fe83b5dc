"""Command-line interface: ``interfero <subcommand> ...``.

Exit status is 0 on success, 1 when an operation fails and 2 for usage errors.
"""
from __future__ import annotations

import argparse
import math
import os
import sys

import numpy as np

from . import io
from .baselines import GoldsteinParams, baseline_coherence, boxcar_filter, goldstein_filter
from .coherence import (DEFAULT_LAMBDA, CoherenceConfig, build_coherence_model, build_targets,
                        estimate_coherence, extract_pair_patches, train_coherence)
from .denoiser import TrainConfig, build_denoiser, denoise, extract_patches, train_denoiser
from .metrics import EvalReport, cmse, phce, time_stage
from .preprocess import preprocess
from .simulator import SceneConfig, make_dataset

METHODS = ("noisy", "boxcar", "goldstein", "proposed")


class CommandError(Exception):
    """Operational failure reported to the user with exit status 1."""


def _range(text):
    try:
        lo, hi = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'lo,hi', got {text!r}") from None
    return lo, hi


def _int_range(text):
    lo, hi = _range(text)
    if lo != int(lo) or hi != int(hi):
        raise argparse.ArgumentTypeError(f"expected integers, got {text!r}")
    return int(lo), int(hi)


def _odd(text):
    k = int(text)
    if k < 1 or k % 2 == 0:
        raise argparse.ArgumentTypeError(f"window must be odd and >= 1, got {k}")
    return k


def _positive(text):
    n = int(text)
    if n < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {n}")
    return n


def _log(args):
    return None if args.quiet else (lambda msg: print(msg, file=sys.stderr))


def _read_list(path):
    """Non-empty, non-comment lines of a text file; relative paths resolve against it."""
    base = os.path.dirname(os.path.abspath(path))
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line and not line.startswith("#"):
                rows.append([os.path.join(base, p) for p in line.split()])
    return rows


def _training_rasters(path):
    """Noisy interferograms from a manifest, a list file or a single IGRM file."""
    if path.endswith(".igrm"):
        return [io.read_raster(path, expect="IGRM")]
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head == b"IGRM":
        return [io.read_raster(path, expect="IGRM")]
    if head.startswith(b"#"):
        records, _ = io.read_manifest(path)
        return [io.read_raster(r.noisy, expect="IGRM") for r in records]
    return [io.read_raster(row[0], expect="IGRM") for row in _read_list(path)]


# --------------------------------------------------------------------------
# subcommands

def cmd_simulate(args):
    cfg = SceneConfig(size=args.size, bubbles=args.bubbles, bubble_amplitude=args.bubble_amplitude,
                      bubble_sigma=args.bubble_sigma, roads=args.roads,
                      road_width=args.road_width, road_slope=args.road_slope,
                      buildings=args.buildings, building_extent=args.building_extent,
                      building_offset=args.building_offset, sigma_range=args.sigma_range,
                      sigma_grid=args.sigma_grid)
    manifest = make_dataset(args.count, cfg, args.seed, args.out)
    print(manifest)


def cmd_train_denoiser(args):
    cfg = TrainConfig(args.patch_size, args.patches_per_image, args.epochs, args.batch_size,
                      args.seed, args.learning_rate)
    rasters = _training_rasters(args.data)
    patches = np.concatenate([
        extract_patches(preprocess(z), cfg.patch_size, cfg.patches_per_image, [cfg.seed, i])
        for i, z in enumerate(rasters)])
    model, history = train_denoiser(patches, cfg, build_denoiser(cfg.seed), log=_log(args))
    io.save_checkpoint(model, args.out)
    if history:
        print(f"final loss {history[-1]:.6g}")


def cmd_denoise(args):
    model = io.load_checkpoint(args.model)
    io.write_raster(denoise(model, io.read_raster(args.input, expect="IGRM")), args.out,
                    kind="IGRM")


def cmd_build_targets(args):
    noisy = io.read_raster(args.noisy, expect="IGRM")
    if args.model:
        filtered = denoise(io.load_checkpoint(args.model), noisy)
    else:
        filtered = boxcar_filter(noisy, args.boxcar)
    raw, labels, target = build_targets(noisy, filtered, args.window)
    io.write_raster(target, args.out, kind="COHR")
    if args.raw_out:
        io.write_raster(raw, args.raw_out, kind="COHR")
    print(f"{labels.n_regions} regions, {labels.coherent_mask().mean():.3f} coherent")


def cmd_train_coherence(args):
    cfg = CoherenceConfig(args.patch_size, args.patches_per_image, args.epochs,
                          args.batch_size, args.reg_lambda, args.seed, args.learning_rate)
    xs, ys = [], []
    for i, row in enumerate(_read_list(args.pairs)):
        if len(row) != 2:
            raise CommandError(f"{args.pairs}: each line needs 'noisy target', got {row}")
        z = io.read_raster(row[0], expect="IGRM")
        t = io.read_raster(row[1], expect="COHR")
        px, py = extract_pair_patches(preprocess(z).channels, t, cfg.patch_size,
                                      cfg.patches_per_image, [cfg.seed, i])
        xs.append(px)
        ys.append(py)
    if not xs:
        raise CommandError(f"{args.pairs}: no training pairs")
    model = build_coherence_model(cfg.seed, cfg.reg_lambda)
    model, history = train_coherence(np.concatenate(xs), np.concatenate(ys), cfg, model,
                                     log=_log(args))
    io.save_checkpoint(model, args.out)
    if history:
        print(f"final loss {history[-1]:.6g}")


def cmd_estimate_coherence(args):
    model = io.load_checkpoint(args.model)
    raster = io.read_raster(args.input, expect="IGRM")
    io.write_raster(estimate_coherence(model, raster), args.out, kind="COHR")


def cmd_filter_boxcar(args):
    raster = io.read_raster(args.input, expect="IGRM")
    io.write_raster(boxcar_filter(raster, args.k), args.out, kind="IGRM")


def cmd_filter_goldstein(args):
    params = GoldsteinParams(args.alpha, args.patch, args.overlap, args.smooth)
    raster = io.read_raster(args.input, expect="IGRM")
    io.write_raster(goldstein_filter(raster, params), args.out, kind="IGRM")


def evaluate_scene(report, index, noisy, clean, gamma, methods, *, boxcar_k=3, window=11,
                   goldstein=None, denoiser=None, coherence_model=None):
    """Add one row per method for a single scene to ``report``."""
    for method in methods:
        if method == "noisy":
            seconds, out = 0.0, noisy
            coh = math.nan
        elif method == "boxcar":
            seconds, out = time_stage(boxcar_filter, noisy, boxcar_k)
            coh = cmse(baseline_coherence(noisy, out, window), gamma)
        elif method == "goldstein":
            seconds, out = time_stage(goldstein_filter, noisy, goldstein)
            coh = cmse(baseline_coherence(noisy, out, window), gamma)
        elif method == "proposed":
            seconds, out = time_stage(denoise, denoiser, noisy)
            if coherence_model is not None:
                t, est = time_stage(estimate_coherence, coherence_model, noisy)
                seconds += t
            else:
                est = baseline_coherence(noisy, out, window)
            coh = cmse(est, gamma)
        else:
            raise ValueError(f"unknown method {method!r}")
        report.add(index, method, phce(out, clean), coh, seconds)


def cmd_evaluate(args):
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    unknown = [m for m in methods if m not in METHODS]
    if unknown:
        raise CommandError(f"unknown methods {unknown}; choose from {list(METHODS)}")
    denoiser = coherence_model = None
    if "proposed" in methods:
        if not args.denoiser:
            raise CommandError("method 'proposed' needs --denoiser")
        denoiser = io.load_checkpoint(args.denoiser)
        if args.coherence_model:
            coherence_model = io.load_checkpoint(args.coherence_model)
    records, _ = io.read_manifest(args.manifest)
    if args.limit:
        records = records[:args.limit]
    report = EvalReport()
    report.notes.append(f"coherence for baselines: {args.window}x{args.window} window "
                        "between noisy and filtered rasters; the noisy row has no estimate")
    goldstein = GoldsteinParams(alpha=args.alpha)
    for r in records:
        noisy = io.read_raster(r.noisy, expect="IGRM")
        clean = io.read_raster(r.clean, expect="PHSE")
        gamma = io.read_raster(r.gamma, expect="COHR")
        evaluate_scene(report, r.index, noisy, clean, gamma, methods, boxcar_k=args.k,
                       window=args.window, goldstein=goldstein, denoiser=denoiser,
                       coherence_model=coherence_model)
    with open(args.report, "w") as fh:
        fh.write(report.to_csv())
    print(report.to_table(), end="")


def cmd_render(args):
    kind, arr = io.read_raster_kind(args.input)
    mode = args.mode or {"IGRM": "phase", "PHSE": "phase", "COHR": "coherence"}[kind]
    io.render_ppm(arr, args.out, mode)


# --------------------------------------------------------------------------
# parser

def build_parser():
    parser = argparse.ArgumentParser(prog="interfero",
                                     description="CNN denoising and coherence estimation "
                                                 "for InSAR interferograms")
    parser.add_argument("-q", "--quiet", action="store_true", help="suppress progress output")
    sub = parser.add_subparsers(dest="command", metavar="command", required=True)

    d = SceneConfig()
    p = sub.add_parser("simulate", help="write simulated scenes and a manifest")
    p.add_argument("--count", type=_positive, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--size", type=int, default=d.size)
    p.add_argument("--bubbles", type=_int_range, default=d.bubbles, metavar="LO,HI")
    p.add_argument("--bubble-amplitude", type=float, default=d.bubble_amplitude)
    p.add_argument("--bubble-sigma", type=_range, default=d.bubble_sigma, metavar="LO,HI")
    p.add_argument("--roads", type=_int_range, default=d.roads, metavar="LO,HI")
    p.add_argument("--road-width", type=_range, default=d.road_width, metavar="LO,HI")
    p.add_argument("--road-slope", type=float, default=d.road_slope)
    p.add_argument("--buildings", type=_int_range, default=d.buildings, metavar="LO,HI")
    p.add_argument("--building-extent", type=_int_range, default=d.building_extent,
                   metavar="LO,HI")
    p.add_argument("--building-offset", type=float, default=d.building_offset)
    p.add_argument("--sigma-range", type=_range, default=d.sigma_range, metavar="LO,HI")
    p.add_argument("--sigma-grid", type=int, default=d.sigma_grid)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train-denoiser", help="train the autoencoder on noisy data")
    p.add_argument("--data", required=True,
                   help="manifest, list of IGRM paths, or a single IGRM file")
    p.add_argument("--patch-size", type=_positive, default=60)
    p.add_argument("--patches-per-image", type=_positive, default=500)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--batch-size", type=_positive, default=32)
    p.add_argument("--learning-rate", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.set_defaults(func=cmd_train_denoiser)

    p = sub.add_parser("denoise", help="denoise an interferogram")
    p.add_argument("--model", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_denoise)

    p = sub.add_parser("build-targets", help="segmentation-preprocessed coherence targets")
    p.add_argument("--noisy", required=True)
    p.add_argument("--model", help="denoiser checkpoint (default: boxcar filter)")
    p.add_argument("--boxcar", type=_odd, default=5,
                   help="boxcar window used when no --model is given")
    p.add_argument("--window", type=_odd, default=11)
    p.add_argument("--raw-out", help="also write the raw coherence map")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_targets)

    p = sub.add_parser("train-coherence", help="train the coherence CNN")
    p.add_argument("--pairs", required=True, help="text file of 'noisy.igrm target.cohr' lines")
    p.add_argument("--patch-size", type=_positive, default=64)
    p.add_argument("--patches-per-image", type=_positive, default=500)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--batch-size", type=_positive, default=32)
    p.add_argument("--lambda", dest="reg_lambda", type=float, default=DEFAULT_LAMBDA)
    p.add_argument("--learning-rate", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_coherence)

    p = sub.add_parser("estimate-coherence", help="predict a coherence map")
    p.add_argument("--model", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_estimate_coherence)

    p = sub.add_parser("filter-boxcar", help="complex boxcar filter")
    p.add_argument("--k", type=_odd, default=3)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_filter_boxcar)

    g = GoldsteinParams()
    p = sub.add_parser("filter-goldstein", help="Goldstein spectral filter")
    p.add_argument("--alpha", type=float, default=g.alpha)
    p.add_argument("--patch", type=int, default=g.patch)
    p.add_argument("--overlap", type=int, default=g.overlap)
    p.add_argument("--smooth", type=int, default=g.smooth)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_filter_goldstein)

    p = sub.add_parser("evaluate", help="phce/cmse comparison over a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--methods", default="noisy,boxcar,goldstein",
                   help=f"comma-separated subset of {','.join(METHODS)}")
    p.add_argument("--denoiser", help="denoiser checkpoint for 'proposed'")
    p.add_argument("--coherence-model", help="coherence checkpoint for 'proposed'")
    p.add_argument("--k", type=_odd, default=3, help="boxcar window")
    p.add_argument("--alpha", type=float, default=g.alpha, help="Goldstein exponent")
    p.add_argument("--window", type=_odd, default=11, help="coherence window")
    p.add_argument("--limit", type=int, default=0, help="evaluate only the first N scenes")
    p.add_argument("--report", required=True, help="CSV output path")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("render", help="render a raster as a PPM image")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--mode", choices=io.RENDER_MODES,
                   help="default: phase for IGRM/PHSE, coherence for COHR")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_render)
    return parser


def _limit_threads():
    value = os.environ.get("INTERFERO_THREADS", "0").strip() or "0"
    try:
        n = int(value)
    except ValueError:
        raise CommandError(f"INTERFERO_THREADS must be an integer, got {value!r}") from None
    if n < 0:
        raise CommandError("INTERFERO_THREADS must be >= 0")
    if n == 0:
        return None
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=n)


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 2
    try:
        limiter = _limit_threads()
        try:
            args.func(args)
        finally:
            if limiter is not None:
                limiter.restore_original_limits()
    except (CommandError, OSError, ValueError) as exc:
        print(f"interfero {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
