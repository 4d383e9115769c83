"""Command-line interface.

Exit codes: 0 success, 2 invalid input, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from pathlib import Path

import numba
import numpy as np

from . import io
from .changepoint import PixelChangepoints, detect_exhaustive, detect_tensor
from .core import PhotonFrameTensor, QisFrameTensor, SaturationError, SensorConfig, to_interarrival
from .cpv import build_cpv, sample_cpv
from .deblur import DeblurConfig, deblur_fixed_windows, deblur_global
from .ecc import AlignmentError
from .experiments import KINDS, ExperimentSpec, run_experiment
from .metrics import snr
from .multiobject import cluster_dbscan, segment_and_deblur
from .online import OnlineDetectorState, emissions_to_changepoints, online_emissions
from .scenes import orange, two_cars
from .simulate import MotionScript, render_flux_sequence, sample_photon_frames, scale_flux, strip_timing

log = logging.getLogger("spadblur")

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3


class InputError(Exception):
    pass


def _pair(text: str) -> tuple[int, int]:
    parts = text.lower().replace("x", ",").split(",")
    if len(parts) == 1:
        parts = parts * 2
    try:
        fx, fy = (int(p) for p in parts)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected N or NxM, got {text!r}") from None
    if fx < 1 or fy < 1:
        raise argparse.ArgumentTypeError("upsampling factors must be >= 1")
    return fx, fy


def _load_tensor(path, qis: bool = False):
    if not Path(path).exists():
        raise InputError(f"no such file: {path}")
    t = io.read_tensor(path)
    if qis and isinstance(t, PhotonFrameTensor):
        t = strip_timing(t)
    return t


def _detect(tensor, algo: str, lam: float, min_size: int) -> PixelChangepoints:
    if algo in ("pelt", "bottomup"):
        return detect_tensor(tensor, lam, method=algo, min_size=min_size)
    if isinstance(tensor, QisFrameTensor):
        raise InputError(f"--algo {algo} needs timestamp data")
    if algo == "online":
        st = OnlineDetectorState()
        em = online_emissions(tensor, st)
        return emissions_to_changepoints(em, tensor.height, tensor.width, tensor.n_frames, min_gap=min_size, state=st)
    # exhaustive: only for very short captures
    cfg = tensor.config
    bounds = []
    for r in range(tensor.height):
        for c in range(tensor.width):
            s = to_interarrival(tensor.data[:, r, c], cfg)
            if len(s) == 0:
                bounds.append([0, tensor.n_frames])
                continue
            x = np.maximum(s.measurements / cfg.bin_width, 0.5)
            cp = detect_exhaustive(x, lam, min_size=min_size)
            b = np.asarray(cp.indices)
            fb = [0] + [int(s.frame_index_of[i - 1]) + 1 for i in b[1:-1]] + [tensor.n_frames]
            bounds.append(fb)
    return PixelChangepoints.from_lists(tensor.height, tensor.width, tensor.n_frames, bounds, lam, "exhaustive")


def _changepoints(args, tensor) -> PixelChangepoints:
    if getattr(args, "changepoints", None):
        cps = io.load_changepoints(args.changepoints)
        if (cps.height, cps.width, cps.n_frames) != (tensor.height, tensor.width, tensor.n_frames):
            raise InputError("changepoint file does not match the tensor dimensions")
        return cps
    return _detect(tensor, args.algo, args.lam, args.min_size)


# ---------------------------------------------------------------- subcommands

def cmd_simulate(args) -> int:
    cfg = SensorConfig(args.bins, args.bin_width, args.efficiency)
    if args.scene == "cars":
        scene = two_cars(n_frames=args.steps)
        ten = sample_photon_frames(list(scene.frames), 1, cfg, args.seed)
        gt = scene.frames[0]
        transforms = []
    else:
        base = orange(2 * args.size) if args.scene == "orange" else np.ones((2 * args.size, 2 * args.size))
        gt_hi = scale_flux(base, args.peak_flux / args.dynamic_range, args.peak_flux) if args.scene == "orange" \
            else base * args.peak_flux
        kind = {"shake": "random_shake"}.get(args.motion, args.motion)
        script = MotionScript(kind, total_steps=args.steps, photons_per_step=args.frames_per_step,
                              translation=tuple(args.translation), rotation_deg=args.rotation,
                              shake_bound=args.shake_bound, rng_seed=args.seed)
        seq, transforms = render_flux_sequence(gt_hi, script, render_factor=2, background=float(gt_hi.min()))
        ten = sample_photon_frames(seq, args.frames_per_step, cfg, args.seed)
        gt = seq[0].values
    if args.qis:
        ten = strip_timing(ten)
    io.write_tensor(args.output, ten)
    log.info("wrote %s: %d frames of %dx%d", args.output, ten.n_frames, ten.height, ten.width)
    if args.ground_truth:
        _write_image(args.ground_truth, gt)
    if args.trajectory and transforms:
        io.write_trajectory_csv(args.trajectory, transforms)
    return EXIT_OK


def _write_image(path, img):
    if str(path).lower().endswith(".csv"):
        io.write_flux_csv(path, img)
    else:
        io.write_image(path, img)


def cmd_detect(args) -> int:
    ten = _load_tensor(args.input, args.qis)
    cps = _detect(ten, args.algo, args.lam, args.min_size)
    io.save_changepoints(args.output, cps)
    n = cps.n_changepoints()
    print(json.dumps({"algo": args.algo, "lambda": args.lam, "events": int(n.sum()),
                      "mean_per_pixel": float(n.mean())}))
    if args.count_image:
        _write_image(args.count_image, n.astype(float))
    return EXIT_OK


def cmd_cpv(args) -> int:
    ten = _load_tensor(args.input, args.qis)
    cps = _changepoints(args, ten)
    samples = sample_cpv(build_cpv(ten, cps), args.switch_fraction)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for k, (f, img) in enumerate(zip(samples.frame_times, samples.images)):
        name = f"frame_{k:04d}.png"
        io.write_image(out / name, img)
        rows.append({"index": k, "frame": int(f), "time_s": float(f) * ten.config.frame_period, "image": name})
    io.write_table(out / "frames.csv", rows, ["index", "frame", "time_s", "image"])
    print(json.dumps({"frames": len(rows), "switch_fraction": args.switch_fraction}))
    return EXIT_OK


def cmd_deblur(args) -> int:
    ten = _load_tensor(args.input, args.qis)
    cfg = DeblurConfig(penalty=args.lam, method=args.algo if args.algo in ("pelt", "bottomup") else "pelt",
                       switch_fraction=args.switch_fraction, upsample=args.upsample)
    cps = _changepoints(args, ten)
    res = deblur_global(ten, cfg, changepoints=cps)
    _write_image(args.output, res.image)
    summary = {"keyframes": len(res.keyframe_times)}
    if args.trajectory:
        io.write_trajectory_csv(args.trajectory, [res.trajectory.transform(f) for f in range(ten.n_frames)])
    if args.baseline_window:
        base = deblur_fixed_windows(ten, args.baseline_window)
        p = Path(args.output)
        _write_image(p.with_name(p.stem + f"_fixed{args.baseline_window}" + p.suffix), base.image)
        summary["baseline_window"] = args.baseline_window
    print(json.dumps(summary))
    return EXIT_OK


def cmd_segment(args) -> int:
    ten = _load_tensor(args.input)
    if isinstance(ten, QisFrameTensor):
        raise InputError("segment needs timestamp data")
    cps = _changepoints(args, ten)
    labels = cluster_dbscan(cps.events(), args.eps, args.min_pts, args.time_scale)
    res = segment_and_deblur(ten, cps, labels, eps=args.eps, min_pts=args.min_pts, time_scale=args.time_scale,
                             config=DeblurConfig(penalty=args.lam))
    _write_image(args.output, res.image)
    print(json.dumps({"clusters": len(res.clusters), "noise_events": int((labels < 0).sum()),
                      "paste_boxes": {str(k): list(v) for k, v in res.paste_boxes.items()},
                      "flags": {str(k): v for k, v in res.flags.items()}}))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    for p in (args.estimate, args.ground_truth):
        if not Path(p).exists():
            raise InputError(f"no such file: {p}")
    est = io.read_image(args.estimate)
    gt = io.read_image(args.ground_truth)
    mask = io.read_image(args.mask) > 0 if args.mask else None
    print(json.dumps({"snr_db": snr(est, gt, mask)}))
    return EXIT_OK


def cmd_experiment(args) -> int:
    params = {}
    for kv in args.param or []:
        if "=" not in kv:
            raise InputError(f"--param expects key=value, got {kv!r}")
        k, v = kv.split("=", 1)
        params[k.strip()] = io.parse_value(v)
    if args.kind == "contrast_speed" and args.threads > 1:
        params.setdefault("workers", args.threads)
    try:
        spec = ExperimentSpec(args.kind, params, args.seed, args.output)
        rep = run_experiment(spec)
    except TypeError as exc:
        raise InputError(f"bad experiment parameter: {exc}") from exc
    for row in rep.rows:
        print(json.dumps({k: v for k, v in row.items()}, default=float))
    return EXIT_OK


# ---------------------------------------------------------------- parser

def _detector_flags(p, with_cps: bool = True):
    p.add_argument("--algo", choices=("pelt", "bottomup", "exhaustive", "online"), default="pelt")
    p.add_argument("--lambda", dest="lam", type=float, default=6.0, help="penalty per changepoint")
    p.add_argument("--min-size", type=int, default=2, help="minimum segment length (measurements)")
    p.add_argument("--qis", action="store_true", help="discard timing and treat frames as binary")
    if with_cps:
        p.add_argument("--changepoints", help="reuse a .npz from `detect` instead of detecting again")


def _common_flags(p, default):
    p.add_argument("--threads", type=int, default=default, help="worker threads/processes")
    p.add_argument("--config", default=default, help="key = value file; command-line flags take precedence")
    p.add_argument("-v", "--verbose", action="store_true", default=default)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="spadblur", description="Motion deblurring for single-photon frame data.")
    _common_flags(ap, argparse.SUPPRESS)
    ap.set_defaults(threads=1, config=None, verbose=False)
    # the same flags are accepted after the subcommand
    common = argparse.ArgumentParser(add_help=False)
    _common_flags(common, argparse.SUPPRESS)
    sub = ap.add_subparsers(dest="command", required=True)
    _add = sub.add_parser
    sub.add_parser = lambda *a, **k: _add(*a, parents=[common], **k)

    p = sub.add_parser("simulate", help="render a scene and sample photon frames")
    p.add_argument("output", help=".spf (or .sqf with --qis)")
    p.add_argument("--scene", choices=("orange", "cars", "flat"), default="orange")
    p.add_argument("--motion", choices=("rotation", "translation", "shake", "static"), default="rotation")
    p.add_argument("--size", type=int, default=128)
    p.add_argument("--steps", type=int, default=100)
    p.add_argument("--frames-per-step", type=int, default=10)
    p.add_argument("--rotation", type=float, default=0.1, help="degrees per step")
    p.add_argument("--translation", type=float, nargs=2, default=(0.0, 0.0), metavar=("DX", "DY"))
    p.add_argument("--shake-bound", type=int, default=3)
    p.add_argument("--peak-flux", type=float, default=1e8)
    p.add_argument("--dynamic-range", type=float, default=100.0)
    p.add_argument("--bins", type=int, default=8000)
    p.add_argument("--bin-width", type=float, default=256e-12)
    p.add_argument("--efficiency", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--qis", action="store_true")
    p.add_argument("--ground-truth", help="write the time-0 flux image here")
    p.add_argument("--trajectory", help="write the true per-step motion as CSV")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("detect", help="per-pixel flux changepoints")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True, help=".npz changepoint file")
    p.add_argument("--count-image", help="image of changepoints per pixel")
    _detector_flags(p, with_cps=False)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("cpv", help="sample the changepoint video")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True, help="output directory")
    p.add_argument("--switch-fraction", type=float, default=0.01)
    _detector_flags(p)
    p.set_defaults(func=cmd_cpv)

    p = sub.add_parser("deblur", help="global-motion deblurring")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True, help="image (.png, .pgm or .csv)")
    p.add_argument("--upsample", type=_pair, default=(1, 1), help="N or NxM zero-order-hold factor")
    p.add_argument("--baseline-window", type=int, default=0, help="also write a fixed-window merge")
    p.add_argument("--switch-fraction", type=float, default=0.01)
    p.add_argument("--trajectory", help="write the recovered per-frame motion as CSV")
    _detector_flags(p)
    p.set_defaults(func=cmd_deblur)

    p = sub.add_parser("segment", help="multi-object deblurring")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--eps", type=float, default=7.5)
    p.add_argument("--min-pts", type=int, default=40)
    p.add_argument("--time-scale", type=float, default=0.02, help="pixels per photon frame in the clustering metric")
    _detector_flags(p)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("evaluate", help="SNR of an estimate against ground truth")
    p.add_argument("estimate")
    p.add_argument("ground_truth")
    p.add_argument("--mask")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("experiment", help="run a simulation experiment")
    p.add_argument("kind", choices=KINDS)
    p.add_argument("-o", "--output", help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--param", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=cmd_experiment)
    return ap


def _apply_config(ap: argparse.ArgumentParser, argv) -> argparse.Namespace:
    """Config-file values become defaults, so explicit flags still win."""
    pre = ap.parse_args(argv)
    if not pre.config:
        return pre
    values = {k.replace("-", "_"): v for k, v in io.read_config(pre.config).items()}
    if "lambda" in values:
        values["lam"] = values.pop("lambda")
    ap.set_defaults(**{k: v for k, v in values.items() if k in ("threads", "verbose")})
    for action in ap._subparsers._group_actions:
        for sp in action.choices.values():
            known = {a.dest for a in sp._actions}
            sp.set_defaults(**{k: v for k, v in values.items() if k in known})
    return ap.parse_args(argv)


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = _apply_config(ap, argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_INPUT
    except (io.FormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_INPUT
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", numba.NumbaWarning)
        numba.set_num_threads(min(args.threads, numba.config.NUMBA_NUM_THREADS))
    try:
        return args.func(args)
    except (SaturationError, AlignmentError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (InputError, io.FormatError, ValueError, TypeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
