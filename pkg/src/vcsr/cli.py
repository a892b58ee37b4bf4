"""Command-line surface: profile, run, rd-curve, adapt.

Exit codes: 2 usage errors (argparse), 3 input/format errors, 4 pipeline
errors, 1 anything unexpected.  Weight sets default to $VCSR_WEIGHTS (or
./weights) and are synthesized with seeded initialization when absent.
"""

import argparse
import os
import sys

from . import FormatError, PipelineError
from .experiment import RunConfig, profile_command, rd_curve, run_experiment

EXIT_INPUT = 3
EXIT_PIPELINE = 4


def _default_weights():
    return os.environ.get("VCSR_WEIGHTS", "weights")


def _add_common(p):
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--weights", default=_default_weights(),
                   help="weight-set directory (default $VCSR_WEIGHTS or ./weights)")
    p.add_argument("--fps", type=float, default=0.0, help="override the sidecar fps")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mtu", type=int, default=1200)
    p.add_argument("--bandwidth-kbps", type=float, default=0.0,
                   help="channel bandwidth (0 = unconstrained)")
    p.add_argument("--delay-s", type=float, default=0.0, help="propagation delay")
    p.add_argument("--compute-s", type=float, default=0.0,
                   help="modeled per-frame compute time in the latency log")
    p.add_argument("--ladder", default="", help="custom bitrate ladder (JSON)")
    p.add_argument("--no-figures", action="store_true", help="skip PNG rendering")


def _config_from(args, **overrides):
    cfg = RunConfig(
        input=getattr(args, "input", ""),
        out_dir=args.out,
        weights_dir=args.weights,
        fps=args.fps,
        seed=args.seed,
        mtu=args.mtu,
        bandwidth_kbps=args.bandwidth_kbps,
        propagation_delay_s=args.delay_s,
        compute_time_s=args.compute_s,
        ladder_path=args.ladder,
    )
    for k, v in overrides.items():
        setattr(cfg, k, v)
    return cfg


def _parse_points(specs):
    points = []
    for spec in specs:
        parts = spec.split(":")
        if len(parts) != 3:
            raise FormatError(f"point {spec!r} must be mode:resolution:kbps")
        mode, res_s, kbps_s = parts
        try:
            points.append((mode, int(res_s), float(kbps_s)))
        except ValueError as exc:
            raise FormatError(f"point {spec!r} must be mode:resolution:kbps") from exc
    return points


def build_parser():
    parser = argparse.ArgumentParser(
        prog="vcsr",
        description="simulate low-bitrate video calls with reference-conditioned "
                    "super-resolution")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("profile", help="sweep the codec quality range over a corpus")
    p.add_argument("videos", nargs="+", help="raw .rgb videos (with sidecars)")
    p.add_argument("--fps", type=float, default=30.0)
    p.add_argument("--out", required=True)
    p.add_argument("--no-figures", action="store_true")

    p = sub.add_parser("run", help="replay one video through the pipeline")
    p.add_argument("input", help="raw .rgb video")
    p.add_argument("--mode", default="neural",
                   choices=("neural", "keypoints", "bicubic", "fallback", "adaptive"))
    p.add_argument("--resolution", type=int, default=0, help="PF stream resolution")
    p.add_argument("--kbps", type=float, default=0.0, help="codec target bitrate")
    p.add_argument("--trace", default="", help="target-bitrate trace CSV (adaptive)")
    p.add_argument("--profile", default="", help="rate profile JSON (adaptive)")
    p.add_argument("--keypoint-set", default="p256",
                   help="weight set driving the keypoint-only baseline")
    _add_common(p)

    p = sub.add_parser("rd-curve", help="rate-distortion sweep over operating points")
    p.add_argument("input")
    p.add_argument("--point", action="append", required=True,
                   help="mode:resolution:kbps (repeatable)")
    _add_common(p)

    p = sub.add_parser("adapt", help="replay a time-varying target-bitrate trace")
    p.add_argument("input")
    p.add_argument("--trace", required=True)
    p.add_argument("--profile", default="", help="rate profile JSON")
    _add_common(p)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "profile":
            _, files = profile_command(args.videos, args.fps, args.out,
                                       write_figures=not args.no_figures)
        elif args.command == "run":
            cfg = _config_from(args, mode=args.mode, resolution=args.resolution,
                               target_kbps=args.kbps, trace_path=args.trace,
                               profile_path=args.profile,
                               keypoint_weight_set=args.keypoint_set)
            files = run_experiment(cfg, write_figures=not args.no_figures).files
        elif args.command == "rd-curve":
            cfg = _config_from(args)
            _, files = rd_curve(cfg, _parse_points(args.point),
                                write_figures=not args.no_figures)
        else:  # adapt
            cfg = _config_from(args, mode="adaptive", trace_path=args.trace,
                               profile_path=args.profile)
            files = run_experiment(cfg, write_figures=not args.no_figures).files
    except (FormatError, FileNotFoundError) as exc:
        print(f"vcsr: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except PipelineError as exc:
        print(f"vcsr: error: {exc}", file=sys.stderr)
        return EXIT_PIPELINE
    for label, path in sorted(files.items()):
        print(f"{label}: {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
