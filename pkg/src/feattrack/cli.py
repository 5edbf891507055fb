"""Command-line front end: a thin client over the service endpoints.

Subcommands: synth, track, eval, bench-speed, serve. All but serve talk to
the service through ServiceClient (in-process by default, --server for a
remote host).
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from .client import ServiceClient, ServiceError


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="config file (`key = value` lines) applied over the base")
    p.add_argument(
        "--paper-config",
        action="store_true",
        help="base the run on the published hyperparameters (r_c 1.2) instead of the harness default (r_c 2.0)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="feattrack", description=__doc__)
    parser.add_argument(
        "--server",
        default=os.environ.get("FEATTRACK_SERVER"),
        help="service URL; default runs the service in-process",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic sequence")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--frames", type=int, default=60)
    p.add_argument("--challenges", default="", help="comma list: illumination,blur,occlusion,scale,clutter")
    p.add_argument("--size", default="320x240", help="WxH")
    p.add_argument("--target-size", type=int, default=48)
    p.add_argument("--out", required=True, help="output sequence directory")

    p = sub.add_parser("track", help="track a sequence, write results.csv")
    p.add_argument("--seq", required=True, help="sequence directory")
    _add_config_flags(p)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True, help="results CSV path")
    p.add_argument(
        "--timing",
        choices=("none", "wall"),
        default="none",
        help="'wall' records per-frame milliseconds; 'none' (default) keeps the CSV byte-reproducible",
    )
    p.add_argument("--scoring", choices=("sampling", "raw"), default="sampling")

    p = sub.add_parser("eval", help="score a results CSV against a sequence")
    p.add_argument("--results", required=True)
    p.add_argument("--seq", required=True)
    p.add_argument("--out", required=True, help="report path")

    p = sub.add_parser("bench-speed", help="sampling path vs raw-image baseline")
    p.add_argument("--seq", required=True)
    p.add_argument("--candidates", type=int, default=256)
    _add_config_flags(p)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True, help="benchmark report path")

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8711)
    return parser


def _config_text(args) -> str | None:
    if args.config:
        return Path(args.config).read_text(encoding="utf-8")
    return None


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)

    if args.command == "serve":
        import uvicorn

        from .service import app

        uvicorn.run(app, host=args.host, port=args.port)
        return 0

    try:
        with ServiceClient(args.server) as client:
            if args.command == "synth":
                w, _, h = args.size.partition("x")
                challenges = [c for c in args.challenges.split(",") if c]
                out = client.post(
                    "/synth",
                    {
                        "seed": args.seed,
                        "frames": args.frames,
                        "challenges": challenges,
                        "width": int(w),
                        "height": int(h),
                        "target_size": args.target_size,
                        "out_dir": args.out,
                    },
                )
                print(f"wrote {out['frames']} frames to {out['dir']}")
            elif args.command == "track":
                out = client.post(
                    "/track",
                    {
                        "seq_dir": args.seq,
                        "seed": args.seed,
                        "config_text": _config_text(args),
                        "paper_config": args.paper_config,
                        "timing": args.timing,
                        "scoring": args.scoring,
                    },
                )
                Path(args.out).write_text(out["csv"], encoding="utf-8")
                print(f"tracked {out['frames']} frames -> {args.out} (mean {out['mean_ms']:.1f} ms/frame)")
            elif args.command == "eval":
                out = client.post(
                    "/eval",
                    {
                        "results_csv": Path(args.results).read_text(encoding="utf-8"),
                        "seq_dir": args.seq,
                    },
                )
                Path(args.out).write_text(out["report"], encoding="utf-8")
                print(
                    f"precision@20px {out['precision_at_20']:.4f}  AUC {out['auc']:.4f}  "
                    f"mean FPS {out['mean_fps']:.2f} -> {args.out}"
                )
            elif args.command == "bench-speed":
                out = client.post(
                    "/bench",
                    {
                        "seq_dir": args.seq,
                        "candidates": args.candidates,
                        "seed": args.seed,
                        "config_text": _config_text(args),
                        "paper_config": args.paper_config,
                    },
                )
                Path(args.out).write_text(out["report"], encoding="utf-8")
                print(
                    f"sampling {out['sampling_fps']:.2f} fps vs baseline {out['baseline_fps']:.2f} fps "
                    f"(speedup {out['speedup']:.2f}x, analytic flop ratio {out['analytic_flop_ratio']:.1f}) -> {args.out}"
                )
    except ServiceError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
