"""Command-line interface.

Exit codes: 0 on success, 1 when validation suites fail, 2 on config errors.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import __version__
from .demod import KNOWN_KINDS
from .runner import (
    FULL_SAMPLING,
    ConfigError,
    ExperimentConfig,
    run_capacity_sweep,
    run_csi_sweep,
    run_outage_sweep,
)
from .selfcheck import run_all


def _add_common(sub):
    sub.add_argument("-c", "--config", required=True, help="JSON experiment config")
    sub.add_argument("-o", "--out", required=True, help="output directory")
    sub.add_argument("--workers", type=int, default=1, help="parallel worker processes")
    sub.add_argument("--no-resume", action="store_true", help="ignore any saved sweep state")
    sub.add_argument("--seed", type=int, default=None, help="override the config seed")
    sub.add_argument("--frames", type=int, default=None, help="override frames per SNR point")
    sub.add_argument(
        "--full-scale",
        action="store_true",
        help=f"use {FULL_SAMPLING['n_frames']} frames and {FULL_SAMPLING['bins']} bins per point (slow)",
    )


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_file(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if getattr(args, "full_scale", False):
        cfg.sampling.n_frames = FULL_SAMPLING["n_frames"]
        cfg.sampling.bins = FULL_SAMPLING["bins"]
        print("note: full-scale sampling selected; expect long runtimes", file=sys.stderr)
    if getattr(args, "frames", None) is not None:
        cfg.sampling.n_frames = args.frames
        if cfg.sampling.n_frames < 100 * cfg.sampling.bins:
            print(
                f"warning: n_frames={cfg.sampling.n_frames} < 100*bins={100 * cfg.sampling.bins}; "
                "estimator bias bound degrades",
                file=sys.stderr,
            )
    return cfg


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="mimocap", description=__doc__)
    parser.add_argument("--version", action="version", version=f"mimocap {__version__}")
    subs = parser.add_subparsers(dest="command", required=True)

    for name, helptext in (
        ("capacity", "ergodic system-capacity sweep"),
        ("outage", "quasi-static outage / eps-capacity sweep"),
        ("csi-sweep", "required SNR versus training length"),
    ):
        sub = subs.add_parser(name, help=helptext)
        _add_common(sub)

    val = subs.add_parser("validate", help="run the built-in oracle and identity suites")
    val.add_argument("-o", "--out", default=None, help="write the JSON report here")
    val.add_argument("--seed", type=int, default=7)

    subs.add_parser("list-demods", help="list demodulator kinds and parameter syntax")

    args = parser.parse_args(argv)

    if args.command == "list-demods":
        print("demodulator kinds:")
        for kind in KNOWN_KINDS:
            print(f"  {kind}")
        print("parameterized examples: lsd:L=8  flip:init=mmse,D=2  softic:init=zf,iters=3")
        return 0

    if args.command == "validate":
        report = run_all(args.seed)
        text = json.dumps(report, indent=2, sort_keys=True)
        if args.out:
            with open(args.out, "w") as fh:
                fh.write(text + "\n")
        print(text)
        return 0 if report["ok"] else 1

    try:
        cfg = _load_config(args)
        allow_small = args.frames is not None
        kwargs = dict(workers=args.workers, resume=not args.no_resume, allow_small_sample=allow_small)
        if args.command == "capacity":
            out = run_capacity_sweep(cfg, args.out, **kwargs)
            print(f"wrote {out['csv']}")
        elif args.command == "outage":
            out = run_outage_sweep(cfg, args.out, **kwargs)
            for path in out["paths"].values():
                print(f"wrote {path}")
        elif args.command == "csi-sweep":
            out = run_csi_sweep(cfg, args.out, **kwargs)
            print(f"wrote {out['curves_csv']}")
            print(f"wrote {out['required_csv']}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
