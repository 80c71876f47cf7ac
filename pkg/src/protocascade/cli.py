"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

from . import config as cfgmod
from .errors import ConfigError
from .pipeline import ArtifactDir, Pipeline, StageError, with_seed

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3

STAGES = {
    "generate-graph": "build the social graph (graph.txt)",
    "calibrate": "tune each protocol's base rate to the target R (protocols.toml)",
    "simulate": "run every replicate of each protocol (cascades/)",
    "summarize": "per-replicate metrics and exposure curves (summary.csv, curves/)",
    "sample-subtrees": "sample depth-d subtrees for fitting (subtrees/, features/)",
    "fit-model": "fit branching models to the subtree sample (models/)",
    "generate-synthetic": "draw synthetic subtrees from the fitted models (synthetic/)",
    "classify": "run the configured classification tasks (results.csv)",
    "run": "all stages end to end, then write manifest.json",
}


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="PATH", help="experiment config (TOML); defaults if omitted")
    p.add_argument("--seed", type=int, metavar="N", help="override master_seed")
    p.add_argument("--out", metavar="DIR", help="artifact directory (overrides output_dir and OUTPUT_DIR)")
    p.add_argument("--quiet", action="store_true", help="only report errors")
    p.add_argument("--jobs", type=int, metavar="N", help="worker processes (default: JOBS or 1)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="protocascade",
                                     description="Simulate and analyse diffusion-protocol cascades.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in STAGES.items():
        p = sub.add_parser(name, help=text)
        _common(p)
        if name == "simulate":
            p.add_argument("--protocol", action="append", metavar="NAME",
                           help="simulate only this protocol (repeatable)")
    p = sub.add_parser("config", help="print the default config or the key reference")
    p.add_argument("what", choices=("defaults", "reference"))
    return parser


def _load(args) -> cfgmod.ExperimentConfig:
    cfg = cfgmod.load(args.config) if args.config else cfgmod.ExperimentConfig()
    return with_seed(cfg, args.seed)


def _jobs(args) -> int:
    if args.jobs is not None:
        jobs = args.jobs
    else:
        env = os.environ.get("JOBS", "1")
        try:
            jobs = int(env)
        except ValueError:
            raise ConfigError("JOBS", f"expected an integer, got {env!r}") from None
    if jobs < 1:
        raise ConfigError("jobs", "must be >= 1")
    return jobs


def _out_dir(args, cfg) -> str:
    return args.out or os.environ.get("OUTPUT_DIR") or cfg.output_dir


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "config":
        text = cfgmod.dumps(cfgmod.ExperimentConfig()) if args.what == "defaults" else cfgmod.reference()
        sys.stdout.write(text)
        return EXIT_OK

    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(message)s", stream=sys.stderr, force=True)
    try:
        cfg = _load(args)
        jobs = _jobs(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        pipe = Pipeline(cfg, ArtifactDir(_out_dir(args, cfg)), jobs=jobs)
        cmd = args.command
        if cmd == "run":
            pipe.run()
        elif cmd == "generate-graph":
            pipe.generate_graph()
        elif cmd == "calibrate":
            pipe.calibrate()
        elif cmd == "simulate":
            if args.protocol:
                for name in args.protocol:
                    if name not in pipe.ensure_protocols():
                        raise ConfigError("--protocol", f"undefined protocol {name!r}")
            pipe.simulate(args.protocol)
        elif cmd == "summarize":
            pipe.summarize()
        elif cmd == "sample-subtrees":
            pipe.sample_subtrees()
        elif cmd == "fit-model":
            pipe.fit_models()
        elif cmd == "generate-synthetic":
            pipe.generate_synthetic()
        elif cmd == "classify":
            pipe.classify()
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
