"""Command-line interface.

One subcommand per pipeline stage plus ``run-all``.  Exit codes: 0 on
success, 2 for configuration problems, 3 when a required artifact from
an earlier stage is missing.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .config import ConfigError, load_config, resolved_json
from .core import DataError
from .pipeline import STAGES, MissingArtifactError, run_all, run_stage


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="circews",
        description="Early-warning pipeline for circulatory failure "
                    "on synthetic ICU cohorts.")
    parser.add_argument("--version", action="version", version="circews 0.1.0")
    sub = parser.add_subparsers(dest="command", metavar="command")

    descriptions = {
        "synth": "generate a synthetic cohort into the work directory",
        "clean": "repair artefacts, derive splits, and merge duplicate channels",
        "impute": "fit imputation parameters and fill the 5-minute grid",
        "annotate": "attach circulatory state, labels, and failure episodes",
        "mine-shapelets": "harvest discriminative subsequences from training stays",
        "featurize": "assemble the feature matrix",
        "train": "fit the classifier on the configured split",
        "alarm": "score stays, pick a threshold, and fire alarms",
        "evaluate": "event- and timeslice-level test metrics",
        "report": "stratified recall and alarm-lead breakdowns",
        "run-all": "run every stage in order",
    }
    for name in list(STAGES) + ["run-all"]:
        p = sub.add_parser(name, help=descriptions[name])
        p.add_argument("--config", metavar="FILE",
                       help="JSON config; defaults apply when omitted")
        p.add_argument("--workdir", metavar="DIR",
                       help="artifact directory (overrides the config)")
        p.add_argument("--threads", type=int, metavar="N",
                       help="worker processes for feature extraction")
        p.add_argument("--seed", type=int, metavar="S",
                       help="override every seed in the config (cohort, "
                            "splits, model)")
        p.add_argument("--print-config", action="store_true",
                       help="print the fully resolved config and exit")
        p.add_argument("-v", "--verbose", action="store_true",
                       help="debug-level logging")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help()
        return 2

    try:
        config = load_config(args.config)
        if args.workdir is not None:
            config.workdir = args.workdir
        if args.threads is not None:
            if args.threads < 1:
                raise ConfigError("threads", "must be at least 1")
            config.threads = args.threads
        if args.seed is not None:
            config.synth.seed = args.seed
            config.splits.seed = args.seed
            config.model.seed = args.seed
            config.model.gbdt.seed = args.seed
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    if args.print_config:
        print(resolved_json(config))
        return 0

    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)

    try:
        if args.command == "run-all":
            run_all(config, config.workdir)
        else:
            run_stage(args.command, config, config.workdir)
    except MissingArtifactError as exc:
        print(f"missing artifact: {exc}", file=sys.stderr)
        return 3
    except (DataError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
