"""Command line entry point: one subcommand per pipeline stage.

Exit codes: 0 success, 2 config error, 3 missing stage input,
4 network failure, 5 numerical divergence.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .errors import (
    ConfigError,
    InvalidK,
    MissingStageInput,
    NetworkError,
    NonFiniteLoss,
)
from .pipeline import STAGES, load_config, run_stage, with_overrides

log = logging.getLogger("kgatnet")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kgatnet",
        description="Knowledge-graph attention classifier over essay corpora, "
        "run as cacheable pipeline stages.",
    )
    parser.add_argument("stage", choices=STAGES + ("run-all",),
                        help="pipeline stage to run")
    parser.add_argument("--config", required=True, metavar="FILE",
                        help="key = value config file")
    parser.add_argument("--enriched", action="store_true",
                        help="append graph embeddings to the classifier input")
    parser.add_argument("--force", action="store_true",
                        help="recompute outputs that already exist")
    parser.add_argument("--jobs", type=int, default=1, metavar="N",
                        help="parallel workers for per-document stages")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the config seed everywhere")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        cfg = load_config(args.config)
        cfg = with_overrides(cfg, seed=args.seed,
                             enriched=True if args.enriched else None)
        run_stage(args.stage, cfg, force=args.force, jobs=args.jobs)
    except (ConfigError, InvalidK) as exc:
        log.error("config error: %s", exc)
        return 2
    except MissingStageInput as exc:
        log.error("missing stage input: %s", exc)
        return 3
    except NetworkError as exc:
        log.error("network failure: %s", exc)
        return 4
    except NonFiniteLoss as exc:
        log.error("numerical divergence: %s", exc)
        return 5
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
