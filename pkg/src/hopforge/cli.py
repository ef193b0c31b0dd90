"""Command-line entry point: ingest, run, evaluate, export.

Exit codes: 0 = ran to completion, 2 = config error, 3 = all seeds failed.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .config import PipelineConfig
from .errors import ConfigError, HopforgeError
from .pipeline import build_gateway, evaluate_only, export_run, run_pipeline
from .store import CorpusStore

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_ALL_FAILED = 3


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hopforge", description="Multi-hop question synthesis pipeline"
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    ingest = sub.add_parser("ingest", help="Build the corpus store from the configured corpus")
    ingest.add_argument("--config", required=True, help="Pipeline config JSON")

    run = sub.add_parser("run", help="Run the full pipeline for the configured seeds")
    run.add_argument("--config", required=True, help="Pipeline config JSON")
    run.add_argument("--run-id", help="Run directory name (default: config hash)")
    run.add_argument("--seeds", help="Comma-separated seed titles overriding the config")
    run.add_argument("--mock-script", help="Mock script JSON overriding the config gateway")

    evaluate = sub.add_parser("evaluate", help="Quality-gate an external questions file")
    evaluate.add_argument("--config", required=True, help="Pipeline config JSON")
    evaluate.add_argument("--questions", required=True, help="Line-delimited question records")
    evaluate.add_argument("--run-id", help="Run directory name (default: config hash)")
    evaluate.add_argument("--mock-script", help="Mock script JSON overriding the config gateway")

    export = sub.add_parser("export", help="Export graphs or the accepted dataset for a run")
    export.add_argument("--config", required=True, help="Pipeline config JSON")
    export.add_argument("--run-id", required=True)
    export.add_argument("--what", choices=("graph", "dataset"), default="graph")
    export.add_argument("--format", choices=("json", "dot"), default="json")
    return parser


def _load_config(args: argparse.Namespace) -> PipelineConfig:
    config = PipelineConfig.from_file(args.config)
    if getattr(args, "seeds", None):
        config.seeds = [s.strip() for s in args.seeds.split(",") if s.strip()]
    if getattr(args, "mock_script", None):
        config.mock_script = args.mock_script
    config.validate()
    return config


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        config = _load_config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        if args.command == "ingest":
            store = CorpusStore(config.store_path)
            with open(config.corpus_path, "r", encoding="utf-8") as stream:
                result = store.ingest_corpus(stream)
            print(f"ingested {result.count} pages, {len(result.errors)} errors")
            for error in result.errors:
                print(f"  line {error.line}: {error.message}", file=sys.stderr)
            return EXIT_OK

        if args.command == "run":
            manifest = run_pipeline(config, run_id=args.run_id)
            failed = sum(1 for s in manifest.seeds.values() if s.get("error"))
            print(
                f"run {manifest.run_id}: accepted={manifest.accepted} "
                f"rejected={manifest.rejected} failed_seeds={failed}"
            )
            if manifest.seeds and failed == len(manifest.seeds):
                return EXIT_ALL_FAILED
            return EXIT_OK

        if args.command == "evaluate":
            gateway = build_gateway(config)
            reports = evaluate_only(args.questions, config, run_id=args.run_id, gateway=gateway)
            accepted = sum(1 for r in reports if str(r.get("decision", "")).startswith("accepted"))
            print(f"evaluated {len(reports)} records, accepted {accepted}")
            return EXIT_OK

        if args.command == "export":
            written = export_run(config, args.run_id, args.what, args.format)
            for path in written:
                print(path)
            return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except HopforgeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    raise AssertionError("unreachable")


if __name__ == "__main__":
    sys.exit(main())
