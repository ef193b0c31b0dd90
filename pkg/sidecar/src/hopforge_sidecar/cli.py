"""Sidecar command line: serve the endpoints or self-check a deployment."""

from __future__ import annotations

import argparse
import logging
import sys

from .app import create_app
from .config import ServiceConfig
from .selfcheck import HttpTransport, run_selfcheck


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hopforge-sidecar")
    sub = parser.add_subparsers(dest="command", required=True)

    serve = sub.add_parser("serve", help="Serve the four inference endpoints")
    serve.add_argument("--config", help="ServiceConfig JSON (defaults to real checkpoints)")
    serve.add_argument("--port", type=int, help="Override the configured port")
    serve.add_argument("--offline", action="store_true",
                       help="Use the deterministic hash backends (no model downloads)")

    check = sub.add_parser("selfcheck", help="Validate a deployment against the wire schemas")
    check.add_argument("--url", help="Base URL of a running sidecar")
    check.add_argument("--backend", choices=("hash",),
                       help="Self-host an in-process offline service instead of a URL")
    return parser


def _load_config(args: argparse.Namespace) -> ServiceConfig:
    if getattr(args, "offline", False):
        config = ServiceConfig.offline()
    elif args.config:
        config = ServiceConfig.from_file(args.config)
    else:
        config = ServiceConfig()
    if getattr(args, "port", None):
        config.port = args.port
    return config


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")

    if args.command == "serve":
        import uvicorn

        config = _load_config(args)
        try:
            app = create_app(config)
        except RuntimeError as exc:
            print(f"startup aborted: {exc}", file=sys.stderr)
            return 1
        uvicorn.run(app, host="127.0.0.1", port=config.port)
        return 0

    if args.command == "selfcheck":
        if args.backend == "hash":
            from fastapi.testclient import TestClient

            with TestClient(create_app(ServiceConfig.offline())) as client:
                report = run_selfcheck(client)
        elif args.url:
            report = run_selfcheck(HttpTransport(args.url))
        else:
            print("selfcheck needs --url or --backend hash", file=sys.stderr)
            return 2
        for line in report.lines():
            print(line)
        if not report.ok:
            print(f"FAILED: {', '.join(report.failing_endpoints())}", file=sys.stderr)
            return 1
        return 0
    raise AssertionError("unreachable")


if __name__ == "__main__":
    sys.exit(main())
