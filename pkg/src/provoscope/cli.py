"""Command-line entry point: `provoscope serve ...`."""

from __future__ import annotations

import argparse
import os
from pathlib import Path
from typing import Optional, Sequence

from .gateway import DEFAULT_MODEL, ProviderConfig
from .scenario import Mode
from .service import ServiceConfig, create_app

SCENARIO_DIR_ENV = "PROVOSCOPE_SCENARIO_DIR"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="provoscope")
    sub = parser.add_subparsers(dest="command", required=True)

    serve = sub.add_parser("serve", help="run the shortlisting service")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8080)
    serve.add_argument("--scenario", default="default", help="scenario display name")
    serve.add_argument(
        "--scenario-dir",
        type=Path,
        default=None,
        help=f"manifest directory (default: ${SCENARIO_DIR_ENV})",
    )
    serve.add_argument("--cache-dir", type=Path, default=None)
    serve.add_argument("--llm-base-url", default="https://api.openai.com/v1")
    serve.add_argument("--model", default=DEFAULT_MODEL)
    mode = serve.add_mutually_exclusive_group()
    mode.add_argument("--record", action="store_true", help="record provider responses")
    mode.add_argument("--replay", action="store_true", help="serve responses from cache only")
    serve.add_argument("--persist", type=Path, default=None, help="session snapshot directory")
    serve.add_argument("--ui-dir", type=Path, default=None, help="built UI bundle to serve at /")
    return parser


def config_from_args(args: argparse.Namespace) -> ServiceConfig:
    scenario_dir = args.scenario_dir
    if scenario_dir is None and os.environ.get(SCENARIO_DIR_ENV):
        scenario_dir = Path(os.environ[SCENARIO_DIR_ENV])

    ui_dir = args.ui_dir
    if ui_dir is None and Path("frontend/dist").is_dir():
        ui_dir = Path("frontend/dist")

    mode_override: Optional[Mode] = None
    if args.record:
        mode_override = Mode.RECORD
    elif args.replay:
        mode_override = Mode.REPLAY

    return ServiceConfig(
        provider=ProviderConfig(base_url=args.llm_base_url, model=args.model),
        scenario_name=args.scenario,
        scenario_dir=scenario_dir,
        cache_dir=args.cache_dir,
        mode_override=mode_override,
        persist_dir=args.persist,
        ui_dir=ui_dir,
    )


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "serve":
        import uvicorn

        uvicorn.run(create_app(config_from_args(args)), host=args.host, port=args.port)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
