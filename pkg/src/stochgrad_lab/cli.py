"""Command-line entry point: run experiments from config files and report on manifests."""

import argparse
import sys
from collections import defaultdict
from pathlib import Path
from typing import Any

from dotenv import load_dotenv
from loguru import logger
from pydantic import ValidationError
from rich.console import Console
from rich.table import Table

from .claims import claim_text, describe
from .config import ExperimentKind, LabSettings, apply_overrides, load_config
from .errors import NumericalFailure
from .experiments import run_experiment
from .logging_config import setup_logging
from .persistence import MANIFEST_FILE, load_manifest, write_json

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3


def _format_validation(e: ValidationError) -> str:
    parts = []
    for err in e.errors():
        field = ".".join(str(loc) for loc in err["loc"]) or "config"
        parts.append(f"{field}: {err['msg']}")
    return "; ".join(parts)


def _run(args: argparse.Namespace, expected_kind: ExperimentKind | None = None) -> int:
    try:
        settings = LabSettings()
    except ValidationError as e:
        logger.error(f"Invalid STOCHGRAD_* environment: {_format_validation(e)}")
        return EXIT_VALIDATION
    try:
        cfg = load_config(args.config)
        if expected_kind is not None and cfg.kind != expected_kind:
            raise ValueError(
                f"kind: config is a '{cfg.kind.value}' experiment, "
                f"not '{expected_kind.value}'; use `run` or the matching subcommand"
            )
        cfg = apply_overrides(cfg, args.seed, args.out_dir, args.threads, settings)
        manifest = run_experiment(cfg, show_progress=settings.show_progress)
    except ValidationError as e:
        logger.error(f"Invalid config {args.config}: {_format_validation(e)}")
        return EXIT_VALIDATION
    except NumericalFailure as e:
        logger.error(f"Numerical failure in {args.config}: {e}")
        return EXIT_NUMERICAL
    except ValueError as e:
        logger.error(f"Invalid config {args.config}: {e}")
        return EXIT_VALIDATION

    print(f"{Path(manifest.directory) / MANIFEST_FILE}")
    return EXIT_OK


def build_report(paths: list[str]) -> dict[str, Any]:
    """Rows keyed by experiment kind plus pooled repulsion statistics.

    Unreadable manifests and missing output files are listed; the rest of the
    report is still produced.
    """
    rows: list[dict[str, Any]] = []
    missing: list[str] = []
    pooled: dict[str, int] = defaultdict(int)

    for raw in paths:
        path = Path(raw)
        try:
            manifest = load_manifest(path)
        except (OSError, ValueError) as e:
            logger.warning(f"Skipping {path}: {e}")
            missing.append(str(path))
            continue
        directory = Path(manifest.directory)
        if not directory.is_dir():
            directory = path if path.is_dir() else path.parent
        missing.extend(
            str(directory / name) for name in manifest.outputs if not (directory / name).exists()
        )
        summary = manifest.summary
        rows.append(
            {
                "name": manifest.name,
                "kind": manifest.kind,
                "claim": claim_text(manifest.kind),
                "result": describe(manifest.kind, summary),
                "config_hash": manifest.config_hash,
                "summary": summary,
            }
        )
        if manifest.kind == ExperimentKind.REPULSION.value:
            pooled["runs"] += int(summary.get("runs") or 0)
            pooled["escapes"] += int(summary.get("escapes") or 0)

    rows.sort(key=lambda row: (row["kind"], row["name"]))
    report: dict[str, Any] = {"rows": rows, "missing": missing}
    if pooled["runs"]:
        report["pooled_repulsion"] = {
            "runs": pooled["runs"],
            "escapes": pooled["escapes"],
            "escape_fraction": pooled["escapes"] / pooled["runs"],
        }
    return report


def _print_report(report: dict[str, Any], console: Console) -> None:
    table = Table(title="Experiment report")
    table.add_column("Kind", style="cyan")
    table.add_column("Name")
    table.add_column("Result")
    table.add_column("Claim tested", overflow="fold")
    for row in report["rows"]:
        table.add_row(row["kind"], row["name"], row["result"], row["claim"])
    console.print(table)

    pooled = report.get("pooled_repulsion")
    if pooled:
        console.print(
            f"Pooled escape fraction: {pooled['escape_fraction']:.4f} "
            f"({pooled['escapes']}/{pooled['runs']} runs)"
        )
    for name in report["missing"]:
        console.print(f"[yellow]Missing:[/yellow] {name}")


def _report(args: argparse.Namespace) -> int:
    report = build_report(args.manifests)
    _print_report(report, Console())
    if args.json:
        write_json(Path(args.json), report)
        logger.info(f"Report written to {args.json}")
    return EXIT_OK


def _add_run_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("config", help="Experiment config (.toml or .json)")
    parser.add_argument("--seed", type=int, default=None, help="Override the master seed")
    parser.add_argument("--out-dir", default=None, help="Override the output root directory")
    parser.add_argument("--threads", type=int, default=None, help="Worker threads")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stochgrad-lab",
        description="Numerical experiments on stochastic gradient and Robbins-Monro recursions",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="Show debug logs")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="Run the experiment described by a config file")
    _add_run_arguments(run)
    run.set_defaults(handler=_run)

    for kind in ExperimentKind:
        kind_parser = sub.add_parser(kind.value, help=f"Run a {kind.value} experiment config")
        _add_run_arguments(kind_parser)
        kind_parser.set_defaults(handler=lambda a, k=kind: _run(a, k))

    report = sub.add_parser("report", help="Summarize one or more run manifests")
    report.add_argument("manifests", nargs="*", help="manifest.json files or output directories")
    report.add_argument("--json", default=None, help="Also write the report as JSON here")
    report.set_defaults(handler=_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    """Parse arguments, configure logging and dispatch; returns the exit code."""
    load_dotenv()
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(verbose=args.verbose, force=True)
    return args.handler(args)


if __name__ == "__main__":
    sys.exit(main())
