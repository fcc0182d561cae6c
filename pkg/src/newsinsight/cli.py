"""Command-line entry point: ``newsinsight {ingest,process,serve,match,eval}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence

from . import __version__
from .config import ConfigError, PipelineConfig, ProviderSettings, load_config
from .evalharness import EmptyDataset, ParseError, build_report, load_labeled_dataset, load_labels, write_report
from .matcher import EmptyReference
from .pipeline import PipelineBusy, junk_words_for, load_reference, run_ingest, run_process
from .providers import ProviderUnavailable

EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_PROVIDER_DOWN = 3

logger = logging.getLogger("newsinsight")


class JsonLogFormatter(logging.Formatter):
    def format(self, record: logging.LogRecord) -> str:
        entry = {
            "ts": datetime.fromtimestamp(record.created, timezone.utc).strftime("%Y-%m-%dT%H:%M:%S.%fZ"),
            "level": record.levelname.lower(),
            "logger": record.name,
            "msg": record.getMessage(),
        }
        if record.exc_info:
            entry["exc"] = self.formatException(record.exc_info)
        return json.dumps(entry, ensure_ascii=False)


def _setup_logging(verbosity: int) -> None:
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(JsonLogFormatter())
    root = logging.getLogger()
    root.handlers[:] = [handler]
    root.setLevel(logging.DEBUG if verbosity > 1 else logging.INFO if verbosity else logging.WARNING)


def _config(args: argparse.Namespace) -> PipelineConfig:
    """File values first, then command-line flags on top."""
    cfg = load_config(args.config)
    updates = {}
    if args.work_dir is not None:
        updates["work_dir"] = args.work_dir
        if args.store is None:
            updates["store"] = args.work_dir / "insights.jsonl"
    for key in ("store", "reference", "overrides", "junk_words"):
        if getattr(args, key) is not None:
            updates[key] = getattr(args, key)
    if args.mock:
        updates["provider"] = ProviderSettings(kind="mock", requests_per_minute=cfg.provider.requests_per_minute)
    return replace(cfg, **updates)


def cmd_ingest(args: argparse.Namespace) -> int:
    n = run_ingest(_config(args).check())
    print(f"ingested {n}")
    return 0


def cmd_process(args: argparse.Namespace) -> int:
    summary = run_process(_config(args).check())
    print(f"stored {summary.stored}")
    if summary.failed:
        print(f"failed {summary.failed}")
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    from .api import serve
    from .store import InsightStore

    cfg = _config(args)
    reference, _ = load_reference(cfg.check())
    with InsightStore(cfg.store, reference=reference) as store:
        serve(store, args.host, args.port)
    return 0


def _metrics(c) -> str:
    return f"lev={c.lev_clean} lcs={c.lcs_clean} common={c.common_words}"


def cmd_match(args: argparse.Namespace) -> int:
    cfg = _config(args)
    reference, overrides = load_reference(cfg.check())
    if args.no_overrides:
        overrides = {}
    result = reference.name_index().match(args.name, overrides=overrides)
    tag = "  [override]" if result.via_override else ""
    print(f"best: {result.ticker}  {result.best.name!r}  {_metrics(result.best)}{tag}")
    for i, cand in enumerate(result.ranked_runners_up, 1):
        print(f"  {i}. {cand.ticker}  {cand.name!r}  {_metrics(cand)}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    if not args.dataset.exists():
        raise FileNotFoundError(f"dataset does not exist: {args.dataset}")
    labels = load_labels(args.labels) if args.labels else None
    rows = load_labeled_dataset(args.dataset, labels)
    report = build_report(rows)
    for path in write_report(report, args.out):
        print(path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-c", "--config", type=Path, help="YAML pipeline config")
    common.add_argument("--work-dir", type=Path, help="queue and store directory")
    common.add_argument("--store", type=Path, help="insight store file")
    common.add_argument("--reference", type=Path, help="ticker reference snapshot (CSV)")
    common.add_argument("--overrides", type=Path, help="name,ticker overrides (CSV)")
    common.add_argument("--junk-words", type=Path, help="junk word list")
    common.add_argument("--mock", action="store_true", help="use the offline mock LLM provider")
    common.add_argument("-v", "--verbose", action="count", default=0, help="log more (repeatable)")

    parser = argparse.ArgumentParser(prog="newsinsight", description="Financial news ticker and sentiment pipeline.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)

    p = sub.add_parser("ingest", parents=[common], help="fetch feeds and queue new articles")
    p.set_defaults(func=cmd_ingest)
    p = sub.add_parser("process", parents=[common], help="extract, validate and store queued articles")
    p.set_defaults(func=cmd_process)
    p = sub.add_parser("serve", parents=[common], help="serve the insight store over HTTP")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8080)
    p.set_defaults(func=cmd_serve)
    p = sub.add_parser("match", parents=[common], help="show ticker match diagnostics for a company name")
    p.add_argument("name")
    p.add_argument("--no-overrides", action="store_true", help="ignore the overrides file")
    p.set_defaults(func=cmd_match)
    p = sub.add_parser("eval", parents=[common], help="compare system tickers with publisher labels")
    p.add_argument("dataset", type=Path, help="JSON-lines or CSV dataset (an insight store works too)")
    p.add_argument("--labels", type=Path, help="publisher labels JSON keyed by article id or URL")
    p.add_argument("--out", type=Path, default=Path("eval_report"), help="output directory")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _setup_logging(args.verbose)
    try:
        return args.func(args)
    except ProviderUnavailable as exc:
        logger.error("provider unavailable, queue left in place: %s", exc)
        print(f"error: provider unavailable: {exc}", file=sys.stderr)
        return EXIT_PROVIDER_DOWN
    except (ConfigError, FileNotFoundError, ParseError, EmptyDataset, EmptyReference, PipelineBusy, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
