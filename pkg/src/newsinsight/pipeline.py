"""End-to-end stages: ingest into an on-disk queue, then process the queue into the store."""

from __future__ import annotations

import fcntl
import json
import logging
import os
import tempfile
from contextlib import contextmanager
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Iterator

from .config import PipelineConfig
from .enrich import assemble
from .extract import MalformedResponse, SchemaViolation, extract_draft
from .ingest import (
    FeedItem,
    FixtureTransport,
    HostThrottle,
    HttpTransport,
    RawArticle,
    SeenSet,
    Transport,
    build_feed_url,
    collect,
    dedupe,
    parse_feed,
    resolve_redirects,
)
from .matcher import DEFAULT_JUNK_WORDS, load_junk_words
from .providers import AnthropicProvider, AuditLog, MockProvider, Provider, ProviderRefused, RateLimiter
from .refdata import ReferenceStore, load, load_overrides
from .store import InsightStore
from .validate import DiscardLog, Verifier, validate_mentions

logger = logging.getLogger(__name__)


class PipelineBusy(RuntimeError):
    pass


class WorkQueue:
    """Articles waiting for processing: one JSON file per article under ``pending/``."""

    def __init__(self, root: str | Path) -> None:
        self.root = Path(root)
        self.pending = self.root / "queue" / "pending"
        self.failed = self.root / "queue" / "failed"
        self.pending.mkdir(parents=True, exist_ok=True)
        self.failed.mkdir(parents=True, exist_ok=True)
        self.seen = SeenSet(path=self.root / "seen.txt")

    def put(self, article: RawArticle) -> None:
        data = json.dumps(article.to_dict(), ensure_ascii=False, sort_keys=True, indent=1)
        fd, tmp = tempfile.mkstemp(dir=self.pending, suffix=".tmp")
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(data)
        os.replace(tmp, self.pending / f"{article.id}.json")

    def __iter__(self) -> Iterator[tuple[Path, RawArticle]]:
        for path in sorted(self.pending.glob("*.json")):
            yield path, RawArticle.from_dict(json.loads(path.read_text(encoding="utf-8")))

    def __len__(self) -> int:
        return sum(1 for _ in self.pending.glob("*.json"))

    def done(self, path: Path) -> None:
        path.unlink(missing_ok=True)

    def fail(self, path: Path) -> None:
        os.replace(path, self.failed / path.name)


@contextmanager
def process_lock(work_dir: Path):
    work_dir.mkdir(parents=True, exist_ok=True)
    fh = open(work_dir / "process.lock", "w")
    try:
        try:
            fcntl.flock(fh, fcntl.LOCK_EX | fcntl.LOCK_NB)
        except BlockingIOError:
            raise PipelineBusy(f"another process run holds {work_dir / 'process.lock'}") from None
        fh.write(str(os.getpid()))
        fh.flush()
        yield
    finally:
        fh.close()


def make_transport(config: PipelineConfig) -> Transport:
    if config.transport == "fixtures":
        return FixtureTransport(config.fixtures_dir)
    return HttpTransport(throttle=HostThrottle(config.host_delay))


def make_provider(config: PipelineConfig, junk_words=DEFAULT_JUNK_WORDS) -> Provider:
    p = config.provider
    if p.kind == "mock":
        return MockProvider(junk_words=junk_words)
    return AnthropicProvider(model=p.model, endpoint=p.endpoint, api_key_env=p.api_key_env, max_tokens=p.max_tokens)


def junk_words_for(config: PipelineConfig) -> frozenset[str]:
    return load_junk_words(config.junk_words) if config.junk_words else DEFAULT_JUNK_WORDS


def load_reference(config: PipelineConfig) -> tuple[ReferenceStore, dict[str, str]]:
    junk = junk_words_for(config)
    store = load(config.reference, junk_words=junk)
    overrides = load_overrides(config.overrides, junk) if config.overrides else {}
    return store, overrides


def read_feeds(config: PipelineConfig, transport: Transport) -> list[FeedItem]:
    items: list[FeedItem] = []
    for source in config.feeds:
        if source.path is not None:
            xml = Path(source.path).read_bytes()
        else:
            url = resolve_redirects(build_feed_url(source.url, **source.params), transport, config.max_hops)
            xml = transport.get(url).body
        items.extend(parse_feed(xml))
    unique = {}
    for item in items:
        unique.setdefault(item.aggregator_link, item)
    return list(unique.values())


def run_ingest(
    config: PipelineConfig,
    transport: Transport | None = None,
    clock: Callable[[], datetime] = lambda: datetime.now(timezone.utc),
) -> int:
    """Fetch feeds, resolve and download articles, and queue the unseen ones."""
    config.check()
    transport = transport or make_transport(config)
    queue = WorkQueue(config.work_dir)
    items = read_feeds(config, transport)
    articles = collect(items, transport, config.max_hops, config.fetch_workers, clock, seen=queue.seen)
    fresh = dedupe(articles, queue.seen)
    for art in fresh:
        queue.put(art)
    logger.info("ingest: %d feed item(s), %d new article(s)", len(items), len(fresh))
    return len(fresh)


@dataclass
class ProcessSummary:
    processed: int = 0
    stored: int = 0
    failed: int = 0
    remaining: int = 0


def run_process(config: PipelineConfig, provider: Provider | None = None, sleep=None) -> ProcessSummary:
    """Extract, validate, enrich and store every queued article.

    An article whose answer cannot be parsed is moved to ``queue/failed``.
    :class:`~newsinsight.providers.ProviderUnavailable` propagates and leaves
    the unprocessed articles queued for the next run.
    """
    config.check()
    summary = ProcessSummary()
    with process_lock(Path(config.work_dir)):
        reference, overrides = load_reference(config)
        if config.misses_export and Path(config.misses_export).exists():
            reference.misses.load_export(config.misses_export)
        provider = provider or make_provider(config, reference.junk_words)
        limiter = RateLimiter(config.provider.requests_per_minute)
        audit = AuditLog(config.audit_log) if config.audit_log else None
        discards = DiscardLog(config.discard_log) if config.discard_log else None
        verifier = Verifier(provider, rate_limiter=limiter, audit=audit, sleep=sleep)
        queue = WorkQueue(config.work_dir)
        store = InsightStore(config.store, reference=reference)
        try:
            for path, article in queue:
                try:
                    draft, _ = extract_draft(
                        article, provider, max_chars=config.max_chars, rate_limiter=limiter, audit=audit, sleep=sleep
                    )
                    verified = validate_mentions(draft, reference, overrides, verifier, discards)
                except (MalformedResponse, SchemaViolation, ProviderRefused) as exc:
                    logger.error("article %s failed: %s", article.id, exc)
                    queue.fail(path)
                    summary.failed += 1
                    continue
                record = assemble(article, draft, verified, reference)
                if store.upsert(record):
                    summary.stored += 1
                queue.done(path)
                summary.processed += 1
        finally:
            summary.remaining = len(queue)
            store.close()
            if config.misses_export:
                reference.misses.export(config.misses_export)
    logger.info("process: %d processed, %d stored, %d failed", summary.processed, summary.stored, summary.failed)
    return summary
