"""Reference ticker database: snapshot file, overrides and miss monitoring."""

from __future__ import annotations

import csv
import io
import logging
import os
import re
import tempfile
import threading
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Iterable, Iterator, Mapping

from .matcher import DEFAULT_JUNK_WORDS, NameIndex, clean_name

logger = logging.getLogger(__name__)

COLUMNS = ("ticker", "name", "market", "locale", "cik", "active")
MARKETS = ("stocks", "otc", "other")

_TICKER_RE = re.compile(r"^[A-Z0-9.]+$")
_TRUE = {"true", "1", "yes", "y", "t"}
_FALSE = {"false", "0", "no", "n", "f"}


class ParseError(ValueError):
    def __init__(self, message: str, line: int | None = None) -> None:
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class DuplicateTicker(ParseError):
    pass


class UnknownTicker(KeyError):
    pass


@dataclass(frozen=True)
class TickerRecord:
    ticker: str
    name: str
    market: str = "stocks"
    locale: str = "us"
    cik: str | None = None
    active: bool = True

    def __post_init__(self) -> None:
        if not _TICKER_RE.match(self.ticker):
            raise ValueError(f"invalid ticker {self.ticker!r}")
        if self.market not in MARKETS:
            raise ValueError(f"invalid market {self.market!r}")
        if self.cik is not None and not (len(self.cik) == 10 and self.cik.isdigit()):
            raise ValueError(f"cik must be 10 digits, got {self.cik!r}")


def normalize_cik(value: str | int | None) -> str | None:
    if value is None:
        return None
    text = str(value).strip()
    if not text:
        return None
    if not text.isdigit() or len(text) > 10:
        raise ValueError(f"invalid cik {value!r}")
    return text.zfill(10)


@dataclass
class MissCounter:
    company_name: str
    miss_count: int
    last_seen_utc: datetime


class MissMonitor:
    """Thread-safe counters of company names that failed to map to a ticker."""

    def __init__(
        self,
        junk_words: Iterable[str] = DEFAULT_JUNK_WORDS,
        clock: Callable[[], datetime] = lambda: datetime.now(timezone.utc),
    ) -> None:
        self._junk = frozenset(junk_words)
        self._clock = clock
        self._lock = threading.Lock()
        self._counters: dict[str, MissCounter] = {}

    def record(self, company_name: str) -> MissCounter:
        key = clean_name(company_name, self._junk).cleaned or company_name.strip().lower()
        with self._lock:
            now = self._clock()
            counter = self._counters.get(key)
            if counter is None:
                counter = MissCounter(key, 0, now)
                self._counters[key] = counter
            counter.miss_count += 1
            counter.last_seen_utc = now
            return replace(counter)

    def ranked(self) -> list[MissCounter]:
        """Counters ordered by miss count (highest first), then name."""
        with self._lock:
            snapshot = [replace(c) for c in self._counters.values()]
        return sorted(snapshot, key=lambda c: (-c.miss_count, c.company_name))

    def load_export(self, path: str | Path) -> None:
        """Seed counters from an earlier :meth:`export`, adding to current counts."""
        with open(path, newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                stamp = datetime.strptime(row["last_seen_utc"], "%Y-%m-%dT%H:%M:%SZ").replace(tzinfo=timezone.utc)
                with self._lock:
                    counter = self._counters.setdefault(row["company_name"], MissCounter(row["company_name"], 0, stamp))
                    counter.miss_count += int(row["miss_count"])
                    counter.last_seen_utc = max(counter.last_seen_utc, stamp)

    def export(self, path: str | Path) -> None:
        rows = self.ranked()
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["company_name", "miss_count", "last_seen_utc"])
            for c in rows:
                stamp = c.last_seen_utc.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
                writer.writerow([c.company_name, c.miss_count, stamp])


@dataclass(frozen=True)
class _Snapshot:
    records: tuple[TickerRecord, ...]
    by_ticker: Mapping[str, TickerRecord]
    by_cik: Mapping[str, tuple[str, ...]]


def _build_snapshot(records: Iterable[TickerRecord]) -> _Snapshot:
    by_ticker: dict[str, TickerRecord] = {}
    by_cik: dict[str, list[str]] = {}
    for rec in records:
        if rec.ticker in by_ticker:
            raise DuplicateTicker(f"duplicate ticker {rec.ticker}")
        by_ticker[rec.ticker] = rec
        if rec.cik and rec.active:
            by_cik.setdefault(rec.cik, []).append(rec.ticker)
    return _Snapshot(
        records=tuple(by_ticker.values()),
        by_ticker=by_ticker,
        by_cik={k: tuple(sorted(v)) for k, v in by_cik.items()},
    )


class ReferenceStore:
    """In-memory ticker reference.

    Lookups run against an immutable snapshot; :meth:`replace_records` swaps
    in a new one in a single assignment, so readers never see a half-built
    index.
    """

    def __init__(
        self,
        records: Iterable[TickerRecord] = (),
        junk_words: Iterable[str] = DEFAULT_JUNK_WORDS,
        misses: MissMonitor | None = None,
    ) -> None:
        self.junk_words = frozenset(junk_words)
        self._snap = _build_snapshot(records)
        self._index: NameIndex | None = None
        self._index_lock = threading.Lock()
        self.misses = misses if misses is not None else MissMonitor(self.junk_words)

    def __len__(self) -> int:
        return len(self._snap.records)

    def __iter__(self) -> Iterator[TickerRecord]:
        return iter(self._snap.records)

    def __contains__(self, ticker: object) -> bool:
        return isinstance(ticker, str) and ticker.upper() in self._snap.by_ticker

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ReferenceStore):
            return NotImplemented
        return sorted(self._snap.records, key=lambda r: r.ticker) == sorted(
            other._snap.records, key=lambda r: r.ticker
        )

    @property
    def records(self) -> tuple[TickerRecord, ...]:
        return self._snap.records

    def replace_records(self, records: Iterable[TickerRecord]) -> None:
        snap = _build_snapshot(records)
        with self._index_lock:
            self._snap = snap
            self._index = None

    def lookup(self, ticker: str) -> TickerRecord | None:
        return self._snap.by_ticker.get(ticker.strip().upper())

    def tickers_sharing_cik(self, ticker: str) -> set[str]:
        """Active tickers with the same CIK as ``ticker``, itself included.

        Raises:
            UnknownTicker: if the ticker is not in the store.
        """
        snap = self._snap
        rec = snap.by_ticker.get(ticker.strip().upper())
        if rec is None:
            raise UnknownTicker(ticker)
        if rec.cik is None:
            return {rec.ticker}
        return set(snap.by_cik.get(rec.cik, ())) | {rec.ticker}

    def name_index(self) -> NameIndex:
        """Cleaned (name, ticker) pairs of active records, built lazily."""
        with self._index_lock:
            if self._index is None:
                pairs = [(r.name, r.ticker) for r in self._snap.records if r.active]
                self._index = NameIndex(pairs, self.junk_words)
            return self._index

    def record_miss(self, company_name: str) -> MissCounter:
        return self.misses.record(company_name)

    def save(self, path: str | Path) -> None:
        write_snapshot(self._snap.records, path)


def lookup_by_ticker(store: ReferenceStore, ticker: str) -> TickerRecord | None:
    return store.lookup(ticker)


def tickers_sharing_cik(store: ReferenceStore, ticker: str) -> set[str]:
    return store.tickers_sharing_cik(ticker)


def record_miss(store: ReferenceStore, company_name: str) -> MissCounter:
    return store.record_miss(company_name)


def _parse_active(value: str, line: int) -> bool:
    v = value.strip().lower()
    if v in _TRUE or v == "":
        return True
    if v in _FALSE:
        return False
    raise ParseError(f"invalid active flag {value!r}", line)


def parse_snapshot(text: str) -> list[TickerRecord]:
    """Parse reference snapshot CSV text. Line numbers in errors are 1-based."""
    reader = csv.reader(io.StringIO(text))
    header: list[str] | None = None
    records: list[TickerRecord] = []
    seen: dict[str, int] = {}
    for row in reader:
        line = reader.line_num
        if not row or all(not cell.strip() for cell in row):
            continue
        if header is None:
            header = [h.strip().lower() for h in row]
            missing = [c for c in ("ticker", "name") if c not in header]
            if missing:
                raise ParseError(f"header lacks column(s): {', '.join(missing)}", line)
            continue
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} fields, got {len(row)}", line)
        fields = dict(zip(header, row))
        ticker = fields["ticker"].strip().upper()
        if ticker in seen:
            raise DuplicateTicker(f"duplicate ticker {ticker} (first on line {seen[ticker]})", line)
        try:
            rec = TickerRecord(
                ticker=ticker,
                name=fields["name"].strip(),
                market=fields.get("market", "stocks").strip().lower() or "stocks",
                locale=fields.get("locale", "us").strip().lower() or "us",
                cik=normalize_cik(fields.get("cik")),
                active=_parse_active(fields.get("active", ""), line),
            )
        except ParseError:
            raise
        except ValueError as exc:
            raise ParseError(str(exc), line) from None
        if not rec.name:
            raise ParseError("empty company name", line)
        seen[ticker] = line
        records.append(rec)
    return records


def load(
    source: str | Path,
    junk_words: Iterable[str] = DEFAULT_JUNK_WORDS,
    misses: MissMonitor | None = None,
) -> ReferenceStore:
    path = Path(source)
    records = parse_snapshot(path.read_text(encoding="utf-8"))
    if not records:
        logger.warning("reference snapshot %s has no rows", path)
    else:
        logger.info("loaded %d reference rows from %s", len(records), path)
    return ReferenceStore(records, junk_words=junk_words, misses=misses)


def write_snapshot(records: Iterable[TickerRecord], path: str | Path) -> None:
    """Write records as CSV, atomically replacing ``path``."""
    path = Path(path)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(COLUMNS)
    for r in sorted(records, key=lambda r: r.ticker):
        writer.writerow([r.ticker, r.name, r.market, r.locale, r.cik or "", "true" if r.active else "false"])
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
        fh.write(buf.getvalue())
    os.replace(tmp, path)


def load_overrides(path: str | Path, junk_words: Iterable[str] = DEFAULT_JUNK_WORDS) -> dict[str, str]:
    """Read ``name,ticker`` rows. Names are cleaned so keys match cleaned queries."""
    overrides: dict[str, str] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        for row in reader:
            if not row or row[0].lstrip().startswith("#"):
                continue
            if len(row) != 2:
                raise ParseError(f"expected 2 fields, got {len(row)}", reader.line_num)
            name, ticker = row[0].strip(), row[1].strip().upper()
            if reader.line_num == 1 and (name.lower(), ticker) == ("name", "TICKER"):
                continue
            key = clean_name(name, junk_words).cleaned
            if not key or not _TICKER_RE.match(ticker):
                raise ParseError(f"bad override row {row!r}", reader.line_num)
            overrides[key] = ticker
    return overrides


def fetch_snapshot(
    url: str,
    api_key: str | None = None,
    session=None,
    max_pages: int = 1000,
) -> list[TickerRecord]:
    """Download reference rows from a paginated JSON ticker endpoint.

    The endpoint is expected to answer ``{"results": [...], "next_url": ...}``
    with result objects carrying ``ticker``, ``name``, ``market``, ``locale``,
    ``cik`` and ``active``. Rows whose ticker is not a plain symbol (e.g.
    currency pairs) are skipped.
    """
    import requests

    session = session or requests.Session()
    params = {"apiKey": api_key} if api_key else {}
    records: dict[str, TickerRecord] = {}
    next_url: str | None = url
    for _ in range(max_pages):
        if not next_url:
            break
        resp = session.get(next_url, params=params, timeout=30)
        resp.raise_for_status()
        payload = resp.json()
        for item in payload.get("results", []):
            ticker = str(item.get("ticker", "")).upper()
            market = str(item.get("market", "other")).lower()
            try:
                rec = TickerRecord(
                    ticker=ticker,
                    name=str(item.get("name", "")).strip(),
                    market=market if market in MARKETS else "other",
                    locale=str(item.get("locale", "us")).lower(),
                    cik=normalize_cik(item.get("cik")),
                    active=bool(item.get("active", True)),
                )
            except ValueError:
                continue
            if rec.name:
                records.setdefault(rec.ticker, rec)
        next_url = payload.get("next_url")
    return list(records.values())
