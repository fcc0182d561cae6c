"""Single-file insight store with an in-memory index and cursor pagination.

Records are appended to a JSON-lines file as their canonical serialization.
On open the file is scanned to rebuild ``id -> (offset, length)`` and
``ticker -> ids``; the last line written for an id wins. Queries run
against an immutable index snapshot that ``put`` replaces in one
assignment, so a reader sees the state from before or after a write.
"""

from __future__ import annotations

import base64
import bisect
import hashlib
import hmac
import json
import logging
import os
import threading
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path

from .enrich import InsightRecord, InvalidRecord, check_record
from .ingest import utc_iso
from .refdata import ReferenceStore

logger = logging.getLogger(__name__)

MAX_LIMIT = 1000
DEFAULT_LIMIT = 100
_CURSOR_KEY = b"newsinsight-cursor-v1"


class BadQuery(ValueError):
    def __init__(self, field: str, message: str) -> None:
        self.field = field
        super().__init__(f"{field}: {message}")


class BadCursor(BadQuery):
    def __init__(self, message: str) -> None:
        super().__init__("cursor", message)


@dataclass(frozen=True)
class Query:
    ticker: str | None = None
    published_gte: datetime | None = None
    published_lte: datetime | None = None
    limit: int = DEFAULT_LIMIT
    cursor: str | None = None
    order: str = "desc"

    def __post_init__(self) -> None:
        if isinstance(self.limit, bool) or not isinstance(self.limit, int) or not 1 <= self.limit <= MAX_LIMIT:
            raise BadQuery("limit", f"must be an integer between 1 and {MAX_LIMIT}")
        if self.order not in ("asc", "desc"):
            raise BadQuery("order", "must be 'asc' or 'desc'")
        if self.ticker is not None:
            object.__setattr__(self, "ticker", self.ticker.strip().upper())
        if self.published_gte and self.published_lte and self.published_gte > self.published_lte:
            raise BadQuery("published.gte", "is after published.lte")

    def fingerprint(self) -> str:
        parts = [
            self.ticker or "",
            utc_iso(self.published_gte) if self.published_gte else "",
            utc_iso(self.published_lte) if self.published_lte else "",
            self.order,
        ]
        return hashlib.sha256("\x1f".join(parts).encode()).hexdigest()[:16]


@dataclass
class Page:
    records: list[InsightRecord]
    raw: list[bytes]
    next_cursor: str | None


def _sign(payload: bytes, key: bytes) -> str:
    return hmac.new(key, payload, hashlib.sha256).hexdigest()[:16]


def encode_cursor(key: tuple[str, str], query: Query, secret: bytes = _CURSOR_KEY) -> str:
    payload = json.dumps([key[0], key[1], query.fingerprint()], separators=(",", ":")).encode()
    body = base64.urlsafe_b64encode(payload).decode().rstrip("=")
    return f"{body}.{_sign(payload, secret)}"


def decode_cursor(token: str, query: Query, secret: bytes = _CURSOR_KEY) -> tuple[str, str]:
    try:
        body, sig = token.rsplit(".", 1)
        payload = base64.urlsafe_b64decode(body + "=" * (-len(body) % 4))
    except (ValueError, TypeError) as exc:
        raise BadCursor("not a cursor") from exc
    if not hmac.compare_digest(sig, _sign(payload, secret)):
        raise BadCursor("checksum mismatch")
    try:
        published, ident, fp = json.loads(payload)
    except (ValueError, TypeError) as exc:
        raise BadCursor("corrupt cursor") from exc
    if fp != query.fingerprint():
        raise BadCursor("cursor was issued for a different query")
    return published, ident


@dataclass(frozen=True)
class _Index:
    locations: dict[str, tuple[int, int]] = field(default_factory=dict)
    keys: dict[str, tuple[str, str]] = field(default_factory=dict)
    tickers: dict[str, frozenset[str]] = field(default_factory=dict)
    ordered: list[tuple[str, str]] = field(default_factory=list)
    by_ticker: dict[str, list[tuple[str, str]]] = field(default_factory=dict)


class InsightStore:
    """Upsert-by-id record store; one writer, any number of readers."""

    def __init__(self, path: str | Path, reference: ReferenceStore | None = None) -> None:
        self.path = Path(path)
        self.reference = reference
        self._write_lock = threading.Lock()
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.path.touch(exist_ok=True)
        self._fd = os.open(self.path, os.O_RDWR | os.O_APPEND)
        self._index = self._rebuild()

    def close(self) -> None:
        if self._fd >= 0:
            os.close(self._fd)
            self._fd = -1

    def __enter__(self) -> InsightStore:
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def __len__(self) -> int:
        return len(self._index.locations)

    def __contains__(self, ident: object) -> bool:
        return ident in self._index.locations

    def _rebuild(self) -> _Index:
        idx = _Index()
        offset = 0
        valid_end = 0
        with open(self.path, "rb") as fh:
            for lineno, line in enumerate(fh, 1):
                start, offset = offset, offset + len(line)
                if not line.endswith(b"\n"):
                    logger.warning("%s: ignoring incomplete trailing line %d", self.path, lineno)
                    break
                try:
                    data = json.loads(line)
                    ident, published = data["id"], data["published_utc"]
                    tickers = frozenset(data.get("tickers", ()))
                except (ValueError, KeyError, TypeError):
                    logger.warning("%s: skipping unreadable line %d", self.path, lineno)
                    valid_end = offset
                    continue
                self._apply(idx, ident, (published, ident), tickers, (start, len(line) - 1))
                valid_end = offset
        if valid_end < self.path.stat().st_size:
            os.truncate(self.path, valid_end)
        return idx

    @staticmethod
    def _apply(idx: _Index, ident: str, key: tuple[str, str], tickers: frozenset[str], loc: tuple[int, int]) -> None:
        old_key = idx.keys.get(ident)
        if old_key is not None:
            idx.ordered.pop(bisect.bisect_left(idx.ordered, old_key))
            for t in idx.tickers[ident]:
                lst = idx.by_ticker[t]
                lst.pop(bisect.bisect_left(lst, old_key))
                if not lst:
                    del idx.by_ticker[t]
        idx.locations[ident] = loc
        idx.keys[ident] = key
        idx.tickers[ident] = tickers
        bisect.insort(idx.ordered, key)
        for t in tickers:
            bisect.insort(idx.by_ticker.setdefault(t, []), key)

    def _read(self, loc: tuple[int, int]) -> bytes:
        return os.pread(self._fd, loc[1], loc[0])

    def get_raw(self, ident: str) -> bytes | None:
        loc = self._index.locations.get(ident)
        return self._read(loc) if loc else None

    def get(self, ident: str) -> InsightRecord | None:
        raw = self.get_raw(ident)
        return InsightRecord.from_dict(json.loads(raw)) if raw is not None else None

    def upsert(self, record: InsightRecord) -> bool:
        """Store ``record``; return False if an identical copy was already stored.

        Raises:
            InvalidRecord: if the record breaks its invariants.
        """
        check_record(record, self.reference)
        line = record.to_json().encode("utf-8")
        with self._write_lock:
            current = self._index
            loc = current.locations.get(record.id)
            if loc is not None and self._read(loc) == line:
                return False
            start = os.lseek(self._fd, 0, os.SEEK_END)
            os.write(self._fd, line + b"\n")
            os.fsync(self._fd)
            nxt = _Index(
                locations=dict(current.locations),
                keys=dict(current.keys),
                tickers=dict(current.tickers),
                ordered=list(current.ordered),
                by_ticker={t: list(v) for t, v in current.by_ticker.items()},
            )
            key = (utc_iso(record.published_utc), record.id)
            self._apply(nxt, record.id, key, frozenset(record.tickers), (start, len(line)))
            self._index = nxt
            return True

    def put(self, record: InsightRecord) -> str:
        self.upsert(record)
        return record.id

    def query(self, q: Query) -> Page:
        idx = self._index
        keys = idx.ordered if q.ticker is None else idx.by_ticker.get(q.ticker, [])
        lo_bound = (utc_iso(q.published_gte), "") if q.published_gte else None
        hi_bound = (utc_iso(q.published_lte), "\U0010ffff") if q.published_lte else None
        lo = bisect.bisect_left(keys, lo_bound) if lo_bound else 0
        hi = bisect.bisect_right(keys, hi_bound) if hi_bound else len(keys)
        if q.cursor:
            after = decode_cursor(q.cursor, q)
            if q.order == "asc":
                lo = max(lo, bisect.bisect_right(keys, after))
            else:
                hi = min(hi, bisect.bisect_left(keys, after))
        window = keys[lo:hi]
        if q.order == "desc":
            chosen = window[::-1][: q.limit]
        else:
            chosen = window[: q.limit]
        more = len(window) > q.limit
        raw = [self._read(idx.locations[ident]) for _, ident in chosen]
        records = [InsightRecord.from_dict(json.loads(r)) for r in raw]
        cursor = encode_cursor(chosen[-1], q) if more and chosen else None
        return Page(records=records, raw=raw, next_cursor=cursor)

    def iter_raw(self):
        idx = self._index
        for _, ident in idx.ordered:
            yield self._read(idx.locations[ident])


__all__ = ["BadCursor", "BadQuery", "InsightStore", "InvalidRecord", "Page", "Query", "decode_cursor", "encode_cursor"]
