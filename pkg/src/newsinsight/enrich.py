"""Assemble the final, share-class-expanded article record."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import datetime
from typing import Iterable, Mapping, Sequence
from urllib.parse import urlsplit

from .extract import ExtractionDraft
from .ingest import RawArticle, parse_utc, utc_iso
from .refdata import ReferenceStore
from .validate import VerifiedMention


class InvalidRecord(ValueError):
    pass


@dataclass(frozen=True)
class Publisher:
    name: str
    homepage_url: str


@dataclass(frozen=True)
class Insight:
    ticker: str
    sentiment: str
    sentiment_reasoning: str


@dataclass(frozen=True)
class InsightRecord:
    id: str
    article_url: str
    publisher: Publisher
    title: str
    published_utc: datetime
    description: str
    image_url: str | None = None
    keywords: tuple[str, ...] = ()
    tickers: frozenset[str] = frozenset()
    insights: tuple[Insight, ...] = field(default_factory=tuple)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "article_url": self.article_url,
            "publisher": {"name": self.publisher.name, "homepage_url": self.publisher.homepage_url},
            "title": self.title,
            "published_utc": utc_iso(self.published_utc),
            "image_url": self.image_url,
            "description": self.description,
            "keywords": list(self.keywords),
            "tickers": sorted(self.tickers),
            "insights": [
                {"ticker": i.ticker, "sentiment": i.sentiment, "sentiment_reasoning": i.sentiment_reasoning}
                for i in self.insights
            ],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> InsightRecord:
        try:
            pub = d["publisher"]
            return cls(
                id=d["id"],
                article_url=d["article_url"],
                publisher=Publisher(pub["name"], pub["homepage_url"]),
                title=d["title"],
                published_utc=parse_utc(d["published_utc"]),
                image_url=d.get("image_url"),
                description=d["description"],
                keywords=tuple(d.get("keywords", ())),
                tickers=frozenset(d.get("tickers", ())),
                insights=tuple(
                    Insight(i["ticker"], i["sentiment"], i["sentiment_reasoning"]) for i in d.get("insights", ())
                ),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidRecord(f"cannot decode record: {exc}") from exc

    def to_json(self) -> str:
        """Canonical serialization used for storage, the API and exports."""
        return json.dumps(self.to_dict(), ensure_ascii=False, sort_keys=True, separators=(",", ":"))


def expand_share_classes(tickers: Iterable[str], store: ReferenceStore) -> set[str]:
    """Union of the CIK siblings of every ticker. Raises UnknownTicker."""
    out: set[str] = set()
    for t in tickers:
        out |= store.tickers_sharing_cik(t)
    return out


def check_record(record: InsightRecord, store: ReferenceStore | None = None) -> None:
    """Raise :class:`InvalidRecord` unless the record's invariants hold."""
    seen: set[str] = set()
    for ins in record.insights:
        if ins.ticker not in record.tickers:
            raise InvalidRecord(f"insight ticker {ins.ticker} not in tickers")
        if ins.ticker in seen:
            raise InvalidRecord(f"duplicate insight for {ins.ticker}")
        seen.add(ins.ticker)
    if store is not None:
        for t in record.tickers:
            if t not in store:
                raise InvalidRecord(f"unknown ticker {t}")
            missing = store.tickers_sharing_cik(t) - record.tickers
            if missing:
                raise InvalidRecord(f"tickers not CIK-closed: {t} lacks {', '.join(sorted(missing))}")


def homepage(url: str) -> str:
    parts = urlsplit(url)
    return f"{parts.scheme}://{parts.netloc}/" if parts.netloc else ""


def assemble(
    article: RawArticle,
    draft: ExtractionDraft,
    verified: Sequence[VerifiedMention],
    store: ReferenceStore,
) -> InsightRecord:
    """Build the record for one article.

    Share-class siblings added by the CIK expansion inherit the sentiment of
    the mention that pulled them in. When several mentions bind the same
    ticker, the first one (in draft order) wins, and a direct binding always
    beats an inherited one.
    """
    chosen: dict[str, Insight] = {}
    for v in verified:
        chosen.setdefault(v.ticker, Insight(v.ticker, v.sentiment, v.sentiment_reasoning))
    tickers: set[str] = set()
    inherited: dict[str, Insight] = {}
    for v in verified:
        for sibling in sorted(store.tickers_sharing_cik(v.ticker)):
            tickers.add(sibling)
            if sibling not in chosen:
                inherited.setdefault(sibling, Insight(sibling, v.sentiment, v.sentiment_reasoning))
    merged = {**inherited, **chosen}
    return InsightRecord(
        id=article.id,
        article_url=article.final_url,
        publisher=Publisher(article.publisher, homepage(article.final_url)),
        title=draft.title or article.title,
        published_utc=article.published_utc,
        image_url=article.image_url,
        description=draft.summary,
        keywords=tuple(draft.keywords),
        tickers=frozenset(tickers),
        insights=tuple(merged[t] for t in sorted(merged)),
    )
