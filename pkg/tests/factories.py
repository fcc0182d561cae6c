"""Random instance generators shared by unit and acceptance tests."""

from __future__ import annotations

import random
import string

from newsinsight.refdata import ReferenceStore, TickerRecord

# Overlapping stems force ties on every metric; junk tokens and punctuation
# exercise the cleaner.
STEMS = ["alpha", "alp", "beta", "bet", "gamma", "delta", "del", "pharma", "bio", "tech", "energy", "first", "fin", "ab", "ba"]
JUNK = ["Inc.", "Corp", "Corporation", "Co.", "Ltd", "PLC", "Holdings", "Group", "The", "Class A", "Class B", "A", "&", "-", "AG", "N.V."]


def random_name(rng: random.Random, max_len: int = 60) -> str:
    words = []
    for _ in range(rng.randint(1, 6)):
        pool = JUNK if rng.random() < 0.3 else STEMS
        w = rng.choice(pool)
        if rng.random() < 0.2:
            w = w.upper()
        elif rng.random() < 0.3:
            w = w.capitalize()
        words.append(w)
    name = " ".join(words)
    if rng.random() < 0.2:
        name += rng.choice([",", ".", "!", " (US)"])
    return name[:max_len]


def random_ticker(rng: random.Random, pool: int = 40) -> str:
    return "".join(rng.choice(string.ascii_uppercase[:6]) for _ in range(rng.randint(1, 2))) if pool else "X"


def random_reference(rng: random.Random, max_size: int = 200) -> list[tuple[str, str]]:
    return [(random_name(rng), random_ticker(rng)) for _ in range(rng.randint(1, max_size))]


def random_store(rng: random.Random, max_size: int = 500) -> ReferenceStore:
    """Store with random CIK equivalence classes; some tickers have no CIK or are inactive."""
    n = rng.randint(1, max_size)
    n_ciks = rng.randint(1, max(1, n // 2))
    records = []
    for i in range(n):
        cik = None if rng.random() < 0.15 else str(rng.randrange(n_ciks)).zfill(10)
        records.append(TickerRecord(f"T{i}", f"Company {i}", cik=cik, active=rng.random() > 0.1))
    return ReferenceStore(records)


def api_reference() -> ReferenceStore:
    recs = [TickerRecord(t, f"{t} Corp") for t in ("AAPL", "MSFT", "PFE", "ABBV", "AXSM", "NVDA")]
    recs += [TickerRecord("GOOG", "Alphabet C", cik="0001652044"), TickerRecord("GOOGL", "Alphabet A", cik="0001652044")]
    return ReferenceStore(recs)


def random_records(rng: random.Random, n: int, reference: ReferenceStore):
    """``n`` CIK-closed records; some share a timestamp so the id tie-break matters."""
    from datetime import datetime, timedelta, timezone

    from newsinsight.enrich import Insight, InsightRecord, Publisher, expand_share_classes

    base = datetime(2023, 1, 1, tzinfo=timezone.utc)
    tickers = sorted(r.ticker for r in reference)
    out = []
    for i in range(n):
        chosen = expand_share_classes(rng.sample(tickers, rng.randint(0, 3)), reference)
        published = base + timedelta(hours=rng.randint(0, n // 2))
        out.append(
            InsightRecord(
                id=f"{i:04d}-{rng.getrandbits(32):08x}",
                article_url=f"https://news.example/{i}",
                publisher=Publisher(rng.choice(["Wire A", "Wire B"]), "https://news.example/"),
                title=f"Story {i}",
                published_utc=published,
                description=f"Summary {i}.",
                keywords=("markets",),
                tickers=frozenset(chosen),
                insights=tuple(Insight(t, rng.choice(["positive", "negative", "neutral"]), f"reason {i}") for t in sorted(chosen)),
            )
        )
    return out
