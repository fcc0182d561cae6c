"""Ticker verification and recovery for extracted company mentions.

Each proposed ticker is checked against the reference store by asking the
provider whether the article's company name and the official name of that
ticker denote the same company. Mentions that fail are re-mapped with the
string matcher and verified once more; unconfirmed mentions are dropped.
"""

from __future__ import annotations

import json
import logging
import threading
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Mapping, Sequence

from .extract import PREFILL, CompanyMention, ExtractionDraft, MalformedResponse, first_json_object
from .matcher import MatchResult
from .providers import AuditLog, Provider, RateLimiter, call_provider
from .refdata import ReferenceStore

logger = logging.getLogger(__name__)

RESOLUTIONS = ("direct", "recovered", "override")


@dataclass(frozen=True)
class VerifiedMention:
    company_name: str
    ticker: str
    sentiment: str
    sentiment_reasoning: str
    resolution: str


class DiscardLog:
    """One JSON object per discarded mention, with matcher diagnostics."""

    def __init__(self, path: str | Path) -> None:
        self.path = Path(path)
        self._lock = threading.Lock()

    def write(self, article_id: str, mention: CompanyMention, result: MatchResult | None) -> None:
        entry = {
            "article_id": article_id,
            "company_name": mention.company_name,
            "proposed_ticker": mention.proposed_ticker,
            "best": asdict(result.best) if result else None,
            "runners_up": [asdict(c) for c in result.ranked_runners_up] if result else [],
        }
        with self._lock, open(self.path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(entry, ensure_ascii=False, sort_keys=True) + "\n")


def build_verification_prompt(pairs: Sequence[tuple[str, str]]) -> tuple[str, str]:
    listing = [{"index": i, "article_name": a, "official_name": b} for i, (a, b) in enumerate(pairs)]
    prompt = (
        "For each numbered pair listed below, decide whether the company name "
        "taken from a news article refers to the same company as the official registered name.\n\n"
        f"<pairs>\n{json.dumps(listing, ensure_ascii=False)}\n</pairs>\n\n"
        "<instructions>\nAnswer with a single JSON object of the form "
        '{"verdicts": [{"index": 0, "match": true}, ...]} containing exactly one entry per pair.\n'
        "</instructions>"
    )
    return prompt, PREFILL


def _parse_verdicts(raw: str, n: int) -> list[bool]:
    obj = first_json_object(raw, PREFILL)
    verdicts = obj.get("verdicts")
    if not isinstance(verdicts, list) or len(verdicts) != n:
        raise MalformedResponse(f"expected {n} verdicts")
    out: list[bool | None] = [None] * n
    for v in verdicts:
        if not isinstance(v, dict) or not isinstance(v.get("match"), bool):
            raise MalformedResponse(f"bad verdict entry {v!r}")
        idx = v.get("index")
        if not isinstance(idx, int) or not 0 <= idx < n or out[idx] is not None:
            raise MalformedResponse(f"bad verdict index {idx!r}")
        out[idx] = v["match"]
    return [bool(v) for v in out]


class Verifier:
    """Sends name-pair verification questions to a provider."""

    def __init__(
        self,
        provider: Provider,
        rate_limiter: RateLimiter | None = None,
        audit: AuditLog | None = None,
        sleep=None,
    ) -> None:
        self.provider = provider
        self._kwargs: dict = {"rate_limiter": rate_limiter, "audit": audit}
        if sleep is not None:
            self._kwargs["sleep"] = sleep

    def _ask(self, pairs: Sequence[tuple[str, str]]) -> list[bool]:
        prompt, prefill = build_verification_prompt(pairs)
        exchange = call_provider(self.provider, prompt, prefill, **self._kwargs)
        return _parse_verdicts(exchange.raw_response, len(pairs))

    def verify_pair(self, company_name: str, official_name: str) -> bool:
        return self._ask([(company_name, official_name)])[0]

    def verify_pairs(self, pairs: Sequence[tuple[str, str]]) -> list[bool]:
        """One batched call; on a malformed batch answer, fall back to one call per pair."""
        if not pairs:
            return []
        try:
            return self._ask(pairs)
        except MalformedResponse as exc:
            if len(pairs) == 1:
                raise
            logger.warning("malformed batch verification (%s); retrying pair by pair", exc)
            return [self.verify_pair(a, b) for a, b in pairs]


def verify_pair(provider: Provider, company_name: str, official_name: str) -> bool:
    return Verifier(provider).verify_pair(company_name, official_name)


def validate_mentions(
    draft: ExtractionDraft,
    store: ReferenceStore,
    overrides: Mapping[str, str] | None,
    verifier: Verifier | Provider,
    discard_log: DiscardLog | None = None,
) -> list[VerifiedMention]:
    """Bind every mention of ``draft`` to a confirmed ticker, or drop it.

    Override-table hits are trusted without a verification call. Output
    order follows the draft.
    """
    if not isinstance(verifier, Verifier):
        verifier = Verifier(verifier)
    overrides = overrides or {}
    mentions = draft.mentions
    resolved: dict[int, VerifiedMention] = {}

    def bind(i: int, ticker: str, resolution: str) -> None:
        m = mentions[i]
        resolved[i] = VerifiedMention(m.company_name, ticker, m.sentiment, m.sentiment_reasoning, resolution)

    direct: list[tuple[int, str, str]] = []
    pending: list[int] = []
    for i, m in enumerate(mentions):
        rec = store.lookup(m.proposed_ticker) if m.proposed_ticker else None
        if rec is None:
            pending.append(i)
        else:
            direct.append((i, rec.ticker, rec.name))
    for (i, ticker, _), ok in zip(direct, verifier.verify_pairs([(mentions[i].company_name, name) for i, _, name in direct])):
        if ok:
            bind(i, ticker, "direct")
        else:
            pending.append(i)
    pending.sort()

    matches: dict[int, MatchResult] = {}
    recheck: list[int] = []
    index = store.name_index()
    for i in pending:
        if not len(index):
            break
        result = index.match(mentions[i].company_name, overrides)
        matches[i] = result
        if result.via_override:
            if result.ticker in store:
                bind(i, store.lookup(result.ticker).ticker, "override")
            else:
                logger.warning("override for %r points at unknown ticker %s", mentions[i].company_name, result.ticker)
        else:
            recheck.append(i)
    verdicts = verifier.verify_pairs([(mentions[i].company_name, matches[i].best.name) for i in recheck])
    for i, ok in zip(recheck, verdicts):
        if ok:
            bind(i, matches[i].ticker, "recovered")

    for i in pending:
        if i in resolved:
            continue
        m = mentions[i]
        store.record_miss(m.company_name)
        logger.info("article %s: discarded %r (proposed %s)", draft.article_id, m.company_name, m.proposed_ticker)
        if discard_log is not None:
            discard_log.write(draft.article_id, m, matches.get(i))
    return [resolved[i] for i in sorted(resolved)]


def as_draft(article_id: str, verified: Sequence[VerifiedMention], template: ExtractionDraft) -> ExtractionDraft:
    """Re-wrap verified mentions as a draft proposing their bound tickers."""
    return ExtractionDraft(
        article_id=article_id,
        title=template.title,
        summary=template.summary,
        keywords=template.keywords,
        mentions=tuple(CompanyMention(v.company_name, v.ticker, v.sentiment, v.sentiment_reasoning) for v in verified),
    )
