"""LLM provider abstraction: retries, rate limiting, audit log, mock and remote backends."""

from __future__ import annotations

import html
import json
import logging
import os
import re
import threading
import time
from collections import Counter
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Mapping, Protocol, Sequence

from .matcher import DEFAULT_JUNK_WORDS, clean_name, levenshtein

logger = logging.getLogger(__name__)

MAX_ATTEMPTS = 3


class ProviderError(RuntimeError):
    pass


class TransientProviderError(ProviderError):
    """A failure worth retrying (timeouts, overload, 5xx)."""


class ProviderUnavailable(ProviderError):
    """Raised once retries are exhausted."""


class ProviderRefused(ProviderError):
    """Non-retryable rejection (bad request, auth, policy)."""


class Provider(Protocol):
    provider_id: str

    def complete(self, prompt: str, prefill: str) -> str: ...


@dataclass(frozen=True)
class ProviderExchange:
    prompt: str
    prefill: str
    raw_response: str
    provider_id: str
    latency_ms: int
    attempts: int = 1


class RateLimiter:
    """Spaces calls at least ``60 / requests_per_minute`` seconds apart, across threads."""

    def __init__(
        self,
        requests_per_minute: float | None,
        clock: Callable[[], float] = time.monotonic,
        sleep: Callable[[float], None] = time.sleep,
    ) -> None:
        self.interval = 60.0 / requests_per_minute if requests_per_minute else 0.0
        self._clock = clock
        self._sleep = sleep
        self._lock = threading.Lock()
        self._next = 0.0

    def acquire(self) -> None:
        if not self.interval:
            return
        with self._lock:
            now = self._clock()
            slot = max(now, self._next)
            self._next = slot + self.interval
        if slot > now:
            self._sleep(slot - now)


class AuditLog:
    """Appends one JSON object per exchange for later replay."""

    def __init__(self, path: str | Path) -> None:
        self.path = Path(path)
        self._lock = threading.Lock()

    def write(self, exchange: ProviderExchange) -> None:
        line = json.dumps(asdict(exchange), ensure_ascii=False, sort_keys=True)
        with self._lock, open(self.path, "a", encoding="utf-8") as fh:
            fh.write(line + "\n")


def call_provider(
    provider: Provider,
    prompt: str,
    prefill: str = "{",
    *,
    max_attempts: int = MAX_ATTEMPTS,
    base_delay: float = 1.0,
    sleep: Callable[[float], None] = time.sleep,
    rate_limiter: RateLimiter | None = None,
    audit: AuditLog | None = None,
) -> ProviderExchange:
    """Send one prompt, retrying transient failures with exponential backoff.

    Raises:
        ProviderUnavailable: after ``max_attempts`` transient failures.
        ProviderRefused: immediately, on a non-retryable rejection.
    """
    last: Exception | None = None
    for attempt in range(1, max_attempts + 1):
        if rate_limiter is not None:
            rate_limiter.acquire()
        started = time.perf_counter()
        try:
            raw = provider.complete(prompt, prefill)
        except TransientProviderError as exc:
            last = exc
            logger.warning("provider %s attempt %d/%d failed: %s", provider.provider_id, attempt, max_attempts, exc)
            if attempt < max_attempts:
                sleep(base_delay * 2 ** (attempt - 1))
            continue
        exchange = ProviderExchange(
            prompt=prompt,
            prefill=prefill,
            raw_response=raw,
            provider_id=provider.provider_id,
            latency_ms=int((time.perf_counter() - started) * 1000),
            attempts=attempt,
        )
        logger.debug("provider %s answered on attempt %d", provider.provider_id, attempt)
        if audit is not None:
            audit.write(exchange)
        return exchange
    raise ProviderUnavailable(f"{provider.provider_id} failed {max_attempts} attempts: {last}") from last


class AnthropicProvider:
    """Messages-API client that sends the prefill as the start of the assistant turn."""

    def __init__(
        self,
        model: str,
        endpoint: str = "https://api.anthropic.com",
        api_key_env: str = "ANTHROPIC_API_KEY",
        max_tokens: int = 2048,
        timeout: float = 120.0,
        session=None,
    ) -> None:
        import requests

        self._requests = requests
        self.model = model
        self.endpoint = endpoint.rstrip("/")
        self.api_key = os.environ.get(api_key_env, "")
        if not self.api_key:
            raise ProviderRefused(f"environment variable {api_key_env} is not set")
        self.max_tokens = max_tokens
        self.timeout = timeout
        self.session = session or requests.Session()
        self.provider_id = f"anthropic:{model}"

    def complete(self, prompt: str, prefill: str) -> str:
        messages = [{"role": "user", "content": prompt}]
        if prefill:
            messages.append({"role": "assistant", "content": prefill})
        try:
            resp = self.session.post(
                f"{self.endpoint}/v1/messages",
                headers={
                    "x-api-key": self.api_key,
                    "anthropic-version": "2023-06-01",
                    "content-type": "application/json",
                },
                json={"model": self.model, "max_tokens": self.max_tokens, "messages": messages},
                timeout=self.timeout,
            )
        except self._requests.RequestException as exc:
            raise TransientProviderError(str(exc)) from exc
        if resp.status_code == 429 or resp.status_code >= 500:
            raise TransientProviderError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        if resp.status_code >= 400:
            raise ProviderRefused(f"HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            payload = resp.json()
            return "".join(block.get("text", "") for block in payload["content"] if block.get("type") == "text")
        except (ValueError, KeyError, TypeError) as exc:
            raise TransientProviderError(f"unexpected response body: {exc}") from exc


class ScriptedProvider:
    """Replays canned answers; entries that are exceptions get raised instead."""

    def __init__(self, responses: Sequence[str | Exception], provider_id: str = "scripted") -> None:
        self.responses = list(responses)
        self.calls: list[tuple[str, str]] = []
        self.provider_id = provider_id

    def complete(self, prompt: str, prefill: str) -> str:
        self.calls.append((prompt, prefill))
        item = self.responses.pop(0) if len(self.responses) > 1 else self.responses[0]
        if isinstance(item, Exception):
            raise item
        return item


# --- deterministic mock ------------------------------------------------------

# Deliberately wrong for Pfizer (PFI is an ETF) so validation has something to fix.
MOCK_TICKERS: Mapping[str, str] = {
    "AbbVie": "ABBV",
    "Pfizer": "PFI",
    "Google": "GOOGL",
    "Alphabet": "GOOGL",
    "Apple": "AAPL",
    "Microsoft": "MSFT",
    "Amazon": "AMZN",
    "Nvidia": "NVDA",
    "NVIDIA": "NVDA",
    "Tesla": "TSLA",
    "Meta Platforms": "META",
    "JPMorgan": "JPM",
    "Moderna": "MRNA",
    "Merck": "MRK",
    "Johnson & Johnson": "JNJ",
    "Eli Lilly": "LLY",
    "Bristol Myers Squibb": "BMY",
    "Axsome Therapeutics": "AXSM",
    "Berkshire Hathaway": "BRK.B",
    "Netflix": "NFLX",
    "Intel": "INTC",
    "Boeing": "BA",
    "Ford": "F",
    "General Motors": "GM",
    "Walmart": "WMT",
    "Costco": "COST",
    "Exxon Mobil": "XOM",
    "Chevron": "CVX",
}

POSITIVE_CUES = frozenset(
    "beat beats surge surged surges rally rallied gain gains gained growth grew record strong "
    "stronger upgrade upgraded raise raised approval approved boost boosted profit profits "
    "outperform rise rose rises soared soar jumped jump higher exceeded expands expanded".split()
)
NEGATIVE_CUES = frozenset(
    "miss missed misses fall fell falls drop dropped drops decline declined declines loss losses "
    "weak weaker downgrade downgraded cut cuts lawsuit recall recalled plunge plunged slump "
    "slumped lower layoffs warning warned probe fine fined halted delay delayed".split()
)
STOPWORDS = frozenset(
    "the a an and or of in on for to with by at from as is are was were be been its it this that "
    "these those their has have had will would said says also than more after over into about "
    "which while but not per new year company companies shares share stock inc corp".split()
)

_SUFFIXED_NAME = re.compile(
    r"\b((?:[A-Z][\w&'.-]*\s+){1,4}?(?:Inc\.?|Corp\.?|Corporation|Ltd\.?|plc|PLC|Holdings|Group|Co\.))"
)
_SENTENCE_END = re.compile(r"(?<=[.!?])\s+(?=[A-Z\"'(])")
_WORD = re.compile(r"[A-Za-z][A-Za-z'-]+")


def split_sentences(text: str) -> list[str]:
    return [s.strip() for s in _SENTENCE_END.split(" ".join(text.split())) if s.strip()]


def _tag(prompt: str, name: str) -> str | None:
    m = re.search(rf"<{name}>\n?(.*?)\n?</{name}>", prompt, re.DOTALL)
    return html.unescape(m.group(1)) if m else None


class MockProvider:
    """Rule-based stand-in for an LLM, deterministic for a given prompt.

    Extraction prompts get companies found by table lookup (see
    ``MOCK_TICKERS``) or by capitalized names ending in a corporate suffix,
    keyword-cue sentiment and a lead-sentence summary. Verification prompts
    get a verdict per pair: true for identical names, otherwise true iff the
    cleaned names share a word and are within edit distance 2.
    ``verdicts`` pins answers for specific ``(article_name, official_name)``
    pairs; ``scripted`` maps a prompt substring to a canned raw answer.
    """

    def __init__(
        self,
        tickers: Mapping[str, str] = MOCK_TICKERS,
        verdicts: Mapping[tuple[str, str], bool] | None = None,
        scripted: Mapping[str, str] | None = None,
        junk_words=DEFAULT_JUNK_WORDS,
        provider_id: str = "mock",
    ) -> None:
        self.tickers = dict(tickers)
        self.verdicts = {(a.lower(), b.lower()): v for (a, b), v in (verdicts or {}).items()}
        self.scripted = dict(scripted or {})
        self.junk_words = frozenset(junk_words)
        self.provider_id = provider_id
        self.calls = 0

    def complete(self, prompt: str, prefill: str) -> str:
        self.calls += 1
        full = None
        for needle, answer in self.scripted.items():
            if needle in prompt:
                full = answer
                break
        if full is None:
            if "<pairs>" in prompt:
                full = self._verify(prompt)
            elif "<article>" in prompt:
                full = self._extract(prompt)
            else:
                raise ProviderRefused("mock provider does not recognise this prompt")
        return full[len(prefill):] if prefill and full.startswith(prefill) else full

    def verdict(self, article_name: str, official_name: str) -> bool:
        pinned = self.verdicts.get((article_name.lower(), official_name.lower()))
        if pinned is not None:
            return pinned
        if " ".join(article_name.split()).casefold() == " ".join(official_name.split()).casefold():
            return True
        a = clean_name(article_name, self.junk_words)
        b = clean_name(official_name, self.junk_words)
        return bool(a.words & b.words) and levenshtein(a.cleaned, b.cleaned) <= 2

    def _verify(self, prompt: str) -> str:
        pairs = json.loads(_tag(prompt, "pairs") or "[]")
        verdicts = [{"index": p["index"], "match": self.verdict(p["article_name"], p["official_name"])} for p in pairs]
        return json.dumps({"verdicts": verdicts})

    def _find_companies(self, text: str) -> list[tuple[int, str, str | None]]:
        found: dict[str, tuple[int, str | None]] = {}
        spans: list[tuple[int, int]] = []
        for name in sorted(self.tickers, key=lambda n: (-len(n), n)):
            m = re.search(rf"(?<![\w]){re.escape(name)}(?![\w])", text)
            if m and not any(s <= m.start() < e for s, e in spans):
                found[name] = (m.start(), self.tickers[name])
                spans.append(m.span())
        for m in _SUFFIXED_NAME.finditer(text):
            name = m.group(1).strip()
            if any(s < m.end() and m.start() < e for s, e in spans):
                continue
            if name not in found:
                found[name] = (m.start(), None)
                spans.append(m.span())
        return sorted(((pos, name, t) for name, (pos, t) in found.items()), key=lambda x: x[0])

    def _sentiment(self, name: str, sentences: list[str]) -> tuple[str, str]:
        mentions = [s for s in sentences if name in s]
        words = [w.lower() for s in mentions for w in _WORD.findall(s)]
        pos = sorted({w for w in words if w in POSITIVE_CUES})
        neg = sorted({w for w in words if w in NEGATIVE_CUES})
        n_pos = sum(w in POSITIVE_CUES for w in words)
        n_neg = sum(w in NEGATIVE_CUES for w in words)
        label = "positive" if n_pos > n_neg else "negative" if n_neg > n_pos else "neutral"
        reasoning = (
            f"{name} is mentioned in {len(mentions)} sentence(s). "
            f"Positive cues: {', '.join(pos) or 'none'}. Negative cues: {', '.join(neg) or 'none'}."
        )
        return reasoning, label

    def _extract(self, prompt: str) -> str:
        body = _tag(prompt, "body") or ""
        title = _tag(prompt, "title") or ""
        sentences = split_sentences(body)
        counts = Counter(w.lower() for w in _WORD.findall(body))
        keywords = [
            w
            for w, _ in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
            if len(w) >= 4 and w not in STOPWORDS
        ][:5]
        companies = []
        for _, name, ticker in self._find_companies(body):
            reasoning, label = self._sentiment(name, sentences)
            companies.append(
                {"name": name, "ticker": ticker, "sentiment_reasoning": reasoning, "sentiment": label}
            )
        out = {
            "title": title,
            "summary": " ".join(sentences[:2]) or title,
            "keywords": keywords,
            "companies": companies,
        }
        return json.dumps(out, ensure_ascii=False)
