"""First LLM pass: prompt construction and parsing of the structured draft."""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from typing import Any, Sequence
from xml.sax.saxutils import escape

from .ingest import RawArticle
from .providers import AuditLog, Provider, ProviderExchange, RateLimiter, call_provider

logger = logging.getLogger(__name__)

PREFILL = "{"
DEFAULT_MAX_CHARS = 24_000
SENTIMENTS = ("positive", "negative", "neutral")

INSTRUCTIONS = """\
Return a single JSON object and nothing else. Use these keys, in this order:
- "title": the article headline.
- "summary": two or three sentences summarizing the article in your own words.
- "keywords": a list of short topical keywords.
- "companies": one entry per company the article is substantially about. Each entry has these keys, in this order:
  - "name": the company name exactly as it is written in the article.
  - "ticker": the company's stock ticker symbol, or null if it is not publicly traded.
  - "sentiment_reasoning": one or two sentences on how the article portrays the company.
  - "sentiment": one of "positive", "negative" or "neutral".
Write "sentiment_reasoning" first and decide "sentiment" only after it. Only use \
information from the article."""

CONTINUE_INSTRUCTION = (
    "\n\nYour previous answer was cut off. Continue it exactly where it stopped, "
    "without repeating anything."
)


class MalformedResponse(ValueError):
    pass


class TruncatedResponse(MalformedResponse):
    """The response begins a JSON object but ends before closing it."""


class SchemaViolation(ValueError):
    def __init__(self, field: str, message: str) -> None:
        self.field = field
        super().__init__(f"{field}: {message}")


@dataclass(frozen=True)
class CompanyMention:
    company_name: str
    proposed_ticker: str | None
    sentiment: str
    sentiment_reasoning: str


@dataclass(frozen=True)
class ExtractionDraft:
    article_id: str
    title: str
    summary: str
    keywords: tuple[str, ...] = ()
    mentions: tuple[CompanyMention, ...] = field(default_factory=tuple)


def truncate_body(text: str, max_chars: int = DEFAULT_MAX_CHARS) -> str:
    """Cut ``text`` to at most ``max_chars``, preferring a sentence boundary."""
    if len(text) <= max_chars:
        return text
    head = text[:max_chars]
    ends = [m.end() for m in re.finditer(r"[.!?][\"')\]]?(?=\s)", head)]
    if ends and ends[-1] >= max_chars // 2:
        return head[: ends[-1]]
    space = head.rfind(" ")
    return head[:space] if space > 0 else head


def build_extraction_prompt(article: RawArticle, max_chars: int = DEFAULT_MAX_CHARS) -> tuple[str, str]:
    """Return ``(prompt, prefill)``.

    Article text is XML-escaped, so the body can never contain the
    delimiter tags themselves.
    """
    body = escape(truncate_body(article.body_text, max_chars))
    prompt = (
        "You are a financial news analyst. Read the news article inside the article element, "
        "then follow the instructions inside the instructions element.\n\n"
        f"<article>\n<title>{escape(article.title)}</title>\n<body>\n{body}\n</body>\n</article>\n\n"
        f"<instructions>\n{INSTRUCTIONS}\n</instructions>"
    )
    return prompt, PREFILL


def _scan_object(text: str, start: int) -> int | None:
    """Index just past the object opening at ``start``, or None if it never closes."""
    depth = 0
    in_string = escaped = False
    for i in range(start, len(text)):
        ch = text[i]
        if in_string:
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == '"':
                in_string = False
        elif ch == '"':
            in_string = True
        elif ch in "{[":
            depth += 1
        elif ch in "}]":
            depth -= 1
            if depth == 0:
                return i + 1
    return None


def first_json_object(raw_response: str, prefill: str = PREFILL) -> dict:
    """Prepend the prefill and decode the first complete top-level object.

    Providers that echo the prefill are tolerated: a JSON object body can
    never legitimately begin with another ``{``.
    """
    text = raw_response if prefill and raw_response.lstrip().startswith(prefill) else prefill + raw_response
    start = text.find("{")
    if start < 0:
        raise MalformedResponse("response contains no JSON object")
    try:
        obj, _ = json.JSONDecoder().raw_decode(text, start)
    except json.JSONDecodeError as exc:
        if _scan_object(text, start) is None:
            raise TruncatedResponse("response ends inside the JSON object") from exc
        raise MalformedResponse(f"response is not valid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise MalformedResponse("top-level JSON value is not an object")
    return obj


def _text_field(obj: dict, key: str, where: str, required: bool = True) -> str:
    value = obj.get(key)
    if value is None:
        if required:
            raise SchemaViolation(where, "missing")
        return ""
    if not isinstance(value, str):
        raise SchemaViolation(where, f"expected a string, got {type(value).__name__}")
    return value.strip()


def _mention(item: Any, where: str) -> CompanyMention:
    if not isinstance(item, dict):
        raise SchemaViolation(where, "expected an object")
    name = _text_field(item, "name", f"{where}.name")
    if not name:
        raise SchemaViolation(f"{where}.name", "empty company name")
    ticker = item.get("ticker")
    if ticker is not None and not isinstance(ticker, str):
        raise SchemaViolation(f"{where}.ticker", "expected a string or null")
    ticker = (ticker or "").strip().upper() or None
    reasoning = _text_field(item, "sentiment_reasoning", f"{where}.sentiment_reasoning")
    if not reasoning:
        raise SchemaViolation(f"{where}.sentiment_reasoning", "empty reasoning")
    sentiment = _text_field(item, "sentiment", f"{where}.sentiment").lower()
    if sentiment not in SENTIMENTS:
        raise SchemaViolation(f"{where}.sentiment", f"{sentiment!r} is not one of {', '.join(SENTIMENTS)}")
    return CompanyMention(name, ticker, sentiment, reasoning)


def parse_draft(raw_response: str, prefill: str, article_id: str) -> ExtractionDraft:
    """Decode and validate an extraction answer.

    Raises:
        MalformedResponse: if no JSON object can be decoded.
        SchemaViolation: naming the first offending field.
    """
    obj = first_json_object(raw_response, prefill)
    title = _text_field(obj, "title", "title", required=False)
    summary = _text_field(obj, "summary", "summary")
    if not summary:
        raise SchemaViolation("summary", "empty summary")
    keywords = obj.get("keywords", [])
    if not isinstance(keywords, list) or not all(isinstance(k, str) for k in keywords):
        raise SchemaViolation("keywords", "expected a list of strings")
    companies = obj.get("companies", [])
    if not isinstance(companies, list):
        raise SchemaViolation("companies", "expected a list")
    mentions = tuple(_mention(item, f"companies[{i}]") for i, item in enumerate(companies))
    return ExtractionDraft(
        article_id=article_id,
        title=title,
        summary=summary,
        keywords=tuple(k.strip() for k in keywords if k.strip()),
        mentions=mentions,
    )


def serialize_draft(draft: ExtractionDraft) -> str:
    """Inverse of :func:`parse_draft` (the article id travels separately)."""
    return json.dumps(
        {
            "title": draft.title,
            "summary": draft.summary,
            "keywords": list(draft.keywords),
            "companies": [
                {
                    "name": m.company_name,
                    "ticker": m.proposed_ticker,
                    "sentiment_reasoning": m.sentiment_reasoning,
                    "sentiment": m.sentiment,
                }
                for m in draft.mentions
            ],
        },
        ensure_ascii=False,
    )


def extract_draft(
    article: RawArticle,
    provider: Provider,
    *,
    max_chars: int = DEFAULT_MAX_CHARS,
    rate_limiter: RateLimiter | None = None,
    audit: AuditLog | None = None,
    sleep=None,
) -> tuple[ExtractionDraft, Sequence[ProviderExchange]]:
    """Run the extraction call for one article.

    A response cut off mid-object gets one follow-up asking the model to
    continue from where it stopped; a second truncation is reported as
    :class:`MalformedResponse`.
    """
    prompt, prefill = build_extraction_prompt(article, max_chars)
    kwargs: dict[str, Any] = {"rate_limiter": rate_limiter, "audit": audit}
    if sleep is not None:
        kwargs["sleep"] = sleep
    first = call_provider(provider, prompt, prefill, **kwargs)
    exchanges = [first]
    try:
        return parse_draft(first.raw_response, prefill, article.id), exchanges
    except TruncatedResponse:
        logger.info("article %s: truncated answer, asking to continue", article.id)
    partial = first.raw_response if first.raw_response.lstrip().startswith(prefill) else prefill + first.raw_response
    follow = call_provider(provider, prompt + CONTINUE_INSTRUCTION, partial, **kwargs)
    exchanges.append(follow)
    try:
        return parse_draft(partial + follow.raw_response, prefill, article.id), exchanges
    except TruncatedResponse as exc:
        raise MalformedResponse(f"article {article.id}: answer still truncated after continuation") from exc
