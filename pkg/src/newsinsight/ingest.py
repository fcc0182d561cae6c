"""News feed ingestion: feed parsing, redirect resolution, article fetching."""

from __future__ import annotations

import hashlib
import json
import logging
import threading
import time
import xml.etree.ElementTree as ET
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from email.utils import parsedate_to_datetime
from html.parser import HTMLParser
from pathlib import Path
from typing import Callable, Iterable, Mapping, Protocol
from urllib.parse import quote_plus, urljoin, urlsplit

logger = logging.getLogger(__name__)

USER_AGENT = "newsinsight/0.1 (+https://example.invalid/newsinsight)"
DEFAULT_MAX_HOPS = 10
DEFAULT_HOST_DELAY = 2.0
REDIRECT_CODES = frozenset({301, 302, 303, 307, 308})

MEDIA_NS = "http://search.yahoo.com/mrss/"
ATOM_NS = "http://www.w3.org/2005/Atom"


class FeedUnparseable(ValueError):
    pass


class NetworkError(IOError):
    """Transport-level failure. ``retryable`` is False for permanent errors."""

    def __init__(self, message: str, retryable: bool = True) -> None:
        super().__init__(message)
        self.retryable = retryable


class TooManyRedirects(NetworkError):
    def __init__(self, message: str) -> None:
        super().__init__(message, retryable=False)


class EmptyBody(ValueError):
    pass


def utc_iso(ts: datetime) -> str:
    return ts.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def parse_utc(text: str) -> datetime:
    """Parse an ISO-8601 timestamp (``Z`` suffix allowed); naive means UTC."""
    text = text.strip()
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    ts = datetime.fromisoformat(text)
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def is_absolute_url(url: str) -> bool:
    parts = urlsplit(url)
    return parts.scheme in ("http", "https") and bool(parts.netloc)


@dataclass(frozen=True)
class FeedItem:
    title: str
    aggregator_link: str
    published_utc: datetime
    source_name: str = ""
    source_url: str | None = None
    image_url: str | None = None


@dataclass(frozen=True)
class RawArticle:
    id: str
    final_url: str
    publisher: str
    title: str
    published_utc: datetime
    body_text: str
    fetched_utc: datetime
    aggregator_link: str | None = None
    image_url: str | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["published_utc"] = utc_iso(self.published_utc)
        d["fetched_utc"] = utc_iso(self.fetched_utc)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> RawArticle:
        d = dict(d)
        d["published_utc"] = parse_utc(d["published_utc"])
        d["fetched_utc"] = parse_utc(d["fetched_utc"])
        return cls(**d)


def article_id(final_url: str) -> str:
    return hashlib.sha256(final_url.encode("utf-8")).hexdigest()


# --- feed parsing -----------------------------------------------------------


def build_feed_url(template: str, **params: str) -> str:
    """Fill a feed URL template, e.g. ``...search?q={query}+when:{window}``."""
    return template.format(**{k: quote_plus(str(v)) for k, v in params.items()})


def _text(el: ET.Element | None) -> str:
    return (el.text or "").strip() if el is not None else ""


def _parse_date(value: str) -> datetime:
    if not value:
        raise ValueError("missing publication date")
    try:
        ts = parsedate_to_datetime(value)
    except (TypeError, ValueError):
        ts = None
    if ts is None:
        return parse_utc(value)
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def _item_image(item: ET.Element) -> str | None:
    for tag in (f"{{{MEDIA_NS}}}content", f"{{{MEDIA_NS}}}thumbnail"):
        el = item.find(tag)
        if el is not None and el.get("url"):
            return el.get("url")
    enc = item.find("enclosure")
    if enc is not None and (enc.get("type") or "").startswith("image/") and enc.get("url"):
        return enc.get("url")
    return None


def _rss_item(item: ET.Element) -> FeedItem:
    title = _text(item.find("title"))
    link = _text(item.find("link"))
    if not title:
        raise ValueError("missing title")
    if not is_absolute_url(link):
        raise ValueError(f"link is not an absolute URL: {link!r}")
    source = item.find("source")
    return FeedItem(
        title=title,
        aggregator_link=link,
        published_utc=_parse_date(_text(item.find("pubDate"))),
        source_name=_text(source),
        source_url=source.get("url") if source is not None else None,
        image_url=_item_image(item),
    )


def _atom_entry(entry: ET.Element) -> FeedItem:
    ns = {"a": ATOM_NS}
    title = _text(entry.find("a:title", ns))
    link_el = entry.find("a:link[@rel='alternate']", ns)
    if link_el is None:
        link_el = entry.find("a:link", ns)
    link = (link_el.get("href") or "").strip() if link_el is not None else ""
    if not title:
        raise ValueError("missing title")
    if not is_absolute_url(link):
        raise ValueError(f"link is not an absolute URL: {link!r}")
    stamp = _text(entry.find("a:published", ns)) or _text(entry.find("a:updated", ns))
    return FeedItem(
        title=title,
        aggregator_link=link,
        published_utc=_parse_date(stamp),
        source_name=_text(entry.find("a:source/a:title", ns)) or _text(entry.find("a:author/a:name", ns)),
    )


def parse_feed(xml: bytes) -> list[FeedItem]:
    """Parse RSS 2.0 or Atom bytes into feed items.

    Items that lack a title, an absolute link or a readable date are skipped
    with a warning. An empty document yields no items.

    Raises:
        FeedUnparseable: if the document is not XML or not a feed.
    """
    if not xml.strip():
        return []
    try:
        root = ET.fromstring(xml)
    except ET.ParseError as exc:
        raise FeedUnparseable(f"feed is not well-formed XML: {exc}") from exc

    if root.tag == "rss":
        channel = root.find("channel")
        nodes, convert = (channel.findall("item") if channel is not None else []), _rss_item
    elif root.tag == f"{{{ATOM_NS}}}feed":
        nodes, convert = root.findall(f"{{{ATOM_NS}}}entry"), _atom_entry
    else:
        raise FeedUnparseable(f"unexpected document root <{root.tag}>")

    items: list[FeedItem] = []
    for pos, node in enumerate(nodes):
        try:
            items.append(convert(node))
        except ValueError as exc:
            logger.warning("skipping feed entry %d: %s", pos, exc)
    return items


# --- transport --------------------------------------------------------------


@dataclass
class Response:
    url: str
    status: int
    headers: Mapping[str, str] = field(default_factory=dict)
    body: bytes = b""

    def header(self, name: str) -> str | None:
        lname = name.lower()
        for k, v in self.headers.items():
            if k.lower() == lname:
                return v
        return None


class Transport(Protocol):
    def get(self, url: str) -> Response: ...


class HostThrottle:
    """Enforces a minimum interval between requests to the same host."""

    def __init__(
        self,
        min_interval: float = DEFAULT_HOST_DELAY,
        clock: Callable[[], float] = time.monotonic,
        sleep: Callable[[float], None] = time.sleep,
    ) -> None:
        self.min_interval = min_interval
        self._clock = clock
        self._sleep = sleep
        self._guard = threading.Lock()
        self._locks: dict[str, threading.Lock] = {}
        self._last: dict[str, float] = {}

    def _host_lock(self, host: str) -> threading.Lock:
        with self._guard:
            return self._locks.setdefault(host, threading.Lock())

    def run(self, url: str, fn: Callable[[], Response]) -> Response:
        host = urlsplit(url).netloc.lower()
        with self._host_lock(host):
            last = self._last.get(host)
            if last is not None:
                wait = self.min_interval - (self._clock() - last)
                if wait > 0:
                    self._sleep(wait)
            try:
                return fn()
            finally:
                self._last[host] = self._clock()


class HttpTransport:
    """``requests``-backed transport. Never follows redirects itself."""

    def __init__(
        self,
        session=None,
        timeout: float = 15.0,
        user_agent: str = USER_AGENT,
        throttle: HostThrottle | None = None,
        max_bytes: int = 5_000_000,
    ) -> None:
        import requests

        self._requests = requests
        self.session = session or requests.Session()
        self.session.headers.setdefault("User-Agent", user_agent)
        self.session.headers["User-Agent"] = user_agent
        self.timeout = timeout
        self.throttle = throttle or HostThrottle()
        self.max_bytes = max_bytes

    def _fetch(self, url: str) -> Response:
        try:
            with self.session.get(url, allow_redirects=False, timeout=self.timeout, stream=True) as resp:
                body = b""
                if resp.status_code not in REDIRECT_CODES:
                    body = resp.raw.read(self.max_bytes, decode_content=True)
                return Response(url=url, status=resp.status_code, headers=dict(resp.headers), body=body)
        except self._requests.RequestException as exc:
            raise NetworkError(f"GET {url} failed: {exc}") from exc

    def get(self, url: str) -> Response:
        return self.throttle.run(url, lambda: self._fetch(url))


class FixtureTransport:
    """Serves canned responses from a directory with a ``manifest.json``.

    Manifest entries map a URL to ``{"status": 200, "file": "pages/x.html"}``
    or ``{"status": 301, "location": "https://..."}``. Unknown URLs get 404.
    """

    def __init__(self, root: str | Path) -> None:
        self.root = Path(root)
        self.routes: dict[str, dict] = json.loads((self.root / "manifest.json").read_text(encoding="utf-8"))

    def get(self, url: str) -> Response:
        route = self.routes.get(url)
        if route is None:
            return Response(url=url, status=404)
        headers = {}
        if "location" in route:
            headers["Location"] = route["location"]
        body = (self.root / route["file"]).read_bytes() if "file" in route else b""
        headers["Content-Type"] = route.get("content_type", "text/html; charset=utf-8")
        return Response(url=url, status=int(route.get("status", 200)), headers=headers, body=body)


# --- redirects and fetching ---------------------------------------------


def resolve_redirects(link: str, transport: Transport, max_hops: int = DEFAULT_MAX_HOPS) -> str:
    """Follow HTTP redirects from ``link``; at most ``max_hops`` are followed.

    Raises:
        TooManyRedirects: if the chain is longer than ``max_hops``.
        NetworkError: on transport failure.
    """
    if max_hops < 1:
        raise ValueError("max_hops must be >= 1")
    url = link
    for hop in range(max_hops + 1):
        resp = transport.get(url)
        location = resp.header("Location")
        if resp.status not in REDIRECT_CODES or not location:
            return url
        if hop == max_hops:
            break
        url = urljoin(url, location)
    raise TooManyRedirects(f"more than {max_hops} redirects starting at {link}")


_SKIP_TAGS = frozenset(
    {"script", "style", "noscript", "template", "svg", "nav", "header", "footer", "aside", "form", "iframe", "button", "select", "head"}
)
# Headlines duplicate the feed title; they still end a paragraph but add no body text.
_HEADING_TAGS = frozenset({"h1", "h2", "h3", "h4", "h5", "h6"})
_SKIP_TAGS |= _HEADING_TAGS
_CONTAINER_TAGS = frozenset({"body", "div", "article", "section", "main", "td", "table", "ul", "ol", "blockquote", "figure"})
_PARAGRAPH_TAGS = frozenset({"p", "h1", "h2", "h3", "h4", "h5", "h6", "li", "pre", "figcaption", "dd", "dt"})
_VOID_TAGS = frozenset({"br", "hr", "img", "meta", "link", "input", "source", "area", "base", "col", "embed", "wbr", "track", "param"})


class _PageParser(HTMLParser):
    """Collects paragraphs grouped by enclosing container, plus page metadata."""

    def __init__(self) -> None:
        super().__init__(convert_charrefs=True)
        self.stack: list[tuple[str, int]] = []
        self.next_id = 0
        self.skip_depth = 0
        self.buffer: list[str] = []
        self.paragraphs: list[tuple[int, str]] = []
        self.meta: dict[str, str] = {}
        self.in_title = False
        self.title_parts: list[str] = []

    def _container(self) -> int:
        for tag, ident in reversed(self.stack):
            if tag in _CONTAINER_TAGS:
                return ident
        return -1

    def _flush(self) -> None:
        text = " ".join(" ".join(self.buffer).split())
        self.buffer = []
        if text:
            self.paragraphs.append((self._container(), text))

    def handle_starttag(self, tag, attrs):
        if tag == "meta":
            a = dict(attrs)
            key = (a.get("property") or a.get("name") or "").lower()
            if key and a.get("content") and key not in self.meta:
                self.meta[key] = a["content"].strip()
            return
        if tag == "title":
            self.in_title = True
        if tag in _VOID_TAGS:
            if tag in ("br", "hr") and not self.skip_depth:
                self.buffer.append(" ")
            return
        if tag in _PARAGRAPH_TAGS or tag in _CONTAINER_TAGS:
            self._flush()
        if tag == "p" and self.stack and self.stack[-1][0] == "p":
            self.stack.pop()
        self.stack.append((tag, self.next_id))
        self.next_id += 1
        if tag in _SKIP_TAGS:
            self.skip_depth += 1

    def handle_endtag(self, tag):
        if tag == "title":
            self.in_title = False
        if not any(t == tag for t, _ in self.stack):
            return
        if tag in _PARAGRAPH_TAGS or tag in _CONTAINER_TAGS:
            self._flush()
        while self.stack:
            t, _ = self.stack.pop()
            if t in _SKIP_TAGS:
                self.skip_depth -= 1
            if t == tag:
                break

    def handle_data(self, data):
        if self.in_title:
            self.title_parts.append(data)
            return
        if not self.skip_depth:
            self.buffer.append(data)

    def close(self):
        super().close()
        self._flush()


def extract_page(html: str) -> tuple[str, dict[str, str], str]:
    """Return ``(body_text, meta, title)`` for an HTML page.

    The body is the largest run of consecutive paragraphs that share one
    enclosing container, after dropping scripts, styles and page chrome.
    """
    parser = _PageParser()
    parser.feed(html)
    parser.close()
    best: list[str] = []
    best_len = 0
    run: list[str] = []
    run_len, run_owner = 0, None
    for owner, text in parser.paragraphs:
        if owner != run_owner:
            run, run_len, run_owner = [], 0, owner
        run.append(text)
        run_len += len(text)
        if run_len > best_len:
            best, best_len = list(run), run_len
    title = " ".join(" ".join(parser.title_parts).split())
    return "\n\n".join(best), parser.meta, title


def _decode(resp: Response) -> str:
    ctype = resp.header("Content-Type") or ""
    charset = "utf-8"
    if "charset=" in ctype:
        charset = ctype.split("charset=", 1)[1].split(";")[0].strip() or "utf-8"
    try:
        return resp.body.decode(charset, errors="replace")
    except LookupError:
        return resp.body.decode("utf-8", errors="replace")


def fetch_article(
    url: str,
    transport: Transport,
    item: FeedItem | None = None,
    clock: Callable[[], datetime] = lambda: datetime.now(timezone.utc),
) -> RawArticle:
    """Fetch ``url`` and reduce it to plain text plus metadata.

    Raises:
        NetworkError: on transport failure or a non-2xx answer.
        EmptyBody: if no article text could be found.
    """
    resp = transport.get(url)
    if not 200 <= resp.status < 300:
        raise NetworkError(f"GET {url} answered {resp.status}", retryable=resp.status >= 500 or resp.status == 429)
    body, meta, page_title = extract_page(_decode(resp))
    if not body:
        raise EmptyBody(f"no article text at {url}")
    fetched = clock()
    if item is not None:
        published = item.published_utc
    elif meta.get("article:published_time"):
        try:
            published = parse_utc(meta["article:published_time"])
        except ValueError:
            published = fetched
    else:
        published = fetched
    publisher = (item.source_name if item else "") or meta.get("og:site_name") or urlsplit(url).netloc
    title = (item.title if item else "") or meta.get("og:title") or page_title
    return RawArticle(
        id=article_id(url),
        final_url=url,
        publisher=publisher,
        title=title,
        published_utc=published,
        body_text=body,
        fetched_utc=fetched,
        aggregator_link=item.aggregator_link if item else None,
        image_url=item.image_url if item else None,
    )


# --- dedupe ------------------------------------------------------------------


class SeenSet:
    """Thread-safe set of article ids, optionally persisted one id per line."""

    def __init__(self, ids: Iterable[str] = (), path: str | Path | None = None) -> None:
        self._lock = threading.Lock()
        self._ids: set[str] = set(ids)
        self.path = Path(path) if path else None
        if self.path and self.path.exists():
            self._ids.update(line.strip() for line in self.path.read_text().splitlines() if line.strip())

    def __contains__(self, item: object) -> bool:
        with self._lock:
            return item in self._ids

    def __len__(self) -> int:
        return len(self._ids)

    def add_new(self, ident: str) -> bool:
        """Add ``ident``; return False if it was already present."""
        with self._lock:
            if ident in self._ids:
                return False
            self._ids.add(ident)
            if self.path:
                with open(self.path, "a", encoding="utf-8") as fh:
                    fh.write(ident + "\n")
            return True


def dedupe(batch: Iterable[RawArticle], seen: SeenSet | set[str]) -> list[RawArticle]:
    """Drop articles whose id was seen before (or earlier in ``batch``)."""
    out = []
    for art in batch:
        if isinstance(seen, SeenSet):
            fresh = seen.add_new(art.id)
        else:
            fresh = art.id not in seen
            seen.add(art.id)
        if fresh:
            out.append(art)
    return out


def collect(
    items: Iterable[FeedItem],
    transport: Transport,
    max_hops: int = DEFAULT_MAX_HOPS,
    workers: int = 4,
    clock: Callable[[], datetime] = lambda: datetime.now(timezone.utc),
    seen: SeenSet | set[str] | None = None,
) -> list[RawArticle]:
    """Resolve and fetch feed items concurrently; failures are logged and skipped.

    Items whose resolved URL is already in ``seen`` are not fetched (``seen``
    is only read here; use :func:`dedupe` to update it). Output follows input
    order. The transport's throttle keeps requests to a single host serial.
    """

    def work(item: FeedItem) -> RawArticle | None:
        try:
            final = resolve_redirects(item.aggregator_link, transport, max_hops)
            if seen is not None and article_id(final) in seen:
                return None
            return fetch_article(final, transport, item=item, clock=clock)
        except (NetworkError, EmptyBody) as exc:
            logger.warning("skipping %s: %s", item.aggregator_link, exc)
            return None

    items = list(items)
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        results = list(pool.map(work, items))
    return [r for r in results if r is not None]
