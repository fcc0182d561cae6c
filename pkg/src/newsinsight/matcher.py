"""Company name to ticker matching.

Names are normalized by lowercasing and dropping corporate filler ("Inc.",
"Corp.", "Class A", ...). Every reference name is then scored against the
query with three metrics: Levenshtein distance, longest common substring
length and the number of shared words. Candidates are narrowed to those with
the maximal common substring and ranked by shared words (descending), edit
distance (ascending) and ticker (ascending).

The metric implementations are tuned for the one-query, many-names access
pattern: the query side is preprocessed once (a bit-vector table for the
edit distance, a suffix automaton for the common substring) and every
reference name is then scanned in time linear in its length.
"""

from __future__ import annotations

import unicodedata
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

__all__ = [
    "DEFAULT_JUNK_WORDS",
    "CleanName",
    "EmptyReference",
    "MatchCandidate",
    "MatchResult",
    "NameIndex",
    "clean_name",
    "count_common_words",
    "levenshtein",
    "load_junk_words",
    "longest_common_substring",
    "map_company",
    "ranking_key",
]

# Multi-word entries are removed as phrases before single tokens.
DEFAULT_JUNK_WORDS: frozenset[str] = frozenset(
    {
        "class a",
        "class b",
        "class c",
        "inc",
        "corp",
        "corporation",
        "co",
        "ltd",
        "plc",
        "llc",
        "holdings",
        "group",
        "the",
        "class",
        "a",
        "b",
        "c",
        "company",
        "incorporated",
        "sa",
        "ag",
        "nv",
    }
)

RUNNERS_UP = 5

_SEPARATORS = str.maketrans({ch: " " for ch in ".,&'-/"})


class EmptyReference(ValueError):
    """Raised when matching against an empty reference list."""


@dataclass(frozen=True)
class CleanName:
    original: str
    cleaned: str

    @property
    def words(self) -> frozenset[str]:
        return frozenset(self.cleaned.split())


@dataclass(frozen=True)
class MatchCandidate:
    name: str
    ticker: str
    lev_clean: int
    lcs_clean: int
    common_words: int


@dataclass(frozen=True)
class MatchResult:
    best: MatchCandidate
    ranked_runners_up: tuple[MatchCandidate, ...] = ()
    via_override: bool = False

    @property
    def ticker(self) -> str:
        return self.best.ticker


def _strip_boundary(token: str) -> str:
    start, end = 0, len(token)
    while start < end and unicodedata.category(token[start])[0] in "PS":
        start += 1
    while end > start and unicodedata.category(token[end - 1])[0] in "PS":
        end -= 1
    return token[start:end]


def _tokenize(text: str) -> list[str]:
    tokens = (_strip_boundary(t) for t in text.lower().translate(_SEPARATORS).split())
    return [t for t in tokens if t]


def _split_junk(junk_words: Iterable[str]) -> tuple[frozenset[str], tuple[tuple[str, ...], ...]]:
    singles: set[str] = set()
    phrases: set[tuple[str, ...]] = set()
    for entry in junk_words:
        parts = tuple(_tokenize(entry))
        if len(parts) == 1:
            singles.add(parts[0])
        elif parts:
            phrases.add(parts)
    # longest phrases first so "class a shares" wins over "class a"
    ordered = tuple(sorted(phrases, key=lambda p: (-len(p), p)))
    return frozenset(singles), ordered


def _drop_phrases(tokens: list[str], phrases: Sequence[tuple[str, ...]]) -> list[str]:
    out: list[str] = []
    i = 0
    while i < len(tokens):
        for phrase in phrases:
            if tuple(tokens[i : i + len(phrase)]) == phrase:
                i += len(phrase)
                break
        else:
            out.append(tokens[i])
            i += 1
    return out


def clean_name(raw: str, junk_words: Iterable[str] = DEFAULT_JUNK_WORDS) -> CleanName:
    """Lowercase ``raw``, split it into words and drop junk words and phrases.

    Removal repeats until nothing changes, because dropping a single token can
    bring the parts of a junk phrase next to each other. That makes the
    function idempotent.

    >>> clean_name("Alphabet Inc. Class A").cleaned
    'alphabet'
    """
    singles, phrases = _split_junk(junk_words)
    tokens = _tokenize(raw)
    while True:
        reduced = [t for t in _drop_phrases(tokens, phrases) if t not in singles]
        if reduced == tokens:
            break
        tokens = reduced
    return CleanName(original=raw, cleaned=" ".join(tokens))


def load_junk_words(path: str | Path) -> frozenset[str]:
    """Read a junk-word file: one token or quoted phrase per line, ``#`` comments."""
    words: set[str] = set()
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if len(line) >= 2 and line[0] == line[-1] and line[0] in "\"'":
            line = line[1:-1]
        words.add(" ".join(line.lower().split()))
    return frozenset(words)


# --- string metrics --------------------------------------------------------


class _EditDistance:
    """Bit-parallel Levenshtein distance from a fixed pattern (Myers / Hyyro)."""

    __slots__ = ("length", "peq", "mask", "high")

    def __init__(self, pattern: str) -> None:
        self.length = len(pattern)
        peq: dict[str, int] = {}
        for i, ch in enumerate(pattern):
            peq[ch] = peq.get(ch, 0) | (1 << i)
        self.peq = peq
        self.mask = (1 << self.length) - 1
        self.high = 1 << (self.length - 1) if self.length else 0

    def to(self, text: str) -> int:
        m = self.length
        if m == 0:
            return len(text)
        peq, mask, high = self.peq, self.mask, self.high
        pv, mv, score = mask, 0, m
        for ch in text:
            eq = peq.get(ch, 0)
            xv = eq | mv
            xh = ((((eq & pv) + pv) & mask) ^ pv) | eq
            ph = mv | (~(xh | pv) & mask)
            mh = pv & xh
            if ph & high:
                score += 1
            elif mh & high:
                score -= 1
            ph = ((ph << 1) | 1) & mask
            mh = (mh << 1) & mask
            pv = mh | (~(xv | ph) & mask)
            mv = ph & xv
        return score


class _SuffixAutomaton:
    """Suffix automaton of a fixed string; finds longest common substrings."""

    __slots__ = ("next", "link", "depth")

    def __init__(self, text: str) -> None:
        nxt: list[dict[str, int]] = [{}]
        link = [-1]
        depth = [0]
        last = 0
        for ch in text:
            cur = len(nxt)
            nxt.append({})
            link.append(0)
            depth.append(depth[last] + 1)
            p = last
            while p != -1 and ch not in nxt[p]:
                nxt[p][ch] = cur
                p = link[p]
            if p != -1:
                q = nxt[p][ch]
                if depth[p] + 1 == depth[q]:
                    link[cur] = q
                else:
                    clone = len(nxt)
                    nxt.append(dict(nxt[q]))
                    link.append(link[q])
                    depth.append(depth[p] + 1)
                    while p != -1 and nxt[p].get(ch) == q:
                        nxt[p][ch] = clone
                        p = link[p]
                    link[q] = clone
                    link[cur] = clone
            last = cur
        self.next, self.link, self.depth = nxt, link, depth

    def longest_common(self, other: str) -> int:
        nxt, link, depth = self.next, self.link, self.depth
        state = run = best = 0
        for ch in other:
            while state and ch not in nxt[state]:
                state = link[state]
                run = depth[state]
            if ch in nxt[state]:
                state = nxt[state][ch]
                run += 1
                if run > best:
                    best = run
        return best


def levenshtein(a: str, b: str) -> int:
    """Unit-cost edit distance (insertions, deletions, substitutions)."""
    if len(a) < len(b):
        a, b = b, a
    return _EditDistance(b).to(a)


def longest_common_substring(a: str, b: str) -> int:
    """Length in characters of the longest contiguous run shared by ``a`` and ``b``."""
    if not a or not b:
        return 0
    if len(a) < len(b):
        a, b = b, a
    return _SuffixAutomaton(b).longest_common(a)


def count_common_words(a: CleanName | str, b: CleanName | str) -> int:
    """Number of distinct words the two cleaned names share."""
    wa = a.words if isinstance(a, CleanName) else frozenset(a.split())
    wb = b.words if isinstance(b, CleanName) else frozenset(b.split())
    return len(wa & wb)


# --- Algorithm -------------------------------------------------------------


def ranking_key(candidate: MatchCandidate) -> tuple:
    """Sort key among max-LCS survivors. Name is a last resort for duplicate tickers."""
    return (-candidate.common_words, candidate.lev_clean, candidate.ticker, candidate.name)


class NameIndex:
    """Reference names cleaned once, for repeated matching against one reference."""

    def __init__(
        self,
        reference: Iterable[tuple[str, str]],
        junk_words: Iterable[str] = DEFAULT_JUNK_WORDS,
    ) -> None:
        self.junk_words = frozenset(junk_words)
        self.entries: tuple[tuple[str, str, str, frozenset[str]], ...] = tuple(
            (name, ticker, cleaned.cleaned, cleaned.words)
            for name, ticker in reference
            for cleaned in (clean_name(name, self.junk_words),)
        )

    def __len__(self) -> int:
        return len(self.entries)

    def score(self, query: str) -> list[MatchCandidate]:
        q = clean_name(query, self.junk_words)
        dist = _EditDistance(q.cleaned)
        automaton = _SuffixAutomaton(q.cleaned)
        q_words = q.words
        return [
            MatchCandidate(
                name=name,
                ticker=ticker,
                lev_clean=dist.to(cleaned),
                lcs_clean=automaton.longest_common(cleaned),
                common_words=len(q_words & words),
            )
            for name, ticker, cleaned, words in self.entries
        ]

    def match(
        self,
        query: str,
        overrides: Mapping[str, str] | None = None,
        runners_up: int = RUNNERS_UP,
    ) -> MatchResult:
        if not self.entries:
            raise EmptyReference("reference list is empty")
        q = clean_name(query, self.junk_words)
        if overrides and q.cleaned in overrides:
            n_chars, n_words = len(q.cleaned), len(q.words)
            best = MatchCandidate(q.cleaned, overrides[q.cleaned], 0, n_chars, n_words)
            return MatchResult(best=best, via_override=True)

        candidates = self.score(query)
        top_lcs = max(c.lcs_clean for c in candidates)
        survivors = sorted((c for c in candidates if c.lcs_clean == top_lcs), key=ranking_key)
        best = survivors[0]
        if runners_up <= 0:
            return MatchResult(best=best)
        rest = sorted(
            (c for c in candidates if c.lcs_clean != top_lcs),
            key=lambda c: (-c.lcs_clean, *ranking_key(c)),
        )
        ranked = (survivors[1:] + rest)[:runners_up]
        return MatchResult(best=best, ranked_runners_up=tuple(ranked))


def map_company(
    query: str,
    reference: Sequence[tuple[str, str]] | NameIndex,
    junk_words: Iterable[str] = DEFAULT_JUNK_WORDS,
    overrides: Mapping[str, str] | None = None,
) -> MatchResult:
    """Find the best ticker for ``query`` among ``(name, ticker)`` reference pairs.

    ``overrides`` maps cleaned names to tickers and short-circuits scoring.
    Pass a prebuilt :class:`NameIndex` to avoid re-cleaning a large reference
    on every call (its own junk list is used then).

    Raises:
        EmptyReference: if there is nothing to match against.
    """
    index = reference if isinstance(reference, NameIndex) else NameIndex(reference, junk_words)
    return index.match(query, overrides)

