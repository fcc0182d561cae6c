"""Compare system tickers with publisher-provided tickers over a labeled dataset."""

from __future__ import annotations

import ast
import csv
import io
import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

# Common stock and ADR common shares; unclassified tickers count as common stock.
KEPT_CLASSES = frozenset({"CS", "ADRC"})


class ParseError(ValueError):
    def __init__(self, message: str, row: int | None = None) -> None:
        self.row = row
        super().__init__(f"row {row}: {message}" if row is not None else message)


class EmptyDataset(ValueError):
    pass


@dataclass(frozen=True)
class LabeledArticle:
    id: str
    system_tickers: frozenset[str]
    provider_tickers: frozenset[str] | None = None
    provider: str = ""


def score_article(a: LabeledArticle) -> tuple[int, int]:
    """``(missing, additional)``: provider-only and system-only ticker counts."""
    if a.provider_tickers is None:
        raise ValueError(f"article {a.id} has no provider labels")
    return len(a.provider_tickers - a.system_tickers), len(a.system_tickers - a.provider_tickers)


def _histogram(values: Iterable[int]) -> dict[int, int]:
    counts = Counter(values)
    if not counts:
        return {}
    return {k: counts.get(k, 0) for k in range(max(counts) + 1)}


def _pct(part: int, whole: int) -> float:
    return 100.0 * part / whole if whole else 0.0


@dataclass
class ProviderStats:
    provider: str
    n_articles: int
    n_labeled: int
    mean_tickers: float
    pct_no_missing: float | None
    pct_no_additional: float | None


@dataclass
class EvalReport:
    n_articles: int
    n_labeled: int
    tickers_per_article: dict[int, int]
    missing_histogram: dict[int, int] = field(default_factory=dict)
    additional_histogram: dict[int, int] = field(default_factory=dict)
    pct_no_missing: float | None = None
    pct_no_additional: float | None = None
    pct_any_additional: float | None = None
    per_provider: list[ProviderStats] = field(default_factory=list)

    @property
    def pct_one_ticker(self) -> float:
        return _pct(self.tickers_per_article.get(1, 0), self.n_articles)

    @property
    def pct_at_most_four(self) -> float:
        return _pct(sum(v for k, v in self.tickers_per_article.items() if k <= 4), self.n_articles)


def build_report(rows: Sequence[LabeledArticle]) -> EvalReport:
    """Histograms and shares over ``rows``.

    Missing/additional figures cover the rows that carry provider labels.

    Raises:
        EmptyDataset: if ``rows`` is empty.
    """
    if not rows:
        raise EmptyDataset("no articles to evaluate")
    labeled = [r for r in rows if r.provider_tickers is not None]
    scores = [score_article(r) for r in labeled]
    report = EvalReport(
        n_articles=len(rows),
        n_labeled=len(labeled),
        tickers_per_article=_histogram(len(r.system_tickers) for r in rows),
    )
    if labeled:
        report.missing_histogram = _histogram(m for m, _ in scores)
        report.additional_histogram = _histogram(a for _, a in scores)
        report.pct_no_missing = _pct(report.missing_histogram.get(0, 0), len(labeled))
        report.pct_no_additional = _pct(report.additional_histogram.get(0, 0), len(labeled))
        report.pct_any_additional = 100.0 - report.pct_no_additional

    groups: dict[str, list[LabeledArticle]] = {}
    for r in rows:
        groups.setdefault(r.provider, []).append(r)
    for name in sorted(groups):
        g = groups[name]
        gl = [score_article(r) for r in g if r.provider_tickers is not None]
        report.per_provider.append(
            ProviderStats(
                provider=name,
                n_articles=len(g),
                n_labeled=len(gl),
                mean_tickers=sum(len(r.system_tickers) for r in g) / len(g),
                pct_no_missing=_pct(sum(m == 0 for m, _ in gl), len(gl)) if gl else None,
                pct_no_additional=_pct(sum(a == 0 for _, a in gl), len(gl)) if gl else None,
            )
        )
    return report


# --- loading -----------------------------------------------------------------


def _ticker_set(value, row: int, column: str) -> frozenset[str]:
    if value is None:
        return frozenset()
    if isinstance(value, str):
        text = value.strip()
        if not text:
            return frozenset()
        if text[0] in "[(":
            try:
                value = json.loads(text)
            except ValueError:
                try:
                    value = ast.literal_eval(text)
                except (ValueError, SyntaxError):
                    raise ParseError(f"cannot read {column} {text!r}", row) from None
        else:
            value = [t for part in text.split(";") for t in part.split(",")]
    if not isinstance(value, (list, tuple, set, frozenset)):
        raise ParseError(f"{column} must be a list", row)
    out = set()
    for t in value:
        if not isinstance(t, str):
            raise ParseError(f"{column} holds a non-string ticker {t!r}", row)
        if t.strip():
            out.add(t.strip().upper())
    return frozenset(out)


def _classes(value, row: int) -> dict[str, str]:
    if not value:
        return {}
    if isinstance(value, str):
        value = value.strip()
        if value.startswith("{"):
            value = json.loads(value)
        else:
            pairs = [p.split(":", 1) for p in value.split(";") if p.strip()]
            if any(len(p) != 2 for p in pairs):
                raise ParseError(f"cannot read ticker_classes {value!r}", row)
            value = dict(pairs)
    if not isinstance(value, dict):
        raise ParseError("ticker_classes must map ticker to class", row)
    return {str(k).strip().upper(): str(v).strip().upper() for k, v in value.items()}


def _row_to_article(data: Mapping, row: int, labels: Mapping[str, Mapping] | None) -> LabeledArticle:
    if not isinstance(data, Mapping):
        raise ParseError("expected an object", row)
    ident = data.get("id")
    if not ident:
        raise ParseError("missing id", row)
    provider = data.get("provider")
    if provider is None and isinstance(data.get("publisher"), Mapping):
        provider = data["publisher"].get("name")
    system_col = "system_tickers" if "system_tickers" in data else "tickers"
    system = _ticker_set(data.get(system_col), row, system_col)
    provider_tickers = None
    if data.get("provider_tickers") is not None:
        provider_tickers = _ticker_set(data["provider_tickers"], row, "provider_tickers")
    if labels is not None:
        label = labels.get(str(ident)) or labels.get(str(data.get("article_url", "")))
        if label is not None:
            provider_tickers = _ticker_set(label.get("tickers"), row, "labels.tickers")
            provider = label.get("provider", provider)
    classes = _classes(data.get("ticker_classes"), row)

    def keep(tickers: frozenset[str]) -> frozenset[str]:
        return frozenset(t for t in tickers if classes.get(t, "CS") in KEPT_CLASSES)

    return LabeledArticle(
        id=str(ident),
        system_tickers=keep(system),
        provider_tickers=keep(provider_tickers) if provider_tickers is not None else None,
        provider=str(provider or ""),
    )


def load_labels(path: str | Path) -> dict[str, Mapping]:
    """Publisher labels keyed by article id or URL: ``{key: {"provider", "tickers"}}``."""
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(data, dict):
        raise ParseError("labels file must hold an object")
    return data


def load_labeled_dataset(
    path: str | Path,
    labels: Mapping[str, Mapping] | None = None,
) -> list[LabeledArticle]:
    """Read a JSON-lines or CSV dataset, dropping ETF/crypto tickers.

    Rows may use ``system_tickers`` (or ``tickers``) and optional
    ``provider_tickers`` and ``ticker_classes``. Stored insight records are
    accepted too, with labels joined from ``labels``.

    Raises:
        ParseError: with the 1-based row number of the first bad row.
    """
    path = Path(path)
    text = path.read_text(encoding="utf-8-sig")
    rows: list[LabeledArticle] = []
    if path.suffix.lower() == ".csv":
        reader = csv.DictReader(io.StringIO(text))
        for n, data in enumerate(reader, 1):
            rows.append(_row_to_article(data, n, labels))
        return rows
    for n, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            data = json.loads(line)
        except ValueError as exc:
            raise ParseError(f"invalid JSON: {exc}", n) from None
        rows.append(_row_to_article(data, n, labels))
    return rows


# --- output ------------------------------------------------------------------


def _fmt(x: float | None) -> str:
    return "n/a" if x is None else f"{x:.1f}"


def _hist_lines(title: str, hist: Mapping[int, int], total: int) -> list[str]:
    lines = [title, f"{'count':>6} {'articles':>9} {'percent':>8}"]
    lines += [f"{k:>6} {v:>9} {_fmt(_pct(v, total)):>8}" for k, v in sorted(hist.items())]
    return lines


def render_text(report: EvalReport) -> str:
    out = [f"articles: {report.n_articles}", f"labeled articles: {report.n_labeled}", ""]
    out += _hist_lines("tickers per article", report.tickers_per_article, report.n_articles)
    out += [
        f"exactly one ticker: {_fmt(report.pct_one_ticker)}%",
        f"at most four tickers: {_fmt(report.pct_at_most_four)}%",
        "",
    ]
    if report.n_labeled:
        out += _hist_lines("missing tickers", report.missing_histogram, report.n_labeled)
        out += [f"no missing tickers: {_fmt(report.pct_no_missing)}%", ""]
        out += _hist_lines("additional tickers", report.additional_histogram, report.n_labeled)
        out += [
            f"no additional tickers: {_fmt(report.pct_no_additional)}%",
            f"any additional tickers: {_fmt(report.pct_any_additional)}%",
            "",
        ]
    out.append("per provider")
    out.append(f"{'provider':<24} {'articles':>8} {'labeled':>8} {'mean_tickers':>12} {'no_missing%':>11} {'no_additional%':>14}")
    for p in report.per_provider:
        out.append(
            f"{(p.provider or '-'):<24} {p.n_articles:>8} {p.n_labeled:>8} {p.mean_tickers:>12.2f} "
            f"{_fmt(p.pct_no_missing):>11} {_fmt(p.pct_no_additional):>14}"
        )
    return "\n".join(out) + "\n"


def _write_hist(path: Path, hist: Mapping[int, int], total: int) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["count", "articles", "percent"])
        for k, v in sorted(hist.items()):
            w.writerow([k, v, _fmt(_pct(v, total))])


def write_report(report: EvalReport, out_dir: str | Path) -> list[Path]:
    """Write ``report.txt`` plus one CSV per histogram and a per-provider CSV."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = [out / "report.txt", out / "tickers_per_article.csv"]
    written[0].write_text(render_text(report), encoding="utf-8")
    _write_hist(written[1], report.tickers_per_article, report.n_articles)
    if report.n_labeled:
        for name, hist in (("missing_histogram.csv", report.missing_histogram), ("additional_histogram.csv", report.additional_histogram)):
            _write_hist(out / name, hist, report.n_labeled)
            written.append(out / name)
    path = out / "per_provider.csv"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["provider", "articles", "labeled", "mean_tickers", "pct_no_missing", "pct_no_additional"])
        for p in report.per_provider:
            w.writerow([p.provider, p.n_articles, p.n_labeled, f"{p.mean_tickers:.2f}", _fmt(p.pct_no_missing), _fmt(p.pct_no_additional)])
    written.append(path)
    return written
