"""Map companies in financial news to tickers, attach per-company sentiment, and serve the results."""

__version__ = "0.1.0"

from .matcher import EmptyReference, MatchCandidate, MatchResult, clean_name, levenshtein, longest_common_substring, map_company

__all__ = [
    "EmptyReference",
    "MatchCandidate",
    "MatchResult",
    "__version__",
    "clean_name",
    "levenshtein",
    "longest_common_substring",
    "map_company",
]
