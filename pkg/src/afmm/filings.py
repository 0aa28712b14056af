"""Keyword-based legacy-modernisation exposure scores from filing text.

A firm's score is ``sum_k w_k * f_k`` where ``f_k`` counts whole-token matches
of keyword phrase ``k`` across the firm's documents.  Text is lowercased and
split into ``[a-z0-9]+`` tokens, so ``z/OS`` becomes the two-token phrase
``z os`` and punctuation never blocks a match.
"""

from __future__ import annotations

import csv
import re
from collections import Counter
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from afmm.errors import ContractError, DataError

TOKEN = re.compile(r"[a-z0-9]+")
MODES = ("raw", "per10k")


@dataclass(frozen=True)
class Keyword:
    phrase: str
    weight: float = 1.0
    category: str = ""

    @property
    def tokens(self) -> tuple[str, ...]:
        return tuple(tokenize(self.phrase))


def tokenize(text: str) -> list[str]:
    return TOKEN.findall(text.lower())


def count_phrase(tokens: Sequence[str], phrase: Sequence[str]) -> int:
    """Non-overlapping occurrences of ``phrase`` as a contiguous token run."""
    m = len(phrase)
    if m == 0:
        return 0
    if m == 1:
        return sum(1 for t in tokens if t == phrase[0])
    n, i, hits = len(tokens), 0, 0
    while i <= n - m:
        if tuple(tokens[i:i + m]) == tuple(phrase):
            hits += 1
            i += m
        else:
            i += 1
    return hits


def document_counts(text: str, keywords: Sequence[Keyword]) -> tuple[Counter, int]:
    tokens = tokenize(text)
    counts = Counter()
    for kw in keywords:
        counts[kw.phrase] = count_phrase(tokens, kw.tokens)
    return counts, len(tokens)


def score_documents(documents: Iterable[str], keywords: Sequence[Keyword], mode: str = "raw") -> float:
    if not keywords:
        raise ContractError("keyword list is empty")
    if mode not in MODES:
        raise ContractError(f"mode must be one of {MODES}, got {mode!r}")
    for kw in keywords:
        if kw.weight < 0:
            raise ContractError(f"keyword {kw.phrase!r} has negative weight")
        if not kw.tokens:
            raise ContractError(f"keyword {kw.phrase!r} has no tokens")
    total = 0.0
    for text in documents:
        counts, n_tokens = document_counts(text, keywords)
        doc = sum(kw.weight * counts[kw.phrase] for kw in keywords)
        if mode == "per10k":
            doc = doc / (n_tokens / 10_000) if n_tokens else 0.0
        total += doc
    return total


def score_filings(documents: Mapping[str, Sequence[str]], keywords: Sequence[Keyword],
                  mode: str = "raw") -> dict[str, float]:
    """Exposure score per firm from ``{ticker: [document text, ...]}``."""
    if not keywords:
        raise ContractError("keyword list is empty")
    return {t: score_documents(docs, keywords, mode) for t, docs in sorted(documents.items())}


def load_keywords(path=None) -> list[Keyword]:
    """Read ``phrase,weight,category`` rows; the packaged default list when ``path`` is None."""
    if path is None:
        text = resources.files("afmm.data").joinpath("keywords.csv").read_text()
        source = "keywords.csv"
    else:
        p = Path(path)
        if not p.is_file():
            raise DataError(f"{p}: file not found")
        text = p.read_text()
        source = str(p)
    reader = csv.reader(text.splitlines())
    header = next(reader, None)
    if header is None or [h.strip() for h in header] != ["phrase", "weight", "category"]:
        raise DataError(f"{source}:1: expected header phrase,weight,category")
    out = []
    for row in reader:
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 3:
            raise DataError(f"{source}:{reader.line_num}: expected 3 fields, got {len(row)}")
        phrase, weight, category = (c.strip() for c in row)
        try:
            w = float(weight)
        except ValueError:
            raise DataError(f"{source}:{reader.line_num}: non-numeric weight {weight!r}") from None
        if w < 0:
            raise DataError(f"{source}:{reader.line_num}: negative weight")
        out.append(Keyword(phrase, w, category))
    if not out:
        raise ContractError(f"{source}: keyword list is empty")
    return out


def load_filings(directory) -> dict[str, list[str]]:
    """Group ``{TICKER}_{FORM}_{YYYY-MM-DD}.txt`` files by ticker, in filename order."""
    d = Path(directory)
    if not d.is_dir():
        raise DataError(f"{d}: not a directory")
    docs: dict[str, list[str]] = {}
    for f in sorted(d.glob("*.txt")):
        parts = f.stem.rsplit("_", 2)
        if len(parts) != 3 or not parts[0]:
            raise DataError(f"{f.name}: expected TICKER_FORM_YYYY-MM-DD.txt")
        docs.setdefault(parts[0], []).append(f.read_text(errors="replace"))
    return docs


def write_exposure(scores: Mapping[str, float], path, mode: str = "raw") -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["ticker", "score", "mode"])
        for ticker in sorted(scores):
            w.writerow([ticker, repr(float(scores[ticker])), mode])
