"""Answer normalization and the CEM / token-F1 metrics."""

from __future__ import annotations

import re
import string
from collections import Counter
from typing import Sequence

_ARTICLES = re.compile(r"\b(a|an|the)\b")
_PUNCT = str.maketrans("", "", string.punctuation)


def normalize(text: str) -> list[str]:
    """Lowercase, drop articles and punctuation, split on whitespace."""
    text = text.lower()
    text = _ARTICLES.sub(" ", text)
    text = text.translate(_PUNCT)
    return text.split()


def _contains(haystack: Sequence[str], needle: Sequence[str]) -> bool:
    n = len(needle)
    if n == 0:
        return len(haystack) == 0
    first = needle[0]
    for i in range(len(haystack) - n + 1):
        if haystack[i] == first and list(haystack[i : i + n]) == list(needle):
            return True
    return False


def cem(prediction: str, golds: Sequence[str]) -> bool:
    """Cover exact match: some normalized gold occurs as a contiguous token run.

    A gold that normalizes to nothing only covers an equally empty prediction.
    """
    if not golds:
        raise ValueError("golds must be non-empty")
    pred = normalize(prediction)
    return any(_contains(pred, normalize(g)) for g in golds)


def _f1(pred: list[str], gold: list[str]) -> float:
    if not pred and not gold:
        return 1.0
    if not pred or not gold:
        return 0.0
    common = sum((Counter(pred) & Counter(gold)).values())
    if common == 0:
        return 0.0
    precision = common / len(pred)
    recall = common / len(gold)
    return 2 * precision * recall / (precision + recall)


def token_f1(prediction: str, golds: Sequence[str]) -> float:
    """Max token-multiset F1 over the gold answers."""
    if not golds:
        raise ValueError("golds must be non-empty")
    pred = normalize(prediction)
    return max(_f1(pred, normalize(g)) for g in golds)


def exact_match(prediction: str, golds: Sequence[str]) -> bool:
    pred = normalize(prediction)
    return any(pred == normalize(g) for g in golds)
