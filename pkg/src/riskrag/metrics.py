"""Answer and retrieval metrics (covered EM, document-level F1, SQuAD-style answer F1)."""

import re
import string
from collections import Counter
from typing import Iterable

from .errors import InvalidArgumentError


def covered_em(prediction: str, gold: str) -> bool:
    """True when the lowercased gold answer is a substring of the lowercased prediction."""
    if not gold:
        raise InvalidArgumentError("gold answer must be non-empty")
    return gold.lower() in prediction.lower()


def set_f1(retrieved: Iterable[str], gold: Iterable[str]) -> float:
    """Harmonic mean of precision and recall of retrieved ids against gold ids."""
    retrieved_set, gold_set = set(retrieved), set(gold)
    hits = len(retrieved_set & gold_set)
    if hits == 0:
        return 0.0
    precision = hits / len(retrieved_set)
    recall = hits / len(gold_set)
    return 2 * precision * recall / (precision + recall)


def normalize_answer(s: str) -> str:
    """Lower text and remove punctuation, articles, and extra whitespace."""
    s = s.lower()
    s = re.sub(r"\b(a|an|the)\b", " ", s)
    s = "".join(ch for ch in s if ch not in string.punctuation)
    return " ".join(s.split())


def answer_f1(prediction: str, gold: str) -> float:
    pred_tokens = normalize_answer(prediction).split()
    gold_tokens = normalize_answer(gold).split()
    if not pred_tokens or not gold_tokens:
        return float(pred_tokens == gold_tokens)
    common = Counter(pred_tokens) & Counter(gold_tokens)
    num_same = sum(common.values())
    if num_same == 0:
        return 0.0
    precision = num_same / len(pred_tokens)
    recall = num_same / len(gold_tokens)
    return (2 * precision * recall) / (precision + recall)
