"""
Per-question BM25 retrieval over a question's private corpus.
"""

import logging
import math
import re
from collections import Counter
from dataclasses import dataclass
from typing import Dict, List, Optional, Protocol, Sequence, Tuple

from .config import Bm25Params
from .errors import InvalidArgumentError
from .models import Document

log = logging.getLogger(__name__)

# Unicode letters and digits; underscore separates.
_TOKEN_SPLIT = re.compile(r"[\W_]+")


def tokenize(text: str) -> List[str]:
    """Lowercase, split on non-alphanumeric runs, drop empties. No stemming or stopwords."""
    return [token for token in _TOKEN_SPLIT.split(text.lower()) if token]


def document_tokens(doc: Document) -> List[str]:
    return tokenize(f"{doc.title} {doc.text}")


@dataclass(frozen=True)
class Bm25Index:
    """Immutable corpus statistics for Okapi BM25."""
    doc_ids: Tuple[str, ...]
    doc_term_freqs: Tuple[Counter, ...]
    doc_lengths: Tuple[int, ...]
    avg_doc_length: float
    doc_freqs: Dict[str, int]
    n_docs: int
    params: Bm25Params

    def idf(self, term: str) -> float:
        df = self.doc_freqs.get(term, 0)
        return math.log(1.0 + (self.n_docs - df + 0.5) / (df + 0.5))


def build_index(corpus: Sequence[Document], params: Optional[Bm25Params] = None) -> Bm25Index:
    """Tokenize the corpus and collect BM25 statistics."""
    if not corpus:
        raise InvalidArgumentError("cannot build a BM25 index over an empty corpus")
    params = params or Bm25Params()

    term_freqs = [Counter(document_tokens(doc)) for doc in corpus]
    lengths = [sum(tf.values()) for tf in term_freqs]
    doc_freqs: Counter = Counter()
    for tf in term_freqs:
        doc_freqs.update(tf.keys())

    return Bm25Index(
        doc_ids=tuple(doc.id for doc in corpus),
        doc_term_freqs=tuple(term_freqs),
        doc_lengths=tuple(lengths),
        avg_doc_length=sum(lengths) / len(lengths),
        doc_freqs=dict(doc_freqs),
        n_docs=len(corpus),
        params=params,
    )


def score_document(index: Bm25Index, query_tokens: Sequence[str], position: int) -> float:
    k1, b = index.params.k1, index.params.b
    tf = index.doc_term_freqs[position]
    avgdl = index.avg_doc_length or 1.0
    norm = k1 * (1.0 - b + b * index.doc_lengths[position] / avgdl)
    score = 0.0
    for term in query_tokens:
        freq = tf.get(term, 0)
        if freq == 0:
            continue
        score += index.idf(term) * (freq * (k1 + 1.0)) / (freq + norm)
    return score


def search(index: Bm25Index, query: str, k: int) -> List[Tuple[str, float]]:
    """Top-k (doc_id, score) by descending score, ties by ascending doc id."""
    if k < 1:
        raise InvalidArgumentError(f"k must be >= 1, got {k}")
    query_tokens = tokenize(query)
    scored = [
        (doc_id, score_document(index, query_tokens, i))
        for i, doc_id in enumerate(index.doc_ids)
    ]
    scored.sort(key=lambda item: (-item[1], item[0]))
    return scored[:k]


class Retriever(Protocol):
    """Anything that can rank a question's documents for a query."""

    def search(self, query: str, k: int) -> List[Tuple[str, float]]: ...

    def retrieve(self, query: str, k: int) -> List[Document]: ...


class Bm25Retriever:
    """BM25 retriever bound to one question's corpus."""

    def __init__(self, corpus: Sequence[Document], params: Optional[Bm25Params] = None):
        self.index = build_index(corpus, params)
        self._docs = {doc.id: doc for doc in corpus}

    def search(self, query: str, k: int) -> List[Tuple[str, float]]:
        return search(self.index, query, k)

    def retrieve(self, query: str, k: int) -> List[Document]:
        hits = self.search(query, k)
        log.debug(f"[retrieval] '{query}' -> {[doc_id for doc_id, _ in hits]}")
        return [self._docs[doc_id] for doc_id, _ in hits]
