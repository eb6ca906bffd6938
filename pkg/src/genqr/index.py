"""Inverted index with BM25 scoring.

The index is immutable after build and safe to share across threads.
Scoring uses the Robertson BM25 form with the +1-inside-log idf variant,
which keeps scores non-negative even for very common terms:

    score(d) = sum_t w(t) * idf(t) * tf(t,d)*(k1+1) / (tf(t,d) + k1*(1 - b + b*len(d)/avgdl))
    idf(t)   = ln((N - df(t) + 0.5) / (df(t) + 0.5) + 1)

Query term weights are additive: a term listed twice with weight 1 scores
identically to the same term listed once with weight 2.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Tuple

from .analysis import Analyzer
from .corpus_io import Document, RunList

INDEX_MAGIC = "genqr-index"
INDEX_VERSION = 1
_POSTINGS_MAGIC = b"GQRPOST1"

DEFAULT_K1 = 1.2
DEFAULT_B = 0.75


class IndexingError(RuntimeError):
    """Index build/load/score failure."""


class DegenerateQueryError(ValueError):
    """Query with no positive-weight term."""


@dataclass(frozen=True)
class WeightedQuery:
    """Bag of (term, weight) pairs; duplicate terms accumulate weight."""

    qid: str
    terms: Tuple[Tuple[str, float], ...]

    def __post_init__(self):
        for term, weight in self.terms:
            if not math.isfinite(weight) or weight < 0:
                raise ValueError(f"query {self.qid}: bad weight {weight!r} for {term!r}")

    @classmethod
    def from_terms(cls, qid: str, terms: Iterable[str], weight: float = 1.0) -> "WeightedQuery":
        return cls(qid=qid, terms=tuple((t, weight) for t in terms))

    def aggregated(self) -> Dict[str, float]:
        agg: Dict[str, float] = {}
        for term, weight in self.terms:
            agg[term] = agg.get(term, 0.0) + weight
        return agg


class PostingsIndex:
    """Term -> postings [(doc ordinal, tf)] plus per-doc and corpus statistics."""

    def __init__(self, analyzer: Analyzer):
        self.analyzer = analyzer
        self.postings: Dict[str, List[Tuple[int, int]]] = {}
        self.docnos: List[str] = []
        self.doc_lengths: List[int] = []
        self.total_tokens = 0

    @property
    def n_docs(self) -> int:
        return len(self.docnos)

    @property
    def avgdl(self) -> float:
        return self.total_tokens / self.n_docs if self.n_docs else 0.0

    def df(self, term: str) -> int:
        return len(self.postings.get(term, ()))

    def collection_freq(self, term: str) -> int:
        return sum(tf for _, tf in self.postings.get(term, ()))

    def idf(self, term: str) -> float:
        n, df = self.n_docs, self.df(term)
        return math.log((n - df + 0.5) / (df + 0.5) + 1.0)

    # --- scoring ---

    def bm25_scores(self, query: WeightedQuery, k1: float = DEFAULT_K1,
                    b: float = DEFAULT_B) -> Dict[str, float]:
        """BM25 score per candidate docno; documents sharing no query term are absent."""
        if self.n_docs == 0:
            raise IndexingError("cannot score against an empty index")
        weights = query.aggregated()
        if not any(w > 0 for w in weights.values()):
            raise DegenerateQueryError(f"degenerate query {query.qid!r}: no positive-weight term")

        accum: Dict[int, float] = {}
        avgdl = self.avgdl
        for term, weight in weights.items():
            if weight == 0.0:
                continue
            plist = self.postings.get(term)
            if not plist:
                continue
            idf = self.idf(term)
            for doc_ord, tf in plist:
                norm = k1 * (1.0 - b + b * self.doc_lengths[doc_ord] / avgdl)
                partial = weight * idf * tf * (k1 + 1.0) / (tf + norm)
                accum[doc_ord] = accum.get(doc_ord, 0.0) + partial
        return {self.docnos[ord_]: score for ord_, score in accum.items()}

    def retrieve(self, query: WeightedQuery, k: int, k1: float = DEFAULT_K1,
                 b: float = DEFAULT_B, tag: str = "run") -> RunList:
        """Top-k candidates by score descending, docno ascending on ties."""
        if k < 1:
            raise ValueError(f"k must be positive, got {k}")
        scores = self.bm25_scores(query, k1=k1, b=b)
        return RunList.from_scores(query.qid, scores.items(), tag=tag, k=k)

    # --- persistence ---

    def save(self, path: str | Path) -> None:
        path = Path(path)
        path.mkdir(parents=True, exist_ok=True)
        meta = {
            "magic": INDEX_MAGIC,
            "version": INDEX_VERSION,
            "analyzer": self.analyzer.config(),
            "analyzer_fingerprint": self.analyzer.fingerprint(),
            "n_docs": self.n_docs,
            "total_tokens": self.total_tokens,
            "docs": [[docno, length] for docno, length in zip(self.docnos, self.doc_lengths)],
        }
        (path / "meta.json").write_text(
            json.dumps(meta, sort_keys=True, indent=1), encoding="utf-8")

        with open(path / "postings.bin", "wb") as f:
            f.write(_POSTINGS_MAGIC)
            f.write(struct.pack("<I", len(self.postings)))
            for term in sorted(self.postings):
                raw = term.encode("utf-8")
                _write_varint(f, len(raw))
                f.write(raw)
                plist = self.postings[term]
                _write_varint(f, len(plist))
                prev = 0
                for doc_ord, tf in plist:
                    _write_varint(f, doc_ord - prev)
                    _write_varint(f, tf)
                    prev = doc_ord

    @classmethod
    def load(cls, path: str | Path) -> "PostingsIndex":
        path = Path(path)
        meta_path = path / "meta.json"
        if not meta_path.exists():
            raise IndexingError(f"{path}: not an index directory (missing meta.json)")
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
        if meta.get("magic") != INDEX_MAGIC:
            raise IndexingError(f"{path}: bad magic {meta.get('magic')!r}; rebuild the index")
        if meta.get("version") != INDEX_VERSION:
            raise IndexingError(
                f"{path}: index version {meta.get('version')} unsupported "
                f"(expected {INDEX_VERSION}); rebuild the index")

        index = cls(Analyzer.from_config(meta["analyzer"]))
        if index.analyzer.fingerprint() != meta.get("analyzer_fingerprint"):
            raise IndexingError(f"{path}: analyzer fingerprint mismatch; rebuild the index")
        for docno, length in meta["docs"]:
            index.docnos.append(docno)
            index.doc_lengths.append(int(length))
        index.total_tokens = int(meta["total_tokens"])

        with open(path / "postings.bin", "rb") as f:
            if f.read(len(_POSTINGS_MAGIC)) != _POSTINGS_MAGIC:
                raise IndexingError(f"{path}: corrupted postings header; rebuild the index")
            (n_terms,) = struct.unpack("<I", f.read(4))
            for _ in range(n_terms):
                term = f.read(_read_varint(f)).decode("utf-8")
                n_postings = _read_varint(f)
                plist: List[Tuple[int, int]] = []
                prev = 0
                for _ in range(n_postings):
                    doc_ord = prev + _read_varint(f)
                    tf = _read_varint(f)
                    plist.append((doc_ord, tf))
                    prev = doc_ord
                index.postings[term] = plist
        return index


def build_index(corpus: Iterable[Document], analyzer: Analyzer) -> PostingsIndex:
    """Index a document stream; docnos must be unique."""
    index = PostingsIndex(analyzer)
    seen: Dict[str, int] = {}
    for doc in corpus:
        if doc.docno in seen:
            raise IndexingError(f"duplicate docno {doc.docno!r}")
        doc_ord = len(index.docnos)
        seen[doc.docno] = doc_ord
        tokens = analyzer.analyze(doc.text)
        counts: Dict[str, int] = {}
        for token in tokens:
            counts[token] = counts.get(token, 0) + 1
        for term, tf in counts.items():
            index.postings.setdefault(term, []).append((doc_ord, tf))
        index.docnos.append(doc.docno)
        index.doc_lengths.append(len(tokens))
        index.total_tokens += len(tokens)
    return index


def _write_varint(f, value: int) -> None:
    if value < 0:
        raise ValueError("varint values must be non-negative")
    while True:
        byte = value & 0x7F
        value >>= 7
        if value:
            f.write(bytes((byte | 0x80,)))
        else:
            f.write(bytes((byte,)))
            return


def _read_varint(f) -> int:
    shift = 0
    result = 0
    while True:
        raw = f.read(1)
        if not raw:
            raise IndexingError("truncated postings file")
        byte = raw[0]
        result |= (byte & 0x7F) << shift
        if not byte & 0x80:
            return result
        shift += 7
