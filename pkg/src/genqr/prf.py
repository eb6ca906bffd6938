"""Pseudo-relevance feedback: feedback document selection and RM3 expansion.

RM3 builds a relevance model from feedback documents and interpolates it
with the original query:

    P(t|R)  ∝  sum_{d in F} P(t|d) * P(q0|d)
    w'(t)   =  lam * P(t|q0) + (1 - lam) * P(t|R)

Document language models are Dirichlet-smoothed against the collection:
P(t|d) = (tf(t,d) + mu * P(t|C)) / (|d| + mu). The query likelihood
P(q0|d) uses the same smoothing. Expansion candidates are the terms that
occur in the feedback documents; the model is truncated to the top
`fb_terms` terms and renormalized. Original query terms are always
retained in the output.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Dict, List, Tuple

from .corpus_io import Qrels, RunList
from .index import PostingsIndex, WeightedQuery

DEFAULT_FB_DOCS = 5
DEFAULT_FB_TERMS = 10
DEFAULT_LAMBDA = 0.5
DEFAULT_MU = 2500.0


class FeedbackError(RuntimeError):
    pass


@dataclass(frozen=True)
class FeedbackDoc:
    docno: str
    text: str
    score: float  # retrieval score (pseudo) or qrels grade (oracle)


@dataclass(frozen=True)
class FeedbackSet:
    qid: str
    docs: Tuple[FeedbackDoc, ...]
    source: str  # "pseudo" | "oracle"

    def __len__(self) -> int:
        return len(self.docs)

    def texts(self) -> List[str]:
        return [d.text for d in self.docs]


def select_feedback(run: RunList, corpus_lookup: Callable[[str], str],
                    m: int) -> FeedbackSet:
    """Top-m run documents with texts resolved; fewer than m available -> all."""
    if m < 0:
        raise ValueError(f"m must be >= 0, got {m}")
    docs = []
    for entry in run.entries[:m]:
        try:
            text = corpus_lookup(entry.docno)
        except KeyError:
            raise FeedbackError(
                f"qid {run.qid}: feedback docno {entry.docno!r} missing from corpus") from None
        docs.append(FeedbackDoc(entry.docno, text, entry.score))
    return FeedbackSet(qid=run.qid, docs=tuple(docs), source="pseudo")


def select_oracle_feedback(qrels: Qrels, corpus_lookup: Callable[[str], str],
                           qid: str, m: int) -> FeedbackSet:
    """The m highest-graded relevant documents, grade desc then docno asc."""
    if m < 0:
        raise ValueError(f"m must be >= 0, got {m}")
    relevant = qrels.relevant(qid, min_rel=1)
    if not relevant:
        raise FeedbackError(f"qid {qid}: no oracle feedback available")
    ordered = sorted(relevant.items(), key=lambda kv: (-kv[1], kv[0]))[:m]
    docs = []
    for docno, grade in ordered:
        try:
            text = corpus_lookup(docno)
        except KeyError:
            raise FeedbackError(
                f"qid {qid}: feedback docno {docno!r} missing from corpus") from None
        docs.append(FeedbackDoc(docno, text, float(grade)))
    return FeedbackSet(qid=qid, docs=tuple(docs), source="oracle")


def _smoothed_lm(tf: Dict[str, int], doc_len: int, index: PostingsIndex,
                 mu: float) -> Callable[[str], float]:
    total = index.total_tokens

    def prob(term: str) -> float:
        p_coll = index.collection_freq(term) / total if total else 0.0
        return (tf.get(term, 0) + mu * p_coll) / (doc_len + mu)

    return prob


def estimate_relevance_model(index: PostingsIndex, original: WeightedQuery,
                             feedback: FeedbackSet, fb_terms: int,
                             mu: float = DEFAULT_MU) -> Dict[str, float]:
    """Truncated, renormalized relevance model over feedback-document terms.

    Returns at most fb_terms (term -> probability) entries summing to 1.
    """
    if len(feedback) == 0:
        raise FeedbackError(f"qid {original.qid}: empty feedback set")
    if fb_terms < 0:
        raise ValueError(f"fb_terms must be >= 0, got {fb_terms}")
    if fb_terms == 0:
        return {}

    q_weights = original.aggregated()
    doc_models = []
    log_likelihoods = []
    for doc in feedback.docs:
        tokens = index.analyzer.analyze(doc.text)
        tf: Dict[str, int] = {}
        for token in tokens:
            tf[token] = tf.get(token, 0) + 1
        lm = _smoothed_lm(tf, len(tokens), index, mu)
        # Query likelihood under the same smoothing; terms absent from the
        # whole collection carry no evidence and are skipped.
        loglik = 0.0
        for term, weight in q_weights.items():
            if weight <= 0 or index.collection_freq(term) == 0:
                continue
            p = lm(term)
            if p <= 0.0:
                loglik = -math.inf
                break
            loglik += weight * math.log(p)
        doc_models.append((tf, lm))
        log_likelihoods.append(loglik)

    # Normalize document posteriors in log space (scale-invariant downstream).
    peak = max(log_likelihoods)
    if peak == -math.inf:
        posteriors = [1.0 / len(feedback)] * len(feedback)
    else:
        raw = [math.exp(ll - peak) for ll in log_likelihoods]
        total = sum(raw)
        posteriors = [r / total for r in raw]

    scores: Dict[str, float] = {}
    for (tf, lm), posterior in zip(doc_models, posteriors):
        for term in tf:
            scores[term] = scores.get(term, 0.0) + lm(term) * posterior

    top = sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))[:fb_terms]
    mass = sum(p for _, p in top)
    if mass <= 0.0:
        return {}
    return {term: p / mass for term, p in top}


def rm3_expand(index: PostingsIndex, original: WeightedQuery, feedback: FeedbackSet,
               fb_terms: int = DEFAULT_FB_TERMS, lam: float = DEFAULT_LAMBDA,
               mu: float = DEFAULT_MU) -> WeightedQuery:
    """Interpolate the normalized original query with the relevance model."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must be in [0, 1], got {lam}")
    if len(feedback) == 0:
        raise FeedbackError(f"qid {original.qid}: empty feedback set")

    q_weights = original.aggregated()
    q_total = sum(q_weights.values())
    if q_total <= 0:
        raise ValueError(f"qid {original.qid}: degenerate original query")
    q_model = {t: w / q_total for t, w in q_weights.items()}

    rel_model = estimate_relevance_model(index, original, feedback, fb_terms, mu=mu) \
        if lam < 1.0 else {}

    combined: Dict[str, float] = {t: lam * p for t, p in q_model.items()}
    for term, p in rel_model.items():
        combined[term] = combined.get(term, 0.0) + (1.0 - lam) * p

    terms = tuple(sorted(combined.items(), key=lambda kv: (-kv[1], kv[0])))
    return WeightedQuery(qid=original.qid, terms=terms)
