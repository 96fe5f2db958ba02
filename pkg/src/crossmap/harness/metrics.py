"""Retrieval and classification metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from crossmap.errors import ValidationError

SAME_LABEL = "same-label"
SHARED_LABEL = "shared-label"


def average_precision(relevance, n_relevant: int | None = None) -> float:
    """Mean of precision@p over the ranks ``p`` holding relevant items.

    ``n_relevant`` is the number of relevant items in the whole target set;
    it defaults to the number of ones in ``relevance`` (a full ranking).
    """
    rel = np.asarray(relevance, dtype=float).ravel()
    if rel.size == 0:
        raise ValidationError("relevance sequence is empty")
    hits = np.cumsum(rel)
    total = float(hits[-1]) if n_relevant is None else float(n_relevant)
    if total <= 0:
        raise ValidationError("no relevant items; average precision is undefined")
    prec = hits / np.arange(1, rel.size + 1)
    return float(np.sum(prec * rel) / total)


@dataclass(frozen=True)
class RetrievalResult:
    rankings: np.ndarray
    ap: np.ndarray
    admissible: np.ndarray
    map: float
    n_skipped: int

    @property
    def defined(self):
        return bool(np.any(self.admissible))


def _as_label_sets(labels):
    out = []
    for v in labels:
        if isinstance(v, (set, frozenset, list, tuple, np.ndarray)):
            out.append(frozenset(int(x) for x in v))
        else:
            out.append(frozenset([int(v)]))
    return out


def relevance_matrix(query_labels, target_labels, rule: str = SAME_LABEL) -> np.ndarray:
    """Boolean ``(n_query, n_target)`` relevance under the given rule."""
    if rule == SAME_LABEL:
        q, t = np.asarray(query_labels), np.asarray(target_labels)
        if q.ndim != 1 or t.ndim != 1 or q.dtype == object or t.dtype == object:
            raise ValidationError("same-label relevance needs one integer label per sample")
        return q[:, None] == t[None, :]
    if rule == SHARED_LABEL:
        qs, ts = _as_label_sets(query_labels), _as_label_sets(target_labels)
        return np.array([[bool(a & b) for b in ts] for a in qs], dtype=bool).reshape(len(qs), len(ts))
    raise ValidationError(f"unknown relevance rule {rule!r}")


def map_score(rankings, query_labels, target_labels, rule: str = SAME_LABEL) -> RetrievalResult:
    """Mean average precision of ranked target lists.

    Queries without any relevant target in the whole target set are skipped
    and counted in ``n_skipped``; ``map`` is NaN when every query is skipped.
    """
    rankings = np.asarray(rankings, dtype=int)
    if rankings.ndim != 2 or rankings.shape[0] != len(query_labels):
        raise ValidationError("need one ranked list per query")
    rel = relevance_matrix(query_labels, target_labels, rule)
    n_rel = rel.sum(axis=1)
    ap = np.full(rankings.shape[0], np.nan)
    ok = n_rel > 0
    for r in np.flatnonzero(ok):
        ap[r] = average_precision(rel[r, rankings[r]], n_rel[r])
    m = float(np.mean(ap[ok])) if ok.any() else float("nan")
    return RetrievalResult(rankings, ap, ok, m, int(np.sum(~ok)))


def accuracy(predicted, truth) -> float:
    p, t = np.asarray(predicted).ravel(), np.asarray(truth).ravel()
    if p.shape != t.shape:
        raise ValidationError(f"length mismatch: {p.size} predictions, {t.size} labels")
    if p.size == 0:
        raise ValidationError("no predictions")
    return float(np.mean(p == t))
