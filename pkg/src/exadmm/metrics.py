"""Top-K ranking, nDCG@K, DCG-model exposure, Gini@K and Lorenz curves."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


@dataclass(frozen=True)
class RankedList:
    user: int
    items: np.ndarray


def top_k(scores, k: int, exclusions: Iterable[int] = ()) -> np.ndarray:
    """Indices of the ``k`` highest scores, descending, ties by ascending index.

    Excluded indices are never returned. Uses partial selection, so the cost
    is linear in the catalog size plus ``k log k``.
    """
    scores = np.asarray(scores, dtype=np.float64)
    n = scores.size
    excl = np.unique(np.asarray(list(exclusions), dtype=np.int64))
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > n - excl.size:
        raise ValueError(f"k={k} exceeds the {n - excl.size} rankable items")
    if excl.size:
        pool = np.delete(np.arange(n), excl)
        s = scores[pool]
    else:
        pool = None
        s = scores
    if k < s.size:
        kth = np.argpartition(-s, k - 1)[:k]
        thr = s[kth].min()
        above = np.flatnonzero(s > thr)
        ties = np.flatnonzero(s == thr)[: k - above.size]
        cand = np.concatenate([above, ties])
    else:
        cand = np.arange(s.size)
    cand = cand[np.lexsort((cand, -s[cand]))]
    return cand if pool is None else pool[cand]


def dcg_discounts(k: int) -> np.ndarray:
    return 1.0 / np.log2(np.arange(2, k + 2))


def ndcg_at_k(ranked: Sequence[int], relevant, k: int) -> float:
    """Binary-relevance nDCG over the first ``k`` positions of ``ranked``.

    The ideal ranking places ``min(k, |relevant|)`` hits at the top.
    """
    relevant = set(int(j) for j in relevant)
    if not relevant:
        raise ValueError("relevant set is empty")
    ranked = np.asarray(ranked)[:k]
    disc = dcg_discounts(k)
    hits = np.fromiter((int(j) in relevant for j in ranked), dtype=bool, count=ranked.size)
    dcg = float(disc[: ranked.size][hits].sum())
    idcg = float(disc[: min(k, len(relevant))].sum())
    return dcg / idcg


def exposure_accumulate(rankings: Iterable, n_items: int, k: int) -> np.ndarray:
    """Total exposure per item, ``1 / log2(rank + 1)`` for each top-``k`` slot."""
    o = np.zeros(n_items, dtype=np.float64)
    disc = dcg_discounts(k)
    for r in rankings:
        items = np.asarray(r.items if isinstance(r, RankedList) else r, dtype=np.int64)
        if items.size > k:
            raise ValueError(f"ranking of length {items.size} exceeds k={k}")
        # items within a ranking are distinct, so fancy-index accumulation is safe
        o[items] += disc[: items.size]
    return o


def _check_exposure(o) -> np.ndarray:
    o = np.asarray(o, dtype=np.float64)
    if o.ndim != 1 or o.size == 0:
        raise ValueError("exposure must be a non-empty vector")
    if np.any(o < 0) or not np.all(np.isfinite(o)):
        raise ValueError("exposure entries must be finite and non-negative")
    if o.sum() <= 0:
        raise ValueError("exposure vector is all zero")
    return o


def gini_at_k(o, standard: bool = False) -> float:
    """Exposure inequality ``sum_j sum_l |o_j - o_l| / (2 |o|_1 n^2)``.

    Evaluated in ``O(n log n)`` through the sorted-order identity. With
    ``standard=True`` the denominator is ``2 |o|_1 n``, the textbook Gini
    normalization whose maximum approaches 1.
    """
    o = _check_exposure(o)
    n = o.size
    srt = np.sort(o)
    p = np.arange(1, n + 1, dtype=np.float64)
    pair_sum = 2.0 * float(np.dot(2.0 * p - n - 1.0, srt))
    denom = 2.0 * float(srt.sum()) * n * (1 if standard else n)
    return pair_sum / denom


def lorenz_curve(o, n_points: int | None = None) -> np.ndarray:
    """Cumulative exposure share held by the lowest-exposed fraction of items.

    Returns an ``(n_points, 2)`` array of ``(fraction_of_items, share)``
    sampled at evenly spaced item counts from 0 to ``n``; the default samples
    every count.
    """
    o = _check_exposure(o)
    n = o.size
    if n_points is None:
        n_points = n + 1
    if n_points < 2:
        raise ValueError("n_points must be >= 2")
    cum = np.concatenate([[0.0], np.cumsum(np.sort(o))])
    cum /= cum[-1]
    counts = np.unique(np.rint(np.linspace(0, n, n_points)).astype(np.int64))
    return np.column_stack([counts / n, cum[counts]])


def write_lorenz(path, curve: np.ndarray, header: Sequence[str] = ("fraction_of_items", "exposure_share")) -> None:
    lines = ["\t".join(header)] + [f"{x!r}\t{y!r}" for x, y in curve.tolist()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
