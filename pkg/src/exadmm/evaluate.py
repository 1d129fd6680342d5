"""Strong-generalization evaluation: fold-in holdout users, rank, score."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ials import IalsHyperParams, fold_in
from .linalg import gramian
from .metrics import exposure_accumulate, gini_at_k, ndcg_at_k, top_k


@dataclass
class EvalResult:
    k_values: list[int]
    ndcg: dict[int, float]
    gini: dict[int, float]
    exposure: dict[int, np.ndarray]
    users_evaluated: int
    users_skipped: int
    per_user_ndcg: dict[int, list[float]] = field(default_factory=dict, repr=False)

    def rows(self) -> list[dict]:
        return [{"k": k, "ndcg": self.ndcg[k], "gini": self.gini[k],
                 "users_evaluated": self.users_evaluated, "users_skipped": self.users_skipped}
                for k in self.k_values]


REPORT_FIELDS = ["k", "ndcg", "gini", "users_evaluated", "users_skipped"]


def rank_holdout(V: np.ndarray, hp: IalsHyperParams, foldin: dict[str, np.ndarray], k: int) -> dict[str, np.ndarray]:
    """Top-``k`` list for every holdout user, fold-in items excluded."""
    G_V = gramian(V)
    out = {}
    for user in sorted(foldin):
        items = foldin[user]
        u = fold_in(items, V, hp, G_V)
        out[user] = top_k(V @ u, k, exclusions=items)
    return out


def evaluate_holdout(V: np.ndarray, hp: IalsHyperParams, foldin: dict[str, np.ndarray],
                     target: dict[str, np.ndarray], k_values, standard_gini: bool = False) -> EvalResult:
    """nDCG@K and Gini@K over holdout users for each ``K`` in ``k_values``.

    Every holdout user contributes exposure; users with an empty target are
    left out of the nDCG mean and counted as skipped.
    """
    k_values = sorted({int(k) for k in k_values})
    if not k_values:
        raise ValueError("no K values given")
    kmax = k_values[-1]
    if kmax > V.shape[0]:
        raise ValueError(f"K={kmax} exceeds the catalog size {V.shape[0]}")
    rankings = rank_holdout(V, hp, foldin, kmax)
    per_user = {k: [] for k in k_values}
    skipped = 0
    for user, ranked in rankings.items():
        rel = target.get(user, ())
        if len(rel) == 0:
            skipped += 1
            continue
        for k in k_values:
            per_user[k].append(ndcg_at_k(ranked, rel, k))
    ndcg, gini, exposure = {}, {}, {}
    for k in k_values:
        o = exposure_accumulate((r[:k] for r in rankings.values()), V.shape[0], k)
        exposure[k] = o
        gini[k] = gini_at_k(o, standard=standard_gini)
        ndcg[k] = float(np.mean(per_user[k])) if per_user[k] else float("nan")
    return EvalResult(k_values, ndcg, gini, exposure, len(rankings) - skipped, skipped, per_user)
