"""Synthetic implicit-feedback data with controllable popularity skew."""

from __future__ import annotations

import numpy as np

from .data import InteractionTriple


def zipf_popularity(n_items: int, exponent: float) -> np.ndarray:
    """Item sampling weights proportional to ``rank ** -exponent``, summing to 1."""
    w = np.arange(1, n_items + 1, dtype=np.float64) ** -exponent
    return w / w.sum()


def popularity_skewed(n_users: int, n_items: int, interactions_per_user: int = 20,
                      zipf_exponent: float = 1.0, n_clusters: int = 4, affinity: float = 2.0,
                      seed: int = 0) -> list[InteractionTriple]:
    """Users sample items without replacement from a Zipf-skewed catalog.

    Each user and item belongs to one of ``n_clusters`` taste groups, and a
    user's weight for an item is its Zipf popularity times ``exp(affinity)``
    when the groups match, so there is structure for a factor model to learn
    on top of the popularity skew. Item ids are ``i<k>`` with ``k`` the
    popularity rank; user ids are ``u<k>``.
    """
    rng = np.random.default_rng(seed)
    pop = zipf_popularity(n_items, zipf_exponent)
    item_group = rng.integers(n_clusters, size=n_items)
    user_group = rng.integers(n_clusters, size=n_users)
    m = min(interactions_per_user, n_items)
    out = []
    for u in range(n_users):
        p = pop * np.exp(affinity * (item_group == user_group[u]))
        p /= p.sum()
        count = int(np.clip(rng.poisson(m), 2, n_items))
        items = rng.choice(n_items, size=count, replace=False, p=p)
        out.extend(InteractionTriple(f"u{u}", f"i{j}", 1.0) for j in sorted(items))
    return out


def random_binary(n_users: int, n_items: int, density: float, seed: int = 0,
                  min_per_user: int = 1) -> list[InteractionTriple]:
    """Uniform Bernoulli pattern, with every user given at least ``min_per_user`` items."""
    rng = np.random.default_rng(seed)
    mask = rng.random((n_users, n_items)) < density
    for u in range(n_users):
        short = min_per_user - int(mask[u].sum())
        if short > 0:
            free = np.flatnonzero(~mask[u])
            mask[u, rng.choice(free, size=short, replace=False)] = True
    rows, cols = np.nonzero(mask)
    return [InteractionTriple(f"u{r:04d}", f"i{c:04d}", 1.0) for r, c in zip(rows, cols)]
