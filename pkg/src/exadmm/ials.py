"""Implicit alternating least squares with frequency-scaled Tikhonov weights."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from .data import FeedbackMatrix
from .linalg import OpCounter, gramian, row_system_solve, solve_rows

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class IalsHyperParams:
    d: int = 32
    alpha0: float = 0.1
    lambda_l2: float = 0.01
    eta: float = 1.0
    sigma: float = 0.1
    epochs: int = 50
    seed: int = 0

    def __post_init__(self):
        errors = []
        if not (isinstance(self.d, (int, np.integer)) and self.d >= 1):
            errors.append(f"d must be a positive integer, got {self.d!r}")
        if not self.alpha0 > 0:
            errors.append(f"alpha0 must be > 0, got {self.alpha0!r}")
        if not self.lambda_l2 > 0:
            errors.append(f"lambda_l2 must be > 0, got {self.lambda_l2!r}")
        if not self.eta >= 0:
            errors.append(f"eta must be >= 0, got {self.eta!r}")
        if not self.sigma >= 0:
            errors.append(f"sigma must be >= 0, got {self.sigma!r}")
        if not (isinstance(self.epochs, (int, np.integer)) and self.epochs >= 1):
            errors.append(f"epochs must be a positive integer, got {self.epochs!r}")
        for name in ("alpha0", "lambda_l2", "eta", "sigma"):
            if not np.isfinite(getattr(self, name)):
                errors.append(f"{name} must be finite")
        if errors:
            raise ValueError("; ".join(errors))

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class TikhonovWeights:
    user_weights: np.ndarray
    item_weights: np.ndarray

    @property
    def user_max(self) -> float:
        return float(self.user_weights.max())

    @property
    def item_min(self) -> float:
        return float(self.item_weights.min())

    @property
    def item_max(self) -> float:
        return float(self.item_weights.max())


def tikhonov_weights(R: FeedbackMatrix, hp: IalsHyperParams) -> TikhonovWeights:
    """Per-row L2 weights ``lambda_l2 * (count + alpha0 * catalog_size) ** eta``."""
    uw = hp.lambda_l2 * (R.user_counts() + hp.alpha0 * R.n_items) ** hp.eta
    iw = hp.lambda_l2 * (R.item_counts() + hp.alpha0 * R.n_users) ** hp.eta
    return TikhonovWeights(np.asarray(uw, dtype=np.float64), np.asarray(iw, dtype=np.float64))


def user_weight(n_interactions: int, n_items: int, hp: IalsHyperParams) -> float:
    """Tikhonov weight for a user outside the training matrix (fold-in)."""
    return float(hp.lambda_l2 * (n_interactions + hp.alpha0 * n_items) ** hp.eta)


def init_embeddings(n: int, hp: IalsHyperParams, rng: np.random.Generator | None = None) -> np.ndarray:
    """Draw an ``n x d`` matrix with i.i.d. N(0, (sigma / sqrt(d))**2) entries."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if rng is None:
        rng = np.random.default_rng(hp.seed)
    return rng.normal(0.0, hp.sigma / np.sqrt(hp.d), size=(n, hp.d))


def solve_user_row(interacted_items, V: np.ndarray, G_V: np.ndarray, alpha0: float,
                   lambda_i: float) -> np.ndarray:
    """Exact minimizer of one user's row objective with ``V`` fixed.

    Solves ``(sum_j v_j v_j^T + alpha0 G_V + lambda_i I) u = sum_j v_j`` over
    the interacted items ``j`` with a Cholesky factorization.
    """
    if not lambda_i > 0:
        raise ValueError("lambda_i must be > 0")
    idx = np.asarray(interacted_items, dtype=np.int64)
    return row_system_solve(V[idx], alpha0 * G_V, lambda_i)


def fold_in(interacted_items, V: np.ndarray, hp: IalsHyperParams, G_V: np.ndarray | None = None) -> np.ndarray:
    """Embedding for an unseen user from one closed-form solve against frozen ``V``."""
    if G_V is None:
        G_V = gramian(V)
    lam = user_weight(len(interacted_items), V.shape[0], hp)
    return solve_user_row(interacted_items, V, G_V, hp.alpha0, lam)


def update_users(R: FeedbackMatrix, V: np.ndarray, weights: TikhonovWeights, alpha0: float,
                 threads: int = 1, counter: OpCounter | None = None) -> np.ndarray:
    G_V = gramian(V)
    if counter is not None:
        counter.add("ials_u", 2, V.shape[0] * V.shape[1] ** 2)
    return solve_rows(R.user_indptr, R.user_indices, V, alpha0 * G_V, weights.user_weights,
                      threads=threads, counter=counter, phase="ials_u")


def update_items(R: FeedbackMatrix, U: np.ndarray, weights: TikhonovWeights, alpha0: float,
                 threads: int = 1, counter: OpCounter | None = None) -> np.ndarray:
    G_U = gramian(U)
    if counter is not None:
        counter.add("ials_v", 2, U.shape[0] * U.shape[1] ** 2)
    return solve_rows(R.item_indptr, R.item_indices, U, alpha0 * G_U, weights.item_weights,
                      threads=threads, counter=counter, phase="ials_v")


def ials_epoch(R: FeedbackMatrix, U: np.ndarray, V: np.ndarray, weights: TikhonovWeights,
               hp: IalsHyperParams, threads: int = 1,
               counter: OpCounter | None = None) -> tuple[np.ndarray, np.ndarray]:
    """One alternating pass: all users against ``V``, then all items against the new ``U``."""
    U_new = update_users(R, V, weights, hp.alpha0, threads, counter)
    V_new = update_items(R, U_new, weights, hp.alpha0, threads, counter)
    return U_new, V_new


def observed_scores(R: FeedbackMatrix, U: np.ndarray, V: np.ndarray) -> np.ndarray:
    """Predicted scores ``u_i . v_j`` at the stored entries, in user-major order."""
    rows, cols = R.pairs()
    return np.einsum("ij,ij->i", U[rows], V[cols])


def ials_objective(R: FeedbackMatrix, U: np.ndarray, V: np.ndarray, weights: TikhonovWeights,
                   alpha0: float) -> float:
    """Weighted matrix-factorization loss without forming ``U V^T``.

    ``0.5 * sum_nz (1 - u_i.v_j)**2 + 0.5 * alpha0 * tr(G_U G_V)
    + 0.5 * sum_i lambda_i |u_i|^2 + 0.5 * sum_j lambda_j |v_j|^2``.
    """
    scores = observed_scores(R, U, V)
    observed = 0.5 * float(np.sum((1.0 - scores) ** 2))
    implicit = 0.5 * alpha0 * float(np.sum(gramian(U) * gramian(V)))
    reg_u = 0.5 * float(np.dot(weights.user_weights, np.einsum("ij,ij->i", U, U)))
    reg_v = 0.5 * float(np.dot(weights.item_weights, np.einsum("ij,ij->i", V, V)))
    return observed + implicit + reg_u + reg_v


@dataclass
class IalsModel:
    U: np.ndarray
    V: np.ndarray
    weights: TikhonovWeights
    hp: IalsHyperParams
    history: list[dict]
    train_seconds: float = 0.0


def train_ials(R: FeedbackMatrix, hp: IalsHyperParams, threads: int = 1,
               track_objective: bool = True,
               callback: Callable[[int, np.ndarray, np.ndarray], None] | None = None) -> IalsModel:
    """Run ``hp.epochs`` alternating epochs from a seeded Gaussian start.

    With ``track_objective`` each history row holds the objective after the
    user half-sweep and after the item half-sweep.
    """
    rng = np.random.default_rng(hp.seed)
    U = init_embeddings(R.n_users, hp, rng)
    V = init_embeddings(R.n_items, hp, rng)
    weights = tikhonov_weights(R, hp)
    history = []
    if track_objective:
        history.append({"epoch": 0, "objective": ials_objective(R, U, V, weights, hp.alpha0)})
    elapsed = 0.0
    for epoch in range(1, hp.epochs + 1):
        t0 = time.perf_counter()
        U = update_users(R, V, weights, hp.alpha0, threads)
        elapsed += time.perf_counter() - t0
        mid = ials_objective(R, U, V, weights, hp.alpha0) if track_objective else None
        t0 = time.perf_counter()
        V = update_items(R, U, weights, hp.alpha0, threads)
        elapsed += time.perf_counter() - t0
        if track_objective:
            row = {"epoch": epoch, "objective_after_u": mid,
                   "objective": ials_objective(R, U, V, weights, hp.alpha0)}
            history.append(row)
            logger.debug("ials epoch %d objective %.10g", epoch, row["objective"])
        if callback is not None:
            callback(epoch, U, V)
    return IalsModel(U, V, weights, hp, history, elapsed)
