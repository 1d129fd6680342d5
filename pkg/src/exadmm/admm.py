"""Exposure-regularized ALS solved with ADMM (exADMM).

The exposure penalty ``lambda_ex / 2 * |V s|^2`` couples all users through
their mean embedding. Splitting off ``s = mean(U)`` with a scaled dual
variable ``w`` keeps every sweep row-separable:

* items: exact ridge solve per row, with the rank-one ``lambda_ex s s^T``
  added to the shared ``alpha0 G_U`` base;
* users: one gradient step on the iALS loss followed by the proximal map of
  the ADMM penalty, which has a closed form costing ``O(n_users d)``;
* ``s``: a single d x d SPD solve; ``w``: dual ascent on the constraint.
"""

from __future__ import annotations

import logging
import math
import time
import warnings
from dataclasses import asdict, dataclass, field, replace
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .data import FeedbackMatrix
from .ials import (IalsHyperParams, TikhonovWeights, init_embeddings,
                   tikhonov_weights, update_items, update_users)
from .linalg import OpCounter, gramian, parallel_rows, row_system_solve, solve_rows, spd_solve

logger = logging.getLogger(__name__)


class BoundViolationWarning(UserWarning):
    """``rho`` or ``gamma`` is outside the range that guarantees convergence."""


@dataclass(frozen=True)
class ExAdmmHyperParams:
    base: IalsHyperParams = field(default_factory=IalsHyperParams)
    lambda_ex_star: float = 0.0
    rho_star: float = 1e-6
    gamma: float = 0.01

    def __post_init__(self):
        errors = []
        if not (self.lambda_ex_star >= 0 and math.isfinite(self.lambda_ex_star)):
            errors.append(f"lambda_ex_star must be finite and >= 0, got {self.lambda_ex_star!r}")
        if not (self.rho_star > 0 and math.isfinite(self.rho_star)):
            errors.append(f"rho_star must be finite and > 0, got {self.rho_star!r}")
        if not (self.gamma > 0 and math.isfinite(self.gamma)):
            errors.append(f"gamma must be finite and > 0, got {self.gamma!r}")
        if errors:
            raise ValueError("; ".join(errors))

    def as_dict(self) -> dict:
        out = asdict(self.base)
        out.update(lambda_ex_star=self.lambda_ex_star, rho_star=self.rho_star, gamma=self.gamma)
        return out


@dataclass(frozen=True)
class AdmmParams:
    """Scale-resolved penalty weights actually used by the updates."""

    alpha0: float
    lambda_ex: float
    rho: float
    gamma: float

    def __post_init__(self):
        if not self.rho > 0:
            raise ValueError("rho must be > 0")
        if not self.gamma > 0:
            raise ValueError("gamma must be > 0")
        if not self.lambda_ex >= 0:
            raise ValueError("lambda_ex must be >= 0")


@dataclass
class ExAdmmState:
    U: np.ndarray
    V: np.ndarray
    s: np.ndarray
    w: np.ndarray
    epoch: int = 0

    def copy(self) -> "ExAdmmState":
        return ExAdmmState(self.U.copy(), self.V.copy(), self.s.copy(), self.w.copy(), self.epoch)


def reparametrize(hp: ExAdmmHyperParams, n_users: int) -> tuple[float, float]:
    """Return ``(lambda_ex, rho)`` scaled by ``n_users ** 2``."""
    if n_users < 1:
        raise ValueError("n_users must be >= 1")
    if not hp.rho_star > 0:
        raise ValueError("rho_star must be > 0")
    scale = float(n_users) ** 2
    return hp.lambda_ex_star * scale, hp.rho_star * scale


def derive_params(hp: ExAdmmHyperParams, n_users: int) -> AdmmParams:
    lam, rho = reparametrize(hp, n_users)
    return AdmmParams(hp.base.alpha0, lam, rho, hp.gamma)


def user_mean(U: np.ndarray) -> np.ndarray:
    return U.sum(axis=0) / U.shape[0]


def init_state(R: FeedbackMatrix, hp: IalsHyperParams) -> ExAdmmState:
    """Seeded Gaussian ``U``, ``V``; ``s`` at the user mean and ``w = 0``."""
    rng = np.random.default_rng(hp.seed)
    U = init_embeddings(R.n_users, hp, rng)
    V = init_embeddings(R.n_items, hp, rng)
    return ExAdmmState(U, V, user_mean(U), np.zeros(hp.d), 0)


# ---------------------------------------------------------------------------
# item step


def update_v_row(interacted_users, U: np.ndarray, G_U: np.ndarray, s: np.ndarray, alpha0: float,
                 lambda_ex: float, lambda_j: float) -> np.ndarray:
    """Exact minimizer of item ``j``'s subproblem, exposure term included."""
    if not lambda_j > 0:
        raise ValueError("lambda_j must be > 0")
    idx = np.asarray(interacted_users, dtype=np.int64)
    base = alpha0 * G_U + lambda_ex * np.outer(s, s)
    return row_system_solve(U[idx], base, lambda_j)


def update_v(R: FeedbackMatrix, U: np.ndarray, s: np.ndarray, weights: TikhonovWeights,
             params: AdmmParams, threads: int = 1, counter: OpCounter | None = None) -> np.ndarray:
    G_U = gramian(U)
    base = params.alpha0 * G_U + params.lambda_ex * np.outer(s, s)
    if counter is not None:
        counter.add("admm_v", 2, U.shape[0] * U.shape[1] ** 2)
    return solve_rows(R.item_indptr, R.item_indices, U, base, weights.item_weights,
                      threads=threads, counter=counter, phase="admm_v")


# ---------------------------------------------------------------------------
# user step


def gradient_u_row(interacted_items, V: np.ndarray, G_V: np.ndarray, u_i: np.ndarray,
                   alpha0: float, lambda_i: float) -> np.ndarray:
    """Gradient of the iALS loss with respect to one user row."""
    idx = np.asarray(interacted_items, dtype=np.int64)
    Vi = V[idx]
    return Vi.T @ (Vi @ u_i) + alpha0 * (G_V @ u_i) + lambda_i * u_i - Vi.sum(axis=0)


def _residual_matmul(indptr, indices, A: np.ndarray, B: np.ndarray, block: range, n_cols: int) -> np.ndarray:
    """For rows in ``block``: ``sum_j r_ij (a_i . b_j - 1) b_j`` over stored ``j``."""
    lo, hi = indptr[block.start], indptr[block.stop]
    local_ptr = indptr[block.start:block.stop + 1] - lo
    cols = indices[lo:hi]
    rows = np.repeat(np.arange(len(block)), np.diff(local_ptr))
    resid = np.einsum("ij,ij->i", A[block.start + rows], B[cols]) - 1.0
    M = sp.csr_matrix((resid, cols, local_ptr), shape=(len(block), n_cols))
    return M @ B


def gradient_u(R: FeedbackMatrix, U: np.ndarray, V: np.ndarray, G_V: np.ndarray,
               user_weights: np.ndarray, alpha0: float, threads: int = 1) -> np.ndarray:
    """All user-row gradients of the iALS loss, each row computed independently."""
    out = np.empty_like(U)
    GVa = alpha0 * G_V

    def work(block: range) -> None:
        sl = slice(block.start, block.stop)
        out[sl] = (_residual_matmul(R.user_indptr, R.user_indices, U, V, block, R.n_items)
                   + U[sl] @ GVa + user_weights[sl, None] * U[sl])

    parallel_rows(R.n_users, work, threads)
    return out


def gradient_v(R: FeedbackMatrix, U: np.ndarray, V: np.ndarray, G_U: np.ndarray,
               item_weights: np.ndarray, alpha0: float, threads: int = 1) -> np.ndarray:
    """All item-row gradients of the iALS loss (exposure term excluded)."""
    out = np.empty_like(V)
    GUa = alpha0 * G_U

    def work(block: range) -> None:
        sl = slice(block.start, block.stop)
        out[sl] = (_residual_matmul(R.item_indptr, R.item_indices, V, U, block, R.n_users)
                   + V[sl] @ GUa + item_weights[sl, None] * V[sl])

    parallel_rows(R.n_items, work, threads)
    return out


def prox_coefficient(n: int, rho: float, gamma: float) -> float:
    """``1 / (n**2 * (1/n + 1/(rho*gamma)))``, rearranged to stay finite for tiny ``rho``."""
    rg = rho * gamma
    return rg / (n * (rg + n))


def proximal_map(U_tilde: np.ndarray, s: np.ndarray, w: np.ndarray, rho: float, gamma: float,
                 threads: int = 1) -> np.ndarray:
    """Closed-form proximal step for the ADMM penalty on the user mean.

    Minimizes ``rho/2 |mean(U) - s + w|^2 + 1/(2 gamma) |U - U_tilde|_F^2``
    by shifting every row toward ``s - w`` and removing a shared multiple of
    the column sum, so the ``n x n`` system is never formed.
    """
    if not (rho > 0 and gamma > 0):
        raise ValueError("rho and gamma must be > 0")
    n = U_tilde.shape[0]
    shift = (rho * gamma / n) * (s - w)
    U_hat = U_tilde + shift
    t = U_hat.sum(axis=0)
    correction = prox_coefficient(n, rho, gamma) * t
    out = np.empty_like(U_hat)

    def work(block: range) -> None:
        sl = slice(block.start, block.stop)
        out[sl] = U_hat[sl] - correction

    parallel_rows(n, work, threads)
    return out


def update_u(state: ExAdmmState, R: FeedbackMatrix, weights: TikhonovWeights, params: AdmmParams,
             G_V: np.ndarray | None = None, threads: int = 1,
             counter: OpCounter | None = None) -> np.ndarray:
    """Gradient step on the iALS loss at ``state.U`` followed by the proximal map.

    ``state.V`` must already hold this epoch's item embeddings.
    """
    V = state.V
    if G_V is None:
        G_V = gramian(V)
    grad = gradient_u(R, state.U, V, G_V, weights.user_weights, params.alpha0, threads)
    U_tilde = state.U - params.gamma * grad
    out = proximal_map(U_tilde, state.s, state.w, params.rho, params.gamma, threads)
    if counter is not None:
        n, d = state.U.shape
        # residual scores + sparse product (2 nnz d), U G_V (n d^2), shifts (4 n d)
        counter.add("admm_u", 2, 2 * R.nnz * d + n * d * d)
        counter.add("admm_u", 1, 4 * n * d)
    return out


# ---------------------------------------------------------------------------
# s and w steps


def update_s(G_V: np.ndarray, U: np.ndarray, w: np.ndarray, lambda_ex: float, rho: float,
             mean: np.ndarray | None = None) -> np.ndarray:
    """Minimizer of ``lambda_ex/2 |V s|^2 + rho/2 |mean(U) - s + w|^2`` over ``s``.

    Solved as ``((lambda_ex / rho) G_V + I) s = mean(U) + w``, which equals
    ``rho (lambda_ex G_V + rho I)^-1 (mean(U) + w)`` and is exact when
    ``lambda_ex = 0``.
    """
    if not rho > 0:
        raise ValueError("rho must be > 0")
    if mean is None:
        mean = user_mean(U)
    A = (lambda_ex / rho) * G_V
    A[np.diag_indices_from(A)] += 1.0
    return spd_solve(A, mean + w)


def update_w(w: np.ndarray, U: np.ndarray, s: np.ndarray, mean: np.ndarray | None = None) -> np.ndarray:
    """Scaled dual ascent ``w + mean(U) - s``."""
    if mean is None:
        mean = user_mean(U)
    return w + mean - s


def exadmm_epoch(state: ExAdmmState, R: FeedbackMatrix, weights: TikhonovWeights, params: AdmmParams,
                 threads: int = 1, counter: OpCounter | None = None) -> ExAdmmState:
    """One full pass in the order items, users, ``s``, ``w``; returns a new state."""
    V = update_v(R, state.U, state.s, weights, params, threads, counter)
    G_V = gramian(V)
    if counter is not None:
        counter.add("admm_gv", 2, V.shape[0] * V.shape[1] ** 2)
    mid = ExAdmmState(state.U, V, state.s, state.w, state.epoch)
    U = update_u(mid, R, weights, params, G_V, threads, counter)
    mean = user_mean(U)
    s = update_s(G_V, U, state.w, params.lambda_ex, params.rho, mean=mean)
    w = update_w(state.w, U, s, mean=mean)
    if counter is not None:
        d = U.shape[1]
        counter.add("admm_s", 3, d ** 3)
        counter.add("admm_s", 1, U.shape[0] * d)
        counter.add("admm_w", 1, 2 * d)
    return ExAdmmState(U, V, s, w, state.epoch + 1)


# ---------------------------------------------------------------------------
# convergence bounds


@dataclass
class ConvergenceBounds:
    """Running maxima of the iterate norms and the step-size limits they imply."""

    c_v: float = 0.0
    c_u: float = 0.0
    c_s: float = 0.0
    gamma_max: float = math.inf
    rho_min: float = 0.0

    def observe(self, state: ExAdmmState) -> None:
        self.c_v = max(self.c_v, float(np.sum(state.V ** 2)))
        self.c_u = max(self.c_u, float(np.sum(state.U ** 2)))
        self.c_s = max(self.c_s, float(state.s @ state.s))

    def refresh(self, alpha0: float, lambda_ex: float, weights: TikhonovWeights, n_users: int) -> None:
        self.gamma_max = gamma_upper_bound(self, alpha0, weights.user_max, n_users)
        self.rho_min = rho_lower_bound(self, lambda_ex, weights.item_min)


def gamma_upper_bound(bounds: ConvergenceBounds, alpha0: float, lambda_u_max: float, n_users: int) -> float:
    """Largest step size covered by the convergence guarantee."""
    return 1.0 / (math.sqrt(n_users) * ((1.0 + alpha0) * bounds.c_v + lambda_u_max) + 1.0)


def rho_lower_bound(bounds: ConvergenceBounds, lambda_ex: float, lambda_v_min: float) -> float:
    """Smallest penalty weight covered by the convergence guarantee."""
    if not lambda_v_min > 0:
        raise ValueError("lambda_v_min must be > 0")
    first = 24.0 * lambda_ex ** 2 * bounds.c_v * bounds.c_s / lambda_v_min
    second = 0.5 + math.sqrt(0.25 + 6.0 * lambda_ex ** 2 * bounds.c_v ** 2)
    return max(first, second)


def calibrate(R: FeedbackMatrix, hp: ExAdmmHyperParams, pilot_epochs: int | None = None,
              margin: float = 2.0, max_rounds: int = 8) -> tuple[float, float, ConvergenceBounds]:
    """Pick ``(rho_star, gamma)`` that satisfy the bounds with a safety margin.

    An iALS pilot (the ``lambda_ex = 0`` limit) gives a first estimate
    of the norm constants. exADMM pilots then run with the implied step
    sizes; whenever a pilot's iterates exceed the constants, the constants
    are raised to the observed maxima times ``margin`` and the step sizes
    re-derived.

    Pilots default to ``hp.base.epochs`` epochs from the training seed, so
    when the last pilot stays inside its bounds the training run (which
    repeats it) does too. Shorter pilots are cheaper but only a heuristic.
    """
    if pilot_epochs is None:
        pilot_epochs = hp.base.epochs
    base = replace(hp.base, epochs=pilot_epochs)
    weights = tikhonov_weights(R, base)
    lam, _ = reparametrize(hp, R.n_users)
    rng = np.random.default_rng(base.seed)
    U = init_embeddings(R.n_users, base, rng)
    V = init_embeddings(R.n_items, base, rng)
    seen = ConvergenceBounds()
    seen.observe(ExAdmmState(U, V, user_mean(U), np.zeros(base.d)))
    for _ in range(pilot_epochs):
        U = update_users(R, V, weights, base.alpha0)
        V = update_items(R, U, weights, base.alpha0)
        seen.observe(ExAdmmState(U, V, user_mean(U), np.zeros(base.d)))

    def inflated() -> ConvergenceBounds:
        b = ConvergenceBounds(seen.c_v * margin, seen.c_u * margin, seen.c_s * margin)
        b.refresh(base.alpha0, lam, weights, R.n_users)
        return b

    bounds = inflated()
    for _ in range(max_rounds):
        params = AdmmParams(base.alpha0, lam, bounds.rho_min * margin, bounds.gamma_max)
        state = init_state(R, base)
        seen.observe(state)
        for _ in range(pilot_epochs):
            state = exadmm_epoch(state, R, weights, params)
            seen.observe(state)
        if seen.c_v <= bounds.c_v and seen.c_u <= bounds.c_u and seen.c_s <= bounds.c_s:
            break
        bounds = inflated()
    rho = bounds.rho_min * margin
    return rho / float(R.n_users) ** 2, bounds.gamma_max, bounds


# ---------------------------------------------------------------------------
# training driver


@dataclass
class ExAdmmModel:
    state: ExAdmmState
    weights: TikhonovWeights
    hp: ExAdmmHyperParams
    params: AdmmParams
    bounds: ConvergenceBounds
    history: list = field(default_factory=list)
    train_seconds: float = 0.0
    bounds_held: bool = True

    @property
    def U(self) -> np.ndarray:
        return self.state.U

    @property
    def V(self) -> np.ndarray:
        return self.state.V


def train_exadmm(R: FeedbackMatrix, hp: ExAdmmHyperParams, threads: int = 1, diagnostics: bool = False,
                 epochs: int | None = None, track_objective: bool = False,
                 callback: Callable[[ExAdmmState], None] | None = None) -> ExAdmmModel:
    """Run exADMM for ``hp.base.epochs`` epochs (or ``epochs`` if given).

    Bound checks on ``rho`` and ``gamma`` use running maxima of the iterate
    norms and only warn. With ``diagnostics`` each history entry is a full
    :class:`~exadmm.diagnostics.EpochDiagnostics`; otherwise it records the
    bound flags, plus ``lagrangian`` and ``ials_loss`` with ``track_objective``.
    """
    from .diagnostics import augmented_lagrangian, epoch_diagnostics
    from .ials import ials_objective

    base = hp.base
    weights = tikhonov_weights(R, base)
    params = derive_params(hp, R.n_users)
    state = init_state(R, base)
    bounds = ConvergenceBounds()
    bounds.observe(state)
    bounds.refresh(params.alpha0, params.lambda_ex, weights, R.n_users)
    history: list = []
    held = True
    warned = False
    elapsed = 0.0
    n_epochs = base.epochs if epochs is None else epochs
    for _ in range(n_epochs):
        t0 = time.perf_counter()
        new = exadmm_epoch(state, R, weights, params, threads)
        elapsed += time.perf_counter() - t0
        bounds.observe(new)
        bounds.refresh(params.alpha0, params.lambda_ex, weights, R.n_users)
        rho_ok = params.rho >= bounds.rho_min
        gamma_ok = params.gamma <= bounds.gamma_max
        if not (rho_ok and gamma_ok):
            held = False
            if not warned:
                warnings.warn(
                    f"epoch {new.epoch}: rho={params.rho:.4g} (min {bounds.rho_min:.4g}), "
                    f"gamma={params.gamma:.4g} (max {bounds.gamma_max:.4g}) outside the convergence bounds",
                    BoundViolationWarning, stacklevel=2)
                warned = True
        if diagnostics:
            history.append(epoch_diagnostics(state, new, R, weights, params, rho_ok, gamma_ok))
        else:
            row = {"epoch": new.epoch, "rho_ok": rho_ok, "gamma_ok": gamma_ok}
            if track_objective:
                row["lagrangian"] = augmented_lagrangian(new, R, weights, params)
                row["ials_loss"] = ials_objective(R, new.U, new.V, weights, params.alpha0)
            history.append(row)
        state = new
        if callback is not None:
            callback(state)
    return ExAdmmModel(state, weights, hp, params, bounds, history, elapsed, held)
