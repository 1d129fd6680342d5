"""Convergence diagnostics for exADMM runs.

Everything here is a pure function of solver states. Gradients are the
analytic ones built from the same blocks as the solver; finite differences
live in the tests only.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from .admm import AdmmParams, ExAdmmState, gradient_u, gradient_v, user_mean
from .data import FeedbackMatrix
from .ials import TikhonovWeights, ials_objective
from .io import append_rows
from .linalg import gramian


def fairness_regularizer(U: np.ndarray, V: np.ndarray) -> float:
    """Mean over items of the squared user-averaged predicted score."""
    m = user_mean(U)
    scores = V @ m
    return float(scores @ scores) / V.shape[0]


def augmented_lagrangian(state: ExAdmmState, R: FeedbackMatrix, weights: TikhonovWeights,
                         params: AdmmParams) -> float:
    U, V, s, w = state.U, state.V, state.s, state.w
    Vs = V @ s
    r = user_mean(U) - s + w
    return (ials_objective(R, U, V, weights, params.alpha0)
            + 0.5 * params.lambda_ex * float(Vs @ Vs)
            + 0.5 * params.rho * float(r @ r)
            - 0.5 * params.rho * float(w @ w))


def lagrangian_gradients(state: ExAdmmState, R: FeedbackMatrix, weights: TikhonovWeights,
                         params: AdmmParams) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of the augmented Lagrangian with respect to ``V, U, s, w``."""
    U, V, s, w = state.U, state.V, state.s, state.w
    n = U.shape[0]
    m = user_mean(U)
    r = m - s + w
    G_U, G_V = gramian(U), gramian(V)
    g_v = gradient_v(R, U, V, G_U, weights.item_weights, params.alpha0)
    g_v += params.lambda_ex * np.outer(V @ s, s)
    g_u = gradient_u(R, U, V, G_V, weights.user_weights, params.alpha0)
    g_u += (params.rho / n) * r
    g_s = params.lambda_ex * (G_V @ s) - params.rho * r
    g_w = params.rho * (m - s)
    return g_v, g_u, g_s, g_w


def gradient_norms(state: ExAdmmState, R: FeedbackMatrix, weights: TikhonovWeights,
                   params: AdmmParams) -> tuple[float, float, float, float]:
    return tuple(float(np.linalg.norm(g)) for g in lagrangian_gradients(state, R, weights, params))


@dataclass
class EpochDiagnostics:
    epoch: int
    lagrangian: float
    ials_loss: float
    r_ex: float
    residual_v: float
    residual_u: float
    residual_s: float
    residual_w: float
    feasibility_gap: float
    grad_norm_v: float
    grad_norm_u: float
    grad_norm_s: float
    grad_norm_w: float
    rho_ok: bool
    gamma_ok: bool
    # change of L_rho over the s-step alone, and the -(rho/2)|ds|^2 bound it must respect
    s_step_delta: float = 0.0
    s_step_bound: float = 0.0

    def as_row(self) -> dict:
        return asdict(self)


DIAGNOSTIC_FIELDS = [f.name for f in fields(EpochDiagnostics)]


def epoch_diagnostics(prev: ExAdmmState, new: ExAdmmState, R: FeedbackMatrix, weights: TikhonovWeights,
                      params: AdmmParams, rho_ok: bool = True, gamma_ok: bool = True) -> EpochDiagnostics:
    """Diagnostics for the transition ``prev -> new`` (one epoch)."""
    g = gradient_norms(new, R, weights, params)
    before_s = ExAdmmState(new.U, new.V, prev.s, prev.w)
    after_s = ExAdmmState(new.U, new.V, new.s, prev.w)
    ds = new.s - prev.s
    return EpochDiagnostics(
        epoch=new.epoch,
        lagrangian=augmented_lagrangian(new, R, weights, params),
        ials_loss=ials_objective(R, new.U, new.V, weights, params.alpha0),
        r_ex=fairness_regularizer(new.U, new.V),
        residual_v=float(np.linalg.norm(new.V - prev.V)),
        residual_u=float(np.linalg.norm(new.U - prev.U)),
        residual_s=float(np.linalg.norm(ds)),
        residual_w=float(np.linalg.norm(new.w - prev.w)),
        feasibility_gap=float(np.linalg.norm(user_mean(new.U) - new.s)),
        grad_norm_v=g[0], grad_norm_u=g[1], grad_norm_s=g[2], grad_norm_w=g[3],
        rho_ok=bool(rho_ok), gamma_ok=bool(gamma_ok),
        s_step_delta=(augmented_lagrangian(after_s, R, weights, params)
                      - augmented_lagrangian(before_s, R, weights, params)),
        s_step_bound=-0.5 * params.rho * float(ds @ ds),
    )


@dataclass
class ConvergenceSummary:
    epochs: int
    max_lagrangian_increase: float
    final_residual_v: float
    final_residual_u: float
    final_residual_s: float
    final_residual_w: float
    final_feasibility_gap: float
    bounds_held: bool
    tolerance: float

    @property
    def converged(self) -> bool:
        return max(self.final_residual_v, self.final_residual_u, self.final_residual_s,
                   self.final_residual_w, self.final_feasibility_gap) < self.tolerance

    def as_dict(self) -> dict:
        out = asdict(self)
        out["converged"] = self.converged
        return out


def convergence_report(log: list[EpochDiagnostics], tolerance: float = 1e-6) -> ConvergenceSummary:
    """Summarize a per-epoch log; reports rather than enforces ``tolerance``."""
    if len(log) < 2:
        raise ValueError("convergence_report needs at least two epochs")
    lag = np.array([e.lagrangian for e in log])
    last = log[-1]
    return ConvergenceSummary(
        epochs=len(log),
        max_lagrangian_increase=float(np.max(np.diff(lag))),
        final_residual_v=last.residual_v,
        final_residual_u=last.residual_u,
        final_residual_s=last.residual_s,
        final_residual_w=last.residual_w,
        final_feasibility_gap=last.feasibility_gap,
        bounds_held=all(e.rho_ok and e.gamma_ok for e in log),
        tolerance=tolerance,
    )


def write_diagnostics(path, log: list[EpochDiagnostics]) -> None:
    append_rows(path, DIAGNOSTIC_FIELDS, (e.as_row() for e in log))


def read_diagnostics(path) -> list[EpochDiagnostics]:
    from .io import read_rows

    out = []
    for row in read_rows(path):
        kw = {}
        for f in fields(EpochDiagnostics):
            v = row[f.name]
            if f.name == "epoch":
                kw[f.name] = int(v)
            elif f.name in ("rho_ok", "gamma_ok"):
                kw[f.name] = v in ("1", "True", "true")
            else:
                kw[f.name] = float(v)
        out.append(EpochDiagnostics(**kw))
    return out
