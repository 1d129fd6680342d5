"""Dense helpers shared by the solvers: Gramians, SPD solves, row sweeps."""

from __future__ import annotations

from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve


@dataclass
class OpCounter:
    """Tallies arithmetic by sweep and by polynomial order in ``d``.

    ``order`` 3 is charged for every d x d factorization (d**3 flops),
    order 2 for matrix-vector products, rank-one updates and per-row
    Gramians, order 1 for vector arithmetic. The counts are estimates used
    to check the cost profile of each sweep, not exact flop counts.
    """

    counts: dict = field(default_factory=lambda: defaultdict(int))

    def add(self, phase: str, order: int, amount: int) -> None:
        self.counts[(phase, order)] += int(amount)

    def total(self, phase: str, order: int) -> int:
        return self.counts.get((phase, order), 0)

    def phases(self) -> set[str]:
        return {p for p, _ in self.counts}

    def reset(self) -> None:
        self.counts.clear()


def gramian(E: np.ndarray) -> np.ndarray:
    """Return ``E.T @ E`` (float64, exactly symmetric)."""
    E = np.asarray(E, dtype=np.float64)
    G = E.T @ E
    return 0.5 * (G + G.T)


def spd_solve(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve ``A x = b`` for symmetric positive-definite ``A`` via Cholesky."""
    try:
        factor = cho_factor(A, lower=True, check_finite=False)
    except LinAlgError as exc:
        raise LinAlgError(f"system matrix is not positive definite: {exc}") from None
    return cho_solve(factor, b, check_finite=False)


def row_system_solve(E_rows: np.ndarray, base: np.ndarray, lam: float) -> np.ndarray:
    """Solve ``(E_rows^T E_rows + base + lam I) x = E_rows^T 1``.

    This is the closed-form minimizer shared by the iALS user/item updates and
    the exADMM item update (where ``base`` also carries the rank-one term).
    """
    A = E_rows.T @ E_rows + base
    A[np.diag_indices_from(A)] += lam
    b = E_rows.sum(axis=0)
    return spd_solve(A, b)


def chunks(n: int, parts: int) -> list[range]:
    parts = max(1, min(parts, n)) if n else 1
    bounds = np.linspace(0, n, parts + 1).astype(int)
    return [range(bounds[k], bounds[k + 1]) for k in range(parts)]


def parallel_rows(n: int, fn: Callable[[range], None], threads: int = 1) -> None:
    """Run ``fn`` over contiguous row blocks, on a thread pool when ``threads > 1``.

    ``fn`` must only write rows inside its block. Each row is computed by the
    same code regardless of blocking, so results do not depend on ``threads``.
    """
    blocks = chunks(n, threads)
    if threads <= 1 or len(blocks) == 1:
        for blk in blocks:
            fn(blk)
        return
    with ThreadPoolExecutor(max_workers=threads) as pool:
        list(pool.map(fn, blocks))


def solve_rows(indptr: np.ndarray, indices: np.ndarray, E: np.ndarray, base: np.ndarray,
               lams: np.ndarray, threads: int = 1, counter: OpCounter | None = None,
               phase: str = "rows") -> np.ndarray:
    """Closed-form update of every row against the fixed factor ``E``."""
    n = indptr.size - 1
    d = E.shape[1]
    out = np.empty((n, d), dtype=np.float64)

    def work(block: range) -> None:
        for r in block:
            idx = indices[indptr[r]:indptr[r + 1]]
            out[r] = row_system_solve(E[idx], base, lams[r])

    parallel_rows(n, work, threads)
    if counter is not None:
        counter.add(phase, 3, n * d ** 3)
        counter.add(phase, 2, int(indices.size) * d * d + n * d * d)
    return out
