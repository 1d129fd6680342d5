"""Acceptance suite: one test per criterion, each reporting a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v``; the per-criterion lines are
printed in the terminal summary. ``EPINIONS_PATH`` may point at the raw
Epinions ratings file to enable the real-data count check of criterion 10.
"""

import contextlib
import math
import os
import time
import warnings
from collections import defaultdict

import numpy as np
import pytest

from exadmm.admm import (BoundViolationWarning, ExAdmmHyperParams, calibrate, derive_params, exadmm_epoch,
                         gradient_u, gradient_u_row, gradient_v, init_state, proximal_map, train_exadmm,
                         update_u, update_v, update_v_row)
from exadmm.cli import main
from exadmm.data import SplitSpec, build_matrix, load_bundle, strong_generalization_split
from exadmm.diagnostics import augmented_lagrangian, convergence_report, gradient_norms, lagrangian_gradients
from exadmm.evaluate import evaluate_holdout
from exadmm.ials import (IalsHyperParams, ials_epoch, ials_objective, init_embeddings, solve_user_row,
                         tikhonov_weights, train_ials, update_items)
from exadmm.linalg import OpCounter, gramian
from exadmm.metrics import exposure_accumulate, gini_at_k, lorenz_curve, ndcg_at_k
from exadmm.synthetic import popularity_skewed, random_binary

RESULTS = {}

TITLES = {
    1: "proximal map equals explicit inverse",
    2: "analytic gradients match finite differences",
    3: "Lagrangian monotone and residuals vanish under the bounds",
    4: "iALS half-sweeps monotone and rows stationary",
    5: "exADMM without the fairness term tracks iALS",
    6: "fairness weight lowers Gini and lifts the Lorenz curve",
    7: "ranking metric oracles",
    8: "per-epoch cost profile",
    9: "s-step decrease and Lagrangian lower bound",
    10: "Epinions-protocol ingestion",
}


@contextlib.contextmanager
def criterion(n):
    """Record PASS/FAIL for criterion ``n``; yields a dict for detail notes."""
    notes = {}
    try:
        yield notes
    except BaseException as exc:
        RESULTS[n] = ("FAIL", f"{type(exc).__name__}: {str(exc).splitlines()[0] if str(exc) else ''}")
        raise
    RESULTS[n] = ("PASS", ", ".join(f"{k}={v}" for k, v in notes.items()))


def report_lines():
    out = []
    for n in sorted(TITLES):
        status, detail = RESULTS.get(n, ("NOT RUN", ""))
        out.append(f"criterion {n:2d} [{status}] {TITLES[n]}" + (f" ({detail})" if detail else ""))
    return out


# --- shared setups ------------------------------------------------------------------------

# 30 x 20 synthetic set with a non-trivial optimum (embeddings stay away from zero)
SMALL = dict(n_users=30, n_items=20, density=0.2, seed=0)
SMALL_BASE = IalsHyperParams(d=4, lambda_l2=0.6, alpha0=0.1, epochs=500, seed=0)
SMALL_LAMBDA_STAR = 0.01


def small_matrix():
    return build_matrix(random_binary(**SMALL))


_bounded_run = {}


def bounded_run():
    """Criterion-3 run: step sizes from the bounds, with diagnostics on."""
    if "model" not in _bounded_run:
        R = small_matrix()
        rho_star, gamma, _ = calibrate(R, ExAdmmHyperParams(SMALL_BASE, SMALL_LAMBDA_STAR, 1.0, 1.0))
        hp = ExAdmmHyperParams(SMALL_BASE, SMALL_LAMBDA_STAR, rho_star, gamma)
        with warnings.catch_warnings():
            warnings.simplefilter("error", BoundViolationWarning)
            _bounded_run["model"] = train_exadmm(R, hp, diagnostics=True)
    return _bounded_run["model"]


def naive_prox(U_tilde, s, w, rho, gamma):
    n = U_tilde.shape[0]
    A = (rho / n ** 2) * np.ones((n, n)) + np.eye(n) / gamma
    B = U_tilde / gamma + (rho / n) * np.outer(np.ones(n), s - w)
    return np.linalg.inv(A) @ B


def random_state(R, d, rng):
    st = init_state(R, IalsHyperParams(d=d))
    st.U = rng.normal(size=(R.n_users, d))
    st.V = rng.normal(size=(R.n_items, d))
    st.s = rng.normal(size=d)
    st.w = rng.normal(size=d)
    return st


def central_difference(f, X, h):
    G = np.zeros_like(X)
    it = np.nditer(X, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = X[idx]
        X[idx] = old + h
        fp = f()
        X[idx] = old - h
        fm = f()
        X[idx] = old
        G[idx] = (fp - fm) / (2 * h)
    return G


def rel_err(a, b):
    return float(np.linalg.norm(a - b) / np.linalg.norm(b))


# --- criteria -------------------------------------------------------------------------------

def test_criterion_01_prox_oracle():
    with criterion(1) as notes:
        rng = np.random.default_rng(0)
        worst = 0.0
        for _ in range(100):
            n, d = int(rng.integers(1, 201)), int(rng.integers(1, 9))
            rho, gamma = 10 ** rng.uniform(-3, 3), 10 ** rng.uniform(-3, 0)
            Ut, s, w = rng.normal(size=(n, d)), rng.normal(size=d), rng.normal(size=d)
            want = naive_prox(Ut, s, w, rho, gamma)
            worst = max(worst, rel_err(proximal_map(Ut, s, w, rho, gamma), want))
        notes["max_rel_err"] = f"{worst:.1e}"
        assert worst <= 1e-10


def test_criterion_02_gradients():
    with criterion(2) as notes:
        rng = np.random.default_rng(1)
        worst = 0.0
        for trial in range(50):
            n, m, d = int(rng.integers(3, 8)), int(rng.integers(3, 7)), int(rng.integers(1, 4))
            R = build_matrix(random_binary(n, m, 0.5, seed=trial))
            n, m = R.shape
            hp = IalsHyperParams(d=d, alpha0=rng.uniform(0.05, 1), lambda_l2=rng.uniform(0.01, 1))
            w = tikhonov_weights(R, hp)
            params = derive_params(ExAdmmHyperParams(hp, rng.uniform(0, 0.1), rng.uniform(0.01, 0.5), 0.1), n)
            st = random_state(R, d, rng)
            lag = lambda: augmented_lagrangian(st, R, w, params)  # noqa: E731
            fds = [central_difference(lag, X, 1e-6) for X in (st.V, st.U, st.s, st.w)]
            for fd, g, gn in zip(fds, lagrangian_gradients(st, R, w, params), gradient_norms(st, R, w, params)):
                worst = max(worst, rel_err(g, fd), abs(gn - np.linalg.norm(fd)) / np.linalg.norm(fd))
            # single user row against the row loss
            i = int(rng.integers(n))
            items = R.items_of(i)
            G = gramian(st.V)
            u = st.U[i].copy()

            def row_loss():
                r = st.V[items] @ u
                return 0.5 * np.sum((1 - r) ** 2) + 0.5 * hp.alpha0 * u @ G @ u + 0.5 * w.user_weights[i] * u @ u

            fd_row = central_difference(row_loss, u, 1e-6)
            g_row = gradient_u_row(items, st.V, G, u, hp.alpha0, w.user_weights[i])
            worst = max(worst, rel_err(g_row, fd_row))
        notes["max_rel_err"] = f"{worst:.1e}"
        assert worst <= 1e-4


def test_criterion_03_bounded_convergence():
    with criterion(3) as notes:
        t0 = time.perf_counter()
        model = bounded_run()
        h = model.history
        summary = convergence_report(h, tolerance=1e-6)
        start = augmented_lagrangian(init_state(small_matrix(), SMALL_BASE), small_matrix(), model.weights,
                                     model.params)
        lags = [start] + [e.lagrangian for e in h]
        increases = [b - a for a, b in zip(lags, lags[1:])]
        notes["epochs"] = len(h)
        notes["max_increase"] = f"{max(increases):.1e}"
        last = h[-1]
        notes["final_max_residual"] = "%.1e" % max(last.residual_v, last.residual_u, last.residual_s,
                                                   last.residual_w, last.feasibility_gap)
        notes["|U|"] = f"{np.linalg.norm(model.U):.3f}"
        assert len(h) <= 500 and all(e.rho_ok and e.gamma_ok for e in h)
        assert max(increases) <= 1e-8
        assert summary.converged
        assert np.linalg.norm(model.U) > 0.1  # optimum is not the trivial zero point
        assert time.perf_counter() - t0 < 60


def test_criterion_04_ials_exactness():
    with criterion(4) as notes:
        R = small_matrix()
        hp = IalsHyperParams(d=4, lambda_l2=0.05, alpha0=0.1, epochs=30, seed=3)
        prev = {}
        model = train_ials(R, hp, callback=lambda e, U, V: prev.update({e: V.copy()}))
        objs = [model.history[0]["objective"]]
        for row in model.history[1:]:
            objs += [row["objective_after_u"], row["objective"]]
        slack = 1e-12 * abs(objs[0])
        assert all(b <= a + slack for a, b in zip(objs, objs[1:]))
        w = model.weights
        V_before = prev[hp.epochs - 1]
        g_u = gradient_u(R, model.U, V_before, gramian(V_before), w.user_weights, hp.alpha0)
        g_v = gradient_v(R, model.U, model.V, gramian(model.U), w.item_weights, hp.alpha0)
        res = max(np.linalg.norm(g_u, axis=1).max(), np.linalg.norm(g_v, axis=1).max())
        notes["half_sweeps"] = len(objs) - 1
        notes["max_row_residual"] = f"{res:.1e}"
        assert res <= 1e-8


def test_criterion_05_reduction():
    with criterion(5) as notes:
        R = small_matrix()
        base = IalsHyperParams(d=4, lambda_l2=0.6, alpha0=0.1, epochs=50, seed=0)
        _, gamma, _ = calibrate(R, ExAdmmHyperParams(base, 0.0, 1.0, 1.0))
        with warnings.catch_warnings():
            # rho_star = 1e-12 sits below the rho bound by construction
            warnings.simplefilter("ignore", BoundViolationWarning)
            ex = train_exadmm(R, ExAdmmHyperParams(base, 0.0, 1e-12, gamma))
        ref = train_ials(R, base)
        a = ials_objective(R, ex.U, ex.V, ex.weights, base.alpha0)
        b = ref.history[-1]["objective"]
        notes["rel_gap"] = f"{abs(a - b) / b:.4f}"
        notes["gamma"] = f"{gamma:.4g}"
        assert abs(a - b) <= 0.02 * b
        # item step with lambda_ex = 0 is the iALS item step, bit for bit
        rng = np.random.default_rng(5)
        U = rng.normal(size=(R.n_users, 4))
        w = tikhonov_weights(R, base)
        s = rng.normal(size=4)
        G = gramian(U)
        for j in range(R.n_items):
            users = R.users_of(j)
            assert np.array_equal(update_v_row(users, U, G, s, base.alpha0, 0.0, w.item_weights[j]),
                                  solve_user_row(users, U, G, base.alpha0, w.item_weights[j]))
        params = derive_params(ExAdmmHyperParams(base, 0.0, 1e-12, gamma), R.n_users)
        assert np.array_equal(update_v(R, U, s, w, params, threads=1), update_items(R, U, w, base.alpha0))


@pytest.mark.slow
def test_criterion_06_fairness_trend():
    with criterion(6) as notes:
        t0 = time.perf_counter()
        bundle = strong_generalization_split(popularity_skewed(500, 300, interactions_per_user=20, seed=1),
                                             SplitSpec(seed=1))
        foldin, target = bundle.holdout("test")
        base = IalsHyperParams(d=16, epochs=50, seed=0)
        ginis, curves = [], []
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", BoundViolationWarning)
            for lam in (0.0, 0.01, 1.0):
                hp = ExAdmmHyperParams(base, lam, 1.0, 0.01)
                model = train_exadmm(bundle.train, hp)
                res = evaluate_holdout(model.V, base, foldin, target, [10])
                ginis.append(res.gini[10])
                curves.append(lorenz_curve(res.exposure[10]))
        notes["gini@10"] = "/".join(f"{g:.5f}" for g in ginis)
        assert ginis[0] > ginis[1] > ginis[2]
        assert np.all(curves[2][:, 1] >= curves[0][:, 1] - 1e-12)
        assert time.perf_counter() - t0 < 300


def _best_time(fn, reps=3):
    times = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


@pytest.mark.slow
def test_criterion_08_cost_profile():
    with criterion(8) as notes:
        R = build_matrix(popularity_skewed(2000, 1000, interactions_per_user=30, seed=0))
        ials_t, admm_t, u_t, ops = {}, {}, {}, {}
        for d in (128, 256):
            hp = IalsHyperParams(d=d)
            w = tikhonov_weights(R, hp)
            rng = np.random.default_rng(0)
            U, V = init_embeddings(R.n_users, hp, rng), init_embeddings(R.n_items, hp, rng)
            params = derive_params(ExAdmmHyperParams(hp, 1e-3, 1.0, 0.01), R.n_users)
            st = init_state(R, hp)
            G_V = gramian(st.V)
            ials_t[d] = _best_time(lambda: ials_epoch(R, U, V, w, hp, threads=1))
            admm_t[d] = _best_time(lambda: exadmm_epoch(st, R, w, params, threads=1))
            u_t[d] = _best_time(lambda: update_u(st, R, w, params, G_V))
            c = OpCounter()
            ials_epoch(R, U, V, w, hp, counter=c)
            exadmm_epoch(st, R, w, params, counter=c)
            ops[d] = c
        ratio = admm_t[128] / ials_t[128]
        ials_growth = ials_t[256] / ials_t[128]
        u_growth = u_t[256] / u_t[128]
        notes["admm/ials"] = f"{ratio:.2f}"
        notes["ials_x"] = f"{ials_growth:.2f}"
        notes["u_sweep_x"] = f"{u_growth:.2f}"
        assert ratio <= 3.0
        assert ials_growth > 2.0
        assert u_growth <= 4.0
        assert ops[128].total("admm_u", 3) == 0 and ops[256].total("admm_u", 3) == 0
        assert ops[256].total("admm_u", 2) <= 4 * ops[128].total("admm_u", 2)
        for phase in ("ials_u", "ials_v"):
            assert ops[256].total(phase, 3) == 8 * ops[128].total(phase, 3) > 0


def test_criterion_07_metric_oracles():
    with criterion(7) as notes:
        rng = np.random.default_rng(7)
        worst = 0.0
        for _ in range(100):
            n = int(rng.integers(1, 501))
            o = rng.random(n) * (rng.random(n) < 0.7)
            o[0] += 0.5
            naive = sum(abs(a - b) for a in o for b in o) / (2 * o.sum() * n * n)
            worst = max(worst, abs(gini_at_k(o) - naive))
        notes["max_gini_err"] = f"{worst:.1e}"
        assert worst <= 1e-12
        assert ndcg_at_k([4], {4}, 1) == 1.0
        assert ndcg_at_k([0, 4], {4}, 2) == 1 / math.log2(3)
        assert ndcg_at_k([0, 1, 2], {7}, 3) == 0.0
        assert abs(gini_at_k([1, 0, 0, 0]) - 0.1875) <= 1e-15
        assert abs(gini_at_k([1, 2, 3]) - 2 / 27) <= 1e-15
        assert gini_at_k([1, 1, 1, 1]) == 0.0
        o = exposure_accumulate([[2, 0, 5]], 6, 3)
        assert o[2] == 1.0 and o[5] == 0.5


def test_criterion_09_s_step_and_lower_bound():
    with criterion(9) as notes:
        model = bounded_run()
        p, c_v = model.params, model.bounds.c_v
        assert p.rho >= p.lambda_ex * c_v
        s_gap = max(e.s_step_delta - e.s_step_bound for e in model.history)
        low = min(e.lagrangian - 0.5 * (p.rho - p.lambda_ex * c_v) * e.feasibility_gap ** 2 for e in model.history)
        notes["max_s_excess"] = f"{s_gap:.1e}"
        notes["min_lower_margin"] = f"{low:.3g}"
        assert s_gap <= 1e-8
        assert low >= -1e-8


def write_epinions_like(path, n_users=700, n_items=260, seed=0):
    """Whitespace ``user item rating`` lines with skewed popularity and duplicates."""
    rng = np.random.default_rng(seed)
    pop = np.arange(1, n_items + 1) ** -0.6
    pop /= pop.sum()
    lines = []
    for u in range(n_users):
        k = int(rng.integers(10, 120))
        for j in rng.choice(n_items, size=k, replace=False, p=pop):
            lines.append(f"{u} {j} {rng.choice(5, p=[0.1, 0.1, 0.2, 0.3, 0.3]) + 1}")
        if rng.random() < 0.2:
            lines.append(lines[-1])  # repeated record
    path.write_text("\n".join(lines) + "\n")


def kcore_oracle(path, threshold, k):
    pairs = set()
    for line in path.read_text().splitlines():
        u, i, r = line.split()
        if float(r) >= threshold:
            pairs.add((u, i))
    while True:
        uc, ic = defaultdict(int), defaultdict(int)
        for u, i in pairs:
            uc[u] += 1
            ic[i] += 1
        kept = {(u, i) for u, i in pairs if uc[u] >= k and ic[i] >= k}
        if kept == pairs:
            return pairs
        pairs = kept


def check_bundle(out, pairs, counts):
    bundle = load_bundle(out)
    users = {u for u, _ in pairs}
    train_users = set(bundle.train.user_ids)
    val, test = set(bundle.val_foldin), set(bundle.test_foldin)
    assert not (train_users & val or train_users & test or val & test)
    assert train_users | val | test == users
    n = len(users)
    assert len(val) == math.floor(0.1 * n + 0.5) and len(test) == math.floor(0.1 * n + 0.5)
    items = bundle.item_ids
    got = {(bundle.train.user_ids[r], items[c]) for r, c in zip(*bundle.train.pairs())}
    for split in ("val", "test"):
        f, t = bundle.holdout(split)
        for u in f:
            assert not set(f[u].tolist()) & set(t[u].tolist())
            got |= {(u, items[j]) for j in np.concatenate([f[u], t[u]])}
    assert got == pairs
    assert counts == {"users": n, "items": len({i for _, i in pairs}), "interactions": len(pairs)}


def test_criterion_10_epinions_ingestion(tmp_path, capsys):
    with criterion(10) as notes:
        raw = tmp_path / "ratings_data.txt"
        write_epinions_like(raw)
        out = tmp_path / "epinions"
        args = ["ingest", "--data", str(raw), "--out", str(out), "--threshold", "4", "--min-count", "20",
                "--train-frac", "0.8", "--val-frac", "0.1", "--test-frac", "0.1"]
        capsys.readouterr()
        assert main(args) == 0
        counts = {k: int(v) for k, v in (ln.split("\t") for ln in capsys.readouterr().out.splitlines())}
        pairs = kcore_oracle(raw, 4, 20)
        assert pairs
        check_bundle(out, pairs, counts)
        notes["synthetic"] = f"{counts['users']}u/{counts['items']}i/{counts['interactions']}nnz"
        real = os.environ.get("EPINIONS_PATH")
        if real:
            out_real = tmp_path / "real"
            assert main(["ingest", "--data", real, "--out", str(out_real), "--threshold", "4",
                         "--min-count", "20"]) == 0
            lines = capsys.readouterr().out.splitlines()
            got = {k: int(v) for k, v in (ln.split("\t") for ln in lines)}
            notes["real"] = f"{got['users']}u/{got['items']}i"
            assert abs(got["users"] - 6287) <= 0.05 * 6287
            assert abs(got["items"] - 3999) <= 0.05 * 3999
        else:
            notes["real"] = "skipped, EPINIONS_PATH unset"
