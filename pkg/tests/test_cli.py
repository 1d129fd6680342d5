import numpy as np
import pytest

from exadmm.cli import RunManifest, main
from exadmm.data import DatasetBundle, FeedbackMatrix, SplitSpec, save_bundle
from exadmm.io import Checkpoint, read_kv, read_rows, save_checkpoint

pytestmark = pytest.mark.filterwarnings("ignore::exadmm.admm.BoundViolationWarning")


def write_raw(path, n_users=40, n_items=15, density=0.35, seed=0):
    rng = np.random.default_rng(seed)
    lines = []
    for u in range(n_users):
        for i in range(n_items):
            if rng.random() < density or i == u % n_items:
                lines.append(f"u{u},i{i},{rng.integers(1, 6)}")
    path.write_text("\n".join(lines) + "\n")
    return path


@pytest.fixture
def dataset(tmp_path):
    raw = write_raw(tmp_path / "raw.csv")
    out = tmp_path / "data"
    assert main(["ingest", "--data", str(raw), "--out", str(out), "--seed", "3"]) == 0
    return out


def column(path, name):
    return [float(r[name]) for r in read_rows(path)]


# --- ingest ---------------------------------------------------------------------------------

def test_ingest_counts_printed(tmp_path, capsys):
    raw = write_raw(tmp_path / "raw.csv")
    assert main(["ingest", "--data", str(raw), "--out", str(tmp_path / "d")]) == 0
    printed = dict(line.split("\t") for line in capsys.readouterr().out.splitlines())
    m = read_kv(tmp_path / "d" / "manifest.txt")
    assert printed["users"] == m["n_users"] == "40"
    assert printed["items"] == m["n_items"] == "15"
    n_distinct = len({tuple(line.split(",")[:2]) for line in raw.read_text().splitlines()})
    assert int(printed["interactions"]) == n_distinct


def test_ingest_threshold_and_min_count(tmp_path, capsys):
    raw = write_raw(tmp_path / "raw.csv")
    assert main(["ingest", "--data", str(raw), "--out", str(tmp_path / "d"), "--threshold", "4",
                 "--min-count", "3"]) == 0
    printed = dict(line.split("\t") for line in capsys.readouterr().out.splitlines())
    assert int(printed["interactions"]) < len(raw.read_text().splitlines())


def test_ingest_missing_file(tmp_path):
    assert main(["ingest", "--data", str(tmp_path / "nope.csv"), "--out", str(tmp_path / "d")]) == 2


def test_ingest_bad_fractions(tmp_path):
    raw = write_raw(tmp_path / "raw.csv")
    assert main(["ingest", "--data", str(raw), "--out", str(tmp_path / "d"), "--train-frac", "0.9"]) == 1


def test_ingest_rerun_identical(tmp_path):
    raw = write_raw(tmp_path / "raw.csv")
    for name in ("a", "b"):
        assert main(["ingest", "--data", str(raw), "--out", str(tmp_path / name), "--seed", "7"]) == 0
    for f in ("manifest.txt", "train.tsv", "test_target.tsv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


# --- train --------------------------------------------------------------------------------------

def test_train_ials_objective_non_increasing(dataset, tmp_path):
    out = tmp_path / "ials"
    assert main(["train", "--data", str(dataset), "--out", str(out), "--algo", "ials", "--d", "4",
                 "--epochs", "10", "--serial"]) == 0
    obj = column(out / "epochs.tsv", "objective")
    assert len(obj) == 11 and all(b <= a + 1e-8 for a, b in zip(obj, obj[1:]))
    assert (out / "model.ckpt").is_file() and read_kv(out / "config.txt")["algo"] == "ials"
    man = read_kv(out / "run_manifest.txt")
    assert man["command"] == "train" and man["data_fingerprint"] == read_kv(dataset / "manifest.txt")["fingerprint"]
    assert "version.numpy" in man and "timing.train_seconds" in man


def test_train_exadmm_calibrated_lagrangian_non_increasing(dataset, tmp_path):
    cfg = tmp_path / "c.txt"
    cfg.write_text("lambda_l2=0.6\nd=4\n")
    out = tmp_path / "ex"
    assert main(["train", "--data", str(dataset), "--out", str(out), "--config", str(cfg), "--epochs", "40",
                 "--lambda-ex-star", "0.01", "--rho-star", "auto", "--gamma", "auto", "--serial"]) == 0
    lag = column(out / "epochs.tsv", "lagrangian")
    assert all(b <= a + 1e-8 for a, b in zip(lag, lag[1:]))
    eff = read_kv(out / "config.txt")
    assert eff["rho_star"] != "auto" and float(eff["gamma"]) > 0
    assert read_kv(out / "run_manifest.txt")["bounds_held"] == "True"


def test_train_threads_do_not_change_result(dataset, tmp_path):
    outs = []
    for t in ("1", "3"):
        out = tmp_path / f"t{t}"
        assert main(["train", "--data", str(dataset), "--out", str(out), "--d", "3", "--epochs", "3",
                     "--rho-star", "1", "--gamma", "0.01", "--lambda-ex-star", "0.1", "--threads", t]) == 0
        outs.append((out / "model.ckpt").read_bytes())
    assert outs[0] == outs[1]


def test_train_unknown_algo(dataset, tmp_path):
    assert main(["train", "--data", str(dataset), "--out", str(tmp_path / "x"), "--algo", "svd"]) == 2


def test_train_config_errors_listed(dataset, tmp_path, capsys):
    cfg = tmp_path / "bad.txt"
    cfg.write_text("d=0\nalpha0=-1\nmystery=3\n")
    assert main(["train", "--data", str(dataset), "--out", str(tmp_path / "x"), "--config", str(cfg)]) == 2
    err = capsys.readouterr().err
    for key in ("d", "alpha0", "mystery"):
        assert key in err


def test_train_missing_dataset(tmp_path):
    assert main(["train", "--data", str(tmp_path / "none"), "--out", str(tmp_path / "x")]) == 2


# --- evaluate -----------------------------------------------------------------------------------

@pytest.fixture
def cluster_data(tmp_path):
    items = tuple(f"i{j}" for j in range(8))
    train = FeedbackMatrix.from_pairs([0, 0, 1, 1], [0, 1, 4, 5], 2, 8, user_ids=("t0", "t1"), item_ids=items)
    bundle = DatasetBundle(train, {"v": np.array([0])}, {"v": np.array([1])},
                           {"a": np.array([0, 1]), "b": np.array([5, 6])},
                           {"a": np.array([2, 3]), "b": np.array([4, 7])}, SplitSpec())
    save_bundle(bundle, tmp_path / "cl")
    V = np.zeros((8, 2))
    V[:4, 0] = 1.0
    V[4:, 1] = 1.0
    params = {"d": "2", "alpha0": "0.01", "lambda_l2": "0.01", "eta": "1.0", "seed": "0"}
    save_checkpoint(tmp_path / "cl.ckpt", Checkpoint("ials", np.zeros((2, 2)), V, params))
    return tmp_path / "cl", tmp_path / "cl.ckpt"


def test_evaluate_perfect_memorization(cluster_data, tmp_path):
    data, ckpt = cluster_data
    assert main(["evaluate", "--checkpoint", str(ckpt), "--data", str(data), "--out", str(tmp_path / "ev"),
                 "--k", "2"]) == 0
    rows = read_rows(tmp_path / "ev" / "report.tsv")
    assert len(rows) == 1 and float(rows[0]["ndcg"]) == 1.0 and rows[0]["k"] == "2"


def test_evaluate_k_too_large(cluster_data, tmp_path):
    data, ckpt = cluster_data
    assert main(["evaluate", "--checkpoint", str(ckpt), "--data", str(data), "--out", str(tmp_path / "ev"),
                 "--k", "8"]) == 1


def test_evaluate_dimension_mismatch(cluster_data, dataset, tmp_path):
    _, ckpt = cluster_data
    assert main(["evaluate", "--checkpoint", str(ckpt), "--data", str(dataset), "--out", str(tmp_path / "ev")]) == 1


def test_evaluate_bad_k_is_usage_error(cluster_data, tmp_path):
    data, ckpt = cluster_data
    assert main(["evaluate", "--checkpoint", str(ckpt), "--data", str(data), "--out", str(tmp_path / "ev"),
                 "--k", "0"]) == 2


# --- sweep ----------------------------------------------------------------------------------------

def test_sweep_three_values(dataset, tmp_path):
    out = tmp_path / "sw"
    assert main(["sweep", "--data", str(dataset), "--out", str(out), "--grid", "lambda_ex_star=0,0.01,1",
                 "--k", "5", "--d", "3", "--epochs", "3", "--rho-star", "1", "--gamma", "0.01"]) == 0
    rows = read_rows(out / "frontier.tsv")
    assert len(rows) == 3 and any(r["pareto"] == "1" for r in rows)
    assert "best_config_id" in read_kv(out / "run_manifest.txt")


def test_sweep_malformed_grid(dataset, tmp_path):
    assert main(["sweep", "--data", str(dataset), "--out", str(tmp_path / "sw"), "--grid", "gamma"]) == 2


# --- lorenz ----------------------------------------------------------------------------------------

@pytest.mark.slow
def test_lorenz_large_lambda_dominates(tmp_path):
    from exadmm.data import strong_generalization_split
    from exadmm.synthetic import popularity_skewed

    bundle = strong_generalization_split(popularity_skewed(500, 300, interactions_per_user=20, seed=1),
                                         SplitSpec(seed=1))
    data = tmp_path / "skew"
    save_bundle(bundle, data)
    ckpts = []
    for lam in ("0", "1"):
        out = tmp_path / f"m{lam}"
        assert main(["train", "--data", str(data), "--out", str(out), "--d", "16", "--epochs", "50",
                     "--rho-star", "1", "--gamma", "0.01", "--lambda-ex-star", lam]) == 0
        ckpts += ["--checkpoint", str(out / "model.ckpt")]
    assert main(["lorenz", *ckpts, "--data", str(data), "--out", str(tmp_path / "lz"), "--k", "10"]) == 0
    rows = read_rows(tmp_path / "lz" / "lorenz.tsv")
    assert len(rows) == 301
    assert all(float(r["share_1"]) >= float(r["share_0"]) - 1e-12 for r in rows)


# --- diagnose --------------------------------------------------------------------------------------

def test_diagnose_converged_run(tmp_path, capsys):
    from exadmm.synthetic import random_binary

    lines = [f"{t.user_id},{t.item_id},1" for t in random_binary(38, 20, 0.2, seed=0)]
    (tmp_path / "raw.csv").write_text("\n".join(lines) + "\n")
    data = tmp_path / "d"
    assert main(["ingest", "--data", str(tmp_path / "raw.csv"), "--out", str(data)]) == 0
    (tmp_path / "c.txt").write_text("lambda_l2=0.6\nd=4\nlambda_ex_star=0.01\nrho_star=auto\ngamma=auto\n")
    out = tmp_path / "run"
    assert main(["train", "--data", str(data), "--out", str(out), "--config", str(tmp_path / "c.txt"),
                 "--epochs", "500", "--diagnostics", "--serial"]) == 0
    capsys.readouterr()
    assert main(["diagnose", "--data", str(out)]) == 0
    printed = dict(line.split("\t") for line in capsys.readouterr().out.splitlines())
    assert printed["converged"] == "True" and printed["bounds_held"] == "True"
    assert float(printed["max_lagrangian_increase"]) <= 1e-8
    assert read_kv(out / "convergence.txt") == printed


def test_diagnose_rejects_plain_log(dataset, tmp_path):
    out = tmp_path / "ials"
    assert main(["train", "--data", str(dataset), "--out", str(out), "--algo", "ials", "--d", "2",
                 "--epochs", "2"]) == 0
    assert main(["diagnose", "--data", str(out)]) == 2
    assert main(["diagnose", "--data", str(tmp_path / "missing")]) == 2


# --- misc ---------------------------------------------------------------------------------------------

def test_run_manifest_reproducible(tmp_path):
    a = RunManifest("x", ["--a"], {"d": "3"}, "fp", 1, outputs={"o": "p"})
    a.write(tmp_path)
    first = (tmp_path / "run_manifest.txt").read_bytes()
    a.write(tmp_path)
    assert (tmp_path / "run_manifest.txt").read_bytes() == first
    assert read_kv(tmp_path / "run_manifest.txt")["config.d"] == "3"


def test_no_command_is_usage_error():
    assert main([]) == 2


def test_version_flag(capsys):
    assert main(["--version"]) == 0
    assert "exadmm" in capsys.readouterr().out
