"""Hyperparameter grid sweeps and the accuracy-fairness Pareto frontier."""

from __future__ import annotations

import hashlib
import itertools
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from .config import checkpoint_hyperparams, config_snapshot, resolve_config, train_model
from .data import DatasetBundle
from .evaluate import evaluate_holdout
from .io import append_rows, read_rows, save_checkpoint, write_kv

logger = logging.getLogger(__name__)

def expand_values(spec) -> list:
    """Turn an axis spec into a value list.

    Accepts a list, a comma-separated string, or ``log:lo:hi:n`` for ``n``
    log-spaced values between ``lo`` and ``hi`` inclusive.
    """
    if isinstance(spec, str):
        spec = spec.strip()
        if spec.startswith("log:"):
            _, lo, hi, n = spec.split(":")
            return [float(v) for v in np.logspace(math.log10(float(lo)), math.log10(float(hi)), int(n))]
        return [v.strip() for v in spec.split(",") if v.strip()]
    return list(spec)


@dataclass
class SweepConfig:
    grid: dict[str, Any]
    k_values: list[int] = field(default_factory=lambda: [10])
    fixed: dict[str, Any] = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        self.grid = {k: expand_values(v) for k, v in self.grid.items()}
        for k, v in self.grid.items():
            if not v:
                raise ValueError(f"grid axis {k!r} is empty")
        if not self.k_values:
            raise ValueError("k_values is empty")


def expand_grid(config: SweepConfig) -> list[dict[str, Any]]:
    """Cartesian product of the grid axes over the fixed values.

    Axes vary in lexicographic order of their names (last name fastest);
    every configuration is validated.
    """
    names = sorted(config.grid)
    base = dict(config.fixed)
    base.setdefault("seed", config.seed)
    out = []
    for combo in itertools.product(*(config.grid[n] for n in names)):
        cfg = dict(base)
        cfg.update(zip(names, combo))
        out.append(resolve_config(cfg))
    return out


def config_id(cfg: Mapping[str, Any]) -> str:
    payload = json.dumps(config_snapshot(cfg), sort_keys=True)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


@dataclass
class FrontierRow:
    config_id: str
    params: dict[str, Any]
    ndcg: dict[int, float]
    gini: dict[int, float]
    train_seconds: float
    pareto: bool = False
    status: str = "ok"

    def metric(self, key: str) -> float:
        name, k = key.split("@")
        return getattr(self, name)[int(k)]


def _row_fields(k_values: Sequence[int], param_names: Sequence[str]) -> list[str]:
    return (["config_id", "status"] + list(param_names)
            + [f"ndcg@{k}" for k in k_values] + [f"gini@{k}" for k in k_values]
            + ["train_seconds"])


def _to_record(row: FrontierRow, k_values) -> dict:
    rec = {"config_id": row.config_id, "status": row.status, "train_seconds": row.train_seconds}
    rec.update(config_snapshot(row.params))
    for k in k_values:
        rec[f"ndcg@{k}"] = row.ndcg.get(k, math.nan)
        rec[f"gini@{k}"] = row.gini.get(k, math.nan)
    return rec


def _from_record(rec: Mapping[str, str], k_values, param_names) -> FrontierRow:
    params = resolve_config({n: rec[n] for n in param_names})
    return FrontierRow(
        config_id=rec["config_id"], params=params,
        ndcg={k: float(rec[f"ndcg@{k}"]) for k in k_values},
        gini={k: float(rec[f"gini@{k}"]) for k in k_values},
        train_seconds=float(rec["train_seconds"]), status=rec["status"],
    )


def run_one(cfg: Mapping[str, Any], data: DatasetBundle, k_values, threads: int = 1, split: str = "val"):
    result = train_model(cfg, data.train, threads=threads)
    foldin, target = data.holdout(split)
    ev = evaluate_holdout(result.checkpoint.V, checkpoint_hyperparams(result.checkpoint), foldin, target, k_values)
    row = FrontierRow(config_id(cfg), dict(cfg), ev.ndcg, ev.gini, result.train_seconds)
    return row, result


def run_sweep(config: SweepConfig, data: DatasetBundle, out_dir=None, threads: int = 1,
              split: str = "val") -> list[FrontierRow]:
    """Train and evaluate every grid configuration on the holdout ``split``.

    With ``out_dir`` the run is resumable: successful rows already in
    ``results.tsv`` are reused (failed ones are retried), new rows are appended as they finish and each
    model is checkpointed under ``checkpoints/<config_id>/``. A failing
    configuration is recorded with its error and does not stop the sweep.
    """
    configs = expand_grid(config)
    k_values = sorted(config.k_values)
    param_names = sorted(configs[0])
    fields = _row_fields(k_values, param_names)
    done: dict[str, FrontierRow] = {}
    results_path = None
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        results_path = out / "results.tsv"
        if results_path.exists():
            for rec in read_rows(results_path):
                if rec["status"] == "ok":
                    done[rec["config_id"]] = _from_record(rec, k_values, param_names)
        write_kv(out / "sweep_manifest.txt", {
            "n_configs": len(configs), "k_values": ",".join(map(str, k_values)), "seed": config.seed,
            "grid": json.dumps({k: [str(x) for x in v] for k, v in sorted(config.grid.items())}),
            "fixed": json.dumps(config_snapshot(config.fixed), sort_keys=True),
            "split": split,
        })

    rows = []
    for cfg in configs:
        cid = config_id(cfg)
        if cid in done:
            rows.append(done[cid])
            continue
        try:
            row, result = run_one(cfg, data, k_values, threads, split)
            if out_dir is not None:
                ckdir = Path(out_dir) / "checkpoints" / cid
                ckdir.mkdir(parents=True, exist_ok=True)
                save_checkpoint(ckdir / "model.ckpt", result.checkpoint)
                write_kv(ckdir / "config.txt", config_snapshot(result.effective))
        except Exception as exc:  # recorded, not fatal
            logger.warning("config %s failed: %s", cid, exc)
            row = FrontierRow(cid, dict(cfg), {}, {}, math.nan, status=f"failed: {exc}")
        rows.append(row)
        if results_path is not None:
            append_rows(results_path, fields, [_to_record(row, k_values)])
    ok = [r for r in rows if r.status == "ok"]
    if ok:
        kmax = k_values[-1]
        pareto_filter(ok, f"ndcg@{kmax}", f"gini@{kmax}")
    return rows


def pareto_filter(rows: list[FrontierRow], accuracy_key: str, fairness_key: str) -> list[FrontierRow]:
    """Flag rows not dominated in (accuracy up, fairness metric down); O(n^2)."""
    if not rows:
        raise ValueError("no rows to filter")
    pts = [(r.metric(accuracy_key), r.metric(fairness_key)) for r in rows]
    for i, row in enumerate(rows):
        a, g = pts[i]
        row.pareto = not any(
            (a2 >= a and g2 <= g) and (a2 > a or g2 < g)
            for j, (a2, g2) in enumerate(pts) if j != i)
    return rows


def select_best(rows: Sequence[FrontierRow], k: int | None = None) -> FrontierRow:
    """Row with the highest validation nDCG at ``k`` (largest recorded K by default)."""
    ok = [r for r in rows if r.status == "ok"]
    if not ok:
        raise ValueError("no successful rows")
    if k is None:
        k = max(ok[0].ndcg)
    return max(ok, key=lambda r: r.ndcg[k])


def write_frontier(path, rows: Sequence[FrontierRow], k_values) -> None:
    """Results table with the ``pareto`` column, rewritten from scratch."""
    k_values = sorted(k_values)
    param_names = sorted(rows[0].params)
    fields = _row_fields(k_values, param_names) + ["pareto"]
    path = Path(path)
    if path.exists():
        path.unlink()
    recs = []
    for r in rows:
        rec = _to_record(r, k_values)
        rec["pareto"] = r.pareto
        recs.append(rec)
    append_rows(path, fields, recs)
