"""Command-line entry point: ``exadmm {ingest,train,evaluate,sweep,lorenz,diagnose}``.

Exit codes: 0 on success, 1 on a runtime failure, 2 on a usage or
configuration error (including missing input files).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import platform
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .config import (ConfigError, checkpoint_hyperparams, config_snapshot, read_config_file,
                     resolve_config, train_model)
from .data import (DataError, SplitSpec, filter_min_interactions, load_bundle,
                   load_interactions, save_bundle, strong_generalization_split)
from .diagnostics import DIAGNOSTIC_FIELDS, convergence_report, read_diagnostics, write_diagnostics
from .evaluate import REPORT_FIELDS, evaluate_holdout
from .io import append_rows, load_checkpoint, read_kv, save_checkpoint, write_kv
from .metrics import lorenz_curve
from .sweep import SweepConfig, run_sweep, select_best, write_frontier

logger = logging.getLogger("exadmm")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    """Bad arguments or missing inputs; maps to exit code 2."""


@dataclass
class RunManifest:
    command: str
    argv: list[str]
    config: dict[str, str] = field(default_factory=dict)
    data_fingerprint: str = ""
    seed: int | None = None
    timings: dict[str, float] = field(default_factory=dict)
    outputs: dict[str, str] = field(default_factory=dict)
    extra: dict[str, str] = field(default_factory=dict)

    def versions(self) -> dict[str, str]:
        return {"exadmm": __version__, "python": platform.python_version(),
                "numpy": np.__version__, "scipy": scipy.__version__}

    def flat(self) -> dict[str, str]:
        out = {"command": self.command, "argv": json.dumps(self.argv),
               "data_fingerprint": self.data_fingerprint,
               "seed": "" if self.seed is None else str(self.seed)}
        out.update({f"config.{k}": v for k, v in sorted(self.config.items())})
        out.update({f"version.{k}": v for k, v in self.versions().items()})
        out.update({f"timing.{k}": repr(v) for k, v in self.timings.items()})
        out.update({f"output.{k}": v for k, v in self.outputs.items()})
        out.update(self.extra)
        return out

    def write(self, out_dir) -> Path:
        path = Path(out_dir) / "run_manifest.txt"
        write_kv(path, self.flat())
        return path


# ---------------------------------------------------------------------------
# helpers


def _k_list(text: str) -> list[int]:
    try:
        ks = [int(t) for t in text.replace(" ", "").split(",") if t]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not ks or any(k < 1 for k in ks):
        raise argparse.ArgumentTypeError("K values must be positive integers")
    return ks


def _threads(args) -> int:
    if args.serial:
        return 1
    return args.threads if args.threads else (os.cpu_count() or 1)


def _require_file(path, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{what} {p} does not exist")
    return p


def _require_dir(path, what: str) -> Path:
    p = Path(path)
    if not (p / "manifest.txt").is_file():
        raise UsageError(f"{what} {p} is not a dataset directory")
    return p


def _data_fingerprint(data_dir: Path) -> str:
    return read_kv(data_dir / "manifest.txt").get("fingerprint", "")


def _overrides(args) -> dict:
    keys = ("algo", "seed", "epochs", "lambda_ex_star", "rho_star", "gamma", "d")
    return {k: getattr(args, k, None) for k in keys if getattr(args, k, None) is not None}


def _resolve(args) -> dict:
    layer = read_config_file(args.config) if args.config else None
    return resolve_config(layer, _overrides(args))


def _print_table(rows: list[dict], fields: list[str]) -> None:
    print("\t".join(fields))
    for r in rows:
        print("\t".join(f"{r[f]:.6g}" if isinstance(r[f], float) else str(r[f]) for f in fields))


def _fresh(path: Path) -> Path:
    if path.exists():
        path.unlink()
    return path


# ---------------------------------------------------------------------------
# subcommands


def cmd_ingest(args) -> int:
    src = _require_file(args.data, "input file")
    t0 = time.perf_counter()
    triples = load_interactions(src, rating_threshold=args.threshold)
    if args.min_count > 1:
        triples = filter_min_interactions(triples, args.min_count)
    if not triples:
        raise DataError("no interactions left after filtering")
    spec = SplitSpec(args.train_frac, args.val_frac, args.test_frac, args.foldin_frac, args.seed)
    bundle = strong_generalization_split(triples, spec)
    manifest = save_bundle(bundle, args.out)
    elapsed = time.perf_counter() - t0

    counts = bundle.counts()
    print(f"users\t{counts['n_users']}")
    print(f"items\t{counts['n_items']}")
    print(f"interactions\t{counts['n_interactions']}")
    run = RunManifest("ingest", list(args.argv), data_fingerprint=manifest["fingerprint"], seed=args.seed,
                      timings={"ingest_seconds": elapsed}, outputs={"dataset": str(args.out)},
                      config={"input": str(src), "threshold": str(args.threshold),
                              "min_count": str(args.min_count), "train_frac": repr(args.train_frac),
                              "val_frac": repr(args.val_frac), "test_frac": repr(args.test_frac),
                              "foldin_frac": repr(args.foldin_frac)})
    run.write(args.out)
    return EXIT_OK


def cmd_train(args) -> int:
    data_dir = _require_dir(args.data, "data")
    cfg = _resolve(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    bundle = load_bundle(data_dir)
    threads = _threads(args)
    diagnostics = bool(args.diagnostics) and cfg["algo"] == "exadmm"
    t0 = time.perf_counter()
    result = train_model(cfg, bundle.train, threads=threads, diagnostics=diagnostics, track_objective=True)
    wall = time.perf_counter() - t0

    ckpt_path = out / "model.ckpt"
    log_path = _fresh(out / "epochs.tsv")
    save_checkpoint(ckpt_path, result.checkpoint)
    if diagnostics:
        write_diagnostics(log_path, result.history)
    elif result.history:
        header = list(dict.fromkeys(k for row in result.history for k in row))
        append_rows(log_path, header, result.history)
    write_kv(out / "config.txt", config_snapshot(result.effective))

    run = RunManifest("train", list(args.argv), config_snapshot(result.effective), _data_fingerprint(data_dir),
                      cfg["seed"], {"train_seconds": result.train_seconds, "wall_seconds": wall},
                      {"checkpoint": str(ckpt_path), "epoch_log": str(log_path)},
                      {"threads": str(threads), "epochs_run": str(len([h for h in result.history
                                                                       if _epoch(h) > 0]))})
    if result.bounds_held is not None:
        run.extra["bounds_held"] = str(result.bounds_held)
    if diagnostics:
        summary = convergence_report(result.history) if len(result.history) >= 2 else None
        if summary is not None:
            run.extra.update({f"summary.{k}": repr(v) if isinstance(v, float) else str(v)
                              for k, v in summary.as_dict().items()})
    run.write(out)
    print(f"trained {cfg['algo']} for {cfg['epochs']} epochs in {result.train_seconds:.3f}s -> {ckpt_path}")
    return EXIT_OK


def _epoch(h) -> int:
    return h.epoch if hasattr(h, "epoch") else int(h["epoch"])


def _load_model(path, n_items: int):
    ckpt = load_checkpoint(_require_file(path, "checkpoint"))
    if ckpt.V.shape[0] != n_items:
        raise ValueError(f"checkpoint has {ckpt.V.shape[0]} items but the dataset has {n_items}")
    return ckpt


def cmd_evaluate(args) -> int:
    data_dir = _require_dir(args.data, "data")
    bundle = load_bundle(data_dir)
    ckpt = _load_model(args.checkpoint, bundle.train.n_items)
    foldin, target = bundle.holdout(args.split)
    t0 = time.perf_counter()
    res = evaluate_holdout(ckpt.V, checkpoint_hyperparams(ckpt), foldin, target, args.k,
                           standard_gini=args.standard_gini)
    elapsed = time.perf_counter() - t0
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report = _fresh(out / "report.tsv")
    append_rows(report, REPORT_FIELDS, res.rows())
    _print_table(res.rows(), REPORT_FIELDS)
    RunManifest("evaluate", list(args.argv), dict(ckpt.params), _data_fingerprint(data_dir),
                int(ckpt.params.get("seed", 0)), {"evaluate_seconds": elapsed}, {"report": str(report)},
                {"checkpoint": str(args.checkpoint), "split": args.split,
                 "standard_gini": str(args.standard_gini)}).write(out)
    return EXIT_OK


def _parse_grid(entries: list[str]) -> dict[str, str]:
    grid = {}
    for e in entries or ():
        if "=" not in e:
            raise UsageError(f"grid axis must look like name=values, got {e!r}")
        name, values = e.split("=", 1)
        grid[name.strip()] = values.strip()
    return grid


def cmd_sweep(args) -> int:
    data_dir = _require_dir(args.data, "data")
    fixed = _resolve(args)
    grid = _parse_grid(args.grid)
    try:
        config = SweepConfig(grid, args.k, fixed, fixed["seed"])
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    bundle = load_bundle(data_dir)
    out = Path(args.out)
    t0 = time.perf_counter()
    rows = run_sweep(config, bundle, out_dir=out, threads=_threads(args), split=args.split)
    elapsed = time.perf_counter() - t0
    frontier = out / "frontier.tsv"
    write_frontier(frontier, rows, config.k_values)
    failed = [r for r in rows if r.status != "ok"]
    run = RunManifest("sweep", list(args.argv), config_snapshot(fixed), _data_fingerprint(data_dir),
                      fixed["seed"], {"sweep_seconds": elapsed},
                      {"frontier": str(frontier), "results": str(out / "results.tsv"),
                       "checkpoints": str(out / "checkpoints")},
                      {"grid": json.dumps(grid, sort_keys=True), "n_configs": str(len(rows)),
                       "n_failed": str(len(failed)), "split": args.split})
    if len(failed) < len(rows):
        best = select_best(rows)
        run.extra["best_config_id"] = best.config_id
        print(f"best by nDCG@{max(config.k_values)}: {best.config_id}")
    run.write(out)
    print(f"{len(rows)} configurations ({len(failed)} failed) -> {frontier}")
    return EXIT_RUNTIME if failed and len(failed) == len(rows) else EXIT_OK


def cmd_lorenz(args) -> int:
    data_dir = _require_dir(args.data, "data")
    bundle = load_bundle(data_dir)
    foldin, target = bundle.holdout(args.split)
    k = max(args.k)
    curves = []
    for path in args.checkpoint:
        ckpt = _load_model(path, bundle.train.n_items)
        res = evaluate_holdout(ckpt.V, checkpoint_hyperparams(ckpt), foldin, target, [k])
        curves.append(lorenz_curve(res.exposure[k], args.points))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = _fresh(out / "lorenz.tsv")
    header = ["fraction_of_items"] + [f"share_{i}" for i in range(len(curves))]
    rows = [dict(zip(header, [x] + [c[j, 1] for c in curves])) for j, x in enumerate(curves[0][:, 0])]
    append_rows(path, header, rows)
    RunManifest("lorenz", list(args.argv), {"k": str(k), "split": args.split}, _data_fingerprint(data_dir),
                outputs={"lorenz": str(path)},
                extra={f"curve.share_{i}": str(p) for i, p in enumerate(args.checkpoint)}).write(out)
    print(f"{len(curves)} Lorenz curves at K={k} -> {path}")
    return EXIT_OK


def cmd_diagnose(args) -> int:
    src = Path(args.data)
    log_path = src / "epochs.tsv" if src.is_dir() else src
    _require_file(log_path, "epoch log")
    with log_path.open(encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split("\t")
    if header != DIAGNOSTIC_FIELDS:
        raise UsageError(f"{log_path} is not a diagnostics log (train exadmm with --diagnostics)")
    summary = convergence_report(read_diagnostics(log_path), tolerance=args.tolerance)
    out = Path(args.out) if args.out else log_path.parent
    out.mkdir(parents=True, exist_ok=True)
    values = {k: repr(v) if isinstance(v, float) else str(v) for k, v in summary.as_dict().items()}
    write_kv(out / "convergence.txt", values)
    for k, v in values.items():
        print(f"{k}\t{v}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="exadmm", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def runtime(p):
        p.add_argument("--threads", type=int, default=None, help="worker threads (default: all cores)")
        p.add_argument("--serial", action="store_true", help="single-threaded deterministic path")

    def model_flags(p):
        p.add_argument("--config", help="flat key=value configuration file")
        p.add_argument("--algo", choices=("ials", "exadmm"))
        p.add_argument("--seed", type=int)
        p.add_argument("--epochs", type=int)
        p.add_argument("--d", type=int, help="embedding dimension")
        p.add_argument("--lambda-ex-star", dest="lambda_ex_star", type=float)
        p.add_argument("--rho-star", dest="rho_star", help="float or 'auto'")
        p.add_argument("--gamma", help="float or 'auto'")

    p = sub.add_parser("ingest", help="binarize, filter and split a raw interaction file")
    p.add_argument("--data", required=True, help="raw user,item,rating[,timestamp] file")
    p.add_argument("--out", required=True, help="dataset directory to write")
    p.add_argument("--threshold", type=float, default=None, help="keep ratings >= threshold")
    p.add_argument("--min-count", dest="min_count", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--train-frac", dest="train_frac", type=float, default=0.8)
    p.add_argument("--val-frac", dest="val_frac", type=float, default=0.1)
    p.add_argument("--test-frac", dest="test_frac", type=float, default=0.1)
    p.add_argument("--foldin-frac", dest="foldin_frac", type=float, default=0.8)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", help="train iALS or exADMM on a dataset directory")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--diagnostics", action="store_true", help="per-epoch residuals and gradient norms (exadmm)")
    model_flags(p)
    runtime(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="nDCG@K and Gini@K of a checkpoint on holdout users")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--k", type=_k_list, default=[10], help="comma-separated K values")
    p.add_argument("--split", choices=("val", "test"), default="test")
    p.add_argument("--standard-gini", dest="standard_gini", action="store_true",
                   help="normalize Gini by 2|o|_1 n instead of 2|o|_1 n^2")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="grid sweep with an accuracy-fairness frontier")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--grid", action="append", metavar="NAME=VALUES",
                   help="axis as a comma list or log:lo:hi:n; repeatable")
    p.add_argument("--k", type=_k_list, default=[10])
    p.add_argument("--split", choices=("val", "test"), default="val")
    model_flags(p)
    runtime(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("lorenz", help="Lorenz curves of item exposure for one or more checkpoints")
    p.add_argument("--checkpoint", required=True, action="append")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--k", type=_k_list, default=[10])
    p.add_argument("--split", choices=("val", "test"), default="test")
    p.add_argument("--points", type=int, default=None, help="samples along the curve (default: every item)")
    p.set_defaults(func=cmd_lorenz)

    p = sub.add_parser("diagnose", help="convergence summary of a diagnostics epoch log")
    p.add_argument("--data", required=True, help="train output directory or its epochs.tsv")
    p.add_argument("--out", default=None)
    p.add_argument("--tolerance", type=float, default=1e-6)
    p.set_defaults(func=cmd_diagnose)
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    args.argv = argv
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ValueError, ArithmeticError, OSError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
