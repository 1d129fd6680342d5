"""Flat key-value run configuration and model training entry point."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .admm import ExAdmmHyperParams, calibrate, train_exadmm
from .data import FeedbackMatrix
from .ials import IalsHyperParams, train_ials
from .io import Checkpoint, read_kv

ALGOS = ("ials", "exadmm")

DEFAULTS: dict[str, Any] = {
    "algo": "exadmm",
    "d": 32,
    "alpha0": 0.1,
    "lambda_l2": 0.01,
    "eta": 1.0,
    "sigma": 0.1,
    "epochs": 50,
    "seed": 0,
    "lambda_ex_star": 0.0,
    "rho_star": 1e-6,
    "gamma": 0.01,
}


class ConfigError(ValueError):
    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("invalid configuration: " + "; ".join(self.errors))


def _float_or_auto(v):
    if isinstance(v, str) and v.strip().lower() == "auto":
        return "auto"
    return float(v)


def _int(v):
    f = float(v)
    if f != int(f):
        raise ValueError(f"{v!r} is not an integer")
    return int(f)


def _algo(v):
    v = str(v).strip().lower()
    if v not in ALGOS:
        raise ValueError(f"must be one of {', '.join(ALGOS)}")
    return v


COERCE = {
    "algo": _algo,
    "d": _int,
    "alpha0": float,
    "lambda_l2": float,
    "eta": float,
    "sigma": float,
    "epochs": _int,
    "seed": _int,
    "lambda_ex_star": float,
    "rho_star": _float_or_auto,
    "gamma": _float_or_auto,
}


def resolve_config(*layers: Mapping[str, Any] | None) -> dict[str, Any]:
    """Merge defaults with the given layers (later wins) and validate.

    Raises :class:`ConfigError` listing every unknown key and every value
    that fails to parse or violates its domain.
    """
    merged: dict[str, Any] = dict(DEFAULTS)
    errors = []
    for layer in layers:
        if not layer:
            continue
        for k, v in layer.items():
            if v is None:
                continue
            if k not in COERCE:
                errors.append(f"unknown key {k!r}")
                continue
            merged[k] = v
    out = {}
    for k, v in merged.items():
        try:
            out[k] = COERCE[k](v)
        except (TypeError, ValueError) as exc:
            errors.append(f"{k}={v!r}: {exc}")
    errors.extend(_domain_errors(out))
    if errors:
        raise ConfigError(errors)
    return out


_DOMAINS = {
    "d": (lambda v: v >= 1, "must be >= 1"),
    "alpha0": (lambda v: 0 < v < np.inf, "must be finite and > 0"),
    "lambda_l2": (lambda v: 0 < v < np.inf, "must be finite and > 0"),
    "eta": (lambda v: 0 <= v < np.inf, "must be finite and >= 0"),
    "sigma": (lambda v: 0 <= v < np.inf, "must be finite and >= 0"),
    "epochs": (lambda v: v >= 1, "must be >= 1"),
    "lambda_ex_star": (lambda v: 0 <= v < np.inf, "must be finite and >= 0"),
    "rho_star": (lambda v: v == "auto" or v > 0, "must be > 0 or 'auto'"),
    "gamma": (lambda v: v == "auto" or v > 0, "must be > 0 or 'auto'"),
}


def _domain_errors(cfg: Mapping[str, Any]) -> list[str]:
    """Domain violations among the (already parsed) keys present in ``cfg``."""
    return [f"{k}={cfg[k]!r}: {msg}" for k, (ok, msg) in _DOMAINS.items() if k in cfg and not ok(cfg[k])]


def load_config(path=None, overrides: Mapping[str, Any] | None = None) -> dict[str, Any]:
    layer = read_config_file(path) if path is not None else None
    return resolve_config(layer, overrides)


def ials_hyperparams(cfg: Mapping[str, Any]) -> IalsHyperParams:
    return IalsHyperParams(d=cfg["d"], alpha0=cfg["alpha0"], lambda_l2=cfg["lambda_l2"], eta=cfg["eta"],
                           sigma=cfg["sigma"], epochs=cfg["epochs"], seed=cfg["seed"])


def exadmm_hyperparams(cfg: Mapping[str, Any], R: FeedbackMatrix | None = None) -> ExAdmmHyperParams:
    """Build exADMM hyperparameters, calibrating ``'auto'`` entries on ``R``."""
    base = ials_hyperparams(cfg)
    rho_star, gamma = cfg["rho_star"], cfg["gamma"]
    if "auto" in (rho_star, gamma):
        if R is None:
            raise ValueError("'auto' rho_star/gamma needs the training matrix")
        probe = ExAdmmHyperParams(base, cfg["lambda_ex_star"], 1.0, 1.0)
        auto_rho, auto_gamma, _ = calibrate(R, probe)
        rho_star = auto_rho if rho_star == "auto" else rho_star
        gamma = auto_gamma if gamma == "auto" else gamma
    return ExAdmmHyperParams(base, cfg["lambda_ex_star"], float(rho_star), float(gamma))


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    history: list
    train_seconds: float
    effective: dict[str, Any]
    bounds_held: bool | None = None


def train_model(cfg: Mapping[str, Any], R: FeedbackMatrix, threads: int = 1,
                diagnostics: bool = False, track_objective: bool = False) -> TrainResult:
    """Train the configured algorithm on ``R`` and package it as a checkpoint."""
    effective = dict(cfg)
    if cfg["algo"] == "ials":
        hp = ials_hyperparams(cfg)
        model = train_ials(R, hp, threads=threads, track_objective=track_objective)
        params = {k: repr(v) if isinstance(v, float) else str(v) for k, v in hp.as_dict().items()}
        ckpt = Checkpoint("ials", model.U, model.V, params)
        return TrainResult(ckpt, model.history, model.train_seconds, effective)

    hp = exadmm_hyperparams(cfg, R)
    effective.update(rho_star=hp.rho_star, gamma=hp.gamma)
    model = train_exadmm(R, hp, threads=threads, diagnostics=diagnostics,
                         track_objective=track_objective)
    params = {k: repr(v) if isinstance(v, float) else str(v) for k, v in hp.as_dict().items()}
    params.update(lambda_ex=repr(model.params.lambda_ex), rho=repr(model.params.rho),
                  epoch=str(model.state.epoch))
    ckpt = Checkpoint("exadmm", model.U, model.V, params, model.state.s, model.state.w)
    return TrainResult(ckpt, model.history, model.train_seconds, effective, model.bounds_held)


def checkpoint_hyperparams(ckpt: Checkpoint) -> IalsHyperParams:
    """The iALS hyperparameters stored in a checkpoint (used for fold-in)."""
    p = ckpt.params
    return IalsHyperParams(d=ckpt.d, alpha0=float(p["alpha0"]), lambda_l2=float(p["lambda_l2"]),
                           eta=float(p["eta"]), sigma=float(p.get("sigma", 0.1)),
                           epochs=int(p.get("epochs", 1)), seed=int(p.get("seed", 0)))


def config_snapshot(cfg: Mapping[str, Any]) -> dict[str, str]:
    return {k: repr(v) if isinstance(v, float) else str(v) for k, v in cfg.items()}


def read_config_file(path) -> dict[str, str]:
    if not Path(path).is_file():
        raise ConfigError([f"config file {path} does not exist"])
    return read_kv(path)
