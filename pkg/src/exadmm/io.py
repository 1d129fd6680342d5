"""Flat key-value files, delimited logs and model checkpoints.

A checkpoint is a plain-text file::

    # exadmm checkpoint v1
    algo=exadmm
    n_users=...
    n_items=...
    d=...
    <hyperparameter>=<value>
    [U]
    <n_users rows of d values>
    [V]
    <n_items rows of d values>
    [s]            (exADMM only)
    <d values>
    [w]            (exADMM only)
    <d values>

Values are written with 17 significant digits so a save/load round trip is
exact.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

CHECKPOINT_MAGIC = "# exadmm checkpoint v1"


def write_kv(path, values: Mapping[str, object]) -> None:
    lines = []
    for k, v in values.items():
        if "=" in k or "\n" in k:
            raise ValueError(f"invalid key {k!r}")
        lines.append(f"{k}={v}\n")
    Path(path).write_text("".join(lines), encoding="utf-8")


def read_kv(path) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value, got {line!r}")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def append_rows(path, header: list[str], rows: Iterable[Mapping[str, object]]) -> None:
    """Append rows to a tab-separated file, writing ``header`` if it is new."""
    path = Path(path)
    new = not path.exists() or path.stat().st_size == 0
    with path.open("a", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=header, delimiter="\t", extrasaction="ignore")
        if new:
            writer.writeheader()
        for row in rows:
            writer.writerow({k: _fmt(v) for k, v in row.items()})


def read_rows(path) -> list[dict[str, str]]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh, delimiter="\t"))


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


@dataclass
class Checkpoint:
    algo: str
    U: np.ndarray
    V: np.ndarray
    params: dict[str, str] = field(default_factory=dict)
    s: np.ndarray | None = None
    w: np.ndarray | None = None

    @property
    def d(self) -> int:
        return self.U.shape[1]


def _rows(arr: np.ndarray) -> str:
    arr = np.atleast_2d(arr)
    return "".join(" ".join(f"{x:.17g}" for x in row) + "\n" for row in arr)


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    n_users, d = ckpt.U.shape
    header = {"algo": ckpt.algo, "n_users": n_users, "n_items": ckpt.V.shape[0], "d": d}
    header.update({k: v for k, v in ckpt.params.items() if k not in header})
    parts = [CHECKPOINT_MAGIC + "\n"]
    parts += [f"{k}={v}\n" for k, v in header.items()]
    parts += ["[U]\n", _rows(ckpt.U), "[V]\n", _rows(ckpt.V)]
    if ckpt.s is not None:
        parts += ["[s]\n", _rows(ckpt.s), "[w]\n", _rows(ckpt.w)]
    Path(path).write_text("".join(parts), encoding="utf-8")


def load_checkpoint(path) -> Checkpoint:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0].strip() != CHECKPOINT_MAGIC:
        raise ValueError(f"{path} is not a checkpoint file")
    params: dict[str, str] = {}
    sections: dict[str, list[list[float]]] = {}
    current = None
    for line in lines[1:]:
        line = line.strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1]
            sections[current] = []
        elif current is None:
            k, v = line.split("=", 1)
            params[k] = v
        else:
            sections[current].append([float(x) for x in line.split()])
    n_users, n_items, d = int(params.pop("n_users")), int(params.pop("n_items")), int(params.pop("d"))
    algo = params.pop("algo")
    U = np.array(sections["U"], dtype=np.float64).reshape(n_users, d)
    V = np.array(sections["V"], dtype=np.float64).reshape(n_items, d)
    s = w = None
    if "s" in sections:
        s = np.array(sections["s"], dtype=np.float64).reshape(d)
        w = np.array(sections["w"], dtype=np.float64).reshape(d)
    return Checkpoint(algo, U, V, params, s, w)
