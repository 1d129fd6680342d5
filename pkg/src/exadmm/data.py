"""Ingestion of rating logs and construction of the binary feedback matrix.

Raw logs are delimited text with ``user, item, rating[, timestamp]`` columns.
They are binarized, filtered to a fixed point on a minimum interaction
count, split by user into train / validation / test (strong generalization),
and the training users are packed into a :class:`FeedbackMatrix` that keeps
both a user-major and an item-major index.
"""

from __future__ import annotations

import hashlib
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np
import scipy.sparse as sp


class DataError(ValueError):
    """Raised on unreadable or malformed interaction data."""


class InteractionTriple(NamedTuple):
    user_id: str
    item_id: str
    rating: float = 1.0


@dataclass(frozen=True, eq=False)
class FeedbackMatrix:
    """Binary implicit-feedback matrix stored in both orientations.

    ``user_indptr``/``user_indices`` is the CSR (row-major) pattern and
    ``item_indptr``/``item_indices`` the CSC (column-major) one. Index lists
    are sorted and contain no duplicates; every stored entry has value 1.
    """

    n_users: int
    n_items: int
    user_indptr: np.ndarray
    user_indices: np.ndarray
    item_indptr: np.ndarray
    item_indices: np.ndarray
    user_ids: tuple[str, ...] | None = None
    item_ids: tuple[str, ...] | None = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @classmethod
    def from_pairs(cls, rows, cols, n_users: int, n_items: int,
                   user_ids=None, item_ids=None) -> "FeedbackMatrix":
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        if rows.shape != cols.shape:
            raise ValueError("rows and cols must have the same length")
        if rows.size and (rows.min() < 0 or rows.max() >= n_users
                          or cols.min() < 0 or cols.max() >= n_items):
            raise ValueError("pair index out of range")
        ones = np.ones(rows.size, dtype=np.float64)
        coo = sp.coo_matrix((ones, (rows, cols)), shape=(n_users, n_items))
        csr = coo.tocsr()
        csr.sum_duplicates()
        csr.data[:] = 1.0
        csr.sort_indices()
        csc = csr.tocsc()
        csc.sort_indices()
        return cls(
            n_users=int(n_users),
            n_items=int(n_items),
            user_indptr=csr.indptr.astype(np.int64),
            user_indices=csr.indices.astype(np.int64),
            item_indptr=csc.indptr.astype(np.int64),
            item_indices=csc.indices.astype(np.int64),
            user_ids=tuple(user_ids) if user_ids is not None else None,
            item_ids=tuple(item_ids) if item_ids is not None else None,
        )

    @property
    def nnz(self) -> int:
        return int(self.user_indices.size)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_users, self.n_items)

    def items_of(self, user: int) -> np.ndarray:
        return self.user_indices[self.user_indptr[user]:self.user_indptr[user + 1]]

    def users_of(self, item: int) -> np.ndarray:
        return self.item_indices[self.item_indptr[item]:self.item_indptr[item + 1]]

    @property
    def by_user(self) -> list[np.ndarray]:
        return [self.items_of(i) for i in range(self.n_users)]

    @property
    def by_item(self) -> list[np.ndarray]:
        return [self.users_of(j) for j in range(self.n_items)]

    def user_counts(self) -> np.ndarray:
        return np.diff(self.user_indptr)

    def item_counts(self) -> np.ndarray:
        return np.diff(self.item_indptr)

    def csr(self) -> sp.csr_matrix:
        if "csr" not in self._cache:
            data = np.ones(self.nnz)
            self._cache["csr"] = sp.csr_matrix(
                (data, self.user_indices, self.user_indptr), shape=self.shape)
        return self._cache["csr"]

    def csc(self) -> sp.csc_matrix:
        if "csc" not in self._cache:
            data = np.ones(self.nnz)
            self._cache["csc"] = sp.csc_matrix(
                (data, self.item_indices, self.item_indptr), shape=self.shape)
        return self._cache["csc"]

    def pairs(self) -> tuple[np.ndarray, np.ndarray]:
        """(row, col) arrays of the stored entries in user-major order."""
        rows = np.repeat(np.arange(self.n_users), self.user_counts())
        return rows, self.user_indices

    def transpose(self) -> "FeedbackMatrix":
        return FeedbackMatrix(
            n_users=self.n_items, n_items=self.n_users,
            user_indptr=self.item_indptr, user_indices=self.item_indices,
            item_indptr=self.user_indptr, item_indices=self.user_indices,
            user_ids=self.item_ids, item_ids=self.user_ids,
        )

    def toarray(self) -> np.ndarray:
        return self.csr().toarray()


@dataclass(frozen=True)
class SplitSpec:
    train_frac: float = 0.8
    val_frac: float = 0.1
    test_frac: float = 0.1
    foldin_frac: float = 0.8
    seed: int = 0

    def __post_init__(self):
        fracs = (self.train_frac, self.val_frac, self.test_frac)
        if any(not (f > 0) for f in fracs):
            raise ValueError(f"split fractions must be positive, got {fracs}")
        if abs(sum(fracs) - 1.0) > 1e-9:
            raise ValueError(f"split fractions must sum to 1, got {sum(fracs)!r}")
        if not 0.0 < self.foldin_frac < 1.0:
            raise ValueError("foldin_frac must lie in (0, 1)")


@dataclass
class DatasetBundle:
    """Training matrix plus per-user fold-in / target lists for holdout users.

    Holdout lists map an external user id to sorted item indices into the
    shared catalog ``train.item_ids``.
    """

    train: FeedbackMatrix
    val_foldin: dict[str, np.ndarray]
    val_target: dict[str, np.ndarray]
    test_foldin: dict[str, np.ndarray]
    test_target: dict[str, np.ndarray]
    split: SplitSpec | None = None

    @property
    def item_ids(self) -> tuple[str, ...]:
        return self.train.item_ids

    def holdout(self, which: str) -> tuple[dict[str, np.ndarray], dict[str, np.ndarray]]:
        if which == "val":
            return self.val_foldin, self.val_target
        if which == "test":
            return self.test_foldin, self.test_target
        raise ValueError(f"unknown holdout split {which!r}")

    def counts(self) -> dict[str, int]:
        n_hold = sum(len(v) for v in self.val_foldin.values()) \
            + sum(len(v) for v in self.val_target.values()) \
            + sum(len(v) for v in self.test_foldin.values()) \
            + sum(len(v) for v in self.test_target.values())
        return {
            "n_users": self.train.n_users + len(self.val_foldin) + len(self.test_foldin),
            "n_items": self.train.n_items,
            "n_interactions": self.train.nnz + n_hold,
            "n_train_users": self.train.n_users,
            "n_val_users": len(self.val_foldin),
            "n_test_users": len(self.test_foldin),
            "n_train_interactions": self.train.nnz,
        }


# ---------------------------------------------------------------------------
# ingestion


def _split_fields(line: str, delim: str | None) -> list[str]:
    if delim is None:
        return line.split()
    return [f.strip() for f in line.split(delim)]


def _sniff_delimiter(line: str) -> str | None:
    if "\t" in line:
        return "\t"
    if "," in line:
        return ","
    return None


def _is_number(token: str) -> bool:
    try:
        float(token)
    except ValueError:
        return False
    return True


def load_interactions(path, rating_threshold: float | None = None) -> list[InteractionTriple]:
    """Read ``user, item, rating[, timestamp]`` records from a delimited file.

    The delimiter (tab, comma or whitespace) is sniffed from the first
    non-blank line, and that line is treated as a header when its rating
    column is not numeric. With ``rating_threshold`` set, only records with
    ``rating >= rating_threshold`` survive; all returned triples carry
    rating 1.0.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8", errors="replace")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc

    out: list[InteractionTriple] = []
    delim: str | None = None
    first = True
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if first:
            delim = _sniff_delimiter(line)
        fields = _split_fields(line, delim)
        if first:
            first = False
            if len(fields) >= 3 and not _is_number(fields[2]):
                continue
        if len(fields) < 3 or len(fields) > 4:
            raise DataError(f"{path}:{lineno}: expected 3 or 4 fields, got {len(fields)}")
        user, item, rating_s = fields[0], fields[1], fields[2]
        if not user or not item:
            raise DataError(f"{path}:{lineno}: empty user or item id")
        try:
            rating = float(rating_s)
        except ValueError:
            raise DataError(f"{path}:{lineno}: rating {rating_s!r} is not a number") from None
        if not math.isfinite(rating):
            raise DataError(f"{path}:{lineno}: rating is not finite")
        if rating_threshold is not None and rating < rating_threshold:
            continue
        out.append(InteractionTriple(user, item, 1.0))
    return out


def _unique_pairs(triples: Iterable[InteractionTriple]) -> list[tuple[str, str]]:
    return list(dict.fromkeys((t[0], t[1]) for t in triples))


def filter_min_interactions(triples: Sequence[InteractionTriple], min_count: int) -> list[InteractionTriple]:
    """Drop users and items with fewer than ``min_count`` interactions.

    Removal repeats until nothing changes, so every surviving user and item
    has at least ``min_count`` distinct partners. Duplicate pairs count once.
    """
    if min_count < 0:
        raise ValueError("min_count must be non-negative")
    pairs = _unique_pairs(triples)
    while True:
        ucount = Counter(u for u, _ in pairs)
        icount = Counter(i for _, i in pairs)
        kept = [(u, i) for u, i in pairs if ucount[u] >= min_count and icount[i] >= min_count]
        if len(kept) == len(pairs):
            break
        pairs = kept
    keep = set(pairs)
    return [t for t in triples if (t[0], t[1]) in keep]


def build_matrix(triples: Sequence[InteractionTriple], item_ids: Sequence[str] | None = None) -> FeedbackMatrix:
    """Reindex external ids to ``[0, n)`` and build the dual-orientation matrix.

    Users and items are numbered in sorted order of their external id. Pass
    ``item_ids`` to fix the item catalog (items outside it raise).
    """
    if len(triples) == 0:
        raise DataError("cannot build a feedback matrix from no interactions")
    users = sorted({t[0] for t in triples})
    if item_ids is None:
        item_ids = sorted({t[1] for t in triples})
    uidx = {u: n for n, u in enumerate(users)}
    iidx = {i: n for n, i in enumerate(item_ids)}
    try:
        rows = [uidx[t[0]] for t in triples]
        cols = [iidx[t[1]] for t in triples]
    except KeyError as exc:
        raise DataError(f"item {exc.args[0]!r} is not in the catalog") from None
    return FeedbackMatrix.from_pairs(rows, cols, len(users), len(item_ids),
                                     user_ids=users, item_ids=item_ids)


# ---------------------------------------------------------------------------
# splitting


def _hash_key(seed: int, *parts: str) -> int:
    h = hashlib.sha256("\x1f".join((str(seed),) + parts).encode("utf-8"))
    return int.from_bytes(h.digest()[:8], "big")


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def strong_generalization_split(triples: Sequence[InteractionTriple], spec: SplitSpec) -> DatasetBundle:
    """Partition users into train / val / test and split holdout users' items.

    Users are ordered by a seeded hash of their external id, so assignment
    does not depend on input order. Each holdout user's items are shuffled
    under a per-user seed and the first ``foldin_frac`` share becomes the
    fold-in set, the rest the evaluation target.
    """
    by_user: dict[str, set[str]] = defaultdict(set)
    for t in triples:
        by_user[t[0]].add(t[1])
    users = sorted(by_user, key=lambda u: (_hash_key(spec.seed, "user", u), u))
    n = len(users)
    n_val = _round_half_up(spec.val_frac * n)
    n_test = _round_half_up(spec.test_frac * n)
    n_train = n - n_val - n_test
    if n < 3 or min(n_train, n_val, n_test) < 1:
        raise DataError(f"{n} users are too few to populate train/val/test splits")

    item_ids = sorted({t[1] for t in triples})
    iidx = {i: k for k, i in enumerate(item_ids)}
    train_users = set(users[:n_train])
    train_triples = [InteractionTriple(u, i, 1.0) for u in sorted(train_users) for i in sorted(by_user[u])]
    train = build_matrix(train_triples, item_ids=item_ids)

    def fold(group: Sequence[str]):
        foldin, target = {}, {}
        for u in sorted(group):
            items = np.array(sorted(iidx[i] for i in by_user[u]), dtype=np.int64)
            m = items.size
            rng = np.random.default_rng(_hash_key(spec.seed, "foldin", u))
            perm = rng.permutation(m)
            k = _round_half_up(spec.foldin_frac * m)
            if m >= 2:
                k = min(max(k, 1), m - 1)
            foldin[u] = np.sort(items[perm[:k]])
            target[u] = np.sort(items[perm[k:]])
        return foldin, target

    val_f, val_t = fold(users[n_train:n_train + n_val])
    test_f, test_t = fold(users[n_train + n_val:])
    return DatasetBundle(train, val_f, val_t, test_f, test_t, split=spec)


# ---------------------------------------------------------------------------
# on-disk bundle

_SPLIT_FILES = ("train", "val_foldin", "val_target", "test_foldin", "test_target")


def _write_pairs(path: Path, rows: Iterable[tuple[str, str]]) -> None:
    with path.open("w", encoding="utf-8") as fh:
        for u, i in rows:
            fh.write(f"{u}\t{i}\t1\n")


def save_bundle(bundle: DatasetBundle, out_dir) -> dict[str, str]:
    """Write one triple file per split plus ``items.txt`` and ``manifest.txt``.

    Returns the manifest mapping; ``fingerprint`` hashes the split files.
    """
    from .io import write_kv

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    items = bundle.train.item_ids
    users = bundle.train.user_ids
    rows, cols = bundle.train.pairs()
    _write_pairs(out / "train.tsv", ((users[r], items[c]) for r, c in zip(rows, cols)))
    for name in _SPLIT_FILES[1:]:
        lists = getattr(bundle, name)
        _write_pairs(out / f"{name}.tsv", ((u, items[j]) for u in sorted(lists) for j in lists[u]))
    (out / "items.txt").write_text("".join(f"{i}\n" for i in items), encoding="utf-8")
    # empty holdout lists (e.g. single-interaction users) would vanish from the triple files
    (out / "holdout_users.tsv").write_text(
        "".join(f"{split}\t{u}\n" for split in ("val", "test")
                for u in sorted(getattr(bundle, f"{split}_foldin"))),
        encoding="utf-8")

    digest = hashlib.sha256()
    for name in _SPLIT_FILES + ("items", "holdout_users"):
        fname = f"{name}.txt" if name == "items" else f"{name}.tsv"
        digest.update((out / fname).read_bytes())
    manifest = {k: str(v) for k, v in bundle.counts().items()}
    if bundle.split is not None:
        s = bundle.split
        manifest.update(seed=str(s.seed), train_frac=repr(s.train_frac), val_frac=repr(s.val_frac),
                        test_frac=repr(s.test_frac), foldin_frac=repr(s.foldin_frac))
    manifest["fingerprint"] = digest.hexdigest()
    write_kv(out / "manifest.txt", manifest)
    return manifest


def load_bundle(data_dir) -> DatasetBundle:
    from .io import read_kv

    d = Path(data_dir)
    if not (d / "manifest.txt").is_file():
        raise DataError(f"{d} is not a dataset directory (no manifest.txt)")
    item_ids = [line for line in (d / "items.txt").read_text(encoding="utf-8").splitlines() if line]
    iidx = {i: k for k, i in enumerate(item_ids)}
    train = build_matrix(load_interactions(d / "train.tsv"), item_ids=item_ids)

    groups: dict[str, list[str]] = {"val": [], "test": []}
    for line in (d / "holdout_users.tsv").read_text(encoding="utf-8").splitlines():
        if line:
            split, u = line.split("\t", 1)
            groups[split].append(u)

    lists = {}
    for name in _SPLIT_FILES[1:]:
        acc: dict[str, list[int]] = {u: [] for u in groups[name.split("_")[0]]}
        for t in load_interactions(d / f"{name}.tsv"):
            acc.setdefault(t.user_id, []).append(iidx[t.item_id])
        lists[name] = {u: np.array(sorted(v), dtype=np.int64) for u, v in acc.items()}

    m = read_kv(d / "manifest.txt")
    split = None
    if "seed" in m:
        split = SplitSpec(float(m["train_frac"]), float(m["val_frac"]), float(m["test_frac"]),
                          float(m["foldin_frac"]), int(m["seed"]))
    return DatasetBundle(train, lists["val_foldin"], lists["val_target"],
                         lists["test_foldin"], lists["test_target"], split=split)
