"""Dataset loading, serialization, boosted features and split generation.

A dataset directory holds three UTF-8 text files (``#`` starts a comment):

``features.tsv``
    header ``n d``, then ``node feature value`` lines (sparse COO, 0-based)
``labels.tsv``
    header ``C``, then ``node label`` lines, one per node
``split.tsv``
    ``node role`` lines with role in {train, val, test}
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from glam.numerics import make_rng

log = logging.getLogger(__name__)

ROLES = ("train", "val", "test")
DENSIFY_ABOVE = 0.25


class DatasetError(ValueError):
    pass


@dataclass
class DatasetSplit:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray

    def __post_init__(self):
        self.train = np.sort(np.asarray(self.train, dtype=np.int64))
        self.val = np.sort(np.asarray(self.val, dtype=np.int64))
        self.test = np.sort(np.asarray(self.test, dtype=np.int64))

    def validate(self, n: int) -> None:
        if self.train.size == 0 or self.val.size == 0:
            raise DatasetError("train and val sets must be nonempty")
        parts = [self.train, self.val, self.test]
        joined = np.concatenate(parts)
        if joined.size and (joined.min() < 0 or joined.max() >= n):
            raise DatasetError(f"split index outside [0, {n})")
        if np.unique(joined).size != joined.size:
            raise DatasetError("train/val/test sets overlap")


@dataclass
class Dataset:
    features: sp.csr_matrix
    labels: np.ndarray
    split: DatasetSplit
    num_classes: int
    names: list[str] | None = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def validate(self) -> None:
        if self.labels.shape != (self.n,):
            raise DatasetError(f"expected {self.n} labels, got {self.labels.shape}")
        if self.labels.min(initial=0) < 0 or self.labels.max(initial=0) >= self.num_classes:
            raise DatasetError(f"label ids must lie in [0, {self.num_classes})")
        self.split.validate(self.n)
        missing = set(range(self.num_classes)) - set(self.labels[self.split.train].tolist())
        if missing:
            log.warning("classes %s have no training node", sorted(missing))


def _data_lines(path: Path):
    """Yield (line_number, fields) for non-blank, non-comment lines."""
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            text = raw.split("#", 1)[0].strip()
            if text:
                yield lineno, text.split()


def _fail(path: Path, lineno: int, msg: str):
    raise DatasetError(f"{path}:{lineno}: {msg}")


def _parse_ints(path, lineno, fields, count):
    if len(fields) != count:
        _fail(path, lineno, f"expected {count} fields, got {len(fields)}")
    try:
        return [int(f) for f in fields]
    except ValueError:
        _fail(path, lineno, f"malformed integer in {' '.join(fields)!r}")


def load_dataset(path) -> Dataset:
    root = Path(path)
    for name in ("features.tsv", "labels.tsv", "split.tsv"):
        if not (root / name).is_file():
            raise DatasetError(f"missing file {root / name}")

    fpath = root / "features.tsv"
    lines = _data_lines(fpath)
    try:
        lineno, header = next(lines)
    except StopIteration:
        raise DatasetError(f"{fpath}: empty file") from None
    n, d = _parse_ints(fpath, lineno, header, 2)
    rows, cols, vals = [], [], []
    seen = set()
    for lineno, fields in lines:
        if len(fields) != 3:
            _fail(fpath, lineno, f"expected 3 fields, got {len(fields)}")
        try:
            i, j, v = int(fields[0]), int(fields[1]), float(fields[2])
        except ValueError:
            _fail(fpath, lineno, f"malformed entry {' '.join(fields)!r}")
        if not (0 <= i < n and 0 <= j < d):
            _fail(fpath, lineno, f"index ({i}, {j}) outside {n}x{d}")
        if not np.isfinite(v):
            _fail(fpath, lineno, "non-finite value")
        if (i, j) in seen:
            _fail(fpath, lineno, f"duplicate coordinate ({i}, {j})")
        seen.add((i, j))
        rows.append(i)
        cols.append(j)
        vals.append(v)
    features = sp.csr_matrix((np.array(vals, dtype=np.float64), (rows, cols)), shape=(n, d))
    features.sort_indices()

    lpath = root / "labels.tsv"
    lines = _data_lines(lpath)
    try:
        lineno, header = next(lines)
    except StopIteration:
        raise DatasetError(f"{lpath}: empty file") from None
    (num_classes,) = _parse_ints(lpath, lineno, header, 1)
    labels = np.full(n, -1, dtype=np.int64)
    for lineno, fields in lines:
        i, y = _parse_ints(lpath, lineno, fields, 2)
        if not 0 <= i < n:
            _fail(lpath, lineno, f"node {i} outside [0, {n})")
        if not 0 <= y < num_classes:
            _fail(lpath, lineno, f"label {y} outside [0, {num_classes})")
        if labels[i] != -1:
            _fail(lpath, lineno, f"duplicate label for node {i}")
        labels[i] = y
    if (labels < 0).any():
        raise DatasetError(f"{lpath}: nodes {np.flatnonzero(labels < 0)[:5].tolist()} have no label")

    spath = root / "split.tsv"
    members = {r: [] for r in ROLES}
    assigned = set()
    for lineno, fields in _data_lines(spath):
        if len(fields) != 2:
            _fail(spath, lineno, f"expected 2 fields, got {len(fields)}")
        try:
            i = int(fields[0])
        except ValueError:
            _fail(spath, lineno, f"malformed node index {fields[0]!r}")
        role = fields[1]
        if role not in members:
            _fail(spath, lineno, f"unknown role {role!r}")
        if not 0 <= i < n:
            _fail(spath, lineno, f"node {i} outside [0, {n})")
        if i in assigned:
            _fail(spath, lineno, f"node {i} listed twice")
        assigned.add(i)
        members[role].append(i)

    ds = Dataset(features, labels, DatasetSplit(**members), num_classes)
    ds.validate()
    return ds


def save_dataset(ds: Dataset, path) -> None:
    """Write ``ds`` in the directory format read by :func:`load_dataset`."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    coo = sp.coo_matrix(ds.features)
    order = np.lexsort((coo.col, coo.row))
    with open(root / "features.tsv", "w", encoding="utf-8") as fh:
        fh.write(f"{ds.n} {ds.d}\n")
        for k in order:
            fh.write(f"{coo.row[k]} {coo.col[k]} {float(coo.data[k])!r}\n")
    with open(root / "labels.tsv", "w", encoding="utf-8") as fh:
        fh.write(f"{ds.num_classes}\n")
        for i, y in enumerate(ds.labels):
            fh.write(f"{i} {int(y)}\n")
    write_split(ds.split, root / "split.tsv")


def write_split(split: DatasetSplit, path) -> None:
    entries = sorted(
        [(int(i), role) for role in ROLES for i in getattr(split, role)],
    )
    with open(path, "w", encoding="utf-8") as fh:
        for i, role in entries:
            fh.write(f"{i} {role}\n")


def boosted_features(x):
    """Return ``X @ N`` with ``N = D^-1/2 (X^T X) D^-1/2``, D the row sums of X^T X.

    Feature columns that never occur give zero rows/columns in ``N``. The
    result stays sparse unless more than a quarter of it is nonzero.
    """
    x = sp.csr_matrix(x, dtype=np.float64)
    if x.nnz and x.data.min() < 0:
        raise ValueError("boosted features need a nonnegative feature matrix")
    s = (x.T @ x).tocsr()
    deg = np.asarray(s.sum(axis=1)).ravel()
    inv_sqrt = np.zeros_like(deg)
    np.divide(1.0, np.sqrt(deg), out=inv_sqrt, where=deg > 0)
    scale = sp.diags(inv_sqrt)
    norm = (scale @ s @ scale).tocsr()
    out = (x @ norm).tocsr()
    out.eliminate_zeros()
    total = out.shape[0] * out.shape[1]
    if total and out.nnz / total > DENSIFY_ABOVE:
        return out.toarray()
    out.sort_indices()
    return out


def make_split(
    labels: np.ndarray,
    per_class: int = 20,
    num_val: int = 500,
    num_test: int = 1000,
    seed: int = 0,
) -> DatasetSplit:
    """Seeded split: fix val/test first, then sample ``per_class`` train nodes per class from the rest."""
    labels = np.asarray(labels)
    n = labels.size
    if num_val + num_test >= n:
        raise DatasetError(f"val+test ({num_val + num_test}) leaves no nodes for training out of {n}")
    rng = make_rng(seed, "split")
    perm = rng.permutation(n)
    val, test, rest = perm[:num_val], perm[num_val : num_val + num_test], perm[num_val + num_test :]
    train = []
    for c in np.unique(labels):
        pool = np.sort(rest[labels[rest] == c])
        if pool.size < per_class:
            raise DatasetError(f"class {c} has {pool.size} remaining nodes, need {per_class}")
        train.append(rng.choice(pool, size=per_class, replace=False))
    return DatasetSplit(np.concatenate(train), val, test)
