"""Tabular classification datasets: loading, instance splits, batch views."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

SPLIT_NAMES = ("train", "valid", "test")
SPLIT_FRACTIONS = (0.60, 0.15, 0.25)

# batch() row counts, powers of two (see Dataset2Vec-style batch sampling)
BATCH_ROW_CHOICES = (16, 32, 64, 128, 256)


@dataclass
class Dataset:
    """A tabular classification dataset with fixed instance splits."""

    id: str
    X: np.ndarray          # (I, F) float32
    y: np.ndarray          # (I,) integer labels in [0, C)
    n_classes: int
    split: np.ndarray      # (I,) int8 codes into SPLIT_NAMES

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float32)
        self.y = np.asarray(self.y, dtype=np.int64)
        self.split = np.asarray(self.split, dtype=np.int8)
        if self.X.ndim != 2 or self.X.shape[0] < 1 or self.X.shape[1] < 1:
            raise ValueError(f"{self.id}: X must be a nonempty matrix")
        if self.n_classes < 2:
            raise ValueError(f"{self.id}: need at least 2 classes")
        present = np.unique(self.y)
        if present.min() < 0 or present.max() >= self.n_classes:
            raise ValueError(f"{self.id}: labels outside [0, C)")
        if len(present) != self.n_classes:
            raise ValueError(f"{self.id}: every class must be present")
        if self.split.shape != self.y.shape:
            raise ValueError(f"{self.id}: split marks must cover every instance")

    @property
    def n_instances(self) -> int:
        return self.X.shape[0]

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    def rows_of(self, part: str) -> np.ndarray:
        return np.flatnonzero(self.split == SPLIT_NAMES.index(part))

    def one_hot(self, rows=None) -> np.ndarray:
        y = self.y if rows is None else self.y[rows]
        out = np.zeros((len(y), self.n_classes), dtype=np.float32)
        out[np.arange(len(y)), y] = 1.0
        return out


def assign_splits(n: int, rng: np.random.Generator) -> np.ndarray:
    """Shuffled 60/15/25 split codes for n instances."""
    n_train = int(round(n * SPLIT_FRACTIONS[0]))
    n_valid = int(round(n * SPLIT_FRACTIONS[1]))
    codes = np.full(n, 2, dtype=np.int8)
    order = rng.permutation(n)
    codes[order[:n_train]] = 0
    codes[order[n_train:n_train + n_valid]] = 1
    return codes


def standardize(ds: Dataset) -> Dataset:
    """Per-feature z-score using train-split statistics."""
    rows = ds.rows_of("train")
    mu = ds.X[rows].mean(axis=0)
    sd = ds.X[rows].std(axis=0)
    sd[sd == 0] = 1.0
    return Dataset(ds.id, (ds.X - mu) / sd, ds.y, ds.n_classes, ds.split)


def batch(ds: Dataset, rng: np.random.Generator) -> Dataset:
    """A joint row/column/class subsample of the train split.

    Rows: a power of two in [16, 256] capped at what the train split
    holds; features: uniform in [1, F]; classes: uniform in [2, C],
    relabeled densely.  Two calls with identically seeded rngs return
    identical views.
    """
    n_classes = int(rng.integers(2, ds.n_classes + 1))
    n_features = int(rng.integers(1, ds.n_features + 1))
    n_rows = int(rng.choice(BATCH_ROW_CHOICES))

    pool = ds.rows_of("train")
    if len(pool) == 0:
        pool = np.arange(ds.n_instances)
    # keep only classes actually representable from the pool
    usable = np.unique(ds.y[pool])
    if len(usable) < 2:
        pool = np.arange(ds.n_instances)
        usable = np.unique(ds.y[pool])
    n_classes = min(n_classes, len(usable))
    class_pick = np.sort(rng.choice(usable, size=n_classes, replace=False))
    feat_pick = np.sort(rng.choice(ds.n_features, size=n_features, replace=False))

    pool = pool[np.isin(ds.y[pool], class_pick)]
    n_rows = min(n_rows, len(pool))
    # one row per selected class first, so every class survives the sample
    first = np.array([rng.choice(pool[ds.y[pool] == c]) for c in class_pick])
    rest_pool = np.setdiff1d(pool, first)
    n_rest = max(0, n_rows - len(first))
    rest = rng.choice(rest_pool, size=min(n_rest, len(rest_pool)), replace=False)
    rows = np.concatenate([first, rest])

    relabel = {int(c): i for i, c in enumerate(class_pick)}
    y = np.array([relabel[int(v)] for v in ds.y[rows]], dtype=np.int64)

    return Dataset(
        id=f"{ds.id}#batch",
        X=ds.X[np.ix_(rows, feat_pick)],
        y=y,
        n_classes=n_classes,
        split=np.zeros(len(rows), dtype=np.int8),
    )


# -- persistence ---------------------------------------------------------


def save_dataset_csv(path, ds: Dataset) -> None:
    """CSV with header f0,...,f{F-1},label,split."""
    path = Path(path)
    header = ",".join([f"f{j}" for j in range(ds.n_features)] + ["label", "split"])
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for i in range(ds.n_instances):
            feats = ",".join(repr(float(v)) for v in ds.X[i])
            fh.write(f"{feats},{int(ds.y[i])},{SPLIT_NAMES[ds.split[i]]}\n")


def load_dataset_csv(path, dataset_id: str | None = None, standardize_features: bool = True) -> Dataset:
    path = Path(path)
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        if header[-2:] != ["label", "split"]:
            raise ValueError(f"{path}: expected trailing label,split columns")
        n_feat = len(header) - 2
        X, y, codes = [], [], []
        for line in fh:
            parts = line.strip().split(",")
            if len(parts) != len(header):
                raise ValueError(f"{path}: ragged row")
            X.append([float(v) for v in parts[:n_feat]])
            y.append(int(parts[n_feat]))
            codes.append(SPLIT_NAMES.index(parts[n_feat + 1]))
    ds = Dataset(
        id=dataset_id or path.stem,
        X=np.array(X, dtype=np.float32),
        y=np.array(y, dtype=np.int64),
        n_classes=int(max(y)) + 1,
        split=np.array(codes, dtype=np.int8),
    )
    return standardize(ds) if standardize_features else ds
