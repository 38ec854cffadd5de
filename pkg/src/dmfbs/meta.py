"""Meta-dataset container: response triples, normalization, fold splits."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import Dataset, load_dataset_csv, save_dataset_csv
from .space import Config, SearchSpace, load_grid_json, save_grid_json


class DegenerateSurfaceError(ValueError):
    """A dataset whose response surface is constant cannot be normalized."""


@dataclass
class MetaDataset:
    """Denormalized (dataset, config, loss) triples over a shared grid."""

    space: SearchSpace
    datasets: dict[str, Dataset]
    grid: list[Config]
    responses: dict[tuple[str, int], float] = field(default_factory=dict)
    normalized: bool = False

    def dataset_ids(self) -> list[str]:
        return sorted(self.datasets)

    def _index(self) -> dict[str, list[tuple[int, float]]]:
        # rebuilt lazily; add_response keeps it current
        cached = getattr(self, "_by_dataset", None)
        if cached is None:
            cached = {}
            for (did, cid), loss in sorted(self.responses.items()):
                cached.setdefault(did, []).append((cid, loss))
            self._by_dataset = cached
        return cached

    def ids_with_responses(self) -> list[str]:
        return sorted(self._index())

    def add_response(self, dataset_id: str, config_id: int, loss: float) -> None:
        key = (dataset_id, config_id)
        if key in self.responses:
            raise ValueError(f"duplicate response for {key}")
        self.responses[key] = float(loss)
        self._index().setdefault(dataset_id, []).append((config_id, float(loss)))

    def losses_for(self, dataset_id: str) -> np.ndarray:
        """Loss per grid config (NaN where unobserved)."""
        out = np.full(len(self.grid), np.nan)
        for cfg in self.grid:
            out[cfg.id] = self.responses.get((dataset_id, cfg.id), np.nan)
        return out

    def triples_for(self, dataset_id: str) -> list[tuple[Config, float]]:
        by_id = getattr(self, "_grid_by_id", None)
        if by_id is None:
            by_id = self._grid_by_id = {c.id: c for c in self.grid}
        return [(by_id[cid], loss) for cid, loss in self._index().get(dataset_id, [])]

    def restricted(self, dataset_ids) -> "MetaDataset":
        """Same grid/datasets, responses only for the given dataset ids."""
        keep = set(dataset_ids)
        return MetaDataset(
            space=self.space,
            datasets=self.datasets,
            grid=self.grid,
            responses={k: v for k, v in self.responses.items() if k[0] in keep},
            normalized=self.normalized,
        )


def normalize_responses(meta: MetaDataset) -> MetaDataset:
    """Per-dataset affine map of losses onto [0, 100], best config at 0."""
    out = {}
    for did in meta.ids_with_responses():
        items = [(k, v) for k, v in meta.responses.items() if k[0] == did]
        losses = np.array([v for _, v in items])
        lo, hi = losses.min(), losses.max()
        if hi <= lo:
            raise DegenerateSurfaceError(f"{did}: constant response surface")
        for (key, v) in items:
            out[key] = float(100.0 * (v - lo) / (hi - lo))
    return MetaDataset(meta.space, meta.datasets, meta.grid, out, normalized=True)


@dataclass(frozen=True)
class FoldSplit:
    """Disjoint meta-train / meta-valid / meta-test dataset ids for one fold."""

    fold: int
    train: tuple[str, ...]
    valid: tuple[str, ...]
    test: tuple[str, ...]

    def __post_init__(self):
        parts = set(self.train) | set(self.valid) | set(self.test)
        if len(parts) != len(self.train) + len(self.valid) + len(self.test):
            raise ValueError("fold parts must be disjoint")


def split_folds(dataset_ids, k: int = 5, seed: int = 0) -> list[FoldSplit]:
    """k folds; each id is in meta-test exactly once; 80/16/24 proportions.

    Valid/train sizes follow the 16:80 ratio of the non-test remainder,
    rounded, scaled to however many datasets are available.
    """
    ids = sorted(dataset_ids)
    if k < 2:
        raise ValueError("need k >= 2 folds")
    if len(ids) < k + 2:
        raise ValueError(f"too few datasets ({len(ids)}) for {k} folds")
    rng = np.random.default_rng(seed)
    order = [ids[i] for i in rng.permutation(len(ids))]
    chunks = [list(c) for c in np.array_split(np.array(order, dtype=object), k)]
    folds = []
    for f in range(k):
        test = sorted(chunks[f])
        rest = [d for c in range(k) if c != f for d in chunks[c]]
        n_valid = max(1, int(round(len(rest) * 16 / 96)))
        pick = rng.permutation(len(rest))
        valid = sorted(rest[i] for i in pick[:n_valid])
        train = sorted(rest[i] for i in pick[n_valid:])
        folds.append(FoldSplit(f, tuple(train), tuple(valid), tuple(test)))
    return folds


# -- persistence ---------------------------------------------------------
#
# A meta-dataset directory holds:
#   datasets/<id>.csv          one file per dataset
#   grid.json                  grid + encoding schema
#   responses.csv              dataset_id,config_id,loss
#   responses_normalized.csv   same rows after normalization
#   splits.json                {"folds": [{"train": [...], ...}]}


def save_responses_csv(path, responses: dict, normalized: bool) -> None:
    with open(path, "w") as fh:
        fh.write(f"# normalized={str(normalized).lower()}\n")
        fh.write("dataset_id,config_id,loss\n")
        for (did, cid), loss in sorted(responses.items()):
            fh.write(f"{did},{cid},{float(loss)!r}\n")


def load_responses_csv(path) -> tuple[dict, bool]:
    responses = {}
    normalized = False
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line == "dataset_id,config_id,loss":
                continue
            if line.startswith("#"):
                normalized = "normalized=true" in line
                continue
            did, cid, loss = line.split(",")
            responses[(did, int(cid))] = float(loss)
    return responses, normalized


def save_splits_json(path, folds: list[FoldSplit]) -> None:
    payload = {
        "folds": [
            {"train": list(f.train), "valid": list(f.valid), "test": list(f.test)}
            for f in folds
        ]
    }
    Path(path).write_text(json.dumps(payload, indent=1, sort_keys=True))


def load_splits_json(path) -> list[FoldSplit]:
    payload = json.loads(Path(path).read_text())
    return [
        FoldSplit(i, tuple(f["train"]), tuple(f["valid"]), tuple(f["test"]))
        for i, f in enumerate(payload["folds"])
    ]


def save_meta_dir(root, meta: MetaDataset, folds: list[FoldSplit] | None = None) -> None:
    root = Path(root)
    (root / "datasets").mkdir(parents=True, exist_ok=True)
    for did in meta.dataset_ids():
        save_dataset_csv(root / "datasets" / f"{did}.csv", meta.datasets[did])
    save_grid_json(root / "grid.json", meta.space, meta.grid)
    name = "responses_normalized.csv" if meta.normalized else "responses.csv"
    save_responses_csv(root / name, meta.responses, meta.normalized)
    if folds is not None:
        save_splits_json(root / "splits.json", folds)


def load_meta_dir(root, normalized: bool = True) -> MetaDataset:
    root = Path(root)
    space, grid = load_grid_json(root / "grid.json")
    datasets = {}
    for path in sorted((root / "datasets").glob("*.csv")):
        ds = load_dataset_csv(path, standardize_features=False)
        datasets[ds.id] = ds
    name = "responses_normalized.csv" if normalized else "responses.csv"
    responses, is_norm = load_responses_csv(root / name)
    return MetaDataset(space, datasets, grid, responses, normalized=is_norm)
