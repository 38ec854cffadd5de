"""Meta-dataset construction: target-network training and a synthetic family.

Real responses come from training the grid's feedforward networks on
datasets and recording validation cross-entropy.  The synthetic family
replaces that (expensive) step with Gaussian-mixture datasets and an
analytic response rule whose optimum depends on the dataset, so transfer
is learnable and testable at desk scale.
"""
from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import nn
from .autodiff import NumericError, softmax_cross_entropy
from .data import Dataset, assign_splits, standardize
from .meta import MetaDataset, normalize_responses
from .nn import Activation, BatchNorm, Dense, Dropout, OptimizerState, forward_dense_stack, init_params, lift, optimizer_step
from .space import Config, SearchSpace, enumerate_grid, expand_layout

log = logging.getLogger(__name__)


@dataclass
class TargetNetSpec:
    """Fixed training protocol for the grid's target networks."""

    epochs: int = 50
    learning_rate: float = 0.001
    batch_size: int = 32


def target_net_layers(config: Config, n_classes: int) -> list:
    """Hidden stack from the config's expanded widths plus a C-way head."""
    widths = expand_layout(config.raw["layout"], config.raw["neurons"], config.raw["layers"])
    specs = []
    for i, w in enumerate(widths):
        specs.append(Dense(f"h{i}", w))
        if config.raw["normalization"]:
            specs.append(BatchNorm(f"bn{i}"))
        specs.append(Activation(config.raw["activation"]))
        if config.raw["dropout"] > 0:
            specs.append(Dropout(config.raw["dropout"]))
    specs.append(Dense("out", n_classes))
    return specs


@dataclass
class TargetNetResult:
    val_loss: float
    val_accuracy: float
    diverged: bool


def train_target_net(ds: Dataset, config: Config, spec: TargetNetSpec,
                     rng: np.random.Generator) -> TargetNetResult:
    """Train one grid configuration; returns final-epoch validation loss.

    A divergent run (non-finite loss) reports the worst finite validation
    loss seen so far and is flagged, so the grid stays complete.
    """
    train_rows = ds.rows_of("train")
    valid_rows = ds.rows_of("valid")
    if len(train_rows) == 0 or len(valid_rows) == 0:
        raise ValueError(f"{ds.id}: needs nonempty train and valid splits")

    specs = target_net_layers(config, ds.n_classes)
    params = init_params(specs, ds.n_features, rng)
    opt = OptimizerState(config.raw["optimizer"], lr=spec.learning_rate)

    def val_metrics(p: nn.ParamSet) -> tuple[float, float]:
        out = forward_dense_stack(ds.X[valid_rows], specs, p, training=False)
        onehot = ds.one_hot(valid_rows)
        loss = softmax_cross_entropy(out, onehot).item()
        acc = float((out.value.argmax(axis=1) == ds.y[valid_rows]).mean())
        return loss, acc

    worst_finite, result = None, None
    try:
        result = val_metrics(params)
        worst_finite = result
        for _ in range(spec.epochs):
            order = rng.permutation(train_rows)
            for start in range(0, len(order), spec.batch_size):
                rows = order[start:start + spec.batch_size]
                lifted = lift(params)
                out = forward_dense_stack(ds.X[rows], specs, params, training=True,
                                          rng=rng, lifted=lifted)
                loss = softmax_cross_entropy(out, ds.one_hot(rows))
                loss.backward()
                params = optimizer_step(opt, params, nn.collect_grads(lifted))
            result = val_metrics(params)
            if not np.isfinite(result[0]):
                raise NumericError("validation loss diverged")
            if result[0] > worst_finite[0]:
                worst_finite = result
    except NumericError:
        log.warning("%s config %d diverged; recording worst finite loss",
                    ds.id, config.id)
        loss, acc = worst_finite
        return TargetNetResult(loss, acc, diverged=True)
    loss, acc = result
    log.debug("%s config %d: val loss %.4f acc %.3f", ds.id, config.id, loss, acc)
    return TargetNetResult(loss, acc, diverged=False)


def _pair_seed(dataset_id: str, config_id: int) -> int:
    digest = hashlib.sha256(f"{dataset_id}|{config_id}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def build_meta_dataset(datasets: dict[str, Dataset], space: SearchSpace,
                       spec: TargetNetSpec, results_path,
                       grid: list[Config] | None = None) -> MetaDataset:
    """Train every (dataset, config) pair, resumably.

    Completed pairs are appended to `results_path` as they finish and are
    skipped on rerun; per-pair seeds depend only on the pair so a resumed
    build matches a fresh one.  Returns the normalized meta-dataset.
    """
    if not datasets:
        raise ValueError("no datasets supplied")
    grid = grid if grid is not None else enumerate_grid(space)
    results_path = Path(results_path)

    done: dict[tuple[str, int], float] = {}
    if results_path.exists():
        for line in results_path.read_text().splitlines():
            if not line or line.startswith("dataset_id"):
                continue
            did, cid, loss = line.split(",")
            done[(did, int(cid))] = float(loss)
    else:
        results_path.write_text("dataset_id,config_id,loss\n")

    with open(results_path, "a") as fh:
        for did in sorted(datasets):
            for cfg in grid:
                if (did, cfg.id) in done:
                    continue
                rng = np.random.default_rng(_pair_seed(did, cfg.id))
                result = train_target_net(datasets[did], cfg, spec, rng)
                done[(did, cfg.id)] = result.val_loss
                fh.write(f"{did},{cfg.id},{result.val_loss!r}\n")
                fh.flush()

    raw = MetaDataset(space, dict(datasets), grid,
                      {k: v for k, v in done.items()}, normalized=False)
    return normalize_responses(raw)


# -- synthetic family ----------------------------------------------------


@dataclass
class SynthSpec:
    """Sizes and noise of the synthetic meta-dataset family."""

    n_datasets: int = 20
    instances: tuple[int, int] = (60, 200)
    features: tuple[int, int] = (2, 4)
    classes: tuple[int, int] = (2, 4)
    noise: float = 0.01
    projection_seed: int = 1234

    def __post_init__(self):
        if self.noise < 0:
            raise ValueError("noise level must be nonnegative")


def dataset_stats(ds: Dataset) -> np.ndarray:
    """Class entropy, log C, max class probability, class-center dispersion.

    These are the synthetic response rule's inputs.  All four are
    distributional quantities that a set encoder pooling by means can in
    principle recover from (feature, label) pairs; raw counts like the
    number of instances or features deliberately do not appear.
    """
    counts = np.bincount(ds.y, minlength=ds.n_classes).astype(np.float64)
    probs = counts / counts.sum()
    entropy = float(-(probs[probs > 0] * np.log(probs[probs > 0])).sum())
    X = ds.X.astype(np.float64)
    centers = np.stack([X[ds.y == c].mean(axis=0) for c in range(ds.n_classes)])
    dispersion = float(np.mean(np.linalg.norm(centers, axis=1))
                       / np.sqrt(ds.n_features))
    return np.array([entropy, np.log(ds.n_classes), probs.max(), dispersion])


@dataclass
class SynthOracle:
    """Closed form for the noiseless synthetic response surface."""

    targets: dict[str, np.ndarray]  # dataset id -> point in encoding space
    grid: list[Config] = field(repr=False, default=None)

    def response(self, dataset_id: str, config: Config) -> float:
        diff = config.encoded.astype(np.float64) - self.targets[dataset_id]
        return float(diff @ diff)

    def argmin(self, dataset_id: str) -> int:
        losses = [self.response(dataset_id, c) for c in self.grid]
        return self.grid[int(np.argmin(losses))].id


def _stat_scaling(spec: SynthSpec) -> tuple[np.ndarray, np.ndarray]:
    """Affine maps taking each dataset_stats entry to roughly [-1, 1].

    Entropy / log C / max-probability bounds follow from the class-count
    range; the dispersion bound is an empirical cap for standardized
    Gaussian-mixture data.
    """
    c_hi = spec.classes[1]
    los = np.array([0.0, np.log(spec.classes[0]), 1.0 / c_hi, 0.0])
    his = np.array([np.log(c_hi), np.log(c_hi), 1.0, 1.2])
    mid = (los + his) / 2.0
    half = np.maximum((his - los) / 2.0, 1e-9)
    return mid, half


def synth_dataset(name: str, spec: SynthSpec, rng: np.random.Generator) -> Dataset:
    """One Gaussian-mixture classification dataset with random shape."""
    n = int(rng.integers(spec.instances[0], spec.instances[1] + 1))
    f = int(rng.integers(spec.features[0], spec.features[1] + 1))
    c = int(rng.integers(spec.classes[0], spec.classes[1] + 1))
    weights = rng.dirichlet(np.full(c, 3.0))
    centers = rng.normal(0.0, 2.0, size=(c, f))
    y = rng.choice(c, size=n, p=weights)
    # ensure every class appears
    for cls in range(c):
        if not np.any(y == cls):
            y[int(rng.integers(0, n))] = cls
    X = centers[y] + rng.normal(0.0, 1.0, size=(n, f))
    ds = Dataset(id=name, X=X.astype(np.float32), y=y, n_classes=c,
                 split=assign_splits(n, rng))
    return standardize(ds)


def synth(spec: SynthSpec, space: SearchSpace,
          rng: np.random.Generator) -> tuple[MetaDataset, SynthOracle]:
    """Synthetic meta-dataset plus its noiseless oracle.

    The response of a config is its squared encoding-space distance to a
    dataset-dependent target point t(D) = clip(0.5 + P z(D), 0, 1), where
    z(D) scales dataset_stats(D) (class entropy, log C, max class
    probability, center dispersion) to roughly [-1, 1] and P is a fixed
    seeded projection.  Optimal configs therefore move with the dataset,
    and only through distributional statistics that a set encoder can
    observe, so the mapping is learnable from data.
    """
    grid = enumerate_grid(space)
    enc_dim = len(grid[0].encoded)
    proj_rng = np.random.default_rng(spec.projection_seed)
    P = proj_rng.uniform(-0.6, 0.6, size=(enc_dim, 4))
    mid, half = _stat_scaling(spec)

    datasets, targets, responses = {}, {}, {}
    width = len(str(max(spec.n_datasets - 1, 1)))
    for i in range(spec.n_datasets):
        name = f"synth{i:0{width}d}"
        ds = synth_dataset(name, spec, rng)
        datasets[name] = ds
        z = (dataset_stats(ds) - mid) / half
        targets[name] = np.clip(0.5 + P @ z, 0.0, 1.0)
        for cfg in grid:
            diff = cfg.encoded.astype(np.float64) - targets[name]
            loss = float(diff @ diff)
            if spec.noise > 0:
                loss += float(rng.normal(0.0, spec.noise))
            responses[(name, cfg.id)] = loss

    meta = MetaDataset(space, datasets, grid, responses, normalized=False)
    return meta, SynthOracle(targets=targets, grid=grid)
