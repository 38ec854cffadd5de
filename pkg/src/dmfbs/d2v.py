"""Learnable deep-set metafeature extractor and dataset similarity.

A dataset is flattened into single (predictor value, one-hot target)
pairs; three feedforward stages pool them back down to a fixed-length
metafeature vector:

    e3( mean over (feature, class) of e2( mean over rows of e1(x, y) ) )

which makes the output invariant to row, feature and class order.
"""
from __future__ import annotations

import functools
import hashlib
from dataclasses import dataclass

import numpy as np
from scipy import stats as sps

from . import autodiff as ad
from .autodiff import Var
from .data import Dataset
from .nn import Activation, Dense, ParamSet, Residual, forward_dense_stack, init_params, lift

N_METAFEATURES = 32  # K: width of the final dense layer
STAGE_WIDTH = 32     # K1 = K2, the internal stage widths
MAX_EXTRACT_ROWS = 256


def _res_tower(prefix: str, blocks: int = 8, body_layers: int = 4) -> list:
    """Dense(32); blocks x (body_layers Dense(32) with skip); Dense(32).

    Residual branches are initialized at 1/sqrt(2 * blocks) scale so the
    tower's output variance stays near its input's instead of doubling per
    block; without this, metafeature distances start so large that the
    similarity kernel saturates and its gradient vanishes.
    """
    scale = 1.0 / np.sqrt(2.0 * blocks)
    specs = [Dense(f"{prefix}.in", STAGE_WIDTH), Activation("relu")]
    for b in range(blocks):
        body = []
        for j in range(body_layers):
            body += [Dense(f"{prefix}.res{b}.{j}", STAGE_WIDTH), Activation("relu")]
        specs.append(Residual(tuple(body), branch_scale=scale))
    specs.append(Dense(f"{prefix}.out", STAGE_WIDTH))
    return specs


@functools.lru_cache(maxsize=1)
def mfe_specs() -> dict[str, list]:
    """Layer specs of the three pooling stages.

    The last dense of e3 is left linear (it is the model's metafeature
    output); every other layer is ReLU.
    """
    e1 = _res_tower("e1") + [Activation("relu")]
    e2 = []
    for j in range(4):
        e2 += [Dense(f"e2.{j}", STAGE_WIDTH), Activation("relu")]
    e3 = _res_tower("e3")
    return {"e1": e1, "e2": e2, "e3": e3}


def init_mfe_params(rng: np.random.Generator, prefix: str = "mfe.") -> ParamSet:
    specs = mfe_specs()
    params = ParamSet()
    for stage, in_dim in (("e1", 2), ("e2", STAGE_WIDTH), ("e3", STAGE_WIDTH)):
        stage_params = init_params(specs[stage], in_dim, rng)
        for name, arr in stage_params.items():
            params[prefix + name] = arr
    return params


@dataclass(frozen=True)
class Metafeatures:
    """Fixed-length description of one dataset."""

    values: np.ndarray
    dataset_id: str


def _stable_seed(dataset_id: str) -> int:
    digest = hashlib.sha256(dataset_id.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def _pair_matrix(ds: Dataset, rows: np.ndarray) -> np.ndarray:
    """(F*C*I, 2) matrix of (x_{i,f}, y_{i,c}) pairs, f-major then c then i."""
    X = ds.X[rows]                      # (I, F)
    Y = ds.one_hot(rows)                # (I, C)
    I, F = X.shape
    C = Y.shape[1]
    xs = np.broadcast_to(X.T[:, None, :], (F, C, I))
    ys = np.broadcast_to(Y.T[None, :, :], (F, C, I))
    return np.stack([xs, ys], axis=-1).reshape(F * C * I, 2).astype(np.float32)


def extract_var(ds: Dataset, params: ParamSet, lifted: dict[str, Var] | None = None,
                prefix: str = "mfe.", rng: np.random.Generator | None = None,
                max_rows: int | None = None) -> Var:
    """Differentiable metafeature forward pass; output shape (1, K).

    Datasets larger than the row cap (MAX_EXTRACT_ROWS, or `max_rows` if
    tighter) are subsampled; the sample is seeded from the dataset id when
    no rng is given, so repeated calls agree.
    """
    if lifted is None:
        lifted = lift(params)
    cap = MAX_EXTRACT_ROWS if max_rows is None else min(max_rows, MAX_EXTRACT_ROWS)
    if cap < 1:
        raise ValueError("row cap must be positive")
    rows = np.arange(ds.n_instances)
    if len(rows) > cap:
        sub_rng = rng or np.random.default_rng(_stable_seed(ds.id))
        rows = np.sort(sub_rng.choice(rows, size=cap, replace=False))
    pairs = _pair_matrix(ds, rows)
    if not np.all(np.isfinite(pairs)):
        raise ad.NumericError(f"{ds.id}: non-finite input to the extractor")
    F, C, I = ds.n_features, ds.n_classes, len(rows)

    specs = mfe_specs()
    stage_lift = {k[len(prefix):]: v for k, v in lifted.items() if k.startswith(prefix)}
    stage_params = ParamSet({k: v.value for k, v in stage_lift.items()})

    h = forward_dense_stack(pairs, specs["e1"], stage_params, lifted=stage_lift)
    h = h.reshape((F * C, I, STAGE_WIDTH)).mean(axis=1)
    h = forward_dense_stack(h, specs["e2"], stage_params, lifted=stage_lift)
    h = h.mean(axis=0, keepdims=True)
    return forward_dense_stack(h, specs["e3"], stage_params, lifted=stage_lift)


def extract(ds: Dataset, params: ParamSet, prefix: str = "mfe.") -> Metafeatures:
    out = extract_var(ds, params, prefix=prefix)
    return Metafeatures(values=out.value.reshape(-1).copy(), dataset_id=ds.id)


def similarity_var(a: Var, b: Var) -> Var:
    """exp(-||a - b||), in (0, 1]."""
    return ad.exp(-ad.l2_norm(a - b))


def similarity(a, b) -> float:
    a = np.asarray(a.values if isinstance(a, Metafeatures) else a, dtype=np.float64)
    b = np.asarray(b.values if isinstance(b, Metafeatures) else b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("metafeature vectors differ in length")
    return float(np.exp(-np.linalg.norm(a - b)))


# -- compact engineered metafeatures (fixed, non-learnable) --------------

ENGINEERED_NAMES = (
    "log_instances", "log_features", "log_classes", "class_entropy",
    "class_imbalance", "feat_mean_mean", "feat_mean_std", "feat_mean_skew",
    "feat_mean_kurtosis", "mean_feature_label_corr",
)


def engineered_mf(ds: Dataset) -> np.ndarray:
    """Ten summary statistics of a dataset, fixed order, always finite."""
    counts = np.bincount(ds.y, minlength=ds.n_classes).astype(np.float64)
    probs = counts / counts.sum()
    entropy = float(-(probs[probs > 0] * np.log(probs[probs > 0])).sum())
    imbalance = float(counts.max() / max(counts.min(), 1.0))
    feat_means = ds.X.mean(axis=0).astype(np.float64)
    if len(feat_means) > 1 and feat_means.std() > 0:
        skew = float(sps.skew(feat_means))
        kurt = float(sps.kurtosis(feat_means))
    else:
        skew, kurt = 0.0, 0.0
    corrs = []
    y = ds.y.astype(np.float64)
    for j in range(ds.n_features):
        col = ds.X[:, j].astype(np.float64)
        if col.std() == 0 or y.std() == 0:
            corrs.append(0.0)
        else:
            corrs.append(float(np.corrcoef(col, y)[0, 1]))
    out = np.array([
        np.log(ds.n_instances), np.log(ds.n_features), np.log(ds.n_classes),
        entropy, imbalance, float(feat_means.mean()), float(feat_means.std()),
        skew, kurt, float(np.mean(corrs)),
    ], dtype=np.float64)
    return np.nan_to_num(out, nan=0.0, posinf=0.0, neginf=0.0).astype(np.float32)


def export_metafeatures_csv(path, rows: list[Metafeatures]) -> None:
    """CSV `dataset_id,k0..k{K-1}` for downstream nearest-neighbor use."""
    if not rows:
        raise ValueError("nothing to export")
    width = len(rows[0].values)
    with open(path, "w") as fh:
        fh.write("dataset_id," + ",".join(f"k{i}" for i in range(width)) + "\n")
        for mf in rows:
            fh.write(mf.dataset_id + "," + ",".join(repr(float(v)) for v in mf.values) + "\n")
