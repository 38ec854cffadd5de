"""Metafeature-conditioned response regressor and the combined model.

The head concatenates a dataset's metafeatures with an encoded config and
regresses the normalized response.  ``SurrogateModel`` bundles the
extractor and the head behind one flat ParamSet ("mfe." / "sur."
prefixes) so checkpoints, optimizers and Reptile arithmetic all see a
single named parameter collection.
"""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from . import d2v
from .autodiff import Var
from .data import Dataset
from .nn import Activation, Dense, DimensionError, ParamSet, forward_dense_stack, init_params, lift
from .space import Config

KIND_DMFBS = "dmfbs"            # learned extractor, trained end to end
KIND_MFBS_FIXED = "mfbs-fixed"  # precomputed metafeature vectors, no MFE grads

PSI1_WIDTHS = (128, 64, 32, 16)
PSI2_WIDTHS = (16, 16, 16, 16)


def sur_specs() -> list:
    """Dense(128);Dense(64);Dense(32);Dense(16) then 4xDense(16) and a
    linear scalar head; ReLU everywhere except the final layer."""
    specs = []
    for i, w in enumerate(PSI1_WIDTHS):
        specs += [Dense(f"psi1.{i}", w), Activation("relu")]
    for i, w in enumerate(PSI2_WIDTHS):
        specs += [Dense(f"psi2.{i}", w), Activation("relu")]
    specs.append(Dense("psi2.head", 1))
    return specs


def init_sur_params(input_dim: int, rng: np.random.Generator, prefix: str = "sur.") -> ParamSet:
    params = ParamSet()
    for name, arr in init_params(sur_specs(), input_dim, rng).items():
        params[prefix + name] = arr
    return params


class SurrogateModel:
    """Extractor + regression head over a flat named parameter set."""

    def __init__(self, enc_dim: int, seed: int = 0, kind: str = KIND_DMFBS,
                 fixed_metafeatures: dict[str, np.ndarray] | None = None):
        if kind not in (KIND_DMFBS, KIND_MFBS_FIXED):
            raise ValueError(f"unknown surrogate kind {kind!r}")
        if kind == KIND_MFBS_FIXED and not fixed_metafeatures:
            raise ValueError("fixed-metafeature surrogate needs precomputed vectors")
        self.enc_dim = enc_dim
        self.kind = kind
        self.fixed_metafeatures = fixed_metafeatures or {}
        if kind == KIND_MFBS_FIXED:
            self.mf_dim = len(next(iter(self.fixed_metafeatures.values())))
        else:
            self.mf_dim = d2v.N_METAFEATURES
        rng = np.random.default_rng(seed)
        self.params = ParamSet()
        if kind == KIND_DMFBS:
            for name, arr in d2v.init_mfe_params(rng).items():
                self.params[name] = arr
        for name, arr in init_sur_params(self.mf_dim + enc_dim, rng).items():
            self.params[name] = arr
        self._sur_specs = sur_specs()

    def clone(self, params: ParamSet | None = None) -> "SurrogateModel":
        other = object.__new__(SurrogateModel)
        other.enc_dim = self.enc_dim
        other.kind = self.kind
        other.fixed_metafeatures = self.fixed_metafeatures
        other.mf_dim = self.mf_dim
        other.params = (params if params is not None else self.params).copy()
        other._sur_specs = self._sur_specs
        return other

    # -- forward passes --------------------------------------------------

    def extract_var(self, ds: Dataset, lifted: dict[str, Var],
                    rng: np.random.Generator | None = None,
                    max_rows: int | None = None) -> Var:
        """Metafeatures as a (1, K) graph node; constant for fixed kinds."""
        if self.kind == KIND_MFBS_FIXED:
            key = ds.id.split("#", 1)[0]
            vec = self.fixed_metafeatures[key]
            return Var(np.asarray(vec, dtype=np.float32).reshape(1, -1))
        return d2v.extract_var(ds, self.params, lifted=lifted, rng=rng,
                               max_rows=max_rows)

    def predict_var(self, encoded: np.ndarray | Var, mf: Var,
                    lifted: dict[str, Var]) -> Var:
        """Predictions, shape (batch, 1); differentiable in both inputs."""
        enc = ad.as_var(encoded)
        if enc.value.ndim == 1:
            enc = enc.reshape((1, -1))
        if enc.value.shape[1] != self.enc_dim:
            raise DimensionError(
                f"encoded width {enc.value.shape[1]} != expected {self.enc_dim}")
        ones = Var(np.ones((enc.value.shape[0], 1), dtype=np.float32))
        tiled = ad.matmul(ones, mf)  # broadcast (1,K) metafeatures to the batch
        joined = ad.concat([tiled, enc], axis=1)
        sur_lift = {k[len("sur."):]: v for k, v in lifted.items() if k.startswith("sur.")}
        sur_params = ParamSet({k: v.value for k, v in sur_lift.items()})
        return forward_dense_stack(joined, self._sur_specs, sur_params, lifted=sur_lift)

    # -- plain numpy front ends ------------------------------------------

    def metafeatures(self, ds: Dataset) -> np.ndarray:
        if self.kind == KIND_MFBS_FIXED:
            return np.asarray(self.fixed_metafeatures[ds.id.split("#", 1)[0]], dtype=np.float32)
        return d2v.extract(ds, self.params).values

    def predict(self, encoded: np.ndarray, ds: Dataset) -> float:
        lifted = lift(self.params)
        mf = self.extract_var(ds, lifted)
        return float(self.predict_var(np.asarray(encoded), mf, lifted).value[0, 0])

    def predict_grid(self, ds: Dataset, grid: list[Config]) -> np.ndarray:
        """Scores for every config, computing the metafeatures once."""
        if not grid:
            return np.zeros(0, dtype=np.float32)
        lifted = lift(self.params)
        mf = self.extract_var(ds, lifted)
        enc = np.stack([c.encoded for c in grid])
        return self.predict_var(enc, mf, lifted).value.reshape(-1).copy()
