"""Dense layer stacks, parameter sets, optimizers and gradient checking."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import NumericError, Var


class DimensionError(ValueError):
    """Shape mismatch between an input and the layer that consumes it."""


BN_MOMENTUM = 0.99
BN_EPS = 1e-5


class ParamSet:
    """Named map of parameter arrays with deterministic (sorted) iteration.

    Shapes are frozen once a name is assigned; values may be replaced.
    """

    def __init__(self, arrays=None):
        self._arrays: dict[str, np.ndarray] = {}
        if arrays:
            for name, arr in arrays.items():
                self[name] = arr

    def __setitem__(self, name: str, arr):
        arr = np.asarray(arr)
        if name in self._arrays and self._arrays[name].shape != arr.shape:
            raise ValueError(f"shape of parameter {name!r} is immutable")
        self._arrays[name] = arr

    def __getitem__(self, name: str) -> np.ndarray:
        return self._arrays[name]

    def __contains__(self, name: str) -> bool:
        return name in self._arrays

    def __len__(self) -> int:
        return len(self._arrays)

    def names(self) -> list[str]:
        return sorted(self._arrays)

    def items(self):
        for name in self.names():
            yield name, self._arrays[name]

    def copy(self) -> "ParamSet":
        return ParamSet({k: v.copy() for k, v in self._arrays.items()})

    def astype(self, dtype) -> "ParamSet":
        return ParamSet({k: v.astype(dtype) for k, v in self._arrays.items()})

    def zeros_like(self) -> "ParamSet":
        return ParamSet({k: np.zeros_like(v) for k, v in self._arrays.items()})

    def subset(self, prefix: str) -> "ParamSet":
        return ParamSet({k: v for k, v in self._arrays.items() if k.startswith(prefix)})

    def _check_names(self, other: "ParamSet"):
        if self.names() != other.names():
            raise ValueError("parameter sets have mismatched names")

    def __add__(self, other: "ParamSet") -> "ParamSet":
        self._check_names(other)
        return ParamSet({k: v + other[k] for k, v in self._arrays.items()})

    def __sub__(self, other: "ParamSet") -> "ParamSet":
        self._check_names(other)
        return ParamSet({k: v - other[k] for k, v in self._arrays.items()})

    def __mul__(self, scalar: float) -> "ParamSet":
        return ParamSet({k: v * scalar for k, v in self._arrays.items()})

    __rmul__ = __mul__

    def allclose(self, other: "ParamSet", **kw) -> bool:
        self._check_names(other)
        return all(np.allclose(v, other[k], **kw) for k, v in self.items())


def lift(params: ParamSet) -> dict[str, Var]:
    """Wrap every parameter into a graph leaf."""
    return {name: Var(arr) for name, arr in params.items()}


def collect_grads(lifted: dict[str, Var]) -> ParamSet:
    """Gradients of the lifted parameters after backward(), zeros if unused."""
    out = ParamSet()
    for name, var in lifted.items():
        out[name] = np.zeros_like(var.value) if var.grad is None else var.grad
    return out


# -- layer specs ---------------------------------------------------------


@dataclass(frozen=True)
class Dense:
    name: str
    units: int


@dataclass(frozen=True)
class Activation:
    kind: str  # relu | leaky_relu | selu


@dataclass(frozen=True)
class Dropout:
    rate: float


@dataclass(frozen=True)
class BatchNorm:
    name: str


@dataclass(frozen=True)
class Residual:
    """Inner stack with an identity skip from block input to block output.

    `branch_scale` multiplies the init of the body's last dense weights;
    towers of many stacked blocks use it to keep output variance from
    doubling at every block.
    """

    body: tuple
    branch_scale: float = 1.0


_ACTIVATIONS = {
    "relu": ad.relu,
    "leaky_relu": lambda x: ad.leaky_relu(x, 0.01),
    "selu": ad.selu,
}


def init_params(specs, in_dim: int, rng: np.random.Generator, dtype=np.float32) -> ParamSet:
    """He-style fan-in uniform init for every Dense; identity init for norms."""
    params = ParamSet()
    _init_walk(specs, in_dim, rng, dtype, params)
    return params


def _init_walk(specs, in_dim, rng, dtype, params) -> int:
    for spec in specs:
        if isinstance(spec, Dense):
            limit = np.sqrt(6.0 / in_dim)
            params[spec.name + ".w"] = rng.uniform(-limit, limit, (in_dim, spec.units)).astype(dtype)
            params[spec.name + ".b"] = np.zeros(spec.units, dtype=dtype)
            in_dim = spec.units
        elif isinstance(spec, BatchNorm):
            params[spec.name + ".gamma"] = np.ones(in_dim, dtype=dtype)
            params[spec.name + ".beta"] = np.zeros(in_dim, dtype=dtype)
            params[spec.name + ".running_mean"] = np.zeros(in_dim, dtype=dtype)
            params[spec.name + ".running_var"] = np.ones(in_dim, dtype=dtype)
        elif isinstance(spec, Residual):
            out = _init_walk(spec.body, in_dim, rng, dtype, params)
            if out != in_dim:
                raise DimensionError("residual body must preserve width")
            if spec.branch_scale != 1.0:
                last = next(s for s in reversed(spec.body) if isinstance(s, Dense))
                params[last.name + ".w"] = (
                    params[last.name + ".w"] * dtype(spec.branch_scale))
    return in_dim


def forward_dense_stack(x, specs, params: ParamSet, training: bool = False,
                        rng: np.random.Generator | None = None,
                        lifted: dict[str, Var] | None = None) -> Var:
    """Run a batch (rank-2) input through a layer-spec list.

    Dropout is active only in training mode and needs `rng`; batch norm
    uses batch statistics while training and running statistics otherwise.
    """
    if lifted is None:
        lifted = lift(params)
    h = ad.as_var(x)
    if h.value.ndim != 2:
        raise DimensionError("input must be rank 2 (batch x features)")
    for spec in specs:
        h = _apply(spec, h, params, lifted, training, rng)
    if not np.all(np.isfinite(h.value)):
        raise NumericError("non-finite activation in forward pass")
    return h


def _apply(spec, h, params, lifted, training, rng):
    if isinstance(spec, Dense):
        w = lifted[spec.name + ".w"]
        if h.value.shape[1] != w.value.shape[0]:
            raise DimensionError(
                f"layer {spec.name!r} expects width {w.value.shape[0]}, got {h.value.shape[1]}"
            )
        return ad.matmul(h, w) + lifted[spec.name + ".b"]
    if isinstance(spec, Activation):
        return _ACTIVATIONS[spec.kind](h)
    if isinstance(spec, Dropout):
        if not training or spec.rate <= 0.0:
            return h
        if rng is None:
            raise ValueError("dropout in training mode needs an rng")
        keep = 1.0 - spec.rate
        mask = (rng.random(h.value.shape) < keep).astype(h.value.dtype) / keep
        return h * mask
    if isinstance(spec, BatchNorm):
        return _batch_norm(spec, h, params, lifted, training)
    if isinstance(spec, Residual):
        out = h
        for inner in spec.body:
            out = _apply(inner, out, params, lifted, training, rng)
        return out + h
    raise ValueError(f"unknown layer spec {spec!r}")


def _batch_norm(spec, h, params, lifted, training):
    gamma = lifted[spec.name + ".gamma"]
    beta = lifted[spec.name + ".beta"]
    if training:
        mu = h.mean(axis=0, keepdims=True)
        var = ad.square(h - mu).mean(axis=0, keepdims=True)
        # running stats updated outside the graph
        rm = params[spec.name + ".running_mean"]
        rv = params[spec.name + ".running_var"]
        rm *= BN_MOMENTUM
        rm += (1.0 - BN_MOMENTUM) * mu.value.reshape(-1)
        rv *= BN_MOMENTUM
        rv += (1.0 - BN_MOMENTUM) * var.value.reshape(-1)
        inv = ad.powf(var + BN_EPS, -0.5)
        return (h - mu) * inv * gamma + beta
    rm = params[spec.name + ".running_mean"]
    rv = params[spec.name + ".running_var"]
    scale = 1.0 / np.sqrt(rv + BN_EPS)
    return (h - rm) * scale.astype(h.value.dtype) * gamma + beta


# -- optimizers ----------------------------------------------------------


@dataclass
class OptimizerState:
    """One of plain GD, ADAM, or RMSProp, with per-parameter buffers."""

    kind: str  # "gd" | "adam" | "rmsprop"
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    rho: float = 0.9  # rmsprop decay
    step_count: int = 0
    moment1: dict = field(default_factory=dict)
    moment2: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("gd", "adam", "rmsprop"):
            raise ValueError(f"unknown optimizer kind {self.kind!r}")


def optimizer_step(state: OptimizerState, params: ParamSet, grads: ParamSet) -> ParamSet:
    """Apply one update; returns new parameters, mutates only the state."""
    if params.names() != grads.names():
        raise ValueError("gradient names do not match parameter names")
    state.step_count += 1
    t = state.step_count
    out = ParamSet()
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape mismatch for {name!r}")
        if state.kind == "gd":
            out[name] = p - state.lr * g
        elif state.kind == "rmsprop":
            v = state.moment2.get(name, np.zeros_like(p))
            v = state.rho * v + (1.0 - state.rho) * g * g
            state.moment2[name] = v
            out[name] = p - state.lr * g / (np.sqrt(v) + state.eps)
        else:  # adam
            m = state.moment1.get(name, np.zeros_like(p))
            v = state.moment2.get(name, np.zeros_like(p))
            m = state.beta1 * m + (1.0 - state.beta1) * g
            v = state.beta2 * v + (1.0 - state.beta2) * g * g
            state.moment1[name] = m
            state.moment2[name] = v
            mhat = m / (1.0 - state.beta1**t)
            vhat = v / (1.0 - state.beta2**t)
            out[name] = p - state.lr * mhat / (np.sqrt(vhat) + state.eps)
    return out


# -- gradient checking ---------------------------------------------------


def grad_check(closure, params: ParamSet, step: float = 1e-3,
               rng: np.random.Generator | None = None,
               max_coords: int | None = None) -> float:
    """Compare analytic and central-difference gradients.

    `closure` maps a dict of name -> Var to a scalar Var.  Evaluation runs
    in float64 copies of the parameters so the comparison is not limited
    by float32 rounding.  When `max_coords` is set, that many coordinates
    are sampled (seeded via `rng`) instead of checking every entry.
    Returns the max over checked coordinates of
    |analytic - numeric| / max(1, |numeric|).
    """
    if step <= 0:
        raise ValueError("step must be positive")
    work = params.astype(np.float64)
    lifted = lift(work)
    loss = closure(lifted)
    if not np.isfinite(loss.value):
        raise NumericError("closure produced a non-finite loss")
    loss.backward()
    analytic = collect_grads(lifted)

    coords = [(name, idx) for name, arr in work.items() for idx in np.ndindex(arr.shape)]
    if max_coords is not None and len(coords) > max_coords:
        rng = rng or np.random.default_rng(0)
        picks = rng.choice(len(coords), size=max_coords, replace=False)
        coords = [coords[i] for i in picks]

    worst = 0.0
    for name, idx in coords:
        arr = work[name]
        orig = arr[idx]
        arr[idx] = orig + step
        up = closure(lift(work)).item()
        arr[idx] = orig - step
        down = closure(lift(work)).item()
        arr[idx] = orig
        if not (np.isfinite(up) and np.isfinite(down)):
            raise NumericError("non-finite loss during finite differencing")
        numeric = (up - down) / (2.0 * step)
        err = abs(analytic[name][idx] - numeric) / max(1.0, abs(numeric))
        worst = max(worst, err)
    return worst
