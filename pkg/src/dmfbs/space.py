"""Hyperparameter search spaces, grid enumeration and encoding.

The three named spaces (layout, regularization, optimization) carry the
exact value lists of the benchmark grids; after deduplicating configs
whose expanded networks coincide they hold 256, 288 and 324 points.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

LAYOUTS = ("const", "expand", "contract", "diamond", "hourglass")

# fixed schema order for encoding
HP_ORDER = ("activation", "neurons", "layers", "layout", "dropout", "normalization", "optimizer")
ONE_HOT = {"activation", "layout", "optimizer"}


@dataclass(frozen=True)
class SearchSpace:
    """One of the three named spaces with its per-hyperparameter value lists."""

    name: str
    values: dict = field(hash=False)

    def value_list(self, hp: str) -> list:
        return self.values[hp]


_SPACES = {
    "layout": {
        "activation": ["relu", "selu"],
        "neurons": [4, 8, 16, 32],
        "layers": [1, 3, 5, 7],
        "layout": ["const", "expand", "contract", "diamond", "hourglass"],
        "dropout": [0.0, 0.5],
        "normalization": [False],
        "optimizer": ["adam"],
    },
    "regularization": {
        "activation": ["relu", "selu", "leaky_relu"],
        "neurons": [4, 8, 16, 32],
        "layers": [1, 3, 5, 7],
        "layout": ["const"],
        "dropout": [0.0, 0.2, 0.5],
        "normalization": [False, True],
        "optimizer": ["adam"],
    },
    "optimization": {
        "activation": ["relu", "selu", "leaky_relu"],
        "neurons": [4, 8, 16],
        "layers": [3, 5, 7],
        "layout": ["expand", "contract", "diamond", "hourglass"],
        "dropout": [0.0],
        "normalization": [False],
        "optimizer": ["adam", "rmsprop", "gd"],
    },
}


def get_space(name: str) -> SearchSpace:
    if name not in _SPACES:
        raise ValueError(f"unknown search space {name!r}; pick one of {sorted(_SPACES)}")
    return SearchSpace(name, {k: list(v) for k, v in _SPACES[name].items()})


def expand_layout(layout: str, neurons: int, layers: int) -> list[int]:
    """Per-layer widths for a layout symbol.

    const keeps `neurons` everywhere; expand doubles per layer starting at
    `neurons`; contract is its reverse; diamond doubles to the center then
    halves back; hourglass halves to a central `neurons` then doubles.
    """
    if layers < 1 or neurons < 1:
        raise ValueError("layers and neurons must be positive")
    if layout == "const":
        return [neurons] * layers
    if layout == "expand":
        return [neurons * 2**i for i in range(layers)]
    if layout == "contract":
        return [neurons * 2**i for i in range(layers)][::-1]
    center = (layers - 1) // 2
    if layout == "diamond":
        return [neurons * 2 ** (center - abs(i - center)) for i in range(layers)]
    if layout == "hourglass":
        return [neurons * 2 ** abs(i - center) for i in range(layers)]
    raise ValueError(f"unknown layout {layout!r}")


@dataclass(frozen=True)
class Config:
    """One deduplicated grid point with its raw values and encoded vector."""

    id: int
    raw: dict = field(hash=False)
    encoded: np.ndarray = field(hash=False, compare=False)

    @property
    def widths(self) -> list[int]:
        return expand_layout(self.raw["layout"], self.raw["neurons"], self.raw["layers"])


def encoding_schema(space: SearchSpace) -> list[tuple[str, int]]:
    """(hyperparameter, segment width) pairs; single-valued segments dropped."""
    schema = []
    for hp in HP_ORDER:
        vals = space.value_list(hp)
        if len(vals) < 2:
            continue
        schema.append((hp, len(vals) if hp in ONE_HOT else 1))
    return schema


def encode(raw: dict, space: SearchSpace) -> np.ndarray:
    """Deterministic encoding: one-hot categoricals, min-max scalars in [0,1]."""
    parts = []
    for hp, width in encoding_schema(space):
        vals = space.value_list(hp)
        if raw[hp] not in vals:
            raise ValueError(f"{hp}={raw[hp]!r} outside the {space.name} space")
        if hp in ONE_HOT:
            seg = np.zeros(width, dtype=np.float32)
            seg[vals.index(raw[hp])] = 1.0
            parts.append(seg)
        else:
            numeric = [float(v) for v in vals]
            lo, hi = min(numeric), max(numeric)
            parts.append(np.array([(float(raw[hp]) - lo) / (hi - lo)], dtype=np.float32))
    return np.concatenate(parts)


def encoded_dim(space: SearchSpace) -> int:
    return int(sum(w for _, w in encoding_schema(space)))


def enumerate_grid(space: SearchSpace) -> list[Config]:
    """Cartesian product, deduplicated by network equivalence, stable order.

    Two raw configs are one network when their expanded width lists and
    all non-layout values agree (any layout collapses at one layer).
    """
    value_lists = [space.value_list(hp) for hp in HP_ORDER]
    seen, configs = set(), []
    for combo in itertools.product(*value_lists):
        raw = dict(zip(HP_ORDER, combo))
        key = (
            raw["activation"],
            tuple(expand_layout(raw["layout"], raw["neurons"], raw["layers"])),
            raw["dropout"],
            raw["normalization"],
            raw["optimizer"],
        )
        if key in seen:
            continue
        seen.add(key)
        configs.append(Config(id=len(configs), raw=raw, encoded=encode(raw, space)))
    return configs


# -- persistence ---------------------------------------------------------


def save_grid_json(path, space: SearchSpace, grid: list[Config]) -> None:
    payload = {
        "space": space.name,
        "schema": [{"hyperparameter": hp, "width": w} for hp, w in encoding_schema(space)],
        "configs": [
            {"id": c.id, "raw": c.raw, "encoded": [float(v) for v in c.encoded]}
            for c in grid
        ],
    }
    Path(path).write_text(json.dumps(payload, indent=1, sort_keys=True))


def load_grid_json(path) -> tuple[SearchSpace, list[Config]]:
    payload = json.loads(Path(path).read_text())
    space = get_space(payload["space"])
    grid = [
        Config(id=c["id"], raw=c["raw"], encoded=np.array(c["encoded"], dtype=np.float32))
        for c in payload["configs"]
    ]
    return space, grid
