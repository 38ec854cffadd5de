"""Greedy acquisition, the sequential surrogate-driven loop, zero-shot
baselines, and regret curves."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats as sps

from .data import Dataset
from .meta import MetaDataset
from .nn import OptimizerState
from .objective import TrainConfig, update_model
from .space import Config
from .surrogate import SurrogateModel

FINE_TUNE_STEPS = 50  # update_model calls between sequential trials


@dataclass
class HPORun:
    """Ordered trials of one (method, dataset, fold) optimization run."""

    method: str
    dataset_id: str
    fold: int
    seed: int
    trials: list[tuple[int, float]] = field(default_factory=list)  # (config id, loss)
    budget: int = 0
    init_budget: int = 1

    def __post_init__(self):
        ids = [cid for cid, _ in self.trials]
        if len(ids) != len(set(ids)):
            raise ValueError("trial configs must be distinct")
        if self.budget and len(self.trials) > self.budget:
            raise ValueError("more trials than the budget allows")

    def to_json(self) -> str:
        return json.dumps({
            "method": self.method,
            "dataset_id": self.dataset_id,
            "fold": self.fold,
            "seed": self.seed,
            "budget": self.budget,
            "init_budget": self.init_budget,
            "trials": [{"config_id": cid, "loss": loss} for cid, loss in self.trials],
        }, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "HPORun":
        obj = json.loads(text)
        return cls(
            method=obj["method"], dataset_id=obj["dataset_id"], fold=obj["fold"],
            seed=obj["seed"], budget=obj["budget"], init_budget=obj.get("init_budget", 1),
            trials=[(t["config_id"], t["loss"]) for t in obj["trials"]],
        )


@dataclass(frozen=True)
class RegretCurve:
    """Running minimum of normalized loss per trial; non-increasing."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if np.any(np.diff(v) > 1e-12):
            raise ValueError("regret curve must be non-increasing")

    def at(self, trial: int) -> float:
        """Regret after `trial` trials (1-based)."""
        return float(self.values[min(trial, len(self.values)) - 1])


def greedy_select(candidates: list[Config], budget: int, scores: np.ndarray) -> list[Config]:
    """The `budget` candidates with the smallest scores, best first.

    Ties break toward the lower config id; invariant under any strictly
    increasing transform of the scores.
    """
    if budget > len(candidates):
        raise ValueError(f"budget {budget} exceeds {len(candidates)} candidates")
    scores = np.asarray(scores, dtype=np.float64)
    if scores.shape != (len(candidates),):
        raise ValueError("one score per candidate required")
    order = sorted(range(len(candidates)), key=lambda i: (scores[i], candidates[i].id))
    return [candidates[i] for i in order[:budget]]


def normalized_regret(run: HPORun, responses: dict[tuple[str, int], float]) -> RegretCurve:
    """curve[t] = best observed normalized loss among the first t+1 trials."""
    values = []
    best = np.inf
    for cid, _ in run.trials:
        key = (run.dataset_id, cid)
        if key not in responses:
            raise ValueError(f"no response recorded for {key}")
        best = min(best, responses[key])
        values.append(best)
    return RegretCurve(np.array(values))


# -- zero-shot baselines -------------------------------------------------


def baseline_random(grid: list[Config], budget: int, rng: np.random.Generator) -> list[int]:
    """Uniform sample of config ids without replacement."""
    if budget > len(grid):
        raise ValueError("budget exceeds grid size")
    picks = rng.choice(len(grid), size=budget, replace=False)
    return [grid[i].id for i in picks]


def baseline_avg_rank(meta: MetaDataset, train_ids, grid: list[Config],
                      budget: int) -> list[int]:
    """Configs by mean rank of normalized loss across meta-train datasets."""
    train_ids = list(train_ids)
    ranks = np.zeros(len(grid))
    for did in train_ids:
        losses = meta.losses_for(did)
        if np.any(np.isnan(losses)):
            raise ValueError(f"{did}: grid coverage incomplete")
        ranks += sps.rankdata(losses, method="average")
    ranks /= max(len(train_ids), 1)
    order = sorted(range(len(grid)), key=lambda i: (ranks[i], grid[i].id))
    return [grid[i].id for i in order[:budget]]


def baseline_nn_mf(target: Dataset, meta: MetaDataset, train_ids,
                   grid: list[Config], budget: int, mf_extractor) -> list[int]:
    """Emit each nearest neighbor's best-first config ordering until full.

    `mf_extractor(dataset) -> vector`; neighbors are ordered by ascending
    Euclidean distance in that metafeature space.
    """
    target_mf = np.asarray(mf_extractor(target), dtype=np.float64)
    dists = []
    for did in sorted(train_ids):
        mf = np.asarray(mf_extractor(meta.datasets[did]), dtype=np.float64)
        dists.append((float(np.linalg.norm(mf - target_mf)), did))
    dists.sort()
    out, seen = [], set()
    for _, did in dists:
        losses = meta.losses_for(did)
        order = sorted(range(len(grid)), key=lambda i: (losses[i], grid[i].id))
        for i in order:
            cid = grid[i].id
            if cid in seen:
                continue
            seen.add(cid)
            out.append(cid)
            if len(out) == budget:
                return out
    return out


# -- the sequential loop -------------------------------------------------


def run_from_sequence(method: str, dataset_id: str, fold: int, seed: int,
                      config_ids: list[int], responses: dict, budget: int) -> HPORun:
    """Wrap a zero-shot ordering into a run record with observed losses."""
    trials = [(cid, responses[(dataset_id, cid)]) for cid in config_ids[:budget]]
    return HPORun(method, dataset_id, fold, seed, trials, budget=budget,
                  init_budget=budget)


def run_dmfbs(target: Dataset, train_meta: MetaDataset, model: SurrogateModel,
              response_fn, budget: int, init_budget: int,
              train_cfg: TrainConfig, rng: np.random.Generator,
              fine_tune_steps: int = FINE_TUNE_STEPS,
              fine_tune_beta1: float = 0.9,
              method: str = "dmfbs", fold: int = 0, seed: int = 0) -> HPORun:
    """Sequential greedy HPO with between-trial surrogate fine-tuning.

    `train_meta` must hold no responses for the target; observations are
    accumulated into a working copy so the manifold and identification
    terms keep their meta-train signal.  `response_fn(config) -> loss`
    plays the role of actually training the target configuration.
    """
    if budget > len(train_meta.grid):
        raise ValueError("budget exceeds grid size")
    if init_budget < 1 or init_budget > budget:
        raise ValueError("init budget must be in [1, budget]")
    if train_meta.triples_for(target.id):
        raise ValueError("meta-dataset already has responses for the target")

    work_meta = MetaDataset(train_meta.space, dict(train_meta.datasets),
                            train_meta.grid, dict(train_meta.responses),
                            normalized=train_meta.normalized)
    work_meta.datasets[target.id] = target
    work = model.clone()

    trials: list[tuple[int, float]] = []
    evaluated: set[int] = set()

    def observe(cfg: Config) -> None:
        loss = float(response_fn(cfg))
        trials.append((cfg.id, loss))
        evaluated.add(cfg.id)
        work_meta.add_response(target.id, cfg.id, loss)

    scores = work.predict_grid(target, work_meta.grid)
    for cfg in greedy_select(work_meta.grid, init_budget, scores):
        observe(cfg)

    while len(trials) < budget:
        opt = OptimizerState("adam", lr=train_cfg.lr, beta1=fine_tune_beta1)
        for _ in range(fine_tune_steps):
            work.params = update_model(work_meta, work, target.id, train_cfg, rng, opt)
        remaining = [c for c in work_meta.grid if c.id not in evaluated]
        scores = work.predict_grid(target, remaining)
        observe(greedy_select(remaining, 1, scores)[0])

    return HPORun(method, target.id, fold, seed, trials, budget=budget,
                  init_budget=init_budget)


def save_run(path, run: HPORun) -> None:
    Path(path).write_text(run.to_json())


def load_runs(directory) -> list[HPORun]:
    directory = Path(directory)
    return [HPORun.from_json(p.read_text()) for p in sorted(directory.glob("*.json"))]
