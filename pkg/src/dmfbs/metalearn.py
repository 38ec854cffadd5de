"""First-order (Reptile-style) meta-learning of the surrogate initialization.

Each outer iteration adapts per-task parameter copies with a few inner
update steps, then moves the shared parameters toward the mean adapted
copy.  Progress is scored by zero-shot greedy regret on the meta-valid
datasets and the best snapshot wins.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import checkpoint
from .meta import MetaDataset
from .nn import OptimizerState, ParamSet
from .objective import TrainConfig, update_model
from .surrogate import SurrogateModel


@dataclass
class MetaConfig:
    """Outer-loop sizes and early stopping knobs."""

    inner_steps: int = 5          # v
    meta_batch: int = 16          # n tasks per outer iteration
    outer_iters: int = 500
    outer_lr: float = 0.01
    eval_every: int = 10
    patience: int = 10
    eval_budget: int = 20         # B used for the meta-valid greedy score

    def __post_init__(self):
        if self.inner_steps < 0 or self.meta_batch < 1 or self.outer_iters < 0:
            raise ValueError("invalid meta-learning sizes")


def zero_shot_regret(model: SurrogateModel, meta: MetaDataset, dataset_id: str,
                     budget: int) -> float:
    """Best true normalized loss among the top-`budget` greedy picks."""
    from .hpo import greedy_select  # local import avoids a cycle

    scores = model.predict_grid(meta.datasets[dataset_id], meta.grid)
    picks = greedy_select(meta.grid, budget, scores)
    losses = [meta.responses[(dataset_id, c.id)] for c in picks]
    return float(min(losses))


def mean_zero_shot_regret(model, meta, dataset_ids, budget) -> float:
    return float(np.mean([zero_shot_regret(model, meta, d, budget) for d in dataset_ids]))


def meta_learn_init(meta: MetaDataset, model: SurrogateModel, cfg: MetaConfig,
                    train_ids, valid_ids, train_cfg: TrainConfig,
                    rng: np.random.Generator,
                    inner_update=None,
                    log_path=None, ckpt_path=None) -> ParamSet:
    """Returns the snapshot with the best meta-valid greedy regret.

    `inner_update(theta, task_id) -> theta'` may replace the whole inner
    adaptation (used by tests to pin the outer arithmetic); by default it
    runs `cfg.inner_steps` update_model calls with a fresh ADAM (beta1=0)
    per task.
    """
    train_ids = list(train_ids)
    valid_ids = list(valid_ids)
    if not train_ids:
        raise ValueError("meta-train set is empty")
    if set(train_ids) & set(valid_ids):
        raise ValueError("meta-train and meta-valid ids overlap")

    work = model.clone()

    def default_inner(theta: ParamSet, task_id: str) -> ParamSet:
        task_model = model.clone(theta)
        opt = OptimizerState("adam", lr=train_cfg.lr, beta1=0.0)
        for _ in range(cfg.inner_steps):
            task_model.params = update_model(meta, task_model, task_id, train_cfg, rng, opt)
        return task_model.params

    inner = inner_update or default_inner

    best_params = work.params.copy()
    best_regret = np.inf
    evals_since_best = 0
    log_rows = []

    def evaluate(it: int) -> None:
        nonlocal best_params, best_regret, evals_since_best
        if not valid_ids:
            best_params = work.params.copy()
            return
        regret = mean_zero_shot_regret(work, meta, valid_ids, cfg.eval_budget)
        log_rows.append((it, regret))
        if regret < best_regret:
            best_regret = regret
            best_params = work.params.copy()
            evals_since_best = 0
        else:
            evals_since_best += 1

    evaluate(0)
    for it in range(1, cfg.outer_iters + 1):
        theta = work.params
        displacement = theta.zeros_like()
        for _ in range(cfg.meta_batch):
            task_id = train_ids[int(rng.integers(0, len(train_ids)))]
            adapted = inner(theta.copy(), task_id)
            displacement = displacement + (adapted - theta)
        work.params = theta + (cfg.outer_lr / cfg.meta_batch) * displacement
        if it % cfg.eval_every == 0 or it == cfg.outer_iters:
            evaluate(it)
            if evals_since_best >= cfg.patience:
                break

    if log_path is not None:
        with open(log_path, "w") as fh:
            fh.write("outer_iter,meta_valid_regret_at_B\n")
            for it, regret in log_rows:
                fh.write(f"{it},{regret!r}\n")
    if ckpt_path is not None:
        Path(ckpt_path).parent.mkdir(parents=True, exist_ok=True)
        checkpoint.save_params(ckpt_path, best_params)
    return best_params
