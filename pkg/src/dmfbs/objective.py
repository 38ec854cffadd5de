"""The three-term training objective and the single-step model update.

The combined loss is

    quadratic response loss
    + alpha_mr  * pairwise manifold regularizer (config-gated similarity)
    + alpha_dbi * batch-identification cross-entropy

and one ``update_model`` call draws a target minibatch, a matched-config
minibatch from another dataset, and batch-identification pairs, then
applies a single optimizer step.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import d2v
from .autodiff import Var
from .data import Dataset, batch
from .meta import MetaDataset
from .nn import OptimizerState, ParamSet, collect_grads, lift, optimizer_step
from .space import Config
from .surrogate import KIND_DMFBS, SurrogateModel


@dataclass
class TrainConfig:
    """Coefficients and sampling sizes of the multi-task objective."""

    alpha_mr: float = 10.0
    alpha_dbi: float = 0.1
    lr: float = 0.01
    batch_size: int = 16
    sim_clamp: float = 1e-7
    extract_rows: int = 256  # training-time row cap for the extractor

    def __post_init__(self):
        if self.alpha_mr < 0 or self.alpha_dbi < 0:
            raise ValueError("loss coefficients must be nonnegative")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if self.extract_rows < 1:
            raise ValueError("extract_rows must be positive")


@dataclass(frozen=True)
class DBIExample:
    """Two dataset batches and whether they share a primary dataset."""

    first: Dataset
    second: Dataset
    label: int

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ValueError("label must be 0 or 1")


def loss_sur(preds: list[Var], losses: list[float]) -> Var:
    """Sum of squared residuals between predictions and observed losses."""
    if not preds:
        raise ValueError("need at least one prediction")
    total = None
    for pred, target in zip(preds, losses):
        term = ad.square(pred - float(target))
        total = term if total is None else total + term
    return total.reshape(())


def pair_similarity(config_a: Config, config_b: Config, mf_a: Var, mf_b: Var) -> Var:
    """Similarity gated by config identity: zero unless the configs match."""
    if config_a.id != config_b.id:
        return Var(np.float32(0.0))
    return d2v.similarity_var(mf_a, mf_b)


def loss_mr(entries: list[tuple[Config, Var, Var]]) -> Var:
    """Manifold term over unordered pairs of (config, metafeatures, prediction).

    Only pairs sharing a config contribute; gradients flow through both
    the similarity (via the metafeatures) and the predictions.
    """
    total = Var(np.float32(0.0))
    for i in range(len(entries) - 1):
        cfg_i, mf_i, pred_i = entries[i]
        for j in range(i + 1, len(entries)):
            cfg_j, mf_j, pred_j = entries[j]
            if cfg_i.id != cfg_j.id:
                continue
            sim = pair_similarity(cfg_i, cfg_j, mf_i, mf_j)
            total = total + sim * ad.square(pred_i - pred_j).reshape(())
    return total


def loss_dbi(similarities: list[Var], labels: list[int], clamp: float = 1e-7) -> Var:
    """Binary cross-entropy of batch-identification similarities.

    The printed likelihood is negated so that matching labels minimize the
    loss; similarities are clamped away from {0, 1} before the logs.
    """
    if not similarities:
        raise ValueError("need at least one example")
    total = None
    for sim, label in zip(similarities, labels):
        s = ad.clip(sim, clamp, 1.0 - clamp)
        term = -(ad.log(s) if label else ad.log(1.0 - s))
        total = term if total is None else total + term
    return total


def combined_loss(sur: Var, mr: Var, dbi: Var, cfg: TrainConfig) -> Var:
    return sur + cfg.alpha_mr * mr + cfg.alpha_dbi * dbi


def _sample_triples(triples, size, rng):
    if not triples:
        raise ValueError("no observed responses for the requested dataset")
    if len(triples) >= size:
        picks = rng.choice(len(triples), size=size, replace=False)
    else:
        picks = rng.choice(len(triples), size=size, replace=True)
    return [triples[i] for i in picks]


def update_model(meta: MetaDataset, model: SurrogateModel, target_id: str,
                 cfg: TrainConfig, rng: np.random.Generator,
                 opt: OptimizerState | None = None) -> ParamSet:
    """One optimizer step of the combined objective toward the target dataset.

    Samples a target minibatch (with repetition if the target has fewer
    observations than the batch size), a matched-config minibatch from a
    different dataset for the manifold term, and same/other batch pairs
    for the identification term.  Returns the updated parameters; the
    model itself is left untouched.
    """
    target_triples = meta.triples_for(target_id)
    if not target_triples:
        raise ValueError(f"meta-dataset has no responses for {target_id!r}")
    picked = _sample_triples(target_triples, cfg.batch_size, rng)

    other_ids = [d for d in meta.ids_with_responses() if d != target_id]
    other_id = other_ids[int(rng.integers(0, len(other_ids)))] if other_ids else None

    lifted = lift(model.params)
    target_ds = meta.datasets[target_id]
    mf_target = model.extract_var(target_ds, lifted, rng=rng,
                                  max_rows=cfg.extract_rows)

    enc = np.stack([c.encoded for c, _ in picked])
    preds_target = model.predict_var(enc, mf_target, lifted)
    pred_list = [_row(preds_target, i) for i in range(len(picked))]

    sur = loss_sur(pred_list, [loss for _, loss in picked])

    entries = [(c, mf_target, p) for (c, _), p in zip(picked, pred_list)]
    mr = Var(np.float32(0.0))
    dbi = Var(np.float32(0.0))
    use_aux = model.kind == KIND_DMFBS

    if other_id is not None and cfg.alpha_mr > 0:
        other_ds = meta.datasets[other_id]
        mf_other = model.extract_var(other_ds, lifted, rng=rng,
                                     max_rows=cfg.extract_rows)
        # reuse the target minibatch's configs so the indicator can fire
        other_preds = model.predict_var(enc, mf_other, lifted)
        entries += [(c, mf_other, _row(other_preds, i)) for i, (c, _) in enumerate(picked)]
        mr = loss_mr(entries)

    if use_aux and cfg.alpha_dbi > 0:
        b1 = batch(target_ds, rng)
        b2 = batch(target_ds, rng)
        cap = cfg.extract_rows
        mf_b1 = model.extract_var(b1, lifted, max_rows=cap)
        sims = [d2v.similarity_var(mf_b1, model.extract_var(b2, lifted, max_rows=cap))]
        labels = [1]
        if other_id is not None:
            bm = batch(meta.datasets[other_id], rng)
            sims.append(d2v.similarity_var(
                mf_b1, model.extract_var(bm, lifted, max_rows=cap)))
            labels.append(0)
        dbi = loss_dbi(sims, labels, cfg.sim_clamp)

    total = combined_loss(sur, mr, dbi, cfg)
    total.backward()
    grads = collect_grads(lifted)

    if opt is None:
        opt = OptimizerState("gd", lr=cfg.lr)
    return optimizer_step(opt, model.params, grads)


def _row(preds: Var, i: int) -> Var:
    """Scalar prediction i out of a (batch, 1) output."""
    n = preds.value.shape[0]
    picker = np.zeros((1, n), dtype=preds.value.dtype)
    picker[0, i] = 1.0
    return ad.matmul(Var(picker), preds).reshape(())
