"""Command-line entry points: synth, genmeta, metatrain, hpo, eval."""
from __future__ import annotations

import argparse
import hashlib
import sys
from pathlib import Path

import numpy as np

from . import checkpoint, hpo as hpolib
from .d2v import engineered_mf
from .data import load_dataset_csv
from .genmeta import SynthSpec, TargetNetSpec, build_meta_dataset, synth
from .meta import (load_meta_dir, load_responses_csv, load_splits_json,
                   normalize_responses, save_meta_dir, save_responses_csv,
                   split_folds)
from .metalearn import MetaConfig, meta_learn_init
from .objective import TrainConfig
from .report import render_report
from .space import enumerate_grid, get_space
from .surrogate import SurrogateModel

KNOWN_METHODS = ("dmfbs", "dmfbs-ri", "random", "avg-rank", "nn-mf")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dmfbs")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic meta-dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--space", default="layout")
    p.add_argument("--n-datasets", type=int, default=20)
    p.add_argument("--noise", type=float, default=0.01)
    p.add_argument("--fold", type=int, default=5, help="number of CV folds")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("genmeta", help="train the grid on real datasets")
    p.add_argument("--data", required=True, help="directory of dataset CSVs")
    p.add_argument("--out", required=True)
    p.add_argument("--space", default="layout")
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--max-configs", type=int, default=0,
                   help="optional grid truncation for smoke runs")
    p.add_argument("--fold", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("metatrain", help="meta-learn the surrogate initialization")
    p.add_argument("--meta", required=True, help="meta-dataset directory")
    p.add_argument("--fold", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", default=None, help="directory for the progress log")
    p.add_argument("--alpha-mr", type=float, default=10.0)
    p.add_argument("--alpha-dbi", type=float, default=0.1)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--inner-steps", type=int, default=5)
    p.add_argument("--meta-batch", type=int, default=16)
    p.add_argument("--outer-iters", type=int, default=500)
    p.add_argument("--budget", type=int, default=20, help="meta-valid greedy budget")

    p = sub.add_parser("hpo", help="run HPO methods on a fold's meta-test datasets")
    p.add_argument("--meta", required=True)
    p.add_argument("--fold", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--method", required=True, choices=KNOWN_METHODS)
    p.add_argument("--budget", type=int, default=20)
    p.add_argument("--init-budget", type=int, default=1)
    p.add_argument("--ckpt", default=None, help="checkpoint for the dmfbs method")
    p.add_argument("--out", required=True)
    p.add_argument("--alpha-mr", type=float, default=10.0)
    p.add_argument("--alpha-dbi", type=float, default=0.1)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--fine-tune-steps", type=int, default=hpolib.FINE_TUNE_STEPS)

    p = sub.add_parser("eval", help="aggregate run records into tables and figures")
    p.add_argument("--runs", required=True)
    p.add_argument("--meta", required=True)
    p.add_argument("--out", default=None)

    return parser


def _load_fold(meta_dir, fold):
    folds = load_splits_json(Path(meta_dir) / "splits.json")
    if fold < 0 or fold >= len(folds):
        raise SystemExit(f"fold {fold} out of range (have {len(folds)})")
    return folds[fold]


def cmd_synth(args) -> int:
    rng = np.random.default_rng(args.seed)
    spec = SynthSpec(n_datasets=args.n_datasets, noise=args.noise)
    space = get_space(args.space)
    meta, _oracle = synth(spec, space, rng)
    normalized = normalize_responses(meta)
    folds = split_folds(meta.dataset_ids(), k=args.fold, seed=args.seed)
    out = Path(args.out)
    save_meta_dir(out, normalized, folds)
    save_responses_csv(out / "responses.csv", meta.responses, normalized=False)
    print(f"wrote {len(meta.dataset_ids())} datasets x {len(meta.grid)} configs to {out}")
    return 0


def cmd_genmeta(args) -> int:
    data_dir = Path(args.data)
    paths = sorted(data_dir.glob("*.csv"))
    if not paths:
        print(f"error: no dataset CSVs in {data_dir}", file=sys.stderr)
        return 1
    datasets = {p.stem: load_dataset_csv(p) for p in paths}
    space = get_space(args.space)
    grid = enumerate_grid(space)
    if args.max_configs:
        grid = grid[:args.max_configs]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    spec = TargetNetSpec(epochs=args.epochs, learning_rate=args.lr)
    meta = build_meta_dataset(datasets, space, spec, out / "raw_results.csv", grid=grid)
    folds = split_folds(meta.dataset_ids(), k=args.fold, seed=args.seed) \
        if len(datasets) >= args.fold + 2 else None
    save_meta_dir(out, meta, folds)
    raw, _ = load_responses_csv(out / "raw_results.csv")
    save_responses_csv(out / "responses.csv", raw, normalized=False)
    print(f"meta-dataset complete: {len(meta.responses)} responses in {out}")
    return 0


def cmd_metatrain(args) -> int:
    meta = load_meta_dir(args.meta)
    fold = _load_fold(args.meta, args.fold)
    model = SurrogateModel(enc_dim=len(meta.grid[0].encoded), seed=args.seed)
    cfg = MetaConfig(inner_steps=args.inner_steps, meta_batch=args.meta_batch,
                     outer_iters=args.outer_iters, outer_lr=args.lr,
                     eval_budget=args.budget)
    train_cfg = TrainConfig(alpha_mr=args.alpha_mr, alpha_dbi=args.alpha_dbi, lr=args.lr)
    rng = np.random.default_rng(args.seed)
    log_path = Path(args.out) / "metatrain_progress.csv" if args.out else None
    if log_path:
        log_path.parent.mkdir(parents=True, exist_ok=True)
    train_meta = meta.restricted(fold.train + fold.valid)
    meta_learn_init(train_meta, model, cfg, fold.train, fold.valid, train_cfg,
                    rng, log_path=log_path, ckpt_path=args.ckpt)
    print(f"checkpoint written to {args.ckpt}")
    return 0


def cmd_hpo(args) -> int:
    meta = load_meta_dir(args.meta)
    fold = _load_fold(args.meta, args.fold)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    train_cfg = TrainConfig(alpha_mr=args.alpha_mr, alpha_dbi=args.alpha_dbi, lr=args.lr)

    for target_id in fold.test:
        digest = hashlib.sha256(target_id.encode()).digest()
        rng = np.random.default_rng((args.seed, int.from_bytes(digest[:4], "little")))
        run = _run_one(args, meta, fold, target_id, train_cfg, rng)
        hpolib.save_run(out / f"{args.method}_{target_id}_f{fold.fold}_s{args.seed}.json", run)
    print(f"wrote {len(fold.test)} runs to {out}")
    return 0


def _run_one(args, meta, fold, target_id, train_cfg, rng):
    grid = meta.grid
    responses = meta.responses
    if args.method == "random":
        seq = hpolib.baseline_random(grid, args.budget, rng)
        return hpolib.run_from_sequence("random", target_id, fold.fold, args.seed,
                                        seq, responses, args.budget)
    if args.method == "avg-rank":
        seq = hpolib.baseline_avg_rank(meta, fold.train, grid, args.budget)
        return hpolib.run_from_sequence("avg-rank", target_id, fold.fold, args.seed,
                                        seq, responses, args.budget)
    if args.method == "nn-mf":
        seq = hpolib.baseline_nn_mf(meta.datasets[target_id], meta, fold.train,
                                    grid, args.budget, engineered_mf)
        return hpolib.run_from_sequence("nn-mf", target_id, fold.fold, args.seed,
                                        seq, responses, args.budget)
    # dmfbs variants
    model = SurrogateModel(enc_dim=len(grid[0].encoded), seed=args.seed)
    if args.method == "dmfbs":
        if not args.ckpt:
            raise SystemExit("--ckpt is required for the dmfbs method")
        model.params = checkpoint.load_params(args.ckpt)
    train_meta = meta.restricted(fold.train)
    target = meta.datasets[target_id]
    return hpolib.run_dmfbs(
        target, train_meta, model,
        response_fn=lambda cfg: responses[(target_id, cfg.id)],
        budget=args.budget, init_budget=args.init_budget,
        train_cfg=train_cfg, rng=rng,
        fine_tune_steps=args.fine_tune_steps,
        method=args.method, fold=fold.fold, seed=args.seed)


def cmd_eval(args) -> int:
    runs_dir = Path(args.runs)
    runs = hpolib.load_runs(runs_dir) if runs_dir.is_dir() else []
    if not runs:
        print(f"error: no run records found in {runs_dir}", file=sys.stderr)
        return 1
    meta = load_meta_dir(args.meta)
    out = Path(args.out) if args.out else runs_dir
    summary = render_report(out, runs, meta.responses)
    print(f"summary written to {summary}")
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "genmeta": cmd_genmeta,
    "metatrain": cmd_metatrain,
    "hpo": cmd_hpo,
    "eval": cmd_eval,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return COMMANDS[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
