"""Regret aggregation across folds and plot/table output.

Summary rows use the population (divide-by-n) standard deviation over
fold means, where a fold mean averages that fold's meta-test datasets.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .hpo import HPORun, normalized_regret

DEFAULT_TRIAL_CHECKPOINTS = (5, 20, 33, 67, 100)


@dataclass(frozen=True)
class SummaryRow:
    method: str
    trial: int
    mean_regret: float
    std_regret: float
    n_runs: int


def _curves_by_method(runs: list[HPORun], responses: dict) -> dict:
    out: dict[str, list[tuple[int, np.ndarray]]] = {}
    for run in runs:
        curve = normalized_regret(run, responses).values
        out.setdefault(run.method, []).append((run.fold, curve))
    return out


def aggregate(runs: list[HPORun], responses: dict,
              trials=DEFAULT_TRIAL_CHECKPOINTS) -> list[SummaryRow]:
    """Per (method, trial checkpoint): mean +/- population std over folds."""
    if not runs:
        raise ValueError("no runs to aggregate")
    budgets = {run.budget for run in runs}
    if len(budgets) != 1:
        raise ValueError(f"runs disagree on budget: {sorted(budgets)}")
    budget = budgets.pop()
    checkpoints = [t for t in trials if t <= budget]

    rows = []
    for method in sorted({r.method for r in runs}):
        method_runs = [r for r in runs if r.method == method]
        by_fold: dict[int, list[np.ndarray]] = {}
        for run in method_runs:
            by_fold.setdefault(run.fold, []).append(
                normalized_regret(run, responses).values)
        for t in checkpoints:
            fold_means = np.array([
                np.mean([c[min(t, len(c)) - 1] for c in curves])
                for _, curves in sorted(by_fold.items())
            ])
            rows.append(SummaryRow(
                method=method, trial=t,
                mean_regret=float(fold_means.mean()),
                std_regret=float(fold_means.std()),  # population convention
                n_runs=len(method_runs),
            ))
    return rows


def write_summary_csv(path, rows: list[SummaryRow]) -> None:
    with open(path, "w") as fh:
        fh.write("method,trial,mean_regret,std_regret,n_runs\n")
        for r in rows:
            fh.write(f"{r.method},{r.trial},{r.mean_regret!r},{r.std_regret!r},{r.n_runs}\n")


def plot_regret_curves(path, runs: list[HPORun], responses: dict) -> None:
    """Mean regret per trial with a one-standard-deviation band per method."""
    grouped = _curves_by_method(runs, responses)
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for method in sorted(grouped):
        curves = np.stack([c for _, c in grouped[method]])
        trials = np.arange(1, curves.shape[1] + 1)
        mean = curves.mean(axis=0)
        std = curves.std(axis=0)
        ax.plot(trials, mean, label=method)
        ax.fill_between(trials, mean - std, mean + std, alpha=0.2)
    ax.set_xlabel("trial")
    ax.set_ylabel("normalized regret")
    ax.set_yscale("symlog", linthresh=1.0)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_report(out_dir, runs: list[HPORun], responses: dict,
                  trials=DEFAULT_TRIAL_CHECKPOINTS) -> Path:
    """Write summary.csv and regret_curves.png; returns the summary path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = aggregate(runs, responses, trials)
    summary = out_dir / "summary.csv"
    write_summary_csv(summary, rows)
    plot_regret_curves(out_dir / "regret_curves.png", runs, responses)
    return summary
