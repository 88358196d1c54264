"""Experiment drivers: the biased synthetic comparison, gamma sweeps on Communities
and Crime, and decision-boundary grids for plotting.
"""

from __future__ import annotations

import csv
import dataclasses
from collections import defaultdict
from typing import Iterable, Optional, Sequence

import numpy as np

from .crime import CcTaskSet, cache_meta_batches, finetune_eval_split
from .fairness import EvalMetrics, evaluate, symmetric
from .mlp import MlpParams, predict_proba
from .synthetic import cache_tasks, sample_finetune_task
from .training import (
    CachedBatches,
    MetaConfig,
    TaskPoolSampler,
    fair_maml_train,
    fine_tune,
    pretrain_baseline,
)

SWEEP_HEADER = ["gamma", "seed", "task_id", "accuracy", "dp_ratio", "eo_ratio", "n_eval", "undefined_dp", "undefined_eo"]
SYNTH_HEADER = [
    "method", "gamma", "finetune_lr", "seed", "accuracy", "dp_ratio", "eo_ratio",
    "dp_symmetric", "eo_symmetric", "n_eval", "undefined_dp", "undefined_eo",
]
DP_GRID = (0.0, 1.0, 2.0, 3.0, 4.0)
EOP_GRID = (0.0, 10.0, 20.0, 30.0, 40.0)
SYNTH_GAMMA_GRID = tuple(float(g) for g in range(11))
SYNTH_STEP_GRID = (0.01, 0.1, 0.2, 0.3)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def metric_fields(m: EvalMetrics) -> dict:
    return {
        "accuracy": m.accuracy,
        "dp_ratio": m.dp_ratio,
        "eo_ratio": m.eo_ratio,
        "dp_symmetric": m.dp_symmetric,
        "eo_symmetric": m.eo_symmetric,
        "n_eval": m.n,
        "undefined_dp": int(m.dp_ratio is None),
        "undefined_eo": int(m.eo_ratio is None),
    }


def write_csv(path, header: Sequence[str], rows: Iterable[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(r.get(h)) for h in header])


def _mean_defined(values) -> tuple[Optional[float], int]:
    """Mean over defined entries and the number of undefined ones excluded."""
    defined = [v for v in values if v is not None]
    excluded = len(values) - len(defined)
    return (float(np.mean(defined)) if defined else None), excluded


def aggregate(rows: Sequence[dict], keys: Sequence[str]) -> list[dict]:
    """Means per group; undefined ratios are excluded and counted."""
    groups: dict[tuple, list[dict]] = defaultdict(list)
    for r in rows:
        groups[tuple(r[k] for k in keys)].append(r)
    out = []
    for key, rs in groups.items():
        row = dict(zip(keys, key))
        row["n_runs"] = len(rs)
        row["accuracy"] = float(np.mean([r["accuracy"] for r in rs]))
        for name in ("dp_ratio", "eo_ratio"):
            mean, excluded = _mean_defined([r[name] for r in rs])
            sym, _ = _mean_defined([symmetric(r[name]) for r in rs])
            row[name] = mean
            row[name.replace("_ratio", "_symmetric")] = sym
            row["undefined_" + name.split("_")[0]] = excluded
        out.append(row)
    return out


AGG_TAIL = ["n_runs", "accuracy", "dp_ratio", "dp_symmetric", "eo_ratio", "eo_symmetric", "undefined_dp", "undefined_eo"]


# ---------------------------------------------------------------------------
# synthetic experiment


def synthetic_sources(seed: int, config: MetaConfig, n_tasks: int = 100, n_per_task: int = 200,
                      interpretation: str = "literal"):
    tasks = cache_tasks(seed, n_tasks, n_per_task, interpretation, config.regularizer, config.gamma)
    return tasks, TaskPoolSampler([t.dataset for t in tasks], config.meta_batch, config.K)


def synthetic_comparison(
    config: MetaConfig,
    seeds: Sequence[int],
    gammas: Sequence[float] = SYNTH_GAMMA_GRID,
    step_grid: Sequence[float] = SYNTH_STEP_GRID,
    n_tasks: int = 100,
    n_per_task: int = 200,
    k_finetune: int = 5,
    n_eval: int = 1000,
    interpretation: str = "literal",
    keep_params: bool = False,
):
    """Fair-MAML and the pretrained baseline, each adapted on the biased fine-tune task.

    Fair-MAML adapts with one step of size ``alpha``; the baseline with one
    step of each size in ``step_grid``.  Both are trained and adapted with the
    same gamma.  Returns per-run rows and, if requested, the trained models
    keyed by ``(method, gamma, seed)``.
    """
    rows = []
    models = {}
    for seed in seeds:
        _, source = synthetic_sources(seed, config, n_tasks, n_per_task, interpretation)
        ft, ev = sample_finetune_task(seed, k_finetune, n_eval, interpretation)
        for gamma in gammas:
            cfg = dataclasses.replace(config, gamma=float(gamma), seed=seed)
            meta = fair_maml_train(source, cfg).params
            base = pretrain_baseline(source, cfg).params
            if keep_params:
                models[("fairmaml", float(gamma), seed)] = meta
                models[("pretrained", float(gamma), seed)] = base
            adapted = fine_tune(meta, ft, 1, cfg.alpha, cfg.regularizer, cfg.gamma)
            rows.append({"method": "fairmaml", "gamma": float(gamma), "finetune_lr": cfg.alpha, "seed": seed,
                         **metric_fields(evaluate(adapted, ev))})
            for lr in step_grid:
                adapted = fine_tune(base, ft, 1, lr, cfg.regularizer, cfg.gamma)
                rows.append({"method": "pretrained", "gamma": float(gamma), "finetune_lr": float(lr), "seed": seed,
                             **metric_fields(evaluate(adapted, ev))})
    return rows, models


def best_by_accuracy(agg_rows: Sequence[dict], method: str) -> dict:
    """Highest mean accuracy; ties go to the better symmetric dp ratio, then lower gamma."""
    cands = [r for r in agg_rows if r["method"] == method]
    return max(cands, key=lambda r: (r["accuracy"], r["dp_symmetric"] or 0.0, -r["gamma"]))


# ---------------------------------------------------------------------------
# Communities and Crime


def cc_sources(taskset: CcTaskSet, config: MetaConfig, n_batches: int = 100):
    return CachedBatches(cache_meta_batches(taskset, n_batches, config.meta_batch, config.K, config.seed))


def gamma_sweep(
    taskset: CcTaskSet,
    method: str,
    config: MetaConfig,
    grid: Sequence[float],
    seeds: Sequence[int],
    finetune_n: int = 10,
    finetune_lr: Optional[float] = None,
    n_batches: int = 100,
) -> list[dict]:
    """Train at each gamma and seed, adapt on every holdout state, evaluate on the rest.

    ``method`` is ``fairmaml`` (adapts with step ``alpha`` unless overridden) or
    ``pretrained`` (adapts with ``finetune_lr``, default 0.1).
    """
    if method not in ("fairmaml", "pretrained"):
        raise ValueError(f"unknown method {method!r}")
    if finetune_lr is None:
        finetune_lr = config.alpha if method == "fairmaml" else 0.1
    rows = []
    for gamma in grid:
        for seed in seeds:
            cfg = dataclasses.replace(config, gamma=float(gamma), seed=seed)
            source = cc_sources(taskset, cfg, n_batches)
            train = fair_maml_train if method == "fairmaml" else pretrain_baseline
            params = train(source, cfg).params
            split_rng = np.random.default_rng([seed, 1])
            for state, task in zip(taskset.holdout_states, taskset.holdout):
                ft, ev = finetune_eval_split(task, finetune_n, split_rng)
                adapted = fine_tune(params, ft, 1, finetune_lr, cfg.regularizer, cfg.gamma)
                rows.append({"gamma": float(gamma), "seed": seed, "task_id": state,
                             **metric_fields(evaluate(adapted, ev))})
    return rows


# ---------------------------------------------------------------------------
# decision boundaries


def export_boundary(params: MlpParams, bounds=(-10.0, 10.0, -10.0, 10.0), resolution: int = 200) -> np.ndarray:
    """``resolution**2`` rows of ``(x, y, P(f=1))`` on a regular grid, x varying slowest."""
    if params.input_dim != 2:
        raise ValueError(f"boundary grids need a 2-D input model, got {params.input_dim} inputs")
    x0, x1, y0, y1 = bounds
    xs = np.linspace(x0, x1, resolution)
    ys = np.linspace(y0, y1, resolution)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    return np.column_stack([pts, predict_proba(params, pts)])


def write_boundary(path, grid: np.ndarray) -> None:
    write_csv(path, ["x", "y", "p1"], ({"x": float(a), "y": float(b), "p1": float(c)} for a, b, c in grid))
