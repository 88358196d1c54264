"""Command-line runner for the synthetic and Communities and Crime experiments.

Each run gets its own directory ``<experiment>-seed<seed>-<timestamp>`` under
``--out`` holding ``manifest.json`` plus the CSV outputs.  Passing that
manifest back through ``--config`` repeats the run exactly.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import datetime as _dt
import json
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .cache import CacheError, dump_tasks
from .crime import CcDataError, build_tasks, load_cc
from .dataset import Task, check_regularizer
from .experiments import (
    AGG_TAIL,
    DP_GRID,
    EOP_GRID,
    SWEEP_HEADER,
    SYNTH_GAMMA_GRID,
    SYNTH_HEADER,
    SYNTH_STEP_GRID,
    aggregate,
    best_by_accuracy,
    export_boundary,
    gamma_sweep,
    synthetic_comparison,
    write_boundary,
    write_csv,
)
from .mlp import MlpParams
from .synthetic import PHI_INTERPRETATIONS, cache_tasks, sample_finetune_task
from .training import MetaConfig, NumericalError, fine_tune

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
MANIFEST_FORMAT = "fairmaml-run"
EXPERIMENTS = ("synth", "cc")


class ConfigError(ValueError):
    pass


class UsageError(Exception):
    pass


@dataclass(frozen=True)
class RunConfig:
    """Everything a run depends on.  JSON keys map one-to-one onto these fields."""

    experiment: str = "synth"
    seeds: tuple = (0,)
    # meta-training
    alpha: float = 0.3
    beta: float = 1e-3
    K: int = 5
    meta_batch: int = 32
    meta_iters: int = 5000
    inner_steps: int = 1
    gamma: float = 0.0
    regularizer: str = "dp"
    hidden: tuple = (20, 20)
    pretrain_lr: float = 1e-3
    adam_b1: float = 0.9
    adam_b2: float = 0.999
    adam_eps: float = 1e-8
    # synthetic
    phi_interpretation: str = "literal"
    n_tasks: int = 100
    n_per_task: int = 200
    k_finetune: int = 5
    n_eval: int = 1000
    gamma_grid: tuple = SYNTH_GAMMA_GRID
    step_grid: tuple = SYNTH_STEP_GRID
    boundary_gamma: float = 1.0
    boundary_step: float = 0.3
    boundary_resolution: int = 200
    boundary_bounds: tuple = (-10.0, 10.0, -10.0, 10.0)
    # Communities and Crime
    data: Optional[str] = None
    dp_grid: tuple = DP_GRID
    eop_grid: tuple = EOP_GRID
    cc_regularizers: tuple = ("dp", "eop")
    holdout_count: int = 5
    holdout_seed: int = 0
    n_batches: int = 100
    finetune_n: int = 10
    baseline_finetune_lr: float = 0.1
    # output
    out: str = "runs"

    def __post_init__(self):
        for name in ("seeds", "hidden", "gamma_grid", "step_grid", "boundary_bounds", "dp_grid", "eop_grid",
                     "cc_regularizers"):
            value = getattr(self, name)
            if isinstance(value, (str, bytes)) or not hasattr(value, "__iter__"):
                raise ConfigError(f"{name} must be a list")
            object.__setattr__(self, name, tuple(value))
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"experiment must be one of {EXPERIMENTS}, got {self.experiment!r}")
        if not self.seeds or not all(isinstance(s, int) and s >= 0 for s in self.seeds):
            raise ConfigError("seeds must be a nonempty list of nonnegative integers")
        if self.phi_interpretation not in PHI_INTERPRETATIONS:
            raise ConfigError(f"phi_interpretation must be one of {PHI_INTERPRETATIONS}")
        for name in ("gamma_grid", "dp_grid", "eop_grid"):
            grid = getattr(self, name)
            if not grid or any(g < 0 for g in grid):
                raise ConfigError(f"{name} must be a nonempty list of nonnegative values")
        if not self.cc_regularizers or not set(self.cc_regularizers) <= {"dp", "eop"}:
            raise ConfigError("cc_regularizers must list dp and/or eop")
        if not self.step_grid or any(s <= 0 for s in self.step_grid):
            raise ConfigError("step_grid must hold positive step sizes")
        if len(self.boundary_bounds) != 4:
            raise ConfigError("boundary_bounds must be [xmin, xmax, ymin, ymax]")
        if self.boundary_resolution < 2:
            raise ConfigError("boundary_resolution must be at least 2")
        for name in ("n_tasks", "n_per_task", "k_finetune", "n_eval", "holdout_count", "n_batches", "finetune_n"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be at least 1")
        try:
            check_regularizer(self.regularizer)
            self.meta_config(self.seeds[0])
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def meta_config(self, seed: int, **overrides) -> MetaConfig:
        names = {f.name for f in dataclasses.fields(MetaConfig)} - {"seed"}
        kwargs = {n: getattr(self, n) for n in names}
        kwargs.update(overrides)
        return MetaConfig(seed=seed, **kwargs)

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in out.items()}


# C&C settings from the benchmark protocol; used unless the config file says otherwise
CC_DEFAULTS = {"alpha": 1e-2, "beta": 1e-4, "K": 10, "meta_batch": 8, "meta_iters": 2000}


def load_config_file(path) -> dict:
    try:
        raw = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be an object")
    if raw.get("format") == MANIFEST_FORMAT:
        raw = raw["config"]
    return raw


def make_config(experiment: str, file_values: dict, flag_values: dict) -> RunConfig:
    """Experiment defaults, then the config file, then command-line flags."""
    known = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = sorted(set(file_values) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    values = dict(CC_DEFAULTS) if experiment == "cc" else {}
    values.update(file_values)
    if values.get("experiment", experiment) != experiment:
        raise ConfigError(f"config is for experiment {values['experiment']!r}, not {experiment!r}")
    values.update({k: v for k, v in flag_values.items() if v is not None})
    values["experiment"] = experiment
    try:
        return RunConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def make_run_dir(config: RunConfig, now: Optional[_dt.datetime] = None) -> Path:
    stamp = (now or _dt.datetime.now(_dt.timezone.utc)).strftime("%Y%m%dT%H%M%S")
    base = Path(config.out) / f"{config.experiment}-seed{config.seeds[0]}-{stamp}"
    path, k = base, 1
    while path.exists():
        path = base.with_name(f"{base.name}-{k}")
        k += 1
    path.mkdir(parents=True)
    return path


def write_manifest(run_dir: Path, config: RunConfig, outputs: Sequence[str], extra: Optional[dict] = None) -> None:
    manifest = {
        "format": MANIFEST_FORMAT,
        "version": __version__,
        "config": config.to_dict(),
        "seeds": list(config.seeds),
        "outputs": sorted(outputs),
    }
    manifest.update(extra or {})
    (run_dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def _save_model(path: Path, params: MlpParams) -> None:
    path.write_text(json.dumps({"sizes": list(params.sizes), "params": params.flatten().tolist()}) + "\n")


def load_model(path) -> MlpParams:
    """Parameters from a model JSON file or a serialized training report."""
    try:
        raw = json.loads(Path(path).read_text())
        return MlpParams.from_flat(raw["params"], tuple(raw["sizes"]))
    except OSError as exc:
        raise CacheError(f"cannot read model {path}: {exc.strerror}") from None
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise CacheError(f"{path}: not a model file ({exc})") from None


# ---------------------------------------------------------------------------
# commands


def cmd_synth(config: RunConfig, log=print) -> Path:
    run_dir = make_run_dir(config)
    base = config.meta_config(config.seeds[0])
    gammas = list(config.gamma_grid)
    # boundary models need gamma 0 and boundary_gamma even when the grid omits them
    extra = sorted({0.0, config.boundary_gamma} - set(gammas))
    rows, models = synthetic_comparison(
        base,
        config.seeds,
        gammas + extra,
        config.step_grid,
        config.n_tasks,
        config.n_per_task,
        config.k_finetune,
        config.n_eval,
        config.phi_interpretation,
        keep_params=True,
    )
    rows = [r for r in rows if r["gamma"] not in extra]
    write_csv(run_dir / "metrics.csv", SYNTH_HEADER, rows)
    agg = aggregate(rows, ["method", "gamma", "finetune_lr"])
    write_csv(run_dir / "aggregate.csv", ["method", "gamma", "finetune_lr", *AGG_TAIL], agg)

    tasks = []
    for seed in config.seeds:
        tasks += cache_tasks(seed, config.n_tasks, config.n_per_task, config.phi_interpretation, config.regularizer, config.gamma)
    dump_tasks(tasks, run_dir / "tasks.cache")

    # decision boundaries after adaptation to the biased task, first seed
    seed = config.seeds[0]
    ft, _ = sample_finetune_task(seed, config.k_finetune, config.n_eval, config.phi_interpretation)
    reg, bg = config.regularizer, config.boundary_gamma
    adapted = {
        "pretrained": fine_tune(models[("pretrained", 0.0, seed)], ft, 1, config.boundary_step, reg, 0.0),
        "maml": fine_tune(models[("fairmaml", 0.0, seed)], ft, 1, config.alpha, reg, 0.0),
        "fairmaml": fine_tune(models[("fairmaml", bg, seed)], ft, 1, config.alpha, reg, bg),
    }
    outputs = ["metrics.csv", "aggregate.csv", "tasks.cache"]
    for name, params in adapted.items():
        grid = export_boundary(params, config.boundary_bounds, config.boundary_resolution)
        write_boundary(run_dir / f"boundary_{name}.csv", grid)
        _save_model(run_dir / f"model_{name}.json", params)
        outputs += [f"boundary_{name}.csv", f"model_{name}.json"]

    best_meta = best_by_accuracy(agg, "fairmaml")
    best_base = best_by_accuracy(agg, "pretrained")
    write_manifest(run_dir, config, outputs)
    for label, r in (("fairmaml", best_meta), ("pretrained", best_base)):
        log(f"best {label}: gamma={r['gamma']!r} finetune_lr={r['finetune_lr']!r} "
            f"accuracy={r['accuracy']!r} dp_symmetric={r['dp_symmetric']!r}")
    log(f"wrote {run_dir}")
    return run_dir


def load_taskset(config: RunConfig):
    if config.data is None:
        raise CcDataError("no data file given; pass --data path/to/communities.data")
    data = load_cc(config.data)
    return data, build_tasks(data, config.holdout_count, config.holdout_seed)


def cmd_cc(config: RunConfig, log=print) -> Path:
    data, taskset = load_taskset(config)
    run_dir = make_run_dir(config)
    combined = []
    outputs = ["metrics.csv", "aggregate.csv", "tasks.cache"]
    for method in ("fairmaml", "pretrained"):
        lr = config.alpha if method == "fairmaml" else config.baseline_finetune_lr
        for reg, grid in (("dp", config.dp_grid), ("eop", config.eop_grid)):
            if reg not in config.cc_regularizers:
                continue
            rows = gamma_sweep(
                taskset, method, config.meta_config(config.seeds[0], regularizer=reg), grid,
                config.seeds, config.finetune_n, lr, config.n_batches,
            )
            name = f"sweep_{method}_{reg}.csv"
            write_csv(run_dir / name, SWEEP_HEADER, rows)
            outputs.append(name)
            combined += [{"method": method, "regularizer": reg, **r} for r in rows]
            log(f"{method} {reg}: {len(rows)} rows")
    write_csv(run_dir / "metrics.csv", ["method", "regularizer", *SWEEP_HEADER], combined)
    agg = aggregate(combined, ["method", "regularizer", "gamma"])
    write_csv(run_dir / "aggregate.csv", ["method", "regularizer", "gamma", *AGG_TAIL], agg)
    tasks = [Task(d, None, 0.0, task_id=s, meta={"split": "train"}) for s, d in zip(taskset.train_states, taskset.train)]
    tasks += [Task(d, None, 0.0, task_id=s, meta={"split": "holdout"}) for s, d in zip(taskset.holdout_states, taskset.holdout)]
    dump_tasks(tasks, run_dir / "tasks.cache", list(taskset.feature_columns))
    write_manifest(run_dir, config, outputs, {
        "records": len(data.records),
        "feature_columns": list(data.feature_columns),
        "dropped_columns": list(data.dropped_columns),
        "train_states": list(taskset.train_states),
        "holdout_states": list(taskset.holdout_states),
    })
    log(f"holdout states: {list(taskset.holdout_states)}")
    log(f"wrote {run_dir}")
    return run_dir


def cmd_boundary(model_path, out_path, bounds, resolution, log=print) -> Path:
    grid = export_boundary(load_model(model_path), bounds, resolution)
    write_boundary(out_path, grid)
    log(f"wrote {out_path} ({len(grid)} rows)")
    return Path(out_path)


def cmd_cache_tasks(config: RunConfig, log=print) -> Path:
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "tasks.cache"
    if config.experiment == "cc":
        _, taskset = load_taskset(config)
        tasks = [Task(d, config.regularizer, config.gamma, task_id=s, meta={"split": "train"})
                 for s, d in zip(taskset.train_states, taskset.train)]
        tasks += [Task(d, config.regularizer, config.gamma, task_id=s, meta={"split": "holdout"})
                  for s, d in zip(taskset.holdout_states, taskset.holdout)]
        dump_tasks(tasks, path, list(taskset.feature_columns))
    else:
        tasks = cache_tasks(config.seeds[0], config.n_tasks, config.n_per_task, config.phi_interpretation,
                            config.regularizer, config.gamma)
        dump_tasks(tasks, path)
    log(f"wrote {len(tasks)} tasks to {path}")
    return path


# ---------------------------------------------------------------------------
# argument parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _floats(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fairmaml", description="Fair-MAML experiment runner")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def run_flags(p):
        p.add_argument("--config", help="JSON config or a previous run's manifest.json")
        p.add_argument("--seed", type=int, help="single seed; overrides the seeds list")
        p.add_argument("--seeds", type=_ints, help="comma-separated seeds")
        p.add_argument("--gamma", type=float, help="fairness weight; for sweeps, a one-value grid")
        p.add_argument("--regularizer", choices=["dp", "eop"], help="fairness regularizer (cc: run only this sweep)")
        p.add_argument("--meta-iters", type=int, dest="meta_iters")
        p.add_argument("--data", help="UCI communities.data file")
        p.add_argument("--out", help="parent directory for run directories")
        p.add_argument("--phi-interpretation", choices=list(PHI_INTERPRETATIONS), dest="phi_interpretation",
                       help="rotation angle phi radians (literal) or pi/phi")

    p = sub.add_parser("synth", help="synthetic comparison with boundary grids")
    run_flags(p)
    p.add_argument("--gamma-grid", type=_floats, dest="gamma_grid")
    p.add_argument("--step-grid", type=_floats, dest="step_grid")

    p = sub.add_parser("cc", help="Communities and Crime gamma sweeps")
    run_flags(p)
    p.add_argument("--holdout-seed", type=int, dest="holdout_seed")
    p.add_argument("--dp-grid", type=_floats, dest="dp_grid")
    p.add_argument("--eop-grid", type=_floats, dest="eop_grid")

    p = sub.add_parser("cache-tasks", help="write a task cache without training")
    run_flags(p)
    p.add_argument("kind", nargs="?", choices=list(EXPERIMENTS), default="synth")
    p.add_argument("--holdout-seed", type=int, dest="holdout_seed")

    p = sub.add_parser("boundary", help="P(f=1) grid for a saved 2-D model")
    p.add_argument("--model", required=True, help="model JSON written by a synth run")
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--resolution", type=int, default=200)
    p.add_argument("--bounds", type=_floats, default=[-10.0, 10.0, -10.0, 10.0], help="xmin,xmax,ymin,ymax")
    return parser


FLAG_KEYS = ("gamma", "regularizer", "meta_iters", "data", "out", "phi_interpretation",
             "gamma_grid", "step_grid", "holdout_seed", "dp_grid", "eop_grid")


def config_from_args(args, experiment: str) -> RunConfig:
    file_values = load_config_file(args.config) if args.config else {}
    flags = {k: getattr(args, k, None) for k in FLAG_KEYS}
    if args.seeds is not None:
        flags["seeds"] = args.seeds
    if args.seed is not None:
        flags["seeds"] = [args.seed]
    # a single --gamma narrows the sweep to that value unless a grid flag is also given
    if args.gamma is not None:
        for grid in ("gamma_grid",) if experiment == "synth" else ("dp_grid", "eop_grid"):
            if flags.get(grid) is None:
                flags[grid] = [args.gamma]
    if args.regularizer is not None and experiment == "cc":
        flags["cc_regularizers"] = [args.regularizer]
    return make_config(experiment, file_values, flags)


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.command == "boundary":
            if len(args.bounds) != 4 or args.resolution < 2:
                raise UsageError("--bounds needs four numbers and --resolution at least 2")
            cmd_boundary(args.model, args.out, tuple(args.bounds), args.resolution)
            return EXIT_OK
        if args.command == "cache-tasks":
            cmd_cache_tasks(config_from_args(args, args.kind))
            return EXIT_OK
        config = config_from_args(args, args.command)
        (cmd_synth if args.command == "synth" else cmd_cc)(config)
        return EXIT_OK
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CcDataError, CacheError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
