"""Fair-MAML meta-training, the conventionally trained baseline, and fine-tuning."""

from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass
from typing import Optional, Protocol, Sequence

import numpy as np

from .crime import support_query
from .dataset import Dataset, check_regularizer, regularizer_rows
from .mlp import (
    MlpParams,
    _hvp,
    _value_and_grad,
    init_params,
    inner_update,
    second_order_meta_gradient,
)


class NumericalError(RuntimeError):
    pass


@dataclass(frozen=True)
class MetaConfig:
    alpha: float = 0.3
    beta: float = 1e-3
    K: int = 5
    meta_batch: int = 32
    meta_iters: int = 5000
    inner_steps: int = 1
    gamma: float = 0.0
    regularizer: Optional[str] = "dp"
    seed: int = 0
    hidden: tuple = (20, 20)
    pretrain_lr: float = 1e-3
    adam_b1: float = 0.9
    adam_b2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0):
            raise ValueError("alpha and beta must be positive")
        if self.K < 1 or self.inner_steps < 1 or self.meta_batch < 1 or self.meta_iters < 0:
            raise ValueError("K, inner_steps and meta_batch must be at least 1")
        if self.gamma < 0:
            raise ValueError("gamma must be nonnegative")
        check_regularizer(self.regularizer)
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))

    def sizes(self, input_dim: int) -> tuple[int, ...]:
        return (input_dim, *self.hidden, 2)


@dataclass
class TrainReport:
    trace: list[float]
    params: MlpParams
    wall_clock: float
    config: MetaConfig
    task_exposures: int = 0

    @property
    def seed(self) -> int:
        return self.config.seed

    def to_json(self) -> str:
        return json.dumps(
            {
                "config": dataclasses.asdict(self.config),
                "seed": self.seed,
                "trace": self.trace,
                "wall_clock": self.wall_clock,
                "task_exposures": self.task_exposures,
                "sizes": list(self.params.sizes),
                "params": self.params.flatten().tolist(),
            },
            indent=1,
        )


# ---------------------------------------------------------------------------
# Adam


@dataclass(frozen=True)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0)


def adam_step(state: AdamState, grad, lr: float, b1=0.9, b2=0.999, eps=1e-8) -> tuple[AdamState, np.ndarray]:
    """Bias-corrected Adam; returns the new state and the update to subtract."""
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != state.m.shape:
        raise ValueError("gradient and optimizer state differ in shape")
    t = state.t + 1
    m = b1 * state.m + (1 - b1) * grad
    v = b2 * state.v + (1 - b2) * grad * grad
    m_hat = m / (1 - b1**t)
    v_hat = v / (1 - b2**t)
    return AdamState(m, v, t), lr * m_hat / (np.sqrt(v_hat) + eps)


# ---------------------------------------------------------------------------
# task sources


Batch = list  # of (task id, support Dataset, query Dataset)


class BatchSource(Protocol):
    input_dim: int

    def draw(self, iteration: int, rng: np.random.Generator) -> Batch: ...


class TaskPoolSampler:
    """Samples ``meta_batch`` tasks from a fixed pool, then ``K`` support and ``K`` query rows each."""

    def __init__(self, datasets: Sequence[Dataset], meta_batch: int, K: int):
        if not datasets:
            raise ValueError("empty task pool")
        self.datasets = list(datasets)
        self.meta_batch = meta_batch
        self.K = K
        self.input_dim = self.datasets[0].n_features

    def draw(self, iteration, rng):
        n = len(self.datasets)
        chosen = rng.choice(n, size=self.meta_batch, replace=self.meta_batch > n)
        return [(int(i), *support_query(self.datasets[i], self.K, rng)) for i in chosen]


class CachedBatches:
    """Replays a precomputed list of meta-batches in order, cycling when exhausted."""

    def __init__(self, batches: Sequence[Batch]):
        if not batches:
            raise ValueError("no cached batches")
        self.batches = list(batches)
        self.input_dim = self.batches[0][0][1].n_features

    def draw(self, iteration, rng):
        return self.batches[iteration % len(self.batches)]


def _canonical(batch: Batch) -> Batch:
    # fixed reduction order makes the summed meta-gradient independent of batch order
    return sorted(batch, key=lambda item: (item[0], item[1].X.tobytes(), item[2].X.tobytes()))


def _stack(datasets: Sequence[Dataset], reg):
    X = np.stack([d.X for d in datasets])
    Y = np.stack([d.Y for d in datasets]).astype(np.float64)
    R = np.stack([regularizer_rows(d, reg) for d in datasets])
    return X, Y, R


def meta_batch_gradient(
    theta: np.ndarray,
    sizes: Sequence[int],
    batch: Batch,
    alpha: float,
    reg: Optional[str],
    gamma: float,
    steps: int = 1,
) -> tuple[float, np.ndarray]:
    """Summed post-adaptation objective and its exact gradient over a meta-batch.

    All tasks must share the same support and query sizes; they are evaluated
    together along a leading task axis and reduced in canonical task order.
    """
    batch = _canonical(batch)
    Xs, Ys, Rs = _stack([b[1] for b in batch], reg)
    Xq, Yq, Rq = _stack([b[2] for b in batch], reg)
    values, grads = second_order_meta_gradient(
        theta,
        alpha,
        lambda th: _value_and_grad(th, sizes, Xs, Ys, Rs, gamma)[1],
        lambda th, v: _hvp(th, sizes, Xs, Ys, Rs, gamma, v),
        lambda th: _value_and_grad(th, sizes, Xq, Yq, Rq, gamma),
        steps=steps,
    )
    total = grads[0].copy()
    for g in grads[1:]:
        total += g
    return float(sum(values.tolist())), total


def _streams(seed: int):
    init_seq, sample_seq = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(init_seq), np.random.default_rng(sample_seq)


def fair_maml_train(source: BatchSource, config: MetaConfig) -> TrainReport:
    """Meta-train an initialization whose one-step adaptation is accurate and fair."""
    start = time.perf_counter()
    init_rng, sample_rng = _streams(config.seed)
    sizes = config.sizes(source.input_dim)
    theta = init_params(sizes, init_rng).flatten()
    adam = AdamState.zeros(theta.size)
    trace = []
    exposures = 0
    for it in range(config.meta_iters):
        batch = source.draw(it, sample_rng)
        value, grad = meta_batch_gradient(
            theta, sizes, batch, config.alpha, config.regularizer, config.gamma, config.inner_steps
        )
        if not (np.isfinite(value) and np.all(np.isfinite(grad))):
            raise NumericalError(f"non-finite meta-objective at iteration {it}")
        adam, update = adam_step(adam, grad, config.beta, config.adam_b1, config.adam_b2, config.adam_eps)
        theta = theta - update
        trace.append(value)
        exposures += len(batch)
    return TrainReport(trace, MlpParams.from_flat(theta, sizes), time.perf_counter() - start, config, exposures)


def pretrain_baseline(source: BatchSource, config: MetaConfig) -> TrainReport:
    """Ordinary training on the same task stream: one Adam step per task on support and query rows.

    Uses the same initialization and the same sampled batches as
    :func:`fair_maml_train` for an equal seed.  The trace holds the mean
    pre-step objective of each batch.
    """
    start = time.perf_counter()
    init_rng, sample_rng = _streams(config.seed)
    sizes = config.sizes(source.input_dim)
    theta = init_params(sizes, init_rng).flatten()
    adam = AdamState.zeros(theta.size)
    trace = []
    exposures = 0
    for it in range(config.meta_iters):
        batch = _canonical(source.draw(it, sample_rng))
        values = []
        for _, support, query in batch:
            X = np.concatenate([support.X, query.X])
            Y = np.concatenate([support.Y, query.Y]).astype(np.float64)
            rows = np.concatenate([regularizer_rows(support, config.regularizer), regularizer_rows(query, config.regularizer)])
            value, grad = _value_and_grad(theta, sizes, X, Y, rows, config.gamma)
            if not (np.isfinite(value) and np.all(np.isfinite(grad))):
                raise NumericalError(f"non-finite objective at batch {it}")
            adam, update = adam_step(adam, grad, config.pretrain_lr, config.adam_b1, config.adam_b2, config.adam_eps)
            theta = theta - update
            values.append(float(value))
            exposures += 1
        trace.append(float(np.mean(values)))
    return TrainReport(trace, MlpParams.from_flat(theta, sizes), time.perf_counter() - start, config, exposures)


def fine_tune(params: MlpParams, dataset: Dataset, steps: int, lr: float, reg: Optional[str], gamma: float) -> MlpParams:
    """``steps`` full-batch gradient steps; the input parameters are left untouched."""
    for _ in range(steps):
        params = inner_update(params, dataset, lr, reg, gamma)
    return params
