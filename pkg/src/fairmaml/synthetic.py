"""Synthetic fair-classification tasks built from two 2-D Gaussians.

Training tasks label points by a random line through the origin; the protected
attribute is drawn from a Bernoulli whose probability compares the two
Gaussian densities at a rotated copy of the point.  The rotation controls how
strongly the attribute correlates with the label.

The biased fine-tune task labels points by which Gaussian generated them and
offers only protected, positively labelled points for adaptation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit
from scipy.stats import multivariate_normal

from .dataset import Dataset, Task, check_regularizer

MEAN_POS = np.array([2.0, 2.0])
COV_POS = np.array([[5.0, 1.0], [1.0, 5.0]])
MEAN_NEG = np.array([-2.0, -2.0])
COV_NEG = np.array([[10.0, 1.0], [1.0, 3.0]])

PHI_CHOICES = (2.0, 4.0, 8.0, 16.0)
SLOPE_RANGE = (-5.0, 5.0)
PHI_INTERPRETATIONS = ("literal", "pi-over-phi")

_CHOL_POS = np.linalg.cholesky(COV_POS)
_CHOL_NEG = np.linalg.cholesky(COV_NEG)
_PDF_POS = multivariate_normal(MEAN_POS, COV_POS)
_PDF_NEG = multivariate_normal(MEAN_NEG, COV_NEG)


@dataclass(frozen=True)
class SyntheticTaskSpec:
    slope: float
    phi: float
    seed: int

    def __post_init__(self):
        if not SLOPE_RANGE[0] <= self.slope <= SLOPE_RANGE[1]:
            raise ValueError(f"slope {self.slope} outside {SLOPE_RANGE}")
        if self.phi not in PHI_CHOICES:
            raise ValueError(f"phi {self.phi} not in {PHI_CHOICES}")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must fit in 64 unsigned bits")


def draw_spec(rng: np.random.Generator) -> SyntheticTaskSpec:
    slope = float(rng.uniform(*SLOPE_RANGE))
    phi = float(PHI_CHOICES[rng.integers(len(PHI_CHOICES))])
    return SyntheticTaskSpec(slope, phi, int(rng.integers(2**63)))


def rotation_angle(phi: float, interpretation: str = "literal") -> float:
    """Angle in radians: ``phi`` itself, or ``pi / phi`` for the alternative reading."""
    if interpretation == "literal":
        return float(phi)
    if interpretation == "pi-over-phi":
        return float(np.pi / phi)
    raise ValueError(f"unknown phi interpretation {interpretation!r}; expected {PHI_INTERPRETATIONS}")


def rotate(X: np.ndarray, angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    R = np.array([[c, -s], [s, c]])
    return X @ R.T


def protected_probability(X: np.ndarray, phi: float, interpretation: str = "literal") -> np.ndarray:
    """``p(a=0) = p(x'|pos) / (p(x'|pos) + p(x'|neg))`` with ``x'`` the rotated point."""
    Xr = rotate(np.asarray(X, dtype=np.float64), rotation_angle(phi, interpretation))
    # ratio of densities evaluated in log space so far-out points do not give 0/0
    return expit(_PDF_POS.logpdf(Xr) - _PDF_NEG.logpdf(Xr))


def sample_mixture(rng: np.random.Generator, n: int) -> tuple[np.ndarray, np.ndarray]:
    """``n`` points from the equal-weight mixture; second value is 1 for the positive Gaussian."""
    from_pos = (rng.random(n) < 0.5).astype(np.int64)
    z = rng.standard_normal((n, 2))
    X = np.where(
        from_pos[:, None] == 1,
        MEAN_POS + z @ _CHOL_POS.T,
        MEAN_NEG + z @ _CHOL_NEG.T,
    )
    return X, from_pos


def sample_attributes(rng: np.random.Generator, X: np.ndarray, phi: float, interpretation: str) -> np.ndarray:
    p0 = protected_probability(X, phi, interpretation)
    return np.where(rng.random(len(X)) < p0, 0, 1).astype(np.int64)


def line_labels(X: np.ndarray, slope: float) -> np.ndarray:
    """1 strictly above the line ``y = slope * x``; points on the line get 0."""
    return (X[:, 1] > slope * X[:, 0]).astype(np.int64)


def sample_train_task(
    spec: SyntheticTaskSpec,
    n: int,
    interpretation: str = "literal",
    regularizer: str | None = "dp",
    gamma: float = 0.0,
    task_id: int = 0,
) -> Task:
    if n < 1:
        raise ValueError("n must be at least 1")
    check_regularizer(regularizer)
    rng = np.random.default_rng(spec.seed)
    X, _ = sample_mixture(rng, n)
    Y = line_labels(X, spec.slope)
    A = sample_attributes(rng, X, spec.phi, interpretation)
    meta = {"kind": "synthetic-train", "slope": spec.slope, "phi": spec.phi, "seed": spec.seed}
    return Task(Dataset(X, Y, A, tag=f"synth-{task_id}"), regularizer, gamma, task_id=task_id, meta=meta)


def sample_finetune_task(
    seed: int,
    k_protected_positive: int = 5,
    n_eval: int = 1000,
    interpretation: str = "literal",
    phi: float | None = None,
) -> tuple[Dataset, Dataset]:
    """Biased adaptation set (protected positives only) and a labelled evaluation set.

    Labels follow the generating Gaussian: 1 for the positive component.
    """
    if k_protected_positive < 1 or n_eval < 1:
        raise ValueError("counts must be at least 1")
    rng = np.random.default_rng(seed)
    if phi is None:
        phi = float(PHI_CHOICES[rng.integers(len(PHI_CHOICES))])
    elif phi not in PHI_CHOICES:
        raise ValueError(f"phi {phi} not in {PHI_CHOICES}")

    rows = []
    while len(rows) < k_protected_positive:
        z = rng.standard_normal((k_protected_positive, 2))
        X = MEAN_POS + z @ _CHOL_POS.T
        keep = sample_attributes(rng, X, phi, interpretation) == 0
        rows.extend(X[keep])
    X_ft = np.array(rows[:k_protected_positive])
    finetune = Dataset(
        X_ft,
        np.ones(k_protected_positive, np.int64),
        np.zeros(k_protected_positive, np.int64),
        tag="finetune",
    )

    X, Y = sample_mixture(rng, n_eval)
    A = sample_attributes(rng, X, phi, interpretation)
    return finetune, Dataset(X, Y, A, tag="finetune-eval")


def cache_tasks(
    seed: int,
    count: int = 100,
    n_per_task: int = 200,
    interpretation: str = "literal",
    regularizer: str | None = "dp",
    gamma: float = 0.0,
) -> list[Task]:
    """A fixed list of training tasks, reused across meta-iterations."""
    if count < 1:
        raise ValueError("count must be at least 1")
    rng = np.random.default_rng(seed)
    return [
        sample_train_task(draw_spec(rng), n_per_task, interpretation, regularizer, gamma, task_id=i)
        for i in range(count)
    ]
