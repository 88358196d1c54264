"""Group fairness metrics on hard predictions and differentiable regularizers.

Protected rows are ``A == 0``.  Ratios are protected rate over unprotected rate
and are reported raw, so they can exceed 1.  ``None`` marks a ratio that is
undefined because a conditioning group is empty or the denominator rate is 0.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .dataset import Dataset
from .mlp import MlpParams, predict_proba

THRESHOLD = 0.5


@dataclass(frozen=True)
class EvalMetrics:
    accuracy: float
    dp_ratio: Optional[float]
    eo_ratio: Optional[float]
    n: int
    n_protected: int
    n_protected_positive: int

    @property
    def dp_symmetric(self) -> Optional[float]:
        return symmetric(self.dp_ratio)

    @property
    def eo_symmetric(self) -> Optional[float]:
        return symmetric(self.eo_ratio)


def symmetric(ratio: Optional[float]) -> Optional[float]:
    """``min(r, 1/r)``: 1 is parity regardless of which group is favoured."""
    if ratio is None:
        return None
    if ratio == 0:
        return 0.0
    return min(ratio, 1.0 / ratio)


def predict_labels(params: MlpParams, X) -> np.ndarray:
    """Hard decisions; a probability of exactly 0.5 goes to class 1."""
    return (predict_proba(params, X) >= THRESHOLD).astype(np.int64)


def _rate_ratio(yhat, protected, unprotected) -> Optional[float]:
    if not protected.any() or not unprotected.any():
        return None
    denom = yhat[unprotected].mean()
    if denom == 0:
        return None
    return float(yhat[protected].mean() / denom)


def dp_ratio(yhat, A) -> Optional[float]:
    """``P(Yhat=1 | A=0) / P(Yhat=1 | A=1)``."""
    yhat, A = np.asarray(yhat), np.asarray(A)
    if yhat.shape != A.shape:
        raise ValueError("predictions and sensitive attribute differ in length")
    return _rate_ratio(yhat, A == 0, A == 1)


def eo_ratio(yhat, Y, A) -> Optional[float]:
    """True-positive-rate ratio ``P(Yhat=1 | A=0, Y=1) / P(Yhat=1 | A=1, Y=1)``."""
    yhat, Y, A = np.asarray(yhat), np.asarray(Y), np.asarray(A)
    if not (yhat.shape == Y.shape == A.shape):
        raise ValueError("predictions, labels and sensitive attribute differ in length")
    pos = Y == 1
    return _rate_ratio(yhat, pos & (A == 0), pos & (A == 1))


def _one_minus_mean_rate(p1, rows) -> float:
    if not rows.any():
        return 0.0
    return float(1.0 - p1[rows].mean())


def reg_dp(params: MlpParams, dataset: Dataset) -> float:
    """One minus the mean positive probability over protected rows (0 if there are none)."""
    return _one_minus_mean_rate(predict_proba(params, dataset.X), dataset.A == 0)


def reg_eop(params: MlpParams, dataset: Dataset) -> float:
    """As :func:`reg_dp` but over protected rows with a positive label."""
    return _one_minus_mean_rate(predict_proba(params, dataset.X), (dataset.A == 0) & (dataset.Y == 1))


REGULARIZER_FUNCS = {"dp": reg_dp, "eop": reg_eop}


def evaluate_predictions(yhat, dataset: Dataset) -> EvalMetrics:
    Y, A = dataset.Y, dataset.A
    return EvalMetrics(
        accuracy=float(np.mean(yhat == Y)),
        dp_ratio=dp_ratio(yhat, A),
        eo_ratio=eo_ratio(yhat, Y, A),
        n=len(dataset),
        n_protected=int(np.sum(A == 0)),
        n_protected_positive=int(np.sum((A == 0) & (Y == 1))),
    )


def evaluate(params: MlpParams, dataset: Dataset) -> EvalMetrics:
    return evaluate_predictions(predict_labels(params, dataset.X), dataset)
