"""Task data containers shared by every other module."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

REGULARIZERS = ("dp", "eop")


@dataclass(frozen=True)
class Dataset:
    """Features ``X [n, d]``, labels ``Y [n]`` and sensitive attribute ``A [n]``.

    ``A == 0`` marks the protected group; ``Y == 1`` is the positive outcome.
    """

    X: np.ndarray
    Y: np.ndarray
    A: np.ndarray
    tag: Optional[str] = None

    def __post_init__(self):
        X = np.array(self.X, dtype=np.float64)
        Y = np.array(self.Y, dtype=np.int64)
        A = np.array(self.A, dtype=np.int64)
        if X.ndim != 2:
            raise ValueError(f"X must be a matrix, got shape {X.shape}")
        n = X.shape[0]
        if n < 1:
            raise ValueError("dataset must have at least one row")
        if Y.shape != (n,) or A.shape != (n,):
            raise ValueError(f"X has {n} rows but Y has shape {Y.shape} and A has shape {A.shape}")
        if not (((Y == 0) | (Y == 1)).all() and ((A == 0) | (A == 1)).all()):
            raise ValueError("Y and A must be binary")
        if not np.all(np.isfinite(X)):
            raise ValueError("feature values must be finite")
        for a in (X, Y, A):
            a.flags.writeable = False
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)
        object.__setattr__(self, "A", A)

    def __len__(self) -> int:
        return self.X.shape[0]

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        if idx.size == 0:
            raise ValueError("dataset must have at least one row")
        # rows of a valid dataset are valid; skip re-validation
        out = object.__new__(Dataset)
        for name, arr in (("X", self.X[idx]), ("Y", self.Y[idx]), ("A", self.A[idx])):
            arr.flags.writeable = False
            object.__setattr__(out, name, arr)
        object.__setattr__(out, "tag", self.tag)
        return out

    def concat(self, other: "Dataset") -> "Dataset":
        return Dataset(
            np.vstack([self.X, other.X]),
            np.concatenate([self.Y, other.Y]),
            np.concatenate([self.A, other.A]),
            self.tag,
        )


@dataclass(frozen=True)
class Task:
    """A fair learning task: data, loss, fairness regularizer and its weight."""

    dataset: Dataset
    regularizer: Optional[str] = "dp"
    gamma: float = 0.0
    loss: str = "cross_entropy"
    task_id: int = 0
    meta: dict = field(default_factory=dict)


def check_regularizer(reg: Optional[str]) -> Optional[str]:
    if reg is not None and reg not in REGULARIZERS:
        raise ValueError(f"unknown regularizer {reg!r}; expected one of {REGULARIZERS} or None")
    return reg


def regularizer_rows(dataset: Dataset, reg: Optional[str]) -> np.ndarray:
    """Float mask of the rows a regularizer averages over.

    ``dp``: protected rows.  ``eop``: protected rows with a positive label.
    """
    check_regularizer(reg)
    return _rows(dataset.Y, dataset.A, reg)


def _rows(Y: np.ndarray, A: np.ndarray, reg: Optional[str]) -> np.ndarray:
    if reg is None:
        return np.zeros(np.shape(Y))
    mask = A == 0
    if reg == "eop":
        mask = mask & (Y == 1)
    return mask.astype(np.float64)
