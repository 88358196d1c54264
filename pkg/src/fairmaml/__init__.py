"""Fair meta-learning: Fair-MAML with exact second-order meta-gradients."""

from .dataset import Dataset, Task
from .mlp import (
    MlpParams,
    forward,
    grad_objective,
    init_params,
    inner_update,
    meta_gradient,
    objective,
)
from .fairness import EvalMetrics, evaluate

__all__ = [
    "Dataset",
    "EvalMetrics",
    "MlpParams",
    "Task",
    "evaluate",
    "forward",
    "grad_objective",
    "init_params",
    "inner_update",
    "meta_gradient",
    "objective",
]

__version__ = "0.1.0"
