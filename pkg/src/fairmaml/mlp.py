"""Feed-forward ReLU network with a two-way softmax head, and its derivatives.

Parameters are a sequence of ``(W, b)`` layers with ``W`` shaped ``(out, in)``.
The flat layout used for gradients and optimizer state is layer-major: for each
layer the weight matrix in row-major order, then its bias.

The private routines broadcast over leading axes.  Data shaped ``(T, n, d)``
can be paired with one shared flat parameter vector ``(P,)`` or with per-task
vectors ``(T, P)``; results then carry the leading ``T`` axis.  The meta-trainer
relies on this to process a whole meta-batch in one call.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .dataset import Dataset, regularizer_rows

EPS_CE = 1e-12


@dataclass(frozen=True)
class MlpParams:
    """Immutable network parameters; ``layers[i] = (W_i, b_i)``."""

    layers: tuple[tuple[np.ndarray, np.ndarray], ...]

    def __post_init__(self):
        layers = tuple(
            (np.array(W, dtype=np.float64), np.array(b, dtype=np.float64)) for W, b in self.layers
        )
        if not layers:
            raise ValueError("network needs at least one layer")
        for i, (W, b) in enumerate(layers):
            if W.ndim != 2 or b.shape != (W.shape[0],):
                raise ValueError(f"layer {i}: weight {W.shape} and bias {b.shape} do not match")
            if i and W.shape[1] != layers[i - 1][0].shape[0]:
                raise ValueError(f"layer {i}: input dim {W.shape[1]} != previous output dim")
            if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
                raise ValueError(f"layer {i}: non-finite entries")
            W.flags.writeable = False
            b.flags.writeable = False
        if layers[-1][0].shape[0] != 2:
            raise ValueError("output layer must have exactly 2 units")
        object.__setattr__(self, "layers", layers)

    @property
    def sizes(self) -> tuple[int, ...]:
        return (self.layers[0][0].shape[1],) + tuple(W.shape[0] for W, _ in self.layers)

    @property
    def input_dim(self) -> int:
        return self.sizes[0]

    @property
    def n_params(self) -> int:
        return n_params(self.sizes)

    def flatten(self) -> np.ndarray:
        return np.concatenate([a.ravel() for W, b in self.layers for a in (W, b)])

    @classmethod
    def from_flat(cls, flat: np.ndarray, sizes: Sequence[int]) -> "MlpParams":
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (n_params(sizes),):
            raise ValueError(f"expected {n_params(sizes)} values, got shape {flat.shape}")
        return cls(tuple((W.copy(), b.copy()) for W, b in unflatten(flat, sizes)))

    @classmethod
    def zeros(cls, sizes: Sequence[int]) -> "MlpParams":
        return cls.from_flat(np.zeros(n_params(sizes)), sizes)


def n_params(sizes: Sequence[int]) -> int:
    return sum(o * i + o for i, o in zip(sizes[:-1], sizes[1:]))


def unflatten(flat: np.ndarray, sizes: Sequence[int]) -> list[tuple[np.ndarray, np.ndarray]]:
    """Split ``flat[..., P]`` into per-layer views ``W[..., out, in]``, ``b[..., out]``."""
    lead = flat.shape[:-1]
    layers = []
    pos = 0
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        W = flat[..., pos:pos + fan_out * fan_in].reshape(lead + (fan_out, fan_in))
        pos += fan_out * fan_in
        b = flat[..., pos:pos + fan_out]
        pos += fan_out
        layers.append((W, b))
    if pos != flat.shape[-1]:
        raise ValueError(f"flat vector has {flat.shape[-1]} entries, architecture needs {pos}")
    return layers


def _flatten_layers(layers) -> np.ndarray:
    parts = []
    for gW, gb in layers:
        parts.append(gW.reshape(gW.shape[:-2] + (-1,)))
        parts.append(gb)
    lead = np.broadcast_shapes(*(p.shape[:-1] for p in parts))
    if all(p.shape[:-1] == lead for p in parts):
        return np.concatenate(parts, axis=-1)
    return np.concatenate([np.broadcast_to(p, lead + p.shape[-1:]) for p in parts], axis=-1)


def init_params(sizes: Sequence[int], rng: np.random.Generator) -> MlpParams:
    """Uniform init on ``[-l, l]`` with ``l = sqrt(6 / (fan_in + fan_out))``; zero biases."""
    layers = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        layers.append((rng.uniform(-limit, limit, size=(fan_out, fan_in)), np.zeros(fan_out)))
    return MlpParams(tuple(layers))


# ---------------------------------------------------------------------------
# forward pass


def _softmax2(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _forward_pass(layers, X):
    """Return hidden activations ``hs`` (``hs[0] = X``) and pre-activations ``zs``."""
    hs = [X]
    zs = []
    last = len(layers) - 1
    for i, (W, b) in enumerate(layers):
        z = hs[-1] @ np.swapaxes(W, -1, -2) + b[..., None, :]
        zs.append(z)
        if i < last:
            hs.append(np.maximum(z, 0.0))
    return hs, zs


def _check_input(params: MlpParams, X: np.ndarray) -> None:
    if X.shape[-1] != params.input_dim:
        raise ValueError(f"input has {X.shape[-1]} features, network expects {params.input_dim}")


def forward(params: MlpParams, x) -> np.ndarray:
    """Class probabilities ``[P(f=0), P(f=1)]`` for one row or each row of a matrix."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim not in (1, 2):
        raise ValueError("expected a feature vector or a feature matrix")
    _check_input(params, x)
    X = x if x.ndim == 2 else x[None, :]
    _, zs = _forward_pass(params.layers, X)
    probs = _softmax2(zs[-1])
    return probs if x.ndim == 2 else probs[0]


def predict_proba(params: MlpParams, X) -> np.ndarray:
    """``P(f(x) = 1)`` for each row of ``X``."""
    return forward(params, np.atleast_2d(np.asarray(X, dtype=np.float64)))[:, 1]


def cross_entropy(probs, y) -> np.ndarray | float:
    """Clamped negative log-likelihood of label ``y`` under ``probs[..., 2]``."""
    probs = np.asarray(probs, dtype=np.float64)
    y = np.asarray(y)
    p_true = np.where(y == 1, probs[..., 1], probs[..., 0])
    loss = -np.log(np.clip(p_true, EPS_CE, 1.0 - EPS_CE))
    return float(loss) if loss.ndim == 0 else loss


# ---------------------------------------------------------------------------
# objective, gradient and Hessian-vector products
#
# Logits enter the objective only through u = z1 - z0, so the head reduces to a
# per-row scalar derivative dJ/du and a diagonal curvature d2J/du2.


def _head(z_out, Y, rows, gamma):
    """Objective value, ``dJ/du`` and ``d2J/du2`` from output logits."""
    p = _softmax2(z_out)
    p0, p1 = p[..., 0], p[..., 1]
    n = Y.shape[-1]
    p_true = np.where(Y == 1, p1, p0)
    live = (p_true >= EPS_CE) & (p_true <= 1.0 - EPS_CE)
    value = -np.log(np.clip(p_true, EPS_CE, 1.0 - EPS_CE)).mean(axis=-1)
    var = p0 * p1
    du = np.where(live, p1 - Y, 0.0) / n
    d2u = np.where(live, var, 0.0) / n
    if gamma != 0:
        count = rows.sum(axis=-1)
        w = rows / np.maximum(count, 1)[..., None]
        reg = np.where(count > 0, 1.0 - (w * p1).sum(axis=-1), 0.0)
        value = value + gamma * reg
        du = du - gamma * w * var
        d2u = d2u - gamma * w * var * (p0 - p1)
    return value, du, d2u


def _logit_grad(du):
    return np.stack([-du, du], axis=-1)


def _backward(layers, hs, zs, du):
    grads = [None] * len(layers)
    G = _logit_grad(du)
    for i in range(len(layers) - 1, -1, -1):
        W, _ = layers[i]
        grads[i] = (np.swapaxes(G, -1, -2) @ hs[i], G.sum(axis=-2))
        if i:
            G = (G @ W) * (zs[i - 1] > 0)
    return grads


def _value_and_grad(flat, sizes, X, Y, rows, gamma):
    layers = unflatten(flat, sizes)
    hs, zs = _forward_pass(layers, X)
    value, du, _ = _head(zs[-1], Y, rows, gamma)
    return value, _flatten_layers(_backward(layers, hs, zs, du))


def _hvp(flat, sizes, X, Y, rows, gamma, vec):
    """Hessian of the objective at ``flat`` times ``vec`` (Pearlmutter's R-operator).

    Forward-over-reverse: propagate the directional derivative of every
    intermediate of the gradient computation along ``vec``.  ReLU's second
    derivative is zero almost everywhere.
    """
    layers = unflatten(flat, sizes)
    dirs = unflatten(vec, sizes)
    hs, zs = _forward_pass(layers, X)
    _, du, d2u = _head(zs[-1], Y, rows, gamma)

    last = len(layers) - 1
    r_hs = [None]
    for i, ((W, _), (dW, db)) in enumerate(zip(layers, dirs)):
        r_z = hs[i] @ np.swapaxes(dW, -1, -2) + db[..., None, :]
        if r_hs[i] is not None:
            r_z = r_z + r_hs[i] @ np.swapaxes(W, -1, -2)
        if i < last:
            r_hs.append(r_z * (zs[i] > 0))
    r_du = d2u * (r_z[..., 1] - r_z[..., 0])

    out = [None] * len(layers)
    G, rG = _logit_grad(du), _logit_grad(r_du)
    for i in range(last, -1, -1):
        W, _ = layers[i]
        dW, _ = dirs[i]
        r_gW = np.swapaxes(rG, -1, -2) @ hs[i]
        if r_hs[i] is not None:
            r_gW = r_gW + np.swapaxes(G, -1, -2) @ r_hs[i]
        out[i] = (r_gW, rG.sum(axis=-2))
        if i:
            mask = zs[i - 1] > 0
            rG = (rG @ W + G @ dW) * mask
            G = (G @ W) * mask
    return _flatten_layers(out)


def second_order_meta_gradient(
    theta: np.ndarray,
    alpha: float,
    inner_grad: Callable[[np.ndarray], np.ndarray],
    inner_hvp: Callable[[np.ndarray, np.ndarray], np.ndarray],
    outer_value_and_grad: Callable[[np.ndarray], tuple],
    steps: int = 1,
):
    """Exact gradient of ``J(theta) = F(theta_k)`` after ``k`` steps ``theta_{j+1} = theta_j - alpha grad G(theta_j)``.

    Chain rule through each step: ``grad J = prod_j (I - alpha H_G(theta_j)) grad F(theta_k)``,
    applied right to left as Hessian-vector products.  Hessians are symmetric so
    no transposes appear.  Returns ``(J, grad J)``.
    """
    path = [theta]
    for _ in range(steps):
        path.append(path[-1] - alpha * inner_grad(path[-1]))
    value, g = outer_value_and_grad(path[-1])
    for point in reversed(path[:-1]):
        g = g - alpha * inner_hvp(point, g)
    return value, g


# ---------------------------------------------------------------------------
# public single-dataset API


def _arrays(params: MlpParams, dataset: Dataset, reg: str | None):
    _check_input(params, dataset.X)
    return dataset.X, dataset.Y.astype(np.float64), regularizer_rows(dataset, reg)


def objective(params: MlpParams, dataset: Dataset, reg: str | None, gamma: float) -> float:
    """Mean cross-entropy plus ``gamma`` times the fairness regularizer."""
    X, Y, rows = _arrays(params, dataset, reg)
    layers = params.layers
    _, zs = _forward_pass(layers, X)
    return float(_head(zs[-1], Y, rows, gamma)[0])


def grad_objective(params: MlpParams, dataset: Dataset, reg: str | None, gamma: float) -> np.ndarray:
    X, Y, rows = _arrays(params, dataset, reg)
    return _value_and_grad(params.flatten(), params.sizes, X, Y, rows, gamma)[1]


def hvp_objective(params: MlpParams, dataset: Dataset, reg: str | None, gamma: float, vec) -> np.ndarray:
    """Hessian-vector product of :func:`objective` with respect to the flat parameters."""
    X, Y, rows = _arrays(params, dataset, reg)
    vec = np.asarray(vec, dtype=np.float64)
    if vec.shape != (params.n_params,):
        raise ValueError(f"direction must have shape ({params.n_params},)")
    return _hvp(params.flatten(), params.sizes, X, Y, rows, gamma, vec)


def inner_update(params: MlpParams, dataset: Dataset, alpha: float, reg: str | None, gamma: float) -> MlpParams:
    """One gradient step ``theta - alpha * grad`` on the task objective."""
    if alpha < 0:
        raise ValueError("step size must be nonnegative")
    step = params.flatten() - alpha * grad_objective(params, dataset, reg, gamma)
    return MlpParams.from_flat(step, params.sizes)


def meta_gradient(
    params: MlpParams,
    support: Dataset,
    query: Dataset,
    alpha: float,
    reg: str | None,
    gamma: float,
) -> np.ndarray:
    """Gradient w.r.t. ``params`` of the query objective after one inner step on ``support``."""
    if alpha < 0:
        raise ValueError("step size must be nonnegative")
    sizes = params.sizes
    Xs, Ys, rows_s = _arrays(params, support, reg)
    Xq, Yq, rows_q = _arrays(params, query, reg)
    _, g = second_order_meta_gradient(
        params.flatten(),
        alpha,
        lambda th: _value_and_grad(th, sizes, Xs, Ys, rows_s, gamma)[1],
        lambda th, v: _hvp(th, sizes, Xs, Ys, rows_s, gamma, v),
        lambda th: _value_and_grad(th, sizes, Xq, Yq, rows_q, gamma),
    )
    return g
