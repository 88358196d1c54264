"""Independent reference computations used as test oracles.

Nothing here imports the package's differentiation code: the forward pass is a
plain per-row loop and derivatives come from central finite differences.
"""

import math

import numpy as np

FD_STEP = 1e-5
ABS_FLOOR = 1e-8


def naive_forward(layers, x):
    """Row-at-a-time forward pass written with Python loops."""
    h = [float(v) for v in x]
    for k, (W, b) in enumerate(layers):
        z = []
        for i in range(W.shape[0]):
            s = float(b[i])
            for j in range(W.shape[1]):
                s += float(W[i, j]) * h[j]
            z.append(s)
        h = z if k == len(layers) - 1 else [max(v, 0.0) for v in z]
    m = max(h)
    e = [math.exp(v - m) for v in h]
    return np.array([v / sum(e) for v in e])


def naive_objective(layers, X, Y, A, reg, gamma):
    probs = [naive_forward(layers, x) for x in X]
    ce = 0.0
    for p, y in zip(probs, Y):
        ce -= math.log(min(max(p[int(y)], 1e-12), 1 - 1e-12))
    ce /= len(X)
    if gamma == 0 or reg is None:
        return ce
    rows = [i for i in range(len(X)) if A[i] == 0 and (reg == "dp" or Y[i] == 1)]
    if not rows:
        return ce
    return ce + gamma * (1.0 - sum(probs[i][1] for i in rows) / len(rows))


def central_diff(f, theta, h=FD_STEP):
    theta = np.asarray(theta, dtype=np.float64)
    out = np.empty_like(theta)
    for i in range(theta.size):
        tp = theta.copy()
        tm = theta.copy()
        tp[i] += h
        tm[i] -= h
        out[i] = (f(tp) - f(tm)) / (2 * h)
    return out


def max_rel_error(analytic, numeric, floor=ABS_FLOOR):
    """Largest relative error over coordinates whose absolute error exceeds ``floor``."""
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    diff = np.abs(analytic - numeric)
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    rel = np.where(diff <= floor, 0.0, diff / np.where(scale > 0, scale, 1.0))
    return float(rel.max()) if rel.size else 0.0


def reference_adam(grad_fn, x0, lr, steps, b1=0.9, b2=0.999, eps=1e-8):
    """Straight-line Adam, one scalar coordinate at a time."""
    x = [float(v) for v in x0]
    m = [0.0] * len(x)
    v = [0.0] * len(x)
    trace = []
    for t in range(1, steps + 1):
        g = grad_fn(np.array(x))
        for i in range(len(x)):
            m[i] = b1 * m[i] + (1 - b1) * g[i]
            v[i] = b2 * v[i] + (1 - b2) * g[i] * g[i]
            mhat = m[i] / (1 - b1 ** t)
            vhat = v[i] / (1 - b2 ** t)
            x[i] -= lr * mhat / (math.sqrt(vhat) + eps)
        trace.append(list(x))
    return np.array(trace)


def dense_objective(flat, sizes, X, Y, A, reg, gamma):
    """Vectorized objective written from the definitions, for finite differences on larger nets."""
    flat = np.asarray(flat, dtype=np.float64)
    h = np.asarray(X, dtype=np.float64)
    pos = 0
    for k in range(len(sizes) - 1):
        n_in, n_out = sizes[k], sizes[k + 1]
        W = flat[pos:pos + n_in * n_out].reshape(n_out, n_in)
        pos += n_in * n_out
        b = flat[pos:pos + n_out]
        pos += n_out
        h = h @ W.T + b
        if k < len(sizes) - 2:
            h = np.maximum(h, 0.0)
    h = h - h.max(axis=1, keepdims=True)
    p = np.exp(h) / np.exp(h).sum(axis=1, keepdims=True)
    Y = np.asarray(Y)
    A = np.asarray(A)
    picked = np.clip(p[np.arange(len(Y)), Y], 1e-12, 1 - 1e-12)
    value = -np.mean(np.log(picked))
    if gamma == 0 or reg is None:
        return float(value)
    rows = (A == 0) & ((Y == 1) if reg == "eop" else True)
    if not rows.any():
        return float(value)
    return float(value + gamma * (1.0 - p[rows, 1].mean()))
