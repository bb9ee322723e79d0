"""Small shared numeric helpers."""

import numpy as np


def sigmoid(x):
    x = np.asarray(x)
    out = np.empty_like(x, dtype=np.result_type(x, np.float32))
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def inv_sigmoid(y):
    y = np.asarray(y)
    return np.log(y / (1.0 - y))


def softplus(x):
    x = np.asarray(x)
    return np.logaddexp(0.0, x)


def inv_softplus(y):
    y = np.asarray(y)
    return y + np.log(-np.expm1(-y))


def normalize_rows(v, eps=0.0):
    """Unit-normalize the last axis; optional eps guards zero vectors."""
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    if eps:
        n = np.maximum(n, eps)
    return v / n


def normalize_rows_backward(v, d_unit):
    """Gradient of ``u = v / |v|`` w.r.t. ``v`` given upstream ``d_unit``."""
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    u = v / n
    proj = np.sum(d_unit * u, axis=-1, keepdims=True)
    return (d_unit - proj * u) / n
