from __future__ import annotations

import numpy as np


def sigmoid(x):
    # split by sign so large |x| never overflows exp
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def silu(x):
    return x * sigmoid(x)


def silu_grad(x):
    s = sigmoid(x)
    return s * (1.0 + x * (1.0 - s))


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(x):
    return 0.5 * x * (1.0 + np.tanh(_GELU_C * (x + 0.044715 * x ** 3)))


def gelu_grad(x):
    u = _GELU_C * (x + 0.044715 * x ** 3)
    th = np.tanh(u)
    du = _GELU_C * (1.0 + 3 * 0.044715 * x ** 2)
    return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du


def softmax(x, axis=-1):
    z = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(x, axis=-1):
    z = x - np.max(x, axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def fan_in_normal(rng, shape, fan_in):
    return rng.standard_normal(shape) / np.sqrt(fan_in)


def as_batch(x, m=None):
    """Coerce ``(T, m)`` or ``(B, T, m)`` input to 3-d; returns (x3, was_2d)."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 2:
        x = x[None]
        squeeze = True
    elif x.ndim == 3:
        squeeze = False
    else:
        raise ValueError(f"expected (T, m) or (B, T, m) input, got shape {x.shape}")
    if x.shape[1] < 1:
        raise ValueError("empty sequence")
    if m is not None and x.shape[2] != m:
        raise ValueError(f"observation dim {x.shape[2]} does not match model dim {m}")
    return x, squeeze


def zeros_like_params(params: dict) -> dict:
    return {k: np.zeros_like(v) for k, v in params.items()}


def n_params(params: dict) -> int:
    return int(sum(v.size for v in params.values()))
