"""Attention baselines.

``linear_attn_*`` is the unnormalized causal linear attention used for the
continuous tasks::

    out_t = W_out sum_{i<=t} (q_t . k_i) / e * v_i

There is no positional encoding, so the only order information is the causal
mask.  ``mha_*`` is a single softmax multi-head block with a feed-forward
layer and residual connections, used for the character tasks.
"""
from __future__ import annotations

import numpy as np

from .common import as_batch, gelu, gelu_grad, softmax


def _causal_mask(T):
    return np.tril(np.ones((T, T)))


def linear_attn_forward(p: dict, x_seq):
    x, squeeze = as_batch(x_seq, p["W_q"].shape[1])
    e = p["W_q"].shape[0]
    q = x @ p["W_q"].T
    k = x @ p["W_k"].T
    v = x @ p["W_v"].T
    scores = (q @ np.swapaxes(k, 1, 2)) * (_causal_mask(x.shape[1]) / e)
    o = scores @ v
    pred = o @ p["W_out"].T
    cache = {"x": x, "q": q, "k": k, "v": v, "scores": scores, "o": o, "squeeze": squeeze}
    return (pred[0] if squeeze else pred), cache


def linear_attn_backward(p: dict, cache: dict, loss_grads) -> dict:
    dpred = np.asarray(loss_grads, dtype=float)
    if cache["squeeze"]:
        dpred = dpred[None]
    x, q, k, v, scores, o = (cache[n] for n in ("x", "q", "k", "v", "scores", "o"))
    e = p["W_q"].shape[0]
    do = dpred @ p["W_out"]
    dv = np.swapaxes(scores, 1, 2) @ do
    dS = (do @ np.swapaxes(v, 1, 2)) * (_causal_mask(x.shape[1]) / e)
    dq = dS @ k
    dk = np.swapaxes(dS, 1, 2) @ q
    w = lambda d: np.einsum("bto,bti->oi", d, x)  # noqa: E731
    return {
        "W_q": w(dq), "W_k": w(dk), "W_v": w(dv),
        "W_out": np.einsum("bto,bti->oi", dpred, o),
    }


def mha_block_forward(p: dict, x: np.ndarray, heads: int):
    """Causal softmax attention + GELU feed-forward, both residual.

    ``x`` is ``(B, T, e)``; returns ``(y, cache)`` with ``y`` the same shape.
    """
    Bsz, T, e = x.shape
    dh = e // heads

    def split(z):
        return z.reshape(Bsz, T, heads, dh).transpose(0, 2, 1, 3)

    q = split(x @ p["W_q"].T)
    k = split(x @ p["W_k"].T)
    v = split(x @ p["W_v"].T)
    logits = (q @ np.swapaxes(k, -1, -2)) / np.sqrt(dh)
    logits = np.where(_causal_mask(T).astype(bool), logits, -np.inf)
    attn = softmax(logits, axis=-1)
    ctx = (attn @ v).transpose(0, 2, 1, 3).reshape(Bsz, T, e)
    x1 = x + ctx @ p["W_o"].T
    f_pre = x1 @ p["W_1"].T + p["b_1"]
    f = gelu(f_pre)
    y = x1 + f @ p["W_2"].T + p["b_2"]
    cache = {"x": x, "q": q, "k": k, "v": v, "attn": attn, "ctx": ctx, "x1": x1,
             "f_pre": f_pre, "f": f, "heads": heads}
    return y, cache


def mha_block_backward(p: dict, cache: dict, dy: np.ndarray):
    """Returns ``(grads, dx)`` for :func:`mha_block_forward`."""
    x, q, k, v, attn = (cache[n] for n in ("x", "q", "k", "v", "attn"))
    Bsz, T, e = x.shape
    heads = cache["heads"]
    dh = e // heads
    w = lambda d, inp: np.einsum("bto,bti->oi", d, inp)  # noqa: E731
    grads = {"W_2": w(dy, cache["f"]), "b_2": dy.sum((0, 1))}
    df_pre = (dy @ p["W_2"]) * gelu_grad(cache["f_pre"])
    grads["W_1"] = w(df_pre, cache["x1"])
    grads["b_1"] = df_pre.sum((0, 1))
    dx1 = dy + df_pre @ p["W_1"]
    grads["W_o"] = w(dx1, cache["ctx"])
    dctx = (dx1 @ p["W_o"]).reshape(Bsz, T, heads, dh).transpose(0, 2, 1, 3)
    dattn = dctx @ np.swapaxes(v, -1, -2)
    dv = np.swapaxes(attn, -1, -2) @ dctx
    dlogits = attn * (dattn - (dattn * attn).sum(-1, keepdims=True)) / np.sqrt(dh)
    dq = dlogits @ k
    dk = np.swapaxes(dlogits, -1, -2) @ q

    def merge(z):
        return z.transpose(0, 2, 1, 3).reshape(Bsz, T, e)

    dq, dk, dv = merge(dq), merge(dk), merge(dv)
    grads["W_q"] = w(dq, x)
    grads["W_k"] = w(dk, x)
    grads["W_v"] = w(dv, x)
    dx = dx1 + dq @ p["W_q"] + dk @ p["W_k"] + dv @ p["W_v"]
    return grads, dx
