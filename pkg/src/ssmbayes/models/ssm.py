"""Selective and non-selective diagonal/dense state-space predictors.

Selective recurrence, for inputs ``x_t`` in R^m and hidden size n::

    s_t   = SiLU(U x_t + b)
    a_t   = sigmoid(W_A s_t + b_A)                  diagonal gate in (0, 1)^n
    B_t   = reshape(W_B s_t + b_B, (n, m))
    h_t   = a_t * h_{t-1} + B_t x_t,   h_0 = 0
    y_t   = W_out h_t + b_out                       forecast of x_{t+1}

With ``selector_hidden > 0`` the gate and input heads read
``r_t = SiLU(W_h s_t + b_h)`` instead of ``s_t``.
"""
from __future__ import annotations

import numpy as np

from .common import as_batch, sigmoid, silu, silu_grad


def ssm_scan(p: dict, x: np.ndarray):
    """Hidden states for batched input ``x (B, T, m)``; returns ``(h, cache)``."""
    n = p["b_A"].shape[0]
    m = p["U"].shape[1]
    pre = x @ p["U"].T + p["b"]
    s = silu(pre)
    if "W_h" in p:
        pre_h = s @ p["W_h"].T + p["b_h"]
        r = silu(pre_h)
    else:
        pre_h, r = None, s
    a = sigmoid(r @ p["W_A"].T + p["b_A"])
    sel = r.shape[-1]
    if m <= sel:
        Bm = (r @ p["W_B"].T + p["b_B"]).reshape(*x.shape[:2], n, m)
        u = np.einsum("btnm,btm->btn", Bm, x)
        Mx = None
    else:
        # wide inputs: contract x into W_B first instead of building (B, T, n, m)
        Bm = None
        Mx = (x @ p["W_B"].reshape(n, m, sel).transpose(1, 0, 2).reshape(m, n * sel)).reshape(*x.shape[:2], n, sel)
        u = np.einsum("btnj,btj->btn", Mx, r) + x @ p["b_B"].reshape(n, m).T
    h = np.empty_like(u)
    prev = np.zeros(u[:, 0].shape)
    for t in range(x.shape[1]):
        prev = a[:, t] * prev + u[:, t]
        h[:, t] = prev
    cache = {"x": x, "pre": pre, "s": s, "pre_h": pre_h, "r": r, "a": a, "Bm": Bm, "Mx": Mx, "h": h}
    return h, cache


def ssm_scan_backward(p: dict, cache: dict, dh_direct: np.ndarray):
    """Back-propagate ``dL/dh`` (direct contributions per step) through the scan.

    Returns ``(grads for the selector fields, dL/dx)``.
    """
    x, a, h, Bm, r = cache["x"], cache["a"], cache["h"], cache["Bm"], cache["r"]
    Bsz, T, n = h.shape
    g = np.empty_like(h)
    nxt = np.zeros((Bsz, n))
    for t in range(T - 1, -1, -1):
        nxt = dh_direct[:, t] + (a[:, t + 1] * nxt if t + 1 < T else 0.0)
        g[:, t] = nxt
    h_prev = np.concatenate([np.zeros((Bsz, 1, n)), h[:, :-1]], axis=1)
    dga = g * h_prev * a * (1.0 - a)

    def wsum(dout, inp):
        return np.einsum("bto,bti->oi", dout, inp)

    grads = {"W_A": wsum(dga, r), "b_A": dga.sum((0, 1))}
    if Bm is not None:
        dBflat = (g[..., :, None] * x[..., None, :]).reshape(Bsz, T, -1)
        dx = np.einsum("btnm,btn->btm", Bm, g)
        grads["W_B"] = wsum(dBflat, r)
        grads["b_B"] = dBflat.sum((0, 1))
        dr = dBflat @ p["W_B"] + dga @ p["W_A"]
    else:
        m, sel = x.shape[-1], r.shape[-1]
        gr = (g[..., :, None] * r[..., None, :]).reshape(Bsz * T, n * sel)
        xf = x.reshape(Bsz * T, m)
        # W_B rows are indexed (n, m), columns by selector feature j
        dW = (xf.T @ gr).reshape(m, n, sel).transpose(1, 0, 2).reshape(n * m, sel)
        grads["W_B"] = dW
        grads["b_B"] = (g.reshape(-1, n).T @ xf).reshape(n * m)
        W3 = p["W_B"].reshape(n, m, sel).transpose(0, 2, 1).reshape(n * sel, m)
        dx = (gr @ W3).reshape(Bsz, T, m) + g @ p["b_B"].reshape(n, m)
        dr = np.einsum("btn,btnj->btj", g, cache["Mx"]) + dga @ p["W_A"]
    if "W_h" in p:
        dpre_h = dr * silu_grad(cache["pre_h"])
        grads["W_h"] = wsum(dpre_h, cache["s"])
        grads["b_h"] = dpre_h.sum((0, 1))
        ds = dpre_h @ p["W_h"]
    else:
        ds = dr
    dpre = ds * silu_grad(cache["pre"])
    grads["U"] = wsum(dpre, x)
    grads["b"] = dpre.sum((0, 1))
    dx = dx + dpre @ p["U"]
    return grads, dx


def ssm_forward(p: dict, x_seq):
    """Forecasts ``y_t`` of ``x_{t+1}`` for every prefix; returns ``(pred, cache)``.

    Accepts ``(T, m)`` or ``(B, T, m)``; the output has the same rank.
    """
    x, squeeze = as_batch(x_seq, p["U"].shape[1])
    h, cache = ssm_scan(p, x)
    pred = h @ p["W_out"].T + p["b_out"]
    cache["squeeze"] = squeeze
    return (pred[0] if squeeze else pred), cache


def ssm_backward(p: dict, cache: dict, loss_grads) -> dict:
    """Exact gradients of ``sum_t loss_grads_t . pred_t`` w.r.t. every field of ``p``."""
    dpred = np.asarray(loss_grads, dtype=float)
    if cache["squeeze"]:
        dpred = dpred[None]
    h = cache["h"]
    if dpred.shape[:2] != h.shape[:2]:
        raise ValueError("loss_grads do not match the cached forward pass")
    grads, _ = ssm_scan_backward(p, cache, dpred @ p["W_out"])
    grads["W_out"] = np.einsum("bto,bti->oi", dpred, h)
    grads["b_out"] = dpred.sum((0, 1))
    return {k: grads[k] for k in p}


def nonselective_forward(p: dict, x_seq):
    """Time-invariant recurrence ``h_t = A h_{t-1} + B x_t``."""
    x, squeeze = as_batch(x_seq, p["B_fixed"].shape[1])
    u = x @ p["B_fixed"].T
    h = np.empty_like(u)
    prev = np.zeros(u[:, 0].shape)
    AT = p["A_fixed"].T
    for t in range(x.shape[1]):
        prev = prev @ AT + u[:, t]
        h[:, t] = prev
    pred = h @ p["W_out"].T + p["b_out"]
    cache = {"x": x, "h": h, "squeeze": squeeze}
    return (pred[0] if squeeze else pred), cache


def nonselective_backward(p: dict, cache: dict, loss_grads) -> dict:
    dpred = np.asarray(loss_grads, dtype=float)
    if cache["squeeze"]:
        dpred = dpred[None]
    x, h = cache["x"], cache["h"]
    Bsz, T, n = h.shape
    dh_direct = dpred @ p["W_out"]
    g = np.empty_like(h)
    nxt = np.zeros((Bsz, n))
    A = p["A_fixed"]
    for t in range(T - 1, -1, -1):
        nxt = dh_direct[:, t] + (nxt @ A if t + 1 < T else 0.0)
        g[:, t] = nxt
    h_prev = np.concatenate([np.zeros((Bsz, 1, n)), h[:, :-1]], axis=1)
    return {
        "A_fixed": np.einsum("bti,btj->ij", g, h_prev),
        "B_fixed": np.einsum("bti,btj->ij", g, x),
        "W_out": np.einsum("bto,bti->oi", dpred, h),
        "b_out": dpred.sum((0, 1)),
    }
