"""Trainable predictors and their exact gradients.

Parameters are plain ``dict[str, ndarray]`` in a fixed field order (see
:data:`FIELDS`); gradients are dicts with the same keys and shapes.
"""
from __future__ import annotations

import numpy as np

from .attention import linear_attn_backward, linear_attn_forward
from .common import fan_in_normal, n_params, zeros_like_params
from .discrete import cross_entropy, discrete_backward, discrete_forward
from .erm import erm_closed_form
from .ssm import nonselective_backward, nonselective_forward, ssm_backward, ssm_forward

GATE_BIAS_INIT = 2.0
NONSELECTIVE_DECAY_INIT = 0.88

KINDS = ("ssm", "nonselective", "linear_attn", "discrete_ssm", "discrete_attn")

DEFAULT_DIMS = {
    "ssm": {"m": 2, "n": 16, "selector_hidden": 0},
    "nonselective": {"m": 2, "n": 16},
    "linear_attn": {"m": 2, "e": 16},
    "discrete_ssm": {"vocab": 100, "e": 64, "n": 16, "selector_hidden": 0},
    "discrete_attn": {"vocab": 100, "e": 64, "heads": 4, "ffn": 128, "max_len": 512},
}


def _shapes(kind: str, dims: dict) -> list[tuple[str, tuple, int]]:
    """``(field, shape, fan_in)`` triples; fan_in 0 marks a bias."""
    if kind in ("ssm", "discrete_ssm"):
        m = dims["m"] if kind == "ssm" else dims["e"]
        n, hsel = dims["n"], dims.get("selector_hidden", 0)
        sel = hsel or n
        out = []
        if kind == "discrete_ssm":
            out.append(("embed", (dims["vocab"], m), m))
        out += [("U", (n, m), m), ("b", (n,), 0)]
        if hsel:
            out += [("W_h", (hsel, n), n), ("b_h", (hsel,), 0)]
        out += [("W_A", (n, sel), sel), ("b_A", (n,), 0),
                ("W_B", (n * m, sel), sel), ("b_B", (n * m,), 0)]
        if kind == "ssm":
            out += [("W_out", (m, n), n), ("b_out", (m,), 0)]
        else:
            out += [("unembed", (dims["vocab"], n), n), ("bias", (dims["vocab"],), 0)]
        return out
    if kind == "nonselective":
        m, n = dims["m"], dims["n"]
        return [("A_fixed", (n, n), n), ("B_fixed", (n, m), m), ("W_out", (m, n), n), ("b_out", (m,), 0)]
    if kind == "linear_attn":
        m, e = dims["m"], dims["e"]
        return [("W_q", (e, m), m), ("W_k", (e, m), m), ("W_v", (e, m), m), ("W_out", (m, e), e)]
    if kind == "discrete_attn":
        V, e, f = dims["vocab"], dims["e"], dims["ffn"]
        if e % dims["heads"]:
            raise ValueError("embedding dim must be divisible by the number of heads")
        return [("embed", (V, e), e), ("pos", (dims["max_len"], e), e),
                ("W_q", (e, e), e), ("W_k", (e, e), e), ("W_v", (e, e), e), ("W_o", (e, e), e),
                ("W_1", (f, e), e), ("b_1", (f,), 0), ("W_2", (e, f), f), ("b_2", (e,), 0),
                ("unembed", (V, e), e), ("bias", (V,), 0)]
    raise ValueError(f"unknown model kind {kind!r}")


FIELDS = {k: [name for name, _, _ in _shapes(k, DEFAULT_DIMS[k])] for k in KINDS}


def full_dims(kind: str, dims: dict | None = None) -> dict:
    if kind not in DEFAULT_DIMS:
        raise ValueError(f"unknown model kind {kind!r}")
    out = dict(DEFAULT_DIMS[kind])
    out.update(dims or {})
    return out


def init_params(kind: str, dims: dict | None, rng: np.random.Generator) -> dict:
    """Weights ~ N(0, 1/fan_in), biases zero, gate bias +2 (initial gates ~0.88)."""
    dims = full_dims(kind, dims)
    params = {}
    for name, shape, fan_in in _shapes(kind, dims):
        if any(s <= 0 for s in shape):
            raise ValueError(f"invalid dims for {kind}: {dims}")
        params[name] = np.zeros(shape) if fan_in == 0 else fan_in_normal(rng, shape, fan_in)
    if "b_A" in params:
        params["b_A"][:] = GATE_BIAS_INIT
    if kind == "nonselective":
        # a dense N(0, 1/n) transition sits on the unit circle; start from a stable decay instead
        params["A_fixed"] = NONSELECTIVE_DECAY_INIT * np.eye(dims["n"])
    return params


def forward(kind: str, params: dict, x, heads: int = 4):
    if kind == "ssm":
        return ssm_forward(params, x)
    if kind == "nonselective":
        return nonselective_forward(params, x)
    if kind == "linear_attn":
        return linear_attn_forward(params, x)
    if kind in ("discrete_ssm", "discrete_attn"):
        return discrete_forward(params, x, heads)
    raise ValueError(f"unknown model kind {kind!r}")


def backward(kind: str, params: dict, cache: dict, dout) -> dict:
    if kind == "ssm":
        return ssm_backward(params, cache, dout)
    if kind == "nonselective":
        return nonselective_backward(params, cache, dout)
    if kind == "linear_attn":
        return linear_attn_backward(params, cache, dout)
    if kind in ("discrete_ssm", "discrete_attn"):
        return discrete_backward(params, cache, dout)
    raise ValueError(f"unknown model kind {kind!r}")


__all__ = [
    "KINDS", "FIELDS", "DEFAULT_DIMS", "init_params", "full_dims", "forward", "backward",
    "ssm_forward", "ssm_backward", "nonselective_forward", "nonselective_backward",
    "linear_attn_forward", "linear_attn_backward", "discrete_forward", "discrete_backward",
    "cross_entropy", "erm_closed_form", "n_params", "zeros_like_params",
]
