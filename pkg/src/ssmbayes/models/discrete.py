"""Character-level predictors: embedding -> core -> vocabulary logits."""
from __future__ import annotations

import numpy as np

from .attention import mha_block_backward, mha_block_forward
from .common import log_softmax
from .ssm import ssm_scan, ssm_scan_backward

SSM_CORE = ("U", "b", "W_h", "b_h", "W_A", "b_A", "W_B", "b_B")
MHA_CORE = ("W_q", "W_k", "W_v", "W_o", "W_1", "b_1", "W_2", "b_2")


def _chars(p, char_seq):
    c = np.asarray(char_seq)
    if c.ndim == 1:
        c = c[None]
    if not np.issubdtype(c.dtype, np.integer):
        raise ValueError("characters must be integer indices")
    vocab = p["embed"].shape[0]
    if c.size and (c.min() < 0 or c.max() >= vocab):
        raise IndexError(f"character index out of range for vocab {vocab}")
    return c


def discrete_forward(p: dict, char_seq, heads: int = 4):
    """Logits for the character after each position; returns ``(logits, cache)``.

    ``p`` holds either SSM core fields or attention core fields (plus
    ``pos`` embeddings); the presence of ``W_q`` selects attention.
    """
    c = _chars(p, char_seq)
    emb = p["embed"][c]
    if "W_q" in p:
        T = c.shape[1]
        if T > p["pos"].shape[0]:
            raise ValueError(f"sequence length {T} exceeds positional table {p['pos'].shape[0]}")
        core_in = emb + p["pos"][:T]
        hid, core_cache = mha_block_forward(p, core_in, heads)
    else:
        hid, core_cache = ssm_scan(p, emb)
    logits = hid @ p["unembed"].T + p["bias"]
    return logits, {"c": c, "hid": hid, "core": core_cache}


def cross_entropy(logits, char_seq):
    """Mean next-character cross-entropy and its gradient w.r.t. ``logits``.

    ``logits[:, t]`` is scored against ``char_seq[:, t + 1]``.
    """
    c = np.asarray(char_seq)
    if c.ndim == 1:
        c = c[None]
    lp = log_softmax(logits[:, :-1])
    tgt = c[:, 1:]
    B, Tm1, V = lp.shape
    picked = np.take_along_axis(lp, tgt[..., None], axis=-1)[..., 0]
    loss = -picked.mean()
    dlogits = np.zeros_like(logits)
    probs = np.exp(lp)
    np.put_along_axis(probs, tgt[..., None], np.take_along_axis(probs, tgt[..., None], -1) - 1.0, -1)
    dlogits[:, :-1] = probs / (B * Tm1)
    return loss, dlogits


def discrete_backward(p: dict, cache: dict, dlogits) -> dict:
    """Exact gradients of ``sum(dlogits * logits)`` w.r.t. every field of ``p``."""
    hid = cache["hid"]
    grads = {
        "unembed": np.einsum("btv,bti->vi", dlogits, hid),
        "bias": dlogits.sum((0, 1)),
    }
    dhid = dlogits @ p["unembed"]
    if "W_q" in p:
        core_grads, demb = mha_block_backward(p, cache["core"], dhid)
        T = demb.shape[1]
        dpos = np.zeros_like(p["pos"])
        dpos[:T] = demb.sum(0)
        grads["pos"] = dpos
    else:
        core_grads, demb = ssm_scan_backward(p, cache["core"], dhid)
    grads.update(core_grads)
    dembed = np.zeros_like(p["embed"])
    np.add.at(dembed, cache["c"].ravel(), demb.reshape(-1, demb.shape[-1]))
    grads["embed"] = dembed
    return {k: grads[k] for k in p}
