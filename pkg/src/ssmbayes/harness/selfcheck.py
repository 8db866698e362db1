"""Fast self-tests behind the ``check`` subcommand.

Each check compares a production code path with a brute-force computation
and returns ``(name, passed, max_error, tolerance)``.
"""
from __future__ import annotations

import itertools
import math

import numpy as np

from ..lgssm import LgssmParams, gain_schedule, kalman_filter, steady_state
from ..models import backward, forward, init_params
from ..numerics import make_rng
from ..oracle import ForwardMessage, hmm_forward_step
from ..tasks import HmmParams
from ..training import batch_loss


def _joint_conditioning(p: LgssmParams, P0, x):
    """Mean and covariance of z_T given x_1..x_T from the stacked joint Gaussian."""
    T, d = len(x), p.d
    # z_t = sum_j A^{t-j} w_j + A^t z_0, stacked over t = 1..T with noise sources (z_0, w_1..w_T)
    src = d * (T + 1)
    Lz = np.zeros((T, d, src))
    Apow = [np.linalg.matrix_power(p.A, i) for i in range(T + 1)]
    for t in range(1, T + 1):
        Lz[t - 1, :, :d] = Apow[t]
        for j in range(1, t + 1):
            Lz[t - 1, :, d * j:d * (j + 1)] = Apow[t - j]
    cov_src = np.zeros((src, src))
    cov_src[:d, :d] = P0
    for j in range(1, T + 1):
        cov_src[d * j:d * (j + 1), d * j:d * (j + 1)] = p.Q
    Lx = np.einsum("mi,tis->tms", p.C, Lz).reshape(T * p.m, src)
    Sxx = Lx @ cov_src @ Lx.T + np.kron(np.eye(T), p.R)
    Szx = Lz[-1] @ cov_src @ Lx.T
    Szz = Lz[-1] @ cov_src @ Lz[-1].T
    gain = np.linalg.solve(Sxx, Szx.T).T
    return gain @ np.concatenate(x), Szz - gain @ Szx.T


def check_kalman(n_systems: int = 50, seed: int = 0):
    rng = make_rng(seed, 501)
    worst = 0.0
    for i in range(n_systems):
        d, m, T = 1 + i % 3, 1 + (i // 3) % 2, 1 + i % 6
        A = rng.standard_normal((d, d))
        A *= 0.9 / max(1e-3, np.max(np.abs(np.linalg.eigvals(A))))
        Wq, Wr = rng.standard_normal((d, d)), rng.standard_normal((m, m))
        p = LgssmParams(A, rng.standard_normal((m, d)), Wq @ Wq.T + 0.1 * np.eye(d), Wr @ Wr.T + 0.1 * np.eye(m))
        W0 = rng.standard_normal((d, d))
        P0 = W0 @ W0.T + 0.1 * np.eye(d)
        x = rng.standard_normal((T, m))
        state, _, _ = kalman_filter(p, x, P0)
        mu, cov = _joint_conditioning(p, P0, x)
        worst = max(worst, np.max(np.abs(state.z_hat - mu)), np.max(np.abs(state.P - cov)))
    return "kalman_vs_joint_gaussian", bool(worst < 1e-7), worst, 1e-7


def check_riccati():
    p = LgssmParams(np.array([[0.9]]), np.array([[1.0]]), np.array([[1.0]]), np.array([[1.0]]))
    a2, q, r = 0.81, 1.0, 1.0
    # P^2 + (r - a^2 r - q) P - q r = 0 for the predicted variance
    b = r - a2 * r - q
    P = (-b + math.sqrt(b * b + 4 * q * r)) / 2
    K_closed = P / (P + r)
    K = float(steady_state(p)[0][0, 0])
    sched = gain_schedule(p, np.zeros((1, 1)), 200)
    err = max(abs(K - K_closed), abs(float(sched.steady[0, 0]) - K_closed))
    return "scalar_riccati_gain", bool(err < 1e-9), err, 1e-9


def _fd_kind(kind, dims, x, rng, eps=1e-5):
    p = init_params(kind, dims, rng)
    for v in p.values():
        v += 0.1 * rng.standard_normal(v.shape)
    _, g = batch_loss(kind, p, x)
    worst = 0.0
    for name, arr in p.items():
        flat = arr.reshape(-1)
        for idx in range(min(flat.size, 6)):
            j = int(rng.integers(flat.size))
            old = flat[j]
            flat[j] = old + eps
            lp, _ = batch_loss(kind, p, x)
            flat[j] = old - eps
            lm, _ = batch_loss(kind, p, x)
            flat[j] = old
            num = (lp - lm) / (2 * eps)
            ana = g[name].reshape(-1)[j]
            worst = max(worst, abs(num - ana) / max(1e-6, abs(num) + abs(ana)))
    return worst


def check_gradients(seed: int = 0):
    rng = make_rng(seed, 502)
    cont = rng.standard_normal((2, 8, 2))
    chars = rng.integers(0, 5, size=(2, 6))
    cases = [
        ("ssm", {"m": 2, "n": 4}, cont),
        ("ssm", {"m": 2, "n": 4, "selector_hidden": 3}, cont),
        ("nonselective", {"m": 2, "n": 4}, cont),
        ("linear_attn", {"m": 2, "e": 4}, cont),
        ("discrete_ssm", {"vocab": 5, "e": 6, "n": 3}, chars),
        ("discrete_attn", {"vocab": 5, "e": 4, "heads": 2, "ffn": 6, "max_len": 8}, chars),
    ]
    worst = max(_fd_kind(kind, dims, x, rng) for kind, dims, x in cases)
    return "finite_difference_gradients", bool(worst < 1e-4), worst, 1e-4


def check_hmm(seed: int = 0):
    rng = make_rng(seed, 503)
    S, V, T = 2, 3, 5
    trans = rng.dirichlet(np.ones(S), size=S)
    emit = rng.dirichlet(np.ones(V), size=S)
    init = rng.dirichlet(np.ones(S))
    hp = HmmParams(trans, emit, init)
    chars = rng.integers(0, V, size=T)
    joint = np.zeros(S)
    total = 0.0
    for path in itertools.product(range(S), repeat=T):
        pr = init[path[0]] * emit[path[0], chars[0]]
        for t in range(1, T):
            pr *= trans[path[t - 1], path[t]] * emit[path[t], chars[t]]
        joint[path[-1]] += pr
        total += pr
    msg = ForwardMessage.initial(hp)
    for c in chars:
        msg = hmm_forward_step(hp, msg, int(c))
    err = max(np.max(np.abs(msg.probs - joint / total)), abs(msg.log_norm - math.log(total)))
    return "hmm_forward_vs_enumeration", bool(err < 1e-10), err, 1e-10


def check_ssm_zero_grads(seed: int = 0):
    p = init_params("ssm", {"m": 2, "n": 4}, make_rng(seed, 504))
    pred, cache = forward("ssm", p, np.ones((1, 5, 2)))
    g = backward("ssm", p, cache, np.zeros_like(pred))
    err = max(float(np.max(np.abs(v))) for v in g.values())
    return "zero_loss_gives_zero_gradient", err == 0.0, err, 0.0


def run_all(seed: int = 0):
    return [check_kalman(seed=seed), check_riccati(), check_gradients(seed), check_hmm(seed),
            check_ssm_zero_grads(seed)]


__all__ = ["run_all", "check_kalman", "check_riccati", "check_gradients", "check_hmm", "check_ssm_zero_grads"]
