"""Task distributions for meta-training and evaluation.

Three families are provided: a generic LG-SSM prior, the scalar signal under
AR(1) observation noise, and random hidden Markov models over characters.
Samplers are pure functions of their generator state.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .lgssm import LgssmParams, augment_ar1, is_observable
from .numerics import sample_dirichlet


@dataclass(frozen=True)
class LgssmPriorConfig:
    d: int = 4
    m: int = 2
    eig_lo: float = 0.7
    eig_hi: float = 0.95
    q_log_lo: float = math.log(0.1)
    q_log_hi: float = math.log(1.0)
    r_log_lo: float = math.log(0.05)
    r_log_hi: float = math.log(0.5)
    # "symmetric": A = U diag(lam) U^T;  "scaled_orthogonal": A = s * U
    a_mode: str = "symmetric"

    def __post_init__(self):
        if not 0 < self.eig_lo <= self.eig_hi < 1:
            raise ValueError("need 0 < eig_lo <= eig_hi < 1")
        if self.q_log_lo > self.q_log_hi or self.r_log_lo > self.r_log_hi:
            raise ValueError("log-variance bounds must be ordered")
        if self.a_mode not in ("symmetric", "scaled_orthogonal"):
            raise ValueError(f"unknown a_mode {self.a_mode!r}")


@dataclass(frozen=True)
class CorrNoiseConfig:
    a: float = 0.9
    q: float = 1.0
    rho_lo: float = 0.9
    rho_hi: float = 0.99
    eval_rho: float = 0.95

    def __post_init__(self):
        if not 0 < self.rho_lo <= self.rho_hi < 1:
            raise ValueError("rho range must lie inside (0, 1)")


@dataclass(frozen=True)
class HmmParams:
    trans: np.ndarray
    emit: np.ndarray
    init: np.ndarray

    def __post_init__(self):
        for name in ("trans", "emit", "init"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if np.any(arr < 0) or not np.allclose(arr.sum(-1), 1.0, atol=1e-12, rtol=0):
                raise ValueError(f"{name} rows must be probability vectors")
            object.__setattr__(self, name, arr)
        n = self.init.shape[0]
        if self.trans.shape != (n, n) or self.emit.shape[0] != n:
            raise ValueError("HMM shapes are inconsistent")

    @property
    def n_states(self) -> int:
        return self.init.shape[0]

    @property
    def vocab(self) -> int:
        return self.emit.shape[1]


def _haar(rng, n, dim):
    g = rng.standard_normal((n, dim, dim))
    q, r = np.linalg.qr(g)
    signs = np.sign(np.diagonal(r, axis1=-2, axis2=-1))
    signs[signs == 0] = 1.0
    return q * signs[:, None, :]


def sample_lgssm_batch(cfg: LgssmPriorConfig, rng: np.random.Generator, n: int):
    """Draw ``n`` tasks from the prior as stacked arrays ``(A, C, Q, R)``."""
    d, m = cfg.d, cfg.m
    U = _haar(rng, n, d)
    lam = rng.uniform(cfg.eig_lo, cfg.eig_hi, size=(n, d))
    if cfg.a_mode == "symmetric":
        A = (U * lam[:, None, :]) @ np.swapaxes(U, -1, -2)
    else:
        A = U * lam[:, :1, None]
    C = rng.standard_normal((n, m, d))
    V = _haar(rng, n, d)
    sq = np.exp(rng.uniform(cfg.q_log_lo, cfg.q_log_hi, size=(n, d)))
    Q = (V * sq[:, None, :]) @ np.swapaxes(V, -1, -2)
    W = _haar(rng, n, m)
    sr = np.exp(rng.uniform(cfg.r_log_lo, cfg.r_log_hi, size=(n, m)))
    R = (W * sr[:, None, :]) @ np.swapaxes(W, -1, -2)
    Q = 0.5 * (Q + np.swapaxes(Q, -1, -2))
    R = 0.5 * (R + np.swapaxes(R, -1, -2))
    return A, C, Q, R


def sample_lgssm_task(cfg: LgssmPriorConfig, rng: np.random.Generator) -> LgssmParams:
    A, C, Q, R = sample_lgssm_batch(cfg, rng, 1)
    params = LgssmParams(A[0], C[0], Q[0], R[0])
    if not is_observable(params):
        raise RuntimeError(f"sampled an unobservable task: C={params.C.tolist()}, A={params.A.tolist()}")
    return params


def sample_corr_noise_task(cfg: CorrNoiseConfig, rng: np.random.Generator, rho_override=None):
    """Returns ``(augmented params, rho)``."""
    if rho_override is None:
        rho = float(rng.uniform(cfg.rho_lo, cfg.rho_hi))
    else:
        rho = float(rho_override)
        if not 0 <= rho < 1:
            raise ValueError(f"rho override must lie in [0, 1), got {rho}")
    return augment_ar1(cfg.a, cfg.q, rho), rho


def simulate_corr_noise(a: float, q: float, rho, T: int, rng: np.random.Generator, n: int = 1):
    """Simulate ``n`` scalar sequences ``x_t = z_t + v_t`` of length ``T``.

    ``rho`` may be a scalar or a length-``n`` array.  Both processes start
    from their stationary distributions.  Returns ``(x, z, v)``, each
    ``(n, T)``.
    """
    rho = np.broadcast_to(np.asarray(rho, dtype=float), (n,))
    z = rng.standard_normal(n) * math.sqrt(q / (1 - a * a))
    v = rng.standard_normal(n)
    w = rng.standard_normal((T, n)) * math.sqrt(q)
    eps = rng.standard_normal((T, n)) * np.sqrt(1 - rho * rho)
    zs = np.empty((n, T))
    vs = np.empty((n, T))
    for t in range(T):
        z = a * z + w[t]
        v = rho * v + eps[t]
        zs[:, t] = z
        vs[:, t] = v
    return zs + vs, zs, vs


def sample_hmm_batch(n_states: int, vocab: int, rng: np.random.Generator, n: int,
                     alpha_trans: float = 0.1, alpha_emit: float = 0.05):
    """Stacked ``(trans, emit, init)`` for ``n`` random HMMs."""
    if n_states < 1 or vocab < 1:
        raise ValueError("dimensions must be positive")
    trans = sample_dirichlet(alpha_trans, n_states, rng, size=(n, n_states))
    emit = sample_dirichlet(alpha_emit, vocab, rng, size=(n, n_states))
    init = np.full((n, n_states), 1.0 / n_states)
    return trans, emit, init


def sample_hmm_task(n_states: int = 50, vocab: int = 100, alpha_trans: float = 0.1,
                    alpha_emit: float = 0.05, rng: np.random.Generator = None) -> HmmParams:
    trans, emit, init = sample_hmm_batch(n_states, vocab, rng, 1, alpha_trans, alpha_emit)
    return HmmParams(trans[0], emit[0], init[0])


def _categorical(cdf: np.ndarray, u: np.ndarray) -> np.ndarray:
    # cdf (n, k) rows ending at 1; guard against round-off in the last entry
    idx = (cdf < u[:, None]).sum(axis=1)
    return np.minimum(idx, cdf.shape[1] - 1)


def simulate_hmm_batch(trans, emit, init, T: int, rng: np.random.Generator):
    """Ancestral sampling for a stack of HMMs; returns ``(states, chars)`` of shape (n, T)."""
    if T < 1:
        raise ValueError("T must be >= 1")
    trans, emit, init = (np.asarray(v, dtype=float) for v in (trans, emit, init))
    n = init.shape[0]
    rows = np.arange(n)
    tcdf = np.cumsum(trans, axis=-1)
    ecdf = np.cumsum(emit, axis=-1)
    u_state = rng.random((T, n))
    u_char = rng.random((T, n))
    states = np.empty((n, T), dtype=np.int64)
    chars = np.empty((n, T), dtype=np.int64)
    s = _categorical(np.cumsum(init, axis=-1), u_state[0])
    for t in range(T):
        if t > 0:
            s = _categorical(tcdf[rows, s], u_state[t])
        states[:, t] = s
        chars[:, t] = _categorical(ecdf[rows, s], u_char[t])
    return states, chars


def simulate_hmm(params: HmmParams, T: int, rng: np.random.Generator):
    states, chars = simulate_hmm_batch(params.trans[None], params.emit[None], params.init[None], T, rng)
    return states[0], chars[0]


def lgssm_sampler(cfg: LgssmPriorConfig):
    """Training-batch sampler: ``f(rng, n_tasks, T) -> x (n_tasks, T, m)``."""
    from .lgssm import simulate_batch

    def sample(rng, n, T):
        A, C, Q, R = sample_lgssm_batch(cfg, rng, n)
        return simulate_batch(A, C, Q, R, T, rng)[1]

    return sample


def corr_noise_sampler(cfg: CorrNoiseConfig):
    def sample(rng, n, T):
        rho = rng.uniform(cfg.rho_lo, cfg.rho_hi, size=n)
        return simulate_corr_noise(cfg.a, cfg.q, rho, T, rng, n)[0][..., None]

    return sample


def hmm_sampler(n_states: int, vocab: int, alpha_trans: float = 0.1, alpha_emit: float = 0.05):
    def sample(rng, n, T):
        trans, emit, init = sample_hmm_batch(n_states, vocab, rng, n, alpha_trans, alpha_emit)
        return simulate_hmm_batch(trans, emit, init, T, rng)[1]

    return sample
