"""Bayes-optimal reference predictors.

* :func:`bayes_oracle_lgssm` -- posterior predictive mean over the LG-SSM
  prior by self-normalized importance sampling with prior proposals.
* :func:`bayes_oracle_corr` -- exact forecast for the AR(1)-noise family with
  known correlation (augmented Kalman filter); :func:`bayes_oracle_corr_marginal`
  integrates the correlation out on a quadrature grid.
* :func:`hmm_forward_step` / :func:`hmm_predict_next` -- HMM forward algorithm.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .lgssm import LgssmParams, augment_ar1, batch_filter
from .numerics import make_rng
from .tasks import CorrNoiseConfig, HmmParams, LgssmPriorConfig, sample_lgssm_batch

log = logging.getLogger(__name__)


class OracleError(RuntimeError):
    pass


@dataclass(frozen=True)
class OracleConfig:
    n_samples: int = 1000
    resample_threshold: float = 0.5
    seed: int = 0
    retries: int = 1

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")


def _prior_draw(prior, rng, n):
    if isinstance(prior, LgssmPriorConfig):
        return sample_lgssm_batch(prior, rng, n)
    return prior(rng, n)


def ess(log_w: np.ndarray) -> np.ndarray:
    """Effective sample size ``(sum w)^2 / sum w^2`` along the last axis."""
    return np.exp(2 * logsumexp(log_w, axis=-1) - logsumexp(2 * log_w, axis=-1))


def _snis(prior, contexts, rng_for, S):
    """Importance-sampling predictions for ``contexts (N, k, m)``; returns (pred, ess)."""
    draws = [_prior_draw(prior, rng_for(i), S) for i in range(len(contexts))]
    A, C, Q, R = (np.stack([dr[j] for dr in draws]) for j in range(4))
    out = batch_filter(A, C, Q, R, contexts[:, None])
    lw = out["loglik"]
    lw = np.where(np.isfinite(lw), lw, -np.inf)
    if np.any(np.all(~np.isfinite(lw), axis=1)):
        bad = np.flatnonzero(np.all(~np.isfinite(lw), axis=1))
        raise OracleError(f"all importance weights vanished for contexts {bad.tolist()}")
    w = np.exp(lw - lw.max(axis=1, keepdims=True))
    w /= w.sum(axis=1, keepdims=True)
    pred = np.einsum("ns,nsm->nm", w, out["next"])
    return pred, ess(lw)


def bayes_oracle_lgssm(context, prior, cfg: OracleConfig = OracleConfig(), return_ess: bool = False):
    """Posterior predictive mean ``E[x_{k+1} | x_1..x_k]`` under the task prior.

    ``prior`` is a :class:`LgssmPriorConfig` or a callable
    ``prior(rng, n) -> (A, C, Q, R)`` stacks.  ``context`` may be ``(k, m)``
    or a batch ``(N, k, m)``; context ``i`` draws its parameters from
    substream ``(cfg.seed, i)`` so results do not depend on batching.

    When the effective sample size falls below
    ``resample_threshold * n_samples`` the context is redone with four times
    as many samples; remaining degeneracy is logged, not hidden.
    """
    x = np.asarray(context, dtype=float)
    single = x.ndim == 2
    if single:
        x = x[None]
    if x.ndim != 3 or x.shape[1] < 1:
        raise ValueError("context must be a nonempty (k, m) or (N, k, m) array")
    S = cfg.n_samples
    pred, e = _snis(prior, x, lambda i: make_rng(cfg.seed, i), S)
    for attempt in range(1, cfg.retries + 1):
        low = np.flatnonzero(e < cfg.resample_threshold * S)
        if low.size == 0:
            break
        S_big = S * 4 ** attempt
        log.warning("importance sampling ESS below %.0f%% for %d contexts; retrying with %d samples",
                    100 * cfg.resample_threshold, low.size, S_big)
        p2, e2 = _snis(prior, x[low], lambda j: make_rng(cfg.seed, int(low[j]), attempt), S_big)
        pred[low], e[low] = p2, e2
        S = S_big
    still = np.flatnonzero(e < cfg.resample_threshold * S)
    if still.size:
        log.warning("importance sampling stays degenerate for %d/%d contexts (median ESS %.1f)",
                    still.size, len(x), float(np.median(e[still])))
    if single:
        pred, e = pred[0], e[0]
    return (pred, e) if return_ess else pred


def bayes_oracle_corr(context, rho: float, a: float = 0.9, q: float = 1.0) -> np.ndarray:
    """Forecast of ``x_{k+1}`` from the augmented filter with known ``rho``.

    ``context`` is ``(k,)`` or a batch ``(N, k)``.
    """
    p = augment_ar1(a, q, rho)
    x = np.asarray(context, dtype=float)
    out = batch_filter(p.A, p.C, p.Q, p.R, x[..., None])
    return out["next"][..., 0]


def corr_filter(context, rho, a: float = 0.9, q: float = 1.0):
    """Batched augmented filter; returns ``(next forecast, log-likelihood)``."""
    p = augment_ar1(a, q, rho)
    out = batch_filter(p.A, p.C, p.Q, p.R, np.asarray(context, dtype=float)[..., None])
    return out["next"][..., 0], out["loglik"]


def bayes_oracle_corr_marginal(context, cfg: CorrNoiseConfig = CorrNoiseConfig(), n_grid: int = 33):
    """Forecast with ``rho`` integrated over its uniform prior.

    Gauss-Legendre nodes on ``[rho_lo, rho_hi]``; each node's augmented filter
    is weighted by its likelihood.
    """
    x = np.asarray(context, dtype=float)
    nodes, weights = np.polynomial.legendre.leggauss(n_grid)
    rhos = 0.5 * (cfg.rho_hi - cfg.rho_lo) * nodes + 0.5 * (cfg.rho_hi + cfg.rho_lo)
    preds, lls = [], []
    for r in rhos:
        f, ll = corr_filter(x, r, cfg.a, cfg.q)
        preds.append(f)
        lls.append(ll)
    preds, lls = np.stack(preds, -1), np.stack(lls, -1)
    lw = lls + np.log(weights)
    w = np.exp(lw - lw.max(axis=-1, keepdims=True))
    return (w * preds).sum(-1) / w.sum(-1)


def kalman_oracle(params: LgssmParams, context) -> np.ndarray:
    """Known-parameter forecast for ``context (k, m)`` or ``(N, k, m)``."""
    out = batch_filter(params.A, params.C, params.Q, params.R, np.asarray(context, dtype=float))
    return out["next"]


# --- hidden Markov models -------------------------------------------------


@dataclass(frozen=True)
class ForwardMessage:
    """Filtered posterior over hidden states after ``t`` characters."""

    probs: np.ndarray
    log_norm: float = 0.0
    t: int = 0

    @classmethod
    def initial(cls, params: HmmParams) -> "ForwardMessage":
        return cls(params.init.copy(), 0.0, 0)


def _state_predictive(params: HmmParams, msg: ForwardMessage) -> np.ndarray:
    # before the first character the state law is the initial distribution
    return params.init if msg.t == 0 else params.trans.T @ msg.probs


def hmm_forward_step(params: HmmParams, msg: ForwardMessage, char: int) -> ForwardMessage:
    if not 0 <= char < params.vocab:
        raise IndexError(f"character {char} outside vocab {params.vocab}")
    unnorm = params.emit[:, char] * _state_predictive(params, msg)
    z = unnorm.sum()
    if not z > 0:
        raise OracleError(f"character {char} has zero probability under the model at step {msg.t + 1}")
    return ForwardMessage(unnorm / z, msg.log_norm + float(np.log(z)), msg.t + 1)


def hmm_predict_next(params: HmmParams, msg: ForwardMessage):
    """Returns ``(distribution over the next character, argmax)``; ties go to the lowest index."""
    dist = params.emit.T @ _state_predictive(params, msg)
    return dist, int(np.argmax(dist))


def hmm_filter_batch(trans, emit, init, chars):
    """Forward algorithm for stacked HMMs and sequences ``chars (N, T)``.

    Returns ``(next_char_dists (N, T, V), log_lik (N,))`` where
    ``next_char_dists[:, t]`` predicts ``chars[:, t + 1]`` from ``chars[:, :t+1]``.
    """
    trans, emit, init = (np.asarray(v, dtype=float) for v in (trans, emit, init))
    chars = np.asarray(chars)
    N, T = chars.shape
    rows = np.arange(N)
    emit_T = np.swapaxes(emit, -1, -2)
    dists = np.empty((N, T, emit.shape[-1]))
    loglik = np.zeros(N)
    pred_state = init
    for t in range(T):
        unnorm = emit[rows, :, chars[:, t]] * pred_state
        z = unnorm.sum(-1)
        if np.any(z <= 0):
            raise OracleError(f"zero-probability observation at step {t + 1}")
        loglik += np.log(z)
        post = unnorm / z[:, None]
        pred_state = np.einsum("nij,ni->nj", trans, post)
        dists[:, t] = np.einsum("nvs,ns->nv", emit_T, pred_state)
    return dists, loglik
