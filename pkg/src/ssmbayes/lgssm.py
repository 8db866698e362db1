"""Linear Gaussian state-space models: simulation and exact Kalman filtering.

The model is::

    z_t = A z_{t-1} + w_t,   w_t ~ N(0, Q)
    x_t = C z_t + v_t,       v_t ~ N(0, R)

with ``z_0 ~ N(0, P0)``.  Unless given explicitly, ``P0`` is the stationary
covariance of the latent process.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .numerics import cholesky, gaussian_logpdf, spectral_radius, symmetrize

log = logging.getLogger(__name__)

COND_LIMIT = 1e12
R_JITTER = 1e-10


class FilterError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class LgssmParams:
    A: np.ndarray
    C: np.ndarray
    Q: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        for name in ("A", "C", "Q", "R"):
            arr = np.atleast_2d(np.asarray(getattr(self, name), dtype=float))
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} has non-finite entries")
            object.__setattr__(self, name, arr)
        d, m = self.A.shape[0], self.C.shape[0]
        if self.A.shape != (d, d) or self.C.shape != (m, d):
            raise ValueError(f"inconsistent shapes A{self.A.shape} C{self.C.shape}")
        if self.Q.shape != (d, d) or self.R.shape != (m, m):
            raise ValueError(f"inconsistent shapes Q{self.Q.shape} R{self.R.shape}")

    @property
    def d(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.C.shape[0]

    def is_stable(self) -> bool:
        return spectral_radius(self.A) < 1.0


@dataclass(frozen=True)
class FilterState:
    """Posterior mean and covariance of ``z_t`` given ``x_1..x_t``."""

    z_hat: np.ndarray
    P: np.ndarray
    t: int = 0

    @classmethod
    def prior(cls, params: LgssmParams, P0=None) -> "FilterState":
        P0 = stationary_cov(params.A, params.Q) if P0 is None else np.asarray(P0, dtype=float)
        return cls(np.zeros(params.d), P0, 0)


@dataclass(frozen=True)
class Trajectory:
    z_seq: np.ndarray
    x_seq: np.ndarray
    params_id: int | None = None


@dataclass(frozen=True)
class GainSchedule:
    gains: np.ndarray  # (T, d, m)
    steady: np.ndarray
    converged: bool = True
    pred_covs: np.ndarray = field(default=None, repr=False)  # P^-_t, (T, d, d)

    def selective_targets(self, params: LgssmParams):
        """Per-step ``(A - K_t C, K_t)`` pairs realizing the innovations form."""
        abar = params.A[None] - self.gains @ params.C[None]
        return abar, self.gains


def stationary_cov(A, Q, max_iter: int = 1000, tol: float = 1e-12) -> np.ndarray:
    """Solve ``P = A P A^T + Q`` for stable ``A``.

    Uses the doubling form of the fixed-point iteration so that slow modes
    (spectral radius near 1) converge in a few dozen sweeps.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    P = np.atleast_2d(np.asarray(Q, dtype=float)).copy()
    Ak = A.copy()
    for _ in range(max_iter):
        inc = Ak @ P @ Ak.T
        P = P + inc
        Ak = Ak @ Ak
        if np.max(np.abs(inc)) < tol * max(1.0, np.max(np.abs(P))):
            return symmetrize(P)
    raise FilterError("stationary covariance did not converge; is A stable?")


def is_observable(params: LgssmParams, rel_tol: float = 1e-8) -> bool:
    """Rank test on the observability Gramian ``sum_i (C A^i)^T (C A^i)``."""
    d = params.d
    blocks = []
    M = params.C
    for _ in range(d):
        blocks.append(M)
        M = M @ params.A
    obs = np.vstack(blocks)
    gram = obs.T @ obs
    sv = np.linalg.svd(gram, compute_uv=False)
    return bool(sv.size and sv[-1] > rel_tol * sv[0])


def simulate(params: LgssmParams, T: int, rng: np.random.Generator, z0_cov=None) -> Trajectory:
    if T < 1:
        raise ValueError("T must be >= 1")
    d, m = params.d, params.m
    z0_cov = stationary_cov(params.A, params.Q) if z0_cov is None else np.asarray(z0_cov, dtype=float)
    if z0_cov.shape != (d, d):
        raise ValueError(f"z0_cov must be {d}x{d}")
    Lq, Lr, L0 = cholesky(params.Q), cholesky(params.R), cholesky(z0_cov)
    # draw order is fixed: z0, then all process noise, then all observation noise
    z = L0 @ rng.standard_normal(d)
    w = rng.standard_normal((T, d)) @ Lq.T
    v = rng.standard_normal((T, m)) @ Lr.T
    zs = np.empty((T, d))
    for t in range(T):
        z = params.A @ z + w[t]
        zs[t] = z
    xs = zs @ params.C.T + v
    return Trajectory(zs, xs)


def _check_cond(S: np.ndarray) -> None:
    c = np.linalg.cond(S)
    if not np.isfinite(c) or c > COND_LIMIT:
        raise FilterError(f"innovation covariance is singular (cond={c:.3e})")


def kalman_step(params: LgssmParams, state: FilterState, x):
    """One predict/update cycle.

    Returns ``(new_state, predicted_obs, innovation_cov)`` where
    ``predicted_obs = C A z_hat`` is the forecast made before seeing ``x``.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    A, C = params.A, params.C
    if state.z_hat.shape != (params.d,) or x.shape != (params.m,):
        raise ValueError("state or observation dimension does not match params")
    z_pred = A @ state.z_hat
    P_pred = symmetrize(A @ state.P @ A.T + params.Q)
    x_pred = C @ z_pred
    S = symmetrize(C @ P_pred @ C.T + params.R)
    _check_cond(S)
    K = np.linalg.solve(S, C @ P_pred).T
    z_new = z_pred + K @ (x - x_pred)
    P_new = symmetrize((np.eye(params.d) - K @ C) @ P_pred)
    return FilterState(z_new, P_new, state.t + 1), x_pred, S


def predict_next_obs(params: LgssmParams, state: FilterState) -> np.ndarray:
    return params.C @ (params.A @ state.z_hat)


def kalman_filter(params: LgssmParams, x_seq, P0=None):
    """Run the filter over ``x_seq``.

    Returns ``(final_state, preds, innov_covs)`` with ``preds[t]`` the
    forecast of ``x_seq[t]`` from the observations before it.
    """
    x_seq = np.asarray(x_seq, dtype=float).reshape(len(x_seq), -1)
    state = FilterState.prior(params, P0)
    preds = np.empty_like(x_seq)
    covs = np.empty((len(x_seq), params.m, params.m))
    for t, x in enumerate(x_seq):
        state, preds[t], covs[t] = kalman_step(params, state, x)
    return state, preds, covs


def log_likelihood(params: LgssmParams, x_seq, P0=None) -> float:
    """Exact log p(x_1..x_T) via the prediction-error decomposition."""
    x_seq = np.asarray(x_seq, dtype=float).reshape(len(x_seq), -1)
    if len(x_seq) == 0:
        raise ValueError("empty sequence")
    state = FilterState.prior(params, P0)
    total = 0.0
    for x in x_seq:
        state, x_pred, S = kalman_step(params, state, x)
        total += gaussian_logpdf(x - x_pred, S)
    return total


def gain_schedule(params: LgssmParams, P0, T: int, tol: float = 1e-12) -> GainSchedule:
    """Kalman gains ``K_1..K_T`` from the Riccati recursion started at ``P0``."""
    if not is_observable(params):
        raise ValueError("system is not observable; the gain schedule is not identifiable")
    A, C, Q, R = params.A, params.C, params.Q, params.R
    P = np.asarray(P0, dtype=float)
    gains = np.empty((T, params.d, params.m))
    pred_covs = np.empty((T, params.d, params.d))
    steady, converged = None, False
    for t in range(T):
        P_pred = symmetrize(A @ P @ A.T + Q)
        S = symmetrize(C @ P_pred @ C.T + R)
        K = np.linalg.solve(S, C @ P_pred).T
        gains[t], pred_covs[t] = K, P_pred
        P = symmetrize((np.eye(params.d) - K @ C) @ P_pred)
        if steady is None and t > 0 and np.max(np.abs(K - gains[t - 1])) < tol:
            steady, converged = K, True
    if steady is None:
        log.warning("gain schedule did not converge within %d steps (tol=%g)", T, tol)
        steady = gains[-1]
    return GainSchedule(gains, steady, converged, pred_covs)


def steady_state(params: LgssmParams, max_iter: int = 100_000, tol: float = 1e-14):
    """Fixed point of the Riccati recursion.

    Returns ``(K_inf, P_pred_inf, S_inf)``: steady gain, one-step predicted
    state covariance and one-step observation prediction covariance.
    """
    A, C, Q, R = params.A, params.C, params.Q, params.R
    P_pred = stationary_cov(A, Q)
    for _ in range(max_iter):
        S = symmetrize(C @ P_pred @ C.T + R)
        K = np.linalg.solve(S, C @ P_pred).T
        P = symmetrize((np.eye(params.d) - K @ C) @ P_pred)
        nxt = symmetrize(A @ P @ A.T + Q)
        if np.max(np.abs(nxt - P_pred)) < tol * max(1.0, np.max(np.abs(P_pred))):
            P_pred = nxt
            break
        P_pred = nxt
    else:
        raise FilterError("Riccati iteration did not reach a fixed point")
    S = symmetrize(C @ P_pred @ C.T + R)
    K = np.linalg.solve(S, C @ P_pred).T
    return K, P_pred, S


def augment_ar1(a: float, q: float, rho: float) -> LgssmParams:
    """Two-state system for a scalar AR(1) signal observed under AR(1) noise.

    The state is ``[z_t, v_t]`` and the observation ``x_t = z_t + v_t``
    carries no extra noise; ``R`` holds only a tiny jitter.
    """
    if not abs(rho) < 1:
        raise ValueError(f"|rho| must be < 1, got {rho}")
    if not abs(a) < 1:
        raise ValueError(f"|a| must be < 1, got {a}")
    if not q > 0:
        raise ValueError("q must be positive")
    return LgssmParams(
        A=np.array([[a, 0.0], [0.0, rho]]),
        C=np.array([[1.0, 1.0]]),
        Q=np.diag([q, 1.0 - rho * rho]),
        R=np.array([[R_JITTER]]),
    )


def batch_filter(A, C, Q, R, x, P0=None):
    """Kalman filter vectorized over leading batch axes.

    ``A (..., d, d)``, ``C (..., m, d)``, ``Q``, ``R`` and ``x (..., T, m)``
    broadcast against each other on the leading axes.  Returns a dict with
    ``preds (..., T, m)`` (forecast of each ``x_t``), ``next (..., m)``
    (forecast of ``x_{T+1}``), ``loglik (...)``, the running log-likelihood
    ``cumloglik (..., T)`` and the final ``z``/``P``.
    """
    A, C, Q, R, x = (np.asarray(v, dtype=float) for v in (A, C, Q, R, x))
    d, m = A.shape[-1], C.shape[-2]
    T = x.shape[-2]
    if P0 is None:
        P0 = _batch_stationary(A, Q)
    P = np.asarray(P0, dtype=float)
    AT = np.swapaxes(A, -1, -2)
    CT = np.swapaxes(C, -1, -2)
    batch = np.broadcast_shapes(A.shape[:-2], C.shape[:-2], Q.shape[:-2], R.shape[:-2],
                                x.shape[:-2], P.shape[:-2])
    z = np.zeros(batch + (d,))
    P = np.broadcast_to(P, batch + (d, d)).copy()
    preds = np.empty(batch + (T, m))
    loglik = np.zeros(batch)
    cum = np.empty(batch + (T,))
    eye = np.eye(d)
    for t in range(T):
        z = np.einsum("...ij,...j->...i", A, z)
        P = symmetrize(A @ P @ AT + Q)
        xp = np.einsum("...ij,...j->...i", C, z)
        S = symmetrize(C @ P @ CT + R)
        PCt = P @ CT
        e = x[..., t, :] - xp
        Sinv_e = np.linalg.solve(S, e[..., None])[..., 0]
        K = np.swapaxes(np.linalg.solve(S, np.swapaxes(PCt, -1, -2)), -1, -2)
        _, logdet = np.linalg.slogdet(S)
        loglik = loglik - 0.5 * (np.einsum("...i,...i->...", e, Sinv_e) + logdet + m * np.log(2 * np.pi))
        z = z + np.einsum("...ij,...j->...i", K, e)
        P = symmetrize((eye - K @ C) @ P)
        preds[..., t, :] = xp
        cum[..., t] = loglik
    nxt = np.einsum("...ij,...j->...i", C, np.einsum("...ij,...j->...i", A, z))
    return {"preds": preds, "next": nxt, "loglik": loglik, "cumloglik": cum, "z": z, "P": P}


def _batch_stationary(A, Q, max_iter: int = 200, tol: float = 1e-13):
    P = np.array(Q, dtype=float, copy=True)
    Ak = np.array(A, dtype=float, copy=True)
    P = np.broadcast_to(P, np.broadcast_shapes(P.shape, Ak.shape)).copy()
    for _ in range(max_iter):
        inc = Ak @ P @ np.swapaxes(Ak, -1, -2)
        P = P + inc
        Ak = Ak @ Ak
        if np.max(np.abs(inc)) < tol * max(1.0, np.max(np.abs(P))):
            return symmetrize(P)
    raise FilterError("stationary covariance did not converge in batch")


def simulate_batch(A, C, Q, R, T: int, rng: np.random.Generator):
    """Simulate one trajectory per stacked system, each from its stationary law.

    Returns ``(z, x)`` with shapes ``(n, T, d)`` and ``(n, T, m)``.  ``Q``,
    ``R`` and the stationary covariances must be positive definite.
    """
    A, C, Q, R = (np.asarray(v, dtype=float) for v in (A, C, Q, R))
    n, d, m = A.shape[0], A.shape[-1], C.shape[-2]
    L0 = np.linalg.cholesky(_batch_stationary(A, Q))
    Lq = np.linalg.cholesky(Q)
    Lr = np.linalg.cholesky(R)
    z = np.einsum("nij,nj->ni", L0, rng.standard_normal((n, d)))
    w = np.einsum("nij,tnj->tni", Lq, rng.standard_normal((T, n, d)))
    v = np.einsum("nij,tnj->tni", Lr, rng.standard_normal((T, n, m)))
    zs = np.empty((n, T, d))
    for t in range(T):
        z = np.einsum("nij,nj->ni", A, z) + w[t]
        zs[:, t] = z
    xs = np.einsum("nij,ntj->nti", C, zs) + np.swapaxes(v, 0, 1)
    return zs, xs


def prediction_covs(params: LgssmParams, T: int, P0=None) -> np.ndarray:
    """Covariances ``S_t`` of the forecast errors ``x_t - E[x_t | x_<t]``, t = 1..T.

    With the filter prior matching the data-generating law these are the
    exact one-step prediction error covariances.
    """
    A, C, Q, R = params.A, params.C, params.Q, params.R
    P = stationary_cov(A, Q) if P0 is None else np.asarray(P0, dtype=float)
    out = np.empty((T, params.m, params.m))
    for t in range(T):
        P_pred = symmetrize(A @ P @ A.T + Q)
        S = symmetrize(C @ P_pred @ C.T + R)
        K = np.linalg.solve(S, C @ P_pred).T
        P = symmetrize((np.eye(params.d) - K @ C) @ P_pred)
        out[t] = S
    return out
