"""Small dense linear algebra and sampling helpers.

Everything here works on plain ``numpy`` arrays.  Random draws go through
``numpy.random.Generator`` objects; :func:`make_rng` derives independent
substreams from ``(seed, stream ids...)`` so parallel workers and per-task
sampling stay reproducible.
"""
from __future__ import annotations

import numpy as np

SYM_TOL = 1e-10
PIVOT_TOL = 1e-10


class NotPSDError(np.linalg.LinAlgError):
    """Raised when a matrix that must be positive semidefinite is not."""

    def __init__(self, index: int, pivot: float):
        super().__init__(f"matrix is not PSD: pivot {index} is {pivot:.3e}")
        self.index = index
        self.pivot = pivot


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Return a generator for substream ``stream`` of ``seed``.

    Identical arguments give identical streams; different stream ids give
    statistically independent streams.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(s) for s in stream))
    return np.random.Generator(np.random.PCG64(ss))


def symmetrize(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + np.swapaxes(m, -1, -2))


def cholesky(m) -> np.ndarray:
    """Lower-triangular ``L`` with ``L @ L.T == m`` for symmetric PSD ``m``.

    Semidefinite input is allowed: a pivot within ``PIVOT_TOL`` of zero
    yields a zero column instead of a failure.
    """
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"cholesky needs a square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("cholesky input has non-finite entries")
    scale = max(1.0, float(np.max(np.abs(m)))) if m.size else 1.0
    if np.max(np.abs(m - m.T), initial=0.0) > SYM_TOL * scale:
        raise ValueError("cholesky input is not symmetric")
    m = symmetrize(m)
    n = m.shape[0]
    L = np.zeros_like(m)
    for j in range(n):
        pivot = m[j, j] - L[j, :j] @ L[j, :j]
        if pivot < -PIVOT_TOL * scale:
            raise NotPSDError(j, pivot)
        if pivot <= PIVOT_TOL * scale:
            continue
        L[j, j] = np.sqrt(pivot)
        L[j + 1:, j] = (m[j + 1:, j] - L[j + 1:, :j] @ L[j, :j]) / L[j, j]
    return L


def sample_gaussian_vec(mean, cov, rng: np.random.Generator) -> np.ndarray:
    mean = np.asarray(mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    if cov.shape != (mean.size, mean.size):
        raise ValueError(f"mean has dim {mean.size} but cov has shape {cov.shape}")
    eps = rng.standard_normal(mean.size)
    return mean + cholesky(cov) @ eps


def sample_orthogonal(dim: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed orthogonal matrix via QR of a Gaussian matrix."""
    if dim < 1:
        raise ValueError("dim must be >= 1")
    g = rng.standard_normal((dim, dim))
    q, r = np.linalg.qr(g)
    # sign fix so that R has a positive diagonal, otherwise Q is not Haar
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return q * signs


def sample_dirichlet(alpha: float, dim: int, rng: np.random.Generator, size=None) -> np.ndarray:
    """Symmetric Dirichlet draw(s) from normalized Gamma variates.

    Gammas are drawn in log space with the shape-boost identity
    ``G(a) = G(a + 1) * U**(1/a)``, which stays finite for very small
    ``alpha`` where direct Gamma draws underflow to zero.
    """
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    if dim < 1:
        raise ValueError("dim must be >= 1")
    shape = (dim,) if size is None else (*np.atleast_1d(size), dim)
    if alpha < 1.0:
        log_g = np.log(rng.gamma(alpha + 1.0, size=shape)) + np.log(rng.random(shape)) / alpha
    else:
        log_g = np.log(rng.gamma(alpha, size=shape))
    log_g -= log_g.max(axis=-1, keepdims=True)
    w = np.exp(log_g)
    w /= w.sum(axis=-1, keepdims=True)
    return w


def spectral_radius(m) -> float:
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError("spectral_radius needs a square matrix")
    return float(np.max(np.abs(np.linalg.eigvals(m))))


def gaussian_logpdf(x, cov) -> float:
    """Log density of N(0, cov) at ``x``; ``cov`` must be positive definite."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    L = np.linalg.cholesky(symmetrize(np.atleast_2d(cov)))
    y = np.linalg.solve(L, x)
    return float(-0.5 * (y @ y) - np.log(np.diag(L)).sum() - 0.5 * x.size * np.log(2 * np.pi))
