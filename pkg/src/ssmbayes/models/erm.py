from __future__ import annotations

import numpy as np


def erm_closed_form(context, lam: float = 0.0) -> np.ndarray:
    """Minimizer of ``sum_i ||y - x_i||^2 + lam ||y||^2``, i.e. ``sum(x) / (k + lam)``.

    ``context`` is ``(k, m)``, ``(k,)`` for scalars, or batched ``(..., k, m)``
    when given as a 3-d array.
    """
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    x = np.asarray(context, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    k = x.shape[-2]
    if k == 0 and lam == 0:
        raise ValueError("empty context with lambda = 0 has no unique minimizer")
    return x.sum(axis=-2) / (k + lam)
