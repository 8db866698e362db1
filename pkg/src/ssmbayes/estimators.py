"""scikit-learn style wrappers around the predictors.

All estimators map a batch of contexts ``X (n, k, m)`` (or one ``(k, m)``
context) to forecasts of the next observation, ``(n, m)`` (or ``(m,)``).
Trainable ones are meta-trained either on a fixed corpus of sequences or
on a task sampler ``f(rng, n_tasks, T) -> (n_tasks, T, m)``.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .lgssm import LgssmParams, batch_filter
from .models import erm_closed_form, forward, full_dims
from .numerics import make_rng
from .oracle import OracleConfig, bayes_oracle_lgssm
from .tasks import LgssmPriorConfig
from .training import TrainConfig, meta_train


def check_sequences(X, n_features: int | None = None, min_length: int = 1):
    """Validate contexts; returns ``(X (n, k, m) float array, was_single)``."""
    arr = np.asarray(X, dtype=float)
    single = arr.ndim == 2
    if single:
        arr = arr[None]
    if arr.ndim != 3:
        raise ValueError(f"expected a (k, m) or (n, k, m) array, got shape {np.shape(X)}")
    if arr.shape[0] < 1 or arr.shape[1] < min_length or arr.shape[2] < 1:
        raise ValueError(f"need at least one sequence of length >= {min_length}, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("contexts contain NaN or Inf")
    if n_features is not None and arr.shape[2] != n_features:
        raise ValueError(f"expected {n_features} features per step, got {arr.shape[2]}")
    return arr, single


def corpus_sampler(corpus):
    """Sampler drawing random windows from a fixed corpus ``(N, L, m)``."""
    data, _ = check_sequences(corpus, min_length=2)

    def sample(rng, n, T):
        if T > data.shape[1]:
            raise ValueError(f"corpus sequences are shorter ({data.shape[1]}) than seq_len {T}")
        rows = rng.integers(0, data.shape[0], size=n)
        starts = rng.integers(0, data.shape[1] - T + 1, size=n)
        return np.stack([data[r, s:s + T] for r, s in zip(rows, starts)])

    return sample


class _ForecastMixin:
    def _finish(self, pred, single):
        return pred[0] if single else pred

    def score(self, X, y):
        """Negative mean squared forecast error (higher is better)."""
        pred = np.atleast_2d(self.predict(X))
        y = np.asarray(y, dtype=float).reshape(pred.shape)
        return -float(np.mean(np.sum((pred - y) ** 2, axis=-1)))


class _TrainedPredictor(_ForecastMixin, BaseEstimator):
    _kind = ""

    def _dims(self, m):
        raise NotImplementedError

    def fit(self, X=None, y=None, sampler=None):
        """Meta-train on a corpus ``X (N, L, m)`` or on fresh tasks from ``sampler``."""
        if (X is None) == (sampler is None):
            raise ValueError("pass exactly one of a corpus X or a sampler")
        if X is not None:
            sampler = corpus_sampler(X)
            m = np.asarray(X).shape[-1]
        else:
            m = np.asarray(sampler(make_rng(self.random_state, 99), 1, 2)).shape[-1]
        cfg = TrainConfig(batch_tasks=self.batch_tasks, seq_len=self.seq_len, lr=self.lr,
                          steps=self.steps, seed=self.random_state, weight_decay=self.weight_decay,
                          clip_norm=self.clip_norm)
        dims = full_dims(self._kind, self._dims(m))
        self.params_, self.train_log_ = meta_train(self._kind, sampler, cfg, dims)
        self.dims_ = dims
        self.n_features_in_ = m
        return self

    def predict(self, X):
        check_is_fitted(self, "params_")
        x, single = check_sequences(X, self.n_features_in_)
        return self._finish(forward(self._kind, self.params_, x)[0][:, -1], single)


class SelectiveSSMPredictor(_TrainedPredictor):
    _kind = "ssm"

    def __init__(self, n_hidden=16, selector_hidden=0, steps=2000, batch_tasks=128, seq_len=64,
                 lr=3e-3, weight_decay=0.01, clip_norm=1.0, random_state=0):
        self.n_hidden = n_hidden
        self.selector_hidden = selector_hidden
        self.steps = steps
        self.batch_tasks = batch_tasks
        self.seq_len = seq_len
        self.lr = lr
        self.weight_decay = weight_decay
        self.clip_norm = clip_norm
        self.random_state = random_state

    def _dims(self, m):
        return {"m": m, "n": self.n_hidden, "selector_hidden": self.selector_hidden}


class NonSelectiveSSMPredictor(_TrainedPredictor):
    _kind = "nonselective"

    def __init__(self, n_hidden=16, steps=2000, batch_tasks=128, seq_len=64, lr=3e-3,
                 weight_decay=0.01, clip_norm=1.0, random_state=0):
        self.n_hidden = n_hidden
        self.steps = steps
        self.batch_tasks = batch_tasks
        self.seq_len = seq_len
        self.lr = lr
        self.weight_decay = weight_decay
        self.clip_norm = clip_norm
        self.random_state = random_state

    def _dims(self, m):
        return {"m": m, "n": self.n_hidden}


class LinearAttentionPredictor(_TrainedPredictor):
    _kind = "linear_attn"

    def __init__(self, embed=16, steps=2000, batch_tasks=128, seq_len=64, lr=3e-3,
                 weight_decay=0.01, clip_norm=1.0, random_state=0):
        self.embed = embed
        self.steps = steps
        self.batch_tasks = batch_tasks
        self.seq_len = seq_len
        self.lr = lr
        self.weight_decay = weight_decay
        self.clip_norm = clip_norm
        self.random_state = random_state

    def _dims(self, m):
        return {"m": m, "e": self.embed}


class PooledERMPredictor(_ForecastMixin, BaseEstimator):
    """Ridge-shrunk pooled mean of the context; fitting only records the width."""

    def __init__(self, lam=0.0):
        self.lam = lam

    def fit(self, X=None, y=None):
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        self.n_features_in_ = None if X is None else np.asarray(X).shape[-1]
        return self

    def predict(self, X):
        check_is_fitted(self, "n_features_in_")
        x, single = check_sequences(X, self.n_features_in_)
        return self._finish(erm_closed_form(x, self.lam), single)


class KalmanPredictor(_ForecastMixin, BaseEstimator):
    """Known-parameter Kalman forecast; no training."""

    def __init__(self, params: LgssmParams | None = None):
        self.params = params

    def fit(self, X=None, y=None):
        if not isinstance(self.params, LgssmParams):
            raise ValueError("params must be an LgssmParams")
        self.n_features_in_ = self.params.m
        return self

    def predict(self, X):
        check_is_fitted(self, "n_features_in_")
        x, single = check_sequences(X, self.n_features_in_)
        p = self.params
        return self._finish(batch_filter(p.A, p.C, p.Q, p.R, x)["next"], single)


class BayesOraclePredictor(_ForecastMixin, BaseEstimator):
    """Posterior-predictive mean under an LG-SSM task prior (importance sampling)."""

    def __init__(self, prior: LgssmPriorConfig | None = None, n_samples=1000, random_state=0):
        self.prior = prior
        self.n_samples = n_samples
        self.random_state = random_state

    def fit(self, X=None, y=None):
        self.prior_ = self.prior if self.prior is not None else LgssmPriorConfig()
        self.n_features_in_ = self.prior_.m
        return self

    def predict(self, X):
        check_is_fitted(self, "prior_")
        x, single = check_sequences(X, self.n_features_in_)
        cfg = OracleConfig(n_samples=self.n_samples, seed=self.random_state)
        return self._finish(bayes_oracle_lgssm(x, self.prior_, cfg), single)
