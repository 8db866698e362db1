"""Risk curves, log-log fits and their CSV forms."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

RISK_HEADER = ["predictor", "rho", "k", "metric", "std_err", "n_eval"]
FITS_HEADER = ["predictor", "rho", "slope", "intercept", "r_squared", "k_min"]


class FitError(ValueError):
    pass


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


@dataclass
class RiskCurve:
    """Rows of ``(predictor, rho, k, metric, std_err, n_eval)``.

    ``rho`` is NaN where it does not apply.  Within one ``(predictor, rho)``
    group ``k`` must strictly increase.
    """

    rows: list = field(default_factory=list)

    def add(self, predictor: str, rho, k, metric, std_err, n_eval) -> None:
        rho = float("nan") if rho is None else float(rho)
        if n_eval < 1:
            raise ValueError("n_eval must be >= 1")
        prev = [r for r in self.rows if r[0] == predictor and _same(r[1], rho)]
        if prev and k <= prev[-1][2]:
            raise ValueError(f"k must increase within {predictor!r} (got {k} after {prev[-1][2]})")
        self.rows.append((predictor, rho, int(k), float(metric), float(std_err), int(n_eval)))

    def groups(self) -> list[tuple[str, float]]:
        seen = []
        for r in self.rows:
            key = (r[0], r[1])
            if not any(key[0] == s[0] and _same(key[1], s[1]) for s in seen):
                seen.append(key)
        return seen

    def select(self, predictor: str | None = None, rho=None) -> "RiskCurve":
        out = RiskCurve()
        for r in self.rows:
            if predictor is not None and r[0] != predictor:
                continue
            if rho is not None and not _same(r[1], float(rho)):
                continue
            out.rows.append(r)
        return out

    def column(self, name: str) -> np.ndarray:
        return np.array([r[RISK_HEADER.index(name)] for r in self.rows])

    def value(self, predictor: str, rho, k) -> tuple[float, float]:
        for r in self.select(predictor, rho).rows:
            if r[2] == k:
                return r[3], r[4]
        raise KeyError((predictor, rho, k))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(RISK_HEADER)
            for r in self.rows:
                w.writerow([r[0], _fmt(r[1]), r[2], _fmt(r[3]), _fmt(r[4]), r[5]])

    @classmethod
    def from_csv(cls, path) -> "RiskCurve":
        out = cls()
        with open(path, newline="") as fh:
            rd = csv.reader(fh)
            if next(rd) != RISK_HEADER:
                raise ValueError(f"{path}: unexpected header")
            for p, rho, k, m, se, n in rd:
                out.rows.append((p, float(rho), int(k), float(m), float(se), int(n)))
        return out


def _same(a: float, b: float) -> bool:
    return (math.isnan(a) and math.isnan(b)) or a == b


@dataclass(frozen=True)
class FitResult:
    predictor: str
    rho: float
    slope: float
    intercept: float
    r_squared: float
    k_min: int


def fit_loglog(curve: RiskCurve, k_min: int = 32, zero_tol: float = 0.0) -> FitResult:
    """OLS of ``log(metric)`` on ``log(k)`` over rows with ``k >= k_min``.

    ``curve`` must hold a single ``(predictor, rho)`` group.  Rows whose
    metric is ``<= zero_tol`` are dropped; fewer than three usable rows is
    an error.
    """
    groups = curve.groups()
    if len(groups) != 1:
        raise FitError(f"expected one predictor/rho group, got {len(groups)}")
    ks, ms = curve.column("k"), curve.column("metric")
    keep = (ks >= k_min) & (ms > zero_tol) & np.isfinite(ms)
    if keep.sum() < 3:
        raise FitError(f"need >= 3 usable rows with k >= {k_min}, have {int(keep.sum())}")
    lx, ly = np.log(ks[keep].astype(float)), np.log(ms[keep])
    X = np.column_stack([lx, np.ones_like(lx)])
    (slope, intercept), *_ = np.linalg.lstsq(X, ly, rcond=None)
    resid = ly - X @ np.array([slope, intercept])
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0 else 1.0 - float(resid @ resid) / ss_tot
    name, rho = groups[0]
    return FitResult(name, rho, float(slope), float(intercept), r2, int(k_min))


def write_fits(path, fits: list[FitResult]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FITS_HEADER)
        for f in fits:
            w.writerow([f.predictor, _fmt(f.rho), _fmt(f.slope), _fmt(f.intercept), _fmt(f.r_squared), f.k_min])


def read_fits(path) -> list[FitResult]:
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        if next(rd) != FITS_HEADER:
            raise ValueError(f"{path}: unexpected header")
        return [FitResult(p, float(r), float(s), float(c), float(r2), int(k)) for p, r, s, c, r2, k in rd]


def mean_se(x) -> tuple[float, float]:
    """Sample mean and its standard error."""
    x = np.asarray(x, dtype=float)
    if x.size < 2:
        return float(x.mean()), float("nan")
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(x.size))
