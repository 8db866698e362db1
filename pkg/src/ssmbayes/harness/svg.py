"""Minimal deterministic SVG line plots for risk curves.

Output depends only on the input rows and style, so two identical runs
produce byte-identical files.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from xml.sax.saxutils import escape

import numpy as np

from .curves import RiskCurve

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf", "#7f7f7f")


@dataclass(frozen=True)
class PlotStyle:
    title: str = ""
    xlabel: str = "k"
    ylabel: str = "metric"
    log_x: bool = True
    log_y: bool = True
    width: int = 640
    height: int = 420
    error_bars: bool = True


def _n(v: float) -> str:
    return f"{v:.2f}"


def _label(v: float) -> str:
    if v == 0:
        return "0"
    if abs(v) >= 1e4 or abs(v) < 1e-3:
        return f"{v:.0e}"
    return f"{v:.4g}"


def _linear_ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=10 * mag)
    start = math.ceil(lo / step) * step
    return [round(start + i * step, 12) for i in range(int((hi - start) / step + 1e-9) + 1)]


def _log_ticks(lo: float, hi: float) -> list[float]:
    a, b = math.floor(math.log10(lo)), math.ceil(math.log10(hi))
    ticks = [10.0 ** e for e in range(a, b + 1) if lo <= 10.0 ** e <= hi]
    if len(ticks) < 2:
        ticks = sorted({lo, hi} | set(ticks))
    return ticks


def render_svg(curve: RiskCurve, style: PlotStyle = PlotStyle()) -> str:
    """One polyline (or a lone marker) per ``(predictor, rho)`` group."""
    groups = curve.groups()
    if not groups:
        raise ValueError("nothing to plot: empty curve")
    W, H = style.width, style.height
    left, right, top, bottom = 70, 170, 36, 50
    series = []
    for name, rho in groups:
        sub = curve.select(name, None if math.isnan(rho) else rho)
        if not math.isnan(rho):
            sub.rows = [r for r in sub.rows if r[1] == rho]
        k = sub.column("k").astype(float)
        m = sub.column("metric")
        se = np.nan_to_num(sub.column("std_err"))
        ok = np.isfinite(m) & ((m > 0) if style.log_y else True) & ((k > 0) if style.log_x else True)
        label = name if math.isnan(rho) else f"{name} rho={rho:g}"
        series.append((label, k[ok], m[ok], se[ok]))
    allk = np.concatenate([s[1] for s in series])
    allm = np.concatenate([s[2] for s in series])
    if allk.size == 0:
        raise ValueError("no plottable points")
    lo_band = np.concatenate([s[2] - 2 * s[3] for s in series]) if style.error_bars else allm
    hi_band = np.concatenate([s[2] + 2 * s[3] for s in series]) if style.error_bars else allm
    xlo, xhi = allk.min(), allk.max()
    if style.log_y:
        pos = lo_band[lo_band > 0]
        ylo = min(allm.min(), pos.min() if pos.size else allm.min())
    else:
        ylo = min(lo_band.min(), allm.min())
    yhi = max(hi_band.max(), allm.max())
    if xhi == xlo:
        xlo, xhi = (xlo / 2, xhi * 2) if style.log_x else (xlo - 1, xhi + 1)
    if yhi == ylo:
        ylo, yhi = (ylo / 2, yhi * 2) if style.log_y else (ylo - 1, yhi + 1)
    if style.log_y:
        ylo, yhi = ylo / 1.2, yhi * 1.2
    else:
        pad = 0.05 * (yhi - ylo)
        ylo, yhi = ylo - pad, yhi + pad

    fx = (lambda v: math.log10(v)) if style.log_x else (lambda v: v)
    fy = (lambda v: math.log10(v)) if style.log_y else (lambda v: v)
    X0, X1, Y0, Y1 = fx(xlo), fx(xhi), fy(ylo), fy(yhi)

    def px(v):
        return left + (fx(v) - X0) / (X1 - X0) * (W - left - right)

    def py(v):
        v = max(v, ylo) if style.log_y else v
        return H - bottom - (fy(v) - Y0) / (Y1 - Y0) * (H - top - bottom)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" '
           'font-family="sans-serif" font-size="11">',
           f'<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>',
           f'<rect x="{left}" y="{top}" width="{W - left - right}" height="{H - top - bottom}" '
           'fill="none" stroke="black"/>']
    if style.title:
        out.append(f'<text x="{_n((W - right + left) / 2)}" y="20" text-anchor="middle" '
                   f'font-size="13">{escape(style.title)}</text>')
    distinct = sorted(set(allk.tolist()))
    if len(distinct) <= 12:
        xticks = distinct
    else:
        xticks = _log_ticks(xlo, xhi) if style.log_x else _linear_ticks(xlo, xhi)
    for t in xticks:
        x = px(t)
        out.append(f'<line x1="{_n(x)}" y1="{H - bottom}" x2="{_n(x)}" y2="{H - bottom + 5}" stroke="black"/>')
        out.append(f'<text x="{_n(x)}" y="{H - bottom + 18}" text-anchor="middle">{_label(t)}</text>')
    yticks = _log_ticks(ylo, yhi) if style.log_y else _linear_ticks(ylo, yhi)
    for t in yticks:
        y = py(t)
        out.append(f'<line x1="{left - 5}" y1="{_n(y)}" x2="{left}" y2="{_n(y)}" stroke="black"/>')
        out.append(f'<text x="{left - 8}" y="{_n(y + 4)}" text-anchor="end">{_label(t)}</text>')
    out.append(f'<text x="{_n((W - right + left) / 2)}" y="{H - 12}" text-anchor="middle">'
               f'{escape(style.xlabel)}</text>')
    out.append(f'<text x="16" y="{_n((H - bottom + top) / 2)}" text-anchor="middle" '
               f'transform="rotate(-90 16 {_n((H - bottom + top) / 2)})">{escape(style.ylabel)}</text>')

    for i, (label, k, m, se) in enumerate(series):
        col = PALETTE[i % len(PALETTE)]
        pts = [(px(a), py(b)) for a, b in zip(k, m)]
        if len(pts) > 1:
            path = " ".join(f"{_n(x)},{_n(y)}" for x, y in pts)
            out.append(f'<polyline points="{path}" fill="none" stroke="{col}" stroke-width="1.5"/>')
        for (x, y), b, s in zip(pts, m, se):
            if style.error_bars and s > 0:
                y_hi, y_lo = py(b + 2 * s), py(b - 2 * s) if (b - 2 * s > 0 or not style.log_y) else py(ylo)
                out.append(f'<line x1="{_n(x)}" y1="{_n(y_lo)}" x2="{_n(x)}" y2="{_n(y_hi)}" stroke="{col}"/>')
            out.append(f'<circle cx="{_n(x)}" cy="{_n(y)}" r="3" fill="{col}"/>')
        ly = top + 14 + 16 * i
        lx = W - right + 10
        out.append(f'<line x1="{lx}" y1="{ly - 4}" x2="{lx + 18}" y2="{ly - 4}" stroke="{col}" stroke-width="2"/>')
        out.append(f'<text x="{lx + 24}" y="{ly}">{escape(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_svg(curve: RiskCurve, path, style: PlotStyle = PlotStyle()) -> str:
    text = render_svg(curve, style)
    with open(path, "w", newline="\n") as fh:
        fh.write(text)
    return text
