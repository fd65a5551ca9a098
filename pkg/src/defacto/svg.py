"""Tiny standalone SVG line chart for tipping-point curves."""

from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np


def _ticks(lo, hi, n=5):
    span = hi - lo
    raw = span / max(n - 1, 1)
    mag = 10 ** np.floor(np.log10(raw)) if raw > 0 else 1.0
    step = min((s * mag for s in (1, 2, 2.5, 5, 10) if s * mag >= raw), default=raw)
    start = np.ceil(lo / step) * step
    return np.arange(start, hi + 1e-9 * step, step)


def tipping_svg(k, est, lo, hi, crossing=None, xlabel="k", ylabel="treatment effect",
                width=640, height=400):
    """Estimate curve with a shaded confidence band, a zero line and an
    optional vertical marker at the crossing."""
    k, est, lo, hi = (np.asarray(a, dtype=float) for a in (k, est, lo, hi))
    ml, mr, mt, mb = 64, 20, 20, 48
    pw, ph = width - ml - mr, height - mt - mb
    x0, x1 = k.min(), k.max()
    y0 = min(lo.min(), 0.0)
    y1 = max(hi.max(), 0.0)
    pad = 0.05 * (y1 - y0 or 1.0)
    y0, y1 = y0 - pad, y1 + pad
    if x1 == x0:
        x1 = x0 + 1.0

    def sx(v):
        return ml + (v - x0) / (x1 - x0) * pw

    def sy(v):
        return mt + (y1 - v) / (y1 - y0) * ph

    def path(xs, ys):
        return " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(xs, ys))

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
           f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="white" stroke="#444"/>']
    band = path(np.r_[k, k[::-1]], np.r_[hi, lo[::-1]])
    out.append(f'<polygon points="{band}" fill="#9ecae1" fill-opacity="0.5" stroke="none"/>')
    out.append(f'<line x1="{ml}" x2="{ml + pw}" y1="{sy(0):.2f}" y2="{sy(0):.2f}" '
               f'stroke="#888" stroke-dasharray="4 3"/>')
    out.append(f'<polyline points="{path(k, est)}" fill="none" stroke="#08519c" stroke-width="2"/>')
    if crossing is not None and x0 <= crossing <= x1:
        cx = sx(crossing)
        out.append(f'<line x1="{cx:.2f}" x2="{cx:.2f}" y1="{mt}" y2="{mt + ph}" stroke="#d62728"/>')
        out.append(f'<text x="{cx + 4:.2f}" y="{mt + 14}" fill="#d62728">{crossing:.3f}</text>')
    for t in _ticks(x0, x1):
        out.append(f'<text x="{sx(t):.2f}" y="{mt + ph + 16}" text-anchor="middle">{t:g}</text>')
    for t in _ticks(y0, y1):
        out.append(f'<text x="{ml - 6}" y="{sy(t) + 4:.2f}" text-anchor="end">{t:g}</text>')
    out.append(f'<text x="{ml + pw / 2}" y="{height - 10}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text x="14" y="{mt + ph / 2}" text-anchor="middle" '
               f'transform="rotate(-90 14 {mt + ph / 2})">{escape(ylabel)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
