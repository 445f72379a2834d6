"""Minimal deterministic SVG line plots (no plotting dependency)."""
from __future__ import annotations

from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np


def _ticks(lo, hi, n=5):
    return np.linspace(lo, hi, n)


def line_svg(x, y, xlabel: str = "", ylabel: str = "", title: str = "",
             width: int = 480, height: int = 360) -> str:
    """Polyline with markers, axes and five ticks per axis."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    ml, mr, mt, mb = 60, 20, 30, 45
    pw, ph = width - ml - mr, height - mt - mb
    x0, x1 = float(x.min()), float(x.max())
    y0, y1 = float(y.min()), float(y.max())
    if x1 == x0:
        x0, x1 = x0 - 1, x1 + 1
    if y1 == y0:
        y0, y1 = y0 - 1, y1 + 1
    pad = 0.05 * (y1 - y0)
    y0, y1 = y0 - pad, y1 + pad

    def px(v):
        return ml + (v - x0) / (x1 - x0) * pw

    def py(v):
        return mt + (1 - (v - y0) / (y1 - y0)) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<line x1="{ml}" y1="{mt + ph}" x2="{ml + pw}" y2="{mt + ph}" stroke="black"/>',
           f'<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{mt + ph}" stroke="black"/>']
    for t in _ticks(x0, x1):
        out.append(f'<line x1="{px(t):.2f}" y1="{mt + ph}" x2="{px(t):.2f}" y2="{mt + ph + 4}" '
                   f'stroke="black"/>')
        out.append(f'<text x="{px(t):.2f}" y="{mt + ph + 16}" text-anchor="middle">{t:.3g}</text>')
    for t in _ticks(y0, y1):
        out.append(f'<line x1="{ml - 4}" y1="{py(t):.2f}" x2="{ml}" y2="{py(t):.2f}" '
                   'stroke="black"/>')
        out.append(f'<text x="{ml - 6}" y="{py(t) + 4:.2f}" text-anchor="end">{t:.3g}</text>')
    pts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(x, y))
    out.append(f'<polyline points="{pts}" fill="none" stroke="#1f5fa8" stroke-width="2"/>')
    for a, b in zip(x, y):
        out.append(f'<circle cx="{px(a):.2f}" cy="{py(b):.2f}" r="2.5" fill="#1f5fa8"/>')
    out.append(f'<text x="{ml + pw / 2}" y="{height - 8}" text-anchor="middle">'
               f'{escape(xlabel)}</text>')
    out.append(f'<text x="14" y="{mt + ph / 2}" text-anchor="middle" '
               f'transform="rotate(-90 14 {mt + ph / 2})">{escape(ylabel)}</text>')
    if title:
        out.append(f'<text x="{width / 2}" y="18" text-anchor="middle">{escape(title)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_line_svg(path, x, y, **kw) -> None:
    Path(path).write_text(line_svg(x, y, **kw))
