"""Static SVG rendering of P-bar/recall curves."""
from __future__ import annotations

from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
            "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf")


def curves_svg(curves: Sequence[tuple[str, np.ndarray, np.ndarray]],
               width: int = 480, height: int = 400, title: str = "") -> str:
    """Render ``(label, recall, pbar)`` curves on unit axes with a legend."""
    left, right, top, bottom = 56, 150, 30, 46
    pw, ph = width - left - right, height - top - bottom

    def sx(v):
        return left + float(v) * pw

    def sy(v):
        return top + (1.0 - float(v)) * ph

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    for k in range(6):
        v = k / 5
        parts.append(f'<line x1="{sx(v):.2f}" y1="{top + ph}" x2="{sx(v):.2f}" y2="{top + ph + 4}" stroke="black"/>')
        parts.append(f'<text x="{sx(v):.2f}" y="{top + ph + 16}" text-anchor="middle">{v:.1f}</text>')
        parts.append(f'<line x1="{left - 4}" y1="{sy(v):.2f}" x2="{left}" y2="{sy(v):.2f}" stroke="black"/>')
        parts.append(f'<text x="{left - 7}" y="{sy(v) + 4:.2f}" text-anchor="end">{v:.1f}</text>')
    parts.append(f'<text x="{left + pw / 2:.2f}" y="{height - 10}" text-anchor="middle">Recall</text>')
    parts.append(f'<text x="14" y="{top + ph / 2:.2f}" text-anchor="middle" '
                 f'transform="rotate(-90 14 {top + ph / 2:.2f})">P-bar</text>')
    if title:
        parts.append(f'<text x="{left + pw / 2:.2f}" y="18" text-anchor="middle">{escape(title)}</text>')
    for i, (label, rec, pb) in enumerate(curves):
        colour = _PALETTE[i % len(_PALETTE)]
        pts = " ".join(f"{sx(r):.2f},{sy(p):.2f}" for r, p in zip(rec, pb))
        parts.append(f'<polyline fill="none" stroke="{colour}" stroke-width="1.5" points="{pts}"/>')
        ly = top + 12 + 16 * i
        parts.append(f'<line x1="{left + pw + 10}" y1="{ly}" x2="{left + pw + 30}" y2="{ly}" '
                     f'stroke="{colour}" stroke-width="2"/>')
        parts.append(f'<text x="{left + pw + 34}" y="{ly + 4}">{escape(label)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
