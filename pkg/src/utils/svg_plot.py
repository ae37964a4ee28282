"""Minimal SVG line plots: one polyline per series plus a pair of labelled axes."""

import logging
import os
from typing import Dict, List, Sequence, Tuple
from xml.sax.saxutils import escape

import numpy as np

logger = logging.getLogger(__name__)

WIDTH, HEIGHT = 640, 400
MARGIN = 60
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b")

Series = Dict[str, Tuple[Sequence[float], Sequence[float]]]


def _bounds(values: np.ndarray) -> Tuple[float, float]:
    lo, hi = float(np.min(values)), float(np.max(values))
    if hi == lo:
        pad = abs(lo) * 0.5 or 1.0
        return lo - pad, hi + pad
    return lo, hi


def render_line_plot(series: Series, title: str = "", xlabel: str = "", ylabel: str = "", log_y: bool = False) -> str:
    """SVG text for the given named (x, y) series."""
    cleaned: List[Tuple[str, np.ndarray, np.ndarray]] = []
    for name, (x, y) in series.items():
        x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
        keep = np.isfinite(x) & np.isfinite(y)
        if log_y:
            keep &= y > 0
            y = np.where(keep, np.log10(np.where(y > 0, y, 1.0)), 0.0)
        cleaned.append((name, x[keep], y[keep]))

    points = [(x, y) for _, x, y in cleaned if len(x)]
    if points:
        x_lo, x_hi = _bounds(np.concatenate([p[0] for p in points]))
        y_lo, y_hi = _bounds(np.concatenate([p[1] for p in points]))
    else:
        x_lo, x_hi, y_lo, y_hi = 0.0, 1.0, 0.0, 1.0

    def sx(v: float) -> float:
        return MARGIN + (v - x_lo) / (x_hi - x_lo) * (WIDTH - 2 * MARGIN)

    def sy(v: float) -> float:
        return HEIGHT - MARGIN - (v - y_lo) / (y_hi - y_lo) * (HEIGHT - 2 * MARGIN)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<line x1="{MARGIN}" y1="{HEIGHT - MARGIN}" x2="{WIDTH - MARGIN}" y2="{HEIGHT - MARGIN}" stroke="black"/>',
        f'<line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" y2="{HEIGHT - MARGIN}" stroke="black"/>',
        f'<text x="{WIDTH / 2:.1f}" y="{MARGIN / 2:.1f}" text-anchor="middle" font-size="16">{escape(title)}</text>',
        f'<text x="{WIDTH / 2:.1f}" y="{HEIGHT - 15}" text-anchor="middle" font-size="12">{escape(xlabel)}</text>',
        f'<text x="15" y="{HEIGHT / 2:.1f}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 15 {HEIGHT / 2:.1f})">{escape(ylabel + (" (log10)" if log_y else ""))}</text>',
    ]
    for label, value, x, y in (
        ("x", x_lo, MARGIN, HEIGHT - MARGIN + 15),
        ("x", x_hi, WIDTH - MARGIN, HEIGHT - MARGIN + 15),
        ("y", y_lo, MARGIN - 5, HEIGHT - MARGIN),
        ("y", y_hi, MARGIN - 5, MARGIN),
    ):
        anchor = "middle" if label == "x" else "end"
        out.append(f'<text x="{x}" y="{y}" text-anchor="{anchor}" font-size="10">{value:.3g}</text>')

    for i, (name, x, y) in enumerate(cleaned):
        color = COLORS[i % len(COLORS)]
        if len(x):
            pts = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(x, y))
            out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        ly = MARGIN + 15 * i
        out.append(f'<line x1="{WIDTH - MARGIN - 110}" y1="{ly}" x2="{WIDTH - MARGIN - 90}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{WIDTH - MARGIN - 85}" y="{ly + 4}" font-size="11">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_line_plot(series: Series, path: str, title: str = "", xlabel: str = "", ylabel: str = "", log_y: bool = False) -> str:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as f:
        f.write(render_line_plot(series, title, xlabel, ylabel, log_y))
    logger.info("Wrote %s", path)
    return path
