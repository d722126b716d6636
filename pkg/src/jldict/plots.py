"""Minimal static SVG renderings for diagnostic tables."""

from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

WIDTH, HEIGHT = 640, 400
MARGIN = 50


def _frame(title, xlabel, ylabel, body):
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">\n'
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>\n'
        f'<text x="{WIDTH / 2}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>\n'
        f'<line x1="{MARGIN}" y1="{HEIGHT - MARGIN}" x2="{WIDTH - MARGIN}" '
        f'y2="{HEIGHT - MARGIN}" stroke="black"/>\n'
        f'<line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" y2="{HEIGHT - MARGIN}" stroke="black"/>\n'
        f'<text x="{WIDTH / 2}" y="{HEIGHT - 10}" text-anchor="middle" font-size="12">'
        f'{escape(xlabel)}</text>\n'
        f'<text x="15" y="{HEIGHT / 2}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 15 {HEIGHT / 2})">{escape(ylabel)}</text>\n'
        f"{body}</svg>\n"
    )


def _ticks(lo, hi, axis):
    out = []
    for v in np.linspace(lo, hi, 5):
        if axis == "x":
            x = MARGIN + (v - lo) / ((hi - lo) or 1.0) * (WIDTH - 2 * MARGIN)
            out.append(f'<text x="{x:.2f}" y="{HEIGHT - MARGIN + 15}" text-anchor="middle" '
                       f'font-size="10">{v:.3g}</text>')
        else:
            y = HEIGHT - MARGIN - (v - lo) / ((hi - lo) or 1.0) * (HEIGHT - 2 * MARGIN)
            out.append(f'<text x="{MARGIN - 5}" y="{y:.2f}" text-anchor="end" '
                       f'font-size="10">{v:.3g}</text>')
    return "\n".join(out) + "\n"


def histogram_svg(counts, edges, title="", xlabel="", ylabel="count") -> str:
    counts = np.asarray(counts, dtype=float)
    edges = np.asarray(edges, dtype=float)
    lo, hi = float(edges[0]), float(edges[-1])
    top = float(counts.max()) if counts.size and counts.max() > 0 else 1.0
    span = (hi - lo) or 1.0
    plot_w, plot_h = WIDTH - 2 * MARGIN, HEIGHT - 2 * MARGIN
    bars = []
    for c, a, b in zip(counts, edges[:-1], edges[1:]):
        x = MARGIN + (a - lo) / span * plot_w
        w = max((b - a) / span * plot_w, 0.5)
        h = c / top * plot_h
        bars.append(f'<rect x="{x:.2f}" y="{HEIGHT - MARGIN - h:.2f}" width="{w:.2f}" '
                    f'height="{h:.2f}" fill="steelblue" stroke="white"/>')
    body = "\n".join(bars) + "\n" + _ticks(lo, hi, "x") + _ticks(0.0, top, "y")
    return _frame(title, xlabel, ylabel, body)


def line_svg(x, y, title="", xlabel="", ylabel="") -> str:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    xlo, xhi = float(x.min()), float(x.max())
    ylo, yhi = float(y.min()), float(y.max())
    plot_w, plot_h = WIDTH - 2 * MARGIN, HEIGHT - 2 * MARGIN
    px = MARGIN + (x - xlo) / ((xhi - xlo) or 1.0) * plot_w
    py = HEIGHT - MARGIN - (y - ylo) / ((yhi - ylo) or 1.0) * plot_h
    points = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(px, py))
    body = (f'<polyline points="{points}" fill="none" stroke="steelblue" stroke-width="2"/>\n'
            + _ticks(xlo, xhi, "x") + _ticks(ylo, yhi, "y"))
    return _frame(title, xlabel, ylabel, body)
