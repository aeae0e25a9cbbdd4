"""Dependency-free SVG line charts.

Series are drawn as polylines whose ``points`` are the raw data coordinates;
a group transform maps them into the plot box. Output is a pure function of
the inputs, so identical data gives byte-identical files.
"""
from __future__ import annotations

import xml.etree.ElementTree as ET
from xml.sax.saxutils import escape

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd")
MAX_SERIES = len(PALETTE)

WIDTH, HEIGHT = 640, 400
LEFT, RIGHT, TOP, BOTTOM = 80, 20, 40, 60


def _num(x):
    return repr(float(x))


def _span(lo, hi):
    if hi > lo:
        return lo, hi
    pad = abs(lo) * 0.1 if lo != 0 else 1.0
    return lo - pad, hi + pad


def line_chart(series, xlabel, ylabel, title=""):
    """Render ``series`` (a list of ``(label, xs, ys)``) to an SVG string."""
    if not series:
        raise ValueError("nothing to plot")
    if len(series) > MAX_SERIES:
        raise ValueError(f"at most {MAX_SERIES} series per chart")
    xs_all = [x for _, xs, _ in series for x in xs]
    ys_all = [y for _, _, ys in series for y in ys]
    if not xs_all:
        raise ValueError("series are empty")
    x0, x1 = _span(min(xs_all), max(xs_all))
    y0, y1 = _span(min(ys_all), max(ys_all))
    pw, ph = WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM
    sx, sy = pw / (x1 - x0), ph / (y1 - y0)
    # data (x, y) -> (LEFT + (x - x0) * sx, TOP + ph - (y - y0) * sy)
    tx, ty = LEFT - x0 * sx, TOP + ph + y0 * sy

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
    ]
    if title:
        out.append(f'<text x="{WIDTH / 2}" y="24" text-anchor="middle" font-size="16">{escape(title)}</text>')
    out.append(
        f'<rect class="frame" x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>'
    )
    for frac in (0.0, 0.5, 1.0):
        xv, yv = x0 + frac * (x1 - x0), y0 + frac * (y1 - y0)
        px, py = LEFT + frac * pw, TOP + ph - frac * ph
        out.append(f'<text x="{px}" y="{TOP + ph + 18}" text-anchor="middle" font-size="11">{xv:.6g}</text>')
        out.append(f'<text x="{LEFT - 6}" y="{py + 4}" text-anchor="end" font-size="11">{yv:.6g}</text>')
    out.append(
        f'<text class="xlabel" x="{LEFT + pw / 2}" y="{HEIGHT - 16}" text-anchor="middle" '
        f'font-size="13">{escape(xlabel)}</text>'
    )
    out.append(
        f'<text class="ylabel" x="18" y="{TOP + ph / 2}" text-anchor="middle" font-size="13" '
        f'transform="rotate(-90 18 {TOP + ph / 2})">{escape(ylabel)}</text>'
    )
    out.append(f'<g transform="matrix({_num(sx)} 0 0 {_num(-sy)} {_num(tx)} {_num(ty)})">')
    for i, (label, xs, ys) in enumerate(series):
        pts = " ".join(f"{_num(x)},{_num(y)}" for x, y in zip(xs, ys))
        out.append(
            f'<polyline data-label="{escape(label)}" points="{pts}" fill="none" '
            f'stroke="{PALETTE[i]}" stroke-width="1.5" vector-effect="non-scaling-stroke"/>'
        )
    out.append("</g>")
    if len(series) > 1:
        for i, (label, _, _) in enumerate(series):
            y = TOP + 14 + 16 * i
            out.append(f'<line x1="{LEFT + 10}" y1="{y}" x2="{LEFT + 30}" y2="{y}" stroke="{PALETTE[i]}" stroke-width="2"/>')
            out.append(f'<text x="{LEFT + 36}" y="{y + 4}" font-size="11">{escape(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def polyline_points(svg_text):
    """Parse the data-space vertices back out of a chart (one list per series)."""
    root = ET.fromstring(svg_text)
    result = []
    for el in root.iter("{http://www.w3.org/2000/svg}polyline"):
        pts = [tuple(float(v) for v in p.split(",")) for p in el.get("points").split()]
        result.append(pts)
    return result
