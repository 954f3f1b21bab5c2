"""Static SVG renderings of curves, reliability bars and heatmaps.

Output is plain text built from fixed-precision numbers, so identical inputs
give byte-identical files.
"""
from __future__ import annotations

from html import escape

import numpy as np

W, H = 480, 360
LEFT, RIGHT, TOP, BOTTOM = 56, 140, 30, 46
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f")


def _f(v: float) -> str:
    return f"{v:.2f}"


def _frame(title: str, xlabel: str, ylabel: str) -> list[str]:
    pw, ph = W - LEFT - RIGHT, H - TOP - BOTTOM
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" '
        'font-family="sans-serif" font-size="11">',
        f'<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>',
        f'<text x="{W / 2 - RIGHT / 2:.0f}" y="18" text-anchor="middle" font-size="13">{escape(title)}</text>',
        f'<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    for i in range(6):
        t = i / 5
        x, y = LEFT + t * pw, TOP + ph - t * ph
        out.append(f'<text x="{_f(x)}" y="{TOP + ph + 14}" text-anchor="middle">{t:.1f}</text>')
        out.append(f'<text x="{LEFT - 6}" y="{_f(y + 4)}" text-anchor="end">{t:.1f}</text>')
    out.append(f'<text x="{LEFT + pw / 2:.0f}" y="{H - 10}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text x="14" y="{TOP + ph / 2:.0f}" text-anchor="middle" '
               f'transform="rotate(-90 14 {TOP + ph / 2:.0f})">{escape(ylabel)}</text>')
    return out


def _xy(x: float, y: float) -> tuple[float, float]:
    pw, ph = W - LEFT - RIGHT, H - TOP - BOTTOM
    return LEFT + x * pw, TOP + ph - y * ph


def line_chart(series: dict, title: str, xlabel: str = "coverage", ylabel: str = "risk") -> str:
    """``series`` maps a legend label to (xs, ys) with both axes on [0, 1]."""
    out = _frame(title, xlabel, ylabel)
    for i, (name, (xs, ys)) in enumerate(series.items()):
        colour = PALETTE[i % len(PALETTE)]
        pts = " ".join(f"{_f(px)},{_f(py)}" for px, py in (_xy(x, y) for x, y in zip(xs, ys)))
        out.append(f'<polyline fill="none" stroke="{colour}" stroke-width="1.5" points="{pts}"/>')
        ly = TOP + 12 + 16 * i
        out.append(f'<line x1="{W - RIGHT + 8}" y1="{ly}" x2="{W - RIGHT + 24}" y2="{ly}" stroke="{colour}" '
                   'stroke-width="2"/>')
        out.append(f'<text x="{W - RIGHT + 28}" y="{ly + 4}">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def reliability_chart(lo, hi, accuracy, confidence, title: str) -> str:
    out = _frame(title, "confidence", "accuracy")
    x0, y0 = _xy(0, 0)
    x1, y1 = _xy(1, 1)
    out.append(f'<line x1="{_f(x0)}" y1="{_f(y0)}" x2="{_f(x1)}" y2="{_f(y1)}" stroke="#999" '
               'stroke-dasharray="4 3"/>')
    for a, b, acc, conf in zip(lo, hi, accuracy, confidence):
        if not np.isfinite(acc):
            continue
        xa, ytop = _xy(a, acc)
        xb, ybase = _xy(b, 0)
        out.append(f'<rect x="{_f(xa)}" y="{_f(ytop)}" width="{_f(xb - xa)}" height="{_f(ybase - ytop)}" '
                   f'fill="{PALETTE[0]}" fill-opacity="0.7" stroke="white"/>')
        cx, cy = _xy(0.5 * (a + b), conf)
        out.append(f'<circle cx="{_f(cx)}" cy="{_f(cy)}" r="2.5" fill="{PALETTE[1]}"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def heatmap(values, row_labels, col_labels, title: str, row_name: str, col_name: str) -> str:
    """Cells shaded by value on [0, 1], annotated with the value."""
    v = np.asarray(values, dtype=np.float64)
    nr, nc = v.shape
    cw, ch = 70, 40
    w, h = 110 + nc * cw, 70 + nr * ch
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" '
        'font-family="sans-serif" font-size="11">',
        f'<rect x="0" y="0" width="{w}" height="{h}" fill="white"/>',
        f'<text x="{w / 2:.0f}" y="18" text-anchor="middle" font-size="13">{escape(title)}</text>',
        f'<text x="{110 + nc * cw / 2:.0f}" y="36" text-anchor="middle">{escape(col_name)}</text>',
        f'<text x="12" y="{60 + nr * ch / 2:.0f}" text-anchor="middle" '
        f'transform="rotate(-90 12 {60 + nr * ch / 2:.0f})">{escape(row_name)}</text>',
    ]
    for j, c in enumerate(col_labels):
        out.append(f'<text x="{110 + j * cw + cw / 2:.0f}" y="52" text-anchor="middle">{escape(str(c))}</text>')
    for i, r in enumerate(row_labels):
        y = 58 + i * ch
        out.append(f'<text x="100" y="{y + ch / 2 + 4:.0f}" text-anchor="end">{escape(str(r))}</text>')
        for j in range(nc):
            x = 110 + j * cw
            shade = int(round(255 * (1 - min(max(v[i, j], 0.0), 1.0))))
            out.append(f'<rect x="{x}" y="{y}" width="{cw}" height="{ch}" fill="rgb({shade},{shade},255)" '
                       'stroke="white"/>')
            out.append(f'<text x="{x + cw / 2:.0f}" y="{y + ch / 2 + 4:.0f}" text-anchor="middle">'
                       f'{v[i, j]:.3f}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
