"""Minimal SVG output: line plots and heatmaps."""
from __future__ import annotations

from html import escape
from typing import Sequence

import numpy as np

WIDTH, HEIGHT = 640, 400
MARGIN = dict(left=70, right=20, top=40, bottom=55)


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        return [lo]
    return list(np.linspace(lo, hi, n))


def _fmt(v: float) -> str:
    return f"{v:.3g}"


def _frame(title: str, xlabel: str, ylabel: str) -> list[str]:
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2}" y="22" text-anchor="middle" font-size="15">{escape(title)}</text>',
        f'<text x="{WIDTH / 2}" y="{HEIGHT - 12}" text-anchor="middle">{escape(xlabel)}</text>',
        f'<text x="16" y="{HEIGHT / 2}" text-anchor="middle" '
        f'transform="rotate(-90 16 {HEIGHT / 2})">{escape(ylabel)}</text>',
    ]


def _axes(x0, x1, y0, y1, xt, yt, sx, sy, xlabels=None) -> list[str]:
    out = [f'<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>',
           f'<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>']
    for i, v in enumerate(xt):
        x = sx(v)
        label = xlabels[i] if xlabels else _fmt(v)
        out.append(f'<line x1="{x:.1f}" y1="{y0}" x2="{x:.1f}" y2="{y0 + 5}" stroke="black"/>')
        out.append(f'<text x="{x:.1f}" y="{y0 + 18}" text-anchor="middle">{escape(label)}</text>')
    for v in yt:
        y = sy(v)
        out.append(f'<line x1="{x0 - 5}" y1="{y:.1f}" x2="{x0}" y2="{y:.1f}" stroke="black"/>')
        out.append(f'<text x="{x0 - 8}" y="{y + 4:.1f}" text-anchor="end">{_fmt(v)}</text>')
    return out


def line_plot(series: dict[str, tuple[Sequence[float], Sequence[float]]], title: str,
              xlabel: str, ylabel: str, xlabels: Sequence[str] | None = None) -> str:
    """One polyline per series; ``xlabels`` replaces numeric x ticks (categorical axes)."""
    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"]
    xs = np.concatenate([np.asarray(x, float) for x, _ in series.values()])
    ys = np.concatenate([np.asarray(y, float) for _, y in series.values()])
    ys = ys[np.isfinite(ys)]
    xlo, xhi = float(xs.min()), float(xs.max())
    ylo, yhi = (float(ys.min()), float(ys.max())) if len(ys) else (0.0, 1.0)
    if xhi == xlo:
        xlo, xhi = xlo - 1, xhi + 1
    pad = 0.1 * (yhi - ylo) or 1.0
    ylo, yhi = ylo - pad, yhi + pad
    x0, x1 = MARGIN["left"], WIDTH - MARGIN["right"]
    y0, y1 = HEIGHT - MARGIN["bottom"], MARGIN["top"]

    def sx(v):
        return x0 + (v - xlo) / (xhi - xlo) * (x1 - x0)

    def sy(v):
        return y0 - (v - ylo) / (yhi - ylo) * (y0 - y1)

    xt = [float(v) for v in np.asarray(next(iter(series.values()))[0], float)] if xlabels \
        else _ticks(xlo, xhi)
    out = _frame(title, xlabel, ylabel) + _axes(x0, x1, y0, y1, xt, _ticks(ylo, yhi), sx, sy,
                                                 list(xlabels) if xlabels else None)
    for i, (name, (x, y)) in enumerate(series.items()):
        c = colors[i % len(colors)]
        pts = [(sx(a), sy(b)) for a, b in zip(x, y) if np.isfinite(b)]
        out.append(f'<polyline fill="none" stroke="{c}" stroke-width="2" points="'
                   + " ".join(f"{a:.1f},{b:.1f}" for a, b in pts) + '"/>')
        out.extend(f'<circle cx="{a:.1f}" cy="{b:.1f}" r="3" fill="{c}"/>' for a, b in pts)
        out.append(f'<text x="{x1 - 5}" y="{y1 + 15 * (i + 1)}" text-anchor="end" '
                   f'fill="{c}">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def heatmap(matrix: np.ndarray, x_values: Sequence[float], y_values: Sequence[float],
            title: str, xlabel: str, ylabel: str,
            marks: Sequence[tuple[float, float, str]] = ()) -> str:
    """Matrix rows map to ``y_values`` (bottom to top), columns to ``x_values``.

    ``marks`` are (x, y, text) annotations drawn on top.
    """
    m = np.asarray(matrix, dtype=float)
    x0, x1 = MARGIN["left"], WIDTH - MARGIN["right"]
    y0, y1 = HEIGHT - MARGIN["bottom"], MARGIN["top"]
    nx, ny = m.shape[1], m.shape[0]
    cw, ch = (x1 - x0) / max(nx, 1), (y0 - y1) / max(ny, 1)
    top = float(m.max()) if m.size and m.max() > 0 else 1.0
    xv = np.asarray(x_values, float)
    yv = np.asarray(y_values, float)
    out = _frame(title, xlabel, ylabel)
    for j in range(ny):
        for i in range(nx):
            level = int(round(255 * (1 - min(m[j, i] / top, 1.0))))
            out.append(f'<rect x="{x0 + i * cw:.1f}" y="{y0 - (j + 1) * ch:.1f}" '
                       f'width="{cw + 0.5:.1f}" height="{ch + 0.5:.1f}" '
                       f'fill="rgb({level},{level},255)"/>')

    def sx(v):
        if len(xv) < 2:
            return x0 + cw / 2
        return x0 + cw / 2 + (v - xv[0]) / (xv[-1] - xv[0]) * (x1 - x0 - cw)

    def sy(v):
        if len(yv) < 2:
            return y0 - ch / 2
        return y0 - ch / 2 - (v - yv[0]) / (yv[-1] - yv[0]) * (y0 - y1 - ch)

    xt = _ticks(float(xv[0]), float(xv[-1])) if len(xv) else []
    out += _axes(x0, x1, y0, y1, xt, list(yv), sx, sy)
    for x, y, text in marks:
        out.append(f'<text x="{sx(x):.1f}" y="{sy(y) + 4:.1f}" text-anchor="middle" '
                   f'font-weight="bold">{escape(text)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
