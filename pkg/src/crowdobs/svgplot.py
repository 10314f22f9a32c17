"""Dependency-free SVG line plots with deterministic output bytes."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from xml.sax.saxutils import escape

WIDTH, HEIGHT = 640, 420
MARGIN = {"left": 70, "right": 170, "top": 40, "bottom": 60}
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf")


@dataclass
class Series:
    """One labelled curve; optional ``errors`` are drawn as vertical bars."""

    label: str
    x: list
    y: list
    errors: list | None = None
    style: str = "line"  # "line" or "dashed"

    def __post_init__(self):
        self.x = [float(v) for v in self.x]
        self.y = [float(v) for v in self.y]
        if len(self.x) != len(self.y):
            raise ValueError(f"series {self.label!r}: x and y lengths differ")
        if not self.x:
            raise ValueError(f"series {self.label!r} has no points")
        if self.errors is not None:
            self.errors = [float(v) for v in self.errors]
            if len(self.errors) != len(self.x):
                raise ValueError(f"series {self.label!r}: errors length differs")
        order = sorted(range(len(self.x)), key=lambda k: self.x[k])
        self.x = [self.x[k] for k in order]
        self.y = [self.y[k] for k in order]
        if self.errors is not None:
            self.errors = [self.errors[k] for k in order]


@dataclass
class Axes:
    title: str = ""
    xlabel: str = ""
    ylabel: str = ""
    xlim: tuple | None = None
    ylim: tuple | None = None
    ticks: int = 5
    extra: dict = field(default_factory=dict)


def _num(v: float) -> str:
    s = f"{v:.2f}".rstrip("0").rstrip(".")
    return "0" if s in ("-0", "") else s


def _tick_label(v: float) -> str:
    return f"{v:.4g}"


def _limits(values, lim):
    if lim is not None:
        lo, hi = float(lim[0]), float(lim[1])
    else:
        lo, hi = min(values), max(values)
        pad = 0.05 * (hi - lo) if hi > lo else (abs(lo) * 0.1 or 1.0)
        lo, hi = lo - pad, hi + pad
    if not (math.isfinite(lo) and math.isfinite(hi)) or hi <= lo:
        raise ValueError(f"invalid axis limits ({lo}, {hi})")
    return lo, hi


def render_svg(series, axes: Axes | None = None) -> str:
    """SVG document for ``series`` as a string."""
    series = list(series)
    if not series:
        raise ValueError("no series to plot")
    axes = axes or Axes()
    xs = [v for s in series for v in s.x]
    ys = [v for s in series for v in s.y]
    ys += [y + e for s in series if s.errors for y, e in zip(s.y, s.errors)]
    ys += [y - e for s in series if s.errors for y, e in zip(s.y, s.errors)]
    x0, x1 = _limits(xs, axes.xlim)
    y0, y1 = _limits(ys, axes.ylim)
    left, top = MARGIN["left"], MARGIN["top"]
    pw = WIDTH - MARGIN["left"] - MARGIN["right"]
    ph = HEIGHT - MARGIN["top"] - MARGIN["bottom"]

    def px(x):
        return left + (x - x0) / (x1 - x0) * pw

    def py(y):
        return top + ph - (y - y0) / (y1 - y0) * ph

    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
    ]
    if axes.title:
        out.append(f'<text x="{_num(left + pw / 2)}" y="22" text-anchor="middle" '
                   f'font-size="14">{escape(axes.title)}</text>')
    out.append(f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>')
    n = max(axes.ticks, 1)
    for k in range(n + 1):
        xv = x0 + (x1 - x0) * k / n
        yv = y0 + (y1 - y0) * k / n
        X, Y = _num(px(xv)), _num(py(yv))
        out.append(f'<line x1="{X}" y1="{top + ph}" x2="{X}" y2="{top + ph + 5}" stroke="black"/>')
        out.append(f'<text x="{X}" y="{top + ph + 18}" text-anchor="middle">{_tick_label(xv)}</text>')
        out.append(f'<line x1="{left - 5}" y1="{Y}" x2="{left}" y2="{Y}" stroke="black"/>')
        out.append(f'<text x="{left - 8}" y="{Y}" text-anchor="end" '
                   f'dominant-baseline="middle">{_tick_label(yv)}</text>')
    if axes.xlabel:
        out.append(f'<text x="{_num(left + pw / 2)}" y="{HEIGHT - 15}" '
                   f'text-anchor="middle">{escape(axes.xlabel)}</text>')
    if axes.ylabel:
        cy = _num(top + ph / 2)
        out.append(f'<text x="18" y="{cy}" text-anchor="middle" '
                   f'transform="rotate(-90 18 {cy})">{escape(axes.ylabel)}</text>')

    for idx, s in enumerate(series):
        color = PALETTE[idx % len(PALETTE)]
        dash = ' stroke-dasharray="6 4"' if s.style == "dashed" else ""
        out.append(f'<g class="series" data-label="{escape(s.label)}">')
        if len(s.x) > 1:
            pts = " ".join(f"{_num(px(x))},{_num(py(y))}" for x, y in zip(s.x, s.y))
            out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" '
                       f'stroke-width="1.5"{dash}/>')
        for k, (x, y) in enumerate(zip(s.x, s.y)):
            if s.errors is not None:
                e = s.errors[k]
                out.append(f'<line x1="{_num(px(x))}" y1="{_num(py(y - e))}" x2="{_num(px(x))}" '
                           f'y2="{_num(py(y + e))}" stroke="{color}"/>')
            out.append(f'<circle cx="{_num(px(x))}" cy="{_num(py(y))}" r="3" fill="{color}"/>')
        out.append("</g>")
        ly = top + 10 + 20 * idx
        lx = left + pw + 15
        out.append(f'<line x1="{lx}" y1="{ly}" x2="{lx + 20}" y2="{ly}" stroke="{color}" '
                   f'stroke-width="1.5"{dash}/>')
        out.append(f'<text x="{lx + 26}" y="{ly}" dominant-baseline="middle">{escape(s.label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_plot_svg(series, axes: Axes | None = None, path=None) -> Path:
    """Write the plot to ``path``; identical input gives identical bytes."""
    text = render_svg(series, axes)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(text.encode("utf-8"))
    return path
