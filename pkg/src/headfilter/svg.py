"""Minimal hand-written SVG plots: line traces, 2-D histograms, bar groups.

Plots are illustrations only; every figure has a numeric sidecar written by
the caller.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e")


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _header(width: int, height: int) -> list[str]:
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
    ]


def line_panels(
    panels: Sequence[tuple[str, np.ndarray]],
    x_label: str = "frame",
    width: int = 720,
    panel_height: int = 140,
) -> str:
    """One stacked panel per ``(title, values)`` trace, each autoscaled."""
    margin = 40
    height = margin + len(panels) * (panel_height + 20)
    out = _header(width, height)
    for k, (title, values) in enumerate(panels):
        y0 = 20 + k * (panel_height + 20)
        values = np.asarray(values, dtype=float)
        lo, hi = float(values.min()), float(values.max())
        span = hi - lo if hi > lo else 1.0
        xs = margin + np.arange(len(values)) * (width - 2 * margin) / max(len(values) - 1, 1)
        ys = y0 + panel_height - (values - lo) / span * panel_height
        pts = " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in zip(xs, ys))
        out.append(
            f'<rect x="{margin}" y="{y0}" width="{width - 2 * margin}" '
            f'height="{panel_height}" fill="none" stroke="#999"/>'
        )
        out.append(f'<text x="{margin + 4}" y="{y0 + 12}">{title} [{lo:.3g}, {hi:.3g}]</text>')
        out.append(
            f'<polyline points="{pts}" fill="none" stroke="{PALETTE[k % len(PALETTE)]}" '
            'stroke-width="1.2"/>'
        )
    out.append(f'<text x="{width // 2}" y="{height - 8}" text-anchor="middle">{x_label}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def histogram_panels(
    panels: Sequence[tuple[str, np.ndarray]],
    size: int = 220,
) -> str:
    """Side-by-side grayscale heat maps of 2-D histograms."""
    gap = 20
    width = len(panels) * (size + gap) + gap
    height = size + 50
    out = _header(width, height)
    for k, (title, hist) in enumerate(panels):
        hist = np.asarray(hist, dtype=float)
        x0 = gap + k * (size + gap)
        peak = hist.max() if hist.max() > 0 else 1.0
        nx, ny = hist.shape
        cw, ch = size / nx, size / ny
        out.append(f'<text x="{x0}" y="16">{title}</text>')
        for i in range(nx):
            for j in range(ny):
                if hist[i, j] <= 0:
                    continue
                level = int(255 - 255 * hist[i, j] / peak)
                out.append(
                    f'<rect x="{_fmt(x0 + i * cw)}" y="{_fmt(24 + size - (j + 1) * ch)}" '
                    f'width="{_fmt(cw)}" height="{_fmt(ch)}" '
                    f'fill="rgb({level},{level},{level})"/>'
                )
        out.append(
            f'<rect x="{x0}" y="24" width="{size}" height="{size}" fill="none" stroke="#999"/>'
        )
    out.append("</svg>")
    return "\n".join(out) + "\n"


def grouped_bars(
    groups: Sequence[str],
    series: Sequence[tuple[str, Sequence[float]]],
    y_label: str = "",
    width: int = 640,
    height: int = 300,
) -> str:
    """Bar chart with one cluster per group and one bar per series."""
    margin = 50
    out = _header(width, height)
    peak = max((max(v) for _, v in series), default=1.0) or 1.0
    plot_h = height - 2 * margin
    cluster = (width - 2 * margin) / max(len(groups), 1)
    bar = cluster * 0.8 / max(len(series), 1)
    out.append(
        f'<line x1="{margin}" y1="{height - margin}" x2="{width - margin}" '
        f'y2="{height - margin}" stroke="black"/>'
    )
    for g, name in enumerate(groups):
        cx = margin + g * cluster + cluster * 0.1
        for s, (_, values) in enumerate(series):
            h = values[g] / peak * plot_h
            out.append(
                f'<rect x="{_fmt(cx + s * bar)}" y="{_fmt(height - margin - h)}" '
                f'width="{_fmt(bar * 0.9)}" height="{_fmt(h)}" fill="{PALETTE[s % len(PALETTE)]}"/>'
            )
        out.append(
            f'<text x="{_fmt(cx + cluster * 0.4)}" y="{height - margin + 14}" '
            f'text-anchor="middle">{name}</text>'
        )
    for s, (label, _) in enumerate(series):
        out.append(
            f'<rect x="{margin + s * 110}" y="10" width="10" height="10" '
            f'fill="{PALETTE[s % len(PALETTE)]}"/>'
        )
        out.append(f'<text x="{margin + s * 110 + 14}" y="19">{label}</text>')
    out.append(
        f'<text x="14" y="{height // 2}" transform="rotate(-90 14 {height // 2})" '
        f'text-anchor="middle">{y_label}</text>'
    )
    out.append("</svg>")
    return "\n".join(out) + "\n"
