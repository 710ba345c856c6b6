"""Minimal scatter-plot writer producing standalone SVG."""

from __future__ import annotations

from pathlib import Path

import numpy as np

_PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
            "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf")


def scatter_svg(points, labels=None, size: int = 480, radius: float = 1.5,
                title: str = "") -> str:
    pts = np.asarray(points, dtype=np.float64)[:, :2]
    if pts.size == 0:
        raise ValueError("nothing to plot")
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    span = float(max(np.max(hi - lo), 1e-9))
    pad = 0.05 * span
    lo = lo - pad
    scale = (size - 1) / (span + 2 * pad)
    px = (pts[:, 0] - lo[0]) * scale
    py = (size - 1) - (pts[:, 1] - lo[1]) * scale
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
        f'viewBox="0 0 {size} {size}">',
        f'<rect width="{size}" height="{size}" fill="white"/>',
    ]
    if title:
        parts.append(f'<text x="6" y="16" font-size="12" font-family="sans-serif">{title}</text>')
    for i, (x, y) in enumerate(zip(px, py)):
        color = _PALETTE[int(labels[i]) % len(_PALETTE)] if labels is not None else _PALETTE[0]
        parts.append(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="{radius}" fill="{color}" '
                     f'fill-opacity="0.6"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write_scatter(path, points, labels=None, **kw) -> None:
    Path(path).write_text(scatter_svg(points, labels, **kw))
