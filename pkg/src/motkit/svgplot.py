"""Dependency-free SVG charts for ablation curves and motion histograms.

Output is a single self-contained ``.svg`` file; nothing here tries to be a
plotting library beyond what the command-line reports need.
"""

from __future__ import annotations

from typing import Mapping, Sequence

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")

_MARGIN_L, _MARGIN_R, _MARGIN_T, _MARGIN_B = 60, 20, 36, 46


def _esc(text: str) -> str:
    return str(text).replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def _ticks(lo: float, hi: float, n: int = 5) -> list:
    if hi <= lo:
        hi = lo + 1.0
    step = (hi - lo) / (n - 1)
    return [lo + i * step for i in range(n)]


class _Canvas:
    def __init__(self, width: int, height: int, x_range, y_range, title: str, xlabel: str, ylabel: str):
        self.width = width
        self.height = height
        self.x0, self.x1 = x_range
        self.y0, self.y1 = y_range
        if self.x1 <= self.x0:
            self.x1 = self.x0 + 1.0
        if self.y1 <= self.y0:
            self.y1 = self.y0 + 1.0
        self.parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
            f'<rect width="{width}" height="{height}" fill="white"/>',
            f'<text x="{width / 2:.0f}" y="20" text-anchor="middle" font-size="14">{_esc(title)}</text>',
        ]
        self._axes(xlabel, ylabel)

    def px(self, x: float) -> float:
        inner = self.width - _MARGIN_L - _MARGIN_R
        return _MARGIN_L + (x - self.x0) / (self.x1 - self.x0) * inner

    def py(self, y: float) -> float:
        inner = self.height - _MARGIN_T - _MARGIN_B
        return self.height - _MARGIN_B - (y - self.y0) / (self.y1 - self.y0) * inner

    def _axes(self, xlabel: str, ylabel: str) -> None:
        left, right = _MARGIN_L, self.width - _MARGIN_R
        top, bottom = _MARGIN_T, self.height - _MARGIN_B
        self.parts.append(
            f'<path d="M {left} {top} L {left} {bottom} L {right} {bottom}" stroke="black" fill="none"/>'
        )
        for tx in _ticks(self.x0, self.x1):
            x = self.px(tx)
            self.parts.append(f'<line x1="{x:.1f}" y1="{bottom}" x2="{x:.1f}" y2="{bottom + 4}" stroke="black"/>')
            self.parts.append(
                f'<text x="{x:.1f}" y="{bottom + 17}" text-anchor="middle">{tx:g}</text>'
            )
        for ty in _ticks(self.y0, self.y1):
            y = self.py(ty)
            self.parts.append(f'<line x1="{left - 4}" y1="{y:.1f}" x2="{left}" y2="{y:.1f}" stroke="black"/>')
            self.parts.append(
                f'<text x="{left - 7}" y="{y + 4:.1f}" text-anchor="end">{ty:.3g}</text>'
            )
        self.parts.append(
            f'<text x="{(left + right) / 2:.0f}" y="{self.height - 8}" text-anchor="middle">{_esc(xlabel)}</text>'
        )
        self.parts.append(
            f'<text x="14" y="{(top + bottom) / 2:.0f}" text-anchor="middle" '
            f'transform="rotate(-90 14 {(top + bottom) / 2:.0f})">{_esc(ylabel)}</text>'
        )

    def finish(self) -> str:
        return "\n".join(self.parts + ["</svg>"])


def line_chart(
    path,
    series: Mapping[str, tuple],
    title: str = "",
    xlabel: str = "",
    ylabel: str = "",
    width: int = 640,
    height: int = 400,
) -> None:
    """Write a multi-series line chart; ``series`` maps label -> (xs, ys)."""
    all_x = [x for xs, _ in series.values() for x in xs]
    all_y = [y for _, ys in series.values() for y in ys]
    if not all_x:
        raise ValueError("no data to plot")
    pad = 0.05 * (max(all_y) - min(all_y) or 1.0)
    canvas = _Canvas(width, height, (min(all_x), max(all_x)), (min(all_y) - pad, max(all_y) + pad), title, xlabel, ylabel)
    for k, (label, (xs, ys)) in enumerate(series.items()):
        color = PALETTE[k % len(PALETTE)]
        points = " ".join(f"{canvas.px(x):.1f},{canvas.py(y):.1f}" for x, y in zip(xs, ys))
        canvas.parts.append(f'<polyline points="{points}" fill="none" stroke="{color}" stroke-width="2"/>')
        for x, y in zip(xs, ys):
            canvas.parts.append(f'<circle cx="{canvas.px(x):.1f}" cy="{canvas.py(y):.1f}" r="3" fill="{color}"/>')
        canvas.parts.append(
            f'<text x="{width - _MARGIN_R - 6}" y="{_MARGIN_T + 16 + 16 * k}" text-anchor="end" '
            f'fill="{color}">{_esc(label)}</text>'
        )
    with open(path, "w", encoding="ascii") as fh:
        fh.write(canvas.finish())


def histogram_chart(
    path,
    edges: Sequence[float],
    counts: Sequence[int],
    title: str = "",
    xlabel: str = "",
    width: int = 640,
    height: int = 400,
) -> None:
    """Write a bar chart of pre-binned counts; ``edges`` has len(counts) + 1."""
    if len(edges) != len(counts) + 1:
        raise ValueError("edges must have one more entry than counts")
    top = max(counts) if len(counts) else 1
    canvas = _Canvas(width, height, (edges[0], edges[-1]), (0.0, top * 1.05 or 1.0), title, xlabel, "count")
    for i, c in enumerate(counts):
        x_left = canvas.px(edges[i])
        x_right = canvas.px(edges[i + 1])
        y_top = canvas.py(c)
        y_base = canvas.py(0.0)
        canvas.parts.append(
            f'<rect x="{x_left:.1f}" y="{y_top:.1f}" width="{x_right - x_left:.1f}" '
            f'height="{y_base - y_top:.1f}" fill="{PALETTE[0]}" stroke="white" stroke-width="0.5"/>'
        )
    with open(path, "w", encoding="ascii") as fh:
        fh.write(canvas.finish())
