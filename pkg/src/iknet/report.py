"""Static SVG charts for run artifacts.

Hand-built markup so the output is a pure function of the data: no
timestamps, no library version drift, byte-identical across reruns of the
same run. Charts are sized by viewBox and scale in any renderer.
"""

from __future__ import annotations

import math
import os
from xml.sax.saxutils import escape

import numpy as np

from .errors import ValidationError

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#8c564b", "#e377c2")
_MARGIN = {"left": 62.0, "right": 18.0, "top": 34.0, "bottom": 42.0}


def _fmt(v: float) -> str:
    """Pixel coordinate with stable short formatting."""
    return f"{v:.2f}".rstrip("0").rstrip(".")


def _check_values(name: str, values: np.ndarray) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 1 or values.size == 0:
        raise ValidationError(f"{name} must be a non-empty 1-d array")
    if not np.isfinite(values).all():
        raise ValidationError(f"{name} contains non-finite values")
    return values


def _y_scale(lo: float, hi: float, height: float):
    if hi == lo:
        hi, lo = hi + 0.5, lo - 0.5
    pad = 0.05 * (hi - lo)
    lo, hi = lo - pad, hi + pad
    inner = height - _MARGIN["top"] - _MARGIN["bottom"]

    def to_px(v: float) -> float:
        return _MARGIN["top"] + inner * (hi - v) / (hi - lo)

    return lo, hi, to_px


def _tick_values(lo: float, hi: float, n: int = 5) -> list[float]:
    step = (hi - lo) / (n - 1)
    return [lo + i * step for i in range(n)]


def line_chart(
    series: list[tuple[str, np.ndarray]],
    x_labels: list[str],
    title: str,
    width: float = 900.0,
    height: float = 320.0,
) -> str:
    """Indexed polylines with shared x labels; one legend row per series."""
    if not series:
        raise ValidationError("line chart needs at least one series")
    n = len(x_labels)
    if n < 2:
        raise ValidationError("line chart needs at least two x positions")
    arrays = []
    for label, values in series:
        values = _check_values(f"series {label!r}", values)
        if values.size != n:
            raise ValidationError(
                f"series {label!r} has {values.size} points for {n} x labels"
            )
        arrays.append((label, values))

    stacked = np.concatenate([v for _, v in arrays])
    lo, hi, to_py = _y_scale(float(stacked.min()), float(stacked.max()), height)
    inner_w = width - _MARGIN["left"] - _MARGIN["right"]

    def to_px(i: int) -> float:
        return _MARGIN["left"] + inner_w * i / (n - 1)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {_fmt(width)} '
        f'{_fmt(height)}" font-family="sans-serif" font-size="11">',
        f'<rect width="{_fmt(width)}" height="{_fmt(height)}" fill="white"/>',
        f'<text x="{_fmt(width / 2)}" y="20" text-anchor="middle" '
        f'font-size="14">{escape(title)}</text>',
    ]
    bottom = height - _MARGIN["bottom"]
    for tick in _tick_values(lo, hi):
        y = to_py(tick)
        parts.append(
            f'<line x1="{_fmt(_MARGIN["left"])}" y1="{_fmt(y)}" '
            f'x2="{_fmt(width - _MARGIN["right"])}" y2="{_fmt(y)}" '
            f'stroke="#dddddd" stroke-width="1"/>'
        )
        parts.append(
            f'<text x="{_fmt(_MARGIN["left"] - 6)}" y="{_fmt(y + 4)}" '
            f'text-anchor="end">{escape(f"{tick:.4g}")}</text>'
        )
    step = max(1, (n - 1) // 6)
    for i in range(0, n, step):
        x = to_px(i)
        parts.append(
            f'<line x1="{_fmt(x)}" y1="{_fmt(bottom)}" x2="{_fmt(x)}" '
            f'y2="{_fmt(bottom + 4)}" stroke="#555555" stroke-width="1"/>'
        )
        parts.append(
            f'<text x="{_fmt(x)}" y="{_fmt(bottom + 16)}" '
            f'text-anchor="middle">{escape(x_labels[i])}</text>'
        )
    for k, (label, values) in enumerate(arrays):
        color = PALETTE[k % len(PALETTE)]
        points = " ".join(
            f"{_fmt(to_px(i))},{_fmt(to_py(float(v)))}" for i, v in enumerate(values)
        )
        parts.append(
            f'<polyline fill="none" stroke="{color}" stroke-width="1.5" '
            f'points="{points}"/>'
        )
        ly = _MARGIN["top"] + 14 * k
        lx = width - _MARGIN["right"] - 150
        parts.append(
            f'<line x1="{_fmt(lx)}" y1="{_fmt(ly)}" x2="{_fmt(lx + 18)}" '
            f'y2="{_fmt(ly)}" stroke="{color}" stroke-width="2"/>'
        )
        parts.append(
            f'<text x="{_fmt(lx + 24)}" y="{_fmt(ly + 4)}">{escape(label)}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts)


def bar_chart(
    labels: list[str],
    values: np.ndarray,
    title: str,
    width: float = 760.0,
) -> str:
    """Horizontal bars sized against the largest magnitude, top to bottom."""
    values = _check_values("bar values", values)
    if len(labels) != values.size:
        raise ValidationError(
            f"{len(labels)} labels for {values.size} bar values"
        )
    row = 22.0
    height = _MARGIN["top"] + row * values.size + 16.0
    label_w = 240.0
    inner_w = width - label_w - _MARGIN["right"] - 70.0
    peak = float(np.abs(values).max())
    scale = inner_w / peak if peak > 0 else 0.0

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {_fmt(width)} '
        f'{_fmt(height)}" font-family="sans-serif" font-size="11">',
        f'<rect width="{_fmt(width)}" height="{_fmt(height)}" fill="white"/>',
        f'<text x="{_fmt(width / 2)}" y="20" text-anchor="middle" '
        f'font-size="14">{escape(title)}</text>',
    ]
    for i, (label, v) in enumerate(zip(labels, values)):
        y = _MARGIN["top"] + row * i
        bar = abs(float(v)) * scale
        color = PALETTE[0] if v >= 0 else PALETTE[1]
        parts.append(
            f'<text x="{_fmt(label_w - 8)}" y="{_fmt(y + 14)}" '
            f'text-anchor="end">{escape(label)}</text>'
        )
        parts.append(
            f'<rect class="bar" x="{_fmt(label_w)}" y="{_fmt(y + 4)}" '
            f'width="{_fmt(bar)}" height="14" fill="{color}"/>'
        )
        parts.append(
            f'<text x="{_fmt(label_w + bar + 6)}" y="{_fmt(y + 14)}">'
            f'{escape(f"{float(v):.4g}")}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts)


def write_svg(path: str | os.PathLike, svg: str) -> None:
    if not svg.lstrip().startswith("<svg"):
        raise ValidationError("not an svg document")
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(svg)
        if not svg.endswith("\n"):
            fh.write("\n")
    os.replace(tmp, path)


def forecast_chart(series, title: str) -> str:
    """Prediction against actual closes over a test span."""
    return line_chart(
        [("actual", series.y_true), ("predicted", series.y_hat)],
        list(series.dates),
        title,
    )


def importance_chart(ranked: list[tuple[str, float]], title: str, top: int = 20) -> str:
    if not ranked:
        raise ValidationError("importance chart needs at least one group")
    head = ranked[:top]
    return bar_chart(
        [label for label, _ in head],
        np.array([v for _, v in head], dtype=np.float64),
        title,
    )
