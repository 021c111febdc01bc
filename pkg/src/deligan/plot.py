"""Minimal deterministic SVG scatter plots (circles, ellipses, lines, text)."""

from __future__ import annotations

from typing import Optional

import numpy as np

from .data import ToySpec

WIDTH = HEIGHT = 480
MARGIN = 40


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _bounds(points: list[np.ndarray]) -> tuple[float, float, float, float]:
    pts = [p for p in points if len(p)]
    if not pts:
        return -1.0, 1.0, -1.0, 1.0
    allp = np.concatenate(pts)
    lo, hi = allp.min(axis=0), allp.max(axis=0)
    pad = np.maximum((hi - lo) * 0.05, 0.5)
    lo, hi = lo - pad, hi + pad
    return float(lo[0]), float(hi[0]), float(lo[1]), float(hi[1])


def _nice_ticks(lo: float, hi: float, n: int = 5) -> np.ndarray:
    span = hi - lo
    raw = span / n
    mag = 10 ** np.floor(np.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=raw)
    start = np.ceil(lo / step) * step
    return np.arange(start, hi + 1e-9, step)


def scatter_svg(samples: np.ndarray, truth: Optional[ToySpec] = None,
                markers: Optional[np.ndarray] = None, radius_sigmas: float = 3.0,
                title: str = "") -> str:
    """Render 2-D ``samples`` with optional truth-mode ellipses and marker crosses."""
    samples = np.asarray(samples, dtype=np.float64).reshape(-1, 2)
    extent = [samples]
    if truth is not None:
        r = truth.stds * radius_sigmas
        extent += [truth.means - r, truth.means + r]
    if markers is not None:
        markers = np.asarray(markers, dtype=np.float64).reshape(-1, 2)
        extent.append(markers)
    x0, x1, y0, y1 = _bounds(extent)
    span = max(x1 - x0, y1 - y0)
    cx, cy = (x0 + x1) / 2, (y0 + y1) / 2
    x0, x1, y0, y1 = cx - span / 2, cx + span / 2, cy - span / 2, cy + span / 2
    scale = (WIDTH - 2 * MARGIN) / span

    def px(x):
        return MARGIN + (x - x0) * scale

    def py(y):
        return HEIGHT - MARGIN - (y - y0) * scale

    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
    ]
    if title:
        out.append(f'<text x="{WIDTH // 2}" y="20" text-anchor="middle" font-size="14">{title}</text>')
    # axes
    bottom, left = HEIGHT - MARGIN, MARGIN
    out.append(f'<line class="axis" x1="{left}" y1="{bottom}" x2="{WIDTH - MARGIN}" y2="{bottom}" stroke="black"/>')
    out.append(f'<line class="axis" x1="{left}" y1="{bottom}" x2="{left}" y2="{MARGIN}" stroke="black"/>')
    for t in _nice_ticks(x0, x1):
        x = px(t)
        out.append(f'<line x1="{_fmt(x)}" y1="{bottom}" x2="{_fmt(x)}" y2="{bottom + 4}" stroke="black"/>')
        out.append(f'<text x="{_fmt(x)}" y="{bottom + 16}" text-anchor="middle" font-size="10">{t:g}</text>')
    for t in _nice_ticks(y0, y1):
        y = py(t)
        out.append(f'<line x1="{left - 4}" y1="{_fmt(y)}" x2="{left}" y2="{_fmt(y)}" stroke="black"/>')
        out.append(f'<text x="{left - 6}" y="{_fmt(y + 3)}" text-anchor="end" font-size="10">{t:g}</text>')
    if truth is not None:
        for m, s in zip(truth.means, truth.stds):
            out.append(f'<ellipse class="mode" cx="{_fmt(px(m[0]))}" cy="{_fmt(py(m[1]))}" '
                       f'rx="{_fmt(s[0] * radius_sigmas * scale)}" ry="{_fmt(s[1] * radius_sigmas * scale)}" '
                       f'fill="none" stroke="green" stroke-width="1.5"/>')
    for x, y in samples:
        out.append(f'<circle cx="{_fmt(px(x))}" cy="{_fmt(py(y))}" r="1.5" fill="steelblue" fill-opacity="0.6"/>')
    if markers is not None:
        for x, y in markers:
            a, b = px(x), py(y)
            out.append(f'<line class="marker" x1="{_fmt(a - 4)}" y1="{_fmt(b - 4)}" x2="{_fmt(a + 4)}" '
                       f'y2="{_fmt(b + 4)}" stroke="red"/>')
            out.append(f'<line class="marker" x1="{_fmt(a - 4)}" y1="{_fmt(b + 4)}" x2="{_fmt(a + 4)}" '
                       f'y2="{_fmt(b - 4)}" stroke="red"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
