"""Minimal deterministic SVG plotting.

Two plot kinds back the command line tool: a predicted-density figure
(curve, shaded support, atom and outlier markers) and a simulation figure
(eigenvalue histogram with the predicted curve overlaid).  Everything is
written directly as SVG text with fixed formatting, so identical inputs
produce byte-identical files; no timestamps or external plotting
libraries are involved.
"""

from __future__ import annotations

import math
from typing import Optional, Sequence

import numpy as np

__all__ = ["density_svg", "histogram_svg"]

_W, _H = 720, 420
_ML, _MR, _MT, _MB = 62.0, 18.0, 30.0, 46.0
_FONT = 'font-family="Helvetica, Arial, sans-serif"'


def _fmt(x: float) -> str:
    s = f"{float(x):.6g}"
    return "0" if s == "-0" else s


def _nice_ticks(lo: float, hi: float, target: int = 7):
    span = hi - lo
    if span <= 0:
        return [lo]
    raw = span / max(target - 1, 1)
    mag = 10.0 ** math.floor(math.log10(raw))
    step = 10 * mag
    for mult in (1.0, 2.0, 2.5, 5.0, 10.0):
        if span / (mult * mag) <= target:
            step = mult * mag
            break
    first = math.ceil(lo / step - 1e-9)
    ticks = []
    k = first
    while k * step <= hi + 1e-9 * span:
        ticks.append(k * step)
        k += 1
    return ticks


class _Frame:
    """Data-to-pixel mapping for the fixed plot viewport."""

    def __init__(self, xlo, xhi, ylo, yhi):
        self.xlo, self.xhi = float(xlo), float(xhi)
        self.ylo, self.yhi = float(ylo), float(yhi)

    def x(self, v):
        return _ML + (float(v) - self.xlo) / (self.xhi - self.xlo) * (_W - _ML - _MR)

    def y(self, v):
        return _H - _MB - (float(v) - self.ylo) / (self.yhi - self.ylo) * (_H - _MT - _MB)


def _open_svg(comments: Sequence[str]):
    parts = ['<?xml version="1.0" encoding="UTF-8"?>',
             f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" '
             f'height="{_H}" viewBox="0 0 {_W} {_H}">']
    for c in comments:
        parts.append(f"<!-- {c} -->")
    parts.append(f'<rect x="0" y="0" width="{_W}" height="{_H}" fill="#ffffff"/>')
    return parts


def _axes(parts, frame: _Frame, xlabel: str, ylabel: str, title: str):
    x0, x1 = _ML, _W - _MR
    y0, y1 = _H - _MB, _MT
    for t in _nice_ticks(frame.xlo, frame.xhi):
        px = frame.x(t)
        parts.append(f'<line x1="{_fmt(px)}" y1="{y0}" x2="{_fmt(px)}" '
                     f'y2="{y0 + 5}" stroke="#444444" stroke-width="1"/>')
        parts.append(f'<text x="{_fmt(px)}" y="{y0 + 18}" {_FONT} '
                     f'font-size="11" fill="#444444" '
                     f'text-anchor="middle">{_fmt(t)}</text>')
    for t in _nice_ticks(frame.ylo, frame.yhi, target=6):
        py = frame.y(t)
        parts.append(f'<line x1="{x0 - 5}" y1="{_fmt(py)}" x2="{x0}" '
                     f'y2="{_fmt(py)}" stroke="#444444" stroke-width="1"/>')
        parts.append(f'<text x="{x0 - 8}" y="{_fmt(py + 4)}" {_FONT} '
                     f'font-size="11" fill="#444444" '
                     f'text-anchor="end">{_fmt(t)}</text>')
    parts.append(f'<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" '
                 f'stroke="#222222" stroke-width="1.2"/>')
    parts.append(f'<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" '
                 f'stroke="#222222" stroke-width="1.2"/>')
    parts.append(f'<text x="{_fmt((x0 + x1) / 2)}" y="{_H - 10}" {_FONT} '
                 f'font-size="12" fill="#222222" '
                 f'text-anchor="middle">{xlabel}</text>')
    parts.append(f'<text x="16" y="{_fmt((y0 + y1) / 2)}" {_FONT} '
                 f'font-size="12" fill="#222222" text-anchor="middle" '
                 f'transform="rotate(-90 16 {_fmt((y0 + y1) / 2)})">{ylabel}</text>')
    if title:
        parts.append(f'<text x="{_fmt((x0 + x1) / 2)}" y="20" {_FONT} '
                     f'font-size="13" fill="#222222" '
                     f'text-anchor="middle">{title}</text>')


def _y_cap(values: np.ndarray) -> float:
    """Plot ceiling that keeps singular edge columns from flattening the rest."""
    finite_max = float(values.max(initial=0.0))
    if finite_max <= 0:
        return 1.0
    p = float(np.percentile(values, 99.0))
    if finite_max > 5 * max(p, 1e-12):
        return 5 * max(p, finite_max / 50.0)
    return finite_max


def _polyline(frame, xs, ys, color, width="1.6", dash=None):
    pts = " ".join(f"{_fmt(frame.x(x))},{_fmt(frame.y(y))}"
                   for x, y in zip(xs, ys))
    extra = f' stroke-dasharray="{dash}"' if dash else ""
    return (f'<polyline points="{pts}" fill="none" stroke="{color}" '
            f'stroke-width="{width}"{extra}/>')


def _vline(frame, x, color, dash="5,4", width="1.3"):
    return (f'<line x1="{_fmt(frame.x(x))}" y1="{_MT}" '
            f'x2="{_fmt(frame.x(x))}" y2="{_H - _MB}" stroke="{color}" '
            f'stroke-width="{width}" stroke-dasharray="{dash}"/>')


def _predicted_markers(parts, frame, report):
    for zero in report.zeros:
        parts.append(_vline(frame, zero.t, "#c0392b"))
        px, py = frame.x(zero.t), _MT + 12.0
        parts.append(f'<path d="M {_fmt(px - 4)} {_fmt(py)} L {_fmt(px)} '
                     f'{_fmt(py - 6)} L {_fmt(px + 4)} {_fmt(py)} L {_fmt(px)} '
                     f'{_fmt(py + 6)} Z" fill="#c0392b"/>')
        parts.append(f'<text x="{_fmt(px)}" y="{_fmt(py + 22)}" {_FONT} '
                     f'font-size="10" fill="#c0392b" text-anchor="middle">'
                     f'{_fmt(zero.t)}</text>')


def density_svg(profile, report=None, title: str = "predicted density",
                comments: Sequence[str] = ()) -> str:
    """Density curve with shaded support, atoms and predicted outliers."""
    grid = np.asarray(profile.grid, dtype=float)
    dens = np.asarray(profile.density, dtype=float)
    xs = [grid[0], grid[-1]]
    if report is not None:
        xs += [z.t for z in report.zeros]
    xlo, xhi = min(xs), max(xs)
    pad = 0.04 * (xhi - xlo or 1.0)
    frame = _Frame(xlo - pad, xhi + pad, 0.0, 1.15 * _y_cap(dens))

    parts = _open_svg(comments)
    for a, b in profile.support_intervals:
        parts.append(f'<rect x="{_fmt(frame.x(a))}" y="{_MT}" '
                     f'width="{_fmt(frame.x(b) - frame.x(a))}" '
                     f'height="{_fmt(_H - _MT - _MB)}" fill="#e8f1f8"/>')
    _axes(parts, frame, "x", "density", title)
    clipped = np.minimum(dens, frame.yhi * 0.995)
    parts.append(_polyline(frame, grid, clipped, "#1b6ca8"))
    for loc, mass in profile.atoms:
        px = frame.x(loc)
        top = frame.y(frame.yhi * 0.86)
        parts.append(f'<line x1="{_fmt(px)}" y1="{_fmt(frame.y(0.0))}" '
                     f'x2="{_fmt(px)}" y2="{_fmt(top)}" stroke="#7d3c98" '
                     f'stroke-width="2.2"/>')
        parts.append(f'<circle cx="{_fmt(px)}" cy="{_fmt(top)}" r="3.2" '
                     f'fill="#7d3c98"/>')
        parts.append(f'<text x="{_fmt(px + 5)}" y="{_fmt(top - 4)}" {_FONT} '
                     f'font-size="10" fill="#7d3c98">mass {_fmt(mass)}</text>')
    if report is not None:
        _predicted_markers(parts, frame, report)
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def histogram_svg(eigenvalues: np.ndarray, profile=None, report=None,
                  empirical_outliers: Sequence[float] = (),
                  title: str = "simulated spectrum",
                  comments: Sequence[str] = ()) -> str:
    """Normalized eigenvalue histogram with the predicted curve overlaid."""
    eigs = np.sort(np.asarray(eigenvalues, dtype=float))
    if eigs.size == 0:
        raise ValueError("histogram needs at least one eigenvalue")
    xs = [eigs[0], eigs[-1]]
    if profile is not None:
        xs += [profile.grid[0], profile.grid[-1]]
    if report is not None:
        xs += [z.t for z in report.zeros]
    xlo, xhi = float(min(xs)), float(max(xs))
    pad = 0.04 * (xhi - xlo or 1.0)

    nbins = int(max(24, min(120, round(math.sqrt(eigs.size) * 1.5))))
    counts, edges = np.histogram(eigs, bins=nbins, range=(xlo, xhi))
    width = edges[1] - edges[0]
    heights = counts / (eigs.size * width)

    cap_src = heights
    if profile is not None:
        cap_src = np.concatenate([heights, np.asarray(profile.density)])
    frame = _Frame(xlo - pad, xhi + pad, 0.0, 1.15 * _y_cap(cap_src))

    parts = _open_svg(comments)
    _axes(parts, frame, "eigenvalue", "density", title)
    y0 = frame.y(0.0)
    for h, e in zip(heights, edges[:-1]):
        if h <= 0:
            continue
        ytop = frame.y(min(h, frame.yhi * 0.995))
        parts.append(f'<rect x="{_fmt(frame.x(e))}" y="{_fmt(ytop)}" '
                     f'width="{_fmt(frame.x(e + width) - frame.x(e))}" '
                     f'height="{_fmt(y0 - ytop)}" fill="#cfd8dc" '
                     f'stroke="#90a4ae" stroke-width="0.6"/>')
    if profile is not None:
        dens = np.minimum(np.asarray(profile.density), frame.yhi * 0.995)
        parts.append(_polyline(frame, profile.grid, dens, "#1b6ca8"))
    if report is not None:
        _predicted_markers(parts, frame, report)
    for x in empirical_outliers:
        px = frame.x(x)
        base = y0 - 10.0
        parts.append(f'<path d="M {_fmt(px - 4)} {_fmt(base - 4)} '
                     f'L {_fmt(px + 4)} {_fmt(base + 4)} '
                     f'M {_fmt(px - 4)} {_fmt(base + 4)} '
                     f'L {_fmt(px + 4)} {_fmt(base - 4)}" stroke="#e67e22" '
                     f'stroke-width="1.8" fill="none"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
