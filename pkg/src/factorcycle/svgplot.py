"""Dependency-free SVG line charts for run and comparison plots.

Every chart is two side-by-side panels: weighted reconstruction loss vs
step on the left, |rho| vs step on the right. Each panel is one <g
class="panel"> group, so the file is diffable and trivially checkable as
XML.
"""

from __future__ import annotations

from typing import NamedTuple
from xml.sax.saxutils import escape

import numpy as np

PANEL_W = 460
PANEL_H = 340
MARGIN_L = 64
MARGIN_R = 16
MARGIN_T = 40
MARGIN_B = 44
MAX_POINTS = 1500

MODE_COLORS = {
    "uncooperative": "#1f77b4",
    "cooperative": "#d62728",
}
_FALLBACK_COLORS = ("#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


class Series(NamedTuple):
    x: np.ndarray
    y: np.ndarray
    color: str
    label: str


def _downsample(x, y):
    if len(x) <= MAX_POINTS:
        return x, y
    stride = int(np.ceil(len(x) / MAX_POINTS))
    # always keep the final point; curves are judged by where they end up
    xi = np.concatenate([x[::stride], x[-1:]])
    yi = np.concatenate([y[::stride], y[-1:]])
    return xi, yi


def _span(values, fallback=(0.0, 1.0)):
    finite = values[np.isfinite(values)]
    if finite.size == 0:
        return fallback
    lo, hi = float(finite.min()), float(finite.max())
    if lo == hi:
        pad = abs(lo) * 0.1 or 1.0
        return lo - pad, hi + pad
    pad = (hi - lo) * 0.05
    return lo - pad, hi + pad


def _fmt_tick(v: float) -> str:
    return f"{v:.4g}"


def _panel(series: list[Series], title: str, x_label: str, y_label: str) -> str:
    """One <g class="panel"> containing axes, curves, and a legend."""
    xs = np.concatenate([s.x for s in series]) if series else np.array([0.0, 1.0])
    ys = np.concatenate([s.y for s in series]) if series else np.array([0.0, 1.0])
    x_lo, x_hi = _span(np.asarray(xs, dtype=np.float64))
    y_lo, y_hi = _span(np.asarray(ys, dtype=np.float64))

    iw = PANEL_W - MARGIN_L - MARGIN_R
    ih = PANEL_H - MARGIN_T - MARGIN_B

    def sx(v):
        return MARGIN_L + (v - x_lo) / (x_hi - x_lo) * iw

    def sy(v):
        return MARGIN_T + ih - (v - y_lo) / (y_hi - y_lo) * ih

    parts = [f'<g class="panel" data-title="{escape(title, {chr(34): "&quot;"})}">']
    parts.append(
        f'<text x="{MARGIN_L}" y="{MARGIN_T - 18}" font-size="13" '
        f'font-family="monospace" font-weight="bold">{escape(title)}</text>'
    )
    # frame
    parts.append(
        f'<rect x="{MARGIN_L}" y="{MARGIN_T}" width="{iw}" height="{ih}" '
        'fill="none" stroke="#333" stroke-width="1"/>'
    )
    # ticks
    for v in np.linspace(x_lo, x_hi, 5):
        px = sx(v)
        parts.append(
            f'<line x1="{px:.1f}" y1="{MARGIN_T + ih}" x2="{px:.1f}" '
            f'y2="{MARGIN_T + ih + 4}" stroke="#333"/>'
        )
        parts.append(
            f'<text x="{px:.1f}" y="{MARGIN_T + ih + 16}" font-size="10" '
            f'font-family="monospace" text-anchor="middle">{_fmt_tick(v)}</text>'
        )
    for v in np.linspace(y_lo, y_hi, 5):
        py = sy(v)
        parts.append(
            f'<line x1="{MARGIN_L - 4}" y1="{py:.1f}" x2="{MARGIN_L}" '
            f'y2="{py:.1f}" stroke="#333"/>'
        )
        parts.append(
            f'<text x="{MARGIN_L - 7}" y="{py + 3:.1f}" font-size="10" '
            f'font-family="monospace" text-anchor="end">{_fmt_tick(v)}</text>'
        )
    parts.append(
        f'<text x="{MARGIN_L + iw / 2:.1f}" y="{PANEL_H - 8}" font-size="11" '
        f'font-family="monospace" text-anchor="middle">{escape(x_label)}</text>'
    )
    parts.append(
        f'<text x="14" y="{MARGIN_T + ih / 2:.1f}" font-size="11" '
        f'font-family="monospace" text-anchor="middle" '
        f'transform="rotate(-90 14 {MARGIN_T + ih / 2:.1f})">{escape(y_label)}</text>'
    )
    # curves
    for s in series:
        x, y = _downsample(np.asarray(s.x, float), np.asarray(s.y, float))
        keep = np.isfinite(y)
        pts = " ".join(f"{sx(a):.1f},{sy(b):.1f}" for a, b in zip(x[keep], y[keep]))
        if pts:
            parts.append(
                f'<polyline points="{pts}" fill="none" stroke="{s.color}" '
                'stroke-width="1.3"/>'
            )
    # legend (deduplicated labels, insertion order)
    seen: dict[str, str] = {}
    for s in series:
        seen.setdefault(s.label, s.color)
    for i, (label, color) in enumerate(seen.items()):
        ly = MARGIN_T + 12 + 14 * i
        parts.append(
            f'<line x1="{MARGIN_L + 8}" y1="{ly}" x2="{MARGIN_L + 28}" '
            f'y2="{ly}" stroke="{color}" stroke-width="2"/>'
        )
        parts.append(
            f'<text x="{MARGIN_L + 33}" y="{ly + 3}" font-size="10" '
            f'font-family="monospace">{escape(label)}</text>'
        )
    parts.append("</g>")
    return "\n".join(parts)


def render_two_panel(path, left: list[Series], right: list[Series],
                     left_title: str = "weighted reconstruction loss",
                     right_title: str = "residual correlation |rho|") -> None:
    width = 2 * PANEL_W
    body = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{PANEL_H}" viewBox="0 0 {width} {PANEL_H}">',
        f'<rect x="0" y="0" width="{width}" height="{PANEL_H}" fill="white"/>',
        _panel(left, left_title, "step", "loss"),
        f'<g transform="translate({PANEL_W} 0)">'
        + _panel(right, right_title, "step", "|rho|")
        + "</g>",
        "</svg>",
    ]
    with open(path, "w") as fh:
        fh.write("\n".join(body) + "\n")


def _color_for(mode: str, i: int) -> str:
    return MODE_COLORS.get(mode, _FALLBACK_COLORS[i % len(_FALLBACK_COLORS)])


def _recon_from_cols(cols, lambda_v, lambda_c, lambda_r):
    return (lambda_v * cols["loss_v"] + lambda_c * cols["loss_c"]
            + lambda_r * cols["loss_r"])


def plot_run(path, cols: dict, lambda_v: float, lambda_c: float,
             lambda_r: float, label: str = "run") -> None:
    """Two-panel chart of one run from metrics.csv columns."""
    steps = cols["step"].astype(np.float64)
    recon = _recon_from_cols(cols, lambda_v, lambda_c, lambda_r)
    left = [Series(steps, recon, _color_for(label, 0), label)]
    mask = np.isfinite(cols["rho"])
    right = [Series(steps[mask], cols["rho"][mask], _color_for(label, 0), label)]
    render_two_panel(path, left, right)


def plot_compare(path, runs: list[tuple[str, int, dict]], lambda_v: float,
                 lambda_c: float, lambda_r: float) -> None:
    """Two-panel chart of (mode, seed, columns) runs, colored by mode."""
    left: list[Series] = []
    right: list[Series] = []
    for i, (mode, _seed, cols) in enumerate(runs):
        color = _color_for(mode, i)
        steps = cols["step"].astype(np.float64)
        recon = _recon_from_cols(cols, lambda_v, lambda_c, lambda_r)
        left.append(Series(steps, recon, color, mode))
        mask = np.isfinite(cols["rho"])
        right.append(Series(steps[mask], cols["rho"][mask], color, mode))
    render_two_panel(path, left, right)
