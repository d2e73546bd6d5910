"""Deterministic SVG line plots of snapshots: (x, u), (x, m) and (xi, X_xi) panels."""

from dataclasses import dataclass

import numpy as np

WIDTH, HEIGHT = 900, 300
PANEL_W, PANEL_H, MARGIN = 260, 220, 30
COLORS = ("#1f5fa8", "#b8321f", "#2a7d3a")


@dataclass(frozen=True, eq=False)
class Snapshot:
    t: float
    x: np.ndarray
    u: np.ndarray
    m: np.ndarray
    labels: np.ndarray
    Xxi: np.ndarray


def _fmt(v):
    return f"{v:.3f}"


def _polyline(xs, ys, x0, y0, color):
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    ok = np.isfinite(xs) & np.isfinite(ys)
    xs, ys = xs[ok], ys[ok]
    if xs.size == 0:
        return f'<polyline points="" stroke="{color}" fill="none"/>'
    xlo, xhi = float(xs.min()), float(xs.max())
    ylo, yhi = float(ys.min()), float(ys.max())
    if xhi == xlo:
        xhi = xlo + 1.0
    if yhi == ylo:
        yhi = ylo + 1.0
    px = x0 + (xs - xlo) / (xhi - xlo) * PANEL_W
    py = y0 + PANEL_H - (ys - ylo) / (yhi - ylo) * PANEL_H
    pts = " ".join(f"{_fmt(a)},{_fmt(b)}" for a, b in zip(px, py))
    return f'<polyline points="{pts}" stroke="{color}" stroke-width="1.2" fill="none"/>'


def render_svg(snap):
    panels = (("u", snap.x, snap.u), ("m", snap.x, snap.m), ("X_xi", snap.labels, snap.Xxi))
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
           f'viewBox="0 0 {WIDTH} {HEIGHT}">',
           f'<text x="{MARGIN}" y="18" font-size="12">t = {snap.t:.17g}</text>']
    for k, ((name, xs, ys), color) in enumerate(zip(panels, COLORS)):
        x0 = MARGIN + k * (PANEL_W + MARGIN)
        y0 = MARGIN
        out.append(f'<g id="{name}">')
        out.append(f'<rect x="{x0}" y="{y0}" width="{PANEL_W}" height="{PANEL_H}" '
                   'fill="none" stroke="#999"/>')
        out.append(f'<text x="{x0}" y="{y0 + PANEL_H + 16}" font-size="11">{name}</text>')
        out.append(_polyline(xs, ys, x0, y0, color))
        out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_svg(snapshots, directory, stem="snapshot"):
    """Write one SVG per snapshot; returns the written paths."""
    snapshots = list(snapshots)
    if not snapshots:
        raise ValueError("emit_svg needs at least one snapshot")
    paths = []
    for k, snap in enumerate(snapshots):
        path = f"{directory}/{stem}_{k:04d}.svg"
        with open(path, "w") as fh:
            fh.write(render_svg(snap))
        paths.append(path)
    return paths
