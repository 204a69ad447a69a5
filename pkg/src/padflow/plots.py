"""Hand-emitted SVG plots (no plotting dependency): point-set scatter grids,
planar-arm pose overlays, and binary image grids. Fixed 600x600 panels with
equal axes; output is deterministic for identical inputs."""

from __future__ import annotations

import numpy as np

PANEL = 600
MARGIN = 40

_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _fmt(v):
    return f"{v:.2f}"


def _scatter_panel(points, x0, y0, lim, color, label):
    parts = [
        f'<rect x="{x0}" y="{y0}" width="{PANEL}" height="{PANEL}" '
        'fill="white" stroke="black" stroke-width="1"/>'
    ]
    if label:
        parts.append(
            f'<text x="{x0 + 10}" y="{y0 + 24}" font-size="20" '
            f'font-family="monospace">{label}</text>'
        )
    scale = (PANEL - 2 * MARGIN) / (2 * lim)
    for px, py in np.atleast_2d(points):
        cx = x0 + MARGIN + (px + lim) * scale
        cy = y0 + PANEL - MARGIN - (py + lim) * scale
        if x0 <= cx <= x0 + PANEL and y0 <= cy <= y0 + PANEL:
            parts.append(
                f'<circle cx="{_fmt(cx)}" cy="{_fmt(cy)}" r="2" '
                f'fill="{color}" fill-opacity="0.6"/>'
            )
    return parts


def scatter_grid_svg(path, rows, lim=1.5):
    """rows: list of (label, list_of_point_arrays); one SVG row per entry,
    one panel per point array."""
    n_cols = max(len(sets) for _, sets in rows)
    width = n_cols * PANEL
    height = len(rows) * PANEL
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{height}" viewBox="0 0 {width} {height}">'
    ]
    for r, (label, sets) in enumerate(rows):
        color = _COLORS[r % len(_COLORS)]
        for c, pts in enumerate(sets):
            panel_label = label if c == 0 else ""
            parts.extend(
                _scatter_panel(pts, c * PANEL, r * PANEL, lim, color, panel_label)
            )
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts))


def arm_overlay_svg(path, arm, solutions, target_xy, lim=None):
    """Draw each joint-angle solution as a polyline from the origin, with the
    target end-effector position marked."""
    lim = lim if lim is not None else arm.reach * 1.1
    scale = (PANEL - 2 * MARGIN) / (2 * lim)

    def to_px(x, y):
        return MARGIN + (x + lim) * scale, PANEL - MARGIN - (y + lim) * scale

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{PANEL}" '
        f'height="{PANEL}" viewBox="0 0 {PANEL} {PANEL}">',
        f'<rect width="{PANEL}" height="{PANEL}" fill="white" stroke="black"/>',
    ]
    lengths = np.asarray(arm.lengths)
    for theta in np.atleast_2d(solutions):
        cum = np.cumsum(theta)
        xs = np.concatenate([[0.0], np.cumsum(lengths * np.cos(cum))])
        ys = np.concatenate([[0.0], np.cumsum(lengths * np.sin(cum))])
        pts = " ".join(
            f"{_fmt(px)},{_fmt(py)}" for px, py in (to_px(x, y) for x, y in zip(xs, ys))
        )
        parts.append(
            f'<polyline points="{pts}" fill="none" stroke="#1f77b4" '
            'stroke-width="1.5" stroke-opacity="0.25"/>'
        )
    tx, ty = to_px(target_xy[0], target_xy[1])
    parts.append(
        f'<circle cx="{_fmt(tx)}" cy="{_fmt(ty)}" r="6" fill="none" '
        'stroke="#d62728" stroke-width="3"/>'
    )
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts))


def image_grid_svg(path, images, side, cols=8, cell=64):
    """Render flattened grayscale images (values in [0, 1]) as a grid."""
    images = np.atleast_2d(np.asarray(images, dtype=np.float64))
    n = images.shape[0]
    rows = (n + cols - 1) // cols
    pad = 4
    width = cols * (side * (cell // side) + pad) + pad
    px = cell // side
    height = rows * (side * px + pad) + pad
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="#dddddd"/>',
    ]
    for i, img in enumerate(images):
        gx = pad + (i % cols) * (side * px + pad)
        gy = pad + (i // cols) * (side * px + pad)
        grid = img.reshape(side, side)
        for r in range(side):
            for c in range(side):
                shade = int(round(255 * (1.0 - grid[r, c])))
                parts.append(
                    f'<rect x="{gx + c * px}" y="{gy + r * px}" width="{px}" '
                    f'height="{px}" fill="rgb({shade},{shade},{shade})"/>'
                )
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts))
