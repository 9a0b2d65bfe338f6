"""Deterministic SVG emission for the diagnostic plots.

Hand-rolled SVG keeps output byte-reproducible under a fixed seed: no
timestamps, no library-versioned ids, fixed-precision coordinates.
"""

from __future__ import annotations

import numpy as np

from .motion import edge_indices

PALETTE = ("#2a9d8f", "#e63946", "#f4a261", "#8338ec", "#1d6fb8", "#6a994e", "#555555")


def _fmt(v: float) -> str:
    return f"{v:.2f}"


class SvgCanvas:
    def __init__(self, width: int, height: int):
        self.width = width
        self.height = height
        self.parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}">',
            f'<rect width="{width}" height="{height}" fill="white"/>',
        ]

    def circle(self, x, y, r, color):
        self.parts.append(f'<circle cx="{_fmt(x)}" cy="{_fmt(y)}" r="{r}" fill="{color}" fill-opacity="0.7"/>')

    def line(self, x0, y0, x1, y1, color, width=1.0):
        self.parts.append(
            f'<line x1="{_fmt(x0)}" y1="{_fmt(y0)}" x2="{_fmt(x1)}" y2="{_fmt(y1)}" '
            f'stroke="{color}" stroke-width="{width}"/>'
        )

    def polyline(self, xs, ys, color, width=1.5):
        pts = " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in zip(xs, ys))
        self.parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="{width}"/>')

    def text(self, x, y, s, size=12, color="#222222"):
        self.parts.append(f'<text x="{_fmt(x)}" y="{_fmt(y)}" font-size="{size}" fill="{color}">{s}</text>')

    def write(self, path):
        self.parts.append("</svg>")
        with open(path, "w") as fh:
            fh.write("\n".join(self.parts) + "\n")


def _scaler(values, lo_px, hi_px):
    vmin, vmax = float(np.min(values)), float(np.max(values))
    span = vmax - vmin if vmax > vmin else 1.0
    return lambda v: lo_px + (v - vmin) / span * (hi_px - lo_px)


def plot_scatter(points: np.ndarray, class_names: list[str], path, title: str = "") -> None:
    """2-D scatter with one color per class name (parallel to points)."""
    canvas = SvgCanvas(640, 480)
    sx = _scaler(points[:, 0], 50, 600)
    sy = _scaler(points[:, 1], 430, 50)
    classes = sorted(set(class_names))
    colors = {c: PALETTE[i % len(PALETTE)] for i, c in enumerate(classes)}
    for (x, y), name in zip(points, class_names):
        canvas.circle(sx(x), sy(y), 3, colors[name])
    for i, c in enumerate(classes):
        canvas.circle(60, 24 + 16 * i, 4, colors[c])
        canvas.text(72, 28 + 16 * i, c)
    if title:
        canvas.text(220, 20, title, size=14)
    canvas.write(path)


def plot_skeletons(gt: np.ndarray, pred: np.ndarray, path, max_frames: int = 8) -> None:
    """Side-by-side ground-truth / predicted stick figures, front (y, z) view."""
    frames = min(len(gt), max_frames)
    panel_w, panel_h = 90, 170
    canvas = SvgCanvas(20 + frames * (2 * panel_w + 20), panel_h + 60)
    both = np.concatenate([gt[:frames], pred[:frames]])
    sy = _scaler(both[:, :, 1], 0, panel_w - 10)
    sz = _scaler(both[:, :, 2], panel_h, 10)
    edges = edge_indices()
    for f in range(frames):
        for offset, pose, color in ((0, gt[f], "#1d6fb8"), (panel_w, pred[f], "#e63946")):
            x0 = 10 + f * (2 * panel_w + 20) + offset
            for i, j in edges:
                canvas.line(x0 + sy(pose[i, 1]), 20 + sz(pose[i, 2]), x0 + sy(pose[j, 1]), 20 + sz(pose[j, 2]), color)
        canvas.text(10 + f * (2 * panel_w + 20), panel_h + 45, f"frame {f}", size=10)
    canvas.text(10, 14, "ground truth (blue) vs predicted (red)")
    canvas.write(path)


def plot_loss_curves(rows: list[dict[str, float]], path) -> None:
    """Loss-history polylines from parsed loss-CSV rows."""
    if not rows:
        raise ValueError("no loss rows to plot")
    keys = [k for k in rows[0] if k != "step"]
    steps = np.array([r["step"] for r in rows])
    canvas = SvgCanvas(640, 480)
    sx = _scaler(steps, 50, 610)
    all_vals = np.array([[r[k] for k in keys] for r in rows])
    sy = _scaler(all_vals, 440, 40)
    for i, key in enumerate(keys):
        color = PALETTE[i % len(PALETTE)]
        canvas.polyline([sx(s) for s in steps], [sy(r[key]) for r in rows], color)
        canvas.circle(60, 24 + 16 * i, 4, color)
        canvas.text(72, 28 + 16 * i, key)
    canvas.write(path)
