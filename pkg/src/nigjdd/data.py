"""Procedural training images and the cartoon test asset.

Shapes are rasterised at 4x resolution and box-filtered down, so edges are
anti-aliased like a camera-rendered image rather than hard steps.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .imaging import load_png

SUPERSAMPLE = 4


def _grid(size):
    n = size * SUPERSAMPLE
    c = (np.arange(n) + 0.5) / n
    return np.meshgrid(c, c, indexing="ij")


def _downsample(img):
    s = SUPERSAMPLE
    h, w = img.shape[0] // s, img.shape[1] // s
    return img.reshape(h, s, w, s, -1).mean(axis=(1, 3))


def _convex_polygon(rng, yy, xx):
    cy, cx = rng.uniform(0.15, 0.85, 2)
    radius = rng.uniform(0.1, 0.35)
    angles = np.sort(rng.uniform(0, 2 * np.pi, rng.integers(3, 8)))
    vy = cy + radius * np.sin(angles)
    vx = cx + radius * np.cos(angles)
    inside = np.ones_like(yy, dtype=bool)
    for k in range(len(angles)):
        y0, x0 = vy[k], vx[k]
        y1, x1 = vy[(k + 1) % len(angles)], vx[(k + 1) % len(angles)]
        inside &= (x1 - x0) * (yy - y0) - (y1 - y0) * (xx - x0) >= 0
    return inside


def _ellipse(rng, yy, xx):
    cy, cx = rng.uniform(0.15, 0.85, 2)
    ry, rx = rng.uniform(0.05, 0.3, 2)
    theta = rng.uniform(0, np.pi)
    dy, dx = yy - cy, xx - cx
    u = dy * np.cos(theta) + dx * np.sin(theta)
    v = -dy * np.sin(theta) + dx * np.cos(theta)
    return (u / ry) ** 2 + (v / rx) ** 2 <= 1


# Natural images have strongly correlated colour channels; colours here are a
# shared luminance plus a small per-channel offset.
CHROMA_STD = 0.1
MAX_CYCLES = 8.0  # grating frequency cap, cycles per image side


def _color(rng):
    return np.clip(rng.uniform(0.05, 0.95) + rng.normal(0.0, CHROMA_STD, 3), 0.0, 1.0)


def _fill(rng, yy, xx):
    """A flat color, a linear ramp or a sinusoidal grating."""
    c0 = _color(rng)
    kind = rng.integers(3)
    if kind == 0:
        return np.broadcast_to(c0, yy.shape + (3,))
    c1 = _color(rng)
    theta = rng.uniform(0, 2 * np.pi)
    proj = yy * np.sin(theta) + xx * np.cos(theta)
    if kind == 1:
        t = (proj - proj.min()) / max(np.ptp(proj), 1e-12)
    else:
        t = 0.5 + 0.5 * np.sin(2 * np.pi * rng.uniform(1, MAX_CYCLES) * proj + rng.uniform(0, 2 * np.pi))
    return c0 + t[..., None] * (c1 - c0)


def procedural_image(size: int, rng) -> np.ndarray:
    yy, xx = _grid(size)
    img = np.array(_fill(rng, yy, xx), dtype=np.float64)
    for _ in range(rng.integers(2, 6)):
        mask = _convex_polygon(rng, yy, xx) if rng.random() < 0.6 else _ellipse(rng, yy, xx)
        img = np.where(mask[..., None], _fill(rng, yy, xx), img)
    return np.clip(_downsample(img), 0.0, 1.0)


def procedural_dataset(n: int, size: int = 64, seed: int = 0) -> list:
    rng = np.random.default_rng(seed)
    return [procedural_image(size, rng) for _ in range(n)]


def load_image_dir(path) -> list:
    return [load_png(p) for p in sorted(Path(path).glob("*.png"))]


def cartoon(size: int = 64) -> np.ndarray:
    """Flat-shaded face on a plain background, with dark outlines."""
    yy, xx = _grid(size)
    img = np.empty(yy.shape + (3,))
    img[:] = (0.55, 0.78, 0.92)
    img[yy > 0.86] = (0.35, 0.62, 0.30)

    def disk(cy, cx, ry, rx):
        return ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2

    head = disk(0.52, 0.5, 0.34, 0.30)
    img[head <= 1.08] = (0.10, 0.08, 0.08)
    img[head <= 1.0] = (0.98, 0.82, 0.68)
    hair = (disk(0.33, 0.5, 0.2, 0.31) <= 1) & (yy < 0.36)
    img[hair] = (0.45, 0.25, 0.10)
    for cx in (0.38, 0.62):
        eye = disk(0.52, cx, 0.07, 0.06)
        img[eye <= 1.15] = (0.10, 0.08, 0.08)
        img[eye <= 1.0] = (1.0, 1.0, 1.0)
        img[disk(0.53, cx, 0.03, 0.03) <= 1] = (0.15, 0.30, 0.60)
    mouth = (disk(0.66, 0.5, 0.08, 0.13) <= 1) & (yy > 0.66)
    img[mouth] = (0.80, 0.15, 0.20)
    img[disk(0.60, 0.5, 0.03, 0.025) <= 1] = (0.90, 0.62, 0.50)
    return np.clip(_downsample(img), 0.0, 1.0)
