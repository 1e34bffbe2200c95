"""Bayer CFA sampling, bilinear demosaicking, 2x2 packing and the
phase-preserving dihedral transforms used by the self-ensemble."""

from __future__ import annotations

from typing import Callable

import numpy as np
from scipy.ndimage import correlate

from .imaging import ImageError, RawMosaic, as_image, check_even

# color index (0=R, 1=G, 2=B) at tile offsets (0,0), (0,1), (1,0), (1,1)
_TILES = {
    "RGGB": (0, 1, 1, 2),
    "GRBG": (1, 0, 2, 1),
    "GBRG": (1, 2, 0, 1),
    "BGGR": (2, 1, 1, 0),
}

_GREEN_KERNEL = np.array([[0, 1, 0], [1, 4, 1], [0, 1, 0]], dtype=np.float64) / 4
_RB_KERNEL = np.array([[1, 2, 1], [2, 4, 2], [1, 2, 1]], dtype=np.float64) / 4


def cfa_masks(shape, phase: str = "RGGB") -> np.ndarray:
    """Boolean ``(H, W, 3)`` mask of which channel each raw pixel samples."""
    h, w = shape[:2]
    tile = _TILES[phase]
    rows = np.arange(h)[:, None] % 2
    cols = np.arange(w)[None, :] % 2
    idx = np.choose(rows * 2 + cols, tile)
    return idx[..., None] == np.arange(3)


def mosaic(image, phase: str = "RGGB") -> RawMosaic:
    img = as_image(image)
    check_even(img.shape)
    m = cfa_masks(img.shape, phase)
    return RawMosaic((img * m).sum(axis=2), phase)


def bilinear_demosaic(raw: RawMosaic) -> np.ndarray:
    """Bilinear interpolation with shrinking support at the borders.

    Known samples are copied through. Each missing value is the mean of the
    in-bounds same-channel samples in its 3x3 neighbourhood: the 4-connected
    ones for green, axial or diagonal ones for red/blue.
    """
    data = raw.data
    masks = cfa_masks(data.shape, raw.phase)
    out = np.empty(data.shape + (3,))
    for ch in range(3):
        m = masks[..., ch].astype(np.float64)
        kernel = _GREEN_KERNEL if ch == 1 else _RB_KERNEL
        num = correlate(data * m, kernel, mode="constant")
        den = correlate(m, kernel, mode="constant")
        out[..., ch] = np.where(masks[..., ch], data, num / den)
    return out


def embed(raw: RawMosaic) -> np.ndarray:
    """Place raw samples into their color planes, zeros elsewhere."""
    return raw.data[..., None] * cfa_masks(raw.shape, raw.phase)


def pack4(raw) -> np.ndarray:
    """Space-to-depth: ``(..., H, W)`` -> ``(..., 4, H/2, W/2)``.

    Plane ``2*r + c`` holds tile offset ``(r, c)``.
    """
    a = raw.data if isinstance(raw, RawMosaic) else np.asarray(raw)
    check_even(a.shape[-2:])
    return np.stack([a[..., r::2, c::2] for r in (0, 1) for c in (0, 1)], axis=-3)


def unpack4(planes) -> np.ndarray:
    planes = np.asarray(planes)
    if planes.shape[-3] != 4:
        raise ImageError(f"expected 4 planes, got shape {planes.shape}")
    h, w = planes.shape[-2:]
    out = np.empty(planes.shape[:-3] + (2 * h, 2 * w), dtype=planes.dtype)
    for k in range(4):
        out[..., k // 2 :: 2, k % 2 :: 2] = planes[..., k, :, :]
    return out


def to_rggb(raw: RawMosaic) -> RawMosaic:
    """Crop a raw of any Bayer phase to RGGB.

    A one-pixel shift is needed along each axis whose parity disagrees; one
    pixel is then dropped from the far edge as well so dimensions stay even.
    """
    dr, dc = {"RGGB": (0, 0), "GRBG": (0, 1), "GBRG": (1, 0), "BGGR": (1, 1)}[raw.phase]
    h, w = raw.shape
    data = raw.data[dr : h - dr, dc : w - dc]
    return RawMosaic(data, "RGGB")


# --- dihedral transforms -------------------------------------------------

N_TRANSFORMS = 8


def dihedral(a, t: int) -> np.ndarray:
    """Transform ``t`` in [0, 8): optional horizontal flip, then ``t % 4``
    quarter turns (counter-clockwise) over the first two axes."""
    if not 0 <= t < N_TRANSFORMS:
        raise ValueError(f"transform index must be in [0, 8), got {t}")
    a = np.asarray(a)
    if t >= 4:
        a = a[:, ::-1]
    return np.rot90(a, t % 4, axes=(0, 1))


def inverse_dihedral(a, t: int) -> np.ndarray:
    a = np.rot90(np.asarray(a), -(t % 4), axes=(0, 1))
    if t >= 4:
        a = a[:, ::-1]
    return a


def _phase_shift(t: int) -> tuple[int, int]:
    """Row/col shift (0 or 1) that brings a transformed RGGB raster back to RGGB."""
    codes = np.choose((np.arange(4)[:, None] % 2) * 2 + np.arange(4)[None, :] % 2, _TILES["RGGB"])
    moved = dihedral(codes, t)
    for dr in (0, 1):
        for dc in (0, 1):
            if np.array_equal(moved[:2, :2], codes[dr : dr + 2, dc : dc + 2]):
                return dr, dc
    raise AssertionError("RGGB must be recoverable by a parity shift")


_SHIFTS = [_phase_shift(t) for t in range(N_TRANSFORMS)]


def _shift_in(a, dr, dc):
    # y(r, c) = a(r - dr, c - dc); the vacated first row/col is reflect-padded
    pad = ((dr, 0), (dc, 0)) + ((0, 0),) * (a.ndim - 2)
    a = np.pad(a, pad, mode="reflect")
    return a[: a.shape[0] - dr, : a.shape[1] - dc]


def _shift_out(a, dr, dc):
    pad = ((0, dr), (0, dc)) + ((0, 0),) * (a.ndim - 2)
    a = np.pad(a[dr:, dc:], pad, mode="reflect")
    return a


def bayer_transform(raw: RawMosaic, t: int) -> RawMosaic:
    """Apply dihedral transform ``t`` and re-align the result to RGGB.

    When the plain transform changes the phase, one row and/or column is
    reflect-padded on the leading edge and cropped from the trailing edge.
    """
    if raw.phase != "RGGB":
        raise ImageError("bayer_transform expects an RGGB raw; use to_rggb first")
    dr, dc = _SHIFTS[t]
    return RawMosaic(_shift_in(dihedral(raw.data, t), dr, dc), "RGGB")


def undo_bayer_transform(a, t: int) -> np.ndarray:
    """Map a raster (raw or ``HxWxC``) produced in transform-``t`` geometry
    back to the original geometry. Exact except on a 1-pixel border."""
    dr, dc = _SHIFTS[t]
    return inverse_dihedral(_shift_out(np.asarray(a), dr, dc), t)


def inverse_bayer_transform(raw: RawMosaic, t: int) -> RawMosaic:
    return RawMosaic(undo_bayer_transform(raw.data, t), "RGGB")


def self_ensemble(infer: Callable[[RawMosaic], np.ndarray], raw: RawMosaic) -> np.ndarray:
    """Average ``infer`` over the 8 phase-preserving transforms of ``raw``."""
    acc = None
    for t in range(N_TRANSFORMS):
        out = undo_bayer_transform(infer(bayer_transform(raw, t)), t)
        acc = out.astype(np.float64) if acc is None else acc + out
    return acc / N_TRANSFORMS
