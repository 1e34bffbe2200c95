"""Image containers, PNG I/O and the PSNR/SSIM metrics.

Images are plain ``float64`` arrays of shape ``(H, W, 3)`` with intensities in
``[0, 1]``. Raw Bayer readings live in :class:`RawMosaic`, which carries the
CFA phase alongside an ``(H, W)`` array.
"""

from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np
from scipy.ndimage import gaussian_filter

PHASES = ("RGGB", "GRBG", "GBRG", "BGGR")


class ImageError(ValueError):
    """Raised for malformed images and unsupported files."""


@dataclass(frozen=True)
class RawMosaic:
    data: np.ndarray
    phase: str = "RGGB"

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2:
            raise ImageError(f"raw mosaic must be 2-D, got shape {data.shape}")
        check_even(data.shape[:2])
        if self.phase not in PHASES:
            raise ImageError(f"unknown CFA phase {self.phase!r}")
        object.__setattr__(self, "data", data)

    @property
    def shape(self):
        return self.data.shape


@dataclass(frozen=True)
class MetricReport:
    psnr: float
    ssim: float


def check_even(shape) -> None:
    h, w = shape[:2]
    if h < 2 or w < 2 or h % 2 or w % 2:
        raise ImageError(f"image dimensions must be even and >= 2, got {h}x{w}")


def as_image(a, *, clamp: bool = False) -> np.ndarray:
    """Coerce to an ``(H, W, 3)`` float64 image, optionally clamped to [0, 1]."""
    img = np.asarray(a, dtype=np.float64)
    if img.ndim == 2:
        img = np.repeat(img[..., None], 3, axis=2)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ImageError(f"expected HxWx3 image, got shape {img.shape}")
    if clamp:
        img = np.clip(img, 0.0, 1.0)
    return img


def load_png(path) -> np.ndarray:
    """Read an 8- or 16-bit grayscale/RGB PNG into a ``[0, 1]`` image."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such file: {path}")
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise ImageError(f"cannot decode {path} as PNG")
    if raw.dtype == np.uint8:
        scale = 255.0
    elif raw.dtype == np.uint16:
        scale = 65535.0
    else:
        raise ImageError(f"unsupported bit depth {raw.dtype} in {path}")
    if raw.ndim == 3:
        if raw.shape[2] != 3:
            raise ImageError(f"unsupported color type ({raw.shape[2]} channels) in {path}")
        raw = raw[..., ::-1]  # BGR -> RGB
    img = as_image(raw.astype(np.float64) / scale)
    check_even(img.shape)
    return img


def quantize(image, bit_depth: int = 8) -> np.ndarray:
    """Clamp to [0, 1] and round half away from zero to integer codes."""
    if bit_depth not in (8, 16):
        raise ImageError(f"bit depth must be 8 or 16, got {bit_depth}")
    peak = 2**bit_depth - 1
    a = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0) * peak
    return np.floor(a + 0.5).astype(np.uint8 if bit_depth == 8 else np.uint16)


def atomic_write_bytes(path, payload: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_png(image, path, bit_depth: int = 8) -> None:
    """Write an image (``HxWx3``) or a single plane (``HxW``) as PNG.

    The file appears atomically: it is encoded in memory and renamed into place.
    """
    a = np.asarray(image, dtype=np.float64)
    if not np.all(np.isfinite(a)):
        raise ImageError("cannot save non-finite pixel values")
    codes = quantize(a, bit_depth)
    if codes.ndim == 3:
        codes = np.ascontiguousarray(codes[..., ::-1])
    ok, buf = cv2.imencode(".png", codes)
    if not ok:
        raise ImageError(f"PNG encoding failed for {path}")
    atomic_write_bytes(path, buf.tobytes())


def _check_pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ImageError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; ``inf`` when the images are equal."""
    a, b = _check_pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return float("inf")
    return 10.0 * np.log10(peak**2 / mse)


SSIM_WINDOW = 11
SSIM_SIGMA = 1.5


def _ssim_channel(x, y, c1, c2):
    radius = SSIM_WINDOW // 2
    blur = lambda u: gaussian_filter(u, SSIM_SIGMA, truncate=radius / SSIM_SIGMA)[
        radius:-radius, radius:-radius
    ]
    mu_x, mu_y = blur(x), blur(y)
    sxx = blur(x * x) - mu_x**2
    syy = blur(y * y) - mu_y**2
    sxy = blur(x * y) - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * sxy + c2)
    den = (mu_x**2 + mu_y**2 + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


def ssim(a, b, *, k1: float = 0.01, k2: float = 0.03, data_range: float = 1.0) -> float:
    """Single-scale SSIM, 11x11 Gaussian window (sigma 1.5), mean over channels.

    Only window positions fully inside the image contribute.
    """
    a, b = _check_pair(a, b)
    if min(a.shape[:2]) < SSIM_WINDOW:
        raise ImageError(f"SSIM needs both sides >= {SSIM_WINDOW}, got {a.shape[:2]}")
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    if a.ndim == 2:
        return _ssim_channel(a, b, c1, c2)
    return float(np.mean([_ssim_channel(a[..., k], b[..., k], c1, c2) for k in range(a.shape[2])]))


def metrics(pred, ref) -> MetricReport:
    return MetricReport(psnr=psnr(pred, ref), ssim=ssim(pred, ref))
