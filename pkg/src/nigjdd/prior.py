"""Target prior construction: ``alpha = w^2 / 2`` and ``beta`` from a
bilateral-smoothed squared-residual map."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .nig import NigField

BETA_FLOOR = 1e-8


@dataclass(frozen=True)
class PriorConfig:
    """``sigma_spatial`` defaults to ``window / 4``; ``sigma_range`` to
    ``range_scale`` times the median of the squared-residual map."""

    lam: float = 2e3
    window: int = 19
    sigma_spatial: Optional[float] = None
    sigma_range: Optional[float] = None
    range_scale: float = 1.0

    def __post_init__(self):
        if self.window < 3 or self.window % 2 == 0:
            raise ValueError(f"window must be odd and >= 3, got {self.window}")
        if not self.lam > 0:
            raise ValueError("lam must be > 0")
        for name in ("sigma_spatial", "sigma_range"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ValueError(f"{name} must be > 0")
        if not self.range_scale > 0:
            raise ValueError("range_scale must be > 0")

    @property
    def alpha(self) -> float:
        return self.window**2 / 2


def bilateral_filter(m, window: int, sigma_s: float, sigma_r) -> np.ndarray:
    """Bilateral filter over the first two axes of ``m``; trailing axes are
    filtered independently. ``sigma_r`` may be an array broadcastable to
    ``m.shape[2:]``. Out-of-bounds taps are dropped, not padded."""
    if window % 2 == 0 or window < 1:
        raise ValueError(f"window must be odd, got {window}")
    m = np.asarray(m, dtype=np.float64)
    if np.any(m < 0):
        raise ValueError("bilateral_filter expects a nonnegative map")
    h, w = m.shape[:2]
    r = window // 2
    pad = ((r, r), (r, r)) + ((0, 0),) * (m.ndim - 2)
    mp = np.pad(m, pad)
    valid = np.pad(np.ones((h, w)), ((r, r), (r, r)))
    if m.ndim > 2:
        valid = valid.reshape(valid.shape + (1,) * (m.ndim - 2))
    sigma_r = np.asarray(sigma_r, dtype=np.float64)
    inv_r = -0.5 / (sigma_r * sigma_r)
    num = np.zeros_like(m)
    den = np.zeros_like(m)
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            ws = np.exp(-(dy * dy + dx * dx) / (2 * sigma_s * sigma_s))
            nb = mp[r + dy : r + dy + h, r + dx : r + dx + w]
            # exponent floor avoids slow denormals; the centre tap has weight 1
            rng_w = np.exp(np.maximum(inv_r * (nb - m) ** 2, -50.0))
            wt = (ws * valid[r + dy : r + dy + h, r + dx : r + dx + w]) * rng_w
            num += wt * nb
            den += wt
    return num / den


def default_sigma_range(sq_residual, cfg: PriorConfig):
    """Per-map range sigma over the first two (spatial) axes."""
    if cfg.sigma_range is not None:
        return np.full(sq_residual.shape[2:], cfg.sigma_range)
    scale = np.median(sq_residual, axis=(0, 1))
    # mostly-zero residuals (flat synthetic patches) fall back to the mean
    scale = np.where(scale > 0, scale, np.mean(sq_residual, axis=(0, 1)))
    return np.where(scale > 0, scale * cfg.range_scale, 1.0)


def make_prior(x_tilde, y, cfg: PriorConfig = PriorConfig()) -> NigField:
    """Prior centred on ``y`` with ``beta`` from the smoothed residual of ``x_tilde``.

    Accepts ``HxWxC`` images or ``NxHxWxC`` batches; each image channel is
    filtered on its own.
    """
    x_tilde = np.asarray(x_tilde, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x_tilde.shape != y.shape:
        raise ValueError(f"shape mismatch: {x_tilde.shape} vs {y.shape}")
    sq = (x_tilde - y) ** 2
    batched = sq.ndim == 4
    if batched:
        sq = np.ascontiguousarray(np.moveaxis(sq, 0, -1))  # spatial axes first
    sigma_s = cfg.sigma_spatial if cfg.sigma_spatial is not None else cfg.window / 4
    smooth = bilateral_filter(sq, cfg.window, sigma_s, default_sigma_range(sq, cfg))
    if batched:
        smooth = np.moveaxis(smooth, -1, 0)
    half = cfg.alpha
    beta = np.maximum(half * smooth, BETA_FLOOR)
    return NigField(y, np.full(y.shape, cfg.lam), np.full(y.shape, half), beta)
