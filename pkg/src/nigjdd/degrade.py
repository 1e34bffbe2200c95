"""Noise synthesis: spatially variant sigma fields, the noise families used for
training and out-of-distribution tests, the two-stage NIG sampler and the
multi-shot averaging demonstration."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter, uniform_filter

from .imaging import as_image

NOISE_KINDS = ("gaussian_iid", "gaussian_spatial", "uniform", "poisson_gaussian", "brown_gaussian")

_DEFAULTS = {
    "gaussian_iid": {"sigma": 10 / 255},
    "gaussian_spatial": {"sigma_max": 20 / 255, "smoothness": 8.0},
    "uniform": {"a": 0.1},
    "poisson_gaussian": {"a": 0.01, "sigma": 5 / 255},
    "brown_gaussian": {"sigma": 10 / 255, "blur": 1.0},
}


@dataclass(frozen=True)
class NoiseSpec:
    """Noise family plus its parameters (intensities on the [0, 1] scale).

    Parameters per kind: ``gaussian_iid`` sigma; ``gaussian_spatial``
    sigma_max, smoothness; ``uniform`` a (half-width); ``poisson_gaussian`` a
    (photon scale), sigma; ``brown_gaussian`` sigma, blur (kernel std, px).
    """

    kind: str
    params: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise ValueError(f"unknown noise kind {self.kind!r}; choose from {NOISE_KINDS}")
        merged = dict(_DEFAULTS[self.kind])
        unknown = set(self.params) - set(merged)
        if unknown:
            raise ValueError(f"unknown parameters for {self.kind}: {sorted(unknown)}")
        merged.update({k: float(v) for k, v in self.params.items()})
        for k, v in merged.items():
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"noise parameter {k} must be finite and >= 0, got {v}")
        if self.kind == "poisson_gaussian" and merged["a"] <= 0:
            raise ValueError("poisson_gaussian needs a > 0")
        object.__setattr__(self, "params", merged)

    @classmethod
    def parse(cls, text: str, seed: int = 0, eight_bit: bool = True) -> "NoiseSpec":
        """Parse ``kind:key=value,...``.

        With ``eight_bit`` the sigma-like keys (sigma, sigma_max, a for
        uniform) are given in 8-bit units and divided by 255.
        """
        kind, _, rest = text.partition(":")
        params = {}
        for item in filter(None, rest.split(",")):
            key, eq, value = item.partition("=")
            if not eq:
                raise ValueError(f"malformed noise parameter {item!r}")
            params[key.strip()] = float(value)
        if eight_bit:
            for key in ("sigma", "sigma_max"):
                if key in params:
                    params[key] /= 255.0
            if kind == "uniform" and "a" in params:
                params["a"] /= 255.0
        return cls(kind.strip(), params, seed)


def gen_sigma_field(h: int, w: int, sigma_max: float, smoothness: float, seed) -> np.ndarray:
    """Smooth random noise-level map of shape ``(h, w, 3)`` spanning [0, sigma_max].

    One spatial map is drawn and shared by the three channels.
    """
    if sigma_max < 0 or smoothness < 0:
        raise ValueError("sigma_max and smoothness must be >= 0")
    rng = np.random.default_rng(seed)
    u = rng.random((h, w))
    if smoothness > 0:
        u = gaussian_filter(u, smoothness, mode="reflect")
    lo, hi = u.min(), u.max()
    u = (u - lo) / (hi - lo) if hi > lo else np.ones_like(u)
    return np.repeat((u * sigma_max)[..., None], 3, axis=2)


def _blur_gain(blur: float) -> float:
    """Std of unit white noise after ``gaussian_filter(., blur)``."""
    if blur == 0:
        return 1.0
    radius = int(4 * blur + 0.5)
    impulse = np.zeros((2 * radius + 1, 2 * radius + 1))
    impulse[radius, radius] = 1.0
    return float(np.sqrt(np.sum(gaussian_filter(impulse, blur, mode="constant") ** 2)))


def add_noise(image, spec: NoiseSpec, sigma_field=None) -> np.ndarray:
    """Corrupt ``image`` per ``spec``. The result is not clamped.

    ``gaussian_spatial`` uses ``sigma_field`` when given, else draws one with
    :func:`gen_sigma_field` from the same seed.
    """
    x = as_image(image)
    p = spec.params
    rng = np.random.default_rng(spec.seed)
    kind = spec.kind
    if kind == "gaussian_iid":
        return x + p["sigma"] * rng.standard_normal(x.shape)
    if kind == "gaussian_spatial":
        if sigma_field is None:
            sigma_field = gen_sigma_field(*x.shape[:2], p["sigma_max"], p["smoothness"], rng)
        return x + np.asarray(sigma_field) * rng.standard_normal(x.shape)
    if kind == "uniform":
        return x + rng.uniform(-p["a"], p["a"], x.shape)
    if kind == "poisson_gaussian":
        a = p["a"]
        shot = a * rng.poisson(np.clip(x, 0.0, None) / a)
        return shot + p["sigma"] * rng.standard_normal(x.shape)
    # brown_gaussian
    white = rng.standard_normal(x.shape)
    blur = p["blur"]
    if blur > 0:
        white = gaussian_filter(white, (blur, blur, 0), mode="reflect") / _blur_gain(blur)
    return x + p["sigma"] * white


def degrade_two_stage(prior, seed) -> np.ndarray:
    """Draw ``(z, sigma^2)`` from the NIG prior, then ``x ~ N(z, sigma^2)``."""
    from .nig import sample_nig

    rng = np.random.default_rng(seed)
    z, sigma2 = sample_nig(prior, rng)
    return z + np.sqrt(sigma2) * rng.standard_normal(z.shape)


def local_psnr_map(a, b, window: int = 5) -> np.ndarray:
    """Per-pixel PSNR (dB, peak 1) over a ``window``-square neighbourhood,
    pooled over channels; ``inf`` where the local MSE is zero."""
    err = np.mean((np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)) ** 2, axis=-1)
    mse = uniform_filter(err, window, mode="reflect")
    with np.errstate(divide="ignore"):
        return np.where(mse > 0, -10.0 * np.log10(np.where(mse > 0, mse, 1.0)), np.inf)


def average_shots(clean, sigma, n_shots: int, seed, window: int = 5):
    """Average ``n_shots`` independent spatially-variant Gaussian corruptions.

    Returns ``(avg, psnr_map)`` where ``psnr_map`` compares ``avg`` with
    ``clean`` locally.
    """
    if n_shots < 1:
        raise ValueError("n_shots must be >= 1")
    clean = as_image(clean)
    sigma = np.broadcast_to(np.asarray(sigma, dtype=np.float64), clean.shape)
    rng = np.random.default_rng(seed)
    acc = np.zeros_like(clean)
    for _ in range(n_shots):
        acc += sigma * rng.standard_normal(clean.shape)
    avg = clean + acc / n_shots
    return avg, local_psnr_map(avg, clean, window)
