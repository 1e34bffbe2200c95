"""Normal-inverse-gamma fields and the closed-form ELBO.

A :class:`NigField` holds per-element parameters ``(mean, lam, alpha, beta)``
of ``sigma^2 ~ InvGamma(alpha, beta)``, ``z | sigma^2 ~ N(mean, sigma^2 / lam)``.
The same container carries the target prior and the network's posterior.

The ELBO splits into ``expectation - kl``. Both terms are evaluated per
element in closed form; :func:`mc_kl_oracle` and
:func:`mc_expectation_oracle` estimate the same quantities by sampling.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import gammaln

from .special import digamma, log_gamma, trigamma

VARIANTS = ("paper_literal", "derivation_consistent")
HALF_LOG_2PI = 0.5 * np.log(2 * np.pi)


class NigError(ValueError):
    pass


@dataclass(frozen=True)
class NigField:
    mean: np.ndarray
    lam: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        object.__setattr__(self, "mean", mean)
        for name in ("lam", "alpha", "beta"):
            v = np.asarray(getattr(self, name), dtype=np.float64)
            if v.shape != mean.shape:
                try:
                    v = np.broadcast_to(v, mean.shape).copy()
                except ValueError as exc:
                    raise NigError(f"{name} shape {v.shape} does not match mean {mean.shape}") from exc
            object.__setattr__(self, name, v)

    @property
    def shape(self):
        return self.mean.shape

    def validate(self) -> "NigField":
        for name in ("mean", "lam", "alpha", "beta"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise NigError(f"{name} contains non-finite values")
        if np.any(self.lam <= 0):
            raise NigError("lam must be > 0")
        if np.any(self.beta <= 0):
            raise NigError("beta must be > 0")
        if np.any(self.alpha <= 1):
            raise NigError("alpha must be > 1")
        return self

    def noise_variance(self) -> np.ndarray:
        return self.beta / (self.alpha - 1.0)


@dataclass
class ElboBreakdown:
    kl: float
    expectation: float
    elbo: float
    n: int
    kl_map: Optional[np.ndarray] = None
    expectation_map: Optional[np.ndarray] = None

    def as_record(self) -> dict:
        """Sums plus per-element means, for the JSON-lines log."""
        return {
            "loss": -self.elbo,
            "kl": self.kl,
            "expectation": self.expectation,
            "loss_per_px": -self.elbo / self.n,
        }


def _same_shape(*arrays):
    shapes = {np.shape(a) for a in arrays}
    if len(shapes) != 1:
        raise NigError(f"shape mismatch: {sorted(shapes)}")


def _check_variant(variant):
    if variant not in VARIANTS:
        raise NigError(f"unknown variant {variant!r}; choose from {VARIANTS}")


def sample_nig(params: NigField, seed):
    """Draw ``(z, sigma2)`` once per element."""
    params.validate()
    rng = np.random.default_rng(seed)
    sigma2 = params.beta / rng.standard_gamma(params.alpha)
    z = params.mean + np.sqrt(sigma2 / params.lam) * rng.standard_normal(params.shape)
    return z, sigma2


def kl_nig(q: NigField, p: NigField) -> np.ndarray:
    """Per-element ``KL(q || p)`` in nats."""
    _same_shape(q.mean, p.mean)
    lam, a, b = p.lam, p.alpha, p.beta
    lq, aq, bq = q.lam, q.alpha, q.beta
    d2 = (p.mean - q.mean) ** 2
    gaussian = lam * aq / (2 * bq) * d2 + lam / (2 * lq) - 0.5 * np.log(lam / lq) - 0.5
    inv_gamma = (
        a * np.log(bq / b)
        + log_gamma(a)
        - log_gamma(aq)
        + (aq - a) * digamma(aq)
        - (bq - b) * aq / bq
    )
    return gaussian + inv_gamma


def kl_nig_grad(q: NigField, p: NigField) -> dict:
    """Partial derivatives of :func:`kl_nig` w.r.t. the fields of ``q``."""
    lam, a, b = p.lam, p.alpha, p.beta
    lq, aq, bq = q.lam, q.alpha, q.beta
    d = p.mean - q.mean
    d2 = d * d
    return {
        "mean": -lam * aq * d / bq,
        "lam": -lam / (2 * lq**2) + 0.5 / lq,
        "alpha": lam * d2 / (2 * bq) + (aq - a) * trigamma(aq) - 1.0 + b / bq,
        "beta": -lam * aq * d2 / (2 * bq**2) + a / bq - b * aq / bq**2,
    }


def expectation_term(q: NigField, x_tilde, variant: str = "paper_literal") -> np.ndarray:
    """Per-element ``E_q[log N(x_tilde; z, sigma^2)]``.

    ``paper_literal`` uses ``beta / (2 lam^2 (alpha - 1))`` for the spread of
    ``z``; ``derivation_consistent`` uses ``1 / (2 lam)``, which is what
    ``Var(z | sigma^2) = sigma^2 / lam`` implies.
    """
    _check_variant(variant)
    x_tilde = np.asarray(x_tilde, dtype=np.float64)
    _same_shape(q.mean, x_tilde)
    lq, aq, bq = q.lam, q.alpha, q.beta
    r2 = (x_tilde - q.mean) ** 2
    if variant == "paper_literal":
        spread = bq / (2 * lq**2 * (aq - 1))
    else:
        spread = 1.0 / (2 * lq)
    return -HALF_LOG_2PI - 0.5 * (np.log(bq) - digamma(aq)) - spread - aq * r2 / (2 * bq)


def expectation_grad(q: NigField, x_tilde, variant: str = "paper_literal") -> dict:
    _check_variant(variant)
    lq, aq, bq = q.lam, q.alpha, q.beta
    r = np.asarray(x_tilde, dtype=np.float64) - q.mean
    r2 = r * r
    g = {
        "mean": aq * r / bq,
        "lam": np.zeros_like(lq),
        "alpha": 0.5 * trigamma(aq) - r2 / (2 * bq),
        "beta": -0.5 / bq + aq * r2 / (2 * bq**2),
    }
    if variant == "paper_literal":
        g["lam"] = bq / (lq**3 * (aq - 1))
        g["alpha"] = g["alpha"] + bq / (2 * lq**2 * (aq - 1) ** 2)
        g["beta"] = g["beta"] - 1.0 / (2 * lq**2 * (aq - 1))
    else:
        g["lam"] = 0.5 / lq**2
    return g


def elbo_loss(q: NigField, prior: NigField, x_tilde, variant: str = "paper_literal",
              per_pixel: bool = False) -> ElboBreakdown:
    kl = kl_nig(q, prior)
    ex = expectation_term(q, x_tilde, variant)
    kl_sum, ex_sum = float(np.sum(kl)), float(np.sum(ex))
    return ElboBreakdown(
        kl=kl_sum,
        expectation=ex_sum,
        elbo=ex_sum - kl_sum,
        n=int(kl.size),
        kl_map=kl if per_pixel else None,
        expectation_map=ex if per_pixel else None,
    )


def neg_elbo_grad(q: NigField, prior: NigField, x_tilde, variant: str = "paper_literal",
                  weight=None) -> dict:
    """Gradient of ``sum_j weight_j * (kl_j - expectation_j)`` w.r.t. ``q``."""
    gk = kl_nig_grad(q, prior)
    ge = expectation_grad(q, x_tilde, variant)
    out = {k: gk[k] - ge[k] for k in gk}
    if weight is not None:
        out = {k: v * weight for k, v in out.items()}
    return out


def posterior_estimates(q: NigField):
    """Restored image ``E[z]`` (clamped to [0, 1]) and noise map ``E[sigma^2]``."""
    return np.clip(q.mean, 0.0, 1.0), q.beta / (q.alpha - 1.0)


def mse_loss(y_hat, y) -> float:
    y_hat = np.asarray(y_hat, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    _same_shape(y_hat, y)
    return float(np.mean((y_hat - y) ** 2))


# --- Monte Carlo oracles -------------------------------------------------
# These use scipy's gammaln rather than the series in .special so that the
# closed forms and their checks share no special-function code.


def log_nig_pdf(z, sigma2, f: NigField) -> np.ndarray:
    return (
        0.5 * np.log(f.lam)
        - HALF_LOG_2PI
        - 0.5 * np.log(sigma2)
        + f.alpha * np.log(f.beta)
        - gammaln(f.alpha)
        - (f.alpha + 1) * np.log(sigma2)
        - f.beta / sigma2
        - f.lam * (z - f.mean) ** 2 / (2 * sigma2)
    )


def _mc_mean(sample_fn, n: int, seed, chunk: int):
    if n < 1000:
        raise NigError("Monte Carlo oracles need n >= 1000 samples")
    rng = np.random.default_rng(seed)
    count, mean, m2 = 0, 0.0, 0.0
    while count < n:
        vals = sample_fn(rng, min(chunk, n - count))
        k = vals.size
        cmean = float(np.mean(vals))
        cm2 = float(np.sum((vals - cmean) ** 2))
        delta = cmean - mean
        total = count + k
        mean += delta * k / total
        m2 += cm2 + delta * delta * count * k / total
        count = total
    var = m2 / (n - 1)
    return mean, float(np.sqrt(var / n))


def _draw_q(q: NigField, rng, m):
    shape = (m,) + q.shape
    sigma2 = q.beta / rng.standard_gamma(np.broadcast_to(q.alpha, shape))
    z = q.mean + np.sqrt(sigma2 / q.lam) * rng.standard_normal(shape)
    return z, sigma2


def mc_kl_oracle(q: NigField, p: NigField, n: int, seed, chunk: int = 200_000):
    """Sampled ``KL(q || p)`` summed over elements: ``(estimate, stderr)``."""
    q.validate()
    p.validate()
    _same_shape(q.mean, p.mean)
    axes = tuple(range(1, q.mean.ndim + 1))

    def draw(rng, m):
        z, s2 = _draw_q(q, rng, m)
        return np.sum(log_nig_pdf(z, s2, q) - log_nig_pdf(z, s2, p), axis=axes)

    return _mc_mean(draw, n, seed, max(1, chunk // max(q.mean.size, 1)))


def mc_expectation_oracle(q: NigField, x_tilde, n: int, seed, chunk: int = 200_000):
    """Sampled ``E_q[log N(x_tilde; z, sigma^2)]`` summed over elements."""
    q.validate()
    x_tilde = np.asarray(x_tilde, dtype=np.float64)
    _same_shape(q.mean, x_tilde)
    axes = tuple(range(1, q.mean.ndim + 1))

    def draw(rng, m):
        z, s2 = _draw_q(q, rng, m)
        ll = -HALF_LOG_2PI - 0.5 * np.log(s2) - (x_tilde - z) ** 2 / (2 * s2)
        return np.sum(ll, axis=axes)

    return _mc_mean(draw, n, seed, max(1, chunk // max(q.mean.size, 1)))
