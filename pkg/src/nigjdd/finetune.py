"""Adapting a trained model to one out-of-distribution input.

The corrupted input itself serves as a weak prior: every element is paired
with a random neighbour from a ``p x p`` patch, and pairs whose neighbour
lies outside ``(x - 2 sigma, x + 2 sigma)`` are masked out of the loss.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import net
from .bayer import bilinear_demosaic
from .checkpoint import Checkpoint
from .imaging import RawMosaic, psnr
from .nig import VARIANTS, NigField, elbo_loss, neg_elbo_grad
from .prior import PriorConfig, make_prior
from .train import adam_init, adam_step


@dataclass(frozen=True)
class FinetuneConfig:
    lam: float = 1.0
    patch: int = 3
    lr: float = 2e-6
    iterations: int = 50
    window: int = 19
    loss_variant: str = "paper_literal"
    seed: int = 0

    def __post_init__(self):
        if self.patch < 3 or self.patch % 2 == 0:
            raise ValueError("patch must be odd and >= 3")
        if not self.lam > 0:
            raise ValueError("lam must be > 0")
        if self.lr < 0 or self.iterations < 0:
            raise ValueError("lr and iterations must be >= 0")
        if self.loss_variant not in VARIANTS:
            raise ValueError(f"loss_variant must be one of {VARIANTS}")

    def prior_config(self) -> PriorConfig:
        return PriorConfig(lam=self.lam, window=self.window)


class DegenerateMaskError(ValueError):
    """Every element of a fine-tuning batch was masked out."""


def neighbor_prior(x_tilde, p: int, seed):
    """Replace each element by a random neighbour within a ``p x p`` patch.

    The centre offset is never drawn. Offsets that would leave the image are
    clamped to the border. Returns ``(prior_image, offsets)`` with offsets of
    shape ``x_tilde.shape + (2,)`` holding the clamped ``(dy, dx)``.
    """
    x_tilde = np.asarray(x_tilde, dtype=np.float64)
    if p < 3 or p % 2 == 0:
        raise ValueError(f"patch size must be odd and >= 3, got {p}")
    h, w = x_tilde.shape[:2]
    if p > min(h, w):
        raise ValueError(f"patch size {p} exceeds image size {h}x{w}")
    rng = np.random.default_rng(seed)
    r = p // 2
    k = rng.integers(0, p * p - 1, size=x_tilde.shape)
    k = k + (k >= (p * p) // 2)  # skip the centre
    dy = k // p - r
    dx = k % p - r
    rows = np.arange(h).reshape((h, 1) + (1,) * (x_tilde.ndim - 2))
    cols = np.arange(w).reshape((1, w) + (1,) * (x_tilde.ndim - 2))
    ry = np.clip(rows + dy, 0, h - 1)
    rx = np.clip(cols + dx, 0, w - 1)
    chan = np.indices(x_tilde.shape)[2:] if x_tilde.ndim > 2 else ()
    prior_image = x_tilde[(ry, rx) + tuple(chan)]
    offsets = np.stack([ry - rows, rx - cols], axis=-1)
    return prior_image, offsets


def confidence_mask(x_tilde, prior_image, sigma) -> np.ndarray:
    """1 where the neighbour lies strictly inside ``(x - 2 sigma, x + 2 sigma)``."""
    x_tilde = np.asarray(x_tilde, dtype=np.float64)
    prior_image = np.asarray(prior_image, dtype=np.float64)
    if x_tilde.shape != prior_image.shape:
        raise ValueError(f"shape mismatch: {x_tilde.shape} vs {prior_image.shape}")
    sigma = np.broadcast_to(np.asarray(sigma, dtype=np.float64), x_tilde.shape)
    if np.any(sigma < 0):
        raise ValueError("sigma must be >= 0")
    return (np.abs(prior_image - x_tilde) < 2 * sigma).astype(np.float64)


def finetune_prior(x_tilde, prior_image, cfg: FinetuneConfig) -> NigField:
    return make_prior(x_tilde, prior_image, cfg.prior_config())


def masked_elbo(q: NigField, x_tilde, prior_image, mask, cfg: FinetuneConfig, variant=None,
                with_grad: bool = False):
    """Sum of per-element ``-ELBO`` over unmasked elements.

    With ``with_grad`` also returns the gradient w.r.t. the fields of ``q``.
    """
    variant = variant or cfg.loss_variant
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != q.shape:
        raise ValueError(f"mask shape {mask.shape} != field shape {q.shape}")
    if not mask.any():
        raise DegenerateMaskError("all elements masked; nothing to fine-tune on")
    prior = finetune_prior(x_tilde, prior_image, cfg)
    b = elbo_loss(q, prior, x_tilde, variant, per_pixel=True)
    loss = float(np.sum(mask * (b.kl_map - b.expectation_map)))
    if not with_grad:
        return loss
    return loss, neg_elbo_grad(q, prior, x_tilde, variant, weight=mask)


@dataclass
class FinetuneResult:
    checkpoint: Checkpoint
    restored: np.ndarray
    curve: Optional[list]
    mask_fraction: list


def finetune(ckpt: Checkpoint, raw: RawMosaic, cfg: FinetuneConfig, clean=None) -> FinetuneResult:
    """Fine-tune ``ckpt`` on a single raw input.

    Each iteration redraws the neighbour prior, takes sigma from the model's
    current noise map ``sqrt(beta / (alpha - 1))``, builds the mask and takes
    one Adam step. With ``clean`` given, ``curve`` lists ``(iteration, psnr)``
    for iterations ``0..cfg.iterations``.
    """
    net_cfg = ckpt.net_config
    weights = ckpt.weights
    adam = adam_init(weights)
    x_tilde = bilinear_demosaic(raw)
    curve = [] if clean is not None else None
    kept = []
    for it in range(cfg.iterations + 1):
        need_grad = it < cfg.iterations
        field_, cache = net.forward(raw, weights, net_cfg, keep_cache=need_grad)
        if curve is not None:
            curve.append((it, psnr(np.clip(field_.mean, 0, 1), clean)))
        if not need_grad:
            break
        sigma = np.sqrt(field_.beta / (field_.alpha - 1.0))
        prior_image, _ = neighbor_prior(x_tilde, cfg.patch, [cfg.seed, it])
        mask = confidence_mask(x_tilde, prior_image, sigma)
        kept.append(float(mask.mean()))
        _, g = masked_elbo(field_, x_tilde, prior_image, mask, cfg, with_grad=True)
        weights, adam = adam_step(weights, net.backward(g, cache, weights), adam, cfg.lr)
    restored = np.clip(field_.mean, 0.0, 1.0)
    meta = dict(ckpt.training_meta)
    meta["finetune"] = {"iterations": cfg.iterations, "lr": cfg.lr, "lam": cfg.lam, "patch": cfg.patch}
    return FinetuneResult(Checkpoint(net_cfg, weights, meta), restored, curve, kept)
