"""Patch sampling, Adam, the PSNR-plateau schedule, the training loop and the
single-image overfitting experiment."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np

from . import net
from .bayer import bilinear_demosaic, dihedral, mosaic, self_ensemble
from .checkpoint import Checkpoint
from .degrade import NoiseSpec, add_noise, gen_sigma_field
from .imaging import RawMosaic, psnr, ssim
from .nig import VARIANTS, NigField, elbo_loss, neg_elbo_grad
from .prior import PriorConfig, make_prior

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    patch_size: int = 32
    batch_size: int = 8
    lr_init: float = 5e-4
    lr_floor: float = 1e-4
    lr_decay: float = 0.8
    plateau_patience: int = 3
    plateau_threshold: float = 0.01  # dB
    max_steps: int = 5000
    eval_every: int = 250
    sigma_range: tuple = (0.0, 20.0)  # 8-bit units
    sigma_smoothness: float = 8.0  # px, std of the sigma-field blur
    loss_variant: str = "paper_literal"
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.lr_floor <= self.lr_init:
            raise ValueError("need 0 <= lr_floor <= lr_init")
        if not 0 < self.lr_decay < 1:
            raise ValueError("lr_decay must be in (0, 1)")
        if self.patch_size < 2 or self.patch_size % 2:
            raise ValueError("patch_size must be even")
        if self.loss_variant not in VARIANTS:
            raise ValueError(f"loss_variant must be one of {VARIANTS}")
        lo, hi = self.sigma_range
        if not 0 <= lo <= hi:
            raise ValueError("sigma_range must satisfy 0 <= lo <= hi")
        object.__setattr__(self, "sigma_range", (float(lo), float(hi)))


# --- data ------------------------------------------------------------------


def corrupt(clean, sigma_max: float, smoothness: float, rng) -> RawMosaic:
    """Spatially variant Gaussian noise on ``clean``, then RGGB sampling."""
    h, w = clean.shape[:2]
    sigma = gen_sigma_field(h, w, sigma_max, smoothness, rng)
    noisy = clean + sigma * rng.standard_normal(clean.shape)
    return mosaic(noisy)


def _draw_patch(dataset, cfg: TrainConfig, seed):
    rng = np.random.default_rng(seed)
    img = dataset[rng.integers(len(dataset))]
    p = cfg.patch_size
    h, w = img.shape[:2]
    if h < p or w < p:
        raise ValueError(f"patch {p} larger than image {h}x{w}")
    # even offsets keep the crop on the RGGB grid
    r0 = 2 * rng.integers((h - p) // 2 + 1)
    c0 = 2 * rng.integers((w - p) // 2 + 1)
    patch = np.ascontiguousarray(dihedral(img[r0 : r0 + p, c0 : c0 + p], int(rng.integers(8))))
    lo, hi = cfg.sigma_range
    raw = corrupt(patch, rng.uniform(lo, hi) / 255.0, cfg.sigma_smoothness, rng)
    return raw, patch


def sample_training_pair(dataset, cfg: TrainConfig, seed, prior_cfg: PriorConfig = PriorConfig()):
    """Random patch -> dihedral augmentation -> noise -> mosaic -> prior.

    Returns ``(raw, prior)``; ``prior.mean`` is the clean patch.
    """
    raw, patch = _draw_patch(dataset, cfg, seed)
    return raw, make_prior(bilinear_demosaic(raw), patch, prior_cfg)


def sample_batch(dataset, cfg: TrainConfig, step: int, prior_cfg: PriorConfig = PriorConfig()):
    """Batch for ``step``: element ``i`` uses seed ``(cfg.seed, step, i)``.

    Same draws as :func:`sample_training_pair`, with the bilateral filter run
    once over the whole batch.
    """
    drawn = [_draw_patch(dataset, cfg, [cfg.seed, step, i]) for i in range(cfg.batch_size)]
    raws = np.stack([r.data for r, _ in drawn])
    clean = np.stack([p for _, p in drawn])
    return raws, make_prior(net.baseline(raws), clean, prior_cfg)


def stack_fields(fields) -> NigField:
    return NigField(*(np.stack([getattr(f, k) for f in fields]) for k in ("mean", "lam", "alpha", "beta")))


def make_validation_set(images, sigma_range=(0.0, 20.0), smoothness: float = 8.0, seed: int = 1):
    """Fixed noisy raws for evaluation: list of ``(raw, clean)``."""
    rng = np.random.default_rng(seed)
    lo, hi = sigma_range
    return [(corrupt(img, rng.uniform(lo, hi) / 255.0, smoothness, rng), img) for img in images]


# --- optimisation -----------------------------------------------------------


def adam_init(weights: dict) -> dict:
    return {
        "t": 0,
        "m": {k: np.zeros(v.shape) for k, v in weights.items()},
        "v": {k: np.zeros(v.shape) for k, v in weights.items()},
    }


def adam_step(weights: dict, grads: dict, state: dict, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update. Moments are kept in float64; the
    returned weights keep their original dtype."""
    if set(weights) != set(grads):
        raise ValueError("weights and grads have different keys")
    t = state["t"] + 1
    new_w, new_m, new_v = {}, {}, {}
    for k, w in weights.items():
        g = np.asarray(grads[k], dtype=np.float64)
        if g.shape != w.shape:
            raise ValueError(f"{k}: grad shape {g.shape} != weight shape {w.shape}")
        m = beta1 * state["m"][k] + (1 - beta1) * g
        v = beta2 * state["v"][k] + (1 - beta2) * g * g
        m_hat = m / (1 - beta1**t)
        v_hat = v / (1 - beta2**t)
        new_w[k] = (w - lr * m_hat / (np.sqrt(v_hat) + eps)).astype(w.dtype)
        new_m[k], new_v[k] = m, v
    return new_w, {"t": t, "m": new_m, "v": new_v}


@dataclass
class PlateauState:
    lr: float
    best: float = -np.inf
    since_best: int = 0


def plateau_schedule(history, state: PlateauState, cfg: TrainConfig) -> float:
    """Consume the latest validation PSNR and return the (possibly decayed) lr."""
    if history:
        latest = history[-1]
        if latest > state.best + cfg.plateau_threshold:
            state.best = latest
            state.since_best = 0
        else:
            state.since_best += 1
            if state.since_best >= cfg.plateau_patience:
                state.lr = max(state.lr * cfg.lr_decay, cfg.lr_floor)
                state.since_best = 0
    return state.lr


# --- loop ------------------------------------------------------------------


def loss_and_grads(weights, net_cfg, raws, prior: NigField, variant: str):
    """Summed ``-ELBO`` over the batch and its weight gradients."""
    field_, cache = net.forward(raws, weights, net_cfg)
    x_tilde = net.baseline(raws)
    breakdown = elbo_loss(field_, prior, x_tilde, variant)
    grads = net.backward(neg_elbo_grad(field_, prior, x_tilde, variant), cache, weights)
    return breakdown, grads


def restore(weights, net_cfg, raw: RawMosaic, ensemble: bool = False) -> np.ndarray:
    infer = lambda r: np.clip(net.predict(r, weights, net_cfg).mean, 0.0, 1.0)
    return self_ensemble(infer, raw) if ensemble else infer(raw)


def evaluate(weights, net_cfg, val_set, ensemble: bool = False) -> dict:
    ps, ss = [], []
    for raw, clean in val_set:
        out = restore(weights, net_cfg, raw, ensemble)
        ps.append(psnr(out, clean))
        ss.append(ssim(out, clean) if min(clean.shape[:2]) >= 11 else float("nan"))
    return {"psnr": float(np.mean(ps)), "ssim": float(np.mean(ss)), "per_image_psnr": ps}


def baseline_scores(val_set) -> dict:
    ps = [psnr(np.clip(bilinear_demosaic(raw), 0, 1), clean) for raw, clean in val_set]
    return {"psnr": float(np.mean(ps)), "per_image_psnr": ps}


@dataclass
class TrainResult:
    best: Checkpoint
    last: Checkpoint
    adam_state: dict
    plateau: PlateauState
    history: list = field(default_factory=list)
    log: list = field(default_factory=list)


def train(dataset, val_set, net_cfg: net.NetConfig, train_cfg: TrainConfig,
          prior_cfg: PriorConfig = PriorConfig(), log_path=None, resume: Optional[TrainResult] = None,
          steps: Optional[int] = None) -> TrainResult:
    """Minimise the summed ``-ELBO`` with Adam.

    Batch ``s`` is drawn from seed ``(train_cfg.seed, s)``, so a resumed run
    sees the same data stream as an uninterrupted one. ``steps`` caps the
    number of steps run in this call (default: up to ``max_steps``).
    """
    if not dataset:
        raise ValueError("empty dataset")
    if resume is None:
        weights = net.calibrate_head(net.init_weights(net_cfg), prior_cfg.lam, prior_cfg.alpha)
        adam = adam_init(weights)
        plateau = PlateauState(train_cfg.lr_init)
        history, records, start = [], [], 0
        best_w, best_psnr = weights, -np.inf
    else:
        weights = resume.last.weights
        adam = resume.adam_state
        plateau = replace(resume.plateau)
        history, records = list(resume.history), list(resume.log)
        start = resume.last.training_meta["step"]
        best_w = resume.best.weights
        best_psnr = resume.best.training_meta.get("val_psnr", -np.inf)
    stop = train_cfg.max_steps if steps is None else min(train_cfg.max_steps, start + steps)
    fh = open(log_path, "a" if resume else "w") if log_path else None

    def meta(step, **extra):
        return {"step": step, "lr": plateau.lr, "loss_variant": train_cfg.loss_variant,
                "prior": asdict(prior_cfg), "train": asdict(train_cfg), **extra}

    try:
        for step in range(start, stop):
            raws, prior = sample_batch(dataset, train_cfg, step, prior_cfg)
            breakdown, grads = loss_and_grads(weights, net_cfg, raws, prior, train_cfg.loss_variant)
            if not np.isfinite(breakdown.elbo):
                raise FloatingPointError(f"non-finite loss at step {step}")
            rec = {"step": step + 1, "lr": plateau.lr, **breakdown.as_record()}
            weights, adam = adam_step(weights, grads, adam, plateau.lr)
            # evaluation times depend only on the step count, so split runs match
            if val_set and ((step + 1) % train_cfg.eval_every == 0 or step + 1 == train_cfg.max_steps):
                scores = evaluate(weights, net_cfg, val_set)
                rec["val_psnr"], rec["val_ssim"] = scores["psnr"], scores["ssim"]
                history.append(scores["psnr"])
                if scores["psnr"] > best_psnr:
                    best_psnr, best_w = scores["psnr"], weights
                plateau_schedule(history, plateau, train_cfg)
                log.info("step %d loss/px %.4f val psnr %.3f lr %.2e", step + 1,
                         rec["loss_per_px"], scores["psnr"], plateau.lr)
            records.append(rec)
            if fh:
                fh.write(json.dumps(rec) + "\n")
                fh.flush()
    finally:
        if fh:
            fh.close()
    end = max(stop, start)
    if not np.isfinite(best_psnr):
        best_w = weights
    best = Checkpoint(net_cfg, best_w, meta(end, val_psnr=best_psnr))
    last = Checkpoint(net_cfg, weights, meta(end))
    return TrainResult(best, last, adam, plateau, history, records)


# --- single-image overfitting ------------------------------------------------


def single_image_overfit(clean, noise: NoiseSpec, loss: str, steps: int, eval_every: int, seed: int = 0,
                         net_cfg: Optional[net.NetConfig] = None, lr: float = 1e-3, lam: float = 1.0,
                         window: int = 7, variant: str = "paper_literal", prior_sigma: Optional[float] = None):
    """Fit a fresh network to one corrupted image; track PSNR against ``clean``.

    The target is the bilinear demosaic of the noisy mosaic. The network reads
    the mosaic and predicts the mean directly (no bilinear shortcut), so it has
    to learn the mapping. Returns a list of ``(step, psnr)``.

    The ELBO prior is ``make_prior(x_tilde, x_tilde)``, so its beta sits at
    the floor. Passing ``prior_sigma`` replaces beta by ``(alpha - 1) sigma^2``
    so the prior's expected noise variance matches a known corruption level.
    """
    if loss not in ("mse", "elbo"):
        raise ValueError("loss must be 'mse' or 'elbo'")
    if steps and steps < eval_every:
        raise ValueError("steps must be >= eval_every")
    net_cfg = net_cfg or net.NetConfig(residual=False, seed=seed)
    raw = mosaic(add_noise(clean, noise))
    x_tilde = bilinear_demosaic(raw)
    pcfg = PriorConfig(lam=lam, window=window)
    prior = make_prior(x_tilde, x_tilde, pcfg)
    if prior_sigma is not None:
        prior = NigField(x_tilde, pcfg.lam, pcfg.alpha, (pcfg.alpha - 1.0) * prior_sigma**2)
    weights = net.init_weights(net_cfg, seed)
    adam = adam_init(weights)
    curve = []

    def score(w):
        return psnr(np.clip(net.predict(raw, w, net_cfg).mean, 0, 1), clean)

    curve.append((0, score(weights)))
    for step in range(1, steps + 1):
        field_, cache = net.forward(raw, weights, net_cfg)
        if loss == "mse":
            zero = np.zeros_like(field_.mean)
            g = {"mean": 2 * (field_.mean - x_tilde) / x_tilde.size, "lam": zero, "alpha": zero, "beta": zero}
        else:
            g = neg_elbo_grad(field_, prior, x_tilde, variant)
        weights, adam = adam_step(weights, net.backward(g, cache, weights), adam, lr)
        if step % eval_every == 0:
            curve.append((step, score(weights)))
    return curve


def write_curve_csv(path, curve, header=("step", "psnr")) -> None:
    from .imaging import atomic_write_bytes

    lines = [",".join(header)] + [f"{a},{b:.6f}" for a, b in curve]
    atomic_write_bytes(path, ("\n".join(lines) + "\n").encode())
