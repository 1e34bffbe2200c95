"""Convolutional NIG estimator with hand-written reverse-mode gradients.

Layout is NHWC throughout. The pipeline:

    raw --pack4--> conv_in --> GRDB x B --> conv_mid (+ global skip)
        --> conv_up (4C) --depth-to-space--> conv_out (12 maps) --> head

Every convolution is stride 1 with zero padding. The head turns the 12 maps
into a valid :class:`~nigjdd.nig.NigField`.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .bayer import bilinear_demosaic, pack4
from .imaging import RawMosaic
from .nig import NigField

LAMBDA_FLOOR = 1e-3
ALPHA_FLOOR = 1e-3
BETA_FLOOR = 1e-8


@dataclass(frozen=True)
class NetConfig:
    channels: int = 16
    grdb_blocks: int = 2
    grdb_layers_per_block: int = 3
    growth: int = 8
    kernel: int = 3
    slope: float = 0.1
    residual: bool = True  # predict mean as bilinear(raw) + correction
    head_init_scale: float = 0.1  # shrinks the output conv's initial kernel
    seed: int = 0

    def __post_init__(self):
        for name in ("channels", "grdb_blocks", "grdb_layers_per_block", "growth"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.kernel != 3:
            raise ValueError("kernel size is fixed at 3")

    def to_dict(self) -> dict:
        return asdict(self)


def layer_shapes(cfg: NetConfig) -> dict:
    """Kernel shapes ``(k, k, c_in, c_out)`` for every convolution, in order."""
    k, c, g = cfg.kernel, cfg.channels, cfg.growth
    shapes = {"conv_in": (k, k, 4, c)}
    for b in range(cfg.grdb_blocks):
        for i in range(cfg.grdb_layers_per_block):
            shapes[f"grdb{b}.dense{i}"] = (k, k, c + i * g, g)
        shapes[f"grdb{b}.fuse"] = (1, 1, c + cfg.grdb_layers_per_block * g, c)
    shapes["conv_mid"] = (k, k, c, c)
    shapes["conv_up"] = (k, k, c, 4 * c)
    shapes["conv_out"] = (k, k, c, 12)
    return shapes


def weight_shapes(cfg: NetConfig) -> dict:
    out = {}
    for name, shape in layer_shapes(cfg).items():
        out[f"{name}.w"] = shape
        out[f"{name}.b"] = (shape[-1],)
    return out


def init_weights(cfg: NetConfig, seed=None) -> dict:
    """Fan-in scaled Gaussian kernels (std ``sqrt(2 / fan_in)``), zero biases.

    The output kernel is further scaled by ``cfg.head_init_scale`` so the
    untrained net starts close to the bilinear baseline.
    """
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    weights = {}
    for name, shape in layer_shapes(cfg).items():
        fan_in = shape[0] * shape[1] * shape[2]
        std = np.sqrt(2.0 / fan_in) * (cfg.head_init_scale if name == "conv_out" else 1.0)
        weights[f"{name}.w"] = (rng.standard_normal(shape) * std).astype(np.float32)
        weights[f"{name}.b"] = np.zeros(shape[-1], dtype=np.float32)
    return weights


def inverse_softplus(y):
    y = np.asarray(y, dtype=np.float64)
    return y + np.log(-np.expm1(-y))


def calibrate_head(weights: dict, lam: float, alpha: float) -> dict:
    """Start the head at the prior: biases give ``lam`` and ``alpha``, and the
    mean-correction kernels are zeroed so the untrained residual net outputs
    the bilinear demosaic exactly."""
    b = weights["conv_out.b"].copy()
    b[3:6] = inverse_softplus(lam - LAMBDA_FLOOR)
    b[6:9] = inverse_softplus(alpha - 1.0 - ALPHA_FLOOR)
    w = weights["conv_out.w"].copy()
    w[..., 0:3] = 0
    out = dict(weights)
    out["conv_out.b"] = b.astype(weights["conv_out.b"].dtype)
    out["conv_out.w"] = w
    return out


def check_weights(weights: dict, cfg: NetConfig) -> None:
    expected = weight_shapes(cfg)
    missing = set(expected) - set(weights)
    extra = set(weights) - set(expected)
    if missing or extra:
        raise ValueError(f"weight names do not match config (missing {sorted(missing)}, extra {sorted(extra)})")
    for name, shape in expected.items():
        if tuple(weights[name].shape) != tuple(shape):
            raise ValueError(f"{name}: shape {weights[name].shape}, expected {shape}")


# --- layers ----------------------------------------------------------------


def _im2col(x, k):
    if k == 1:
        return x
    p = k // 2
    n, h, w, _ = x.shape
    xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))
    return np.concatenate([xp[:, i : i + h, j : j + w, :] for i in range(k) for j in range(k)], axis=-1)


def conv_forward(x, w, b):
    k = w.shape[0]
    cols = _im2col(x, k)
    out = cols @ w.reshape(-1, w.shape[-1]) + b
    return out, cols


def conv_backward(g, cols, w, need_dx=True):
    k, _, cin, cout = w.shape
    g2 = g.reshape(-1, cout)
    dw = (cols.reshape(-1, cols.shape[-1]).T @ g2).reshape(w.shape)
    db = g2.sum(axis=0)
    if not need_dx:
        return None, dw, db
    dcols = g @ w.reshape(-1, cout).T
    if k == 1:
        return dcols, dw, db
    p = k // 2
    n, h, wd, _ = g.shape
    dxp = np.zeros((n, h + 2 * p, wd + 2 * p, cin), dtype=g.dtype)
    idx = 0
    for i in range(k):
        for j in range(k):
            dxp[:, i : i + h, j : j + wd, :] += dcols[..., idx * cin : (idx + 1) * cin]
            idx += 1
    return dxp[:, p : p + h, p : p + wd, :], dw, db


def lrelu(x, slope):
    return np.where(x > 0, x, slope * x)


def lrelu_backward(g, x, slope):
    return np.where(x > 0, g, slope * g)


def depth_to_space(u):
    n, h, w, c4 = u.shape
    c = c4 // 4
    return u.reshape(n, h, w, 2, 2, c).transpose(0, 1, 3, 2, 4, 5).reshape(n, 2 * h, 2 * w, c)


def space_to_depth(v):
    n, h2, w2, c = v.shape
    h, w = h2 // 2, w2 // 2
    return v.reshape(n, h, 2, w, 2, c).transpose(0, 1, 3, 2, 4, 5).reshape(n, h, w, 4 * c)


def softplus(u):
    return np.logaddexp(0.0, u)


def sigmoid(u):
    return 0.5 * (1.0 + np.tanh(0.5 * u))


# --- network ---------------------------------------------------------------


def _as_batch(raw):
    """Return ``(N, H, W)`` raw data and whether the input was a single mosaic."""
    if isinstance(raw, RawMosaic):
        if raw.phase != "RGGB":
            raise ValueError("network expects RGGB raws; convert with to_rggb")
        return raw.data[None], True
    if isinstance(raw, (list, tuple)):
        return np.stack([r.data if isinstance(r, RawMosaic) else np.asarray(r) for r in raw]), False
    a = np.asarray(raw, dtype=np.float64)
    if a.ndim == 2:
        return a[None], True
    return a, False


def baseline(raws) -> np.ndarray:
    return np.stack([bilinear_demosaic(RawMosaic(r)) for r in raws])


def head_map(raw12, base=None) -> NigField:
    """Map 12 unconstrained planes (last axis) to a valid NIG field.

    ``base`` is the bilinear demosaic the mean correction is added to; pass
    ``None`` to read the mean directly from planes 0-2.
    """
    raw12 = np.asarray(raw12, dtype=np.float64)
    mean = raw12[..., 0:3] if base is None else base + raw12[..., 0:3]
    return NigField(
        mean,
        softplus(raw12[..., 3:6]) + LAMBDA_FLOOR,
        1.0 + ALPHA_FLOOR + softplus(raw12[..., 6:9]),
        softplus(raw12[..., 9:12]) + BETA_FLOOR,
    )


def head_backward(grads: dict, raw12) -> np.ndarray:
    raw12 = np.asarray(raw12, dtype=np.float64)
    return np.concatenate(
        [
            grads["mean"],
            grads["lam"] * sigmoid(raw12[..., 3:6]),
            grads["alpha"] * sigmoid(raw12[..., 6:9]),
            grads["beta"] * sigmoid(raw12[..., 9:12]),
        ],
        axis=-1,
    )


def forward(raw, weights: dict, cfg: NetConfig, keep_cache: bool = True):
    """Run the network. Returns ``(NigField, cache)``.

    A single :class:`RawMosaic` (or ``HxW`` array) gives an ``HxWx3`` field;
    a batch ``(N, H, W)`` gives ``(N, H, W, 3)``.
    """
    data, single = _as_batch(raw)
    dtype = weights["conv_in.w"].dtype
    slope = cfg.slope
    x = np.moveaxis(pack4(data.astype(dtype)), 1, -1)
    c = {}

    a0, c["conv_in"] = conv_forward(x, weights["conv_in.w"], weights["conv_in.b"])
    f0 = lrelu(a0, slope)
    c["a0"] = a0
    h = f0
    for b in range(cfg.grdb_blocks):
        feats = [h]
        for i in range(cfg.grdb_layers_per_block):
            name = f"grdb{b}.dense{i}"
            a, c[name] = conv_forward(np.concatenate(feats, axis=-1), weights[f"{name}.w"], weights[f"{name}.b"])
            c[f"{name}.a"] = a
            feats.append(lrelu(a, slope))
        name = f"grdb{b}.fuse"
        fused, c[name] = conv_forward(np.concatenate(feats, axis=-1), weights[f"{name}.w"], weights[f"{name}.b"])
        h = h + fused
    m, c["conv_mid"] = conv_forward(h, weights["conv_mid.w"], weights["conv_mid.b"])
    gpre = m + f0
    c["gpre"] = gpre
    g = lrelu(gpre, slope)
    upre, c["conv_up"] = conv_forward(g, weights["conv_up.w"], weights["conv_up.b"])
    c["upre"] = upre
    full = depth_to_space(lrelu(upre, slope))
    raw12, c["conv_out"] = conv_forward(full, weights["conv_out.w"], weights["conv_out.b"])
    c["raw12"] = raw12

    base = baseline(data) if cfg.residual else None
    field = head_map(raw12, base)
    if single:
        field = NigField(field.mean[0], field.lam[0], field.alpha[0], field.beta[0])
    cache = {"layers": c, "cfg": cfg, "single": single} if keep_cache else None
    return field, cache


def backward(field_grads: dict, cache, weights: dict) -> dict:
    """Reverse pass: gradients of a scalar loss w.r.t. every weight, given its
    gradients w.r.t. the output field (keys ``mean, lam, alpha, beta``)."""
    if not cache:
        raise ValueError("backward needs the cache from forward(keep_cache=True)")
    c, cfg = cache["layers"], cache["cfg"]
    slope = cfg.slope
    fg = {k: np.asarray(v, dtype=np.float64) for k, v in field_grads.items()}
    if cache["single"]:
        fg = {k: v[None] for k, v in fg.items()}
    dtype = weights["conv_in.w"].dtype
    grads = {}

    d12 = head_backward(fg, c["raw12"]).astype(dtype)
    dfull, grads["conv_out.w"], grads["conv_out.b"] = conv_backward(d12, c["conv_out"], weights["conv_out.w"])
    dupre = lrelu_backward(space_to_depth(dfull), c["upre"], slope)
    dg, grads["conv_up.w"], grads["conv_up.b"] = conv_backward(dupre, c["conv_up"], weights["conv_up.w"])
    dgpre = lrelu_backward(dg, c["gpre"], slope)
    dh, grads["conv_mid.w"], grads["conv_mid.b"] = conv_backward(dgpre, c["conv_mid"], weights["conv_mid.w"])
    df0 = dgpre.copy()

    c_in, growth, n_layers = cfg.channels, cfg.growth, cfg.grdb_layers_per_block
    for b in reversed(range(cfg.grdb_blocks)):
        name = f"grdb{b}.fuse"
        dcat, grads[f"{name}.w"], grads[f"{name}.b"] = conv_backward(dh, c[name], weights[f"{name}.w"])
        # dcat splits into the block input followed by each dense output
        dfeats = [dcat[..., :c_in]] + [
            dcat[..., c_in + i * growth : c_in + (i + 1) * growth] for i in range(n_layers)
        ]
        dfeats[0] = dfeats[0] + dh
        for i in reversed(range(n_layers)):
            name = f"grdb{b}.dense{i}"
            da = lrelu_backward(dfeats[i + 1], c[f"{name}.a"], slope)
            dinp, grads[f"{name}.w"], grads[f"{name}.b"] = conv_backward(da, c[name], weights[f"{name}.w"])
            dfeats[0] = dfeats[0] + dinp[..., :c_in]
            for j in range(i):
                dfeats[j + 1] = dfeats[j + 1] + dinp[..., c_in + j * growth : c_in + (j + 1) * growth]
        dh = dfeats[0]
    df0 = df0 + dh
    da0 = lrelu_backward(df0, c["a0"], slope)
    _, grads["conv_in.w"], grads["conv_in.b"] = conv_backward(da0, c["conv_in"], weights["conv_in.w"], need_dx=False)
    return grads


def predict(raw, weights: dict, cfg: NetConfig) -> NigField:
    field, _ = forward(raw, weights, cfg, keep_cache=False)
    return field
