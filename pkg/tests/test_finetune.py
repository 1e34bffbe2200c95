import numpy as np
import pytest
from scipy import stats

from nigjdd import net
from nigjdd.bayer import mosaic
from nigjdd.checkpoint import Checkpoint
from nigjdd.finetune import (
    DegenerateMaskError,
    FinetuneConfig,
    confidence_mask,
    finetune,
    finetune_prior,
    masked_elbo,
    neighbor_prior,
)
from nigjdd.nig import NigField, elbo_loss
from nigjdd.prior import make_prior

CFG = FinetuneConfig(window=5)


def test_config_validation():
    for bad in [dict(patch=4), dict(patch=1), dict(lam=0), dict(lr=-1), dict(loss_variant="x")]:
        with pytest.raises(ValueError):
            FinetuneConfig(**bad)


def test_neighbor_prior_constant_image():
    img = np.full((8, 8, 3), 0.3)
    prior, _ = neighbor_prior(img, 3, 0)
    assert np.array_equal(prior, img)


def test_neighbor_prior_offsets_and_reads(rng):
    img = rng.random((10, 12, 3))
    prior, off = neighbor_prior(img, 3, 5)
    assert off.shape == (10, 12, 3, 2)
    assert off.min() >= -1 and off.max() <= 1
    rr, cc, ch = np.indices(img.shape)
    assert np.array_equal(prior, img[rr + off[..., 0], cc + off[..., 1], ch])
    # interior offsets are never the centre
    assert np.all(np.any(off[1:-1, 1:-1] != 0, axis=-1))
    a, _ = neighbor_prior(img, 3, 5)
    assert np.array_equal(a, prior)


def test_neighbor_prior_clamps_at_border():
    img = np.arange(36.0).reshape(6, 6)
    for seed in range(20):
        _, off = neighbor_prior(img, 5, seed)
        rr, cc = np.indices(img.shape)
        assert np.all((rr + off[..., 0] >= 0) & (rr + off[..., 0] < 6))
        assert np.all((cc + off[..., 1] >= 0) & (cc + off[..., 1] < 6))


def test_neighbor_offsets_uniform_chi_square():
    img = np.zeros((104, 104, 10))
    _, off = neighbor_prior(img, 3, 11)
    inner = off[1:-1, 1:-1].reshape(-1, 2)
    codes = (inner[:, 0] + 1) * 3 + (inner[:, 1] + 1)
    counts = np.bincount(codes, minlength=9)
    assert counts[4] == 0
    counts = np.delete(counts, 4)
    assert counts.sum() >= 10**5
    assert stats.chisquare(counts).pvalue > 0.001


def test_neighbor_prior_errors(rng):
    with pytest.raises(ValueError):
        neighbor_prior(rng.random((8, 8, 3)), 4, 0)
    with pytest.raises(ValueError):
        neighbor_prior(rng.random((4, 4, 3)), 5, 0)


def test_confidence_mask_rules(rng):
    x = rng.random((8, 8, 3))
    assert np.all(confidence_mask(x, x, 0.1) == 1)
    assert np.all(confidence_mask(x, x, 0.0) == 0)
    other = rng.random((8, 8, 3))
    assert np.all(confidence_mask(x, other, 10.0) == 1)
    # strict inequality at exactly 2 sigma
    assert confidence_mask(np.zeros(1), np.full(1, 0.2), 0.1)[0] == 0
    m = confidence_mask(x, other, 0.2)
    assert set(np.unique(m)) <= {0.0, 1.0}
    with pytest.raises(ValueError):
        confidence_mask(x, other[:4], 0.1)
    with pytest.raises(ValueError):
        confidence_mask(x, other, -1.0)


def test_mask_outlines_step_edge():
    img = np.zeros((32, 32, 3))
    img[:, 16:] = 0.5
    prior, off = neighbor_prior(img, 3, 0)
    m = confidence_mask(img, prior, 0.05)
    straddle = (np.arange(32)[None, :, None] + off[..., 1] >= 16) != (np.arange(32)[None, :, None] >= 16)
    assert np.all(m[straddle] == 0)
    assert np.all(m[~straddle] == 1)


def _field(rng, shape):
    return NigField(rng.random(shape), rng.uniform(0.5, 2, shape), rng.uniform(2, 5, shape),
                    rng.uniform(0.01, 0.1, shape))


def test_masked_elbo_singleton_and_full(rng):
    shape = (8, 8, 3)
    x = rng.random(shape)
    q = _field(rng, shape)
    prior_img, _ = neighbor_prior(x, 3, 1)
    b = elbo_loss(q, finetune_prior(x, prior_img, CFG), x, per_pixel=True)
    terms = b.kl_map - b.expectation_map
    mask = np.zeros(shape)
    mask[3, 4, 1] = 1
    assert masked_elbo(q, x, prior_img, mask, CFG) == pytest.approx(terms[3, 4, 1])
    full = masked_elbo(q, x, x, np.ones(shape), CFG)
    ref = elbo_loss(q, make_prior(x, x, CFG.prior_config()), x)
    assert full == pytest.approx(-ref.elbo)
    assert finetune_prior(x, prior_img, CFG).lam.flat[0] == CFG.lam


def test_masked_elbo_gradient_zero_on_masked(rng):
    shape = (6, 6, 3)
    x = rng.random(shape)
    q = _field(rng, shape)
    mask = (rng.random(shape) > 0.5).astype(float)
    _, g = masked_elbo(q, x, x[::-1], mask, CFG, with_grad=True)
    assert np.all(g["mean"][mask == 0] == 0)
    assert np.any(g["mean"][mask == 1] != 0)


def test_masked_elbo_errors(rng):
    q = _field(rng, (4, 4, 3))
    x = rng.random((4, 4, 3))
    with pytest.raises(DegenerateMaskError):
        masked_elbo(q, x, x, np.zeros((4, 4, 3)), FinetuneConfig(window=3))
    with pytest.raises(ValueError):
        masked_elbo(q, x, x, np.ones((4, 4, 1)), FinetuneConfig(window=3))


@pytest.fixture
def small_ckpt():
    cfg = net.NetConfig(channels=4, grdb_blocks=1, grdb_layers_per_block=2, growth=2)
    return Checkpoint(cfg, net.calibrate_head(net.init_weights(cfg, 0), 2e3, 180.5))


def test_finetune_zero_iterations(small_ckpt, rng):
    raw = mosaic(rng.random((16, 16, 3)))
    res = finetune(small_ckpt, raw, FinetuneConfig(iterations=0, window=5))
    pred = np.clip(net.predict(raw, small_ckpt.weights, small_ckpt.net_config).mean, 0, 1)
    assert np.array_equal(res.restored, pred)


def test_finetune_zero_lr_is_bit_identical(small_ckpt, rng):
    clean = rng.random((16, 16, 3))
    raw = mosaic(clean + 0.05 * rng.standard_normal(clean.shape))
    res = finetune(small_ckpt, raw, FinetuneConfig(iterations=3, lr=0.0, window=5), clean=clean)
    for k, v in small_ckpt.weights.items():
        assert res.checkpoint.weights[k].tobytes() == v.tobytes()
    assert [i for i, _ in res.curve] == [0, 1, 2, 3]
    assert len({p for _, p in res.curve}) == 1


def test_finetune_updates_weights(small_ckpt, rng):
    clean = rng.random((16, 16, 3))
    raw = mosaic(clean + 0.05 * rng.standard_normal(clean.shape))
    res = finetune(small_ckpt, raw, FinetuneConfig(iterations=2, lr=1e-3, window=5))
    assert res.curve is None
    assert any(not np.array_equal(res.checkpoint.weights[k], v) for k, v in small_ckpt.weights.items())
    assert res.checkpoint.training_meta["finetune"]["iterations"] == 2
