import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis.extra.numpy import arrays
from hypothesis import strategies as st

from nigjdd import net
from nigjdd.bayer import bilinear_demosaic
from nigjdd.imaging import RawMosaic
from nigjdd.nig import NigField, elbo_loss, neg_elbo_grad

SMALL = net.NetConfig(channels=6, grdb_blocks=2, grdb_layers_per_block=2, growth=3)


def f64(weights):
    return {k: v.astype(np.float64) for k, v in weights.items()}


def test_shapes_and_output_contract(rng):
    w = net.init_weights(SMALL, 0)
    net.check_weights(w, SMALL)
    raw = RawMosaic(rng.random((16, 12)))
    field, _ = net.forward(raw, w, SMALL)
    assert field.shape == (16, 12, 3)
    field.validate()
    batch, _ = net.forward(rng.random((2, 8, 8)), w, SMALL)
    assert batch.shape == (2, 8, 8, 3)


def test_zero_weights_trace(rng):
    w = {k: np.zeros_like(v) for k, v in net.init_weights(SMALL, 0).items()}
    raw = RawMosaic(rng.random((8, 8)))
    field = net.predict(raw, w, SMALL)
    log2 = np.log(2.0)
    assert np.allclose(field.mean, bilinear_demosaic(raw), atol=1e-6)
    assert np.allclose(field.lam, log2 + 1e-3)
    assert np.allclose(field.alpha, 1 + 1e-3 + log2)
    assert np.allclose(field.beta, log2 + 1e-8)


def test_head_map_examples():
    f = net.head_map(np.zeros((1, 1, 12)))
    assert float(f.lam[0, 0, 0]) == pytest.approx(0.6941, abs=1e-4)
    u = np.zeros((1, 1, 12))
    u[..., 6:9] = 10.0
    assert float(net.head_map(u).alpha[0, 0, 0]) == pytest.approx(11.0010, abs=1e-4)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (2, 2, 12), elements=st.floats(-700, 700)))
def test_head_map_always_valid(u):
    net.head_map(u).validate()


def test_calibrate_head():
    w = net.calibrate_head({k: np.zeros_like(v) for k, v in net.init_weights(SMALL, 0).items()}, 2e3, 180.5)
    f = net.predict(RawMosaic(np.full((8, 8), 0.5)), w, SMALL)
    assert np.allclose(f.lam, 2e3, rtol=1e-5)
    assert np.allclose(f.alpha, 180.5, rtol=1e-5)


def test_translation_covariance(rng):
    cfg = net.NetConfig(channels=4, grdb_blocks=1, grdb_layers_per_block=2, growth=2)
    w = f64(net.init_weights(cfg, 3))
    raw = rng.random((56, 56))
    a = net.predict(raw, w, cfg)
    b = net.predict(np.roll(raw, (2, 2), axis=(0, 1)), w, cfg)
    m = 20
    for name in ("mean", "lam", "alpha", "beta"):
        x, y = getattr(a, name), getattr(b, name)
        assert np.allclose(x[m:-m, m:-m], y[m + 2 : -m + 2, m + 2 : -m + 2], atol=1e-10), name


def test_init_determinism_and_scale():
    cfg = net.NetConfig()
    a, b = net.init_weights(cfg, 5), net.init_weights(cfg, 5)
    assert all(np.array_equal(a[k], b[k]) for k in a)
    c = net.init_weights(cfg, 6)
    assert not np.array_equal(a["conv_in.w"], c["conv_in.w"])
    for name, shape in net.layer_shapes(cfg).items():
        wv = a[f"{name}.w"]
        assert np.all(a[f"{name}.b"] == 0)
        if wv.size >= 2000 and name != "conv_out":
            assert np.std(wv) == pytest.approx(np.sqrt(2 / np.prod(shape[:3])), rel=0.05), name


def test_weight_mismatch_rejected():
    w = net.init_weights(SMALL, 0)
    w.pop("conv_mid.b")
    with pytest.raises(ValueError):
        net.check_weights(w, SMALL)


def test_backward_needs_cache(rng):
    w = net.init_weights(SMALL, 0)
    _, cache = net.forward(rng.random((8, 8)), w, SMALL, keep_cache=False)
    with pytest.raises(ValueError):
        net.backward({}, cache, w)


def _loss_fn(kind, prior, target):
    def loss(field):
        if kind == "mse":
            return float(np.sum((field.mean - target) ** 2))
        return -elbo_loss(field, prior, target, kind).elbo

    def grad(field):
        if kind == "mse":
            z = np.zeros_like(field.mean)
            return {"mean": 2 * (field.mean - target), "lam": z, "alpha": z, "beta": z}
        return neg_elbo_grad(field, prior, target, kind)

    return loss, grad


def fd_relative_errors(cfg, weights, raws, loss, grad, names=None, per_tensor=4, h=1e-5, seed=0):
    field, cache = net.forward(raws, weights, cfg)
    g = net.backward(grad(field), cache, weights)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for name in names or weights:
        flat = weights[name].reshape(-1)
        idx = range(flat.size) if per_tensor is None else rng.choice(flat.size, min(per_tensor, flat.size), False)
        for i in idx:
            old = flat[i]
            flat[i] = old + h
            lp = loss(net.predict(raws, weights, cfg))
            flat[i] = old - h
            lm = loss(net.predict(raws, weights, cfg))
            flat[i] = old
            num = (lp - lm) / (2 * h)
            ana = g[name].reshape(-1)[i]
            worst = max(worst, abs(num - ana) / max(abs(num), abs(ana), 1e-6))
    return worst


@pytest.mark.parametrize("kind", ["paper_literal", "derivation_consistent", "mse"])
def test_gradients_match_finite_differences(kind, rng):
    w = f64(net.calibrate_head(net.init_weights(SMALL, 1), 3.0, 5.0))
    raws = rng.random((2, 8, 8))
    base = net.baseline(raws)
    target = np.clip(base + 0.05 * rng.standard_normal(base.shape), 0, 1)
    prior = NigField(target, 2.0, 5.0, 0.05)
    loss, grad = _loss_fn(kind, prior, target)
    assert fd_relative_errors(SMALL, w, raws, loss, grad) < 1e-5


def test_gradient_linearity_and_dead_paths(rng):
    w = f64(net.init_weights(SMALL, 2))
    raws = rng.random((1, 8, 8))
    field, cache = net.forward(raws, w, SMALL)
    z = np.zeros_like(field.mean)
    g1 = net.backward({"mean": z, "lam": np.ones_like(z), "alpha": z, "beta": z}, cache, w)
    g2 = net.backward({"mean": z, "lam": 2 * np.ones_like(z), "alpha": z, "beta": z}, cache, w)
    for k in g1:
        assert np.allclose(g2[k], 2 * g1[k])
    # Only the lambda planes reach a loss that depends on lambda alone.
    ob = g1["conv_out.b"]
    assert np.all(ob[[0, 1, 2, 6, 7, 8, 9, 10, 11]] == 0)
    assert np.all(ob[3:6] != 0)


def test_float32_forward_is_deterministic(rng):
    w = net.init_weights(SMALL, 0)
    raw = rng.random((8, 8))
    a, b = net.predict(raw, w, SMALL), net.predict(raw, w, SMALL)
    assert np.array_equal(a.mean, b.mean) and np.array_equal(a.beta, b.beta)
