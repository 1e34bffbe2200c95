import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nigjdd.bayer import (
    N_TRANSFORMS,
    bayer_transform,
    bilinear_demosaic,
    cfa_masks,
    dihedral,
    embed,
    inverse_bayer_transform,
    inverse_dihedral,
    mosaic,
    pack4,
    self_ensemble,
    to_rggb,
    undo_bayer_transform,
    unpack4,
)
from nigjdd.imaging import RawMosaic


def _channel_at(r, c):
    return {(0, 0): 0, (0, 1): 1, (1, 0): 1, (1, 1): 2}[(r % 2, c % 2)]


def loop_demosaic(raw):
    """Direct per-pixel reference: copy known samples, average in-bounds neighbours."""
    h, w = raw.shape
    out = np.zeros((h, w, 3))
    axial = [(-1, 0), (1, 0), (0, -1), (0, 1)]
    diag = [(-1, -1), (-1, 1), (1, -1), (1, 1)]
    for r in range(h):
        for c in range(w):
            for ch in range(3):
                if _channel_at(r, c) == ch:
                    out[r, c, ch] = raw[r, c]
                    continue
                offs = axial if ch == 1 else axial + diag
                vals = [raw[r + dr, c + dc] for dr, dc in offs
                        if 0 <= r + dr < h and 0 <= c + dc < w and _channel_at(r + dr, c + dc) == ch]
                out[r, c, ch] = np.mean(vals)
    return out


def test_mosaic_pattern():
    img = np.zeros((4, 4, 3))
    img[..., 0] = 1
    raw = mosaic(img).data
    expect = np.zeros((4, 4))
    expect[::2, ::2] = 1
    assert np.array_equal(raw, expect)
    assert np.all(mosaic(np.full((4, 6, 3), 0.4)).data == 0.4)


def test_cfa_masks_one_channel_per_site():
    for ph in ("RGGB", "GRBG", "GBRG", "BGGR"):
        m = cfa_masks((4, 4), ph)
        assert np.all(m.sum(axis=2) == 1)
        assert m[..., 1].sum() == 8


def test_demosaic_constant():
    out = bilinear_demosaic(RawMosaic(np.full((6, 8), 0.4)))
    assert np.allclose(out, 0.4, atol=1e-15)


def test_demosaic_matches_loop_reference(rng):
    for shape in [(4, 4), (6, 8), (10, 6)]:
        raw = rng.random(shape)
        assert np.allclose(bilinear_demosaic(RawMosaic(raw)), loop_demosaic(raw), atol=1e-12)


def test_demosaic_b_site_impulse():
    raw = np.zeros((4, 4))
    raw[1, 1] = 1
    out = bilinear_demosaic(RawMosaic(raw))
    # Only blue samples are non-zero, so red and green stay zero.
    assert np.all(out[..., 0] == 0) and np.all(out[..., 1] == 0)
    b = out[..., 2]
    expect = np.zeros((4, 4))
    # Axial neighbours (0,1),(1,0),(1,2),(2,1) average two blue sites, except
    # on the border where only one exists; diagonal sites average four (or
    # fewer on borders).
    expect[1, 1] = 1
    expect[0, 1] = expect[1, 0] = 1.0
    expect[1, 2] = expect[2, 1] = 0.5
    expect[0, 0] = 1.0
    expect[0, 2] = expect[2, 0] = 0.5
    expect[2, 2] = 0.25
    assert np.allclose(b, expect)
    assert np.allclose(b, loop_demosaic(raw)[..., 2])


def test_demosaic_horizontal_ramp_interior():
    w = 12
    ramp = np.tile(np.linspace(0, 1, w), (8, 1))
    img = np.repeat(ramp[..., None], 3, axis=2)
    out = bilinear_demosaic(mosaic(img))
    assert np.allclose(out[1:-1, 1:-1], img[1:-1, 1:-1], atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 5), st.integers(1, 5), st.integers(0, 2**32 - 1))
def test_mosaic_demosaic_fixed_point(hh, ww, seed):
    raw = np.random.default_rng(seed).random((2 * hh, 2 * ww))
    assert np.array_equal(mosaic(bilinear_demosaic(RawMosaic(raw))).data, raw)


def test_embed_places_samples(rng):
    raw = RawMosaic(rng.random((4, 4)))
    e = embed(raw)
    assert np.array_equal(e.sum(axis=2), raw.data)


def test_pack4_examples(rng):
    p = pack4(np.array([[1.0, 2.0], [3.0, 4.0]]))
    assert p.shape == (4, 1, 1)
    assert list(p.ravel()) == [1.0, 2.0, 3.0, 4.0]
    assert np.all(pack4(np.full((4, 6), 0.3)) == 0.3)
    raw = rng.random((3, 6, 8)).astype(np.float32)
    assert np.array_equal(unpack4(pack4(raw)), raw)


def test_to_rggb_crops_to_canonical_phase(rng):
    img = rng.random((8, 8, 3))
    for ph in ("GRBG", "GBRG", "BGGR"):
        raw = mosaic(img, ph)
        canon = to_rggb(raw)
        assert canon.phase == "RGGB"
        assert np.all(np.array(canon.data.shape) % 2 == 0)
        dr = 1 if ph in ("GBRG", "BGGR") else 0
        dc = 1 if ph in ("GRBG", "BGGR") else 0
        sub = img[dr : dr + canon.data.shape[0], dc : dc + canon.data.shape[1]]
        assert np.array_equal(canon.data, mosaic(sub).data)


def test_dihedral_group():
    a = np.arange(12.0).reshape(3, 4)
    seen = {dihedral(a, t).tobytes() + bytes(dihedral(a, t).shape) for t in range(N_TRANSFORMS)}
    assert len(seen) == 8
    for t in range(N_TRANSFORMS):
        assert np.array_equal(inverse_dihedral(dihedral(a, t), t), a)


def _labelled_rggb(h, w):
    """Raw whose values encode the CFA colour of each site (0=R, 1=G, 2=B) plus position noise."""
    lab = np.array([[_channel_at(r, c) for c in range(w)] for r in range(h)], dtype=float)
    return lab


def test_bayer_transforms_preserve_phase():
    lab = _labelled_rggb(8, 8)
    for t in range(N_TRANSFORMS):
        out = bayer_transform(RawMosaic(lab), t)
        assert out.phase == "RGGB"
        assert out.data.shape == lab.shape
        assert np.array_equal(out.data, lab), f"transform {t} broke the colour pattern"


def test_hflip_and_rot180_need_shift():
    lab = _labelled_rggb(4, 4)
    # A raw horizontal flip of RGGB starts with G on row 0 (GRBG).
    assert np.array_equal(lab[:, ::-1][0, :2], [1, 0])
    # A raw rot180 starts with B (BGGR).
    assert lab[::-1, ::-1][0, 0] == 2


def test_bayer_transform_invertible_on_interior(rng):
    raw = RawMosaic(rng.random((10, 12)))
    for t in range(N_TRANSFORMS):
        back = inverse_bayer_transform(bayer_transform(raw, t), t)
        assert np.array_equal(back.data[1:-1, 1:-1], raw.data[1:-1, 1:-1])


def test_undo_transform_on_colour_outputs(rng):
    raw = RawMosaic(rng.random((8, 10)))
    for t in range(N_TRANSFORMS):
        out = undo_bayer_transform(bilinear_demosaic(bayer_transform(raw, t)), t)
        assert out.shape == (8, 10, 3)


def test_bayer_transform_requires_rggb():
    with pytest.raises(ValueError):
        bayer_transform(RawMosaic(np.zeros((4, 4)), "BGGR"), 1)


def test_self_ensemble_constant_and_equivariant(rng):
    const = RawMosaic(np.full((8, 8), 0.3))
    assert np.allclose(self_ensemble(bilinear_demosaic, const), 0.3)

    # A pointwise colour map is equivariant, so the ensemble equals one pass
    # wherever the pad/crop bookkeeping does not touch.
    def infer(r):
        return np.repeat(r.data[..., None], 3, axis=2) * np.array([1.0, 2.0, 3.0])

    raw = RawMosaic(rng.random((8, 10)))
    ens = self_ensemble(infer, raw)
    assert np.allclose(ens[1:-1, 1:-1], infer(raw)[1:-1, 1:-1])


def test_self_ensemble_is_deterministic(rng):
    raw = RawMosaic(rng.random((8, 8)))
    a = self_ensemble(bilinear_demosaic, raw)
    b = self_ensemble(bilinear_demosaic, raw)
    assert np.array_equal(a, b)
