import numpy as np
import pytest
from hypothesis import given, strategies as st

from strav import losses as L
from strav.alignment import AlignedReference
from strav.core import InvalidInputError
from strav.losses import LOSS_NAMES, LossWeights, SequenceSample, gram, y_comb

from oracles import o_all, o_gram, random_instance


def test_all_losses_match_oracle(rng):
    for _ in range(20):
        inst = random_instance(rng, n=int(rng.integers(1, 4)))
        got = L.compute_all(*inst)
        want = o_all(*inst)
        for k in LOSS_NAMES:
            assert abs(got[k] - want[k]) < 1e-6, k


def test_gram_oracle_and_examples(rng):
    for _ in range(20):
        f = rng.standard_normal((4, 5, 3))
        assert np.abs(gram(f) - o_gram(f)).max() < 1e-9
        g = gram(f)
        assert np.allclose(g, g.T) and np.linalg.eigvalsh(g).min() > -1e-12
    assert not gram(np.zeros((3, 3, 4))).any()
    f = rng.random((3, 4, 1))
    assert gram(f)[0, 0] == pytest.approx(float((f ** 2).mean()))


def test_y_comb_examples(rng):
    y, x = rng.random((2, 4, 4, 3)).astype(np.float32)
    assert np.array_equal(y_comb(y, x, np.zeros((4, 4))), x)
    assert np.array_equal(y_comb(y, x, np.ones((4, 4))), y)
    chk = (np.indices((4, 4)).sum(0) % 2).astype(np.float32)
    out = y_comb(y, x, chk)
    assert np.array_equal(out[chk > 0], y[chk > 0]) and np.array_equal(out[chk == 0], x[chk == 0])


def test_total_weights():
    assert L.total({k: 0.0 for k in LOSS_NAMES}) == 0
    assert L.total({k: 1.0 for k in LOSS_NAMES}) == pytest.approx(66.211, abs=1e-12)
    w = LossWeights()
    assert (w.align, w.vis, w.leftover, w.nonhole, w.percep, w.style, w.rec, w.adv) == (5, 10, 20, 6, 0.01, 24, 1.2, 0.001)
    with pytest.raises(InvalidInputError):
        LossWeights(align=-1)


@given(st.lists(st.floats(-10, 10), min_size=8, max_size=8))
def test_total_is_dot_product(vals):
    w = np.array([5, 10, 20, 6, 0.01, 24, 1.2, 0.001])
    assert L.total(dict(zip(LOSS_NAMES, vals))) == pytest.approx(float(np.dot(w, vals)), abs=1e-9)


def _perfect(rng, n=2, h=16, w=16):
    gt = [rng.random((h, w, 3)).astype(np.float32) for _ in range(n)]
    masks = [np.zeros((h, w), np.float32) for _ in range(n)]
    for m in masks:
        m[4:10, 3:12] = 1
    frames = [g * (1 - m)[..., None] for g, m in zip(gt, masks)]
    return gt, masks, frames


def test_perfect_reconstruction_zero(rng):
    gt, masks, frames = _perfect(rng)
    sample = SequenceSample(frames, masks, gt, [g.copy() for g in gt])
    refs = [[AlignedReference(f, m, np.ones_like(m), 0, "affine")] for f, m in zip(frames, masks)]
    cvis = [np.ones_like(m) for m in masks]
    losses = L.compute_all(sample, refs, cvis, [np.zeros_like(m) for m in masks], frames)
    for k in LOSS_NAMES[:-1]:
        assert losses[k] == 0, k


def test_region_confined_errors(rng):
    gt, masks, frames = _perfect(rng)
    cvis = []
    leftovers = []
    for m in masks:
        c = np.zeros_like(m)
        c[4:10, 3:7] = 1
        cvis.append(c)
        leftovers.append(m * (1 - c))
    regions = {"vis": [m * c for m, c in zip(masks, cvis)], "leftover": leftovers, "nonhole": [1 - m for m in masks]}
    for name, reg in regions.items():
        outs = [g + 0.2 * r[..., None] * (1 - 2 * (g > 0.5)) for g, r in zip(gt, reg)]
        sample = SequenceSample(frames, masks, gt, outs)
        vals = {"vis": L.l_hole_visible(sample, cvis), "leftover": L.l_hole_leftover(sample, leftovers),
                "nonhole": L.l_non_hole(sample)}
        for k, v in vals.items():
            if k == name:
                assert v == pytest.approx(0.2, abs=1e-6)
            else:
                assert v == 0


def test_align_examples(rng):
    gt, masks, frames = _perfect(rng, n=1)
    sample = SequenceSample(frames, masks, gt, gt)
    same = [[AlignedReference(frames[0], masks[0], np.ones_like(masks[0]), 1, "affine")]]
    assert L.l_align(sample, same) == 0
    off = [[AlignedReference(frames[0] + 0.1, masks[0], np.ones_like(masks[0]), 1, "affine")]]
    assert L.l_align(sample, off) == pytest.approx(0.1, abs=1e-6)
    empty = [[AlignedReference(frames[0], np.ones_like(masks[0]), np.ones_like(masks[0]), 1, "affine")]]
    assert L.l_align(sample, empty) == 0


def test_rec_and_adv_examples(rng):
    x = [rng.random((8, 8, 3)).astype(np.float32)]
    lo = np.zeros((8, 8), np.float32)
    lo[2:5, 2:6] = 1
    assert L.l_rec(x, x, [lo]) == 0
    xt = [x[0] + 0.3 * lo[..., None]]
    assert L.l_rec(xt, x, [lo]) == pytest.approx(0.3, abs=1e-6)
    assert L.l_adv(x, critic=lambda f: 0.0) == 0
    assert L.l_adv([np.full((4, 4, 3), 0.5, np.float32)]) == pytest.approx(-0.5)
    frames = [rng.random((4, 4, 3)) for _ in range(3)]
    lin = lambda f: float(2 * f[..., 0].sum() - f[..., 2].mean())  # noqa: E731
    assert L.l_adv(frames, lin) == pytest.approx(-np.mean([lin(f) for f in frames]))


def test_feature_losses_examples(rng):
    gt, masks, frames = _perfect(rng, n=1)
    same = SequenceSample(frames, masks, gt, gt)
    assert L.l_perceptual(same) == 0 and L.l_style(same) == 0
    # constant luma offset on a constant image: only the four colour/luma channels move
    g = [np.full((16, 16, 3), 0.4, np.float32)]
    m = [np.ones((16, 16), np.float32)]
    s = SequenceSample(g, m, g, [np.full((16, 16, 3), 0.5, np.float32)])
    # luma, R, G, B and blurred luma each differ by 0.1 out of 8 channels, at every level
    assert L.l_perceptual(s) == pytest.approx(5 * 0.1 / 8, abs=1e-6)
    # P = 1 extractor reduces to the plain per-map L1
    phi1 = lambda f: [np.asarray(f, np.float64)]  # noqa: E731
    assert L.l_perceptual(s, phi1) == pytest.approx(0.1, abs=1e-6)


def test_sample_validation(rng):
    f = rng.random((4, 4, 3))
    with pytest.raises(InvalidInputError):
        SequenceSample([f], [np.zeros((4, 4))], [f], [])
    with pytest.raises(InvalidInputError):
        SequenceSample([f], [np.zeros((3, 4))], [f], [f])
