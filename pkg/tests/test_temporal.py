import numpy as np
import pytest
from hypothesis import given, strategies as st

from strav import synthgen
from strav.alignment import AlignedReference, Reference, joint_align
from strav.core import NoUsableReference
from strav.features import encode
from strav.metrics import region_metrics
from strav.temporal import (
    TemporalAttention, attention_transfer, masked_softmax, pixel_transfer, similarity, temporal_inpaint,
    visibility,
)


def aligned(frame, mask=None, validity=None, index=0):
    h, w = frame.shape[:2]
    return AlignedReference(
        frame=np.asarray(frame, np.float32),
        mask=np.zeros((h, w), np.float32) if mask is None else np.asarray(mask, np.float32),
        validity=np.ones((h, w), np.float32) if validity is None else np.asarray(validity, np.float32),
        source_index=index, branch="affine",
    )


def test_visibility_examples(rng):
    f = rng.random((4, 4, 3))
    vm, vd = visibility(np.zeros((4, 4)), aligned(f))
    assert vm.all() and vd.all()
    vm, vd = visibility(np.zeros((4, 4)), aligned(f, mask=np.ones((4, 4))))
    assert not vm.any() and not vd.any()
    tm = np.zeros((4, 4))
    tm[1, 2] = 1
    vm, vd = visibility(tm, aligned(f))
    assert vm[1, 2] == 0 and vd[1, 2] == 1
    vm, vd = visibility(np.zeros((4, 4)), aligned(f, validity=np.zeros((4, 4))))
    assert not vd.any()


def test_similarity_examples(rng):
    a = rng.random((4, 4, 8)) + 0.1
    v = np.ones((4, 4))
    assert similarity(a, a, v) == pytest.approx(1.0)
    assert similarity(a, -a, v) == pytest.approx(-1.0)
    e0 = np.zeros((4, 4, 8))
    e0[..., 0] = 1
    e1 = np.zeros((4, 4, 8))
    e1[..., 1] = 2
    assert similarity(e0, e1, v) == pytest.approx(0.0)
    assert similarity(a, a, np.zeros((4, 4))) is None


def test_similarity_oracle(rng):
    for _ in range(20):
        a, b = rng.standard_normal((2, 5, 6, 8))
        v = (rng.random((5, 6)) > 0.3).astype(float)
        num = den = 0.0
        for i in range(5):
            for j in range(6):
                if v[i, j]:
                    num += float(a[i, j] @ b[i, j]) / (np.linalg.norm(a[i, j]) * np.linalg.norm(b[i, j]))
                    den += 1
        assert abs(similarity(a, b, v) - num / den) < 1e-9


def test_masked_softmax_examples():
    v = np.ones((2, 1, 1))
    assert np.allclose(masked_softmax([0.3, 0.3], v, 0.5)[:, 0, 0], [0.5, 0.5])
    w = masked_softmax([0.9, -0.9], np.array([[[1.0]], [[0.0]]]), 0.5)
    assert w[0, 0, 0] == 1.0 and w[1, 0, 0] == 0.0
    w = masked_softmax([1.0, 0.0], v, 0.1)[:, 0, 0]
    e = np.exp(10.0)
    assert np.allclose(w, [e / (e + 1), 1 / (e + 1)], atol=1e-7)
    assert w[0] == pytest.approx(0.99995, abs=1e-5)
    assert not masked_softmax([0.1, 0.2], np.zeros((2, 3, 3))).any()
    with pytest.raises(ValueError):
        masked_softmax([0.1], np.ones((1, 1, 1)), 0)


@given(st.integers(0, 2**31 - 1), st.floats(0.01, 2.0))
def test_masked_softmax_invariants(seed, tau):
    rng = np.random.default_rng(seed)
    sims = rng.uniform(-1, 1, 5)
    vis = (rng.random((5, 25, 40)) > 0.6).astype(np.float32)
    w = masked_softmax(sims, vis, tau)
    total = w.sum(axis=0)
    anyv = vis.any(axis=0)
    assert np.abs(total[anyv] - 1).max() <= 1e-5
    assert not w[:, ~anyv].any()
    assert not w[vis == 0].any()
    # scaling similarities by a positive constant keeps the per-pixel argmax
    w2 = masked_softmax(sims * 3.0, vis, tau)
    assert np.array_equal(w.argmax(0)[anyv], w2.argmax(0)[anyv])


def test_attention_transfer_oracle(rng):
    for _ in range(20):
        r, h, w = rng.integers(1, 5), 8, 8
        frames = rng.random((r, h, w, 3)).astype(np.float32)
        vis = (rng.random((r, h, w)) > 0.4).astype(np.float32)
        att = TemporalAttention(rng.uniform(-1, 1, r), masked_softmax(rng.uniform(-1, 1, r), vis, 0.3), vis, 0.3)
        pyrs = [encode(f, 1 - v) for f, v in zip(frames, vis)]
        out = attention_transfer(pyrs, att, 0)
        ref = np.zeros_like(out, dtype=np.float64)
        for i in range(h):
            for j in range(w):
                for k in range(r):
                    ref[i, j] += float(att.weights[k, i, j]) * pyrs[k][0][i, j].astype(np.float64)
        assert np.abs(out - ref).max() < 1e-6
        px = pixel_transfer([aligned(f) for f in frames], att.weights)
        pref = sum(att.weights[k][..., None].astype(np.float64) * frames[k] for k in range(r))
        assert np.abs(px - pref).max() < 1e-6


def test_attention_transfer_zero_weights(rng):
    vis = np.zeros((2, 8, 8), np.float32)
    att = TemporalAttention(np.array([0.1, 0.2]), np.zeros((2, 8, 8), np.float32), vis, 0.5)
    pyrs = [encode(rng.random((8, 8, 3))) for _ in range(2)]
    assert not attention_transfer(pyrs, att, 0).any()
    assert attention_transfer(pyrs, att, 1).shape == (4, 4, 8)


def test_copy_case(rng):
    gt = rng.random((32, 32, 3)).astype(np.float32)
    m = np.zeros((32, 32), np.float32)
    m[10:20, 8:22] = 1
    x = gt * (1 - m)[..., None]
    res = temporal_inpaint(x, m, [aligned(gt, index=1)])
    assert np.abs(res.y_t1 - gt)[m > 0].max() <= 1e-6
    assert not res.leftover.any()
    assert np.array_equal(res.y_t1[m == 0], x[m == 0])


def test_no_donor_gives_leftover_equal_hole(rng):
    gt = rng.random((32, 32, 3)).astype(np.float32)
    m = np.zeros((32, 32), np.float32)
    m[8:16, 8:16] = 1
    res = temporal_inpaint(gt * (1 - m)[..., None], m, [aligned(gt, mask=m, index=1)])
    assert np.array_equal(res.leftover, m)
    assert not res.attention.c_visible[m > 0].any()
    with pytest.raises(NoUsableReference):
        temporal_inpaint(gt, m, [])


def test_leftover_definition_and_range(rng):
    seq = synthgen.generate(synthgen.get_suite("static").spec(seed=3, low_size=(64, 64), frames=5))
    f, m = seq.low_frames, seq.low_masks
    refs = [Reference(f[i], m[i], i) for i in (0, 1, 3, 4)]
    res = temporal_inpaint(f[2], m[2], joint_align(f[2], m[2], refs, target_index=2))
    cv = res.attention.c_visible
    assert set(np.unique(cv)) <= {0.0, 1.0}
    assert np.array_equal(res.leftover, m[2] * (1 - cv))
    assert not (res.leftover * cv).any()
    assert np.array_equal(res.y_t1[m[2] == 0], f[2][m[2] == 0])


@pytest.mark.parametrize("seed", range(3))
def test_pan_suite_psnr(seed):
    seq = synthgen.generate(synthgen.get_suite("pan").spec(seed=seed, low_size=(96, 96), frames=5))
    f, m = seq.low_frames, seq.low_masks
    refs = [Reference(f[i], m[i], i) for i in range(1, 5)]
    res = temporal_inpaint(f[0], m[0], joint_align(f[0], m[0], refs, target_index=0))
    assert not res.leftover.any()
    assert region_metrics(res.y_t1, seq.low_ground_truth[0], m[0]).psnr >= 30
