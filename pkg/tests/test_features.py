import numpy as np
import pytest
from hypothesis import given, strategies as st

from strav.core import InvalidInputError
from strav.features import N_CHANNELS, encode


def test_constant_gray():
    p = encode(np.full((16, 16, 3), 0.5, np.float32))
    assert p.level_count == 3
    for lvl, fm in enumerate(p.levels):
        assert fm.shape == (16 >> lvl, 16 >> lvl, N_CHANNELS)
        assert np.allclose(fm[..., :4], 0.5)
        assert np.allclose(fm[..., 4:6], 0)
        assert np.allclose(fm[..., 6], 0.5)
        assert np.allclose(fm[..., 7], 0, atol=1e-6)


def test_fully_masked_and_deterministic(rng):
    f = rng.random((8, 8, 3)).astype(np.float32)
    p = encode(f, np.ones((8, 8)))
    assert all(not fm.any() for fm in p.levels)
    a, b = encode(f), encode(f)
    assert all(np.array_equal(x, y) for x, y in zip(a.levels, b.levels))


def test_rejects_bad_dims():
    with pytest.raises(InvalidInputError):
        encode(np.zeros((6, 8, 3)), levels=3)
    with pytest.raises(InvalidInputError):
        encode(np.zeros((8, 8, 3)), levels=0)


@given(st.integers(0, 2**31 - 1), st.integers(1, 3), st.integers(1, 3))
def test_translation_covariance(seed, dy, dx):
    f = np.random.default_rng(seed).random((20, 20, 3)).astype(np.float32)
    shifted = np.roll(f, (dy, dx), axis=(0, 1))
    a = encode(f, levels=1)[0]
    b = encode(shifted, levels=1)[0]
    # interior pixels away from the wrap seam and the border
    assert np.allclose(b[dy + 2:-2, dx + 2:-2], a[2:-2 - dy, 2:-2 - dx], atol=1e-6)


@given(st.integers(0, 2**31 - 1))
def test_zero_hole_rule(seed):
    rng = np.random.default_rng(seed)
    f = rng.random((16, 16, 3)).astype(np.float32)
    m = (rng.random((16, 16)) > 0.7).astype(np.float32)
    p = encode(f, m)
    from strav.pyramid import downsample_mask

    for lvl, fm in enumerate(p.levels):
        ml = downsample_mask(m, 2 ** lvl)
        assert not fm[ml > 0].any()
