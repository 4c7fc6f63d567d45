import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from lfmdepth import codec
from lfmdepth.normalize import (DegenerateMapError, DepthMap, EmptyInputError, denormalize, normalize,
                                percentiles)
from lfmdepth.tensor import ShapeError


def sorted_percentile(values: np.ndarray, q: float) -> float:
    """Linear-interpolation percentile computed from the sorted sample."""
    v = np.sort(values)
    pos = q / 100 * (len(v) - 1)
    lo = int(np.floor(pos))
    hi = min(lo + 1, len(v) - 1)
    return v[lo] + (pos - lo) * (v[hi] - v[lo])


def test_endpoints_map_to_minus_one_zero_plus_one():
    d = DepthMap(np.linspace(1.0, 11.0, 101).reshape(1, 101))
    stats = percentiles(d)
    dn = normalize(d, stats, clamp=False).values
    mid = (stats.d2 + stats.d98) / 2
    probe = normalize(DepthMap(np.array([[stats.d2, mid, stats.d98]])), stats).values
    np.testing.assert_allclose(probe, [[-1.0, 0.0, 1.0]], atol=1e-12)
    assert dn.min() < -1 and dn.max() > 1  # tails outside [d2, d98] without clamping


def test_percentiles_match_sorted_sample_oracle():
    rng = np.random.default_rng(0)
    vals = rng.lognormal(size=(17, 23))
    s = percentiles(DepthMap(vals))
    assert s.d2 == pytest.approx(sorted_percentile(vals.ravel(), 2), rel=1e-12)
    assert s.d98 == pytest.approx(sorted_percentile(vals.ravel(), 98), rel=1e-12)


def test_invalid_pixels_are_ignored_and_zeroed():
    vals = np.array([[1.0, 2.0, 3.0, np.nan, -1.0, 0.0]])
    d = DepthMap(vals)
    assert d.valid.tolist() == [[True, True, True, False, False, False]]
    dn = normalize(d)
    assert np.all(dn.values[~d.valid] == 0)
    assert dn.values[0, 0] == -1.0 and dn.values[0, 2] == 1.0


def test_errors():
    with pytest.raises(EmptyInputError):
        percentiles(DepthMap(np.full((2, 2), np.nan)))
    with pytest.raises(DegenerateMapError):
        normalize(DepthMap(np.full((3, 3), 5.0)))
    with pytest.raises(ValueError):
        DepthMap(np.ones(4))


@given(hnp.arrays(np.float64, (6, 7), elements=st.floats(0.1, 100)))
def test_normalize_round_trip_and_range(vals):
    d = DepthMap(vals)
    try:
        stats = percentiles(d)
    except DegenerateMapError:
        return
    dn = normalize(d, stats)
    assert dn.values.min() >= -1 and dn.values.max() <= 1
    back = denormalize(normalize(d, stats, clamp=False), stats).values
    np.testing.assert_allclose(back, vals, rtol=1e-9, atol=1e-9)


@given(st.floats(0.1, 10), st.floats(-5, 5))
def test_normalization_is_affine_invariant(scale, shift):
    vals = np.random.default_rng(1).uniform(1, 20, (8, 8))
    a = normalize(DepthMap(vals)).values
    shifted = vals * scale + shift + 10  # keep depths positive
    b = normalize(DepthMap(shifted)).values
    np.testing.assert_allclose(a, b, atol=1e-9)


@pytest.mark.parametrize("r", [1, 2, 4, 8])
def test_codec_round_trip_bit_exact(r):
    img = np.random.default_rng(r).standard_normal((2, 3, 16, 24)).astype(np.float32)
    z = codec.encode(img, r)
    assert z.shape == (2, 3 * r * r, 16 // r, 24 // r)
    assert np.array_equal(codec.decode(z, r, 3), img)


def test_codec_channel_order():
    img = np.arange(16, dtype=np.float32).reshape(1, 4, 4)
    z = codec.encode(img, 2)
    # channel (k, row, col) holds pixel (2*i + row, 2*j + col)
    assert z[:, 0, 0].tolist() == [0, 1, 4, 5]
    assert z[1].tolist() == [[1, 3], [9, 11]]


def test_depth_replicas_average_back():
    dn = np.random.default_rng(0).uniform(-1, 1, (2, 8, 8)).astype(np.float32)
    z = codec.encode_depth(dn, 4)
    assert z.shape == (2, 48, 2, 2)
    assert np.array_equal(codec.decode_depth(z, 4), dn)


def test_codec_errors():
    with pytest.raises(ShapeError):
        codec.encode(np.ones((1, 6, 8)), 4)
    with pytest.raises(ShapeError):
        codec.decode(np.ones((5, 2, 2)), 2, 1)
