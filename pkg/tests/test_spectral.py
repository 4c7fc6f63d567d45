import itertools

import numpy as np
import pytest

from lfmdepth import tensor as T
from lfmdepth.tensor import ShapeError, Tensor

SIZES = (2, 4, 8, 16)


def brute_dft2(x: np.ndarray) -> np.ndarray:
    """Direct double sum over the last two axes, half-spectrum columns only."""
    h, w = x.shape[-2:]
    m = np.arange(h)
    n = np.arange(w)
    out = np.zeros(x.shape[:-2] + (h, w // 2 + 1), dtype=np.complex128)
    for k in range(h):
        for ell in range(w // 2 + 1):
            phase = np.exp(-2j * np.pi * (k * m[:, None] / h + ell * n[None, :] / w))
            out[..., k, ell] = np.sum(x * phase, axis=(-2, -1))
    return out


def rel_err(a, b):
    return np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300)


@pytest.mark.parametrize("h,w", list(itertools.product(SIZES, SIZES)))
def test_rfft2_matches_direct_sum(h, w):
    x = np.random.default_rng(h * 31 + w).standard_normal((2, h, w))
    s = T.rfft2(Tensor(x))
    got = s.re.data + 1j * s.im.data
    assert rel_err(got, brute_dft2(x)) < 1e-6
    back = T.irfft2(s).data
    assert rel_err(back, x) < 1e-6


def test_batched_rank4_round_trip():
    x = np.random.default_rng(0).standard_normal((3, 2, 8, 6))
    np.testing.assert_allclose(T.irfft2(T.rfft2(Tensor(x))).data, x, atol=1e-12)


def test_constant_input_has_only_dc():
    s = T.rfft2(Tensor(np.full((1, 4, 4), 2.0)))
    assert s.re.data[0, 0, 0] == pytest.approx(32.0)
    spec = np.abs(s.re.data) + np.abs(s.im.data)
    spec[0, 0, 0] = 0
    assert spec.max() < 1e-12


def test_rank_and_width_checks():
    with pytest.raises(ShapeError):
        T.rfft2(Tensor(np.ones((4, 4))))
    s = T.rfft2(Tensor(np.ones((1, 4, 6))))
    with pytest.raises(ShapeError):
        T.irfft2(s, out_width=8)


def test_polar_inverts_magphase():
    x = np.random.default_rng(3).standard_normal((2, 8, 8))
    s = T.rfft2(Tensor(x))
    amp, phase = T.magphase(s)
    back = T.irfft2(T.polar(amp, phase, 8)).data
    np.testing.assert_allclose(back, x, atol=1e-12)
