import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from lfmdepth import biasmap
from lfmdepth import tensor as T
from lfmdepth.loss import latent_loss, total_loss, variance_loss
from lfmdepth.schedule import NoiseSchedule, build_schedule
from lfmdepth.tensor import ShapeError, Tensor

SCHED = build_schedule()


def tau(v=0.0):
    return Tensor(np.array(v), requires_grad=True)


def test_gate_example_two_pixels():
    w = biasmap.gate_and_normalize(np.array([0.0, 1.0]), np.array([1.0, 1.0]), tau(0.0)).data
    # sigmoid(0) = 0.5, sigmoid(1) = 0.73106; normalized by their mean
    g = 1 / (1 + np.exp(-np.array([0.0, 1.0])))
    np.testing.assert_allclose(w, g / (g.mean() + 1e-6), rtol=1e-12)
    np.testing.assert_allclose(w, [0.81231, 1.18769], atol=1e-4)


def test_distance_weight_endpoints():
    np.testing.assert_allclose(biasmap.distance_weight(np.array([-1.0, 0.0, 1.0])), [0, 0.5, 1])


def test_structure_weight_uniform_on_ramp():
    ramp = np.tile(np.linspace(-1, 1, 9), (9, 1))
    np.testing.assert_allclose(biasmap.structure_weight(ramp), 1.0)
    assert np.all(biasmap.structure_weight(np.zeros((4, 4))) == 0)
    with pytest.raises(ShapeError):
        biasmap.structure_weight(np.zeros((1, 4)))


def test_structure_weight_peaks_at_step_edge():
    step = np.where(np.arange(8) < 4, -1.0, 1.0)[None].repeat(8, 0)
    ws = biasmap.structure_weight(step)
    assert ws[:, 3:5].min() == 1.0 and ws[:, :2].max() == 0.0


def test_pooling_modes():
    wd = np.arange(16, dtype=float).reshape(1, 4, 4)
    a, m = biasmap.pool_weights(wd, wd, 2, "avg", "max")
    np.testing.assert_allclose(a[0], [[2.5, 4.5], [10.5, 12.5]])
    np.testing.assert_allclose(m[0], [[5, 7], [13, 15]])


def test_ramp_half_snr_gamma_five():
    # two-step schedule with SNR (2, 1): the second step sits at exactly half the max
    half = NoiseSchedule(np.array([0.0, 1 / 3, 0.25]), np.array([1.0, 2 / 3, 0.5]),
                         np.array([np.inf, 2.0, 1.0]))
    assert biasmap.ramp(2, half, 5.0) == 0.03125
    s = SCHED
    eta_sched = biasmap.ramp(np.arange(1, s.T + 1), s, 5.0)
    assert eta_sched[0] == 1.0
    assert np.all(np.diff(eta_sched) < 0)


@given(st.floats(0.1, 30.0))
def test_ramp_monotone_for_any_gamma(gamma):
    eta = biasmap.ramp(np.arange(1, SCHED.T + 1), SCHED, gamma)
    assert np.all(np.diff(eta) <= 0) and eta.max() <= 1 and eta.min() >= 0


@given(hnp.arrays(np.float64, (3, 4, 4), elements=st.floats(0, 1)),
       hnp.arrays(np.float64, (3, 4, 4), elements=st.floats(0, 1)),
       st.floats(-3, 3))
def test_batch_mean_identity(wd, ws, t0):
    g = 1 / (1 + np.exp(-(wd * ws - t0)))
    w = biasmap.gate_and_normalize(wd, ws, tau(t0)).data
    assert w.mean() == pytest.approx(g.mean() / (g.mean() + biasmap.KAPPA), rel=1e-12)
    if t0 <= 0:  # gate >= 1/2 everywhere, so the shortfall is at most 2 kappa
        assert 1 - 2e-6 <= w.mean() <= 1


@given(hnp.arrays(np.float64, (2, 4, 4), elements=st.floats(0, 1)), st.integers(1, 200))
def test_w_final_convex_hull(wd, t):
    w = biasmap.gate_and_normalize(wd, np.ones_like(wd), tau(0.0)).data
    wf = biasmap.temporal_modulate(w, t, SCHED)
    lo = np.minimum(1.0, w) - 1e-12
    hi = np.maximum(1.0, w) + 1e-12
    assert np.all(wf >= lo) and np.all(wf <= hi)
    assert min(1, w.mean()) - 1e-12 <= wf.mean() <= max(1, w.mean()) + 1e-12


def test_temporal_modulate_endpoints_and_rows():
    w = np.full((2, 2, 2), 3.0)
    np.testing.assert_allclose(biasmap.temporal_modulate(w, 1, SCHED), 3.0)
    out = biasmap.temporal_modulate(w, np.array([1, 200]), SCHED)
    np.testing.assert_allclose(out[0], 3.0)
    assert abs(out[1] - 1.0).max() < 1e-6


def test_disabled_component_is_ones():
    dn = np.random.default_rng(0).uniform(-1, 1, (2, 8, 8))
    wd, ws = biasmap.latent_weight_maps(dn, 4, use_struct=False)
    assert np.all(ws == 1)
    wd2, _ = biasmap.latent_weight_maps(dn, 4, use_dist=False)
    assert np.all(wd2 == 1)


def test_tau_gradient_matches_finite_difference():
    wd = np.random.default_rng(1).uniform(0, 1, (2, 3, 3))
    ws = np.random.default_rng(2).uniform(0, 1, (2, 3, 3))
    err = np.random.default_rng(3).uniform(0, 2, (2, 3, 3))
    t = tau(0.3)

    def fn():
        return T.mean(biasmap.gate_and_normalize(wd, ws, t) * Tensor(err))
    T.backward(fn())
    h = 1e-6
    t.data = np.array(0.3 + h)
    up = fn().item()
    t.data = np.array(0.3 - h)
    down = fn().item()
    assert t.grad == pytest.approx((up - down) / (2 * h), rel=1e-5)


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------

def test_unweighted_no_variance_is_mse():
    rng = np.random.default_rng(0)
    a, b = rng.standard_normal((2, 3, 4, 4)), rng.standard_normal((2, 3, 4, 4))
    rep = total_loss(Tensor(a), b, None, lam=0.0)
    assert rep.total.item() == pytest.approx(np.mean((a - b) ** 2), rel=1e-14)
    ones = np.ones((2, 1, 4, 4))
    assert total_loss(Tensor(a), b, Tensor(ones), lam=0.0).total.item() == pytest.approx(rep.total.item())


def test_variance_loss_examples():
    assert variance_loss(Tensor(np.array([1.0, 2.0, 3.0, 4.0])), np.zeros(4)).item() == 1.25
    eps = np.random.default_rng(0).standard_normal(10)
    assert variance_loss(Tensor(eps + 0.7), eps).item() == pytest.approx(0.0, abs=1e-15)


def test_weighted_latent_loss_broadcasts_over_channels():
    err = np.ones((1, 3, 2, 2))
    w = np.array([[[[0.0, 2.0], [1.0, 1.0]]]])
    assert latent_loss(Tensor(err), np.zeros_like(err), Tensor(w)).item() == pytest.approx(1.0)


def test_total_loss_components_and_errors():
    a = Tensor(np.array([1.0, 2.0, 3.0, 4.0]))
    rep = total_loss(a, np.zeros(4), None, lam=2.0)
    assert rep.total.item() == pytest.approx(7.5 + 2 * 1.25)
    assert rep.count == 4
    with pytest.raises(ValueError):
        total_loss(a, np.zeros(4), lam=-1)
    with pytest.raises(ShapeError):
        total_loss(a, np.zeros(3))
