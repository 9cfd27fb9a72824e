import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spikegrid import tensor as tn
from spikegrid.errors import ShapeError
from spikegrid.neuron import (LifParams, LifState, PlifParam, heaviside, lif_step, logit, plif_update_leak,
                              soft_spike, surrogate_grad)
from spikegrid.tensor import Tape, Tensor


def run(currents, params, u0=None):
    state = LifState(None if u0 is None else Tensor([u0]))
    us, spikes = [], []
    for c in currents:
        o, state = lif_step(state, Tensor([c]), params)
        spikes.append(o.data.item())
        us.append(state.u.data.item())
    return us, spikes


def test_resting_neuron():
    o, state = lif_step(LifState.zeros((1,)), Tensor([0.0]), LifParams())
    assert o.data.item() == 0.0 and state.u.data.item() == 0.0


def test_three_step_recurrence():
    us, spikes = run([0.6, 0.6, 0.6], LifParams(leak=0.5))
    assert spikes == [0.0, 0.0, 1.0]
    assert us == pytest.approx([0.6, 0.9, 0.05], abs=1e-15)


def test_single_pulse_then_decay():
    us, spikes = run([1.2, 0.0, 0.0, 0.0, 0.0], LifParams(leak=0.874))
    assert spikes == [1.0, 0.0, 0.0, 0.0, 0.0]
    assert us[:3] == pytest.approx([0.2, 0.1748, 0.1527752], abs=1e-12)


def test_shape_mismatch():
    with pytest.raises(ShapeError):
        lif_step(LifState.zeros((2,)), Tensor([1.0, 2.0, 3.0]), LifParams())


def test_heaviside():
    assert heaviside(np.array(1.0), 1.0) == 1.0
    assert heaviside(np.array(0.999), 1.0) == 0.0
    assert heaviside(np.array(-5.0), 1.0) == 0.0


def test_surrogate_values():
    p = LifParams()
    assert surrogate_grad(1.0, p) == pytest.approx(0.3, abs=1e-15)
    assert surrogate_grad(2.0, p) == 0.0
    assert surrogate_grad(0.5, p) == pytest.approx(0.15, abs=1e-15)


def test_literal_surrogate_peaks_at_zero():
    p = LifParams(surrogate="literal")
    assert surrogate_grad(0.0, p) == pytest.approx(0.3)
    assert surrogate_grad(1.0, p) == 0.0


def test_soft_spike_values_and_slope():
    p = LifParams()
    assert soft_spike(-0.5, p) == 0.0
    assert soft_spike(2.5, p) == pytest.approx(0.3, abs=1e-15)
    h = 1e-6
    slope = (soft_spike(1.0 + h, p) - soft_spike(1.0 - h, p)) / (2 * h)
    assert slope == pytest.approx(0.3, abs=1e-6)


@settings(max_examples=50, deadline=None)
@given(u=st.floats(-3, 5), alpha=st.floats(0.05, 2.0))
def test_soft_spike_derivative_is_surrogate(u, alpha):
    p = LifParams(alpha=alpha)
    h = 1e-6
    fd = (soft_spike(u + h, p) - soft_spike(u - h, p)) / (2 * h)
    assert fd == pytest.approx(surrogate_grad(u, p), abs=1e-6)
    assert soft_spike(u + 0.1, p) >= soft_spike(u, p)


def test_spike_uses_surrogate_on_tape():
    u = tn.parameter([0.5, 1.0, 2.5])
    with Tape() as tape:
        o, _ = lif_step(LifState(), u * 1.0, LifParams())
        loss = tn.sum(o)
    assert np.array_equal(o.data, [0.0, 1.0, 1.0])
    np.testing.assert_allclose(tape.backward(loss)[u], [0.15, 0.3, 0.0], rtol=0, atol=1e-15)


def test_detached_reset_gives_pure_leak_path():
    # with the reset detached, d u_t / d u_{t-1} = leak regardless of spiking
    c = tn.parameter([1.5])
    p = LifParams(leak=0.7)
    with Tape() as tape:
        _, s = lif_step(LifState(), c * 1.0, p)
        _, s = lif_step(s, Tensor([0.0]), p)
        loss = tn.sum(s.u)
    g = tape.backward(loss)[c]
    assert g.item() == pytest.approx(0.7, abs=1e-15)


def test_attached_reset_includes_surrogate():
    c = tn.parameter([1.5])
    p = LifParams(leak=0.7, detach_reset=False)
    with Tape() as tape:
        _, s = lif_step(LifState(), c * 1.0, p)
        loss = tn.sum(s.u)
    assert tape.backward(loss)[c].item() == pytest.approx(1.0 - 1.0 * 0.15, abs=1e-15)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), frac=st.floats(0.0, 1.0), leak=st.floats(0.0, 1.0),
       theta=st.floats(0.2, 2.0))
def test_membrane_stays_bounded(seed, frac, leak, theta):
    # inputs in [0, c] with c <= threshold: one subtraction per step always brings u back under threshold
    rng = np.random.default_rng(seed)
    c = frac * theta
    params = LifParams(leak=leak, threshold=theta)
    state = LifState()
    for _ in range(60):
        o, state = lif_step(state, Tensor(rng.uniform(0.0, c, 8)), params)
        assert set(np.unique(o.data)) <= {0.0, 1.0}
        assert np.all(state.u.data < theta)
        assert np.all(state.u.data < theta + c + 1e-12)


def test_strong_input_outruns_single_subtraction():
    # above threshold, one spike per step cannot remove the surplus: u climbs by 0.5 each step
    state = LifState()
    us = []
    for _ in range(8):
        _, state = lif_step(state, Tensor([1.5]), LifParams(leak=1.0))
        us.append(state.u.data.item())
    assert us == pytest.approx([0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0], abs=1e-12)
    assert us[-1] > 1.0 + 2.0


@settings(max_examples=40, deadline=None)
@given(u0=st.floats(-5.0, 0.99), leak=st.floats(0.0, 1.0))
def test_leak_monotonicity(u0, leak):
    params = LifParams(leak=leak)
    state = LifState(Tensor([u0]))
    prev = abs(u0)
    for _ in range(20):
        _, state = lif_step(state, Tensor([0.0]), params)
        now = abs(state.u.data.item())
        assert now <= prev
        prev = now


def test_plif_examples():
    p = PlifParam(0.5)
    assert p.raw.data.item() == pytest.approx(0.0, abs=1e-15)
    assert plif_update_leak(p).data.item() == 0.5
    assert logit(0.986) == pytest.approx(4.254, abs=1e-3)
    assert PlifParam(0.986).value == pytest.approx(0.986, abs=1e-15)
    with Tape() as tape:
        lam = plif_update_leak(p)
        loss = tn.sum(lam * 1.0)
    assert tape.backward(loss)[p.raw].item() == pytest.approx(0.25, abs=1e-15)


def test_plif_gradient_flows_through_leak_terms():
    p = PlifParam(0.8)
    params = LifParams()
    with Tape() as tape:
        lam = p.leak()
        _, s = lif_step(LifState(), Tensor([0.4]), params, lam)
        _, s = lif_step(s, Tensor([0.1]), params, lam)
        loss = tn.sum(s.u)
    lam_v = p.value
    # u_2 = 0.1 + lam * 0.4 ; d/draw = 0.4 * lam (1 - lam)
    assert tape.backward(loss)[p.raw].item() == pytest.approx(0.4 * lam_v * (1 - lam_v), abs=1e-15)


def test_plif_stays_in_unit_interval():
    p = PlifParam(0.874)
    for raw in (-800.0, -30.0, 0.0, 30.0, 800.0):
        p.raw.data = np.asarray(raw)
        lam = plif_update_leak(p).data.item()
        assert 0.0 <= lam <= 1.0


def test_params_validated():
    for bad in ({"leak": 1.5}, {"threshold": 0.0}, {"alpha": -1.0}, {"reset": "zero"}, {"leak_mode": "x"}):
        with pytest.raises(ValueError):
            LifParams(**bad)
