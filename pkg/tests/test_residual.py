import numpy as np
import pytest

from spikegrid import tensor as tn
from spikegrid.errors import ShapeError
from spikegrid.neuron import LifParams, LifState, lif_step, surrogate_grad
from spikegrid.residual import ConnectionMode, Mode, downsample_project, s2m_apply, s2s_apply, v2v_apply, v2v_inject
from spikegrid.tensor import Tape, Tensor


def test_s2m_identity_mapping():
    x = Tensor(np.array([1.0, 0.0, 1.0, 1.0]))
    o, state = lif_step(LifState.zeros((4,)), s2m_apply(Tensor(np.zeros(4)), x, 1.0), LifParams())
    assert np.array_equal(o.data, x.data)
    assert np.array_equal(state.u.data, np.zeros(4))


def test_s2m_zero_residual_unchanged():
    c = Tensor([0.3, -1.2])
    assert np.array_equal(s2m_apply(c, Tensor([0.0, 0.0])).data, c.data)


def test_s2m_above_threshold_resets_by_subtraction():
    o, state = lif_step(LifState(), s2m_apply(Tensor([0.5]), Tensor([1.0]), 1.0), LifParams())
    assert o.data.item() == 1.0
    assert state.u.data.item() == pytest.approx(0.5, abs=1e-15)


def test_s2s_examples():
    r = Tensor([0.0, 1.0, 2.5])
    assert np.array_equal(s2s_apply(Tensor(np.zeros(3)), r).data, r.data)
    assert s2s_apply(Tensor([1.0]), Tensor([1.0])).data.item() == 2.0
    spikes = Tensor(np.ones((1, 2, 2, 2)))
    out = s2s_apply(spikes, Tensor(np.ones((1, 3, 4, 4))), Tensor(np.zeros((2, 3, 1, 1))), 2)
    assert np.array_equal(out.data, spikes.data)


def test_s2s_shape_mismatch_without_projection():
    with pytest.raises(ShapeError):
        s2s_apply(Tensor(np.zeros((1, 2, 2, 2))), Tensor(np.zeros((1, 3, 2, 2))))


def test_v2v_membrane_identity():
    prior = np.array([0.3, -0.2, 0.7])
    p = LifParams()
    main_state, skip_state = LifState(Tensor(prior)), LifState(Tensor(prior))
    r = v2v_apply(Tensor(np.zeros(3)), None)
    _, a = lif_step(main_state, v2v_inject(Tensor(np.zeros(3)), r), p)
    _, b = lif_step(skip_state, Tensor(np.zeros(3)), p)
    assert np.array_equal(a.u.data, b.u.data)


def test_v2v_carrier_sums_block_inputs():
    p1, p2, p3 = Tensor([0.5]), Tensor([-0.25]), Tensor([2.0])
    r = v2v_apply(p1, None)
    r = v2v_apply(p2, r)
    r = v2v_apply(p3, r)
    assert r.data.item() == 2.25
    zero = v2v_apply(Tensor([0.0]), v2v_apply(Tensor([0.0]), None))
    assert zero.data.item() == 0.0


def test_v2v_carrier_gradient_is_one():
    r_in = tn.parameter([0.3, 1.7])
    with Tape() as tape:
        loss = tn.sum(v2v_apply(Tensor([2.0, -1.0]), r_in))
    assert np.array_equal(tape.backward(loss)[r_in], [1.0, 1.0])


def test_projection_examples():
    x = Tensor(np.random.default_rng(0).normal(size=(2, 3, 4, 4)))
    eye = Tensor(np.eye(3).reshape(3, 3, 1, 1))
    assert np.array_equal(downsample_project(x, eye, 1).data, x.data)
    down = downsample_project(x, eye, 2)
    assert down.shape == (2, 3, 2, 2)
    assert np.array_equal(down.data, x.data[:, :, ::2, ::2])
    assert np.all(downsample_project(x, Tensor(np.zeros((5, 3, 1, 1))), 2).data == 0.0)
    with pytest.raises(ShapeError):
        downsample_project(x, eye, 3)
    with pytest.raises(ShapeError):
        downsample_project(x, Tensor(np.zeros((3, 3, 3, 3))))


def test_s2s_residual_gradient_is_exactly_one():
    res = tn.parameter([0.0, 1.0, 1.0, 0.4])
    w = Tensor(np.zeros(4))
    with Tape() as tape:
        o, _ = lif_step(LifState(), w * res, LifParams())
        loss = tn.sum(s2s_apply(o, res))
    assert np.array_equal(tape.backward(loss)[res], np.ones(4))


@pytest.mark.parametrize("u", [0.5, 1.0, 3.0])
@pytest.mark.parametrize("w_prime", [1.0, 0.6])
def test_s2m_residual_gradient(u, w_prime):
    res = tn.parameter([1.0])
    main = Tensor([u - w_prime])
    with Tape() as tape:
        o, _ = lif_step(LifState(), s2m_apply(main, res, w_prime), LifParams())
        loss = tn.sum(o)
    expected = w_prime * surrogate_grad(np.array([u]), LifParams())
    assert abs(tape.backward(loss)[res].item() - expected.item()) <= 1e-12


def test_connection_mode():
    assert ConnectionMode("S2M").kind is Mode.S2M
    assert ConnectionMode().name == "S2S"
    with pytest.raises(ValueError):
        ConnectionMode("X2Y")
