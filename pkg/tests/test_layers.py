import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spikegrid import tensor as tn
from spikegrid.errors import ContractError, ShapeError
from spikegrid.layers import Bntt, OutputAccumulator, boosting_forward, bntt_forward, output_step, readout, \
    spiking_conv_block
from spikegrid.neuron import LifParams, LifState, lif_step
from spikegrid.tensor import Tensor


def test_zero_variance_channel_maps_to_zero():
    bn = Bntt(2, 3)
    x = np.stack([np.full((2, 2), 7.0), np.arange(4.0).reshape(2, 2)])[None].repeat(2, axis=0)
    out = bntt_forward(bn, Tensor(x), 0, training=True)
    assert np.all(out.data[:, 0] == 0.0)


def test_two_sample_hand_normalization():
    bn = Bntt(1, 1, eps=1e-5)
    out = bntt_forward(bn, Tensor(np.array([[0.0], [2.0]])), 0, training=True)
    np.testing.assert_allclose(out.data.ravel(), np.array([-1.0, 1.0]) / np.sqrt(1 + 1e-5), rtol=0, atol=1e-15)


def test_running_stats_update_only_their_timestep():
    bn = Bntt(1, 3, momentum=0.1)
    bntt_forward(bn, Tensor(np.array([[0.0], [2.0]])), 1, training=True)
    assert bn.running_mean[:, 0].tolist() == pytest.approx([0.0, 0.1, 0.0])
    # unbiased variance of {0, 2} is 2
    assert bn.running_var[:, 0].tolist() == pytest.approx([1.0, 0.9 + 0.2, 1.0])


def test_zero_gamma_silences_timestep():
    bn = Bntt(3, 4)
    bn.gamma[2].data = np.zeros(3)
    x = Tensor(np.random.default_rng(0).normal(size=(4, 3, 2, 2)))
    assert np.all(bntt_forward(bn, x, 2, training=False).data == 0.0)
    assert np.all(bntt_forward(bn, x, 2, training=True).data == 0.0)
    assert np.any(bntt_forward(bn, x, 1, training=False).data != 0.0)


def test_eval_uses_stored_stats():
    bn = Bntt(1, 2, shift=True)
    bn.running_mean[1] = [3.0]
    bn.running_var[1] = [4.0 - 1e-5]
    bn.gamma[1].data = np.array([2.0])
    bn.beta[1].data = np.array([0.5])
    out = bntt_forward(bn, Tensor(np.array([[5.0]])), 1, training=False)
    assert out.data.item() == pytest.approx((5.0 - 3.0) / 2.0 * 2.0 + 0.5, abs=1e-12)


def test_errors():
    bn = Bntt(2, 3)
    with pytest.raises(ContractError):
        bntt_forward(bn, Tensor(np.zeros((2, 2))), 3, training=False)
    with pytest.raises(ContractError):
        bntt_forward(bn, Tensor(np.zeros((1, 2))), 0, training=True)
    with pytest.raises(ShapeError):
        bntt_forward(bn, Tensor(np.zeros((2, 5))), 0, training=False)


def test_time_averaged_shares_parameters():
    bn = Bntt(2, 5, mode="time_averaged")
    assert len(bn.gamma) == 1
    x = Tensor(np.ones((2, 2)))
    assert np.array_equal(bntt_forward(bn, x, 0, False).data, bntt_forward(bn, x, 4, False).data)
    assert bntt_forward(Bntt(2, 5, mode="none"), x, 9, False) is x


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), a=st.floats(-4, 4))
def test_eval_mode_is_affine(seed, a):
    rng = np.random.default_rng(seed)
    bn = Bntt(3, 2, shift=True)
    bn.running_mean[0] = rng.normal(size=3)
    bn.running_var[0] = rng.uniform(0.5, 2, 3)
    bn.gamma[0].data = rng.normal(size=3)
    bn.beta[0].data = rng.normal(size=3)
    x, y = rng.normal(size=(2, 4, 3))
    f = lambda v: bntt_forward(bn, Tensor(v), 0, False).data  # noqa: E731
    np.testing.assert_allclose(f(a * x + (1 - a) * y), a * f(x) + (1 - a) * f(y), rtol=0, atol=1e-10)


def test_conv_block_zero_weights():
    x = Tensor(np.random.default_rng(0).random((2, 3, 4, 4)))
    o, state, _ = spiking_conv_block(x, LifState(), Tensor(np.zeros((5, 3, 3, 3))), Bntt(5, 2), 0, LifParams())
    assert np.all(o.data == 0.0) and np.all(state.u.data == 0.0)


def test_conv_block_identity_fires_every_step():
    w = Tensor(np.eye(2).reshape(2, 2, 1, 1))
    x = Tensor(np.full((1, 2, 3, 3), 1.5))
    state = LifState()
    for t in range(4):
        o, state, _ = spiking_conv_block(x, state, w, None, t, LifParams(), padding=0)
        assert np.all(o.data == 1.0)


def test_conv_block_gamma_zero_at_one_step():
    w = Tensor(np.eye(2).reshape(2, 2, 1, 1))
    x = Tensor(np.full((2, 2, 3, 3), 1.5))
    bn = Bntt(2, 4)
    bn.running_mean[:] = 0.0
    bn.running_var[:] = 1.0 - 1e-5
    bn.gamma[1].data = np.zeros(2)
    state = LifState()
    fired = []
    for t in range(4):
        o, state, _ = spiking_conv_block(x, state, w, bn, t, LifParams(leak=0.0), padding=0)
        fired.append(o.data.max())
    assert fired == [1.0, 0.0, 1.0, 1.0]


def test_conv_block_equals_composition():
    rng = np.random.default_rng(3)
    x = Tensor(rng.random((2, 3, 5, 5)))
    w = Tensor(rng.normal(size=(4, 3, 3, 3)))
    p = LifParams()
    s1 = s2 = LifState()
    for t in range(3):
        o1, s1, _ = spiking_conv_block(x, s1, w, None, t, p)
        o2, s2 = lif_step(s2, tn.conv2d(x, w, 1, 1), p)
        assert o1.data.tobytes() == o2.data.tobytes()
        assert s1.u.data.tobytes() == s2.u.data.tobytes()


def test_boosting_examples():
    v = 0.75
    assert np.array_equal(boosting_forward(Tensor(np.full((1, 20), v))).data, [[v, v]])
    members = np.concatenate([np.arange(1.0, 11.0), np.zeros(10)])[None]
    assert boosting_forward(Tensor(members)).data[0, 0] == 5.5
    assert boosting_forward(Tensor(np.zeros((3, 100)))).shape == (3, 10)
    with pytest.raises(ShapeError):
        boosting_forward(Tensor(np.zeros((1, 15))))


def test_boosting_permutation_equivariance():
    rng = np.random.default_rng(5)
    z = rng.normal(size=(2, 40))
    perm = rng.permutation(4)
    permuted = z.reshape(2, 4, 10)[:, perm].reshape(2, 40)
    np.testing.assert_array_equal(boosting_forward(Tensor(permuted)).data, boosting_forward(Tensor(z)).data[:, perm])


def test_accumulator_examples():
    acc = OutputAccumulator()
    for _ in range(5):
        output_step(acc, Tensor([[0.4]]))
    assert readout(acc).data.item() == pytest.approx(0.4, abs=1e-15)
    acc = OutputAccumulator()
    for c in (1.0, 2.0, 3.0):
        acc.step(Tensor([[c]]))
    assert acc.readout().data.item() == 2.0
    acc = OutputAccumulator().step(Tensor(np.zeros((2, 3))))
    assert np.all(acc.readout().data == 0.0)
    with pytest.raises(ContractError):
        OutputAccumulator().readout()


def test_accumulator_linearity():
    rng = np.random.default_rng(9)
    a, b = rng.normal(size=(2, 6, 2, 3))
    ra, rb, rab = OutputAccumulator(), OutputAccumulator(), OutputAccumulator()
    for t in range(6):
        ra.step(Tensor(a[t]))
        rb.step(Tensor(b[t]))
        rab.step(Tensor(a[t] + b[t]))
    np.testing.assert_allclose(rab.readout().data, ra.readout().data + rb.readout().data, rtol=0, atol=1e-14)
