from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spikegrid.data import read_event_csv
from spikegrid.encode import Event, augment, direct_encode, events_to_frames, normalize, poisson_encode
from spikegrid.errors import ContractError, ShapeError

FIXTURES = Path(__file__).parent / "fixtures"
EVENT_FILES = sorted(FIXTURES.glob("events_*.csv"))


# ---------------------------------------------------------------- poisson

def test_poisson_extremes():
    img = np.array([[[0.0, 1.0]]])
    out = poisson_encode(img, 50, seed=0)
    assert out.shape == (50, 1, 1, 2)
    assert np.all(out[:, 0, 0, 0] == 0) and np.all(out[:, 0, 0, 1] == 1)


@pytest.mark.parametrize("p", [0.1, 0.5, 0.9])
def test_poisson_rate_within_three_sigma(p):
    T = 10_000
    rate = poisson_encode(np.full((1, 1, 1), p), T, seed=int(p * 10)).mean()
    assert abs(rate - p) <= 3 * np.sqrt(p * (1 - p) / T)


def test_poisson_binary_and_seeded():
    img = np.random.default_rng(0).random((3, 4, 4))
    a, b = poisson_encode(img, 8, seed=7), poisson_encode(img, 8, seed=7)
    assert a.tobytes() == b.tobytes()
    assert set(np.unique(a)) <= {0.0, 1.0}
    assert poisson_encode(img, 8, seed=8).tobytes() != a.tobytes()


def test_poisson_rejects_out_of_range():
    with pytest.raises(ContractError):
        poisson_encode(np.array([1.5]), 2, seed=0)
    with pytest.raises(ContractError):
        poisson_encode(np.array([-0.1]), 2, seed=0)


# ---------------------------------------------------------------- direct

def test_direct_is_a_view():
    img = np.arange(12.0).reshape(3, 2, 2)
    seq = direct_encode(img, 3)
    assert seq.shape == (3, 3, 2, 2) and np.shares_memory(seq, img)
    assert all(np.array_equal(s, img) for s in seq)
    assert direct_encode(img, 1).shape == (1, 3, 2, 2)


def test_direct_matches_poisson_mean():
    img = np.array([[[0.2, 0.7]]])
    pois = poisson_encode(img, 20_000, seed=1).mean(axis=0)
    np.testing.assert_allclose(pois, direct_encode(img, 1)[0], atol=0.015)


# ---------------------------------------------------------------- events

def test_four_events_two_windows():
    events = [Event(t, 0, 0, 1) for t in range(4)]
    frames = events_to_frames(events, 2, 1, 1, duration=4)
    assert frames[:, 1, 0, 0].tolist() == [2.0, 2.0]
    assert frames[:, 0].sum() == 0


def test_last_window_closed_on_right():
    # span from 0 to 10 inclusive split in 5: t=10 sits on the right edge and stays in the last window
    events = [Event(0, 0, 0, 0), Event(10, 0, 0, 0)]
    frames = events_to_frames(events, 5, 1, 1, duration=10)
    assert frames[:, 0, 0, 0].tolist() == [1, 0, 0, 0, 1]


@pytest.mark.parametrize("T", [1, 2, 7])
def test_single_event(T):
    frames = events_to_frames([Event(123, 2, 1, 0)], T, 3, 4)
    assert np.count_nonzero(frames) == 1 and frames[0, 0, 1, 2] == 1.0


def test_polarity_channels():
    frames = events_to_frames([Event(0, 0, 0, 0), Event(1, 0, 0, 1), Event(2, 0, 0, 1)], 1, 1, 1)
    assert frames[0, :, 0, 0].tolist() == [1.0, 2.0]


@pytest.mark.parametrize("path", EVENT_FILES, ids=lambda p: p.stem)
@pytest.mark.parametrize("window", ["duration", "count"])
def test_fixture_conservation(path, window):
    events = read_event_csv(path)
    for T in (1, 3, 10):
        frames = events_to_frames(events, T, 16, 16, window=window)
        assert frames.sum() == len(events)
        assert np.all(frames >= 0)
        binary = events_to_frames(events, T, 16, 16, window=window, binarize=True)
        assert set(np.unique(binary)) <= {0.0, 1.0}


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 10_000), st.integers(0, 7), st.integers(0, 5), st.integers(0, 1)),
                min_size=1, max_size=60), st.integers(1, 12))
def test_conservation_property(raw, T):
    frames = events_to_frames([Event(*e) for e in raw], T, 6, 8)
    assert frames.sum() == len(raw)


def test_count_window_balances():
    events = [Event(t, 0, 0, 1) for t in (0, 1, 2, 1000, 1001, 1002)]
    assert events_to_frames(events, 3, 1, 1, window="count")[:, 1, 0, 0].tolist() == [2, 2, 2]
    assert events_to_frames(events, 3, 1, 1)[:, 1, 0, 0].tolist() == [3, 0, 3]


def test_event_errors():
    with pytest.raises(ContractError):
        events_to_frames([], 2, 4, 4)
    with pytest.raises(ShapeError):
        events_to_frames([Event(0, 4, 0, 0)], 2, 4, 4)
    with pytest.raises(ContractError):
        events_to_frames([Event(0, 0, 0, 0)], 0, 4, 4)
    with pytest.raises(ValueError):
        events_to_frames([Event(0, 0, 0, 0)], 1, 4, 4, window="slices")


# ---------------------------------------------------------------- normalize / augment

def test_normalize():
    img = np.full((2, 3, 3), 0.25)
    assert np.all(normalize(img, [0.25, 0.25], [1.0, 1.0]) == 0.0)
    out = normalize(np.stack([np.ones((2, 2)), 3 * np.ones((2, 2))]), [1.0, 1.0], [1.0, 2.0])
    assert out[1, 0, 0] == 1.0
    with pytest.raises(ContractError):
        normalize(img, [0, 0], [1, 0])


def test_hflip():
    img = np.array([[[1.0, 2.0]]])
    assert augment(img, pad=0, hflip_p=1.0, seed=0).tolist() == [[[2.0, 1.0]]]
    assert augment(img, pad=0, hflip_p=0.0, seed=0).tolist() == [[[1.0, 2.0]]]


def test_pad_crop_offset():
    img = np.zeros((1, 32, 32))
    img[0, 10, 20] = 1.0
    seen = set()
    for s in range(200):
        out = augment(img, pad=4, crop=32, hflip_p=0.0, seed=s)
        assert out.shape == (1, 32, 32)
        (r, c), = np.argwhere(out[0])
        dr, dc = r - 10, c - 20
        assert -4 <= dr <= 4 and -4 <= dc <= 4
        seen.add((dr, dc))
    assert len(seen) > 20


def test_augment_batch_deterministic():
    x = np.random.default_rng(0).random((4, 3, 8, 8))
    assert augment(x, seed=3).tobytes() == augment(x, seed=3).tobytes()
    assert augment(x, seed=3).shape == x.shape
