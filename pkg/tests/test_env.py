import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from aimlab.env import (
    Action, action_of, actions_of, glyph, load_idx, payoff, payoff_arrays, sample_signal, synthetic_glyphs, write_idx,
)
from aimlab.errors import ConfigError

C, D = Action.C, Action.D


def test_payoff_table_by_hand():
    cells = {
        (C, C, 0): (5, 5), (C, C, 1): (4, 4),
        (C, D, 0): (-1, 5), (C, D, 1): (-2, 5),
        (D, C, 0): (5, -1), (D, C, 1): (5, -2),
        (D, D, 0): (0, 0), (D, D, 1): (0, 0),
    }
    for (a, b, par), want in cells.items():
        r = payoff(a, b, par)
        assert (r.r_a, r.r_b) == want


def test_payoff_arrays_agree_with_scalar():
    for ca, cb, par in itertools.product([True, False], [True, False], [0, 1]):
        ra, rb = payoff_arrays(np.array([ca]), np.array([cb]), np.array([par]))
        r = payoff(C if ca else D, C if cb else D, par)
        assert (ra[0], rb[0]) == (r.r_a, r.r_b)


def test_joint_reward_max_is_ten():
    assert payoff(C, C, 0).joint == 10.0
    assert max(payoff(a, b, p).joint for a, b, p in itertools.product([C, D], [C, D], [0, 1])) == 10.0


def test_bad_parity():
    with pytest.raises(ConfigError):
        payoff(C, C, 2)


@given(st.integers(2, 256).flatmap(lambda k: st.tuples(st.just(k), st.integers(0, k - 1), st.integers(0, k - 1))))
def test_action_rule(args):
    K, t0, t1 = args
    want = C if t0 < K / 2 else D
    assert action_of((t0, t1), K) is want
    assert bool(actions_of(np.array([[t0, t1]]), K)[0]) == (want is C)


def test_glyphs_distinct_and_in_range():
    g = np.stack([glyph(d) for d in range(10)])
    assert g.shape == (10, 16, 16) and set(np.unique(g)) <= {0.0, 1.0}
    flat = g.reshape(10, -1)
    assert len({row.tobytes() for row in flat}) == 10


def test_synthetic_glyphs_balanced_and_seeded():
    a, b = synthetic_glyphs(200, seed=3), synthetic_glyphs(200, seed=3)
    assert np.array_equal(a.images, b.images) and np.array_equal(a.labels, b.labels)
    assert np.bincount(a.labels).tolist() == [20] * 10
    assert a.images.min() >= 0 and a.images.max() <= 1 and a.image_shape == (1, 16, 16)
    assert not np.array_equal(a.images, synthetic_glyphs(200, seed=4).images)


def test_dataset_read_only():
    ds = synthetic_glyphs(10)
    with pytest.raises(ValueError):
        ds.images[0, 0, 0, 0] = 1.0


def test_sample_signal_context_bit(rng):
    ds = synthetic_glyphs(50)
    for _ in range(20):
        s = sample_signal(ds, rng)
        assert s.context_bit == s.label % 2


def test_idx_round_trip(tmp_path, rng):
    imgs = rng.integers(0, 256, size=(7, 5, 4)).astype(np.uint8)
    labels = rng.integers(0, 10, size=7)
    write_idx(tmp_path / "i.idx", tmp_path / "l.idx", imgs, labels)
    ds = load_idx(tmp_path / "i.idx", tmp_path / "l.idx")
    np.testing.assert_array_equal(ds.images[:, 0], imgs / 255.0)
    np.testing.assert_array_equal(ds.labels, labels)
    assert len(load_idx(tmp_path / "i.idx", tmp_path / "l.idx", limit=3)) == 3


def test_idx_header_is_big_endian(tmp_path):
    write_idx(tmp_path / "i.idx", tmp_path / "l.idx", np.zeros((2, 3, 3), np.uint8), [1, 2])
    raw = (tmp_path / "i.idx").read_bytes()
    assert raw[:4] == b"\x00\x00\x08\x03" and raw[4:8] == b"\x00\x00\x00\x02"


def test_idx_bad_magic_and_size(tmp_path):
    write_idx(tmp_path / "i.idx", tmp_path / "l.idx", np.zeros((2, 3, 3), np.uint8), [1, 2])
    with pytest.raises(ConfigError, match="magic"):
        load_idx(tmp_path / "l.idx", tmp_path / "l.idx")
    data = (tmp_path / "i.idx").read_bytes()
    (tmp_path / "t.idx").write_bytes(data[:-1])
    with pytest.raises(ConfigError, match="payload"):
        load_idx(tmp_path / "t.idx", tmp_path / "l.idx")
