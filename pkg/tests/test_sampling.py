import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hidden_physics.errors import ArgumentError
from hidden_physics.sampling import RngStream, lhs_sample, resample_collocation
from hidden_physics.training import preset_config


def test_four_strata_one_point_each():
    pts = np.sort(lhs_sample(4, 0.0, 1.0, RngStream(0)))
    for i, p in enumerate(pts):
        assert i / 4 <= p < (i + 1) / 4


def test_single_point():
    pts = lhs_sample(1, 2.0, 3.0, RngStream(5))
    assert pts.shape == (1,) and 2.0 <= pts[0] < 3.0


def test_mean_of_large_sample():
    pts = lhs_sample(1000, 0.0, 50.0, RngStream(0))
    # 3 sigma of a plain uniform mean; stratification only tightens it
    assert abs(pts.mean() - 25.0) <= 50 * 3 / np.sqrt(12 * 1000)


def test_rejects_empty_interval():
    with pytest.raises(ArgumentError):
        lhs_sample(3, 1.0, 1.0, RngStream(0))
    with pytest.raises(ArgumentError):
        lhs_sample(0, 0.0, 1.0, RngStream(0))


def test_output_is_shuffled():
    pts = lhs_sample(200, 0.0, 1.0, RngStream(3))
    assert not np.all(np.diff(pts) > 0)


@settings(max_examples=60, deadline=None)
@given(n=st.integers(1, 500), seed=st.integers(0, 2**32),
       lo=st.floats(-100, 100), width=st.floats(1e-3, 1e3))
def test_stratification_property(n, seed, lo, width):
    hi = lo + width
    pts = np.sort(lhs_sample(n, lo, hi, RngStream(seed)))
    edges = lo + (hi - lo) * (np.arange(n + 1) / n)
    edges[-1] = hi
    assert np.all(pts >= edges[:-1]) and np.all(pts < edges[1:])


def test_substreams_are_independent_and_reproducible():
    root = RngStream(7)
    a1 = root.substream("collocation").uniform(5)
    root.substream("init").uniform(100)
    a2 = RngStream(7).substream("collocation").uniform(5)
    np.testing.assert_array_equal(a1, a2)
    assert not np.array_equal(a1, RngStream(7).substream("data").uniform(5))
    assert not np.array_equal(a1, RngStream(8).substream("collocation").uniform(5))


def test_counter_advances():
    s = RngStream(0)
    s.uniform(3)
    s.permutation(3)
    assert s.counter == 2


def test_collocation_resampling():
    cfg = preset_config("type-a")
    assert cfg.n_collocation == 1000
    stream = RngStream(0).substream("collocation")
    first = resample_collocation(cfg, stream, 50.0)
    second = resample_collocation(cfg, stream, 50.0)
    assert first.shape == (1000,)
    assert not np.array_equal(first, second)
    again = RngStream(0).substream("collocation")
    np.testing.assert_array_equal(resample_collocation(cfg, again, 50.0), first)
    np.testing.assert_array_equal(resample_collocation(cfg, again, 50.0), second)
