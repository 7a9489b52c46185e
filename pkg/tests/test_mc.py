import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bondimpact import mc
from bondimpact.errors import GridError, ParameterError


def test_gaussian_increments_deterministic():
    a = mc.gaussian_increments(123, 7, 1000, 1.0 / 365.0)
    b = mc.gaussian_increments(123, 7, 1000, 1.0 / 365.0)
    assert np.array_equal(a, b)


def test_gaussian_increments_mean_clt():
    dt = 1.0 / 365.0
    z = mc.gaussian_increments(99, 0, 1_000_000, dt)
    se = np.sqrt(dt / z.size)
    assert abs(z.mean()) < 4 * se


def test_streams_uncorrelated():
    n = 200_000
    a = mc.gaussian_increments(5, 0, n, 1.0)
    b = mc.gaussian_increments(5, 1, n, 1.0)
    corr = np.corrcoef(a, b)[0, 1]
    assert abs(corr) < 4 / np.sqrt(n)


def test_increments_reject_bad_dt():
    with pytest.raises(GridError):
        mc.gaussian_increments(0, 0, 10, 0.0)


def test_reduce_mean_se_two_point():
    mean, se = mc.reduce_mean_se(np.array([0.0, 1.0]))
    assert mean == 0.5
    assert se == 0.5


def test_reduce_mean_se_constant():
    mean, se = mc.reduce_mean_se(np.full(17, 3.25))
    assert mean == 3.25
    assert se == 0.0


def test_reduce_mean_se_needs_two():
    with pytest.raises(ParameterError):
        mc.reduce_mean_se(np.array([1.0]))


def test_reduce_matches_worker_partitions_bitwise():
    # assembling per-path values by index makes the reduction independent of
    # how many workers produced them; same array => same bits
    rng = np.random.default_rng(0)
    vals = rng.standard_normal(1537)
    m1, s1 = mc.reduce_mean_se(vals)
    order = rng.permutation(vals.size)
    assembled = np.empty_like(vals)
    assembled[order] = vals[order]  # out-of-order writes, same final array
    m2, s2 = mc.reduce_mean_se(assembled)
    assert m1 == m2 and s1 == s2


def test_reduce_mean_se_2d_paths_by_time():
    rng = np.random.default_rng(1)
    vals = rng.standard_normal((513, 4))
    mean, se = mc.reduce_mean_se(vals)
    assert mean.shape == (4,)
    np.testing.assert_allclose(mean, vals.mean(axis=0), rtol=0, atol=1e-12)
    np.testing.assert_allclose(se, vals.std(axis=0, ddof=1) / np.sqrt(513), rtol=1e-10)


@given(st.integers(min_value=2, max_value=400), st.integers(min_value=0, max_value=2**32))
@settings(max_examples=25, deadline=None)
def test_reduce_mean_se_matches_numpy(n, seed):
    vals = np.random.default_rng(seed).standard_normal(n)
    mean, se = mc.reduce_mean_se(vals)
    assert mean == pytest.approx(vals.mean(), rel=1e-12, abs=1e-12)
    assert se == pytest.approx(vals.std(ddof=1) / np.sqrt(n), rel=1e-10, abs=1e-14)


def test_se_scaling_one_over_sqrt_m():
    # empirical SE of the sample mean across 30 repetitions scales ~ 1/sqrt(M)
    sizes = [1000, 4000, 16000]
    spread = []
    for m_idx, m in enumerate(sizes):
        means = []
        for rep in range(30):
            z = mc.gaussian_increments(777 + rep, m_idx, m, 1.0)
            means.append(z.mean())
        spread.append(np.std(means, ddof=1))
    r1 = spread[0] / spread[1]
    r2 = spread[1] / spread[2]
    assert abs(r1 - 2.0) < 0.4  # within 20% of the CLT factor
    assert abs(r2 - 2.0) < 0.4
