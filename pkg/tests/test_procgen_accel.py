import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from hpgrf import _accel
from hpgrf.geometry import BoxWindow, make_grid, IntensityGrid
from hpgrf.procgen import (
    DataError,
    Dataset,
    JumpIntensity,
    PointPattern,
    log_likelihood,
    sample_hpgrf,
    sample_poisson,
    table1_config,
    thomas_dataset,
)

W = BoxWindow([0, 0], [100, 100])


def test_pattern_grouping_and_pooling():
    pats = [PointPattern("a", "x", [[1, 2], [3, 4]]), PointPattern("b", "y", np.empty((0, 2)))]
    ds = Dataset(W, ["x", "y"], pats)
    pts, types, owner = ds.pooled()
    assert pts.shape == (2, 2) and list(types) == [0, 0] and list(owner) == [0, 0]
    assert list(ds.n_studies) == [1, 1]
    with pytest.raises(DataError, match="unknown type"):
        Dataset(W, ["x"], pats)


def test_homogeneous_likelihood_oracle():
    # lambda = c on the window: loglik = -c |B| + n ln c
    c = 0.003
    g = make_grid(W, 10.0)
    ig = IntensityGrid(g, np.full(g.shape, c))
    pts = np.array([[10.0, 10.0], [55.0, 72.0], [99.0, 1.0]])
    assert log_likelihood(pts, ig) == pytest.approx(-c * 1e4 + 3 * math.log(c), rel=1e-12)


def test_likelihood_rejects_outside_points():
    ji = JumpIntensity([[50.0, 50.0]], [2.0], 25.0, W)
    with pytest.raises(DataError):
        log_likelihood(np.array([[120.0, 1.0]]), ji)


def test_likelihood_floor_for_zero_intensity():
    ji = JumpIntensity([[50.0, 50.0]], [0.0], 1.0, W)
    assert log_likelihood(np.array([[1.0, 1.0]]), ji) == pytest.approx(math.log(1e-12))


def test_jump_intensity_counts_are_poisson():
    ji = JumpIntensity([[10.0, 10.0], [80.0, 60.0]], [3.0, 4.5], 49.0, W)
    rng = np.random.default_rng(0)
    n = np.array([len(ji.sample(rng)) for _ in range(4000)])
    assert n.mean() == pytest.approx(7.5, abs=4 * math.sqrt(7.5 / 4000))
    assert n.var() == pytest.approx(7.5, rel=0.1)


def test_grid_intensity_sampling_mean():
    g = make_grid(W, 5.0)
    lam = 0.001 + 0.002 * (g.all_points[:, 0] > 50)
    ig = IntensityGrid(g, lam)
    rng = np.random.default_rng(1)
    n = np.array([len(sample_poisson(ig, rng=rng)) for _ in range(2000)])
    assert n.mean() == pytest.approx(ig.total(), abs=4 * math.sqrt(ig.total() / 2000))


def test_table1_expected_counts():
    cfg = table1_config()
    expected = [cfg.expected_count(j, W) for j in range(3)]
    # component 1 sits near the lower-left corner and loses ~1.3% of its mass
    assert expected == pytest.approx([25.0, 30.0, 39.5], rel=2e-3)
    ds = thomas_dataset(cfg, 200, W, np.random.default_rng(4))
    for j in range(3):
        n = np.array([len(p) for p in ds.patterns_of(j)])
        assert n.mean() == pytest.approx(expected[j], abs=4 * math.sqrt(expected[j] / 200))
        assert all(W.contains(p.points).all() for p in ds.patterns_of(j))


def test_thomas_deterministic_given_seed():
    a = thomas_dataset(table1_config(), 3, W, np.random.default_rng(7))
    b = thomas_dataset(table1_config(), 3, W, np.random.default_rng(7))
    assert all(np.array_equal(p.points, q.points) for p, q in zip(a.patterns, b.patterns))


def test_hpgrf_forward_draw_shapes():
    ds, js = sample_hpgrf(W, [2, 3], 100.0, 1.0, 2.0, [25.0, 16.0], 500, np.random.default_rng(0))
    assert ds.labels == ["type1", "type2"]
    assert list(ds.n_studies) == [2, 3]
    assert js.log_mu.shape == (2, 500)
    js.check_order()
    with pytest.raises(ValueError):
        sample_hpgrf(W, [1], 100.0, -1.0, 1.0, 25.0, 10, np.random.default_rng(0))


# ---------------------------------------------------------------- backends


needs_core = pytest.mark.skipif(_accel.BACKEND != "cython", reason="compiled extension not built")


@needs_core
@given(n=st.integers(1, 60), M=st.integers(1, 80), J=st.integers(1, 3), seed=st.integers(0, 2**31))
@settings(max_examples=40, deadline=None)
def test_assignment_backends_agree(n, M, J, seed):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(0, 100, (n, 2))
    types = rng.integers(0, J, n)
    theta = rng.uniform(0, 100, (M, 2))
    logw = rng.normal(0, 5, (J, M))
    inv = rng.uniform(0.001, 0.1, J)
    u = rng.uniform(size=n)
    a = _accel.sample_assignments(pts, types, theta, logw, inv, u, impl="cython")
    b = _accel.sample_assignments(pts, types, theta, logw, inv, u, impl="python")
    assert np.array_equal(a[0], b[0]) and a[1] == b[1]


@needs_core
@given(n=st.integers(0, 50), M=st.integers(1, 50), seed=st.integers(0, 2**31))
@settings(max_examples=40, deadline=None)
def test_kernel_sum_backends_agree(n, M, seed):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(0, 100, (n, 3))
    theta = rng.uniform(0, 100, (M, 3))
    w = rng.gamma(1, 1, M)
    a = _accel.kernel_sums(pts, theta, w, 0.01, impl="cython")
    b = _accel.kernel_sums(pts, theta, w, 0.01, impl="python")
    assert np.allclose(a, b, rtol=1e-12, atol=0)


@needs_core
@given(n=st.integers(0, 40), seed=st.integers(0, 2**31))
@settings(max_examples=40, deadline=None)
def test_pair_count_backends_agree(n, seed):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(0, 50, (n, 2))
    w = rng.uniform(0.5, 2, n)
    radii = np.sort(rng.uniform(0, 30, 7))
    a = _accel.pair_counts(pts, w, radii, impl="cython")
    b = _accel.pair_counts(pts, w, radii, impl="python")
    assert np.allclose(a, b, rtol=1e-12, atol=1e-12)


def test_pair_counts_small_oracle():
    pts = np.array([[0.0, 0.0], [3.0, 4.0], [6.0, 8.0]])
    # distances 5, 5, 10; ordered pairs counted twice
    out = _accel.pair_counts(pts, np.ones(3), np.array([4.0, 5.0, 9.0, 10.0]))
    assert out.tolist() == [0.0, 4.0, 4.0, 6.0]


def test_assignment_distribution():
    # two jumps with equal kernel value and weights 1:3
    pts = np.array([[50.0, 50.0]] * 20000)
    theta = np.array([[49.0, 50.0], [51.0, 50.0]])
    logw = np.log([[1.0, 3.0]])
    u = np.random.default_rng(0).uniform(size=20000)
    idx, bad = _accel.sample_assignments(pts, np.zeros(20000, int), theta, logw, np.array([0.02]), u)
    assert bad == 0
    assert stats.binomtest(int((idx == 1).sum()), 20000, 0.75).pvalue > 1e-3
