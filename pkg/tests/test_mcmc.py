import math

import numpy as np
import pytest
from scipy import special, stats

from hpgrf.geometry import BoxWindow, make_grid
from hpgrf.mcmc import (
    ChainConfig,
    NumericError,
    Sampler,
    default_alpha_total,
    forward_data,
    posterior_intensity,
    rng_stream,
    run_chain,
)
from hpgrf.procgen import Dataset, PointPattern, table1_config, thomas_dataset

W = BoxWindow([0, 0], [100, 100])


@pytest.fixture(scope="module")
def data():
    return thomas_dataset(table1_config(), 3, W, np.random.default_rng(0))


def small(**kw):
    base = dict(M=150, burn_in=10, iterations=30, thin=5)
    base.update(kw)
    return ChainConfig(**base)


def test_config_validation():
    with pytest.raises(ValueError, match="burn-in"):
        ChainConfig(burn_in=10, iterations=10)
    with pytest.raises(ValueError):
        ChainConfig(thin=0)
    assert ChainConfig(burn_in=100, iterations=1100, thin=10).n_saved == 100


def test_default_alpha_is_volume_in_cm():
    assert default_alpha_total(W) == pytest.approx(100.0)
    assert default_alpha_total(BoxWindow([0, 0, 0], [100, 100, 100])) == pytest.approx(1000.0)


def test_rng_streams_are_independent_and_stable():
    a = rng_stream(5, 0).uniform(size=4)
    b = rng_stream(5, 1).uniform(size=4)
    assert not np.allclose(a, b)
    assert np.array_equal(a, rng_stream(5, 0).uniform(size=4))


def test_sweep_keeps_invariants(data):
    smp = Sampler(data, small(), rng_stream(1))
    n = data.n_foci
    for _ in range(5):
        smp.sweep()
        st = smp.state
        assert np.all(np.diff(st.nu) <= 0) and np.all(st.nu > 0)
        assert st.counts.sum() == n
        # counts agree with assignments after the re-sort
        flat = smp.types * st.M + st.assign
        assert np.array_equal(np.bincount(flat, minlength=st.J * st.M).reshape(st.J, st.M), st.counts)
        assert W.contains(st.theta).all()
        assert np.all(st.sigma2 >= 0.1)
        assert np.isfinite(smp.log_posterior())


def test_collapsed_jump_terms_match_formula(data):
    smp = Sampler(data, small(), rng_stream(2))
    st = smp.state
    nu, tau = st.nu, 1.7
    n = st.counts
    nj = data.n_studies.astype(float)
    ref = np.zeros(st.M)
    for j in range(st.J):
        ref += (
            nu * math.log(tau)
            + special.gammaln(nu + n[j])
            - special.gammaln(nu)
            - (nu + n[j]) * math.log(tau + nj[j])
        )
    assert np.allclose(smp._collapsed_jump_terms(nu, tau), ref, rtol=1e-12)


def test_scale_move_leaves_levy_term_invariant(data):
    # -alpha E1(beta nu_M) + sum(-ln nu - beta nu) + M ln c is invariant under
    # (nu, beta) -> (c nu, beta / c) once the Jacobian c^M is included
    smp = Sampler(data, small(), rng_stream(3))
    st = smp.state
    c = 1.9

    def levy(nu, beta):
        return smp._boundary(nu.min(), beta) + np.sum(-np.log(nu) - beta * nu)

    lhs = levy(st.nu * c, st.beta / c) + st.M * math.log(c)
    assert lhs == pytest.approx(levy(st.nu, st.beta), rel=1e-12)


def test_same_seed_same_chain(data):
    a = run_chain(data, small(), seed=11)
    b = run_chain(data, small(), seed=11)
    assert np.array_equal(a.trace, b.trace)
    assert np.array_equal(a.theta, b.theta)
    c = run_chain(data, small(), seed=12)
    assert not np.array_equal(a.trace, c.trace)


def test_single_type_ipgrf_equals_hpgrf():
    ds = thomas_dataset(table1_config(), 2, W, np.random.default_rng(5)).only_type(0)
    h = run_chain(ds, small(), model="hpgrf", seed=4)
    i = run_chain(ds, small(), model="ipgrf", seed=4)
    assert np.array_equal(h.log_mu, i.chains[0].log_mu)
    g = make_grid(W, 10.0)
    assert np.array_equal(posterior_intensity(h, g, 0).values, posterior_intensity(i, g, 0).values)


def test_snapshot_bookkeeping(data):
    cfg = small(burn_in=10, iterations=40, thin=5)
    fit = run_chain(data, cfg, seed=1)
    assert fit.n_snapshots == cfg.n_saved == 6
    assert fit.saved_iters.tolist() == [15, 20, 25, 30, 35, 40]
    assert fit.trace.shape == (40, len(fit.trace_names))
    assert fit.trace_names[:3] == ["iter", "tau", "beta"] and fit.trace_names[-1] == "logpost"
    assert np.all((fit.truncation > 0) & (fit.truncation < 1))
    assert np.allclose(fit.type_total(0), fit.trace_column("mass_1")[fit.saved_iters - 1])


def test_empty_study_is_allowed():
    ds = Dataset(W, ["a", "b"], [PointPattern("s1", "a", [[10.0, 10.0]]), PointPattern("s2", "b", np.empty((0, 2)))])
    fit = run_chain(ds, small(), seed=0)
    assert np.all(np.isfinite(fit.type_total(1)))


def test_numeric_error_reports_state(data, monkeypatch):
    monkeypatch.setattr(Sampler, "log_posterior", lambda self: float("nan"))
    with pytest.raises(NumericError, match="non-finite state at iteration 0: tau="):
        run_chain(data, small(), seed=0)


def test_unknown_model(data):
    with pytest.raises(ValueError, match="unknown model"):
        run_chain(data, small(), model="bhicp")


def test_forward_data_counts_match_assignments():
    ds = thomas_dataset(table1_config(), 1, W, np.random.default_rng(0))
    smp = Sampler(ds, small(M=50), rng_stream(0))
    new, assign = forward_data(smp.state, W, 2, ds.labels, np.random.default_rng(1))
    assert assign.size == new.n_foci
    assert list(new.n_studies) == [2, 2, 2]


def test_mu_conditional_is_gamma(data):
    # with counts fixed, gibbs_mu draws Gamma(nu + n, tau + n_j)
    smp = Sampler(data, small(M=20), rng_stream(6))
    st = smp.state
    draws = []
    for _ in range(3000):
        smp.gibbs_mu()
        draws.append(st.log_mu[0, 0])
    shape = st.nu[0] + st.counts[0, 0]
    rate = st.tau + data.n_studies[0]
    assert stats.kstest(np.exp(draws), stats.gamma(shape, scale=1 / rate).cdf).pvalue > 1e-3
