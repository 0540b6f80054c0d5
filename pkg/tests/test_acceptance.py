"""Exit criteria, one ``criterion`` mark per item.

Run with ``pytest tests/test_acceptance.py -v``; the terminal summary prints
one ACCEPTANCE PASS/FAIL line per criterion.  The simulation-study test
alone takes about two hours on one core.
"""

import math
import time
import warnings

import numpy as np
import pytest
from scipy import integrate, stats

from hpgrf import cli
from hpgrf.classify import LowEssWarning, loocv, mkda_nbc
from hpgrf.evalx import chain_scalars, gelman_rubin, ppc_check
from hpgrf.geometry import BoxWindow, Ellipsoid, SubBox, make_grid
from hpgrf.mcmc import ChainConfig, ModelState, Sampler, forward_data, run_chain
from hpgrf.moments import MomentParams, count_cov_between, count_cov_within, count_mean
from hpgrf.procgen import (
    Dataset,
    PointPattern,
    ThomasComponent,
    ThomasConfig,
    sample_hpgrf,
    table1_config,
    thomas_dataset,
)
from hpgrf.randfield import (
    BaseMeasure,
    JumpSet,
    exp_integral_e1,
    inv_e1,
    log_gamma_variates,
    sample_parent_field,
    truncation_error,
)
from hpgrf.study import StudyConfig, run_study

pytestmark = [pytest.mark.acceptance, pytest.mark.slow]

W = BoxWindow([0, 0], [100, 100])
Q1 = SubBox("q1", W, [0, 0], [50, 50])
RIGHT = SubBox("right", W, [50, 0], [100, 100])
ELL = Ellipsoid("ell", W, [40, 50], [[20, -5], [-5, 10]])


def _record(record_property, **kw):
    for k, v in kw.items():
        record_property(k, f"{v:.4g}" if isinstance(v, float) else v)


# ---------------------------------------------------------------- 1 moments

MOMENT_SETTINGS = [
    {"tau": 1.0, "beta": 1.0, "sigma2": [25.0, 25.0]},
    {"tau": 2.0, "beta": 0.5, "sigma2": [16.0, 64.0]},
]


def _mc_z(x, y, theory):
    """Deviation of a sample covariance from ``theory`` in Monte-Carlo standard errors."""
    prod = (x - x.mean()) * (y - y.mean())
    return (prod.mean() - theory) / (prod.std(ddof=1) / math.sqrt(x.size))


@pytest.mark.criterion(1, "moment fidelity")
@pytest.mark.parametrize("setting", MOMENT_SETTINGS, ids=["tau1-beta1", "tau2-beta0.5"])
def test_moment_fidelity(setting, record_property):
    regions = [Q1, ELL, RIGHT]
    pairs = [(0, 0), (0, 1), (0, 2)]
    n = 5000
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    counts = np.zeros((n, 2, len(regions)))
    for i in range(n):
        ds, _ = sample_hpgrf(W, [1, 1], 100.0, setting["beta"], setting["tau"], setting["sigma2"], 2000, rng)
        for j in range(2):
            pts = ds.patterns_of(j)[0].points
            counts[i, j] = [r.contains(pts).sum() for r in regions]
    p = MomentParams(setting["tau"], setting["beta"], 100.0, setting["sigma2"], W)
    worst = 0.0
    for a, b in pairs:
        A, B = regions[a], regions[b]
        for j in range(2):
            x = counts[:, j, a]
            z = (x.mean() - count_mean(A, j, p)) / (x.std(ddof=1) / math.sqrt(n))
            worst = max(worst, abs(z))
            worst = max(worst, abs(_mc_z(x, counts[:, j, b], count_cov_within(A, B, j, p))))
        worst = max(worst, abs(_mc_z(counts[:, 0, a], counts[:, 1, b], count_cov_between(A, B, 0, 1, p))))
    seconds = time.perf_counter() - t0
    _record(record_property, max_abs_z=worst, seconds=seconds)
    assert worst < 3.0
    assert seconds < 600


# ---------------------------------------------------------------- 2 gamma law


@pytest.mark.criterion(2, "gamma-field law")
def test_gamma_field_law(record_property):
    t0 = time.perf_counter()
    base = BaseMeasure(W, 100.0)
    rng = np.random.default_rng(2)
    regions = [Q1, ELL, RIGHT]
    g = np.zeros((2000, 3))
    ordered = 0
    for i in range(2000):
        js = sample_parent_field(base, 1.0, 2000, rng)
        ordered += bool(np.all(np.diff(js.heights) < 0))
        g[i] = [js.heights[r.contains(js.locations)].sum() for r in regions]
    pvals = [stats.kstest(g[:, k], stats.gamma(100.0 * r.volume() / W.volume()).cdf).pvalue for k, r in enumerate(regions)]
    seconds = time.perf_counter() - t0
    _record(record_property, min_p=min(pvals), ordered=f"{ordered}/2000", seconds=seconds)
    assert min(pvals) > 0.01
    assert ordered == 2000
    assert seconds < 120


# ---------------------------------------------------------------- 3 special functions


@pytest.mark.criterion(3, "special functions")
def test_e1_round_trip_and_value(record_property):
    t = np.geomspace(1e-8, 50.0, 12)
    back = inv_e1(exp_integral_e1(t))
    rel = float(np.max(np.abs(back - t) / t))
    quad, _ = integrate.quad(lambda u: math.exp(-u) / u, 1.0, np.inf, epsabs=1e-14, epsrel=1e-14, limit=200)
    e1 = exp_integral_e1(1.0)
    _record(record_property, max_rel=rel, e1_err=abs(e1 - 0.21938393439552))
    assert rel <= 1e-9
    assert abs(e1 - 0.21938393439552) <= 1e-12
    assert abs(e1 - quad) <= 1e-12


# ---------------------------------------------------------------- 4 Geweke


def _geweke(transitions: int, thin: int, seed: int):
    """Successive-conditional Geweke test of the full sweep.

    Returns KS p-values of the thinned chain against independent prior draws.
    """
    w = BoxWindow([0, 0], [10, 10])
    J, M, alpha = 2, 200, 5.0
    labels = ["a", "b"]
    cfg = ChainConfig(M=M, burn_in=0, iterations=1, alpha_total=alpha, adapt=False, step_theta=1.0, step_log_sigma2=0.5)
    rng = np.random.default_rng(seed)

    def prior_state():
        # Gamma(2, rate 2) hyperpriors; sigma^-2 ~ U(0, 10)
        tau, beta = rng.gamma(2.0, 0.5), rng.gamma(2.0, 0.5)
        s2 = 1.0 / rng.uniform(0.0, 10.0, size=J)
        par = sample_parent_field(BaseMeasure(w, alpha), beta, M, rng)
        log_mu = log_gamma_variates(np.broadcast_to(par.heights, (J, M)), tau, rng)
        return ModelState(par.locations, par.heights, log_mu, s2, tau, beta, np.zeros(0, dtype=np.int64), np.zeros((J, M)))

    def scalars(st):
        with np.errstate(under="ignore"):
            mass = np.exp(st.log_mu).sum(axis=1)
        return [st.tau, st.beta, *st.sigma2, st.nu.sum(), *mass]

    names = ["tau", "beta", "sigma2_1", "sigma2_2", "sum_nu", "sum_mu_1", "sum_mu_2"]
    prior = np.array([scalars(prior_state()) for _ in range(2000)])
    st = prior_state()
    ds, assign = forward_data(st, w, 1, labels, rng)
    smp = Sampler(ds, cfg, rng)
    smp.state = st
    smp.logz = smp._logz_all(st.theta, st.sigma2)
    smp.set_data(ds, assign)
    draws = []
    for t in range(transitions):
        smp.sweep()
        ds, assign = forward_data(smp.state, w, 1, labels, rng)
        smp.set_data(ds, assign)
        if t % thin == 0:
            draws.append(scalars(smp.state))
    draws = np.array(draws)
    return {n: stats.ks_2samp(draws[:, i], prior[:, i]).pvalue for i, n in enumerate(names)}


@pytest.mark.criterion(4, "sampler correctness (Geweke)")
def test_geweke_joint_distribution(record_property):
    t0 = time.perf_counter()
    pvals = _geweke(20000, 20, seed=3)
    seconds = time.perf_counter() - t0
    _record(record_property, min_p=min(pvals.values()), seconds=seconds)
    assert all(p > 0.01 for p in pvals.values()), pvals
    assert seconds < 1800


# ---------------------------------------------------------------- 6, 7 fitted chains on model data


@pytest.fixture(scope="module")
def model_data_chains():
    """Three chains on data simulated from a snapshot of an HPGRF fit."""
    t0 = time.perf_counter()
    cfg = ChainConfig(M=2000, burn_in=1000, iterations=6000, thin=10)
    thomas = thomas_dataset(table1_config(), 10, W, np.random.default_rng(11))
    first = run_chain(thomas, ChainConfig(M=2000, burn_in=1000, iterations=2000, thin=5), seed=1)
    s = first.n_snapshots - 1
    rng = np.random.default_rng(12)
    pats = []
    for j, lab in enumerate(first.labels):
        lam = first.snapshot_intensity(j, s)
        pats += [PointPattern(f"{lab}_{i + 1}", lab, lam.sample(rng)) for i in range(10)]
    data = Dataset(W, first.labels, pats)
    fits = [run_chain(data, cfg, seed=k) for k in (1, 2, 3)]
    return data, fits, time.perf_counter() - t0


@pytest.mark.criterion(6, "PPC calibration")
def test_ppc_calibration(model_data_chains, record_property):
    data, fits, fit_seconds = model_data_chains
    t0 = time.perf_counter()
    good = ppc_check(fits[0], data, rng=np.random.default_rng(3))
    wide = ppc_check(fits[0], data, rng=np.random.default_rng(3), sigma_scale=10.0)
    n = len(data.patterns)
    share = sum(c.good_fit for c in good) / n
    failed = sum(not c.good_fit for c in wide) / n
    # one chain's share of the fixture plus the check itself
    seconds = fit_seconds / 3 + time.perf_counter() - t0
    _record(record_property, good_fit=share, control_failed=failed, seconds=seconds)
    assert share >= 0.9
    assert failed > 0.5
    assert seconds < 1200


@pytest.mark.criterion(7, "convergence tooling")
def test_mpsrf_three_seeds(model_data_chains, record_property):
    _, fits, _ = model_data_chains
    names = chain_scalars(fits[0])[1]
    rep = gelman_rubin([chain_scalars(f)[0] for f in fits], names)
    x = chain_scalars(fits[0])[0]
    same = gelman_rubin([x, x, x], names)
    _record(record_property, mpsrf=rep.mpsrf, max_psrf=float(rep.psrf.max()))
    assert rep.mpsrf < 1.2
    assert np.all(same.psrf == 1.0)


# ---------------------------------------------------------------- 8 classification


def _blobs(centres, count, var=20.0):
    return [ThomasComponent(count, c, var * np.eye(2)) for c in centres]


def _loocv_quiet(data, fit):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", LowEssWarning)
        return loocv(data, fit)


CLASSIFY_CHAIN = ChainConfig(M=2000, burn_in=1000, iterations=2000, thin=5)
THREE_BLOBS = _blobs([(25, 25), (75, 25), (50, 75)], 15)


@pytest.mark.criterion(8, "classification")
def test_separable_types(record_property):
    cfg = ThomasConfig(THREE_BLOBS, 0.001, [[0], [1], [2]])
    data = thomas_dataset(cfg, 20, W, np.random.default_rng(5))
    res = _loocv_quiet(data, run_chain(data, CLASSIFY_CHAIN, seed=1))
    _record(record_property, separable_acc=res.accuracy)
    assert res.accuracy > 0.9


@pytest.mark.criterion(8, "classification")
def test_indistinguishable_types(record_property):
    cfg = ThomasConfig(THREE_BLOBS, 0.001, [[0, 1, 2]] * 3)
    data = thomas_dataset(cfg, 20, W, np.random.default_rng(5))
    res = _loocv_quiet(data, run_chain(data, CLASSIFY_CHAIN, seed=1))
    n = int(res.confusion.sum())
    p = stats.binomtest(int(np.trace(res.confusion)), n, 1.0 / 3.0).pvalue
    _record(record_property, chance_acc=res.accuracy, chance_p=p)
    # two-sided binomial test at the 1% level
    assert p > 0.01


# heavy shared structure and a weak type-specific cluster: independent fits
# estimate the shared clusters separately per type and that noise swamps the signal
SHARED_CLUSTERS = _blobs([(x, y) for y in (50, 80) for x in (25, 75)], 5.0) + _blobs([(x, 15) for x in (20, 50, 80)], 1.5)
SHARED_TYPES = [[0, 1, 2, 3, 4 + j] for j in range(3)]


@pytest.mark.criterion(8, "classification")
def test_shared_clusters_favour_hierarchy(record_property):
    cfg = ThomasConfig(SHARED_CLUSTERS, 0.0003, SHARED_TYPES)
    chain = ChainConfig(M=1000, burn_in=400, iterations=800, thin=4)
    acc = []
    for k in range(20):
        data = thomas_dataset(cfg, 5, W, np.random.default_rng(100 + k))
        h = _loocv_quiet(data, run_chain(data, chain, seed=k)).accuracy
        i = _loocv_quiet(data, run_chain(data, chain, model="ipgrf", seed=k)).accuracy
        acc.append((h, i))
    acc = np.array(acc)
    wins, losses = int(np.sum(acc[:, 0] > acc[:, 1])), int(np.sum(acc[:, 0] < acc[:, 1]))
    p = stats.binomtest(wins, wins + losses, 0.5, alternative="greater").pvalue if wins + losses else 1.0
    _record(record_property, wins=wins, losses=losses, sign_p=p)
    assert p < 0.05


@pytest.mark.criterion(8, "classification")
def test_mkda_radii(record_property):
    cfg = ThomasConfig(THREE_BLOBS, 0.001, [[0], [1], [2]])
    data = thomas_dataset(cfg, 20, W, np.random.default_rng(5))
    grid = make_grid(W, 2.0)
    accs = []
    for r in (5.0, 10.0, 15.0, 20.0):
        _, res = mkda_nbc(data, grid, radius=r)
        assert res.confusion.sum() == len(data.patterns)
        accs.append(res.accuracy)
    _record(record_property, mkda_acc="/".join(f"{a:.2f}" for a in accs))
    assert min(accs) > 1.0 / 3.0


# ---------------------------------------------------------------- 9 truncation


@pytest.mark.criterion(9, "truncation estimator")
@pytest.mark.parametrize(
    "window",
    [W, BoxWindow([-90, -126, -72], [90, 90, 108])],
    ids=["square", "brain-box"],
)
def test_truncation_monotone(window, record_property):
    base = BaseMeasure(window, window.volume() / 10.0**window.dim)
    rng = np.random.default_rng(9)
    zeta = np.cumsum(rng.exponential(size=10000))
    heights = inv_e1(zeta / base.total)
    locs = window.sample_uniform(rng, 10000)
    Ms = [2, 10, 100, 500, 1000, 2000, 5000, 10000]
    errs = [truncation_error(JumpSet(locs[:m], heights[:m], None, beta=1.0)) for m in Ms]
    _record(record_property, **{f"trunc_{window.dim}d_M1e4": errs[-1]})
    assert np.all(np.diff(errs) <= 0)
    assert np.isfinite(errs[-1]) and 0.0 <= errs[-1] < 1.0


# ---------------------------------------------------------------- 10 determinism


def _cli(*args):
    return cli.main([str(a) for a in args])


def _tree_bytes(path):
    if path.is_file():
        return {"": path.read_bytes()}
    return {p.relative_to(path).as_posix(): p.read_bytes() for p in sorted(path.rglob("*")) if p.is_file()}


@pytest.mark.criterion(10, "determinism")
def test_every_cli_command_bit_reproducible(tmp_path, record_property):
    chain = ["--M", 100, "--iterations", 40, "--burn-in", 20, "--thin", 4]
    (tmp_path / "regions.txt").write_text("q box 0 0 50 50\ne ellipsoid 70 30 30 -10 -10 40\n")

    def commands(d):
        foci = d / "data.foci"
        return [
            ("simulate", ["--model", "thomas", "--studies", 3, "--seed", 5, "--out", foci]),
            ("simulate-hpgrf", ["--model", "hpgrf", "--studies", 2, "--M", 200, "--seed", 5, "--out", d / "h.foci"]),
            ("fit", ["--foci", foci, "--seed", 1, *chain, "--out", d / "fit1"]),
            ("fit", ["--foci", foci, "--seed", 2, *chain, "--out", d / "fit2"]),
            ("fit-ipgrf", ["--foci", foci, "--model", "ipgrf", "--seed", 1, *chain, "--out", d / "ifit"]),
            ("intensity", ["--fit", d / "fit1", "--spacing", 5, "--long-csv", "true", "--out", d / "int"]),
            ("moments", ["--fit", d / "fit1", "--regions", tmp_path / "regions.txt", "--out", d / "m.csv"]),
            ("ppc", ["--fit", d / "fit1", "--foci", foci, "--max-snapshots", 5, "--seed", 3, "--out", d / "p.csv"]),
            ("diag", ["--fits", f"{d / 'fit1'},{d / 'fit2'}", "--out", d / "diag.csv"]),
            ("classify", ["--fit", d / "fit1", "--foci", foci, "--out", d / "c.csv"]),
            ("classify-ipgrf", ["--method", "ipgrf", "--fit", d / "ifit", "--foci", foci, "--out", d / "ci.csv"]),
            ("classify-mkda", ["--method", "mkda-nbc", "--foci", foci, "--spacing", 4, "--out", d / "k.csv"]),
            ("study", ["--replicates", 1, "--studies", 2, *chain, "--spacing", 5, "--out", d / "study"]),
        ]

    runs = []
    for name in ("a", "b"):
        d = tmp_path / name
        d.mkdir()
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", LowEssWarning)
            for label, args in commands(d):
                cmd = label.split("-")[0]
                assert _cli(cmd, *args) == 0, label
        runs.append(_tree_bytes(d))
    a, b = runs
    assert a.keys() == b.keys()
    differing = [k for k in a if a[k] != b[k]]
    _record(record_property, files_compared=len(a))
    assert not differing, differing


# ---------------------------------------------------------------- 5 simulation study


@pytest.mark.criterion(5, "simulation-study ordering")
def test_simulation_study_ordering(record_property):
    stamps = [time.perf_counter()]
    res = run_study(StudyConfig(replicates=50, M=2000, seed=0), progress=lambda k, rep: stamps.append(time.perf_counter()))
    smoke = stamps[5] - stamps[0]
    total = stamps[-1] - stamps[0]
    mean, _ = res.mean_se("imse")
    win2 = res.win_fraction("2")
    gaps = {r: res.relative_gap(r) for r in ("1", "4")}
    _record(
        record_property,
        win_region2=win2,
        imse_A=f"{mean[0, 0]:.4g}vs{mean[0, 1]:.4g}",
        gap1=gaps["1"],
        gap4=gaps["4"],
        smoke_s=smoke,
        total_s=total,
    )
    assert win2 >= 0.7
    assert mean[0, 0] < mean[0, 1]
    assert all(abs(g) <= 0.25 for g in gaps.values()), gaps
    assert smoke < 1800
    assert total < 8 * 3600
