"""Posterior simulation for the HPGRF and IPGRF models.

The sampler works on the truncated inverse-Levy representation augmented
with one latent jump index per focus.  A sweep is

    assignments -> mu -> tau -> (nu, theta) -> (sigma^2, beta) -> scale -> mu -> sort

where every step after the first ``tau`` update targets the posterior with
the child heights integrated out; ``mu`` is redrawn from its conditional
before it is needed again.  Child heights are stored as ``log mu``.

Jump heights are proposed without ordering constraints and the state is
re-sorted by height at the end of the sweep.  This is valid because the
truncated prior is symmetric in the jump labels apart from the boundary
term on the smallest height.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import special

from . import _accel
from .geometry import BoxWindow, Grid, IntensityGrid, Window
from .kernel import log_normalizer
from .procgen import Dataset, JumpIntensity
from .randfield import (
    BaseMeasure,
    JumpSet,
    exp_integral_e1,
    log_gamma_variates,
    sample_parent_field,
)

__all__ = [
    "ChainConfig",
    "ModelState",
    "Chain",
    "IndependentChains",
    "Sampler",
    "run_chain",
    "posterior_intensity",
    "default_alpha_total",
    "rng_stream",
    "NumericError",
    "forward_data",
    "significant",
]

log = logging.getLogger(__name__)


class NumericError(RuntimeError):
    pass


def default_alpha_total(window: Window) -> float:
    """Lebesgue measure in cm^d (``volume / 10^d`` for mm coordinates)."""
    return window.volume() / 10.0 ** window.dim


def rng_stream(seed: int, k: int = 0) -> np.random.Generator:
    """Independent stream ``k`` derived from ``seed``."""
    return np.random.default_rng(np.random.SeedSequence(seed).spawn(k + 1)[k])


@dataclass
class ChainConfig:
    M: int = 2000
    burn_in: int = 1000
    iterations: int = 3000
    thin: int = 10
    alpha_total: float | None = None
    prior_shape: float = 2.0
    prior_rate: float = 2.0
    sigma_prec_max: float = 10.0
    sigma2_init: float | None = None
    step_log_nu: float = 3.0
    step_theta: float | None = None
    step_log_sigma2: float = 0.1
    step_log_beta: float = 0.8
    step_log_tau: float = 0.8
    step_log_scale: float = 0.6
    hyper_repeats: int = 3
    target_accept: float = 0.3
    adapt: bool = True
    overdisperse: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.burn_in >= self.iterations:
            raise ValueError("burn-in must be smaller than the total number of iterations")
        if self.thin < 1:
            raise ValueError("thinning must be >= 1")
        if self.M < 1:
            raise ValueError("M must be >= 1")
        if self.hyper_repeats < 1:
            raise ValueError("hyper_repeats must be >= 1")

    @property
    def n_saved(self) -> int:
        return (self.iterations - self.burn_in) // self.thin

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ModelState:
    theta: np.ndarray
    nu: np.ndarray
    log_mu: np.ndarray
    sigma2: np.ndarray
    tau: float
    beta: float
    assign: np.ndarray
    counts: np.ndarray
    iteration: int = 0

    @property
    def M(self) -> int:
        return self.nu.size

    @property
    def J(self) -> int:
        return self.log_mu.shape[0]

    def jumps(self) -> JumpSet:
        return JumpSet(self.theta.copy(), self.nu.copy(), self.log_mu.copy(), self.beta, self.tau)

    def copy(self) -> ModelState:
        return ModelState(
            self.theta.copy(), self.nu.copy(), self.log_mu.copy(), self.sigma2.copy(),
            self.tau, self.beta, self.assign.copy(), self.counts.copy(), self.iteration,
        )


def _logprior_gamma(x: float, a: float, b: float) -> float:
    return (a - 1.0) * math.log(x) - b * x


def _reflect(x: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    width = hi - lo
    y = np.mod(x - lo, 2.0 * width)
    y = width - np.abs(width - y)
    out = lo + y
    return np.minimum(out, np.nextafter(hi, lo))


class Sampler:
    """Data-augmented MCMC for one (possibly multi-type) dataset."""

    def __init__(self, dataset: Dataset, config: ChainConfig, rng: np.random.Generator):
        self.cfg = config
        self.rng = rng
        self.window = dataset.window
        self.d = self.window.dim
        self.J = dataset.J
        self._load(dataset)
        alpha = config.alpha_total if config.alpha_total is not None else default_alpha_total(self.window)
        self.base = BaseMeasure(self.window, alpha)
        self.steps = {
            "nu": config.step_log_nu,
            "theta": config.step_theta,
            "sigma2": np.full(self.J, config.step_log_sigma2),
            "beta": config.step_log_beta,
            "tau": config.step_log_tau,
            "scale": config.step_log_scale,
        }
        self.accept = {k: [] for k in ("nu", "theta", "sigma2", "beta", "tau", "scale")}
        self.n_fallback = 0
        self.state = self._initial_state()

    # ------------------------------------------------------------ setup

    def _load(self, dataset: Dataset) -> None:
        self.data = dataset
        self.points, self.types, self.owner = dataset.pooled()
        self.n_studies = dataset.n_studies.astype(float)
        self.n_foci_type = np.bincount(self.types, minlength=self.J).astype(float)

    def set_data(self, dataset: Dataset, assign: np.ndarray | None = None) -> None:
        """Swap in new data, optionally with known jump assignments."""
        if dataset.J != self.J or dataset.window.dim != self.d:
            raise ValueError("replacement data must have the same types and dimension")
        self._load(dataset)
        if assign is None:
            self.gibbs_assignments()
        else:
            self.state.assign = np.asarray(assign, dtype=np.int64)
            self._recount()

    def _initial_state(self) -> ModelState:
        cfg, rng = self.cfg, self.rng
        extent = float(np.min(self.window.hi - self.window.lo))
        s2 = cfg.sigma2_init if cfg.sigma2_init is not None else (extent / 10.0) ** 2
        sigma2 = np.full(self.J, s2)
        beta = tau = 1.0
        if cfg.overdisperse:
            a, b = cfg.prior_shape, cfg.prior_rate
            beta, tau = float(rng.gamma(a, 1.0 / b)), float(rng.gamma(a, 1.0 / b))
            sigma2 = s2 * np.exp(rng.uniform(-1.0, 1.0, size=self.J) * math.log(2.0)) ** 2
        sigma2 = np.maximum(sigma2, 1.0 / cfg.sigma_prec_max)
        if self.steps["theta"] is None:
            self.steps["theta"] = 0.5 * math.sqrt(float(np.min(sigma2)))
        parent = sample_parent_field(self.base, beta, cfg.M, rng)
        log_mu = log_gamma_variates(np.broadcast_to(parent.heights, (self.J, cfg.M)), tau, rng)
        st = ModelState(
            parent.locations, parent.heights, log_mu, sigma2, tau, beta,
            np.zeros(self.points.shape[0], dtype=np.int64), np.zeros((self.J, cfg.M)),
        )
        self.state = st
        self.logz = self._logz_all(st.theta, st.sigma2)
        self.gibbs_assignments()
        return st

    def _logz_all(self, theta: np.ndarray, sigma2: np.ndarray) -> np.ndarray:
        return np.stack([log_normalizer(self.window, theta, s2) for s2 in sigma2])

    # ------------------------------------------------------------ updates

    def gibbs_assignments(self) -> None:
        st = self.state
        if self.points.shape[0] == 0:
            st.counts = np.zeros((self.J, st.M))
            return
        logw = st.log_mu - self.logz
        inv2s2 = 0.5 / st.sigma2
        u = self.rng.uniform(size=self.points.shape[0])
        st.assign, nfb = _accel.sample_assignments(self.points, self.types, st.theta, logw, inv2s2, u)
        if nfb:
            self.n_fallback += nfb
            log.warning("assignment weights underflowed for %d foci; used nearest jump", nfb)
        self._recount()

    def _recount(self) -> None:
        st = self.state
        flat = self.types * st.M + st.assign
        st.counts = np.bincount(flat, minlength=self.J * st.M).reshape(self.J, st.M).astype(float)

    def gibbs_mu(self) -> None:
        st = self.state
        shape = st.nu[None, :] + st.counts
        rate = (st.tau + self.n_studies)[:, None]
        st.log_mu = log_gamma_variates(shape, np.broadcast_to(rate, shape.shape), self.rng)

    def gibbs_tau(self) -> None:
        st = self.state
        a = self.cfg.prior_shape + self.J * st.nu.sum()
        with np.errstate(under="ignore"):
            b = self.cfg.prior_rate + np.exp(st.log_mu).sum()
        st.tau = float(self.rng.gamma(a, 1.0 / b))

    def _collapsed_jump_terms(self, nu: np.ndarray, tau: float) -> np.ndarray:
        """Per-jump log marginal of the child heights given the counts."""
        st = self.state
        n = st.counts
        lograte = np.log(tau + self.n_studies)[:, None]
        val = nu[None, :] * math.log(tau) + special.gammaln(nu[None, :] + n) - special.gammaln(nu)[None, :]
        val -= (nu[None, :] + n) * lograte
        return val.sum(axis=0)

    def _boundary(self, nu_min: float, beta: float) -> float:
        return -self.base.total * exp_integral_e1(beta * nu_min)

    def mh_nu(self) -> None:
        st, rng = self.state, self.rng
        M = st.M
        step = self.steps["nu"]
        nu = st.nu
        m_min = int(np.argmin(nu))
        cur = self._collapsed_jump_terms(nu, st.tau) - st.beta * nu
        prop = nu * np.exp(step * rng.standard_normal(M))
        new = self._collapsed_jump_terms(prop, st.tau) - st.beta * prop
        logu = np.log(rng.uniform(size=M))
        ok = (logu < new - cur) & (prop > nu[m_min])
        ok[m_min] = False
        nu = np.where(ok, prop, nu)
        acc = int(ok.sum())
        # the smallest jump carries the boundary term and must stay smallest,
        # otherwise the reverse move would fall outside the kernel above
        second = float(np.delete(nu, m_min).min()) if M > 1 else np.inf
        old_v, new_v = nu[m_min], prop[m_min]
        lr = new[m_min] - cur[m_min]
        lr += self._boundary(new_v, st.beta) - self._boundary(old_v, st.beta)
        if new_v < second and logu[m_min] < lr:
            nu[m_min] = new_v
            acc += 1
        st.nu = nu
        self.accept["nu"].append(acc / M)

    def mh_theta(self) -> None:
        st, rng, win = self.state, self.rng, self.window
        M, d = st.M, self.d
        occupied = st.counts.sum(axis=0) > 0
        # empty jumps: the conditional is the uniform prior
        empty = np.flatnonzero(~occupied)
        if empty.size:
            st.theta[empty] = win.sample_uniform(rng, empty.size)
            self.logz[:, empty] = self._logz_all(st.theta[empty], st.sigma2)
        occ = np.flatnonzero(occupied)
        if occ.size == 0:
            return
        step = self.steps["theta"]
        prop = st.theta[occ] + step * rng.standard_normal((occ.size, d))
        if isinstance(win, BoxWindow):
            prop = _reflect(prop, win.lo, win.hi)
            inside = np.ones(occ.size, dtype=bool)
        else:
            inside = win.contains(prop)
            prop = np.where(inside[:, None], prop, st.theta[occ])
        full_prop = st.theta.copy()
        full_prop[occ] = prop
        inv2s2 = 0.5 / st.sigma2[self.types]
        y = self.points
        a = st.assign
        d_old = np.sum((y - st.theta[a]) ** 2, axis=1) * inv2s2
        d_new = np.sum((y - full_prop[a]) ** 2, axis=1) * inv2s2
        delta = np.bincount(a, weights=d_old - d_new, minlength=M)[occ]
        logz_new = self._logz_all(prop, st.sigma2)
        delta -= np.sum(st.counts[:, occ] * (logz_new - self.logz[:, occ]), axis=0)
        ok = inside & (np.log(rng.uniform(size=occ.size)) < delta)
        acc_idx = occ[ok]
        st.theta[acc_idx] = prop[ok]
        self.logz[:, acc_idx] = logz_new[:, ok]
        self.accept["theta"].append(ok.mean())

    def _sigma_target(self, j: int, s2: float, logz_j: np.ndarray) -> float:
        st = self.state
        sel = self.types == j
        r2 = np.sum((self.points[sel] - st.theta[st.assign[sel]]) ** 2)
        nj = self.n_foci_type[j]
        val = -0.5 * r2 / s2 - 0.5 * self.d * nj * math.log(s2)
        val -= float(np.dot(st.counts[j], logz_j))
        # sigma^-2 ~ U[0, c]: density ∝ s2^-2; plus the log-scale Jacobian
        return val - math.log(s2)

    def mh_sigma(self) -> None:
        st, rng = self.state, self.rng
        occ = st.counts.sum(axis=0) > 0
        accs = []
        for j in range(self.J):
            step = self.steps["sigma2"][j]
            s2 = st.sigma2[j]
            s2p = s2 * math.exp(step * rng.standard_normal())
            u = math.log(rng.uniform())
            if 1.0 / s2p > self.cfg.sigma_prec_max:
                accs.append(0.0)
                continue
            lz_cur = np.where(occ, self.logz[j], 0.0)
            lz_new = np.zeros(st.M)
            if occ.any():
                lz_new[occ] = log_normalizer(self.window, st.theta[occ], s2p)
            lr = self._sigma_target(j, s2p, lz_new) - self._sigma_target(j, s2, lz_cur)
            if u < lr:
                st.sigma2[j] = s2p
                self.logz[j] = log_normalizer(self.window, st.theta, s2p)
                accs.append(1.0)
            else:
                accs.append(0.0)
        self.accept["sigma2"].append(np.array(accs))

    def _beta_target(self, beta: float) -> float:
        st = self.state
        a, b = self.cfg.prior_shape, self.cfg.prior_rate
        return (
            _logprior_gamma(beta, a, b) + math.log(beta)
            - beta * st.nu.sum() + self._boundary(st.nu.min(), beta)
        )

    def mh_beta(self) -> None:
        st, rng = self.state, self.rng
        bp = st.beta * math.exp(self.steps["beta"] * rng.standard_normal())
        lr = self._beta_target(bp) - self._beta_target(st.beta)
        ok = math.log(rng.uniform()) < lr
        if ok:
            st.beta = bp
        self.accept["beta"].append(float(ok))

    def mh_sigma_beta(self) -> None:
        self.mh_sigma()
        self.mh_beta()

    def _hyper_target(self, nu: np.ndarray, tau: float, beta: float) -> float:
        """Collapsed log target in (log nu, log tau, log beta) coordinates, up to terms
        invariant under the joint scale move."""
        a, b = self.cfg.prior_shape, self.cfg.prior_rate
        val = _logprior_gamma(tau, a, b) + math.log(tau) + _logprior_gamma(beta, a, b) + math.log(beta)
        return val + float(self._collapsed_jump_terms(nu, tau).sum())

    def mh_scale(self) -> None:
        """Joint move ``(nu, tau, beta) -> (c nu, c tau, beta / c)``; ``beta * nu`` is unchanged."""
        st, rng = self.state, self.rng
        c = math.exp(self.steps["scale"] * rng.standard_normal())
        nup, taup, betap = st.nu * c, st.tau * c, st.beta / c
        lr = self._hyper_target(nup, taup, betap) - self._hyper_target(st.nu, st.tau, st.beta)
        ok = math.log(rng.uniform()) < lr
        if ok:
            st.nu, st.tau, st.beta = nup, taup, betap
        self.accept["scale"].append(float(ok))

    def mh_tau(self) -> None:
        st, rng = self.state, self.rng
        a, b = self.cfg.prior_shape, self.cfg.prior_rate
        tp = st.tau * math.exp(self.steps["tau"] * rng.standard_normal())

        def target(t):
            return _logprior_gamma(t, a, b) + math.log(t) + float(self._collapsed_jump_terms(st.nu, t).sum())

        ok = math.log(rng.uniform()) < target(tp) - target(st.tau)
        if ok:
            st.tau = tp
        self.accept["tau"].append(float(ok))

    def mh_nu_theta(self) -> None:
        self.mh_nu()
        self.mh_theta()

    def sort_jumps(self) -> None:
        st = self.state
        perm = np.argsort(-st.nu, kind="stable")
        if np.array_equal(perm, np.arange(st.M)):
            return
        inv = np.empty_like(perm)
        inv[perm] = np.arange(st.M)
        st.nu = st.nu[perm]
        st.theta = st.theta[perm]
        st.log_mu = st.log_mu[:, perm]
        st.counts = st.counts[:, perm]
        self.logz = self.logz[:, perm]
        st.assign = inv[st.assign]

    def sweep(self) -> None:
        self.gibbs_assignments()
        self.gibbs_mu()
        self.gibbs_tau()
        self.mh_nu_theta()
        self.mh_sigma_beta()
        self.mh_scale()
        self.mh_tau()
        # extra passes over the cheap collapsed (nu, beta, tau) block
        for _ in range(self.cfg.hyper_repeats - 1):
            self.mh_nu()
            self.mh_beta()
            self.mh_scale()
            self.mh_tau()
        self.gibbs_mu()
        self.sort_jumps()
        self.state.iteration += 1

    # ------------------------------------------------------------ adaptation

    def adapt(self, t: int) -> None:
        gain = 1.0 / (t + 1) ** 0.6
        target = self.cfg.target_accept
        for key in ("nu", "theta", "beta", "tau", "scale"):
            if self.accept[key]:
                self.steps[key] *= math.exp(gain * (self.accept[key][-1] - target))
        if self.accept["sigma2"]:
            self.steps["sigma2"] = self.steps["sigma2"] * np.exp(gain * (self.accept["sigma2"][-1] - target))

    # ------------------------------------------------------------ summaries

    def log_posterior(self) -> float:
        """Joint log density of data, assignments and parameters with ``mu`` integrated out."""
        st = self.state
        cfg = self.cfg
        val = float(self._collapsed_jump_terms(st.nu, st.tau).sum())
        if self.points.shape[0]:
            s2 = st.sigma2[self.types]
            r2 = np.sum((self.points - st.theta[st.assign]) ** 2, axis=1)
            val += float(np.sum(-0.5 * r2 / s2 - 0.5 * self.d * np.log(2 * math.pi * s2)))
            val -= float(np.sum(st.counts * self.logz))
        val += self._boundary(st.nu.min(), st.beta) + float(np.sum(-np.log(st.nu) - st.beta * st.nu))
        val += st.nu.size * math.log(self.base.normalized_density)
        val += _logprior_gamma(st.tau, cfg.prior_shape, cfg.prior_rate)
        val += _logprior_gamma(st.beta, cfg.prior_shape, cfg.prior_rate)
        val += float(np.sum(-2.0 * np.log(st.sigma2)))
        return val


def forward_data(state: ModelState, window: Window, n_studies, labels, rng: np.random.Generator) -> tuple[Dataset, np.ndarray]:
    """Draw studies from the truncated model at ``state``, keeping the generating jump of each focus."""
    from .kernel import sample_kernel_points
    from .procgen import PointPattern

    n_studies = np.broadcast_to(np.asarray(n_studies, dtype=int), (state.J,))
    with np.errstate(under="ignore"):
        mu = np.exp(state.log_mu)
    pats, assign = [], []
    for j in range(state.J):
        for i in range(n_studies[j]):
            counts = rng.poisson(mu[j])
            src = np.repeat(np.arange(state.M), counts)
            pts = sample_kernel_points(state.theta[src], state.sigma2[j], window, rng) if src.size else np.empty((0, window.dim))
            pats.append(PointPattern(f"{labels[j]}_{i + 1}", labels[j], pts))
            assign.append(src)
    return Dataset(window, labels, pats), np.concatenate(assign).astype(np.int64)


@dataclass
class Chain:
    """Saved snapshots and per-iteration scalar traces of one HPGRF run."""

    labels: list
    window: Window
    config: ChainConfig
    alpha_total: float
    theta: np.ndarray
    nu: np.ndarray
    log_mu: np.ndarray
    sigma2: np.ndarray
    tau: np.ndarray
    beta: np.ndarray
    counts: np.ndarray
    saved_iters: np.ndarray
    trace: np.ndarray
    trace_names: list
    truncation: np.ndarray
    acceptance: dict = field(default_factory=dict)
    model: str = "hpgrf"

    shared = True

    @property
    def J(self) -> int:
        return len(self.labels)

    @property
    def n_snapshots(self) -> int:
        return self.nu.shape[0]

    def mu(self, j: int) -> np.ndarray:
        with np.errstate(under="ignore"):
            return np.exp(self.log_mu[:, j, :])

    def type_total(self, j: int) -> np.ndarray:
        """``Lambda_j(B)`` per snapshot."""
        return self.mu(j).sum(axis=1)

    def snapshot_jumps(self, s: int) -> JumpSet:
        return JumpSet(self.theta[s], self.nu[s], self.log_mu[s], float(self.beta[s]), float(self.tau[s]))

    def snapshot_intensity(self, j: int, s: int, sigma_scale: float = 1.0) -> JumpIntensity:
        mu = self.mu(j)[s]
        keep = significant(mu)
        return JumpIntensity(self.theta[s][keep], mu[keep], self.sigma2[s, j] * sigma_scale**2, self.window)

    def type_intensity_at(self, j: int, points) -> np.ndarray:
        """``lambda_j(y)`` per snapshot and point, shape ``(S, n)``."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.empty((self.n_snapshots, pts.shape[0]))
        for s in range(self.n_snapshots):
            out[s] = _intensity_points(pts, self.theta[s], self.mu(j)[s], self.sigma2[s, j], self.window)
        return out

    def type_intensity_lattice(self, j: int, grid: Grid) -> np.ndarray:
        out = np.empty((self.n_snapshots,) + grid.shape)
        mu = self.mu(j)
        for s in range(self.n_snapshots):
            out[s] = _intensity_lattice(grid, self.theta[s], mu[s], self.sigma2[s, j])
        return out

    def population_lattice(self, grid: Grid) -> np.ndarray:
        """``tau^-1 sum_m nu_m J^-1 sum_j k_j(y, theta_m)`` per snapshot."""
        out = np.zeros((self.n_snapshots,) + grid.shape)
        for s in range(self.n_snapshots):
            w = self.nu[s] / self.tau[s]
            for j in range(self.J):
                out[s] += _intensity_lattice(grid, self.theta[s], w, self.sigma2[s, j]) / self.J
        return out

    def trace_column(self, name: str) -> np.ndarray:
        return self.trace[:, self.trace_names.index(name)]


PRUNE_RELATIVE = 1e-14


def significant(mu: np.ndarray) -> np.ndarray:
    """Jumps whose child height exceeds ``1e-14`` of the total; the rest are dropped
    from intensity evaluations (their combined effect is below double precision)."""
    total = mu.sum()
    return mu > PRUNE_RELATIVE * total if total > 0 else np.zeros(mu.shape, dtype=bool)


def _weights(theta, mu, sigma2, window):
    d = window.dim
    logz = log_normalizer(window, theta, sigma2)
    coef = (2 * math.pi * sigma2) ** (-d / 2)
    return mu * np.exp(-logz) * coef


def _intensity_points(points, theta, mu, sigma2, window) -> np.ndarray:
    keep = significant(mu)
    w = _weights(theta[keep], mu[keep], sigma2, window)
    return _accel.kernel_sums(points, theta[keep], w, 0.5 / sigma2)


def _intensity_lattice(grid: Grid, theta, mu, sigma2) -> np.ndarray:
    """Separable evaluation on the full lattice; zero outside the window."""
    keep = significant(mu)
    th = theta[keep]
    w = _weights(th, mu[keep], sigma2, grid.window)
    facs = [np.exp(-0.5 * (ax[:, None] - th[None, :, a]) ** 2 / sigma2) for a, ax in enumerate(grid.axes)]
    if grid.dim == 2:
        vals = (facs[0] * w[None, :]) @ facs[1].T
    else:
        vals = np.empty(grid.shape)
        fxw = facs[0] * w[None, :]
        for iz in range(grid.shape[2]):
            vals[:, :, iz] = (fxw * facs[2][iz][None, :]) @ facs[1].T
    return np.where(grid.inside, vals, 0.0)


class IndependentChains:
    """IPGRF fit: one single-type chain per type, sharing nothing."""

    shared = False
    model = "ipgrf"

    def __init__(self, chains: list, labels: list, window: Window):
        self.chains = chains
        self.labels = list(labels)
        self.window = window

    @property
    def J(self) -> int:
        return len(self.labels)

    @property
    def n_snapshots(self) -> int:
        return min(c.n_snapshots for c in self.chains)

    def type_total(self, j: int) -> np.ndarray:
        return self.chains[j].type_total(0)[: self.n_snapshots]

    def snapshot_intensity(self, j: int, s: int, sigma_scale: float = 1.0) -> JumpIntensity:
        return self.chains[j].snapshot_intensity(0, s, sigma_scale)

    def type_intensity_at(self, j: int, points) -> np.ndarray:
        return self.chains[j].type_intensity_at(0, points)[: self.n_snapshots]

    def type_intensity_lattice(self, j: int, grid: Grid) -> np.ndarray:
        return self.chains[j].type_intensity_lattice(0, grid)[: self.n_snapshots]

    def population_lattice(self, grid: Grid) -> np.ndarray:
        S = self.n_snapshots
        return sum(c.population_lattice(grid)[:S] for c in self.chains) / self.J


def _run_single(dataset: Dataset, config: ChainConfig, rng: np.random.Generator, model: str = "hpgrf", progress=None) -> Chain:
    if dataset.J == 0:
        raise ValueError("dataset has no types")
    smp = Sampler(dataset, config, rng)
    J, M, d = dataset.J, config.M, dataset.window.dim
    S = config.n_saved
    theta = np.empty((S, M, d))
    nu = np.empty((S, M))
    log_mu = np.empty((S, J, M))
    sigma2 = np.empty((S, J))
    tau = np.empty(S)
    beta = np.empty(S)
    counts = np.empty((S, J, M), dtype=np.int32)
    iters = np.empty(S, dtype=np.int64)
    trunc = np.empty(S)
    names = ["iter", "tau", "beta"] + [f"sigma_{j + 1}" for j in range(J)] + [f"mass_{j + 1}" for j in range(J)] + ["logpost"]
    trace = np.empty((config.iterations, len(names)))
    k = 0
    for it in range(config.iterations):
        smp.sweep()
        if config.adapt and it < config.burn_in:
            smp.adapt(it)
        st = smp.state
        with np.errstate(under="ignore"):
            masses = np.exp(st.log_mu).sum(axis=1)
        lp = smp.log_posterior()
        if not (np.isfinite(lp) and np.isfinite(st.tau) and np.isfinite(st.beta) and np.all(np.isfinite(masses))):
            raise NumericError(
                f"non-finite state at iteration {it}: tau={st.tau} beta={st.beta} "
                f"sigma2={st.sigma2.tolist()} masses={masses.tolist()} logpost={lp} "
                f"nu_range=({st.nu.min()}, {st.nu.max()})"
            )
        trace[it] = [it + 1, st.tau, st.beta, *st.sigma2, *masses, lp]
        if it >= config.burn_in and (it + 1 - config.burn_in) % config.thin == 0 and k < S:
            theta[k], nu[k], log_mu[k] = st.theta, st.nu, st.log_mu
            sigma2[k], tau[k], beta[k] = st.sigma2, st.tau, st.beta
            counts[k] = st.counts
            iters[k] = it + 1
            trunc[k] = -math.expm1(-st.beta * st.nu[-1])
            k += 1
        if progress is not None:
            progress(it, smp)
    acc = {key: float(np.mean(v[config.burn_in:])) if len(v) > config.burn_in else float("nan")
           for key, v in smp.accept.items() if key != "sigma2"}
    if smp.accept["sigma2"]:
        acc["sigma2"] = float(np.mean(np.array(smp.accept["sigma2"])[config.burn_in:]))
    return Chain(
        list(dataset.labels), dataset.window, config, smp.base.total,
        theta[:k], nu[:k], log_mu[:k], sigma2[:k], tau[:k], beta[:k], counts[:k], iters[:k],
        trace, names, trunc[:k], acc, model,
    )


def run_chain(dataset: Dataset, config: ChainConfig, model: str = "hpgrf", seed: int | None = None, progress=None):
    """Fit the HPGRF (shared parent field) or IPGRF (independent per-type fields)."""
    seed = config.seed if seed is None else seed
    if dataset.n_foci == 0 and dataset.J == 0:
        raise ValueError("dataset is empty")
    if model == "hpgrf":
        return _run_single(dataset, config, rng_stream(seed, 0), "hpgrf", progress)
    if model == "ipgrf":
        chains = [
            _run_single(dataset.only_type(j), config, rng_stream(seed, j), "ipgrf", progress)
            for j in range(dataset.J)
        ]
        return IndependentChains(chains, dataset.labels, dataset.window)
    raise ValueError(f"unknown model {model!r}")


def posterior_intensity(fit, grid: Grid, j: int | str | None = None) -> IntensityGrid:
    """Posterior mean intensity of type ``j`` (or the population mean when ``j`` is None)."""
    if isinstance(j, str):
        j = fit.labels.index(j)
    if j is None:
        vals = fit.population_lattice(grid).mean(axis=0)
        label = "population"
    else:
        vals = fit.type_intensity_lattice(j, grid).mean(axis=0)
        label = fit.labels[j]
    return IntensityGrid(grid, vals, label)
