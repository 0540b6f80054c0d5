"""Closed-form count moments of the HPGRF and posterior plug-in summaries.

For a region ``A`` and type ``j`` with kernel mass ``K_j(A, x)``

    E N_j(A)          = (1 / tau beta) int K_j(A, x) alpha(dx)
    Cov(N_j(A), N_j(B)) = (1 / tau beta) int K_j(A n B, x) alpha(dx)
                        + ((1 + beta) / tau^2 beta^2) int K_j(A, x) K_j(B, x) alpha(dx)
    Cov(N_j(A), N_k(B)) = (1 / tau^2 beta^2) int K_j(A, x) K_k(B, x) alpha(dx),  j != k

with ``alpha`` uniform on the window.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .geometry import BoxWindow, Grid, IntensityGrid, Region, SubBox, Window, make_grid
from .kernel import region_kernel_mass

__all__ = [
    "MomentParams",
    "count_mean",
    "count_cov_within",
    "count_cov_between",
    "population_intensity",
    "region_correlation",
    "linear_kernel_integral",
    "product_kernel_integral",
]

MAX_NODES = 1_000_000
_GL_X, _GL_W = np.polynomial.legendre.leggauss(8)


@dataclass
class MomentParams:
    tau: float
    beta: float
    alpha_total: float
    sigma2: np.ndarray
    window: Window

    def __post_init__(self):
        self.sigma2 = np.atleast_1d(np.asarray(self.sigma2, dtype=float))
        if min(self.tau, self.beta, self.alpha_total) <= 0 or np.any(self.sigma2 <= 0):
            raise ValueError("moment parameters must be positive")

    @property
    def alpha_density(self) -> float:
        return self.alpha_total / self.window.volume()


def _gl_nodes(lo: float, hi: float, width: float) -> tuple[np.ndarray, np.ndarray]:
    """Composite 8-point Gauss-Legendre rule with panels no wider than ``width``."""
    n = max(int(math.ceil((hi - lo) / width)), 1)
    edges = np.linspace(lo, hi, n + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    x = (mid[:, None] + half[:, None] * _GL_X[None, :]).ravel()
    w = (half[:, None] * _GL_W[None, :]).ravel()
    return x, w


def _h_axis(y: np.ndarray, lo: float, hi: float, sigma: float) -> np.ndarray:
    """``int_lo^hi phi_sigma(y - x) / Z_axis(x) dx`` for every ``y``."""
    x, w = _gl_nodes(lo, hi, sigma / 2.0)
    z = special.ndtr((hi - x) / sigma) - special.ndtr((lo - x) / sigma)
    out = np.empty(y.size)
    for s in range(0, y.size, 4096):
        yy = y[s : s + 4096]
        phi = np.exp(-0.5 * ((yy[:, None] - x[None, :]) / sigma) ** 2) / (math.sqrt(2 * math.pi) * sigma)
        out[s : s + 4096] = (phi / z[None, :]) @ w
    return out


def _cap_spacing(lo, hi, spacing: float, cap: int = MAX_NODES) -> float:
    n = float(np.prod(np.maximum((hi - lo) / spacing, 1.0)))
    if n > cap:
        spacing *= (n / cap) ** (1.0 / len(lo))
    return spacing


def linear_kernel_integral(regions, sigma2: float, window: Window, spacing: float | None = None) -> float:
    """``int_B K(A_1 n ... n A_r, x) dx`` (Lebesgue measure, mm^d).

    On a box window the identity ``int_B K(A, x) dx = int_A h(y) dy`` with the
    separable ``h(y) = prod_a int phi(y_a - x_a) / Z_a(x_a) dx_a`` reduces the
    problem to 1D Gauss-Legendre rules plus one region lattice.
    """
    if isinstance(regions, (Region, Window)):
        regions = [regions]
    regions = [r for r in regions if not isinstance(r, Window)]
    if not regions:
        return window.volume()
    sigma = math.sqrt(sigma2)
    if not isinstance(window, BoxWindow):
        return float(_x_lattice_sum([regions], [sigma2], window, spacing))
    lo, hi = window.lo.copy(), window.hi.copy()
    for r in regions:
        rlo, rhi = r.bounding_box()
        lo, hi = np.maximum(lo, rlo), np.minimum(hi, rhi)
    if np.any(hi <= lo):
        return 0.0
    d = window.dim
    if all(isinstance(r, SubBox) for r in regions):
        total = 1.0
        for a in range(d):
            y, w = _gl_nodes(lo[a], hi[a], sigma / 2.0)
            total *= float(_h_axis(y, window.lo[a], window.hi[a], sigma) @ w)
        return total
    if spacing is None:
        spacing = min(sigma / 8.0, float(np.min(hi - lo)) / 256.0)
    spacing = _cap_spacing(lo, hi, spacing)
    n = np.maximum(np.ceil((hi - lo) / spacing).astype(int), 1)
    h = (hi - lo) / n
    axes = [lo[a] + (np.arange(n[a]) + 0.5) * h[a] for a in range(d)]
    ha = [_h_axis(ax, window.lo[a], window.hi[a], sigma) for a, ax in enumerate(axes)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
    flag = window.contains(pts)
    for r in regions:
        flag &= r.contains(pts)
    flag = flag.reshape(tuple(n)).astype(float)
    if d == 2:
        val = ha[0] @ flag @ ha[1]
    else:
        val = np.einsum("a,abc,b,c->", ha[0], flag, ha[1], ha[2])
    return float(val * np.prod(h))


def _x_grid(window: Window, sigmas, spacing: float | None) -> Grid:
    if spacing is None:
        spacing = min(math.sqrt(s) for s in sigmas) / 4.0
    spacing = _cap_spacing(window.lo, window.hi, spacing)
    return make_grid(window, spacing)


def _x_lattice_sum(region_lists, sigma2s, window: Window, spacing: float | None) -> float:
    """``int_B prod_i K_{s_i}(A_i, x) dx`` by the midpoint rule on a window lattice."""
    grid = _x_grid(window, sigma2s, spacing)
    pts = grid.points
    prod = np.ones(pts.shape[0])
    for regs, s2 in zip(region_lists, sigma2s):
        prod *= region_kernel_mass(regs, pts, s2, window)
    return float(prod.sum() * grid.cell_volume)


def product_kernel_integral(A, B, sigma2_a: float, sigma2_b: float, window: Window, spacing: float | None = None) -> float:
    """``int_B K_a(A, x) K_b(B, x) dx``; default lattice spacing ``min(sigma) / 4``."""
    return _x_lattice_sum([[A], [B]], [sigma2_a, sigma2_b], window, spacing)


def _check_region(region, params: MomentParams):
    win = region if isinstance(region, Window) else region.window
    if win is not params.window and win != params.window:
        raise ValueError("region is not defined on the moment window")


def count_mean(region, j: int, params: MomentParams, spacing: float | None = None) -> float:
    """Expected type-``j`` count in ``region`` for one study."""
    _check_region(region, params)
    lin = linear_kernel_integral(region, params.sigma2[j], params.window, spacing)
    return params.alpha_density * lin / (params.tau * params.beta)


def count_cov_within(A, B, j: int, params: MomentParams, spacing: float | None = None) -> float:
    """Covariance of the counts in ``A`` and ``B`` for the same study of type ``j``."""
    _check_region(A, params)
    _check_region(B, params)
    tb = params.tau * params.beta
    s2 = params.sigma2[j]
    first = linear_kernel_integral([A, B], s2, params.window, spacing) / tb
    second = (1 + params.beta) / tb**2 * product_kernel_integral(A, B, s2, s2, params.window, spacing)
    return params.alpha_density * (first + second)


def count_cov_between(A, B, j: int, k: int, params: MomentParams, spacing: float | None = None) -> float:
    """Covariance of type-``j`` counts in ``A`` and type-``k`` counts in ``B``."""
    if j == k:
        raise ValueError("use within-type covariance")
    _check_region(A, params)
    _check_region(B, params)
    tb = params.tau * params.beta
    prod = product_kernel_integral(A, B, params.sigma2[j], params.sigma2[k], params.window, spacing)
    return params.alpha_density * prod / tb**2


def population_intensity(fit, grid: Grid) -> IntensityGrid:
    """Posterior mean of ``tau^-1 sum_m nu_m J^-1 sum_j k_j(y, theta_m)``."""
    vals = fit.population_lattice(grid).mean(axis=0)
    return IntensityGrid(grid, vals, "population")


def _snapshot_params(fit, s: int) -> MomentParams:
    return MomentParams(float(fit.tau[s]), float(fit.beta[s]), fit.alpha_total, fit.sigma2[s], fit.window)


def region_correlation(fit, region, j: int, k: int, spacing: float | None = None, max_snapshots: int | None = 200) -> dict:
    """Posterior plug-in summary of ``Corr(N_j(A), N_k(A))``.

    The prior-form moment formulas are evaluated at every saved
    ``(tau, beta, sigma_j^2, sigma_k^2)``; this is a plug-in summary of the
    model correlation, not a posterior covariance of observed counts.
    Independent per-type fits give zero.
    """
    S = fit.n_snapshots
    if j == k:
        draws = np.ones(S)
    elif getattr(fit, "chains", None) is not None:
        draws = np.zeros(S)
    else:
        idx = np.arange(S)
        if max_snapshots is not None and S > max_snapshots:
            idx = np.unique(np.linspace(0, S - 1, max_snapshots).round().astype(int))
        vals = []
        for s in idx:
            p = _snapshot_params(fit, s)
            cov = count_cov_between(region, region, j, k, p, spacing)
            vj = count_cov_within(region, region, j, p, spacing)
            vk = count_cov_within(region, region, k, p, spacing)
            vals.append(cov / math.sqrt(vj * vk))
        draws = np.array(vals)
    lo, hi = np.percentile(draws, [2.5, 97.5])
    return {"mean": float(draws.mean()), "lo95": float(lo), "hi95": float(hi), "draws": draws}
