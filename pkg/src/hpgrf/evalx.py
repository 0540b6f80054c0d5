"""Model assessment: L-function predictive checks, Gelman-Rubin, IMSE/IWMSE, confusion tables."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import _accel
from .geometry import Grid, IntensityGrid, Region, Window
from .procgen import INTENSITY_FLOOR, Dataset, JumpIntensity

__all__ = [
    "LCurve",
    "LResult",
    "DiagnosticReport",
    "l_function",
    "default_radii",
    "ppc_check",
    "gelman_rubin",
    "chain_scalars",
    "imse_iwmse",
    "confusion_stats",
]

log = logging.getLogger(__name__)


@dataclass
class LResult:
    values: np.ndarray
    defined: bool = True


def _intensity_values(intensity, pts: np.ndarray) -> np.ndarray:
    if callable(intensity):
        lam = intensity(pts)
    elif hasattr(intensity, "at"):
        lam = intensity.at(pts)
    elif np.ndim(intensity) == 0:
        lam = np.full(pts.shape[0], float(intensity))
    else:
        lam = np.asarray(intensity, dtype=float)
    return np.maximum(np.asarray(lam, dtype=float).reshape(pts.shape[0]), INTENSITY_FLOOR)


def l_function(points, intensity, radii, window: Window) -> LResult:
    """Inhomogeneous L-function without edge correction.

    ``K(r) = |B|^-1 sum_{i != k} 1[|y_i - y_k| <= r] / (lambda(y_i) lambda(y_k))``
    over ordered pairs; ``L = (3K / 4 pi)^{1/3}`` in 3D and ``(K / pi)^{1/2}`` in 2D.

    Parameters
    ----------
    points : (n, d) array
    intensity : callable, object with ``at``, scalar or per-point array
    radii : increasing positive radii
    window : observation window

    Returns
    -------
    LResult
        ``defined`` is False (and values are zero) for fewer than two points.
    """
    r = np.asarray(radii, dtype=float)
    if r.ndim != 1 or np.any(r <= 0) or np.any(np.diff(r) <= 0):
        raise ValueError("radii must be positive and increasing")
    pts = np.asarray(points, dtype=float).reshape(-1, window.dim)
    if pts.shape[0] < 2:
        return LResult(np.zeros(r.size), False)
    lam = _intensity_values(intensity, pts)
    k = _accel.pair_counts(pts, 1.0 / lam, r) / window.volume()
    if window.dim == 3:
        return LResult(np.cbrt(3.0 * k / (4.0 * math.pi)))
    if window.dim == 2:
        return LResult(np.sqrt(k / math.pi))
    raise ValueError("L-function needs a 2D or 3D window")


def default_radii(window: Window, n: int = 20, voxel: float | None = None) -> np.ndarray:
    """Log-spaced radii from one voxel width to a quarter of the window diameter."""
    if voxel is None:
        voxel = float(np.min(getattr(window, "voxel", np.full(window.dim, 1.0))))
    return np.geomspace(voxel, window.diameter / 4.0, n)


@dataclass
class LCurve:
    study_id: str
    type: str
    radii: np.ndarray
    deltas: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    fail_fraction: float
    good_fit: bool


def _range_weights(r: np.ndarray) -> np.ndarray:
    """Share of ``[r_0, r_max]`` represented by each radius (midpoint cells)."""
    if r.size == 1:
        return np.ones(1)
    mids = 0.5 * (r[1:] + r[:-1])
    edges = np.concatenate([[r[0]], mids, [r[-1]]])
    return np.diff(edges) / (r[-1] - r[0])


def ppc_check(
    fit,
    dataset: Dataset,
    radii=None,
    rng: np.random.Generator | None = None,
    max_snapshots: int | None = 200,
    sigma_scale: float = 1.0,
    threshold: float = 0.1,
) -> list:
    """L-function posterior predictive check for every study.

    For each saved snapshot a replicate pattern is drawn from the snapshot's
    type intensity and ``Delta(r) = L(r; Y) - L(r; Y*)`` is recorded, both
    curves using the snapshot intensity.  A study is a good fit when zero
    falls outside the pointwise 95% band of ``Delta`` on less than
    ``threshold`` of the radius range.  ``sigma_scale`` multiplies every
    kernel standard deviation (used for negative controls).
    """
    if list(dataset.labels) != list(fit.labels):
        raise ValueError("fit and dataset types do not match")
    rng = rng if rng is not None else np.random.default_rng(0)
    win = dataset.window
    r = default_radii(win) if radii is None else np.asarray(radii, dtype=float)
    wts = _range_weights(r)
    S = fit.n_snapshots
    snaps = np.arange(S)
    if max_snapshots is not None and S > max_snapshots:
        snaps = np.unique(np.linspace(0, S - 1, max_snapshots).round().astype(int))
    out = []
    for j, lab in enumerate(dataset.labels):
        studies = dataset.patterns_of(j)
        if not studies:
            continue
        deltas = np.zeros((len(studies), snaps.size, r.size))
        for k, s in enumerate(snaps):
            lam = fit.snapshot_intensity(j, int(s), sigma_scale=sigma_scale)
            for i, p in enumerate(studies):
                obs = l_function(p.points, lam, r, win).values
                rep = l_function(lam.sample(rng), lam, r, win).values
                deltas[i, k] = obs - rep
        for i, p in enumerate(studies):
            lo, hi = np.percentile(deltas[i], [2.5, 97.5], axis=0)
            extreme = (lo > 0) | (hi < 0)
            frac = float(np.sum(wts[extreme]))
            out.append(LCurve(p.study_id, lab, r, deltas[i], lo, hi, frac, frac < threshold))
    return out


@dataclass
class DiagnosticReport:
    names: list
    psrf: np.ndarray
    mpsrf: float
    flags: dict = field(default_factory=dict)

    def max_psrf(self) -> float:
        return float(np.max(self.psrf))


def gelman_rubin(chains, names=None) -> DiagnosticReport:
    """Potential scale reduction factors for ``m >= 2`` equal-length chains.

    ``chains`` is a sequence of ``(n, p)`` arrays (or a ``(m, n, p)`` array).
    With ``W`` the mean within-chain variance and ``B/n`` the variance of
    chain means, ``V = W + (1 + 1/m) B/n`` and ``PSRF = sqrt(V / W)``; the
    multivariate factor is ``1 + (m+1)/m * lambda_max(W^-1 B/n)``.  Both are
    exactly one for identical chains.
    """
    x = np.asarray(chains, dtype=float)
    if x.ndim == 2:
        x = x[:, :, None]
    if x.ndim != 3 or x.shape[0] < 2:
        raise ValueError("need at least two equal-length chains")
    m, n, p = x.shape
    if n < 2:
        raise ValueError("chains need at least two draws")
    names = list(names) if names is not None else [f"x{i + 1}" for i in range(p)]
    means = x.mean(axis=1)
    W = np.mean([np.cov(c, rowvar=False, ddof=1).reshape(p, p) for c in x], axis=0)
    Bn = np.cov(means, rowvar=False, ddof=1).reshape(p, p)
    w = np.diag(W)
    b = np.diag(Bn)
    flags = {}
    scale = np.maximum(np.abs(means).max(axis=0), 1.0)
    degenerate = w <= (1e-14 * scale) ** 2
    psrf = np.ones(p)
    ok = ~degenerate
    psrf[ok] = np.sqrt((w[ok] + (1 + 1 / m) * b[ok]) / w[ok])
    for i in np.flatnonzero(degenerate):
        flags[names[i]] = "zero within-chain variance"
    mpsrf = 1.0
    if ok.any():
        Wk, Bk = W[np.ix_(ok, ok)], Bn[np.ix_(ok, ok)]
        # symmetric generalised eigenproblem; fall back to diagonal if W is singular
        try:
            lam = _max_gen_eig(Bk, Wk)
        except np.linalg.LinAlgError:
            flags["MPSRF"] = "singular within-chain covariance; diagonal approximation"
            lam = float(np.max(np.diag(Bk) / np.diag(Wk)))
        mpsrf = 1.0 + (m + 1) / m * max(lam, 0.0)
    return DiagnosticReport(names, psrf, float(mpsrf), flags)


def _max_gen_eig(B: np.ndarray, W: np.ndarray) -> float:
    L = np.linalg.cholesky(W)
    Li = np.linalg.inv(L)
    return float(np.linalg.eigvalsh(Li @ B @ Li.T).max())


def chain_scalars(fit, points=None) -> tuple[np.ndarray, list]:
    """Default monitored scalars per saved snapshot.

    tau, beta, sigma_j^2 and Lambda_j(B) for each type, plus ``lambda_j`` at
    the optional monitoring locations.
    """
    cols, names = [], []
    chains = getattr(fit, "chains", None)
    parts = chains if chains is not None else [fit]
    S = fit.n_snapshots
    for ci, ch in enumerate(parts):
        tag = "" if chains is None else f"[{fit.labels[ci]}]"
        cols += [ch.tau[:S], ch.beta[:S]]
        names += [f"tau{tag}", f"beta{tag}"]
        for j in range(ch.J):
            cols += [ch.sigma2[:S, j], ch.type_total(j)[:S]]
            names += [f"sigma2_{ch.labels[j]}", f"mass_{ch.labels[j]}"]
    if points is not None:
        pts = np.atleast_2d(points)
        for j in range(fit.J):
            vals = fit.type_intensity_at(j, pts)[:S]
            for q in range(pts.shape[0]):
                cols.append(vals[:, q])
                names.append(f"lambda_{fit.labels[j]}@{q + 1}")
    return np.column_stack(cols), names


def imse_iwmse(estimate: IntensityGrid, truth, region=None) -> tuple[float, float]:
    """``int_A (est - true)^2`` and ``int_A (est - true)^2 true`` by the midpoint rule.

    ``truth`` is a callable on points or an array on the estimate's lattice.
    ``region`` is a :class:`Region`, a boolean lattice mask, or None for the window.
    """
    grid: Grid = estimate.grid
    if callable(truth):
        tv = grid.scatter(np.asarray(truth(grid.points), dtype=float))
    else:
        tv = np.asarray(truth, dtype=float).reshape(grid.shape)
    if region is None or isinstance(region, Window):
        where = None
    elif isinstance(region, Region):
        where = grid.region_mask(region)
    else:
        where = np.asarray(region, dtype=bool)
    err2 = (estimate.values - tv) ** 2
    return grid.integrate(err2, where), grid.integrate(err2 * tv, where)


def confusion_stats(counts) -> dict:
    """Row-normalised confusion rates with overall and average accuracy.

    Overall accuracy uses the binomial standard error ``sqrt(p (1-p) / n)``;
    the average per-class rate uses the delta method
    ``sqrt(sum_c p_c (1 - p_c) / n_c) / C``.
    """
    c = np.asarray(counts)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise ValueError("confusion counts must be a square matrix")
    if np.any(c < 0) or not np.all(np.equal(np.mod(c, 1), 0)):
        raise ValueError("confusion counts must be nonnegative integers")
    c = c.astype(float)
    rows = c.sum(axis=1)
    flags = {}
    with np.errstate(invalid="ignore", divide="ignore"):
        rates = c / rows[:, None]
    empty = rows == 0
    if empty.any():
        flags["empty_rows"] = np.flatnonzero(empty).tolist()
    n = c.sum()
    overall = float(np.trace(c) / n) if n > 0 else float("nan")
    overall_se = math.sqrt(overall * (1 - overall) / n) if n > 0 else float("nan")
    pc = np.diag(rates)[~empty]
    nc = rows[~empty]
    average = float(pc.mean()) if pc.size else float("nan")
    average_se = float(math.sqrt(np.sum(pc * (1 - pc) / nc)) / pc.size) if pc.size else float("nan")
    return {
        "rates": rates,
        "overall": overall,
        "overall_se": overall_se,
        "average": average,
        "average_se": average_se,
        "n": int(n),
        "correct": int(np.trace(c)),
        "flags": flags,
    }
