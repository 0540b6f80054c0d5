"""Isotropic Gaussian kernel renormalised to the observation window.

``k(y, x) = phi_d(y; x, s2 I) / Z(x)`` with ``Z(x)`` the Gaussian mass of the
window, so every kernel integrates to one over the window.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import special

from .geometry import BoxWindow, MaskWindow, Region, SubBox, Window, _as_points

__all__ = [
    "log_normalizer",
    "kernel_density",
    "kernel_mass",
    "region_kernel_mass",
    "sample_kernel_point",
    "sample_kernel_points",
    "KernelError",
]


class KernelError(ValueError):
    pass


def _axis_cell_mass(x: np.ndarray, edges: np.ndarray, sigma: float) -> np.ndarray:
    """Gaussian mass of each cell along one axis; shape ``(len(x), len(edges)-1)``."""
    cdf = special.ndtr((edges[None, :] - x[:, None]) / sigma)
    return np.diff(cdf, axis=1)


def _lattice_mass(indicator: np.ndarray, edges: list, xs: np.ndarray, sigma: float, chunk: int = 512) -> np.ndarray:
    """Sum over flagged cells of the per-axis Gaussian cell masses, for each centre."""
    d = xs.shape[1]
    out = np.empty(xs.shape[0])
    ind = indicator.astype(float)
    for start in range(0, xs.shape[0], chunk):
        sl = slice(start, start + chunk)
        p = [_axis_cell_mass(xs[sl, a], edges[a], sigma) for a in range(d)]
        if d == 2:
            out[sl] = np.einsum("na,ab,nb->n", p[0], ind, p[1], optimize=True)
        else:
            t = np.einsum("na,abc->nbc", p[0], ind, optimize=True)
            t = np.einsum("nbc,nb->nc", t, p[1], optimize=True)
            out[sl] = np.einsum("nc,nc->n", t, p[2])
    return out


class _MaskNormalizerCache:
    """Per-mask cache of ``Z(x)``, keyed on ``x`` quantised to ``0.01 sigma``."""

    def __init__(self):
        self._store: dict = {}

    def get(self, window: MaskWindow, xs: np.ndarray, sigma: float) -> np.ndarray:
        key_w = id(window)
        table = self._store.setdefault((key_w, round(sigma, 10)), {})
        q = np.round(xs / (0.01 * sigma)).astype(np.int64)
        out = np.empty(xs.shape[0])
        missing = []
        for i, row in enumerate(map(tuple, q)):
            v = table.get(row)
            if v is None:
                missing.append(i)
            else:
                out[i] = v
        if missing:
            idx = np.array(missing)
            edges = [window.lo[a] + window.voxel[a] * np.arange(window.shape[a] + 1) for a in range(window.dim)]
            vals = _lattice_mass(window.occupancy, edges, xs[idx], sigma)
            for i, v in zip(idx, vals):
                table[tuple(q[i])] = v
                out[i] = v
        return out

    def clear(self):
        self._store.clear()


mask_cache = _MaskNormalizerCache()


def log_normalizer(window: Window, xs, sigma2: float) -> np.ndarray:
    """``ln Z(x)`` for each row of ``xs``."""
    xs = _as_points(xs, window.dim)
    sigma = math.sqrt(sigma2)
    if isinstance(window, BoxWindow):
        hi = special.ndtr((window.hi - xs) / sigma)
        lo = special.ndtr((window.lo - xs) / sigma)
        return np.sum(np.log(np.maximum(hi - lo, 1e-300)), axis=1)
    if isinstance(window, MaskWindow):
        return np.log(np.maximum(mask_cache.get(window, xs, sigma), 1e-300))
    raise TypeError(f"unsupported window {window!r}")


def _log_phi(y: np.ndarray, x: np.ndarray, sigma2: float) -> np.ndarray:
    d = y.shape[-1]
    r2 = np.sum((y - x) ** 2, axis=-1)
    return -0.5 * r2 / sigma2 - 0.5 * d * math.log(2 * math.pi * sigma2)


def kernel_density(y, x, sigma2: float, window: Window):
    """Window-normalised Gaussian density at ``y`` for centre ``x`` (per mm^d)."""
    yy = _as_points(y, window.dim)
    xx = _as_points(x, window.dim)
    if not (window.contains(yy).all() and window.contains(xx).all()):
        raise KernelError("point outside window")
    val = np.exp(_log_phi(yy, xx, sigma2) - log_normalizer(window, xx, sigma2))
    return float(val[0]) if val.size == 1 else val


def _box_mass(lo, hi, xs, sigma):
    up = special.ndtr((hi - xs) / sigma)
    dn = special.ndtr((lo - xs) / sigma)
    return np.prod(np.clip(up - dn, 0.0, None), axis=1)


def region_kernel_mass(regions, xs, sigma2: float, window: Window, spacing: float | None = None) -> np.ndarray:
    """``K(A_1 ∩ ... ∩ A_r, x)`` for every row of ``xs``.

    Box regions in box windows are exact.  Anything else is integrated on a
    lattice of cells whose Gaussian masses are exact; only cell membership
    (tested at cell centres) is discretised.
    """
    if isinstance(regions, (Region, Window)):
        regions = [regions]
    regions = [r for r in regions if not isinstance(r, Window)]
    xs = _as_points(xs, window.dim)
    sigma = math.sqrt(sigma2)
    if not regions:
        return np.ones(xs.shape[0])
    logz = log_normalizer(window, xs, sigma2)
    lo = window.lo.copy()
    hi = window.hi.copy()
    for r in regions:
        rlo, rhi = r.bounding_box()
        lo, hi = np.maximum(lo, rlo), np.minimum(hi, rhi)
    if np.any(hi <= lo):
        return np.zeros(xs.shape[0])
    if isinstance(window, BoxWindow) and all(isinstance(r, SubBox) for r in regions):
        return _box_mass(lo, hi, xs, sigma) / np.exp(logz)
    if spacing is None:
        spacing = min(sigma / 8.0, float(np.min(hi - lo)) / 64.0)
        if isinstance(window, MaskWindow):
            spacing = min(spacing, float(np.min(window.voxel)) / 2.0)
    n = np.maximum(np.ceil((hi - lo) / spacing).astype(int), 1)
    edges = [np.linspace(lo[a], hi[a], n[a] + 1) for a in range(window.dim)]
    centers = [0.5 * (e[1:] + e[:-1]) for e in edges]
    pts = np.stack(np.meshgrid(*centers, indexing="ij"), axis=-1).reshape(-1, window.dim)
    flag = window.contains(pts)
    for r in regions:
        flag &= r.contains(pts)
    ind = flag.reshape(tuple(n))
    return _lattice_mass(ind, edges, xs, sigma) / np.exp(logz)


def kernel_mass(region, x, sigma2: float, window: Window | None = None, spacing: float | None = None):
    """``K(A, x)``: kernel probability that a point centred at ``x`` lands in ``A``."""
    if window is None:
        window = region if isinstance(region, Window) else region.window
    xs = _as_points(x, window.dim)
    if not window.contains(xs).all():
        raise KernelError("kernel centre outside window")
    if isinstance(region, Window):
        val = np.ones(xs.shape[0])
    else:
        val = region_kernel_mass([region], xs, sigma2, window, spacing)
    return float(val[0]) if np.ndim(x) == 1 else val


def sample_kernel_points(centers, sigma2, window: Window, rng: np.random.Generator) -> np.ndarray:
    """One window-truncated Gaussian draw per centre (rejection from the full Gaussian).

    ``sigma2`` may be scalar or per-centre.
    """
    centers = _as_points(centers, window.dim)
    n = centers.shape[0]
    sig = np.sqrt(np.broadcast_to(np.asarray(sigma2, dtype=float), (n,)))
    out = np.empty_like(centers)
    todo = np.arange(n)
    tries = 0
    while todo.size:
        cand = centers[todo] + sig[todo, None] * rng.standard_normal((todo.size, window.dim))
        ok = window.contains(cand)
        out[todo[ok]] = cand[ok]
        todo = todo[~ok]
        tries += 1
        if tries == 64 and todo.size:
            logz = np.array([log_normalizer(window, centers[i], sig[i] ** 2)[0] for i in todo])
            if np.any(logz < math.log(1e-12)):
                raise KernelError("degenerate kernel")
    return out


def sample_kernel_point(x, sigma2: float, window: Window, rng: np.random.Generator) -> np.ndarray:
    xs = _as_points(x, window.dim)
    if not window.contains(xs).all():
        raise KernelError("kernel centre outside window")
    if log_normalizer(window, xs, sigma2)[0] < math.log(1e-12):
        raise KernelError("degenerate kernel")
    return sample_kernel_points(xs, sigma2, window, rng)[0]
