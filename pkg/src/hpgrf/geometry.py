"""Observation windows, sub-regions and evaluation lattices.

Boxes are min-inclusive and max-exclusive on every axis; masks are made of
half-open voxels.  Both conventions make disjoint partitions exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import special, stats

__all__ = [
    "Window",
    "BoxWindow",
    "MaskWindow",
    "Region",
    "SubBox",
    "Ellipsoid",
    "VoxelSet",
    "Grid",
    "IntensityGrid",
    "make_grid",
    "volume",
    "contains",
]


class GeometryError(ValueError):
    pass


def _as_points(points, dim: int) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[None, :]
    if pts.ndim != 2 or pts.shape[1] != dim:
        raise GeometryError(
            f"dimension mismatch: expected points of dimension {dim}, got shape {np.shape(points)}"
        )
    return pts


class Window:
    """Bounded observation region.  Subclasses define membership and volume."""

    dim: int
    lo: np.ndarray
    hi: np.ndarray

    def volume(self) -> float:
        raise NotImplementedError

    def contains(self, points) -> np.ndarray:
        raise NotImplementedError

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(self.hi - self.lo))

    def sample_uniform(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Uniform points by rejection from the bounding box."""
        out = np.empty((0, self.dim))
        frac = self.volume() / float(np.prod(self.hi - self.lo))
        while out.shape[0] < n:
            need = n - out.shape[0]
            batch = int(need / frac * 1.2) + 16
            cand = rng.uniform(self.lo, self.hi, size=(batch, self.dim))
            out = np.vstack([out, cand[self.contains(cand)]])
        return out[:n]


class BoxWindow(Window):
    def __init__(self, lo, hi):
        self.lo = np.asarray(lo, dtype=float).ravel()
        self.hi = np.asarray(hi, dtype=float).ravel()
        if self.lo.shape != self.hi.shape or self.lo.size not in (2, 3):
            raise GeometryError("box bounds must both have length 2 or 3")
        if np.any(self.lo >= self.hi):
            raise GeometryError("box requires min < max on every axis")
        self.dim = self.lo.size
        self.kind = "box"

    def volume(self) -> float:
        return float(np.prod(self.hi - self.lo))

    def contains(self, points) -> np.ndarray:
        pts = _as_points(points, self.dim)
        return np.all((pts >= self.lo) & (pts < self.hi), axis=1)

    def sample_uniform(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.uniform(self.lo, self.hi, size=(n, self.dim))

    def __repr__(self) -> str:
        return f"BoxWindow(lo={self.lo.tolist()}, hi={self.hi.tolist()})"

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, BoxWindow)
            and np.array_equal(self.lo, other.lo)
            and np.array_equal(self.hi, other.hi)
        )


class MaskWindow(Window):
    """Voxel mask.  ``occupancy`` is indexed ``[ix, iy(, iz)]``."""

    def __init__(self, occupancy, origin, voxel):
        occ = np.asarray(occupancy).astype(bool)
        if occ.ndim not in (2, 3):
            raise GeometryError("mask must be 2D or 3D")
        if not occ.any():
            raise GeometryError("empty window")
        self.occupancy = occ
        self.dim = occ.ndim
        self.origin = np.asarray(origin, dtype=float).ravel()
        self.voxel = np.asarray(voxel, dtype=float).ravel()
        if self.origin.size != self.dim or self.voxel.size != self.dim:
            raise GeometryError("origin and voxel size must match the mask dimension")
        if np.any(self.voxel <= 0):
            raise GeometryError("voxel size must be positive")
        self.lo = self.origin.copy()
        self.hi = self.origin + self.voxel * np.array(occ.shape)
        self.kind = "mask"

    @property
    def shape(self) -> tuple:
        return self.occupancy.shape

    def volume(self) -> float:
        return float(self.occupancy.sum() * np.prod(self.voxel))

    def voxel_index(self, points) -> tuple[np.ndarray, np.ndarray]:
        pts = _as_points(points, self.dim)
        idx = np.floor((pts - self.origin) / self.voxel).astype(np.int64)
        ok = np.all((idx >= 0) & (idx < np.array(self.shape)), axis=1)
        return idx, ok

    def contains(self, points) -> np.ndarray:
        idx, ok = self.voxel_index(points)
        out = np.zeros(idx.shape[0], dtype=bool)
        good = idx[ok]
        out[ok] = self.occupancy[tuple(good.T)]
        return out

    def voxel_centers(self) -> np.ndarray:
        idx = np.argwhere(self.occupancy)
        return self.origin + (idx + 0.5) * self.voxel

    def sample_uniform(self, rng: np.random.Generator, n: int) -> np.ndarray:
        idx = np.argwhere(self.occupancy)
        pick = idx[rng.integers(0, idx.shape[0], size=n)]
        return self.origin + (pick + rng.uniform(size=(n, self.dim))) * self.voxel

    def __repr__(self) -> str:
        return f"MaskWindow(shape={self.shape}, origin={self.origin.tolist()}, voxel={self.voxel.tolist()})"


# ---------------------------------------------------------------- regions


@dataclass
class Region:
    """Sub-region of a window; membership always implies window membership."""

    label: str
    window: Window

    @property
    def dim(self) -> int:
        return self.window.dim

    def _predicate(self, pts: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def contains(self, points) -> np.ndarray:
        pts = _as_points(points, self.dim)
        return self._predicate(pts) & self.window.contains(pts)

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        return self.window.lo.copy(), self.window.hi.copy()

    def volume(self, spacing: float | None = None) -> float:
        return _quadrature_volume(self, spacing)


@dataclass
class SubBox(Region):
    lo: np.ndarray = field(default=None)
    hi: np.ndarray = field(default=None)

    def __post_init__(self):
        self.lo = np.asarray(self.lo, dtype=float)
        self.hi = np.asarray(self.hi, dtype=float)
        if np.any(self.lo >= self.hi):
            raise GeometryError("sub-box requires min < max on every axis")

    def _predicate(self, pts):
        return np.all((pts >= self.lo) & (pts < self.hi), axis=1)

    def clipped(self) -> tuple[np.ndarray, np.ndarray]:
        return np.maximum(self.lo, self.window.lo), np.minimum(self.hi, self.window.hi)

    def bounding_box(self):
        return self.clipped()

    def volume(self, spacing: float | None = None) -> float:
        if isinstance(self.window, BoxWindow):
            lo, hi = self.clipped()
            return float(np.prod(np.clip(hi - lo, 0.0, None)))
        return _quadrature_volume(self, spacing)


@dataclass
class Ellipsoid(Region):
    """``{x : (x-c)' S^{-1} (x-c) <= chi2_d(level)}`` intersected with the window."""

    center: np.ndarray = field(default=None)
    cov: np.ndarray = field(default=None)
    level: float = 0.95

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float)
        self.cov = np.asarray(self.cov, dtype=float)
        if self.cov.shape != (self.dim, self.dim):
            raise GeometryError("ellipsoid covariance has the wrong shape")
        self._prec = np.linalg.inv(self.cov)
        self.radius2 = float(stats.chi2.ppf(self.level, df=self.dim))

    def _predicate(self, pts):
        diff = pts - self.center
        q = np.einsum("ni,ij,nj->n", diff, self._prec, diff)
        return q <= self.radius2

    def bounding_box(self):
        half = np.sqrt(self.radius2 * np.diag(self.cov))
        lo = np.maximum(self.center - half, self.window.lo)
        hi = np.minimum(self.center + half, self.window.hi)
        return lo, hi

    def analytic_volume(self) -> float:
        d = self.dim
        unit_ball = np.pi ** (d / 2) / special.gamma(d / 2 + 1)
        return float(unit_ball * self.radius2 ** (d / 2) * np.sqrt(np.linalg.det(self.cov)))

    def volume(self, spacing: float | None = None) -> float:
        half = np.sqrt(self.radius2 * np.diag(self.cov))
        inside = np.all(self.center - half >= self.window.lo) and np.all(
            self.center + half < self.window.hi
        )
        if inside and isinstance(self.window, BoxWindow):
            return self.analytic_volume()
        return _quadrature_volume(self, spacing)


@dataclass
class VoxelSet(Region):
    """Explicit set of voxel indices of a mask window."""

    indices: np.ndarray = field(default=None)

    def __post_init__(self):
        if not isinstance(self.window, MaskWindow):
            raise GeometryError("voxel-set regions need a mask window")
        idx = np.asarray(self.indices, dtype=np.int64).reshape(-1, self.dim)
        self._sel = np.zeros(self.window.shape, dtype=bool)
        self._sel[tuple(idx.T)] = True
        self._sel &= self.window.occupancy

    def _predicate(self, pts):
        idx, ok = self.window.voxel_index(pts)
        out = np.zeros(pts.shape[0], dtype=bool)
        out[ok] = self._sel[tuple(idx[ok].T)]
        return out

    def volume(self, spacing: float | None = None) -> float:
        return float(self._sel.sum() * np.prod(self.window.voxel))


def _quadrature_volume(region: Region, spacing: float | None) -> float:
    lo, hi = region.bounding_box()
    if np.any(hi <= lo):
        return 0.0
    if spacing is None:
        spacing = float(np.min(hi - lo)) / 400.0
        if isinstance(region.window, MaskWindow):
            spacing = min(spacing, float(np.min(region.window.voxel)) / 4.0)
    n = np.maximum(np.ceil((hi - lo) / spacing).astype(int), 1)
    h = (hi - lo) / n
    axes = [lo[a] + (np.arange(n[a]) + 0.5) * h[a] for a in range(region.dim)]
    total = 0
    # slab-wise over the first axis keeps memory bounded
    rest = np.stack(np.meshgrid(*axes[1:], indexing="ij"), axis=-1).reshape(-1, region.dim - 1)
    for x0 in axes[0]:
        pts = np.column_stack([np.full(rest.shape[0], x0), rest])
        total += int(region.contains(pts).sum())
    return float(total * np.prod(h))


def volume(obj, spacing: float | None = None) -> float:
    """Lebesgue measure of a window or region (mm^d)."""
    return obj.volume() if isinstance(obj, Window) else obj.volume(spacing)


def contains(obj, point) -> np.ndarray | bool:
    """Membership test; a single point returns a bool."""
    res = obj.contains(point)
    if np.ndim(point) == 1:
        return bool(res[0])
    return res


# ---------------------------------------------------------------- lattices


@dataclass
class Grid:
    """Regular lattice of cell centres over a window's bounding box.

    ``inside`` flags the centres that fall in the window; only those carry
    quadrature weight.
    """

    window: Window
    axes: list
    spacing: np.ndarray

    def __post_init__(self):
        mesh = np.meshgrid(*self.axes, indexing="ij")
        self._all = np.stack(mesh, axis=-1).reshape(-1, self.window.dim)
        self.inside = self.window.contains(self._all).reshape(self.shape)
        if not self.inside.any():
            raise GeometryError("grid has no point inside the window")

    @property
    def shape(self) -> tuple:
        return tuple(len(a) for a in self.axes)

    @property
    def dim(self) -> int:
        return self.window.dim

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def all_points(self) -> np.ndarray:
        return self._all

    @property
    def points(self) -> np.ndarray:
        return self._all[self.inside.ravel()]

    @property
    def edges(self) -> list:
        return [
            np.append(ax - h / 2, ax[-1] + h / 2) for ax, h in zip(self.axes, self.spacing)
        ]

    def integrate(self, values, where=None) -> float:
        """Midpoint rule over the window (optionally restricted by a boolean lattice)."""
        v = np.asarray(values, dtype=float).reshape(self.shape)
        sel = self.inside if where is None else (self.inside & where.reshape(self.shape))
        return float(v[sel].sum() * self.cell_volume)

    def region_mask(self, region: Region) -> np.ndarray:
        return region.contains(self._all).reshape(self.shape)

    def scatter(self, inside_values) -> np.ndarray:
        """Inside-point values -> full lattice (zero outside the window)."""
        out = np.zeros(self.shape)
        out[self.inside] = inside_values
        return out


def make_grid(window: Window, spacing: float | None = None) -> Grid:
    """Cell-centred lattice.  Mask windows default to their own voxel lattice.

    The requested spacing is adjusted per axis so cells tile the bounding box.
    """
    lo, hi = window.lo, window.hi
    if spacing is None:
        if isinstance(window, MaskWindow):
            spacing = window.voxel
        else:
            spacing = float(np.min(hi - lo)) / 50.0
    spacing = np.broadcast_to(np.asarray(spacing, dtype=float), (window.dim,))
    if np.any(spacing <= 0):
        raise GeometryError("grid spacing must be positive")
    n = np.maximum(np.round((hi - lo) / spacing).astype(int), 1)
    h = (hi - lo) / n
    axes = [lo[a] + (np.arange(n[a]) + 0.5) * h[a] for a in range(window.dim)]
    return Grid(window, axes, h)


@dataclass
class IntensityGrid:
    """Intensity values (expected foci per mm^d per study) on a lattice."""

    grid: Grid
    values: np.ndarray
    label: str = ""

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(self.grid.shape)

    def total(self) -> float:
        return self.grid.integrate(self.values)

    def at(self, points) -> np.ndarray:
        """Multilinear interpolation, clamped to the lattice."""
        from scipy.interpolate import RegularGridInterpolator

        pts = _as_points(points, self.grid.dim)
        lo = np.array([ax[0] for ax in self.grid.axes])
        hi = np.array([ax[-1] for ax in self.grid.axes])
        interp = RegularGridInterpolator(self.grid.axes, self.values, bounds_error=False)
        return interp(np.clip(pts, lo, hi))
