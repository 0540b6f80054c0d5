"""Point patterns, datasets and generative samplers (Poisson, HPGRF, Thomas)."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from . import _accel
from .geometry import IntensityGrid, Window, _as_points
from .kernel import log_normalizer, sample_kernel_points
from .randfield import BaseMeasure, JumpSet, sample_child_heights, sample_parent_field

__all__ = [
    "PointPattern",
    "Dataset",
    "JumpIntensity",
    "ThomasComponent",
    "ThomasConfig",
    "table1_config",
    "sample_poisson",
    "sample_hpgrf",
    "sample_thomas",
    "thomas_dataset",
    "DataError",
    "GridIntensity",
    "log_likelihood",
    "INTENSITY_FLOOR",
]

INTENSITY_FLOOR = 1e-12


class DataError(ValueError):
    pass


@dataclass
class PointPattern:
    """Foci reported by one study of one type."""

    study_id: str
    type: str
    points: np.ndarray
    weight: float = 1.0

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.size == 0:
            pts = pts.reshape(0, pts.shape[1] if pts.ndim == 2 else 2)
        self.points = np.atleast_2d(pts)

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass
class Dataset:
    window: Window
    labels: list
    patterns: list = field(default_factory=list)

    def __post_init__(self):
        self.labels = list(self.labels)
        for p in self.patterns:
            if p.type not in self.labels:
                raise DataError(f"unknown type label {p.type!r}")
            if len(p) and p.points.shape[1] != self.window.dim:
                raise DataError("pattern dimension does not match the window")

    @property
    def J(self) -> int:
        return len(self.labels)

    def type_index(self, label: str) -> int:
        return self.labels.index(label)

    def patterns_of(self, j: int) -> list:
        lab = self.labels[j]
        return [p for p in self.patterns if p.type == lab]

    @property
    def n_studies(self) -> np.ndarray:
        return np.array([len(self.patterns_of(j)) for j in range(self.J)], dtype=np.int64)

    def pooled(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """All foci stacked, with their type index and pattern index."""
        d = self.window.dim
        pts, types, owner = [np.empty((0, d))], [], []
        for i, p in enumerate(self.patterns):
            pts.append(p.points.reshape(-1, d))
            types.append(np.full(len(p), self.type_index(p.type), dtype=np.int64))
            owner.append(np.full(len(p), i, dtype=np.int64))
        cat = lambda xs: np.concatenate(xs) if xs else np.empty(0, dtype=np.int64)  # noqa: E731
        return np.vstack(pts), cat(types), cat(owner)

    def subset(self, keep: list) -> Dataset:
        return Dataset(self.window, self.labels, [self.patterns[i] for i in keep])

    def only_type(self, j: int) -> Dataset:
        return Dataset(self.window, [self.labels[j]], self.patterns_of(j))

    @property
    def n_foci(self) -> int:
        return int(sum(len(p) for p in self.patterns))


# ---------------------------------------------------------------- intensities


class JumpIntensity:
    """``lambda(y) = sum_m mu_m k_{s2}(y, theta_m)`` for one type of a jump set."""

    def __init__(self, locations, mu, sigma2: float, window: Window):
        self.locations = np.atleast_2d(np.asarray(locations, dtype=float))
        self.mu = np.asarray(mu, dtype=float).ravel()
        self.sigma2 = float(sigma2)
        self.window = window
        self._logz = log_normalizer(window, self.locations, self.sigma2)

    @classmethod
    def from_jumps(cls, jumps: JumpSet, j: int, sigma2: float, window: Window) -> JumpIntensity:
        return cls(jumps.locations, jumps.mu[j], sigma2, window)

    def total(self) -> float:
        return float(self.mu.sum())

    def at(self, points) -> np.ndarray:
        pts = _as_points(points, self.window.dim)
        d = self.window.dim
        coef = (2 * math.pi * self.sigma2) ** (-d / 2)
        weights = self.mu * np.exp(-self._logz) * coef
        return _accel.kernel_sums(pts, self.locations, weights, 0.5 / self.sigma2)

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        total = self.total()
        if not np.isfinite(total):
            raise DataError("non-finite intensity mass")
        n = rng.poisson(total) if total > 0 else 0
        if n == 0:
            return np.empty((0, self.window.dim))
        # kernel mass over the window is 1, so jump m is chosen with prob mu_m / total
        counts = rng.multinomial(n, self.mu / total)
        centers = np.repeat(self.locations, counts, axis=0)
        return sample_kernel_points(centers, self.sigma2, self.window, rng)


class GridIntensity:
    """Adapter giving an :class:`IntensityGrid` the sampling interface."""

    def __init__(self, ig: IntensityGrid):
        self.ig = ig
        self.window = ig.grid.window

    def total(self) -> float:
        return self.ig.total()

    def at(self, points) -> np.ndarray:
        return self.ig.at(points)

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        # thinning of a homogeneous process on the bounding box
        vals = self.ig.values[self.ig.grid.inside]
        if vals.size == 0 or vals.max() <= 0:
            return np.empty((0, self.window.dim))
        env = vals.max() * 1.001
        if not np.isfinite(env):
            raise DataError("non-finite intensity mass")
        box = float(np.prod(self.window.hi - self.window.lo))
        n = rng.poisson(env * box)
        cand = rng.uniform(self.window.lo, self.window.hi, size=(n, self.window.dim))
        cand = cand[self.window.contains(cand)]
        keep = rng.uniform(size=cand.shape[0]) * env < self.at(cand)
        return cand[keep]


def sample_poisson(intensity, window: Window | None = None, rng: np.random.Generator | None = None) -> np.ndarray:
    """One Poisson pattern from a jump-set or grid intensity."""
    if isinstance(intensity, IntensityGrid):
        intensity = GridIntensity(intensity)
    return intensity.sample(rng)


# ---------------------------------------------------------------- HPGRF


def sample_hpgrf(
    window: Window,
    n_per_type,
    alpha_total: float,
    beta: float,
    tau: float,
    sigma2,
    M: int,
    rng: np.random.Generator,
    labels=None,
) -> tuple[Dataset, JumpSet]:
    """Forward draw of the three-level hierarchy.

    Returns the dataset and the latent jump set (parents and child heights).
    """
    n_per_type = np.atleast_1d(n_per_type).astype(int)
    J = n_per_type.size
    sigma2 = np.broadcast_to(np.asarray(sigma2, dtype=float), (J,))
    if min(alpha_total, beta, tau) <= 0 or np.any(sigma2 <= 0):
        raise ValueError("hyperparameters must be positive")
    labels = list(labels) if labels is not None else [f"type{j + 1}" for j in range(J)]
    jumps = sample_parent_field(BaseMeasure(window, alpha_total), beta, M, rng)
    jumps.tau = tau
    jumps.log_mu = sample_child_heights(jumps, tau, J, rng)
    patterns = []
    for j in range(J):
        lam = JumpIntensity.from_jumps(jumps, j, sigma2[j], window)
        for i in range(n_per_type[j]):
            patterns.append(PointPattern(f"{labels[j]}_{i + 1}", labels[j], lam.sample(rng)))
    return Dataset(window, labels, patterns), jumps


# ---------------------------------------------------------------- Thomas


@dataclass
class ThomasComponent:
    count: float
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float)
        self.cov = np.asarray(self.cov, dtype=float)
        if self.count <= 0:
            raise ValueError("component count must be positive")
        np.linalg.cholesky(self.cov)


@dataclass
class ThomasConfig:
    """Modified Thomas intensities ``lambda_j = eps + sum_k theta_k phi(x; m_k, S_k)``.

    ``types[j]`` lists the component indices present in type ``j``.
    """

    components: list
    eps: float
    types: list

    def __post_init__(self):
        if self.eps < 0:
            raise ValueError("background must be nonnegative")

    @property
    def J(self) -> int:
        return len(self.types)

    def intensity(self, j: int, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.full(pts.shape[0], self.eps)
        d = pts.shape[1]
        for k in self.types[j]:
            c = self.components[k]
            diff = pts - c.mean
            prec = np.linalg.inv(c.cov)
            q = np.einsum("ni,ij,nj->n", diff, prec, diff)
            norm = (2 * math.pi) ** (-d / 2) / math.sqrt(np.linalg.det(c.cov))
            out += c.count * norm * np.exp(-0.5 * q)
        return out

    def expected_count(self, j: int, window: Window) -> float:
        """Expected pattern size, using the component mass inside a box window."""
        total = self.eps * window.volume()
        for k in self.types[j]:
            c = self.components[k]
            sd = np.sqrt(np.diag(c.cov))
            # independent-axis approximation is exact only for diagonal covariances
            mass = np.prod(special.ndtr((window.hi - c.mean) / sd) - special.ndtr((window.lo - c.mean) / sd))
            total += c.count * mass
        return float(total)


TABLE1_MEANS = [(10, 20), (70, 30), (40, 50), (60, 75)]
TABLE1_COVS = [
    [[30, 15], [15, 15]],
    [[30, -10], [-10, 40]],
    [[20, -5], [-5, 10]],
    [[10, 5], [5, 20]],
]
TABLE1_COUNTS = (15, 10, 5, 10)
# component indices (0-based) per type: type 1 -> {2,3}, type 2 -> {2,4}, type 3 -> {1,2,3}
TABLE1_TYPES = [[1, 2], [1, 3], [0, 1, 2]]


def table1_config(counts=TABLE1_COUNTS, eps: float = 0.001) -> ThomasConfig:
    """The three-type simulation-study configuration on ``[0, 100]^2``.

    The intensity formulas are taken as ground truth: region 3 enters types 1
    and 3, region 4 enters type 2.
    """
    comps = [ThomasComponent(c, m, s) for c, m, s in zip(counts, TABLE1_MEANS, TABLE1_COVS)]
    return ThomasConfig(comps, eps, [list(t) for t in TABLE1_TYPES])


def sample_thomas(config: ThomasConfig, j: int, window: Window, rng: np.random.Generator) -> np.ndarray:
    """Poisson draw with the type-``j`` Thomas intensity restricted to the window."""
    pts = [window.sample_uniform(rng, rng.poisson(config.eps * window.volume()))]
    for k in config.types[j]:
        c = config.components[k]
        n = rng.poisson(c.count)
        draw = rng.multivariate_normal(c.mean, c.cov, size=n) if n else np.empty((0, window.dim))
        pts.append(draw[window.contains(draw)] if n else draw)
    return np.vstack(pts)


def thomas_dataset(config: ThomasConfig, n_per_type: int, window: Window, rng: np.random.Generator, labels=None) -> Dataset:
    labels = list(labels) if labels is not None else [f"type{j + 1}" for j in range(config.J)]
    pats = []
    for j in range(config.J):
        for i in range(n_per_type):
            pats.append(PointPattern(f"{labels[j]}_{i + 1}", labels[j], sample_thomas(config, j, window, rng)))
    return Dataset(window, labels, pats)


# ---------------------------------------------------------------- likelihood


def log_likelihood(pattern, intensity, window: Window | None = None) -> float:
    """Poisson log-likelihood ``-Lambda(B) + sum_i ln lambda(y_i)`` (floored at 1e-12)."""
    pts = pattern.points if isinstance(pattern, PointPattern) else np.asarray(pattern, dtype=float)
    if isinstance(intensity, IntensityGrid):
        intensity = GridIntensity(intensity)
    win = window or intensity.window
    pts = pts.reshape(-1, win.dim)
    if pts.shape[0] and not win.contains(pts).all():
        raise DataError("point outside window")
    lam = intensity.at(pts) if pts.shape[0] else np.empty(0)
    return float(-intensity.total() + np.sum(np.log(np.maximum(lam, INTENSITY_FLOOR))))
