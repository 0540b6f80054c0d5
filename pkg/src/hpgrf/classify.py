"""Reverse inference: predicting study type from foci.

The model-based classifier averages the Poisson-process likelihood of a
pattern over posterior snapshots.  Leave-one-out predictions reuse the
full-data chain with self-normalised importance weights
``w_s ∝ 1 / p(y_held_out | snapshot s)``.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import logsumexp

from .geometry import Grid, make_grid
from .procgen import INTENSITY_FLOOR, Dataset, PointPattern

__all__ = [
    "TypePosterior",
    "LoocvResult",
    "MkdaModel",
    "snapshot_loglik",
    "log_marginal",
    "predict_type",
    "loocv",
    "mkda_nbc",
    "bayes_classifier_with_ipgrf",
    "importance_weights",
    "LowEssWarning",
]

log = logging.getLogger(__name__)
ESS_MIN = 10.0


class LowEssWarning(UserWarning):
    pass


@dataclass
class TypePosterior:
    probs: np.ndarray
    log_marginals: np.ndarray
    label: str
    flags: dict = field(default_factory=dict)


def _pts(pattern) -> np.ndarray:
    return pattern.points if isinstance(pattern, PointPattern) else np.asarray(pattern, dtype=float)


def snapshot_loglik(pattern, fit, j: int) -> np.ndarray:
    """``-Lambda_j(B) + sum_i ln lambda_j(y_i)`` for every saved snapshot."""
    pts = _pts(pattern).reshape(-1, fit.window.dim)
    total = fit.type_total(j)
    if pts.shape[0] == 0:
        return -total
    lam = fit.type_intensity_at(j, pts)
    return -total + np.sum(np.log(np.maximum(lam, INTENSITY_FLOOR)), axis=1)


def importance_weights(held_out_loglik: np.ndarray) -> tuple[np.ndarray, float]:
    """Self-normalised ``w_s ∝ exp(-loglik_s)`` and its effective sample size."""
    lw = -np.asarray(held_out_loglik, dtype=float)
    lw -= logsumexp(lw)
    w = np.exp(lw)
    ess = float(1.0 / np.sum(w**2))
    return w, ess


def _log_marginal_from(ll: np.ndarray, weights: np.ndarray | None) -> float:
    if weights is None:
        return float(logsumexp(ll) - math.log(ll.size))
    with np.errstate(divide="ignore"):
        return float(logsumexp(ll + np.log(weights)))


def log_marginal(pattern, fit, j: int, exclude: PointPattern | None = None, exclude_type: int | None = None) -> tuple[float, float]:
    """Log predictive density of ``pattern`` under type ``j``.

    Parameters
    ----------
    pattern : PointPattern or (n, d) array
    fit : fitted chain (shared or independent)
    j : type index
    exclude : PointPattern, optional
        Study to remove from the posterior by importance reweighting.
    exclude_type : int, optional
        Type of the excluded study (defaults to its label).

    Returns
    -------
    (log p, ess)
        ``ess`` is the number of snapshots when nothing is excluded.
    """
    ll = snapshot_loglik(pattern, fit, j)
    weights, ess = None, float(ll.size)
    if exclude is not None:
        t = exclude_type if exclude_type is not None else fit.labels.index(exclude.type)
        if fit.shared or t == j:
            weights, ess = importance_weights(snapshot_loglik(exclude, fit, t))
            if ess < ESS_MIN:
                warnings.warn("unstable LOOCV weights", LowEssWarning, stacklevel=2)
    return _log_marginal_from(ll, weights), ess


def _posterior(logm: np.ndarray, priors: np.ndarray, labels) -> TypePosterior:
    flags = {}
    with np.errstate(divide="ignore"):
        lp = logm + np.log(priors)
    if not np.any(np.isfinite(lp)):
        probs = np.full(len(labels), 1.0 / len(labels))
        flags["underflow"] = True
    else:
        probs = np.exp(lp - logsumexp(lp))
        probs /= probs.sum()
    return TypePosterior(probs, logm, labels[int(np.argmax(probs))], flags)


def _check_priors(priors, J: int) -> np.ndarray:
    if priors is None:
        return np.full(J, 1.0 / J)
    p = np.asarray(priors, dtype=float)
    if p.shape != (J,) or np.any(p < 0):
        raise ValueError("priors must be a nonnegative vector with one entry per type")
    if abs(p.sum() - 1.0) > 1e-9:
        raise ValueError("priors must sum to 1")
    return p


def predict_type(pattern, fit, priors=None) -> TypePosterior:
    """Bayes-rule type posterior from the snapshot-averaged likelihoods."""
    p = _check_priors(priors, fit.J)
    logm = np.array([log_marginal(pattern, fit, j)[0] for j in range(fit.J)])
    return _posterior(logm, p, fit.labels)


@dataclass
class LoocvResult:
    labels: list
    confusion: np.ndarray
    rows: list
    ess: np.ndarray

    @property
    def accuracy(self) -> float:
        return float(np.trace(self.confusion) / self.confusion.sum())


def loocv(dataset: Dataset, fit, priors=None, reweight: bool = True) -> LoocvResult:
    """Leave-one-out classification of every study using importance reweighting.

    A shared (HPGRF) fit reweights every type's snapshots; independent
    per-type fits reweight only the held-out study's own type.
    """
    if list(dataset.labels) != list(fit.labels):
        raise ValueError("fit and dataset types do not match")
    p = _check_priors(priors, fit.J)
    J = fit.J
    pats = dataset.patterns
    # ll[i, j, s]: study i under type j, snapshot s
    ll = np.stack([np.stack([snapshot_loglik(pt, fit, j) for j in range(J)]) for pt in pats]) if pats else np.empty((0, J, 0))
    conf = np.zeros((J, J), dtype=np.int64)
    rows, esses = [], []
    for i, pt in enumerate(pats):
        t = dataset.type_index(pt.type)
        w, ess = importance_weights(ll[i, t]) if reweight else (None, float(ll.shape[2]))
        if reweight and ess < ESS_MIN:
            warnings.warn(f"unstable LOOCV weights (study {pt.study_id}, ESS {ess:.1f})", LowEssWarning, stacklevel=2)
        logm = np.empty(J)
        for j in range(J):
            use = w if (w is not None and (fit.shared or j == t)) else None
            logm[j] = _log_marginal_from(ll[i, j], use)
        post = _posterior(logm, p, fit.labels)
        k = fit.labels.index(post.label)
        conf[t, k] += 1
        rows.append((pt.study_id, pt.type, post.label, post.probs, ess))
        esses.append(ess)
    return LoocvResult(list(fit.labels), conf, rows, np.array(esses))


def bayes_classifier_with_ipgrf(dataset: Dataset, fits, priors=None) -> LoocvResult:
    """LOOCV with independent per-type fits."""
    if getattr(fits, "shared", True):
        raise ValueError("expected independent per-type fits")
    return loocv(dataset, fits, priors)


# ---------------------------------------------------------------- MKDA-NBC


@dataclass
class MkdaModel:
    radius: float
    grid: Grid
    labels: list
    probs: np.ndarray
    priors: np.ndarray
    counts: np.ndarray
    totals: np.ndarray

    def log_posterior(self, bmap: np.ndarray, drop: tuple | None = None) -> np.ndarray:
        """Naive-Bayes log posterior (unnormalised) of one binary map.

        ``drop = (j, bmap_j, w_j)`` removes one member map from type ``j``.
        """
        counts = self.counts.copy()
        totals = self.totals.copy()
        if drop is not None:
            j, b, w = drop
            counts[j] -= w * b
            totals[j] -= w
        prob = (counts + 1.0) / (totals[:, None] + 2.0)
        b = bmap.astype(float)
        with np.errstate(divide="ignore"):
            lp = np.log(self.priors)
        return lp + np.log(prob) @ b + np.log1p(-prob) @ (1.0 - b)


def binary_map(points, grid: Grid, radius: float) -> np.ndarray:
    """1 at inside-window grid nodes within ``radius`` of any focus."""
    nodes = grid.points
    out = np.zeros(nodes.shape[0], dtype=bool)
    pts = np.asarray(points, dtype=float).reshape(-1, grid.dim)
    if pts.shape[0] == 0:
        return out
    hits = cKDTree(nodes).query_ball_point(pts, r=radius)
    for h in hits:
        out[h] = True
    return out


def mkda_nbc(dataset: Dataset, grid: Grid | None = None, radius: float = 10.0, priors=None) -> tuple[MkdaModel, LoocvResult]:
    """MKDA binary maps + naive Bayes classifier, with leave-one-out predictions.

    Per-type activation probabilities are weighted averages of member maps
    (study weights rescaled to sum to the study count) with Laplace smoothing
    ``(count + 1) / (n_j + 2)``.
    """
    if not radius > 0:
        raise ValueError("radius must be positive")
    J = dataset.J
    p = _check_priors(priors, J)
    grid = grid if grid is not None else make_grid(dataset.window, 4.0)
    maps = [binary_map(pt.points, grid, radius) for pt in dataset.patterns]
    tidx = np.array([dataset.type_index(pt.type) for pt in dataset.patterns], dtype=int)
    raw_w = np.array([pt.weight for pt in dataset.patterns], dtype=float)
    w = np.empty_like(raw_w)
    counts = np.zeros((J, grid.points.shape[0]))
    totals = np.zeros(J)
    for j in range(J):
        sel = tidx == j
        if sel.any():
            w[sel] = raw_w[sel] * sel.sum() / raw_w[sel].sum()
            counts[j] = np.sum(np.array(maps, dtype=float)[sel] * w[sel, None], axis=0)
            totals[j] = w[sel].sum()
    probs = (counts + 1.0) / (totals[:, None] + 2.0)
    model = MkdaModel(radius, grid, list(dataset.labels), probs, p, counts, totals)
    conf = np.zeros((J, J), dtype=np.int64)
    rows = []
    for i, pt in enumerate(dataset.patterns):
        t = tidx[i]
        lp = model.log_posterior(maps[i], drop=(t, maps[i].astype(float), w[i]))
        post = _posterior(lp, np.ones(J), model.labels)
        conf[t, dataset.labels.index(post.label)] += 1
        rows.append((pt.study_id, pt.type, post.label, post.probs, float("nan")))
    return model, LoocvResult(list(dataset.labels), conf, rows, np.full(len(rows), np.nan))
