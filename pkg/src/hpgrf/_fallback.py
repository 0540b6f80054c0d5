"""Numpy implementations of the hot loops; used when the extension is absent."""

import numpy as np

_CHUNK = 256


def sample_assignments(points, types, theta, logw, inv2s2, u):
    n = points.shape[0]
    out = np.empty(n, dtype=np.int64)
    nfallback = 0
    for start in range(0, n, _CHUNK):
        sl = slice(start, start + _CHUNK)
        y = points[sl]
        t = types[sl]
        d2 = np.sum(y * y, axis=1)[:, None] - 2.0 * y @ theta.T + np.sum(theta * theta, axis=1)[None, :]
        np.maximum(d2, 0.0, out=d2)
        logits = logw[t] - d2 * inv2s2[t][:, None]
        top = logits.max(axis=1)
        bad = ~np.isfinite(top)
        if bad.any():
            nfallback += int(bad.sum())
            logits[bad] = -d2[bad]
            top[bad] = logits[bad].max(axis=1)
        with np.errstate(under="ignore"):
            w = np.exp(logits - top[:, None])
        cum = np.cumsum(w, axis=1)
        target = u[sl] * cum[:, -1]
        idx = (cum <= target[:, None]).sum(axis=1)
        out[sl] = np.minimum(idx, theta.shape[0] - 1)
    return out, nfallback


def kernel_sums(points, theta, weights, inv2s2):
    n = points.shape[0]
    out = np.empty(n)
    tt = np.sum(theta * theta, axis=1)
    for start in range(0, n, _CHUNK):
        y = points[start:start + _CHUNK]
        d2 = np.sum(y * y, axis=1)[:, None] - 2.0 * y @ theta.T + tt[None, :]
        np.maximum(d2, 0.0, out=d2)
        with np.errstate(under="ignore"):
            out[start:start + _CHUNK] = np.exp(-d2 * inv2s2) @ weights
    return out


def pair_counts(points, w, radii):
    n = points.shape[0]
    out = np.zeros(radii.shape[0])
    if n < 2:
        return out
    iu, ju = np.triu_indices(n, k=1)
    d = np.sqrt(np.sum((points[iu] - points[ju]) ** 2, axis=1))
    ww = w[iu] * w[ju]
    order = np.argsort(d, kind="stable")
    cum = np.concatenate([[0.0], np.cumsum(ww[order])])
    k = np.searchsorted(d[order], radii, side="right")
    return 2.0 * cum[k]
