"""Select the compiled kernels when built, else the numpy versions.

Set ``HPGRF_PURE_PYTHON=1`` to force the fallback.
"""

import os

import numpy as np

from . import _fallback

BACKEND = "python"
_impl = _fallback
if not os.environ.get("HPGRF_PURE_PYTHON"):
    try:
        from . import _core as _impl  # noqa: F811

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _fallback


def _module(impl):
    if impl is None:
        return _impl
    if impl == "python":
        return _fallback
    if impl == "cython":
        from . import _core

        return _core
    return impl


def sample_assignments(points, types, theta, logw, inv2s2, u, impl=None):
    """Draw one jump index per focus with ``P(m) ∝ exp(logw[j, m] - |y - theta_m|^2 inv2s2[j])``.

    Returns the indices and the number of foci whose weights all underflowed
    (those are sent to their nearest jump).
    """
    mod = _module(impl)
    return mod.sample_assignments(
        np.ascontiguousarray(points, dtype=np.float64),
        np.ascontiguousarray(types, dtype=np.int64),
        np.ascontiguousarray(theta, dtype=np.float64),
        np.ascontiguousarray(logw, dtype=np.float64),
        np.ascontiguousarray(inv2s2, dtype=np.float64),
        np.ascontiguousarray(u, dtype=np.float64),
    )


def kernel_sums(points, theta, weights, inv2s2, impl=None):
    """``sum_m weights[m] exp(-|y - theta_m|^2 inv2s2)`` at every point."""
    mod = _module(impl)
    return mod.kernel_sums(
        np.ascontiguousarray(points, dtype=np.float64),
        np.ascontiguousarray(theta, dtype=np.float64),
        np.ascontiguousarray(weights, dtype=np.float64),
        float(inv2s2),
    )


def pair_counts(points, w, radii, impl=None):
    """``sum_{i != k} 1[|y_i - y_k| <= r] w_i w_k`` for each radius (sorted ascending)."""
    mod = _module(impl)
    return mod.pair_counts(
        np.ascontiguousarray(points, dtype=np.float64),
        np.ascontiguousarray(w, dtype=np.float64),
        np.ascontiguousarray(radii, dtype=np.float64),
    )
