"""Gamma random fields through the inverse Levy measure construction.

A gamma field ``G ~ Ga(alpha, beta)`` is represented by its ``M`` largest
jumps.  With ``zeta_m`` the arrival times of a unit-rate Poisson process the
jump heights are ``nu_m = E1^{-1}(zeta_m / alpha(B)) / beta`` and the jump
locations are i.i.d. from the normalised base measure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .geometry import Window

__all__ = [
    "EULER_GAMMA",
    "exp_integral_e1",
    "inv_e1",
    "BaseMeasure",
    "JumpSet",
    "log_gamma_variates",
    "sample_parent_field",
    "sample_child_heights",
    "levy_log_density",
    "truncation_error",
]

EULER_GAMMA = 0.57721566490153286060651209


class JumpOrderError(ValueError):
    pass


def exp_integral_e1(t):
    """Exponential integral ``E1(t) = int_t^inf exp(-u)/u du`` for ``t > 0``.

    Thin wrapper over :func:`scipy.special.exp1` with a domain check; it
    underflows to 0 for ``t`` beyond roughly 740.
    """
    if isinstance(t, float):
        if not t > 0:
            raise ValueError("exp_integral_e1: domain error, t must be > 0")
        return float(special.exp1(t))
    arr = np.asarray(t, dtype=float)
    if np.any(~(arr > 0)):
        raise ValueError("exp_integral_e1: domain error, t must be > 0")
    out = special.exp1(arr)
    return float(out) if np.ndim(t) == 0 else out


def inv_e1(u):
    """Inverse of :func:`exp_integral_e1` for ``u > 0``.

    Safeguarded Newton iteration on ``ln E1(exp(s)) = ln u`` in ``s = ln t``
    inside the bracket ``-gamma - u < s <= ln(max(1, -ln u) + 1)``.
    Beyond ``u`` of about 708 the root is below the smallest positive double
    and the result saturates at ``numpy.finfo(float).tiny``.
    """
    arr = np.asarray(u, dtype=float)
    if np.any(~(arr > 0)):
        raise ValueError("inv_e1: domain error, u must be > 0")
    uu = arr.ravel()
    logu = np.log(uu)
    s_lo = -EULER_GAMMA - uu
    s_hi = np.log(np.maximum(1.0, -logu) + 1.0)
    # initial guesses from the two asymptotic regimes
    s = np.where(uu > 1.0, -EULER_GAMMA - uu, np.log(np.maximum(-logu - np.log1p(np.maximum(-logu, 0)), 0.5)))
    s = np.clip(s, s_lo, s_hi)
    for _ in range(100):
        t = np.exp(s)
        e1 = np.maximum(exp_integral_e1(np.maximum(t, 1e-320)), 1e-320)
        f = np.log(e1) - logu
        # f is decreasing in s: shrink the bracket
        s_lo = np.where(f > 0, s, s_lo)
        s_hi = np.where(f <= 0, s, s_hi)
        with np.errstate(over="ignore", under="ignore"):
            slope = -np.exp(-t) / e1
        step = np.where(slope < 0, -f / np.where(slope < 0, slope, -1.0), 0.0)
        s_new = s + step
        bad = ~np.isfinite(s_new) | (s_new <= s_lo) | (s_new >= s_hi) | (slope == 0)
        s_new = np.where(bad, 0.5 * (s_lo + s_hi), s_new)
        done = np.abs(s_new - s) <= 1e-15 * np.maximum(1.0, np.abs(s))
        s = s_new
        if done.all():
            break
    with np.errstate(under="ignore"):
        out = np.maximum(np.exp(s), np.finfo(float).tiny).reshape(arr.shape)
    return float(out) if np.ndim(u) == 0 else out


@dataclass
class BaseMeasure:
    """Uniform base measure with total mass ``total`` on ``window``."""

    window: Window
    total: float

    def __post_init__(self):
        if not self.total > 0:
            raise ValueError("base measure total mass must be positive")

    @property
    def normalized_density(self) -> float:
        return 1.0 / self.window.volume()

    @property
    def density(self) -> float:
        return self.total / self.window.volume()

    def mass(self, region_volume: float) -> float:
        return self.total * region_volume / self.window.volume()


@dataclass
class JumpSet:
    """Truncated gamma field: locations, parent heights and child heights.

    ``log_mu`` has shape ``(J, M)``; child heights are kept in log space
    because the smallest parent jumps make them underflow.
    """

    locations: np.ndarray
    heights: np.ndarray
    log_mu: np.ndarray | None = None
    beta: float = 1.0
    tau: float = 1.0
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.locations = np.atleast_2d(np.asarray(self.locations, dtype=float))
        self.heights = np.asarray(self.heights, dtype=float).ravel()
        if self.log_mu is not None:
            self.log_mu = np.atleast_2d(np.asarray(self.log_mu, dtype=float))

    @property
    def M(self) -> int:
        return self.heights.size

    @property
    def J(self) -> int:
        return 0 if self.log_mu is None else self.log_mu.shape[0]

    @property
    def mu(self) -> np.ndarray:
        with np.errstate(under="ignore"):
            return np.exp(self.log_mu)

    def check_order(self) -> None:
        if self.M and (np.any(self.heights <= 0) or np.any(np.diff(self.heights) >= 0)):
            raise JumpOrderError("invalid jump ordering")

    def copy(self) -> JumpSet:
        return JumpSet(
            self.locations.copy(),
            self.heights.copy(),
            None if self.log_mu is None else self.log_mu.copy(),
            self.beta,
            self.tau,
        )


def log_gamma_variates(shape, rate, rng: np.random.Generator) -> np.ndarray:
    """``log X`` for ``X ~ Gamma(shape, rate)``, stable for tiny shapes.

    Shapes below one use ``X = Y U^{1/shape}`` with ``Y ~ Gamma(shape + 1)``.
    """
    shape = np.asarray(shape, dtype=float)
    rate = np.broadcast_to(np.asarray(rate, dtype=float), shape.shape)
    small = shape < 1.0
    g = rng.standard_gamma(np.where(small, shape + 1.0, shape))
    out = np.log(g) - np.log(rate)
    if small.any():
        u = rng.uniform(size=shape.shape)
        out = np.where(small, out + np.log(u) / np.where(small, shape, 1.0), out)
    return out


def sample_parent_field(base: BaseMeasure, beta: float, M: int, rng: np.random.Generator) -> JumpSet:
    """First ``M`` jumps of ``G0 ~ Ga(base, beta)`` in decreasing height order."""
    if M < 1:
        raise ValueError("M must be >= 1")
    if not beta > 0:
        raise ValueError("beta must be positive")
    zeta = np.cumsum(rng.exponential(size=M))
    heights = inv_e1(zeta / base.total) / beta
    locations = base.window.sample_uniform(rng, M)
    return JumpSet(locations, heights, None, beta=beta)


def sample_child_heights(parent: JumpSet, tau: float, J: int, rng: np.random.Generator) -> np.ndarray:
    """``log mu_{j,m}`` with ``mu_{j,m} ~ Gamma(nu_m, tau)`` independently."""
    if not tau > 0:
        raise ValueError("tau must be positive")
    shape = np.broadcast_to(parent.heights, (J, parent.M))
    return log_gamma_variates(shape, tau, rng)


def levy_log_density(jumps: JumpSet, base: BaseMeasure, beta: float) -> float:
    """Unnormalised log density of the ordered jumps ``{(theta_m, nu_m)}``.

    ``-alpha(B) E1(beta nu_M) + sum_m [-ln nu_m - beta nu_m + ln a(theta_m)]``
    with ``a`` the normalised base density.
    """
    jumps.check_order()
    nu = jumps.heights
    boundary = base.total * exp_integral_e1(beta * nu[-1])
    return float(-boundary + np.sum(-np.log(nu) - beta * nu) + nu.size * math.log(base.normalized_density))


def truncation_error(jumps: JumpSet, base: BaseMeasure | None = None, beta: float | None = None) -> float:
    """Expected mass of the discarded jumps relative to the expected total.

    The Levy mass below the smallest kept height is
    ``alpha(B) int_0^{nu_M} exp(-beta v) dv = alpha(B) (1 - exp(-beta nu_M)) / beta``;
    dividing by ``alpha(B) / beta`` gives ``1 - exp(-beta nu_M)``.
    """
    if jumps.M < 2:
        raise ValueError("truncation_error needs M >= 2")
    b = jumps.beta if beta is None else beta
    return float(-math.expm1(-b * jumps.heights[-1]))
