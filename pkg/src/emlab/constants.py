"""Closed-form constants for isotropic stable noise and its Pareto surrogate.

All functions are pure and cheap.  The gamma function comes from :mod:`math`
(relative error well below 1e-13 on the arguments used here).
"""

from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class StableParams:
    """Dimension ``d`` and stability index ``alpha`` in (0, 2]."""

    d: int
    alpha: float

    def __post_init__(self):
        if not isinstance(self.d, int) or isinstance(self.d, bool) or self.d < 1:
            raise ValueError(f"dimension must be a positive integer, got {self.d!r}")
        if not 0.0 < self.alpha <= 2.0:
            raise ValueError(f"alpha must lie in (0, 2], got {self.alpha!r}")

    @property
    def is_brownian(self) -> bool:
        return self.alpha == 2.0


@dataclass(frozen=True)
class ConstantSet:
    """Evaluated constants for one ``(d, alpha)`` pair.

    ``k_heat`` is the two-sided heat-kernel constant K(d, alpha).  It is not
    computable in closed form, so it is supplied by the caller and everything
    derived from ``delta_alpha`` is conditional on that choice.
    """

    d: int
    alpha: float
    s_dminus1: float
    c_dalpha: float
    sigma: float
    kappa_alpha: float
    delta_alpha: float
    k_heat: float


def sphere_area(d: int) -> float:
    """Surface area of the unit sphere in R^d, ``2 pi^(d/2) / Gamma(d/2)``."""
    if not isinstance(d, int) or isinstance(d, bool) or d < 1:
        raise ValueError(f"dimension must be a positive integer, got {d!r}")
    return 2.0 * math.pi ** (d / 2.0) / math.gamma(d / 2.0)


def _check_open_alpha(alpha: float) -> None:
    if not 0.0 < alpha < 2.0:
        raise ValueError(
            f"alpha must lie in the open interval (0, 2), got {alpha!r}; "
            "alpha = 2 is the Brownian case and has no Levy-measure constant"
        )


def c_d_alpha(p: StableParams) -> float:
    """Levy-measure constant: nu(dz) = C_{d,alpha} |z|^{-d-alpha} dz.

    This normalization gives the characteristic function exp(-t |xi|^alpha).
    """
    _check_open_alpha(p.alpha)
    a, d = p.alpha, p.d
    return (
        a
        * 2.0 ** (a - 1.0)
        * math.pi ** (-d / 2.0)
        * math.gamma((d + a) / 2.0)
        / math.gamma(1.0 - a / 2.0)
    )


def kappa(alpha: float) -> float:
    """``2^alpha / (2^alpha - 1)``: inverse mass of a Pareto annulus [z, 2z] times z^alpha."""
    _check_open_alpha(alpha)
    two_a = 2.0 ** alpha
    return two_a / (two_a - 1.0)


def pareto_sigma(p: StableParams) -> float:
    """Scale matching the Pareto surrogate to the stable tail: sigma^alpha = alpha / (s C)."""
    return (p.alpha / (sphere_area(p.d) * c_d_alpha(p))) ** (1.0 / p.alpha)


def delta(p: StableParams, k_heat: float = 1.0) -> float:
    """Lower-bound constant for stable annulus mass, given the heat-kernel constant."""
    _check_open_alpha(p.alpha)
    if not k_heat >= 1.0:
        raise ValueError(f"heat-kernel constant must be >= 1, got {k_heat!r}")
    a, d = p.alpha, p.d
    return 2.0 ** (d + a) * a * k_heat / sphere_area(d) / (1.0 - 2.0 ** (-a))


def constant_set(p: StableParams, k_heat: float = 1.0) -> ConstantSet:
    return ConstantSet(
        d=p.d,
        alpha=p.alpha,
        s_dminus1=sphere_area(p.d),
        c_dalpha=c_d_alpha(p),
        sigma=pareto_sigma(p),
        kappa_alpha=kappa(p.alpha),
        delta_alpha=delta(p, k_heat),
        k_heat=float(k_heat),
    )


def _check_exponents(alpha: float, beta: float, T: float) -> None:
    _check_open_alpha(alpha)
    if not 0.0 < beta < alpha:
        raise ValueError(f"need 0 < beta < alpha, got beta={beta!r}, alpha={alpha!r}")
    if not T > 0.0:
        raise ValueError(f"horizon T must be positive, got {T!r}")


def _exp(x: float) -> float:
    try:
        return math.exp(x)
    except OverflowError:
        return math.inf


def k1(alpha: float, beta: float, T: float, delta_alpha: float) -> float:
    """Growth constant for the scheme driven by true stable increments.

    Saturates to ``inf`` when ``exp(delta/beta)`` exceeds the float range.
    """
    _check_exponents(alpha, beta, T)
    return 2.0 * (_exp(delta_alpha / beta) + 2.0) / T


def k2(alpha: float, beta: float, T: float, sigma: float, kappa_alpha: float) -> float:
    """Growth constant for the Pareto-surrogate scheme (``inf`` on overflow)."""
    _check_exponents(alpha, beta, T)
    return 2.0 * (_exp(kappa_alpha / beta) + 2.0 / sigma) / T
