"""Samplers for the increment laws driving the Euler-Maruyama schemes.

Every sampler takes a :class:`numpy.random.Generator` and a ``size`` (number
of vectors) and returns an array of shape ``(size, d)``.  Generators are built
by :func:`make_rng` from a ``(seed, stream)`` pair so that each path block,
sweep cell, etc. owns an independent, replayable stream.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from emlab.constants import StableParams


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Return a Philox generator for sub-stream ``stream`` of master ``seed``.

    The stream key goes into ``SeedSequence.spawn_key``, so distinct keys give
    statistically independent streams and identical keys replay bit-for-bit.
    """
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(s) for s in stream))
    return np.random.Generator(np.random.Philox(ss))


class NoiseTag(enum.Enum):
    GAUSSIAN = "gaussian"
    STABLE = "stable"
    PARETO = "pareto"


@dataclass(frozen=True)
class NoiseKind:
    tag: NoiseTag
    params: StableParams

    def __post_init__(self):
        if self.tag is not NoiseTag.GAUSSIAN and not self.params.alpha < 2.0:
            raise ValueError(f"{self.tag.value} noise needs alpha in (0, 2), got {self.params.alpha}")

    @classmethod
    def gaussian(cls, d: int = 1) -> NoiseKind:
        return cls(NoiseTag.GAUSSIAN, StableParams(d, 2.0))

    @classmethod
    def stable(cls, d: int, alpha: float) -> NoiseKind:
        return cls(NoiseTag.STABLE, StableParams(d, alpha))

    @classmethod
    def pareto(cls, d: int, alpha: float) -> NoiseKind:
        return cls(NoiseTag.PARETO, StableParams(d, alpha))

    @property
    def d(self) -> int:
        return self.params.d

    @property
    def alpha(self) -> float:
        return self.params.alpha


@dataclass(frozen=True)
class RadiusWindow:
    """Closed radius window ``[lo, hi]``; ``hi`` may be ``inf``."""

    lo: float
    hi: float = math.inf

    def __post_init__(self):
        if not self.lo >= 1.0:
            raise ValueError(f"window must start at radius >= 1, got lo={self.lo!r}")
        if not self.hi > self.lo:
            raise ValueError(f"empty radius window [{self.lo!r}, {self.hi!r}]")

    def __contains__(self, r) -> bool:
        return self.lo <= r <= self.hi


def _check_d(d: int) -> None:
    if d < 1:
        raise ValueError(f"dimension must be positive, got {d}")


def sample_gaussian(rng: np.random.Generator, d: int, size: int = 1) -> np.ndarray:
    _check_d(d)
    return rng.standard_normal((size, d))


def sample_directions(rng: np.random.Generator, d: int, size: int = 1) -> np.ndarray:
    """Uniform points on the unit sphere S^{d-1} (normalized Gaussians)."""
    _check_d(d)
    g = rng.standard_normal((size, d))
    if d == 1:
        return np.where(g >= 0.0, 1.0, -1.0)
    return g / np.sqrt(np.einsum("ij,ij->i", g, g))[:, None]


def _pareto_radius(u: np.ndarray, alpha: float, lo: float, hi: float) -> np.ndarray:
    # inverse CDF of the radius restricted to [lo, hi]; hi = inf gives hi^-alpha = 0
    lo_t = lo ** (-alpha)
    hi_t = 0.0 if math.isinf(hi) else hi ** (-alpha)
    r = (u * hi_t + (1.0 - u) * lo_t) ** (-1.0 / alpha)
    return np.clip(r, lo, hi)


def sample_pareto_vector(rng: np.random.Generator, p: StableParams, size: int = 1) -> np.ndarray:
    """Isotropic Pareto vectors with ``P(|Z| >= z) = z^-alpha`` for ``z >= 1``."""
    if not 0.0 < p.alpha < 2.0:
        raise ValueError(f"Pareto noise needs alpha in (0, 2), got {p.alpha}")
    u = rng.random(size)
    # 1 - u lies in (0, 1], so the radius is finite and >= 1
    r = (1.0 - u) ** (-1.0 / p.alpha)
    return r[:, None] * sample_directions(rng, p.d, size)


def sample_pareto_conditioned(
    rng: np.random.Generator, p: StableParams, w: RadiusWindow, size: int = 1
) -> np.ndarray:
    """Pareto vectors conditioned on ``|Z|`` in ``w``, by exact inverse CDF.

    No rejection is involved, so windows of tiny mass cost the same as any other.
    """
    if not 0.0 < p.alpha < 2.0:
        raise ValueError(f"Pareto noise needs alpha in (0, 2), got {p.alpha}")
    r = _pareto_radius(rng.random(size), p.alpha, w.lo, w.hi)
    return r[:, None] * sample_directions(rng, p.d, size)


def window_probability(p: StableParams, w: RadiusWindow) -> float:
    """Exact Pareto mass of the radius window: ``lo^-alpha - hi^-alpha``."""
    hi_t = 0.0 if math.isinf(w.hi) else w.hi ** (-p.alpha)
    return w.lo ** (-p.alpha) - hi_t


def log_window_probability(p: StableParams, w: RadiusWindow) -> float:
    """``log(window_probability)`` without underflow for far-out windows."""
    a = p.alpha
    log_lo = -a * math.log(w.lo)
    if math.isinf(w.hi):
        return log_lo
    # lo^-a (1 - (lo/hi)^a)
    return log_lo + math.log1p(-math.exp(a * (math.log(w.lo) - math.log(w.hi))))


def _symmetric_stable_1d(rng: np.random.Generator, alpha: float, size: int) -> np.ndarray:
    # Chambers-Mallows-Stuck, skewness 0; characteristic function exp(-|xi|^alpha)
    v = rng.uniform(-0.5 * math.pi, 0.5 * math.pi, size)
    w = rng.standard_exponential(size)
    if alpha == 1.0:
        return np.tan(v)
    return (
        np.sin(alpha * v)
        / np.cos(v) ** (1.0 / alpha)
        * (np.cos((1.0 - alpha) * v) / w) ** ((1.0 - alpha) / alpha)
    )


def _positive_stable(rng: np.random.Generator, a: float, size: int) -> np.ndarray:
    """Positive a-stable variables, 0 < a < 1, with Laplace transform exp(-s^a).

    Kanter's representation with U uniform on (0, pi) and E standard exponential.
    """
    u = rng.uniform(0.0, math.pi, size)
    e = rng.standard_exponential(size)
    return (
        np.sin(a * u)
        / np.sin(u) ** (1.0 / a)
        * (np.sin((1.0 - a) * u) / e) ** ((1.0 - a) / a)
    )


def sample_isotropic_stable(
    rng: np.random.Generator, p: StableParams, t: float = 1.0, size: int = 1
) -> np.ndarray:
    """Increments over time ``t`` of the isotropic stable process.

    Normalized so that ``E exp(i <xi, Z_t>) = exp(-t |xi|^alpha)``.  For d >= 2
    we subordinate Brownian motion: with ``A`` positive (alpha/2)-stable
    (Laplace transform exp(-s^{alpha/2})) and ``G`` standard normal,
    ``sqrt(2 A) G`` has characteristic function
    ``E exp(-A |xi|^2) = exp(-|xi|^alpha)``.  Time enters through
    self-similarity, ``Z_t = t^{1/alpha} Z_1``.
    """
    if not 0.0 < p.alpha < 2.0:
        raise ValueError(f"stable noise needs alpha in (0, 2), got {p.alpha}")
    if not t > 0.0:
        raise ValueError(f"time increment must be positive, got {t!r}")
    scale = t ** (1.0 / p.alpha)
    if p.d == 1:
        return scale * _symmetric_stable_1d(rng, p.alpha, size)[:, None]
    a = _positive_stable(rng, 0.5 * p.alpha, size)
    g = rng.standard_normal((size, p.d))
    return (scale * np.sqrt(2.0 * a))[:, None] * g


def sample_increment(
    rng: np.random.Generator, kind: NoiseKind, eta: float, size: int = 1
) -> np.ndarray:
    """Noise for one step of size ``eta``, in the form the stepping kernels expect.

    Stable increments carry their time scaling (``Z_eta``).  Gaussian and
    Pareto draws are returned standardized; the kernels apply ``sqrt(eta)``
    and ``eta^{1/alpha} / sigma`` respectively.
    """
    if kind.tag is NoiseTag.GAUSSIAN:
        return sample_gaussian(rng, kind.d, size)
    if kind.tag is NoiseTag.STABLE:
        return sample_isotropic_stable(rng, kind.params, eta, size)
    return sample_pareto_vector(rng, kind.params, size)
