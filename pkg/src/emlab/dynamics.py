"""Drift and diffusion coefficients and the Euler-Maruyama stepping kernels.

States are batched: ``y`` has shape ``(M, d)`` for ``M`` independent paths.
A path whose state leaves the finite float range is *saturated*: its state is
pinned to ``+inf`` and the step at which that first happened is recorded.
Saturated paths never come back.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from emlab.noise import NoiseKind, NoiseTag, make_rng, sample_directions


def norm(x: np.ndarray) -> np.ndarray:
    """Euclidean norm over the last axis without intermediate overflow."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] == 1:
        return np.abs(x[..., 0])
    return np.hypot.reduce(x, axis=-1)


# --------------------------------------------------------------------------
# drift


@dataclass(frozen=True)
class DriftTerm:
    """``coef * x * |x|^power * log(1 + |x|)^log_power``."""

    coef: float
    power: float = 0.0
    log_power: float = 0.0

    def __post_init__(self):
        if self.power < 0.0 or self.log_power < 0.0:
            raise ValueError("drift term exponents must be non-negative")

    @property
    def growth(self) -> tuple[float, float]:
        # |term| ~ |x|^(1 + power) * log^log_power, ordered lexicographically
        return (1.0 + self.power, self.log_power)


@dataclass(frozen=True)
class Drift:
    """Finite sum of radial monomial / log-monomial terms.

    Every term is ``x`` times a function of ``|x|``, so ``|f(x)|`` depends only on
    ``|x|`` and the asymptotic growth can be read off the exponents.
    """

    terms: tuple[DriftTerm, ...]
    name: str = "custom"

    @classmethod
    def critical_log(cls) -> Drift:
        return cls((DriftTerm(-1.0, 0.0, 1.0),), "critical_log")

    @classmethod
    def power_law(cls, theta: float) -> Drift:
        if not theta > 0.0:
            raise ValueError(f"power-law exponent must be positive, got {theta!r}")
        return cls((DriftTerm(-1.0, theta, 0.0),), f"power_law({theta:g})")

    @classmethod
    def linear(cls, coef: float = -1.0) -> Drift:
        return cls((DriftTerm(coef, 0.0, 0.0),), "linear")

    @classmethod
    def zero(cls) -> Drift:
        return cls((), "zero")

    @classmethod
    def custom(cls, terms: Sequence[tuple[float, float, float]]) -> Drift:
        return cls(tuple(DriftTerm(*t) for t in terms), "custom")

    def radial_factor(self, r: np.ndarray) -> np.ndarray:
        """``phi(r)`` with ``f(x) = x * phi(|x|)``."""
        r = np.asarray(r, dtype=float)
        out = np.zeros_like(r)
        log1p_r = np.log1p(r)
        for t in self.terms:
            part = t.coef * np.ones_like(r)
            if t.power:
                part = part * r ** t.power
            if t.log_power:
                part = part * log1p_r ** t.log_power
            out = out + part
        return out

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return x * self.radial_factor(norm(x))[..., None]

    def magnitude(self, r) -> np.ndarray:
        """``|f(x)|`` for any ``x`` with ``|x| = r``."""
        r = np.asarray(r, dtype=float)
        return r * np.abs(self.radial_factor(r))

    def leading(self) -> Optional[DriftTerm]:
        live = [t for t in self.terms if t.coef != 0.0]
        if not live:
            return None
        top = max(t.growth for t in live)
        same = [t for t in live if t.growth == top]
        return DriftTerm(sum(t.coef for t in same), top[0] - 1.0, top[1])


def drift_eval(spec: Drift, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("drift evaluated at a non-finite point")
    return spec(x)


# --------------------------------------------------------------------------
# diffusion


@dataclass(frozen=True)
class Diffusion:
    """Diffusion coefficient ``g(x)``.

    Either isotropic, ``g(x) = scale * |x|^power * I_d``, or an arbitrary
    matrix-valued callable mapping ``(M, d)`` to ``(M, d, d)``.
    """

    scale: float = 1.0
    power: float = 0.0
    matrix: Optional[Callable[[np.ndarray], np.ndarray]] = field(default=None, compare=False)
    name: str = "identity"

    @classmethod
    def identity(cls) -> Diffusion:
        return cls()

    @classmethod
    def scalar(cls, c: float) -> Diffusion:
        return cls(scale=float(c), name=f"scalar({c:g})")

    @classmethod
    def monomial(cls, c: float, power: float) -> Diffusion:
        if power < 0.0:
            raise ValueError("diffusion exponent must be non-negative")
        return cls(scale=float(c), power=float(power), name=f"monomial({c:g},{power:g})")

    @classmethod
    def custom(cls, fn: Callable[[np.ndarray], np.ndarray]) -> Diffusion:
        return cls(matrix=fn, name="custom")

    @property
    def is_identity(self) -> bool:
        return self.matrix is None and self.scale == 1.0 and self.power == 0.0

    @property
    def isotropic(self) -> bool:
        return self.matrix is None

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.matrix is not None:
            return np.asarray(self.matrix(x), dtype=float)
        d = x.shape[-1]
        s = self._scalar(x)
        return s[:, None, None] * np.eye(d)

    def _scalar(self, x: np.ndarray) -> np.ndarray:
        if self.power:
            return self.scale * norm(x) ** self.power
        return np.full(x.shape[:-1], self.scale)

    def apply(self, x: np.ndarray, z: np.ndarray) -> np.ndarray:
        """``g(x) z`` row by row."""
        if self.is_identity:
            return z
        if self.matrix is None:
            return self._scalar(x)[..., None] * z
        g = np.asarray(self.matrix(x), dtype=float)
        if g.shape[-2:] != (x.shape[-1], z.shape[-1]):
            raise ValueError(
                f"diffusion matrix shape {g.shape[-2:]} does not conform with noise of dimension {z.shape[-1]}"
            )
        return np.einsum("...ij,...j->...i", g, z)

    def magnitude(self, x: np.ndarray) -> np.ndarray:
        """Operator norm ``|g(x)|``."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.matrix is None:
            return np.abs(self._scalar(x))
        return np.linalg.norm(self(x), ord=2, axis=(-2, -1))


# --------------------------------------------------------------------------
# configuration


class Scheme(enum.Enum):
    BROWNIAN_CRITICAL = "brownian_critical"
    STABLE_CRITICAL = "stable_critical"
    PARETO_CRITICAL = "pareto_critical"
    GENERAL_STABLE = "general_stable"
    GENERAL_PARETO = "general_pareto"

    @property
    def critical(self) -> bool:
        return self in (Scheme.BROWNIAN_CRITICAL, Scheme.STABLE_CRITICAL, Scheme.PARETO_CRITICAL)


@dataclass(frozen=True)
class Model:
    drift: Drift
    diffusion: Diffusion
    noise: NoiseKind

    @property
    def d(self) -> int:
        return self.noise.d


@dataclass(frozen=True)
class EmConfig:
    """Horizon ``T`` split into ``n`` steps; the step size is derived, never set."""

    T: float
    n: int
    x0: tuple[float, ...]
    scheme: Scheme
    seed: int = 0

    def __post_init__(self):
        if not self.T > 0.0 or not math.isfinite(self.T):
            raise ValueError(f"horizon T must be positive and finite, got {self.T!r}")
        if not isinstance(self.n, (int, np.integer)) or self.n < 1:
            raise ValueError(f"step count n must be a positive integer, got {self.n!r}")
        object.__setattr__(self, "x0", tuple(float(v) for v in np.atleast_1d(self.x0)))
        if not all(math.isfinite(v) for v in self.x0):
            raise ValueError("initial point must be finite")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")

    @property
    def eta(self) -> float:
        return self.T / self.n

    @property
    def d(self) -> int:
        return len(self.x0)


def check_model(model: Model, scheme: Scheme, d: int) -> None:
    """Raise ``ValueError`` if ``model`` cannot be run with ``scheme``."""
    if model.d != d:
        raise ValueError(f"initial point has dimension {d} but noise has dimension {model.d}")
    tag = model.noise.tag
    wanted = {
        Scheme.BROWNIAN_CRITICAL: (NoiseTag.GAUSSIAN,),
        Scheme.STABLE_CRITICAL: (NoiseTag.STABLE,),
        Scheme.PARETO_CRITICAL: (NoiseTag.PARETO,),
        Scheme.GENERAL_STABLE: (NoiseTag.STABLE, NoiseTag.GAUSSIAN),
        Scheme.GENERAL_PARETO: (NoiseTag.PARETO,),
    }[scheme]
    if tag not in wanted:
        raise ValueError(f"scheme {scheme.value} cannot use {tag.value} noise")
    if scheme.critical:
        if model.drift != Drift.critical_log():
            raise ValueError(f"scheme {scheme.value} requires the critical log drift")
        if not model.diffusion.is_identity:
            raise ValueError(f"scheme {scheme.value} requires identity diffusion")


# --------------------------------------------------------------------------
# path state and kernels


@dataclass(frozen=True)
class PathState:
    y: np.ndarray
    k: int
    overflowed: np.ndarray
    overflow_step: np.ndarray

    @classmethod
    def start(cls, x0, paths: int = 1) -> PathState:
        x0 = np.atleast_1d(np.asarray(x0, dtype=float))
        y = np.broadcast_to(x0, (paths, x0.size)).copy()
        return cls(y, 0, np.zeros(paths, dtype=bool), np.full(paths, -1, dtype=np.int64))

    @property
    def paths(self) -> int:
        return self.y.shape[0]


def _advance(state: PathState, y_new: np.ndarray) -> PathState:
    bad = state.overflowed | ~np.all(np.isfinite(y_new), axis=-1)
    fresh = bad & ~state.overflowed
    if bad.any():
        y_new[bad] = np.inf
    steps = state.overflow_step
    if fresh.any():
        steps = steps.copy()
        steps[fresh] = state.k + 1
    return PathState(y_new, state.k + 1, bad, steps)


_CRITICAL = Drift.critical_log()
_IDENTITY = Diffusion.identity()


def pareto_scale(eta: float, alpha: float, sigma: float) -> float:
    """Multiplier ``eta^{1/alpha} / sigma`` applied to surrogate Pareto draws."""
    return eta ** (1.0 / alpha) / sigma


def em_step_general(
    state: PathState,
    eta: float,
    drift: Drift,
    diffusion: Diffusion,
    noise: np.ndarray,
    surrogate: bool = False,
    alpha: Optional[float] = None,
    sigma: Optional[float] = None,
) -> PathState:
    """``Y + eta f(Y) + g(Y) dL``.

    With ``surrogate=True`` the noise is a raw Pareto draw and is scaled by
    ``eta^{1/alpha} / sigma``; otherwise it is used as the increment as is.
    """
    noise = np.asarray(noise, dtype=float)
    y = state.y
    if noise.shape[-1] != y.shape[-1] and diffusion.isotropic:
        raise ValueError(f"noise dimension {noise.shape[-1]} does not match state dimension {y.shape[-1]}")
    if surrogate:
        if alpha is None or sigma is None:
            raise ValueError("surrogate stepping needs alpha and sigma")
        noise = pareto_scale(eta, alpha, sigma) * noise
    with np.errstate(over="ignore", invalid="ignore"):
        y_new = y + eta * drift(y) + diffusion.apply(y, noise)
    return _advance(state, y_new)


def em_step_brownian_critical(state: PathState, eta: float, noise: np.ndarray) -> PathState:
    """One step with a standard Gaussian ``noise``: ``Y - eta Y log(1+|Y|) + sqrt(eta) N``."""
    return em_step_general(state, eta, _CRITICAL, _IDENTITY, math.sqrt(eta) * np.asarray(noise, dtype=float))


def em_step_stable_critical(state: PathState, eta: float, noise: np.ndarray) -> PathState:
    """One step with a raw stable increment over time ``eta``."""
    return em_step_general(state, eta, _CRITICAL, _IDENTITY, noise)


def em_step_pareto_critical(
    state: PathState, eta: float, noise: np.ndarray, alpha: float, sigma: float
) -> PathState:
    """One surrogate step with a raw Pareto draw ``noise``."""
    return em_step_general(state, eta, _CRITICAL, _IDENTITY, noise, surrogate=True, alpha=alpha, sigma=sigma)


def make_stepper(model: Model, scheme: Scheme, eta: float) -> Callable[[PathState, np.ndarray], PathState]:
    """Bind ``model`` and ``eta`` into a ``(state, noise) -> state`` kernel."""
    from emlab.constants import pareto_sigma

    if scheme is Scheme.BROWNIAN_CRITICAL:
        return lambda s, z: em_step_brownian_critical(s, eta, z)
    if scheme is Scheme.STABLE_CRITICAL:
        return lambda s, z: em_step_stable_critical(s, eta, z)
    if scheme is Scheme.PARETO_CRITICAL:
        alpha, sigma = model.noise.alpha, pareto_sigma(model.noise.params)
        return lambda s, z: em_step_pareto_critical(s, eta, z, alpha, sigma)
    if scheme is Scheme.GENERAL_PARETO:
        alpha, sigma = model.noise.alpha, pareto_sigma(model.noise.params)
        return lambda s, z: em_step_general(
            s, eta, model.drift, model.diffusion, z, surrogate=True, alpha=alpha, sigma=sigma
        )
    if model.noise.tag is NoiseTag.GAUSSIAN:
        root = math.sqrt(eta)
        return lambda s, z: em_step_general(s, eta, model.drift, model.diffusion, root * z)
    return lambda s, z: em_step_general(s, eta, model.drift, model.diffusion, z)


# --------------------------------------------------------------------------
# Assumption (A)


@dataclass(frozen=True)
class AssumptionAParams:
    gamma: float
    lam: float
    H: float

    def __post_init__(self):
        if not self.gamma > self.lam > 1.0:
            raise ValueError(f"need gamma > lambda > 1, got gamma={self.gamma}, lambda={self.lam}")
        if not self.H >= 1.0:
            raise ValueError(f"need H >= 1, got {self.H}")


@dataclass
class Violation:
    radius: float
    x: tuple[float, ...]
    inequality: str
    lhs: float
    rhs: float


@dataclass
class AssumptionReport:
    ok: bool
    probes_ok: bool
    symbolic_ok: Optional[bool]
    violations: list[Violation]
    notes: list[str]

    def __bool__(self) -> bool:
        return self.ok

    @property
    def first_violation(self) -> Optional[Violation]:
        return self.violations[0] if self.violations else None


def _symbolic_check(drift: Drift, diffusion: Diffusion, params: AssumptionAParams) -> tuple[Optional[bool], list[str]]:
    """Compare leading growth exponents of |f| and |g| against gamma and lambda.

    Each magnitude is ``c |x|^e log(1+|x|)^q`` asymptotically; the sandwich holds
    for large |x| iff the larger one beats ``|x|^gamma / H`` and the smaller one
    stays under ``H |x|^lambda``.
    """
    if not diffusion.isotropic:
        return None, ["diffusion is not isotropic; asymptotic check skipped"]
    lead = drift.leading()
    f = (-math.inf, 0.0, 0.0) if lead is None else (1.0 + lead.power, lead.log_power, abs(lead.coef))
    g = (-math.inf, 0.0, 0.0) if diffusion.scale == 0.0 else (diffusion.power, 0.0, abs(diffusion.scale))
    big, small = (f, g) if f[:2] >= g[:2] else (g, f)
    H = params.H
    notes = [f"|f| ~ {f[2]:g} |x|^{f[0]:g} log^{f[1]:g}", f"|g| ~ {g[2]:g} |x|^{g[0]:g}"]
    upper = big[:2] > (params.gamma, 0.0) or (big[:2] == (params.gamma, 0.0) and big[2] >= 1.0 / H)
    lower = small[:2] < (params.lam, 0.0) or (small[:2] == (params.lam, 0.0) and small[2] <= H)
    if not upper:
        notes.append(f"max(|f|,|g|) grows slower than |x|^{params.gamma:g}/H")
    if not lower:
        notes.append(f"min(|f|,|g|) grows faster than H|x|^{params.lam:g}")
    return upper and lower, notes


def check_assumption_a(
    drift: Drift,
    diffusion: Diffusion,
    params: AssumptionAParams,
    probe_radii: Sequence[float],
    d: int = 1,
    directions: int = 16,
    seed: int = 0,
) -> AssumptionReport:
    """Check the polynomial sandwich on |f| and |g| outside the ball of radius H.

    Both inequalities are evaluated at ``directions`` random points on each
    probe sphere.  For isotropic diffusions the exponents are also compared
    symbolically, which is what certifies the asymptotic part.
    """
    radii = [float(r) for r in probe_radii]
    if not radii:
        raise ValueError("need at least one probe radius")
    if min(radii) < params.H:
        raise ValueError(f"probe radii must be >= H = {params.H}")
    u = sample_directions(make_rng(seed), d, directions)
    violations = []
    for r in radii:
        x = r * u
        fm = drift.magnitude(np.full(directions, r))
        gm = diffusion.magnitude(x)
        hi, lo = np.maximum(fm, gm), np.minimum(fm, gm)
        need_hi = r ** params.gamma / params.H
        need_lo = params.H * r ** params.lam
        for i in range(directions):
            if not hi[i] >= need_hi:
                violations.append(Violation(r, tuple(x[i]), "max >= |x|^gamma/H", float(hi[i]), need_hi))
            if not lo[i] <= need_lo:
                violations.append(Violation(r, tuple(x[i]), "min <= H|x|^lambda", float(lo[i]), need_lo))
    symbolic, notes = _symbolic_check(drift, diffusion, params)
    probes_ok = not violations
    ok = probes_ok and symbolic is not False
    return AssumptionReport(ok, probes_ok, symbolic, violations, notes)
