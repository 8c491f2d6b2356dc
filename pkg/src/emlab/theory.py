"""Constructive blow-up certificates for the heavy-tailed Euler-Maruyama schemes.

For parameters in a blow-up regime we build the explicit noise event on
which the scheme is forced to grow, compute that event's probability exactly
(Pareto case), compare it with the closed-form lower bound used in the
existence argument, and replay conditioned noise paths to check the
pathwise growth bound step by step.

Everything that can exceed the float range is carried as a natural log:
event probabilities, thresholds, and path magnitudes (states are stored in
log-polar form, ``y = exp(ell) * u`` with ``|u| = 1``).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from emlab import constants as C
from emlab.constants import ConstantSet, StableParams
from emlab.dynamics import AssumptionAParams, AssumptionReport, Diffusion, Drift, check_assumption_a, norm
from emlab.noise import (
    RadiusWindow,
    log_window_probability,
    make_rng,
    sample_directions,
    sample_isotropic_stable,
    sample_pareto_conditioned,
    sample_pareto_vector,
)

# relative slack for inequalities that hold with equality by construction
_ROUNDING = 1e-12


class Theorem(enum.Enum):
    THM2_PART1 = "thm2_part1"  # critical drift, true stable increments
    THM2_PART2 = "thm2_part2"  # critical drift, Pareto surrogate
    THM3 = "thm3"  # polynomial drift/diffusion, Pareto surrogate


class SupportGapError(ValueError):
    """The first-increment threshold lies inside the Pareto support gap |z| < 1."""


@dataclass(frozen=True)
class Condition:
    name: str
    lhs: float
    rhs: float
    relation: str
    passed: bool


def _cond(name: str, lhs: float, relation: str, rhs: float, slack: float = 0.0) -> Condition:
    tol = slack * max(abs(lhs), abs(rhs)) if math.isfinite(lhs) and math.isfinite(rhs) else 0.0
    if relation == "<=":
        ok = lhs <= rhs + tol
    elif relation == "<":
        ok = lhs < rhs
    elif relation == ">=":
        ok = lhs >= rhs - tol
    elif relation == ">":
        ok = lhs > rhs
    else:
        raise ValueError(relation)
    return Condition(name, float(lhs), float(rhs), relation, bool(ok))


@dataclass
class RegimeCertificate:
    which: Theorem
    alpha: float
    beta: float
    T: float
    n: int
    x0: tuple[float, ...]
    constants: ConstantSet
    K: Optional[float]
    r_n: Optional[float]
    conditions: list[Condition]
    drift: Drift = field(default_factory=Drift.critical_log)
    diffusion: Diffusion = field(default_factory=Diffusion.identity)
    assumption: Optional[AssumptionAParams] = None
    assumption_report: Optional[AssumptionReport] = field(default=None, repr=False)

    @property
    def eta(self) -> float:
        return self.T / self.n

    @property
    def d(self) -> int:
        return len(self.x0)

    @property
    def x0_norm(self) -> float:
        return float(norm(np.asarray(self.x0)))

    @property
    def noise_scale(self) -> float:
        """sigma for the Pareto surrogate; true stable increments carry none."""
        return 1.0 if self.which is Theorem.THM2_PART1 else self.constants.sigma

    @property
    def tail_constant(self) -> float:
        """kappa_alpha (Pareto) or delta_alpha (stable) for annulus masses."""
        if self.which is Theorem.THM2_PART1:
            return self.constants.delta_alpha
        return self.constants.kappa_alpha

    @property
    def valid(self) -> bool:
        return all(c.passed for c in self.conditions)

    def failing(self) -> list[Condition]:
        return [c for c in self.conditions if not c.passed]


def _x0_terms(x0_norm: float) -> float:
    """``log(|x0| (1 + log(1 + |x0|)))``, ``-inf`` at the origin."""
    if x0_norm == 0.0:
        return -math.inf
    return math.log(x0_norm) + math.log1p(math.log1p(x0_norm))


def r_n_value(alpha: float, eta: float, sigma: float, params: AssumptionAParams) -> float:
    """Starting radius of the doubly exponential growth bound.

    Pass ``sigma = 1`` for true stable increments.
    """
    H, gap = params.H, params.gamma - params.lam
    e = eta ** (1.0 / alpha)
    t3 = (4.0 * H / eta + 4.0 * H * H / (eta * sigma) * (1.0 + eta) * e) ** (1.0 / gap)
    t4 = (sigma * H * (2.0 + H * eta) / (1.0 + eta) / e) ** (1.0 / gap)
    return max(2.0, H, t3, t4)


def certify_regime(
    alpha: float,
    beta: float,
    T: float,
    n: int,
    x0,
    which: Theorem = Theorem.THM2_PART2,
    k_heat: float = 1.0,
    *,
    drift: Optional[Drift] = None,
    diffusion: Optional[Diffusion] = None,
    assumption: Optional[AssumptionAParams] = None,
    probe_radii: Optional[Sequence[float]] = None,
) -> RegimeCertificate:
    """Evaluate every explicit precondition of the selected blow-up result.

    Domain errors (``beta >= alpha``, non-positive ``T`` or ``n``) raise
    ``ValueError`` before anything is evaluated; failed preconditions are
    recorded in ``conditions`` instead.
    """
    which = Theorem(which)
    if not 0.0 < alpha < 2.0:
        raise ValueError(f"alpha must lie in (0, 2), got {alpha}")
    if not 0.0 < beta < alpha:
        raise ValueError(f"need 0 < beta < alpha, got beta={beta}, alpha={alpha}")
    if not T > 0.0:
        raise ValueError(f"T must be positive, got {T}")
    if int(n) != n or n < 1:
        raise ValueError(f"n must be a positive integer, got {n}")
    n = int(n)
    x0 = tuple(float(v) for v in np.atleast_1d(x0))
    d = len(x0)
    consts = C.constant_set(StableParams(d, alpha), k_heat)
    eta = T / n
    x0n = float(norm(np.asarray(x0)))
    conds: list[Condition] = []

    if which is not Theorem.THM3:
        if which is Theorem.THM2_PART1:
            tail, sigma = consts.delta_alpha, 1.0
            K = C.k1(alpha, beta, T, tail)
        else:
            tail, sigma = consts.kappa_alpha, consts.sigma
            K = C.k2(alpha, beta, T, sigma, tail)
        conds.append(_cond("step size T/n <= 1", eta, "<=", 1.0))
        conds.append(_cond("K < (c - log c)/(alpha - beta)", K, "<", (tail - math.log(tail)) / (alpha - beta)))
        conds.append(_cond("n K >= log(|x0|(1 + log(1 + |x0|)))", n * K, ">=", _x0_terms(x0n)))
        # per-step growth factor used along the event
        lhs = T * K - 2.0 * (1.0 + eta) * eta ** (1.0 / alpha) / sigma - 1.0
        conds.append(_cond("T K - 2(1+eta) eta^(1/alpha)/sigma - 1 >= exp(c/beta)", lhs, ">=", C._exp(tail / beta)))
        return RegimeCertificate(which, alpha, beta, T, n, x0, consts, K, None, conds)

    if drift is None or diffusion is None or assumption is None:
        raise ValueError("the polynomial-drift result needs drift, diffusion and assumption parameters")
    if not diffusion.isotropic:
        raise ValueError("the polynomial-drift result is implemented for isotropic diffusions only")
    sigma = consts.sigma
    r_n = r_n_value(alpha, eta, sigma, assumption)
    H = assumption.H
    radii = probe_radii if probe_radii is not None else [H * 10.0 ** k for k in range(7)] + [r_n]
    report = check_assumption_a(drift, diffusion, assumption, radii, d=d)
    conds.append(Condition("assumption (A) holds", float(len(report.violations)), 0.0, "==", report.ok))
    g0 = float(diffusion.magnitude(np.asarray([x0]))[0])
    conds.append(_cond("|g(x0)| > 0", g0, ">", 0.0))
    e = eta ** (1.0 / alpha)
    gap = assumption.gamma - assumption.lam
    if alpha >= 1.0:
        conds.append(_cond("eta/2 <= (1+eta) eta^(1/alpha)/sigma", eta / 2.0, "<=", (1.0 + eta) * e / sigma))
        conds.append(
            _cond(
                "eta r_n^(gamma-lambda)/(2H) >= 2 + 2H(1+eta) eta^(1/alpha)/sigma",
                eta / (2.0 * H) * r_n ** gap,
                ">=",
                2.0 + 2.0 * H / sigma * (1.0 + eta) * e,
                slack=_ROUNDING,
            )
        )
    else:
        conds.append(_cond("2(1+eta) eta^(1/alpha)/sigma <= eta", 2.0 * (1.0 + eta) * e / sigma, "<=", eta))
        conds.append(
            _cond(
                "(1+eta) eta^(1/alpha) r_n^(gamma-lambda)/(sigma H) >= 2 + H eta",
                (1.0 + eta) * e * r_n ** gap / (sigma * H),
                ">=",
                2.0 + H * eta,
                slack=_ROUNDING,
            )
        )
    return RegimeCertificate(
        which, alpha, beta, T, n, x0, consts, None, r_n, conds, drift, diffusion, assumption, report
    )


def smallest_valid_n(
    alpha: float,
    beta: float,
    T: float,
    x0,
    which: Theorem = Theorem.THM2_PART2,
    k_heat: float = 1.0,
    n_max: int = 100_000,
    **kwargs,
) -> Optional[int]:
    """Smallest step count at which every checkable precondition holds."""
    which = Theorem(which)
    if which is not Theorem.THM3:
        # the preconditions are monotone in n here: find the first candidate in closed form
        probe = certify_regime(alpha, beta, T, 1, x0, which, k_heat)
        if not probe.conditions[1].passed:
            return None
        K = probe.K
        start = max(1, math.ceil(T), math.ceil(_x0_terms(probe.x0_norm) / K) if probe.x0_norm else 1)
        for n in range(max(1, start - 1), n_max + 1):
            if certify_regime(alpha, beta, T, n, x0, which, k_heat).valid:
                return n
        return None
    for n in range(1, n_max + 1):
        if certify_regime(alpha, beta, T, n, x0, which, k_heat, **kwargs).valid:
            return n
    return None


# --------------------------------------------------------------------------
# events


@dataclass(frozen=True)
class EventSpec:
    """Blow-up event: a large first increment, then every later increment in ``window``.

    The first condition reads ``eta^{1/alpha} |Z_1| / noise_scale >= threshold``;
    the threshold is stored as its log since it may exceed the float range.
    """

    which: Theorem
    n: int
    eta: float
    alpha: float
    d: int
    noise_scale: float
    log_threshold: float
    window: RadiusWindow
    M: float = 1.0

    def __post_init__(self):
        if not math.isfinite(self.log_threshold):
            raise ValueError("event threshold must be positive and finite")
        lo, hi = 1.0 + self.eta, 2.0 + 2.0 * self.eta
        if not (math.isclose(self.window.lo, lo, rel_tol=1e-15) and math.isclose(self.window.hi, hi, rel_tol=1e-15)):
            raise ValueError(f"event window must be [1+eta, 2+2eta] = [{lo}, {hi}]")
        if self.M < 1.0:
            raise ValueError("M must be >= 1")

    @classmethod
    def surrogate(cls, n: int, T: float, alpha: float, threshold: float, d: int = 1) -> EventSpec:
        """Event for the Pareto scheme with a caller-chosen first-increment threshold."""
        eta = T / n
        sigma = C.pareto_sigma(StableParams(d, alpha))
        return cls(
            Theorem.THM2_PART2, n, eta, alpha, d, sigma, math.log(threshold),
            RadiusWindow(1.0 + eta, 2.0 + 2.0 * eta),
        )

    @property
    def threshold(self) -> float:
        try:
            return math.exp(self.log_threshold)
        except OverflowError:
            return math.inf

    @property
    def first_increment_threshold(self) -> float:
        return self.threshold

    @property
    def log_first_radius(self) -> float:
        """log of the smallest |Z_1| in the event."""
        return math.log(self.noise_scale) + self.log_threshold - math.log(self.eta) / self.alpha


def build_event(cert: RegimeCertificate, x0=None) -> EventSpec:
    if not cert.valid:
        names = ", ".join(c.name for c in cert.failing())
        raise ValueError(f"certificate is not valid (failing: {names})")
    x0 = np.atleast_1d(np.asarray(cert.x0 if x0 is None else x0, dtype=float))
    eta = cert.eta
    window = RadiusWindow(1.0 + eta, 2.0 + 2.0 * eta)
    if cert.which is Theorem.THM3:
        g0 = float(cert.diffusion.magnitude(x0[None, :])[0])
        if g0 == 0.0:
            raise ValueError("diffusion vanishes at x0")
        f0 = float(cert.drift.magnitude(norm(x0)))
        M = max(1.0, 1.0 / g0, float(norm(x0)) + cert.T * f0)
        log_thr = math.log(M) + math.log(cert.r_n + M)
    else:
        M = 1.0
        # log(a + exp(nK)) with a = |x0|(1 + log(1 + |x0|))
        log_thr = float(np.logaddexp(_x0_terms(float(norm(x0))), cert.n * cert.K))
    return EventSpec(cert.which, cert.n, eta, cert.alpha, cert.d, cert.noise_scale, log_thr, window, M)


def event_probability_exact(ev: EventSpec, p: Optional[StableParams] = None) -> float:
    """Natural log of the exact Pareto probability of the event.

    The increments are independent, so the mass factorizes into the first
    increment's tail and ``n - 1`` identical window masses.
    """
    if ev.which is Theorem.THM2_PART1:
        raise ValueError("exact event probabilities need Pareto increments")
    p = p or StableParams(ev.d, ev.alpha)
    log_r1 = ev.log_first_radius
    if log_r1 < 0.0:
        raise SupportGapError(
            f"first-increment radius {math.exp(log_r1):.6g} < 1 falls in the Pareto support gap"
        )
    return -p.alpha * log_r1 + (ev.n - 1) * log_window_probability(p, ev.window)


def proof_lower_bound(cert: RegimeCertificate, ev: EventSpec) -> float:
    """Natural log of the explicit closed-form lower bound on the event mass."""
    a, n, T = cert.alpha, cert.n, cert.T
    kap, sigma = cert.constants.kappa_alpha, cert.constants.sigma
    tail = -n * math.log(kap) - a * n * math.log1p(T / n)
    if cert.which is Theorem.THM3:
        return math.log(T) - math.log(n) - a * math.log(sigma * ev.M * (cert.r_n + ev.M)) + tail
    if cert.which is Theorem.THM2_PART1:
        raise ValueError("the stable-noise event has no explicit lower bound here")
    return math.log(T / (4.0 * sigma ** a)) - math.log(n) - a * n * cert.K + tail


def event_probability_mc(ev: EventSpec, draws: int, seed: int = 0, chunk: int = 1_000_000) -> tuple[float, float]:
    """Estimate the event mass from unconditioned Pareto draws: (estimate, stderr)."""
    p = StableParams(ev.d, ev.alpha)
    rng = make_rng(seed, 0xE7E)
    log_c = math.log(ev.eta) / ev.alpha - math.log(ev.noise_scale)
    hits, done = 0, 0
    while done < draws:
        m = min(chunk, draws - done)
        z1 = norm(sample_pareto_vector(rng, p, m))
        ok = log_c + np.log(z1) >= ev.log_threshold
        for _ in range(ev.n - 1):
            r = norm(sample_pareto_vector(rng, p, m))
            ok &= (r >= ev.window.lo) & (r <= ev.window.hi)
        hits += int(ok.sum())
        done += m
    est = hits / draws
    return est, math.sqrt(est * (1.0 - est) / draws)


# --------------------------------------------------------------------------
# conditioned paths


def log_polar_step(
    ell: np.ndarray,
    u: np.ndarray,
    eta: float,
    drift: Drift,
    diffusion: Diffusion,
    noise_log_radius: np.ndarray,
    noise_dir: np.ndarray,
    noise_scale: float,
) -> tuple[np.ndarray, np.ndarray]:
    """One EM step on states ``y = exp(ell) u``.

    Computes ``y + eta f(y) + noise_scale g(y) z`` with ``z = exp(rho) v`` by
    summing the terms relative to the largest one, so magnitudes far beyond
    the float range stay exact to working precision.
    """
    if not diffusion.isotropic:
        raise ValueError("log-polar stepping needs an isotropic diffusion")
    finite = np.isfinite(ell)
    ell_f = np.where(finite, ell, 0.0)
    logs, vecs = [], []
    logs.append(ell)
    vecs.append(u)
    log_L = np.log(np.logaddexp(0.0, ell_f))
    for t in drift.terms:
        if t.coef == 0.0:
            continue
        a = ell_f + math.log(eta) + math.log(abs(t.coef)) + t.power * ell_f
        if t.log_power:
            a = a + t.log_power * log_L
        logs.append(np.where(finite, a, -np.inf))
        vecs.append(math.copysign(1.0, t.coef) * u)
    if diffusion.scale != 0.0:
        a = math.log(noise_scale) + math.log(abs(diffusion.scale)) + noise_log_radius
        if diffusion.power:
            a = a + np.where(finite, diffusion.power * ell_f, -np.inf)
        logs.append(a)
        vecs.append(math.copysign(1.0, diffusion.scale) * noise_dir)
    A = np.stack(logs)
    top = A.max(axis=0)
    with np.errstate(invalid="ignore"):
        wts = np.exp(A - top)
    wts = np.where(np.isfinite(wts), wts, 0.0)
    w = np.einsum("tm,tmd->md", wts, np.stack(vecs))
    size = norm(w)
    with np.errstate(divide="ignore"):
        ell_new = top + np.log(size)
    safe = size > 0.0
    u_new = np.where(safe[:, None], w / np.where(safe, size, 1.0)[:, None], u)
    return ell_new, u_new


@dataclass
class ConditionedRun:
    """Log-magnitudes ``ell[path, m]`` of conditioned paths and the growth bound."""

    log_magnitude: np.ndarray
    log_bound: np.ndarray
    held_per_path: np.ndarray

    @property
    def held(self) -> bool:
        return bool(self.held_per_path.all())

    @property
    def fraction_held(self) -> float:
        return float(self.held_per_path.mean())

    @property
    def margin(self) -> np.ndarray:
        """Per path, ``min_m (ell_m - bound_m)``; non-negative iff the bound held."""
        return np.min(self.log_magnitude[:, 1:] - self.log_bound[None, 1:], axis=1)


def growth_log_bound(cert: RegimeCertificate) -> np.ndarray:
    """Natural-log lower bound on ``|Y_m|`` along the event, m = 0..n (m = 0 unused)."""
    m = np.arange(cert.n + 1, dtype=float)
    if cert.which is Theorem.THM3:
        out = cert.assumption.lam ** (m - 1.0) * math.log(cert.r_n)
    else:
        out = cert.tail_constant / cert.beta * (m - 1.0) + cert.n * cert.K
    out[0] = -math.inf
    return out


def simulate_conditioned_path(
    ev: EventSpec, cert: RegimeCertificate, paths: int = 1000, seed: int = 0
) -> ConditionedRun:
    """Run the surrogate scheme on noise drawn from the event and check the growth bound.

    Violations are returned as data (``held_per_path``), never raised.
    """
    if cert.which is Theorem.THM2_PART1:
        raise ValueError("conditioned sampling is exact only for Pareto increments")
    p = StableParams(ev.d, ev.alpha)
    rng = make_rng(seed, 0xC0D)
    x0 = np.asarray(cert.x0, dtype=float)
    r0 = float(norm(x0))
    ell = np.full(paths, math.log(r0) if r0 > 0.0 else -math.inf)
    u0 = x0 / r0 if r0 > 0.0 else np.eye(ev.d)[0]
    u = np.broadcast_to(u0, (paths, ev.d)).copy()
    out = np.empty((paths, ev.n + 1))
    out[:, 0] = ell

    # first increment: inverse CDF of the tail, in log space
    log_lo = max(ev.log_first_radius, 0.0)
    rho = log_lo - np.log1p(-rng.random(paths)) / ev.alpha
    v = sample_directions(rng, ev.d, paths)
    for m in range(1, ev.n + 1):
        if m > 1:
            z = sample_pareto_conditioned(rng, p, ev.window, paths)
            rho = np.log(norm(z))
            v = z / np.exp(rho)[:, None]
        ell, u = log_polar_step(ell, u, ev.eta, cert.drift, cert.diffusion, rho, v, ev.noise_scale)
        out[:, m] = ell
    bound = growth_log_bound(cert)
    held = np.all(out[:, 1:] >= bound[None, 1:], axis=1)
    return ConditionedRun(out, bound, held)


@dataclass(frozen=True)
class MomentLowerBound:
    log_bound: float
    log_growth_rate: Optional[float]


def growth_rate(cert: RegimeCertificate) -> float:
    """Per-step log growth ``beta K + c - alpha K - log c`` of the moment bound."""
    if cert.K is None:
        raise ValueError("growth rate is defined for the critical-drift results only")
    c = cert.tail_constant
    # grouped so that K = inf gives -inf rather than inf - inf
    return (cert.beta - cert.alpha) * cert.K + c - math.log(c)


def conditioned_moment_lower_bound(cert: RegimeCertificate, ev: EventSpec) -> MomentLowerBound:
    """log of ``P(event) * (growth bound at step n)^beta`` with the exact event mass."""
    if not cert.valid:
        raise ValueError("certificate is not valid")
    logp = event_probability_exact(ev)
    if cert.which is Theorem.THM3:
        return MomentLowerBound(logp + cert.beta * cert.assumption.lam ** (cert.n - 1) * math.log(cert.r_n), None)
    n, K = cert.n, cert.K
    return MomentLowerBound(logp + cert.tail_constant * (n - 1) + cert.beta * n * K, growth_rate(cert))


# --------------------------------------------------------------------------
# stable annulus mass (no closed form)


@dataclass(frozen=True)
class AnnulusCheck:
    z: float
    estimate: float
    stderr: float
    lower_bound: float

    @property
    def consistent(self) -> bool:
        """Estimate not significantly below ``1/(delta z^alpha)`` (4 standard errors)."""
        return self.estimate + 4.0 * self.stderr >= self.lower_bound


def stable_annulus_check(
    p: StableParams, z: float, k_heat: float = 1.0, draws: int = 10_000_000, seed: int = 0
) -> AnnulusCheck:
    """Monte-Carlo ``P(z <= |Z_1| <= 2z)`` for the stable law against its lower bound.

    The bound depends on the supplied heat-kernel constant, so a failure can
    mean that ``k_heat`` is too small rather than a sampler problem.
    """
    if not z > 1.0:
        raise ValueError("annulus bound is stated for z > 1")
    rng = make_rng(seed, 0x57A)
    hits, done, chunk = 0, 0, 1_000_000
    while done < draws:
        m = min(chunk, draws - done)
        r = norm(sample_isotropic_stable(rng, p, 1.0, m))
        hits += int(((r >= z) & (r <= 2.0 * z)).sum())
        done += m
    est = hits / draws
    bound = 1.0 / (C.delta(p, k_heat) * z ** p.alpha)
    return AnnulusCheck(z, est, math.sqrt(est * (1.0 - est) / draws), bound)
