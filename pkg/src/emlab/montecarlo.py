"""Path ensembles and streaming moment estimates of ``E|Y_k|^beta``.

Paths are split into fixed blocks of ``BLOCK_PATHS``; block ``b`` of a run
with master seed ``s`` and stream key ``key`` draws all of its noise from
``make_rng(s, *key, b)``.  All blocks advance in lockstep, one step at a time,
and a thread pool may step different blocks concurrently.  Block contents do
not depend on the pool width.  Sums over paths use :func:`math.fsum`, which
rounds exactly once, so every reported number is bit-identical for a given
seed regardless of thread count or scheduling.
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from emlab.dynamics import EmConfig, Model, PathState, Scheme, check_model, make_stepper, norm
from emlab.noise import make_rng, sample_increment

log = logging.getLogger(__name__)

BLOCK_PATHS = 4096


def default_threads() -> int:
    env = os.environ.get("EMLAB_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            log.warning("ignoring non-integer EMLAB_THREADS=%r", env)
    return 1


@dataclass(frozen=True)
class EnsembleConfig:
    paths: int
    record_every: int = 1
    betas: tuple[float, ...] = (2.0,)
    quantiles: tuple[float, ...] = (0.5, 0.9)
    trace: bool = False

    def __post_init__(self):
        if self.paths < 1:
            raise ValueError(f"need at least one path, got {self.paths}")
        if self.record_every < 1:
            raise ValueError(f"record_every must be >= 1, got {self.record_every}")
        object.__setattr__(self, "betas", tuple(float(b) for b in self.betas))
        object.__setattr__(self, "quantiles", tuple(float(q) for q in self.quantiles))
        if not self.betas:
            raise ValueError("need at least one moment order beta")
        for b in self.betas:
            if not 0.0 < b <= 2.0:
                raise ValueError(f"moment order beta must lie in (0, 2], got {b}")
        for q in self.quantiles:
            if not 0.0 < q < 1.0:
                raise ValueError(f"quantile levels must lie in (0, 1), got {q}")


@dataclass
class MomentReport:
    """Per recorded step: ``E|Y_k|^beta`` estimates, their standard errors,
    quantiles of ``|Y_k|`` and the number of saturated paths.

    A moment is ``+inf`` as soon as one path is saturated.  It can also be
    ``+inf`` if the sum of finite terms exceeds the float range, which
    ``overflow_count`` distinguishes.
    """

    steps: np.ndarray
    betas: tuple[float, ...]
    quantile_levels: tuple[float, ...]
    moments: np.ndarray
    moment_sem: np.ndarray
    quantiles: np.ndarray
    overflow_count: np.ndarray
    paths: int
    eta: float
    trace: Optional[np.ndarray] = field(default=None, repr=False)

    def row(self, k: int) -> int:
        idx = np.searchsorted(self.steps, k)
        if idx >= self.steps.size or self.steps[idx] != k:
            raise KeyError(f"step {k} was not recorded")
        return int(idx)

    def beta_index(self, beta: float) -> int:
        if not beta > 0.0:
            raise ValueError(f"moment order must be positive, got {beta}")
        for i, b in enumerate(self.betas):
            if math.isclose(b, beta, rel_tol=1e-12, abs_tol=0.0):
                return i
        raise KeyError(f"moment order {beta} not in recorded orders {self.betas}")

    def moment(self, k: int, beta: float) -> float:
        return float(self.moments[self.row(k), self.beta_index(beta)])

    def column(self, beta: float) -> np.ndarray:
        return self.moments[:, self.beta_index(beta)]


def moment_of_report(report: MomentReport, k: int, beta: float) -> float:
    return report.moment(k, beta)


def _fsum(values: np.ndarray) -> float:
    try:
        return math.fsum(values.tolist())
    except OverflowError:
        return math.inf


def _record(r: np.ndarray, ens: EnsembleConfig, saturated: int):
    m = r.size
    moments, sems = [], []
    with np.errstate(over="ignore"):
        for b in ens.betas:
            if saturated:
                moments.append(math.inf)
                sems.append(math.inf)
                continue
            v = r ** b
            mean = _fsum(v) / m
            if m > 1 and math.isfinite(mean):
                var = _fsum((v - mean) ** 2) / (m - 1)
                sem = math.sqrt(var / m)
            else:
                sem = math.inf if not math.isfinite(mean) else 0.0
            moments.append(mean)
            sems.append(sem)
    qs = np.quantile(r, ens.quantiles, method="inverted_cdf") if ens.quantiles else np.empty(0)
    return moments, sems, qs


def _recorded_steps(n: int, every: int) -> list[int]:
    steps = list(range(0, n + 1, every))
    if steps[-1] != n:
        steps.append(n)
    return steps


def run_ensemble(
    model: Model,
    cfg: EmConfig,
    ens: EnsembleConfig,
    threads: Optional[int] = None,
    stream: Sequence[int] = (),
) -> MomentReport:
    """Simulate ``ens.paths`` independent paths of ``cfg.scheme`` and aggregate.

    ``stream`` is prepended to the per-block stream key, so callers running
    several cells from one master seed (sweeps, batch means) keep them
    independent.
    """
    check_model(model, cfg.scheme, cfg.d)
    eta = cfg.eta
    step = make_stepper(model, cfg.scheme, eta)
    threads = default_threads() if threads is None else max(1, int(threads))

    sizes = [BLOCK_PATHS] * (ens.paths // BLOCK_PATHS)
    if ens.paths % BLOCK_PATHS:
        sizes.append(ens.paths % BLOCK_PATHS)
    rngs = [make_rng(cfg.seed, *stream, b) for b in range(len(sizes))]
    states = [PathState.start(cfg.x0, s) for s in sizes]

    def advance(b: int) -> PathState:
        z = sample_increment(rngs[b], model.noise, eta, sizes[b])
        return step(states[b], z)

    recorded = _recorded_steps(cfg.n, ens.record_every)
    rec_set = set(recorded)
    out_m, out_s, out_q, out_o, out_t = [], [], [], [], []

    def snapshot():
        y = np.concatenate([s.y for s in states])
        sat = int(sum(int(s.overflowed.sum()) for s in states))
        r = norm(y)
        m, se, q = _record(r, ens, sat)
        out_m.append(m)
        out_s.append(se)
        out_q.append(q)
        out_o.append(sat)
        if ens.trace:
            out_t.append(y.copy())

    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 and len(sizes) > 1 else None
    try:
        snapshot()
        for k in range(1, cfg.n + 1):
            if pool is None:
                states = [advance(b) for b in range(len(sizes))]
            else:
                states = list(pool.map(advance, range(len(sizes))))
            if k in rec_set:
                snapshot()
    finally:
        if pool is not None:
            pool.shutdown()

    nq = len(ens.quantiles)
    return MomentReport(
        steps=np.asarray(recorded, dtype=np.int64),
        betas=ens.betas,
        quantile_levels=ens.quantiles,
        moments=np.asarray(out_m, dtype=float).reshape(len(recorded), len(ens.betas)),
        moment_sem=np.asarray(out_s, dtype=float).reshape(len(recorded), len(ens.betas)),
        quantiles=np.asarray(out_q, dtype=float).reshape(len(recorded), nq),
        overflow_count=np.asarray(out_o, dtype=np.int64),
        paths=ens.paths,
        eta=eta,
        trace=np.stack(out_t) if ens.trace else None,
    )


@dataclass
class SweepTable:
    """Terminal-step moments for a sweep over the step count ``n``."""

    T: float
    n_values: tuple[int, ...]
    betas: tuple[float, ...]
    reports: list[MomentReport]

    @property
    def moments(self) -> np.ndarray:
        if not self.reports:
            return np.empty((0, len(self.betas)))
        return np.stack([r.moments[-1] for r in self.reports])

    @property
    def overflow_count(self) -> np.ndarray:
        return np.asarray([r.overflow_count[-1] for r in self.reports], dtype=np.int64)

    def moment(self, n: int, beta: float) -> float:
        i = self.n_values.index(n)
        return self.reports[i].moment(n, beta)

    def __len__(self) -> int:
        return len(self.n_values)


def sweep_blowup(
    model: Model,
    T: float,
    n_values: Sequence[int],
    ens: EnsembleConfig,
    x0=0.0,
    scheme: Scheme = Scheme.PARETO_CRITICAL,
    seed: int = 0,
    threads: Optional[int] = None,
) -> SweepTable:
    """One ensemble per step count; cell ``n`` uses stream key ``(n,)``.

    Keying by ``n`` itself (not its position) keeps a cell's numbers unchanged
    when the sweep grid is extended.
    """
    n_values = tuple(int(n) for n in n_values)
    if any(b <= a for a, b in zip(n_values, n_values[1:])):
        raise ValueError("n_values must be strictly increasing")
    reports = []
    for n in n_values:
        cfg = EmConfig(T=T, n=n, x0=np.atleast_1d(x0), scheme=scheme, seed=seed)
        cell = EnsembleConfig(ens.paths, record_every=n, betas=ens.betas, quantiles=ens.quantiles)
        log.info("sweep cell n=%d (eta=%.6g, %d paths)", n, cfg.eta, ens.paths)
        reports.append(run_ensemble(model, cfg, cell, threads=threads, stream=(n,)))
    return SweepTable(T=float(T), n_values=n_values, betas=ens.betas, reports=reports)
