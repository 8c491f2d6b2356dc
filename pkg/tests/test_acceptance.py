"""Release acceptance gate: one test per criterion, each printing a PASS/FAIL line."""

import math
import time

import numpy as np

from emlab import cli
from emlab.constants import StableParams, pareto_sigma
from emlab.dynamics import AssumptionAParams, Diffusion, Drift, EmConfig, Model, Scheme, norm
from emlab.montecarlo import EnsembleConfig, run_ensemble, sweep_blowup
from emlab.noise import NoiseKind, make_rng, sample_isotropic_stable, sample_pareto_vector
from emlab.theory import (
    EventSpec,
    Theorem,
    build_event,
    certify_regime,
    event_probability_exact,
    event_probability_mc,
    proof_lower_bound,
    simulate_conditioned_path,
    smallest_valid_n,
)


# 1 -------------------------------------------------------------------------------


def test_1_pareto_law_exact(acceptance):
    t0 = time.perf_counter()
    N = 1_000_000
    worst = 0.0
    ok = True
    for i, alpha in enumerate((0.5, 1.0, 1.5)):
        r = norm(sample_pareto_vector(make_rng(101, i), StableParams(1, alpha), N))
        for z in (1.5, 2.0, 4.0, 8.0):
            for p, emp in (
                (z ** -alpha, np.mean(r >= z)),
                ((1 - 2.0 ** -alpha) * z ** -alpha, np.mean((r >= z) & (r <= 2 * z))),
            ):
                tol = 4 * math.sqrt(p * (1 - p) / N)
                worst = max(worst, abs(emp - p) / tol)
                ok &= abs(emp - p) <= tol
    wall = time.perf_counter() - t0
    ok &= wall < 10
    acceptance(1, ok, f"Pareto tail/annulus, worst |err|/tol = {worst:.3f}, {wall:.1f}s")
    assert ok


# 2 -------------------------------------------------------------------------------


def test_2_stable_normalization(acceptance):
    t0 = time.perf_counter()
    N = 1_000_000
    worst = 0.0
    for d in (1, 2):
        for alpha in (0.5, 1.0, 1.5):
            z = sample_isotropic_stable(make_rng(102, d, int(10 * alpha)), StableParams(d, alpha), 1.0, N)
            for m in (0.5, 1.0, 2.0):
                u = np.zeros(d)
                u[0] = m
                err = abs(np.cos(z @ u).mean() - math.exp(-(m ** alpha)))
                worst = max(worst, err)
    z = sample_isotropic_stable(make_rng(103), StableParams(1, 1.0), 1.0, N)[:, 0]
    q1, q3 = np.quantile(z, [0.25, 0.75])
    iq_err = max(abs(q1 + 1), abs(q3 - 1))
    wall = time.perf_counter() - t0
    ok = worst <= 0.005 and iq_err <= 0.01 and wall < 60
    acceptance(2, ok, f"max |E cos - exp(-|u|^a)| = {worst:.4f}, Cauchy quartile err = {iq_err:.4f}, {wall:.1f}s")
    assert ok


# 3 -------------------------------------------------------------------------------


def test_3_brownian_bounded(acceptance):
    t0 = time.perf_counter()
    model = Model(Drift.critical_log(), Diffusion.identity(), NoiseKind.gaussian(1))
    ok, parts = True, []
    for i, x0 in enumerate((1.0, 5.0, 10.0)):
        cfg = EmConfig(10.0, 10_000, (x0,), Scheme.BROWNIAN_CRITICAL, seed=3)
        rep = run_ensemble(model, cfg, EnsembleConfig(10_000, record_every=1, betas=(2.0,)), stream=(i,))
        m2 = rep.column(2.0)
        bounded = m2.max() <= x0 * x0 + 10.0
        decreasing = m2[-1] < m2[0] if x0 >= 5 else True
        ok &= bool(bounded and decreasing and not rep.overflow_count.any())
        parts.append(f"x0={x0:g}: max={m2.max():.4g} end={m2[-1]:.4g}")
    wall = time.perf_counter() - t0
    ok &= wall < 300
    acceptance(3, ok, "; ".join(parts) + f", {wall:.0f}s")
    assert ok


# 4 -------------------------------------------------------------------------------


def test_4_pareto_blowup(acceptance):
    t0 = time.perf_counter()
    ok, parts = True, []
    for alpha in (0.5, 1.0, 1.5):
        model = Model(Drift.critical_log(), Diffusion.identity(), NoiseKind.pareto(1, alpha))
        beta = alpha / 2
        table = sweep_blowup(model, 100.0, range(100, 146, 5), EnsembleConfig(100_000, betas=(beta,)), x0=1.0, seed=4)
        first, last = table.moment(100, beta), table.moment(145, beta)
        cell_ok = math.isinf(last) or (math.isfinite(first) and last >= 1e10 * first)
        ok &= cell_ok
        parts.append(f"alpha={alpha:g}: n=100 {first:.2e}, n=145 {last:.2e} ({table.overflow_count[-1]} saturated)")
    wall = time.perf_counter() - t0
    ok &= wall < 900
    acceptance(4, ok, "; ".join(parts) + f", {wall:.0f}s")
    assert ok


# 5 -------------------------------------------------------------------------------

THM2_REGIMES = [
    (1.0, 0.5, 100.0, 200, 1.0),
    (1.5, 0.75, 100.0, 100, 0.0),
    (0.5, 0.45, 100.0, 100, 2.0),
    (1.5, 1.2, 50.0, 60, -3.0),
    (1.0, 0.8, 20.0, 40, 0.5),
    (1.2, 0.9, 100.0, 150, (1.0, 1.0)),
]

THM3_MODELS = [
    (Drift.power_law(2.0), Diffusion.identity(), AssumptionAParams(3.0, 1.5, 1.0)),
    (Drift.power_law(3.0), Diffusion.scalar(2.0), AssumptionAParams(4.0, 2.0, 2.0)),
]


def thm3_regimes():
    out = []
    for alpha in (0.5, 1.0, 1.5):
        for j, (f, g, prm) in enumerate(THM3_MODELS):
            d = 1 + (j + int(alpha * 2)) % 2
            x0 = (0.5,) * d
            kw = dict(drift=f, diffusion=g, assumption=prm)
            n = max(8, smallest_valid_n(alpha, alpha / 2, 1.0, x0, Theorem.THM3, n_max=500, **kw))
            out.append(certify_regime(alpha, alpha / 2, 1.0, n, x0, Theorem.THM3, **kw))
    return out


def test_5_conditioned_growth(acceptance):
    t0 = time.perf_counter()
    certs = [certify_regime(*r) for r in THM2_REGIMES] + thm3_regimes()
    ok = all(c.valid for c in certs)
    n2 = sum(c.which is Theorem.THM2_PART2 for c in certs)
    n3 = sum(c.which is Theorem.THM3 for c in certs)
    violations, paths = 0, 0
    for i, cert in enumerate(certs):
        run = simulate_conditioned_path(build_event(cert), cert, paths=1000, seed=500 + i)
        violations += int((~run.held_per_path).sum())
        paths += run.held_per_path.size
    wall = time.perf_counter() - t0
    ok &= violations == 0 and n2 >= 5 and n3 >= 5 and wall < 120
    acceptance(5, ok, f"{n2} exponential + {n3} doubly-exponential regimes, {violations} violations over {paths} paths, {wall:.1f}s")
    assert ok


# 6 -------------------------------------------------------------------------------


def test_6_event_probability(acceptance):
    t0 = time.perf_counter()
    # n = 2, alpha = 1, T = 2: the threshold is set so that the first increment needs
    # |Z_1| >= 3; the certified threshold would give a mass near exp(-100), which no
    # raw simulation can resolve
    sigma = pareto_sigma(StableParams(1, 1.0))
    ev = EventSpec.surrogate(2, 2.0, 1.0, 3.0 / sigma)
    exact = math.exp(event_probability_exact(ev))
    draws = 10_000_000
    est, _ = event_probability_mc(ev, draws, seed=6)
    se = math.sqrt(exact * (1 - exact) / draws)
    mc_ok = abs(est - exact) <= 4 * se

    certs = [certify_regime(*r) for r in THM2_REGIMES] + thm3_regimes()
    margins = []
    for cert in certs:
        ev_c = build_event(cert)
        margins.append(event_probability_exact(ev_c) - proof_lower_bound(cert, ev_c))
    bound_ok = min(margins) >= 0
    wall = time.perf_counter() - t0
    ok = mc_ok and bound_ok and wall < 120
    acceptance(
        6, ok,
        f"exact {exact:.6f} vs simulated {est:.6f} ({abs(est - exact) / se:.2f} SE); "
        f"exact >= bound in {sum(m >= 0 for m in margins)}/{len(margins)} regimes (min log-margin {min(margins):.3f}), {wall:.1f}s",
    )
    assert ok


# 7 -------------------------------------------------------------------------------


def _run_cli(tmp_path, name, text, threads):
    cfg = tmp_path / f"{name}.cfg"
    out = tmp_path / f"{name}_t{threads}"
    cfg.write_text(text + f"output = {out}\n")
    assert cli.main(["run", str(cfg), "--threads", str(threads)]) == 0
    return {p.name: p.read_bytes() for p in sorted(out.glob("*.csv"))}


def test_7_deterministic_replay(tmp_path, acceptance):
    configs = {
        "table": "experiment = table\nalpha = 1.5\npaths = 9000\nseed = 17\n",
        "custom": "experiment = custom\nT = 5\nn = 200\nscheme = stable_critical\nalpha = 1.3\n"
                  "x0 = 1, -2\npaths = 10000\nrecord_every = 10\nbetas = 0.5, 1\nseed = 3\n",
    }
    ok, compared = True, 0
    for name, text in configs.items():
        ref = _run_cli(tmp_path, name, text, 1)
        for t in (2, 4):
            other = _run_cli(tmp_path, name, text, t)
            ok &= other == ref and bool(ref)
            compared += len(ref)
    acceptance(7, ok, f"{compared} CSV files byte-identical across 1/2/4 threads")
    assert ok
