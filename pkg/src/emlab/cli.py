"""Batch front-end: ``emlab run|regime|event-check <config>``.

Config grammar (one setting per line)::

    # comment
    key = value        # trailing comments are allowed too

Vectors and lists are comma separated.  Recognized keys:

========================  ==================================================
experiment                fig1 | fig2 | table | regime_check | event_check | custom
seed                      master seed (``--seed`` overrides)
output                    output directory (default ``out``)
paths                     ensemble size M
alpha, beta, T, n         model / regime parameters
x0                        initial point (comma separated for d > 1)
x0_values                 initial points of the fig1/fig2 cells
n_values                  step counts of a table / custom sweep
betas, quantiles          moment orders and quantile levels
record_every              recording stride of trajectory experiments
scheme                    brownian_critical | stable_critical | pareto_critical |
                          general_stable | general_pareto (custom only)
drift                     critical_log | power:THETA | linear:C | zero
diffusion_scale/_power    isotropic diffusion ``c |x|^p I``
theorem                   thm2_part1 | thm2_part2 | thm3
k_heat                    heat-kernel constant for the stable-noise result
gamma, lambda, H          growth parameters of the polynomial-drift result
========================  ==================================================

Output columns
--------------
trajectory CSV (fig1, fig2, custom):  ``k, E|Y_k|^b..., q<level>..., overflow_count``
table CSV:                             ``n, E|Y_n|^b..., overflow_count``
event CSV:                             ``m, log10_bound, min_log10_norm, max_log10_norm, fraction_held``

Floats are written with 8 significant digits; saturated values as ``+inf``.
"""

from __future__ import annotations

import argparse
import io
import logging
import math
import os
import subprocess
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from emlab.dynamics import AssumptionAParams, Diffusion, Drift, EmConfig, Model, Scheme, check_model
from emlab.montecarlo import EnsembleConfig, default_threads, MomentReport, SweepTable, run_ensemble, sweep_blowup
from emlab.noise import NoiseKind
from emlab import theory

log = logging.getLogger("emlab")

EXPERIMENTS = ("fig1", "fig2", "table", "regime_check", "event_check", "custom")

_KNOWN_KEYS = {
    "experiment", "seed", "output", "paths", "alpha", "beta", "T", "n", "x0", "x0_values",
    "n_values", "betas", "quantiles", "record_every", "scheme", "drift", "diffusion_scale",
    "diffusion_power", "theorem", "k_heat", "gamma", "lambda", "H",
}


class ConfigError(ValueError):
    """Invalid configuration; the message names the violated condition."""


# --------------------------------------------------------------------------
# parsing


def parse_config_text(text: str, source: str = "<string>") -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _KNOWN_KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def _floats(s: str) -> tuple[float, ...]:
    return tuple(float(v) for v in s.split(",") if v.strip())


def _ints(s: str) -> tuple[int, ...]:
    vals = []
    for v in s.split(","):
        v = v.strip()
        if not v:
            continue
        if ":" in v:  # start:stop:step, stop inclusive
            a, b, c = (int(t) for t in v.split(":"))
            vals.extend(range(a, b + 1, c))
        else:
            vals.append(int(v))
    return tuple(vals)


def parse_drift(s: str) -> Drift:
    name, _, arg = s.partition(":")
    name = name.strip()
    if name == "critical_log":
        return Drift.critical_log()
    if name == "power":
        return Drift.power_law(float(arg))
    if name == "linear":
        return Drift.linear(float(arg) if arg else -1.0)
    if name == "zero":
        return Drift.zero()
    raise ConfigError(f"unknown drift {s!r} (expected critical_log, power:THETA, linear:C or zero)")


@dataclass
class RunConfig:
    experiment: str
    seed: int = 0
    output: Path = Path("out")
    paths: int = 10_000
    alpha: float = 2.0
    beta: Optional[float] = None
    T: float = 1.0
    n: int = 1
    x0: tuple[float, ...] = (1.0,)
    x0_values: tuple[float, ...] = ()
    n_values: tuple[int, ...] = ()
    betas: tuple[float, ...] = (2.0,)
    quantiles: tuple[float, ...] = (0.5, 0.9)
    record_every: int = 1
    scheme: Scheme = Scheme.BROWNIAN_CRITICAL
    drift: Drift = field(default_factory=Drift.critical_log)
    diffusion: Diffusion = field(default_factory=Diffusion.identity)
    theorem: theory.Theorem = theory.Theorem.THM2_PART2
    k_heat: float = 1.0
    assumption: Optional[AssumptionAParams] = None
    raw: dict = field(default_factory=dict)

    @property
    def eta(self) -> float:
        return self.T / self.n

    def model(self) -> Model:
        d = len(self.x0)
        if self.scheme is Scheme.BROWNIAN_CRITICAL or (self.scheme is Scheme.GENERAL_STABLE and self.alpha == 2.0):
            noise = NoiseKind.gaussian(d)
        elif self.scheme in (Scheme.STABLE_CRITICAL, Scheme.GENERAL_STABLE):
            noise = NoiseKind.stable(d, self.alpha)
        else:
            noise = NoiseKind.pareto(d, self.alpha)
        return Model(self.drift, self.diffusion, noise)

    def ensemble(self, record_every: Optional[int] = None) -> EnsembleConfig:
        return EnsembleConfig(self.paths, record_every or self.record_every, self.betas, self.quantiles)


# pinned parameters of the named experiments
_FIG_T = {"fig1": 10.0, "fig2": 100.0}
_FIG_N = 10_000
_TABLE_T = 100.0
_TABLE_N = tuple(range(100, 146, 5))


def build_config(raw: dict[str, str], seed: Optional[int] = None, output: Optional[str] = None) -> RunConfig:
    """Validate a parsed key-value mapping into a :class:`RunConfig`."""
    exp = raw.get("experiment")
    if exp is None:
        raise ConfigError("missing required key 'experiment'")
    if exp not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {exp!r}; expected one of {', '.join(EXPERIMENTS)}")
    try:
        return _build(exp, raw, seed, output)
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"invalid parameter: {exc}") from exc


def _build(exp: str, raw: dict[str, str], seed, output) -> RunConfig:
    g = raw.get
    cfg = RunConfig(experiment=exp, raw=dict(raw))
    cfg.seed = int(seed if seed is not None else g("seed", "0"))
    if cfg.seed < 0:
        raise ConfigError("seed must be non-negative")
    cfg.output = Path(output if output is not None else g("output", "out"))
    if "quantiles" in raw:
        cfg.quantiles = _floats(raw["quantiles"])
    if "record_every" in raw:
        cfg.record_every = int(raw["record_every"])

    if exp in ("fig1", "fig2"):
        for key in ("T", "n", "alpha", "scheme", "drift"):
            if key in raw:
                raise ConfigError(f"{exp} pins {key}; remove it from the config")
        cfg.T, cfg.n = _FIG_T[exp], _FIG_N
        cfg.alpha, cfg.scheme = 2.0, Scheme.BROWNIAN_CRITICAL
        cfg.x0_values = _floats(g("x0_values", "1,5,10"))
        cfg.paths = int(g("paths", "10000"))
        cfg.betas = _floats(g("betas", "2"))
    elif exp == "table":
        for key in ("T", "n_values", "betas", "scheme", "drift"):
            if key in raw:
                raise ConfigError(f"table pins {key}; remove it from the config")
        if "alpha" not in raw:
            raise ConfigError("table needs 'alpha'")
        cfg.alpha = float(raw["alpha"])
        cfg.T, cfg.n_values = _TABLE_T, _TABLE_N
        cfg.betas = (cfg.alpha / 8.0, cfg.alpha / 4.0, cfg.alpha / 2.0)
        cfg.scheme = Scheme.PARETO_CRITICAL
        cfg.x0 = _floats(g("x0", "1"))
        cfg.paths = int(g("paths", "100000"))
        cfg.model()
    elif exp in ("regime_check", "event_check"):
        for key in ("alpha", "beta", "T", "n"):
            if key not in raw:
                raise ConfigError(f"{exp} needs {key!r}")
        cfg.alpha, cfg.beta = float(raw["alpha"]), float(raw["beta"])
        cfg.T, cfg.n = float(raw["T"]), int(raw["n"])
        cfg.x0 = _floats(g("x0", "1"))
        cfg.theorem = theory.Theorem(g("theorem", "thm2_part2"))
        cfg.k_heat = float(g("k_heat", "1"))
        cfg.paths = int(g("paths", "1000"))
        if cfg.theorem is theory.Theorem.THM3:
            cfg.drift = parse_drift(g("drift", "power:2"))
            cfg.diffusion = Diffusion.monomial(float(g("diffusion_scale", "1")), float(g("diffusion_power", "0")))
            cfg.assumption = AssumptionAParams(float(g("gamma", "3")), float(g("lambda", "1.5")), float(g("H", "1")))
        # domain errors surface before anything runs
        theory.certify_regime(cfg.alpha, cfg.beta, cfg.T, cfg.n, cfg.x0, cfg.theorem, cfg.k_heat,
                              **_thm3_kwargs(cfg))
    else:  # custom
        for key in ("T", "scheme"):
            if key not in raw:
                raise ConfigError(f"custom needs {key!r}")
        cfg.T = float(raw["T"])
        try:
            cfg.scheme = Scheme(raw["scheme"])
        except ValueError:
            raise ConfigError(f"unknown scheme {raw['scheme']!r}") from None
        if "n_values" in raw:
            cfg.n_values = _ints(raw["n_values"])
        elif "n" in raw:
            cfg.n = int(raw["n"])
        else:
            raise ConfigError("custom needs 'n' or 'n_values'")
        cfg.alpha = float(g("alpha", "2"))
        cfg.x0 = _floats(g("x0", "1"))
        cfg.paths = int(g("paths", "10000"))
        cfg.betas = _floats(g("betas", "2"))
        cfg.drift = parse_drift(g("drift", "critical_log"))
        cfg.diffusion = Diffusion.monomial(float(g("diffusion_scale", "1")), float(g("diffusion_power", "0")))
        # construct everything once so domain violations are reported up front
        model = cfg.model()
        check_model(model, cfg.scheme, len(cfg.x0))
        for n in cfg.n_values or (cfg.n,):
            EmConfig(cfg.T, n, cfg.x0, cfg.scheme, cfg.seed)
    if exp in ("fig1", "fig2", "table", "custom"):
        cfg.ensemble()
    return cfg


def _thm3_kwargs(cfg: RunConfig) -> dict:
    if cfg.theorem is not theory.Theorem.THM3:
        return {}
    return dict(drift=cfg.drift, diffusion=cfg.diffusion, assumption=cfg.assumption)


def load_config(path, seed: Optional[int] = None, output: Optional[str] = None) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from exc
    return build_config(parse_config_text(text, str(path)), seed, output)


# --------------------------------------------------------------------------
# output


def format_value(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    v = float(v)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "+inf" if v > 0 else "-inf"
    return "%.8g" % v


def _label(x: float) -> str:
    return format(x, "g")


def csv_text(header: Sequence[str], rows: Sequence[Sequence]) -> str:
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for r in rows:
        buf.write(",".join(format_value(v) for v in r) + "\n")
    return buf.getvalue()


def write_csv(header: Sequence[str], rows: Sequence[Sequence], path) -> Path:
    path = Path(path)
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(csv_text(header, rows))
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write {path}: {exc.strerror}") from exc
    return path


def report_rows(report: MomentReport) -> tuple[list[str], list[list]]:
    header = ["k"] + [f"E|Y_k|^{_label(b)}" for b in report.betas]
    header += [f"q{_label(100.0 * q)}" for q in report.quantile_levels] + ["overflow_count"]
    rows = []
    for i, k in enumerate(report.steps):
        rows.append([int(k), *report.moments[i], *report.quantiles[i], int(report.overflow_count[i])])
    return header, rows


def emit_csv(report: MomentReport, path) -> Path:
    """Write a trajectory report as CSV (one row per recorded step)."""
    if report.steps.size == 0:
        raise ValueError("cannot emit an empty report")
    return write_csv(*report_rows(report), path)


def sweep_rows(table: SweepTable) -> tuple[list[str], list[list]]:
    header = ["n"] + [f"E|Y_n|^{_label(b)}" for b in table.betas] + ["overflow_count"]
    rows = [[n, *table.moments[i], int(table.overflow_count[i])] for i, n in enumerate(table.n_values)]
    return header, rows


def emit_sweep_csv(table: SweepTable, path) -> Path:
    if len(table) == 0:
        raise ValueError("cannot emit an empty sweep")
    return write_csv(*sweep_rows(table), path)


def render_table(header: Sequence[str], rows: Sequence[Sequence]) -> str:
    """Aligned plain-text table; infinite values shown as the infinity sign."""
    cells = [[str(h) for h in header]]
    for r in rows:
        out = []
        for v in r:
            s = v if isinstance(v, str) else format_value(v)
            out.append(s.replace("+inf", "∞").replace("-inf", "-∞"))
        cells.append(out)
    widths = [max(len(row[j]) for row in cells) for j in range(len(header))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


def package_version() -> str:
    here = Path(__file__).resolve().parent
    try:
        res = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            cwd=here, capture_output=True, text=True, timeout=5, check=False,
        )
        if res.returncode == 0 and res.stdout.strip():
            return res.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    from importlib.metadata import PackageNotFoundError, version

    try:
        return version("artifact")
    except PackageNotFoundError:
        return "unknown"


def write_manifest(cfg: RunConfig, config_path, files: Sequence[Path], wall: float, threads) -> Path:
    lines = [
        f"experiment = {cfg.experiment}",
        f"config = {config_path}",
        f"seed = {cfg.seed}",
        f"version = {package_version()}",
        f"threads = {threads if threads is not None else default_threads()}",
        f"wall_time_s = {wall:.3f}",
        f"files = {','.join(p.name for p in files)}",
    ]
    lines += [f"config.{k} = {v}" for k, v in sorted(cfg.raw.items())]
    path = cfg.output / "manifest.txt"
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("\n".join(lines) + "\n")
    return path


# --------------------------------------------------------------------------
# experiments; each returns ``[(filename, header, rows), ...]`` without writing


def _trajectory_cells(cfg: RunConfig, threads):
    out = []
    ens = cfg.ensemble()
    model = cfg.model() if cfg.experiment == "custom" else Model(Drift.critical_log(), Diffusion.identity(), NoiseKind.gaussian(1))
    if cfg.experiment == "custom":
        ecfg = EmConfig(cfg.T, cfg.n, cfg.x0, cfg.scheme, cfg.seed)
        out.append(("custom.csv", *report_rows(run_ensemble(model, ecfg, ens, threads))))
        return out
    for i, x0 in enumerate(cfg.x0_values):
        ecfg = EmConfig(cfg.T, cfg.n, (x0,), cfg.scheme, cfg.seed)
        log.info("%s: x0=%g, %d paths, n=%d", cfg.experiment, x0, cfg.paths, cfg.n)
        rep = run_ensemble(model, ecfg, ens, threads, stream=(i,))
        out.append((f"{cfg.experiment}_x0_{_label(x0)}.csv", *report_rows(rep)))
    return out


def _sweep_cells(cfg: RunConfig, threads, name: str):
    ens = cfg.ensemble()
    table = sweep_blowup(cfg.model(), cfg.T, cfg.n_values, ens, cfg.x0, cfg.scheme, cfg.seed, threads)
    return [(name, *sweep_rows(table))]


def regime_report(cfg: RunConfig) -> str:
    """Human-readable precondition table plus the derived quantities."""
    cert = theory.certify_regime(cfg.alpha, cfg.beta, cfg.T, cfg.n, cfg.x0, cfg.theorem, cfg.k_heat, **_thm3_kwargs(cfg))
    rows = [[c.name, c.lhs, c.relation, c.rhs, "pass" if c.passed else "FAIL"] for c in cert.conditions]
    lines = [
        f"regime {cert.which.value}: alpha={cfg.alpha:g} beta={cfg.beta:g} T={cfg.T:g} n={cfg.n} "
        f"x0={','.join(_label(v) for v in cert.x0)}",
        render_table(["condition", "lhs", "rel", "rhs", "status"], rows),
    ]
    if cert.K is not None:
        lines.append(f"K = {format_value(cert.K)}")
    if cert.r_n is not None:
        lines.append(f"r_n = {format_value(cert.r_n)}")
    if cert.valid and cert.which is not theory.Theorem.THM2_PART1:
        ev = theory.build_event(cert)
        try:
            lp = theory.event_probability_exact(ev)
            lines.append(f"log10 P(event) = {format_value(lp / math.log(10.0))}")
            lines.append(f"log10 explicit lower bound = {format_value(theory.proof_lower_bound(cert, ev) / math.log(10.0))}")
            mb = theory.conditioned_moment_lower_bound(cert, ev)
            lines.append(f"log10 moment lower bound = {format_value(mb.log_bound / math.log(10.0))}")
            if mb.log_growth_rate is not None:
                lines.append(f"moment bound growth rate (per step, natural log) = {format_value(mb.log_growth_rate)}")
        except theory.SupportGapError as exc:
            lines.append(f"event probability: {exc}")
    elif cert.K is not None:
        lines.append(f"moment bound growth rate (per step, natural log) = {format_value(theory.growth_rate(cert))}")
    lines.append("certificate: " + ("VALID" if cert.valid else "INVALID"))
    return "\n".join(lines)


def _event_cells(cfg: RunConfig):
    cert = theory.certify_regime(cfg.alpha, cfg.beta, cfg.T, cfg.n, cfg.x0, cfg.theorem, cfg.k_heat, **_thm3_kwargs(cfg))
    if not cert.valid:
        names = "; ".join(c.name for c in cert.failing())
        raise ConfigError(f"regime is not certified (failing: {names})")
    ev = theory.build_event(cert)
    run = theory.simulate_conditioned_path(ev, cert, cfg.paths, cfg.seed)
    ln10 = math.log(10.0)
    rows = []
    for m in range(1, cert.n + 1):
        col = run.log_magnitude[:, m]
        rows.append([m, run.log_bound[m] / ln10, col.min() / ln10, col.max() / ln10,
                     float(np.mean(col >= run.log_bound[m]))])
    header = ["m", "log10_bound", "min_log10_norm", "max_log10_norm", "fraction_held"]
    return [("event_check.csv", header, rows)], run


def execute(cfg: RunConfig, threads=None) -> list[tuple[str, list[str], list[list]]]:
    """Run an experiment and return its CSV cells (nothing is written)."""
    if cfg.experiment in ("fig1", "fig2"):
        return _trajectory_cells(cfg, threads)
    if cfg.experiment == "table":
        return _sweep_cells(cfg, threads, f"table_alpha{_label(cfg.alpha)}.csv")
    if cfg.experiment == "custom":
        if cfg.n_values:
            return _sweep_cells(cfg, threads, "custom_sweep.csv")
        return _trajectory_cells(cfg, threads)
    if cfg.experiment == "event_check":
        return _event_cells(cfg)[0]
    # regime_check: one-row CSV per condition
    cert = theory.certify_regime(cfg.alpha, cfg.beta, cfg.T, cfg.n, cfg.x0, cfg.theorem, cfg.k_heat, **_thm3_kwargs(cfg))
    rows = [[c.name.replace(",", ";"), c.lhs, c.relation, c.rhs, int(c.passed)] for c in cert.conditions]
    return [("regime_check.csv", ["condition", "lhs", "relation", "rhs", "passed"], rows)]


def _prepare_output(path: Path) -> None:
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"output path {path} is not writable: {exc.strerror}") from exc
    if not os.access(path, os.W_OK):
        raise ConfigError(f"output path {path} is not writable")


def _write_cells(cfg: RunConfig, cells, config_path, wall, threads) -> list[Path]:
    files = [write_csv(header, rows, cfg.output / name) for name, header, rows in cells]
    files.append(write_manifest(cfg, config_path, files, wall, threads))
    return files


# --------------------------------------------------------------------------
# entry point


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="emlab", description="Euler-Maruyama blow-up experiments")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in (
        ("run", "run the configured experiment and write CSV files"),
        ("regime", "print the precondition table of a regime"),
        ("event-check", "replay conditioned paths of a certified regime"),
    ):
        s = sub.add_parser(name, help=help_)
        s.add_argument("config")
        s.add_argument("--seed", type=int, default=None, help="override the config seed")
        s.add_argument("--threads", type=int, default=None, help="worker threads (default: $EMLAB_THREADS or 1)")
        s.add_argument("--output", default=None, help="override the output directory")
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    if args.threads is not None and args.threads < 1:
        print("emlab: --threads must be >= 1", file=sys.stderr)
        return 2
    try:
        cfg = load_config(args.config, args.seed, args.output)
        if args.command == "regime":
            if cfg.experiment not in ("regime_check", "event_check"):
                raise ConfigError(f"'regime' needs a regime_check or event_check config, got {cfg.experiment}")
            print(regime_report(cfg))
            return 0
        if args.command == "event-check":
            if cfg.experiment not in ("regime_check", "event_check"):
                raise ConfigError(f"'event-check' needs a regime_check or event_check config, got {cfg.experiment}")
            t0 = time.perf_counter()
            cells, run = _event_cells(cfg)
            wall = time.perf_counter() - t0
            _prepare_output(cfg.output)
            _write_cells(cfg, cells, args.config, wall, args.threads)
            print(f"{run.fraction_held:.1%} of {cfg.paths} conditioned paths met the growth bound at every step")
            return 0 if run.held else 1
        t0 = time.perf_counter()
        _prepare_output(cfg.output)
        cells = execute(cfg, args.threads)
        wall = time.perf_counter() - t0
        files = _write_cells(cfg, cells, args.config, wall, args.threads)
        for name, header, rows in cells:
            if len(rows) <= 20:
                print(f"{name}:\n{render_table(header, rows)}\n")
        print(f"wrote {len(files)} files to {cfg.output} in {wall:.1f}s")
        return 0
    except ConfigError as exc:
        print(f"emlab: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"emlab: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
