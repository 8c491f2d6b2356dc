import dataclasses
import math

import numpy as np
import pytest

from emlab import cli
from emlab.dynamics import Diffusion, Drift, EmConfig, Model, Scheme
from emlab.montecarlo import EnsembleConfig, run_ensemble
from emlab.noise import NoiseKind
from emlab.theory import Theorem


def write_cfg(tmp_path, text, name="run.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return p


# --- grammar -------------------------------------------------------------------


def test_grammar_comments_and_whitespace():
    raw = cli.parse_config_text("# header\n\nexperiment = table   # trailing\n  alpha=1.5\n")
    assert raw == {"experiment": "table", "alpha": "1.5"}


@pytest.mark.parametrize(
    "text, fragment",
    [
        ("experiment = table\nalpah = 1\n", "unknown key"),
        ("alpha = 1\nalpha = 2\n", "duplicate key"),
        ("experiment table\n", "expected 'key = value'"),
    ],
)
def test_grammar_errors_name_the_line(text, fragment):
    with pytest.raises(cli.ConfigError, match=fragment):
        cli.parse_config_text(text, "x.cfg")


def test_missing_experiment_and_unknown_experiment():
    with pytest.raises(cli.ConfigError, match="experiment"):
        cli.build_config({"alpha": "1"})
    with pytest.raises(cli.ConfigError, match="unknown experiment"):
        cli.build_config({"experiment": "fig3"})


@pytest.mark.parametrize(
    "raw",
    [
        {"experiment": "fig1", "T": "5"},
        {"experiment": "fig2", "scheme": "pareto_critical"},
        {"experiment": "table", "alpha": "1", "n_values": "100,110"},
        {"experiment": "table", "alpha": "1", "betas": "0.5"},
    ],
)
def test_pinned_parameters_rejected(raw):
    with pytest.raises(cli.ConfigError, match="pins"):
        cli.build_config(raw)


def test_table_defaults():
    cfg = cli.build_config({"experiment": "table", "alpha": "1"})
    assert cfg.T == 100.0 and cfg.n_values == tuple(range(100, 146, 5))
    assert cfg.betas == (0.125, 0.25, 0.5)
    assert cfg.paths == 100_000 and cfg.x0 == (1.0,)


def test_domain_errors_become_config_errors():
    with pytest.raises(cli.ConfigError):
        cli.build_config({"experiment": "regime_check", "alpha": "1", "beta": "1", "T": "100", "n": "200"})
    with pytest.raises(cli.ConfigError):
        cli.build_config({"experiment": "table", "alpha": "2.5"})
    with pytest.raises(cli.ConfigError, match="unknown scheme"):
        cli.build_config({"experiment": "custom", "T": "1", "n": "4", "scheme": "rk4"})


def test_seed_override():
    cfg = cli.build_config({"experiment": "table", "alpha": "1", "seed": "3"}, seed=9)
    assert cfg.seed == 9
    with pytest.raises(cli.ConfigError):
        cli.build_config({"experiment": "table", "alpha": "1", "seed": "-1"})


# --- CSV formatting --------------------------------------------------------------


def test_format_value():
    assert cli.format_value(3) == "3"
    assert cli.format_value(np.int64(7)) == "7"
    assert cli.format_value(math.inf) == "+inf"
    assert cli.format_value(-math.inf) == "-inf"
    assert cli.format_value(1.0 / 3.0) == "0.33333333"
    assert cli.format_value(1.2345678912e-30) == "1.2345679e-30"


def test_single_row_report_csv(tmp_path):
    cfg = EmConfig(1.0, 1, (1.0,), Scheme.BROWNIAN_CRITICAL)
    model = Model(Drift.critical_log(), Diffusion.identity(), NoiseKind.gaussian(1))
    rep = run_ensemble(model, cfg, EnsembleConfig(3, betas=(2.0,), quantiles=()))
    one = slice(0, 1)
    rep_one = dataclasses.replace(
        rep, steps=rep.steps[one], moments=rep.moments[one], moment_sem=rep.moment_sem[one],
        quantiles=rep.quantiles[one], overflow_count=rep.overflow_count[one],
    )
    path = cli.emit_csv(rep_one, tmp_path / "one.csv")
    data = path.read_bytes()
    assert b"\r" not in data
    lines = data.decode().splitlines()
    assert len(lines) == 2
    assert lines[0] == "k,E|Y_k|^2,overflow_count"
    assert lines[1] == "0,1,0"


def test_saturated_cells_print_plus_inf(tmp_path):
    path = cli.write_csv(["n", "m"], [[145, math.inf]], tmp_path / "s.csv")
    assert path.read_text() == "n,m\n145,+inf\n"


def test_render_table_shows_infinity():
    text = cli.render_table(["n", "m"], [[100, 1.5e55], [145, math.inf]])
    assert "∞" in text and "1.5e+55" in text


# --- commands ----------------------------------------------------------------------


def test_missing_config_exits_nonzero(tmp_path, capsys):
    out = tmp_path / "out"
    code = cli.main(["run", str(tmp_path / "nope.cfg"), "--output", str(out)])
    assert code == 2
    assert not out.exists()
    assert "cannot read config" in capsys.readouterr().err


def test_bad_thread_count(tmp_path):
    p = write_cfg(tmp_path, "experiment = table\nalpha = 1\n")
    assert cli.main(["run", str(p), "--threads", "0"]) == 2


def test_regime_command_reports_constants(tmp_path, capsys):
    p = write_cfg(tmp_path, "experiment = regime_check\nalpha = 1\nbeta = 0.5\nT = 100\nn = 200\nx0 = 1\n")
    assert cli.main(["regime", str(p)]) == 0
    text = capsys.readouterr().out
    assert "K = 1.1174278" in text
    assert "growth rate (per step, natural log) = 0.7481389" in text
    assert "FAIL" not in text
    assert "certificate: VALID" in text


def test_regime_command_flags_large_step(tmp_path, capsys):
    p = write_cfg(tmp_path, "experiment = regime_check\nalpha = 1.5\nbeta = 0.75\nT = 100\nn = 20\n")
    assert cli.main(["regime", str(p)]) == 0
    text = capsys.readouterr().out
    assert "FAIL" in text and "certificate: INVALID" in text


def test_regime_command_needs_regime_config(tmp_path):
    p = write_cfg(tmp_path, "experiment = table\nalpha = 1\n")
    assert cli.main(["regime", str(p)]) == 2


def test_regime_check_csv(tmp_path):
    out = tmp_path / "o"
    p = write_cfg(tmp_path, f"experiment = regime_check\nalpha = 1\nbeta = 0.5\nT = 100\nn = 200\noutput = {out}\n")
    assert cli.main(["run", str(p)]) == 0
    lines = (out / "regime_check.csv").read_text().splitlines()
    assert lines[0] == "condition,lhs,relation,rhs,passed"
    assert all(line.endswith(",1") for line in lines[1:])


def test_fig1_small_run(tmp_path):
    out = tmp_path / "fig"
    p = write_cfg(tmp_path, f"experiment = fig1\npaths = 50\nx0_values = 1, 5\nrecord_every = 1000\noutput = {out}\n")
    assert cli.main(["run", str(p), "--seed", "2"]) == 0
    names = sorted(f.name for f in out.iterdir())
    assert names == ["fig1_x0_1.csv", "fig1_x0_5.csv", "manifest.txt"]
    lines = (out / "fig1_x0_5.csv").read_text().splitlines()
    assert len(lines) == 1 + 11
    assert lines[1].startswith("0,25,")
    manifest = (out / "manifest.txt").read_text()
    assert "seed = 2" in manifest and "experiment = fig1" in manifest
    assert "threads = " in manifest and "version = " in manifest


def test_table_run_saturates(tmp_path):
    out = tmp_path / "tab"
    p = write_cfg(tmp_path, f"experiment = table\nalpha = 1.5\npaths = 20000\nseed = 1\noutput = {out}\n")
    assert cli.main(["run", str(p)]) == 0
    lines = (out / "table_alpha1.5.csv").read_text().splitlines()
    assert lines[0] == "n,E|Y_n|^0.1875,E|Y_n|^0.375,E|Y_n|^0.75,overflow_count"
    assert len(lines) == 11
    last = lines[-1].split(",")
    assert last[0] == "145" and last[1:4] == ["+inf"] * 3 and int(last[4]) > 0
    first = lines[1].split(",")
    assert float(first[3]) > 1e100


def test_custom_sweep(tmp_path):
    out = tmp_path / "c"
    p = write_cfg(
        tmp_path,
        f"experiment = custom\nT = 1\nn_values = 4, 8\nscheme = general_pareto\nalpha = 1.2\n"
        f"drift = linear:-1\nx0 = 0.5, 0.5\npaths = 100\noutput = {out}\n",
    )
    assert cli.main(["run", str(p)]) == 0
    lines = (out / "custom_sweep.csv").read_text().splitlines()
    assert [l.split(",")[0] for l in lines[1:]] == ["4", "8"]


def test_event_check_command(tmp_path, capsys):
    out = tmp_path / "ev"
    p = write_cfg(tmp_path, f"experiment = event_check\nalpha = 1\nbeta = 0.5\nT = 100\nn = 200\npaths = 200\noutput = {out}\n")
    assert cli.main(["event-check", str(p)]) == 0
    assert "100.0%" in capsys.readouterr().out
    lines = (out / "event_check.csv").read_text().splitlines()
    assert len(lines) == 1 + 200
    assert all(line.endswith(",1") for line in lines[1:])


def test_event_check_rejects_invalid_regime(tmp_path):
    p = write_cfg(tmp_path, f"experiment = event_check\nalpha = 1.5\nbeta = 0.75\nT = 100\nn = 20\noutput = {tmp_path / 'x'}\n")
    assert cli.main(["event-check", str(p)]) == 2


def test_polynomial_regime_event_check(tmp_path):
    p = write_cfg(
        tmp_path,
        f"experiment = event_check\ntheorem = thm3\nalpha = 1\nbeta = 0.5\nT = 1\nn = 8\nx0 = 0.5\n"
        f"drift = power:2\ngamma = 3\nlambda = 1.5\nH = 1\npaths = 100\noutput = {tmp_path / 'p'}\n",
    )
    cfg = cli.load_config(p)
    assert cfg.theorem is Theorem.THM3
    assert cli.main(["event-check", str(p)]) == 0


def test_rerun_is_byte_identical(tmp_path):
    text = "experiment = custom\nT = 2\nn = 50\nscheme = pareto_critical\nalpha = 0.9\npaths = 300\nrecord_every = 5\nseed = 4\n"
    outs = []
    for i in range(2):
        out = tmp_path / f"r{i}"
        p = write_cfg(tmp_path, text + f"output = {out}\n", f"r{i}.cfg")
        assert cli.main(["run", str(p)]) == 0
        outs.append((out / "custom.csv").read_bytes())
    assert outs[0] == outs[1]
