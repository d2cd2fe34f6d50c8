import csv
import json

import numpy as np
import pytest

from bosonlab import cli
from bosonlab.config import (ExperimentConfig, dump_config, load_config, parse_config_text)
from bosonlab.errors import NumericalError, PreconditionError
from bosonlab.manybody import build_product_state, default_initial_field, propagate, save_checkpoint
from bosonlab.sweep import COLUMNS, METRICS, SweepReport, emit_plots, read_sweep_csv, run_sweep


def _small(tmp_path, **kw):
    base = dict(d=1, M=16, N_list=(2, 3), epsilon=0.4, T=0.02, dt=1e-3, snapshot_spacing=1e-2,
                beta=1 / 4, eta=1 / 4, output_dir=str(tmp_path / "out"))
    base.update(kw)
    return ExperimentConfig(**base)


# -- configuration ------------------------------------------------------------------------

def test_parse_config_grammar():
    text = """
    # a comment line
    M = 16          # trailing comment
    N = 2, 3, 4
    epsilon = none
    a = 0.5
    beta = 1e-1
    profile = square_well
    """
    vals = parse_config_text(text)
    assert vals == {"M": 16, "N_list": (2, 3, 4), "epsilon": None, "a": 0.5, "beta": 0.1,
                    "profile": "square_well"}


@pytest.mark.parametrize("text", ["bogus = 1", "M 16", "M = sixteen"])
def test_parse_config_errors(text):
    with pytest.raises(PreconditionError):
        parse_config_text(text)


def test_load_config_file_and_overrides(tmp_path):
    p = tmp_path / "exp.cfg"
    p.write_text("M = 16\nN_list = 2, 3\na = 0.5\n")
    cfg = load_config(p, T=0.2)
    assert (cfg.M, cfg.N_list, cfg.a, cfg.epsilon, cfg.T) == (16, (2, 3), 0.5, None, 0.2)
    assert cfg.snapshot_spacing == pytest.approx(10 * cfg.dt)
    back = load_config(_write(tmp_path / "dump.cfg", dump_config(cfg)))
    assert back.hash() == cfg.hash()


def _write(path, text):
    path.write_text(text)
    return path


def test_config_hash():
    a = ExperimentConfig()
    assert a.hash() == ExperimentConfig().hash()
    assert len(a.hash()) == 16
    assert ExperimentConfig(output_dir="elsewhere").hash() == a.hash()
    assert ExperimentConfig(M=64).hash() != a.hash()
    assert ExperimentConfig(seed=1).hash() != a.hash()


@pytest.mark.parametrize("kw", [dict(N_list=(3, 2)), dict(a=0.5), dict(k_max=3),
                                dict(T=0.1, snapshot_spacing=0.03), dict(M=8, epsilon=0.59),
                                dict(N_list=(5,), M=64), dict(beta=1 / 64)])
def test_validate_preflight(kw):
    with pytest.raises(PreconditionError):
        ExperimentConfig(**kw).validate()


def test_validate_warns_outside_epsilon_range():
    with pytest.warns(UserWarning):
        ExperimentConfig(epsilon=0.7).validate()


# -- sweeps --------------------------------------------------------------------------------

def test_sweep_smoke_row_count_and_invariants(tmp_path):
    cfg = ExperimentConfig(d=1, M=32, N_list=(2, 3), T=0.05, output_dir=str(tmp_path))
    rep = run_sweep(cfg)
    n_snap = len(rep.times)
    assert n_snap == 6
    assert len(rep.rows) == 2 * n_snap
    for d in rep.detail["per_N"]:
        for inv in d["invariants"]:
            assert inv["k1"] and inv["k2"]
            assert inv["compatibility"] <= 1e-9
            assert inv["hminus"] <= 1 + 1e-12
    h, rows = read_sweep_csv(rep.csv_path)
    assert h == cfg.hash()
    assert len(rows) == len(rep.rows)
    detail = json.loads(rep.json_path.read_text())
    assert detail["config_hash"] == cfg.hash()


def test_free_sweep_stays_factorized(tmp_path):
    rep = run_sweep(_small(tmp_path, v0=0.0, T=0.05), write=False)
    assert np.all(rep.column("trace_distance") <= 1e-8)


def test_sweep_is_deterministic(tmp_path):
    a = run_sweep(_small(tmp_path, output_dir=str(tmp_path / "a")))
    b = run_sweep(_small(tmp_path, output_dir=str(tmp_path / "b")))
    assert a.csv_path.read_bytes() == b.csv_path.read_bytes()


def test_sweep_columns(tmp_path):
    rep = run_sweep(_small(tmp_path), write=False)
    assert COLUMNS[:4] == ("N", "epsilon", "a", "t")
    r = rep.rows[0]
    assert r.t == 0.0 and r.trace_distance == pytest.approx(0.0, abs=1e-12)
    assert rep.N_values == [2, 3]


def test_plots(tmp_path):
    rep = run_sweep(_small(tmp_path), write=False)
    paths = emit_plots(rep, tmp_path / "plots")
    assert len(paths) == 2 * len(METRICS)
    assert all(p.suffix == ".svg" and p.stat().st_size > 0 for p in paths)


def test_empty_report_warns(tmp_path):
    rep = SweepReport(_small(tmp_path), [], {})
    with pytest.warns(UserWarning):
        assert emit_plots(rep, tmp_path / "none") == []
    assert not (tmp_path / "none").exists()


def test_aborted_sweep_keeps_finished_rows(tmp_path, monkeypatch):
    import bosonlab.sweep as sw
    real = sw.sweep_one

    def failing(cfg, N, kernels):
        if N == 3:
            raise NumericalError("injected")
        return real(cfg, N, kernels)

    monkeypatch.setattr(sw, "sweep_one", failing)
    cfg = _small(tmp_path)
    with pytest.raises(NumericalError):
        run_sweep(cfg)
    _, rows = read_sweep_csv(tmp_path / "out" / "sweep.csv")
    assert {r.N for r in rows} == {2}
    assert "injected" in json.loads((tmp_path / "out" / "sweep.json").read_text())["aborted"]


# -- command line --------------------------------------------------------------------------

def test_cli_check(capsys):
    assert cli.main(["check"]) == 0
    assert "FAIL" not in capsys.readouterr().out


def test_cli_precondition_exit_code(tmp_path, capsys):
    code = cli.main(["propagate", "--N", "5", "--M", "64", "--output-dir", str(tmp_path)])
    assert code == 2
    assert "largest admissible M" in capsys.readouterr().err


def test_cli_numerical_exit_code(monkeypatch):
    def boom(args):
        raise NumericalError("NaN")
    monkeypatch.setattr(cli, "cmd_check", boom)
    assert cli.main(["check"]) == 3


def test_cli_scattering(tmp_path, capsys):
    assert cli.main(["scattering", "--N", "100,1000,10000", "--output-dir", str(tmp_path)]) == 0
    with (tmp_path / "scattering.csv").open() as fh:
        assert len(list(csv.reader(fh))) == 4
    assert "fit" in capsys.readouterr().out


def test_cli_gp_marginals_residuals(tmp_path):
    flags = ["--M", "16", "--N", "2", "--T", "0.02", "--snapshot-spacing", "0.01",
             "--beta", "0.25", "--eta", "0.25", "--output-dir", str(tmp_path)]
    assert cli.main(["gp"] + flags) == 0
    assert len(list((tmp_path / "gp").glob("*.bin"))) == 3
    assert cli.main(["marginals"] + flags) == 0
    assert (tmp_path / "gamma_N2_k2.bin.json").exists()
    assert cli.main(["residuals"] + flags) == 0
    with (tmp_path / "residuals.csv").open() as fh:
        head = next(csv.reader(fh))
    assert head[0] == "# config_hash"


def test_cli_config_file_with_override(tmp_path, capsys):
    p = tmp_path / "run.cfg"
    p.write_text(f"M = 16\nN = 2\nT = 0.01\noutput_dir = {tmp_path}\n")
    assert cli.main(["propagate", "--config", str(p), "--T", "0.02"]) == 0
    assert "t=0.02" in capsys.readouterr().out


def test_cli_resume(tmp_path, capsys):
    flags = ["--M", "8", "--N", "2", "--a", "0.5", "--T", "0.02", "--beta", "0.25", "--eta", "0.25",
             "--output-dir", str(tmp_path)]
    cfg = cli._config(cli.build_parser().parse_args(["propagate"] + flags))
    mb = cfg.manybody(2)
    psi0 = build_product_state(default_initial_field(cfg.grid), 2)
    half = propagate(psi0, mb, 0.01)
    save_checkpoint(half, tmp_path / "psi_N2.bin", cfg.hash())
    assert cli.main(["propagate", "--resume"] + flags) == 0
    from bosonlab.manybody import load_checkpoint
    done = load_checkpoint(tmp_path / "psi_N2.bin", cfg.hash())
    assert done.time == pytest.approx(0.02)
    assert np.abs(done.values - propagate(psi0, mb, 0.02).values).max() < 1e-12
    # a checkpoint from another configuration is refused
    other = [f if f != "0.02" else "0.03" for f in flags]
    assert cli.main(["propagate", "--resume"] + other) == 2
