import csv
import json

import numpy as np
import pytest
import yaml

from switchstein import cli


def _config(tmp_path, **values):
    base = {
        "problem": "p1_switching_gbm",
        "steps": ["2^-3", "2^-4", "2^-5"],
        "n_paths": 20,
        "seed": 3,
        "plots": False,
        "output": str(tmp_path / "out"),
    }
    base.update(values)
    path = tmp_path / "run.yaml"
    path.write_text(yaml.safe_dump(base))
    return str(path)


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# --------------------------------------------------------------- converge


def test_converge_writes_every_output(tmp_path, capsys):
    code = cli.main(["converge", "--config", _config(tmp_path, plots=True)])
    assert code == 0
    out = tmp_path / "out"
    rows = _rows(out / "convergence.csv")
    assert [r["scheme"] for r in rows] == ["milstein"] * 3 + ["euler"] * 3
    assert list(rows[0]) == ["scheme", "h", "n_paths", "mean_sup_sq_error", "rms_error", "std_err", "wall_ms"]
    assert all(r["wall_ms"] == "" for r in rows)
    for name in ("summary.json", "manifest.json", "loglog_milstein.dat", "loglog_euler.dat", "convergence.png"):
        assert (out / name).exists(), name
    summary = json.loads((out / "summary.json").read_text())
    assert set(summary["slopes"]) == {"milstein", "euler"}
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 3 and manifest["config"]["n_paths"] == 20
    assert "numpy" in manifest["versions"]
    assert "slope" in capsys.readouterr().out


def test_loglog_file_matches_csv(tmp_path):
    cli.main(["converge", "--config", _config(tmp_path), "--scheme", "milstein"])
    out = tmp_path / "out"
    data = np.loadtxt(out / "loglog_milstein.dat")
    rows = _rows(out / "convergence.csv")
    assert np.allclose(data[:, 0], np.log2([float(r["h"]) for r in rows]))
    assert np.allclose(data[:, 1], np.log2([float(r["rms_error"]) for r in rows]))


def test_converge_timings_flag(tmp_path):
    cli.main(["converge", "--config", _config(tmp_path), "--timings"])
    assert all(float(r["wall_ms"]) >= 0 for r in _rows(tmp_path / "out" / "convergence.csv"))


def test_flags_override_the_file(tmp_path):
    cli.main(["converge", "--config", _config(tmp_path), "--seed", "9", "--n-paths", "5",
              "--scheme", "milstein-ablated", "--out", str(tmp_path / "elsewhere")])
    rows = _rows(tmp_path / "elsewhere" / "convergence.csv")
    assert {r["scheme"] for r in rows} == {"milstein_ablated"}
    assert {r["n_paths"] for r in rows} == {"5"}


def test_converge_csv_is_byte_identical_across_runs_and_threads(tmp_path, monkeypatch):
    cfg = _config(tmp_path, problem="p2_noncommutative", batch_size=6)
    outputs = []
    for threads in ("1", "1", "3"):
        monkeypatch.setenv(cli.THREADS_ENV, threads)
        target = tmp_path / f"run{len(outputs)}"
        assert cli.main(["converge", "--config", cfg, "--out", str(target)]) == 0
        outputs.append((target / "convergence.csv").read_bytes() + (target / "loglog_milstein.dat").read_bytes())
    assert outputs[0] == outputs[1] == outputs[2]


# ------------------------------------------------------------ config errors


def test_unknown_problem_exits_2(tmp_path, capsys):
    assert cli.main(["converge", "--config", _config(tmp_path, problem="p7_mystery")]) == 2
    assert "p7_mystery" in capsys.readouterr().err


def test_unknown_key_exits_2(tmp_path, capsys):
    assert cli.main(["converge", "--config", _config(tmp_path, n_path=10)]) == 2
    assert "n_path" in capsys.readouterr().err


def test_missing_config_file_exits_2(tmp_path):
    assert cli.main(["converge", "--config", str(tmp_path / "absent.yaml")]) == 2


def test_unknown_problem_flag_is_rejected_by_the_parser(tmp_path):
    with pytest.raises(SystemExit) as info:
        cli.main(["converge", "--config", _config(tmp_path), "--problem", "nope"])
    assert info.value.code == 2


def test_step_at_inverse_rate_exits_2(tmp_path, capsys):
    cfg = _config(tmp_path, steps=[0.5, 0.25], generator=[[-2.0, 2.0], [2.0, -2.0]])
    assert cli.main(["converge", "--config", cfg]) == 2
    assert "h < 1/q" in capsys.readouterr().err


def test_step_in_warning_band_runs(tmp_path, capsys):
    cfg = _config(tmp_path, steps=[0.25, 0.125], generator=[[-2.0, 2.0], [2.0, -2.0]])
    assert cli.main(["converge", "--config", cfg]) == 0
    assert "1/(2q)" in capsys.readouterr().err


def test_bad_generator_exits_2(tmp_path):
    assert cli.main(["converge", "--config", _config(tmp_path, generator=[[-1.0, 2.0], [1.0, -1.0]])]) == 2
    assert cli.main(["converge", "--config", _config(tmp_path, generator=[[0.0]])]) == 2


def test_bad_params_exit_2(tmp_path):
    assert cli.main(["converge", "--config", _config(tmp_path, params={"volatility": 1})]) == 2


def test_runtime_failure_exits_3(tmp_path, monkeypatch, capsys):
    def broken(plan):
        raise RuntimeError("disk on fire")

    monkeypatch.setattr(cli, "run_strong_error", broken)
    assert cli.main(["converge", "--config", _config(tmp_path)]) == 3
    assert "disk on fire" in capsys.readouterr().err


def test_bad_thread_variable_exits_2(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.THREADS_ENV, "many")
    assert cli.main(["converge", "--config", _config(tmp_path)]) == 2


def test_step_strings():
    cfg = cli.load_config(overrides={"steps": ["2^-4", "2**-5", 0.125]})
    assert cfg.steps == [0.0625, 0.03125, 0.125]
    with pytest.raises(cli.ConfigError):
        cli.load_config(overrides={"steps": ["1/16"]})


def test_defaults_describe_the_desk_run():
    cfg = cli.load_config()
    assert cfg.problem == "p1_switching_gbm" and cfg.n_paths == 2000
    assert cfg.steps == [2.0**-k for k in range(4, 10)]


# ------------------------------------------------------------ chain-stats


def test_chain_stats_table(tmp_path):
    cfg = _config(tmp_path, steps=[0.1, 0.01], n_intervals=20_000, generator=[[-2.0, 2.0], [2.0, -2.0]])
    assert cli.main(["chain-stats", "--config", cfg]) == 0
    rows = _rows(tmp_path / "out" / "chain_stats.csv")
    assert len(rows) == 10
    for r in rows:
        q, h = float(r["q"]), float(r["h"])
        if r["quantity"].startswith("P(N>="):
            k = int(r["quantity"][5])
            assert float(r["bound"]) == pytest.approx((q * h) ** k)
        assert r["passed"] == "1"


def test_chain_stats_without_switching(tmp_path):
    cfg = _config(tmp_path, steps=[0.1], n_intervals=5000, generator=[[0.0]])
    assert cli.main(["chain-stats", "--config", cfg]) == 0
    rows = _rows(tmp_path / "out" / "chain_stats.csv")
    assert all(float(r["empirical"]) == 0.0 for r in rows)


def test_chain_stats_is_deterministic(tmp_path):
    cfg = _config(tmp_path, steps=[0.05], n_intervals=10_000, plots=True)
    first = tmp_path / "a"
    second = tmp_path / "b"
    cli.main(["chain-stats", "--config", cfg, "--out", str(first)])
    cli.main(["chain-stats", "--config", cfg, "--out", str(second)])
    assert (first / "chain_stats.csv").read_bytes() == (second / "chain_stats.csv").read_bytes()
    assert (first / "chain_stats_0.png").exists()


def test_chain_stats_step_too_large(tmp_path):
    assert cli.main(["chain-stats", "--config", _config(tmp_path, steps=[0.75], n_intervals=2000)]) == 2


# --------------------------------------------------------------- simulate


def test_simulate_zero_volatility_is_exponential(tmp_path):
    cfg = _config(tmp_path, problem="p3_single_regime", params={"a": 0.3, "s": 0.0})
    assert cli.main(["simulate", "--config", cfg, "--h", "2^-6"]) == 0
    rows = _rows(tmp_path / "out" / "trajectory.csv")
    y = np.array([float(r["Y1"]) for r in rows])
    assert len(rows) == 65
    assert np.all(np.diff(y) > 0)
    assert y[-1] == pytest.approx((1 + 0.3 / 64) ** 64, rel=1e-13)


def test_simulate_regime_column_follows_the_jumps(tmp_path):
    cfg = _config(tmp_path, generator=[[-1.9, 1.9], [1.9, -1.9]], seed=5)
    assert cli.main(["simulate", "--config", cfg, "--h", "2^-5", "--dump-path", "--scheme", "euler"]) == 0
    out = tmp_path / "out"
    traj = _rows(out / "trajectory.csv")
    jumps = _rows(out / "jumps.csv")
    assert jumps, "seed should produce at least one jump"
    times = np.array([float(j["time"]) for j in jumps])
    states = np.array([0] + [int(j["to_state"]) for j in jumps])
    for r in traj:
        t = float(r["t"])
        assert int(r["regime"]) == states[np.searchsorted(times, t, side="right")]
    brownian = _rows(out / "brownian.csv")
    assert float(brownian[0]["W1"]) == 0.0
    assert {float(j["time"]) for j in jumps} <= {float(b["t"]) for b in brownian}


def test_simulate_is_deterministic(tmp_path):
    cfg = _config(tmp_path, problem="p2_noncommutative", plots=True)
    for target in ("a", "b"):
        assert cli.main(["simulate", "--config", cfg, "--h", "2^-6", "--out", str(tmp_path / target)]) == 0
    assert (tmp_path / "a" / "trajectory.csv").read_bytes() == (tmp_path / "b" / "trajectory.csv").read_bytes()
    assert (tmp_path / "a" / "trajectory.png").exists()


def test_simulate_needs_one_step(tmp_path):
    assert cli.main(["simulate", "--config", _config(tmp_path)]) == 2


# --------------------------------------------------------- validate-model


@pytest.mark.parametrize("problem", sorted(cli.CATALOG))
def test_validate_model(tmp_path, problem):
    cfg = _config(tmp_path, problem=problem, probes=300)
    assert cli.main(["validate-model", "--config", cfg]) == 0
    result = json.loads((tmp_path / "out" / "validation.json").read_text())
    assert result["passed"] is True
    assert "lipschitz_milstein_product" in result["checks"]
