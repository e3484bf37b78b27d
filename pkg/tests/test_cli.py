"""End-to-end checks of the config-driven command line runner."""

import json
import math
from pathlib import Path

import numpy as np
import pytest

from dirac_lap.cli import (
    ConfigError,
    main,
    parse_config,
    parse_config_data,
    run,
)
from dirac_lap.clifford import build_dirac_matrices
from dirac_lap.kernels import schrodinger_kernel

MINIMAL = {
    "n": 2,
    "m": 0,
    "V": "zero",
    "grid": {"L": 8, "points": 32},
    "sigma": 0.6,
    "subcommand": "lap-sweep",
    "lambda_grid": [1, 2, 4],
}


def _write(tmp_path, data, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(data), encoding="utf-8")
    return path


def _small_lap(**overrides):
    # 16^2 keeps the dense solves fast inside the test suite
    data = dict(MINIMAL)
    data["grid"] = {"L": 6, "points": 16}
    data.update(overrides)
    return data


def _read_csv(path):
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return lines[0].split(","), [line.split(",") for line in lines[1:]]


# --------------------------------------------------------------------------
# parsing and validation


def test_minimal_config_accepted(tmp_path):
    config = parse_config(_write(tmp_path, MINIMAL))
    assert config.subcommand == "lap-sweep"
    assert config.n == 2
    assert config.mass == 0.0
    assert config.potential is None
    assert (config.grid.L, config.grid.points_per_axis) == (8.0, 32)
    assert config.sigma == 0.6
    assert config.blocks["lambda_grid"] == [1.0, 2.0, 4.0]


def test_zero_potential_spellings_agree(tmp_path):
    via_string = parse_config(_write(tmp_path, MINIMAL, "a.json"))
    alt = dict(MINIMAL)
    del alt["V"]
    alt["potential"] = {"kind": "zero"}
    via_object = parse_config(_write(tmp_path, alt, "b.json"))
    assert via_string == via_object


def test_all_violations_reported_together(tmp_path):
    bad = dict(MINIMAL, n=4, m=-1, sigma=0.4, lambda_grid=[])
    with pytest.raises(ConfigError) as err:
        parse_config(_write(tmp_path, bad))
    assert len(err.value.violations) >= 4
    text = "\n".join(err.value.violations)
    for field in ("n:", "m:", "sigma:", "lambda_grid:"):
        assert field in text


def test_weight_rule_cited_for_small_sigma(tmp_path):
    with pytest.raises(ConfigError) as err:
        parse_config(_write(tmp_path, dict(MINIMAL, sigma=0.4)))
    [violation] = err.value.violations
    assert violation.startswith("sigma:")
    assert "1/2" in violation


def test_massive_threshold_needs_sigma_above_one(tmp_path):
    data = {
        "n": 3,
        "m": 1.0,
        "potential": {"kind": "gaussian_bump", "coupling": -1.0, "decay": 2.0},
        "grid": {"L": 4, "points": 8},
        "sigma": 0.9,
        "subcommand": "threshold",
    }
    with pytest.raises(ConfigError) as err:
        parse_config(_write(tmp_path, data))
    [violation] = err.value.violations
    assert "exceed 1 when mass > 0" in violation


def test_two_dimensional_massive_threshold_rejected(tmp_path):
    data = {
        "n": 2,
        "m": 1.0,
        "V": "zero",
        "grid": {"L": 4, "points": 8},
        "sigma": 1.1,
        "subcommand": "threshold",
    }
    with pytest.raises(ConfigError) as err:
        parse_config(_write(tmp_path, data))
    assert any("dimension 3" in v for v in err.value.violations)


def test_inadmissible_massless_query_prints_inequality(tmp_path):
    data = {
        "n": 2,
        "m": 0,
        "V": "zero",
        "grid": {"L": 8, "points": 16, "periodic": True},
        "subcommand": "strichartz",
        "queries": [{"p": 4, "q": 4, "theta": 0.25, "time_window": 3.0}],
    }
    with pytest.raises(ConfigError) as err:
        parse_config(_write(tmp_path, data))
    assert any("2/p + (n-1)/q <= (n-1)/2" in v for v in err.value.violations)


def test_evolve_requires_periodic_grid_and_window(tmp_path):
    data = {
        "n": 2,
        "m": 0,
        "V": "zero",
        "grid": {"L": 6, "points": 16},
        "sigma": 1.0,
        "subcommand": "evolve",
        "times": [0.0, 5.0],
    }
    with pytest.raises(ConfigError) as err:
        parse_config(_write(tmp_path, data))
    text = "\n".join(err.value.violations)
    assert "grid.periodic" in text
    assert "L/2" in text


def test_directed_config_checks_caps_and_resolution(tmp_path):
    data = {
        "n": 2,
        "m": 0,
        "potential": {"kind": "compact_smooth", "coupling": -0.5, "decay": 2.0, "radius": 2.0},
        "grid": {"L": 6, "points": 16},
        "subcommand": "directed",
        "partition_delta": 0.4,
        "products": [
            {"indices": [0, 99], "z": 2.0, "d": 1.0},
            {"indices": [0, 1], "z": 50.0, "d": 1.0},
        ],
    }
    with pytest.raises(ConfigError) as err:
        parse_config(_write(tmp_path, data))
    text = "\n".join(err.value.violations)
    assert "out of range" in text
    assert "resolve" in text


def test_config_echo_round_trips(tmp_path):
    config = parse_config(_write(tmp_path, _small_lap()))
    report = run(config, tmp_path / "out")
    assert parse_config_data(report.config_echo) == config
    echoed = json.loads((tmp_path / "out" / "summary.json").read_text())["config_echo"]
    assert parse_config_data(echoed) == config


# --------------------------------------------------------------------------
# dispatch and report content


def test_matrices_json_matches_builder(tmp_path):
    config = parse_config_data({"n": 3, "subcommand": "matrices"})
    report = run(config, tmp_path / "out")
    assert report.status == 0
    payload = json.loads((tmp_path / "out" / "matrices.json").read_text())
    mats = build_dirac_matrices(3)
    assert payload["spinor_dim"] == 4
    for j, alpha in enumerate(mats.alphas):
        got = np.array(payload["alpha"][j]["re"]) + 1j * np.array(payload["alpha"][j]["im"])
        assert np.array_equal(got, alpha)
    got_beta = np.array(payload["beta"]["re"]) + 1j * np.array(payload["beta"]["im"])
    assert np.array_equal(got_beta, mats.beta)


def test_kernel_dump_columns_recombine(tmp_path):
    config = parse_config_data(
        {
            "n": 2,
            "subcommand": "kernel-dump",
            "z": 2.0,
            "r_min": 0.05,
            "r_max": 4.0,
            "samples": 64,
        }
    )
    report = run(config, tmp_path / "out")
    assert report.status == 0
    header, rows = _read_csv(tmp_path / "out" / "kernel.csv")
    assert header == ["r", "Re", "Im", "osc_Re", "osc_Im", "loc_Re", "loc_Im"]
    assert len(rows) == 64
    for row in rows:
        r, re, im, osc_re, osc_im, loc_re, loc_im = map(float, row)
        assert re == pytest.approx(osc_re + loc_re, abs=1e-15)
        assert im == pytest.approx(osc_im + loc_im, abs=1e-15)
        exact = schrodinger_kernel(2, 2.0, r)
        assert re + 1j * im == pytest.approx(exact, rel=1e-12)


def test_lap_sweep_summary_and_table(tmp_path):
    config = parse_config(_write(tmp_path, _small_lap()))
    report = run(config, tmp_path / "out")
    assert report.status == 0
    header, rows = _read_csv(tmp_path / "out" / "lap_sweep.csv")
    assert header == ["lambda", "gamma", "norm_weighted", "norm_b_bstar", "cond", "flag"]
    assert [float(r[0]) for r in rows] == [1.0, 2.0, 4.0]
    assert all(float(r[2]) > 0 for r in rows)
    summary = json.loads((tmp_path / "out" / "summary.json").read_text())
    assert summary["status"] == 0
    assert summary["tables"] == ["lap_sweep.csv"]
    assert len(summary["config_sha256"]) == 64
    assert "total" in summary["stages_seconds"]
    assert summary["backend"] in ("numba", "numpy")


def test_complex_sweep_gap_monotone(tmp_path):
    data = {
        "n": 2,
        "m": 0,
        "potential": {"kind": "gaussian_bump", "coupling": -0.3, "decay": 2.0},
        "grid": {"L": 6, "points": 12},
        "sigma": 0.8,
        "subcommand": "complex-sweep",
        "lambda": 2.0,
        "gamma_grid": [0.1, 0.05, 0.025],
    }
    config = parse_config(_write(tmp_path, data))
    report = run(config, tmp_path / "out")
    assert report.status == 0
    gaps = report.extras["boundary_gap"]
    assert gaps[0] > gaps[1] > gaps[2] > 0
    header, rows = _read_csv(tmp_path / "out" / "complex_sweep.csv")
    assert [float(r[1]) for r in rows] == [0.1, 0.05, 0.025]


def test_evolve_rows_are_unitary(tmp_path):
    data = {
        "n": 2,
        "m": 0,
        "V": "zero",
        "grid": {"L": 6, "points": 12, "periodic": True},
        "sigma": 1.0,
        "subcommand": "evolve",
        "times": [0.0, 1.0, 2.0],
        "seed": 11,
    }
    config = parse_config(_write(tmp_path, data))
    report = run(config, tmp_path / "out")
    assert report.status == 0
    _, rows = _read_csv(tmp_path / "out" / "evolve.csv")
    for row in rows:
        assert float(row[1]) == pytest.approx(1.0, abs=1e-8)
        assert 0 < float(row[2]) <= float(row[1]) + 1e-12


def test_neumann_table_shape(tmp_path):
    data = {
        "n": 2,
        "m": 0,
        "potential": {"kind": "compact_smooth", "coupling": -0.5, "decay": 2.0, "radius": 2.0},
        "grid": {"L": 6, "points": 32},
        "subcommand": "neumann",
        "M_list": [1, 2],
        "z_list": [2.0],
    }
    config = parse_config(_write(tmp_path, data))
    report = run(config, tmp_path / "out")
    assert report.status == 0
    header, rows = _read_csv(tmp_path / "out" / "high_energy.csv")
    assert header == ["spec", "class", "z", "M", "norm_lo", "norm_hi", "pass"]
    assert [r[0] for r in rows] == ["full^1", "full^2"]
    assert all(r[1] == "neumann" for r in rows)
    assert all(float(r[4]) <= float(r[5]) for r in rows)


# --------------------------------------------------------------------------
# exit codes, determinism, output hygiene


def test_exit_codes_partition_outcomes(tmp_path, monkeypatch, capsys):
    good = _write(tmp_path, _small_lap(), "good.json")
    bad = _write(tmp_path, dict(MINIMAL, lambda_grid=[]), "bad.json")
    assert main(["lap-sweep", "--config", str(good), "--out", str(tmp_path / "o0")]) == 0
    assert main(["lap-sweep", "--config", str(bad), "--out", str(tmp_path / "o2")]) == 2
    err = capsys.readouterr().err
    assert "lambda_grid" in err
    monkeypatch.setenv("DIRAC_LAP_MEMCAP", "10000")
    assert main(["lap-sweep", "--config", str(good), "--out", str(tmp_path / "o3")]) == 3
    # partial results are still flushed before the failure exit
    assert (tmp_path / "o3" / "lap_sweep.csv").exists()
    summary = json.loads((tmp_path / "o3" / "summary.json").read_text())
    assert summary["status"] == 3
    assert any("cap" in w for w in summary["warnings"])


def test_subcommand_mismatch_rejected(tmp_path, capsys):
    good = _write(tmp_path, _small_lap())
    assert main(["matrices", "--config", str(good), "--out", str(tmp_path / "out")]) == 2
    assert "subcommand" in capsys.readouterr().err


def test_output_dir_fallback_from_config(tmp_path, capsys):
    data = _small_lap(output_dir=str(tmp_path / "from_config"))
    path = _write(tmp_path, data)
    assert main(["lap-sweep", "--config", str(path)]) == 0
    assert (tmp_path / "from_config" / "lap_sweep.csv").exists()


def test_repeat_runs_are_byte_identical(tmp_path):
    for name, data in (
        ("lap", _small_lap(seed=5)),
        (
            "stri",
            {
                "n": 2,
                "m": 0,
                "V": "zero",
                "grid": {"L": 6, "points": 12, "periodic": True},
                "subcommand": "strichartz",
                "seed": 5,
                "queries": [{"p": 6, "q": 6, "theta": 0.5, "time_window": 3.0}],
            },
        ),
    ):
        config = parse_config(_write(tmp_path, data, f"{name}.json"))
        run(config, tmp_path / f"{name}_a")
        run(config, tmp_path / f"{name}_b")
        tables = sorted(p.name for p in (tmp_path / f"{name}_a").glob("*.csv"))
        assert tables
        for table in tables:
            first = (tmp_path / f"{name}_a" / table).read_bytes()
            second = (tmp_path / f"{name}_b" / table).read_bytes()
            assert first == second


def test_nothing_written_outside_output_dir(tmp_path, monkeypatch):
    scratch = tmp_path / "scratch"
    scratch.mkdir()
    monkeypatch.chdir(scratch)
    path = _write(scratch, _small_lap(), "cfg.json")
    assert main(["lap-sweep", "--config", str(path), "--out", str(scratch / "out")]) == 0
    assert sorted(p.name for p in scratch.iterdir()) == ["cfg.json", "out"]


def test_csv_uses_lf_and_full_precision(tmp_path):
    config = parse_config(_write(tmp_path, _small_lap()))
    run(config, tmp_path / "out")
    raw = (tmp_path / "out" / "lap_sweep.csv").read_bytes()
    assert b"\r" not in raw
    value = raw.decode("utf-8").splitlines()[1].split(",")[2]
    # 17 significant digits survive a float round-trip exactly
    assert float(value) == float("%.17g" % float(value))
    assert len(value.replace(".", "").lstrip("0")) >= 15
