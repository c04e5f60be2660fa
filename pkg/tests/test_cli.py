import json
import os
import subprocess
import sys

import numpy as np
import pytest

from rotmaster.cli import EXIT_NUMERICAL, EXIT_OK, EXIT_VALIDATION, main, report_validity
from rotmaster.output import read_series
from rotmaster.observables import SE_COLUMNS, SERIES_COLUMNS
from rotmaster.scenario import PRESETS, parse_scenario

KERR = PRESETS["kerr-fig2"][0]
# schema version 1; changing these requires a schema bump
PINNED_COLUMNS = ("t", "Jx", "Jy", "Jz", "varJx", "varJy", "varJz", "J2", "purity", "trace", "leakage")
PINNED_SE = ("se_Jx", "se_Jy", "se_Jz", "se_varJx", "se_varJy", "se_varJz", "se_J2", "se_purity")
SUMMARY_KEYS = {"comparison", "files", "kernels", "lindblad", "rotmaster_version", "scenario",
                "scenario_sha256", "schema_version", "trajectories", "units", "validity"}
SHORT = ["--tmax", "2", "--trajectories", "200"]


def _files(d):
    return {f: open(os.path.join(d, f), "rb").read() for f in sorted(os.listdir(d))}


def test_both_backends_outputs(tmp_path):
    out = tmp_path / "run"
    assert main(["simulate", "kerr-fig2", "--out-dir", str(out), *SHORT]) == EXIT_OK
    files = set(os.listdir(out))
    assert {"lindblad.tsv", "trajectories.tsv", "jumps.tsv", "summary.json"} <= files
    summary = json.loads((out / "summary.json").read_text())
    assert set(summary) == SUMMARY_KEYS
    assert (SERIES_COLUMNS, SE_COLUMNS) == (PINNED_COLUMNS, PINNED_SE)
    comp = summary["comparison"]
    assert comp["max_abs_diff_Jy"] >= 0 and "t_at_max_abs_diff_Jy" in comp
    assert summary["trajectories"]["master_seed"] == 20240607
    assert summary["trajectories"]["n_traj"] == 200
    assert summary["validity"]["status"] == "not evaluated"
    assert summary["scenario"]["field"]["omega_R"] == 0.1
    assert "dir" not in summary["scenario"]["output"]

    header, names, values = read_series(str(out / "lindblad.tsv"))
    assert names == PINNED_COLUMNS
    assert header["backend"] == "lindblad" and header["scenario_sha256"] == summary["scenario_sha256"]
    assert values.shape == (2000, len(SERIES_COLUMNS))
    header, names, values = read_series(str(out / "trajectories.tsv"))
    assert names == PINNED_COLUMNS + PINNED_SE
    assert header["master_seed"] == "20240607"
    jumps = (out / "jumps.tsv").read_text().splitlines()
    assert jumps[0] == "trajectory\tseed\tt\tchannel"
    assert len(jumps) - 1 == summary["trajectories"]["jumps"]["total"]


def test_series_round_trip(tmp_path):
    out = tmp_path / "lind"
    assert main(["simulate", "kerr-fig2", "--backend", "lindblad", "--tmax", "1", "--out-dir", str(out)]) == 0
    _, _, values = read_series(str(out / "lindblad.tsv"))
    text = (out / "lindblad.tsv").read_text().splitlines()
    row = text[-1].split("\t")
    assert [float(v) for v in row] == list(values[-1])
    assert all(len(v) == len(row[0]) or v.startswith("-") for v in row)


def test_unitary_purity_column(tmp_path):
    out = tmp_path / "u"
    assert main(["simulate", "kerr-fig2-unitary", "--backend", "lindblad", "--tmax", "5", "--out-dir", str(out)]) == 0
    _, names, values = read_series(str(out / "lindblad.tsv"))
    assert np.abs(values[:, names.index("purity")] - 1).max() < 1e-8


def test_byte_identical_and_worker_independent(tmp_path):
    runs = []
    for k, workers in enumerate(("1", "1", "3")):
        out = tmp_path / f"r{k}"
        assert main(["simulate", "kerr-fig2", "--backend", "trajectories", "--out-dir", str(out),
                     "--workers", workers, *SHORT]) == 0
        runs.append(_files(out))
    assert runs[0] == runs[1] == runs[2]


def test_different_seed_changes_output(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d, seed in ((a, "1"), (b, "2")):
        main(["simulate", "kerr-fig2", "--backend", "trajectories", "--out-dir", str(d), "--seed", seed,
              "--tmax", "20", "--trajectories", "300"])
    assert _files(a)["jumps.tsv"] != _files(b)["jumps.tsv"]


def test_invalid_config_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text('j_max = 8\n[initial]\nkind = "coherent"\nj = 2\ntheta = -1.0\nphi = 0.0\n'
                   '[field]\nomega_R = 0.1\ngamma_over_delta = 0.01\n')
    assert main(["simulate", str(bad), "--out-dir", str(tmp_path / "o")]) == EXIT_VALIDATION
    assert "initial.theta" in capsys.readouterr().err
    dup = tmp_path / "dup.toml"
    dup.write_text("j_max = 8\nj_max = 9\n")
    assert main(["simulate", str(dup)]) == EXIT_VALIDATION
    assert main(["simulate", str(tmp_path / "missing.toml")]) == EXIT_VALIDATION
    assert main(["simulate", "kerr-fig2", "--workers", "0"]) == EXIT_VALIDATION


def test_numerical_abort_writes_error_record(tmp_path):
    cfg = tmp_path / "leaky.toml"
    cfg.write_text(
        'j_max = 4\nbackend = "lindblad"\n[initial]\nkind = "coherent"\nj = 1\ntheta = 1.5\nphi = 0.0\n'
        "[field]\nomega_R = 1.0\ngamma_over_delta = 0.05\n[grid]\nt_max = 5.0\nn_points = 11\n"
    )
    out = tmp_path / "o"
    assert main(["simulate", str(cfg), "--out-dir", str(out)]) == EXIT_NUMERICAL
    err = json.loads((out / "error.json").read_text())
    assert err["error"] == "leakage" and err["time"] is not None and "scenario_sha256" in err


VIB = "\n[vibrational]\neta = {eta}\nomega_nu_over_B = 200.0\ndelta_over_B = 1e6\n"


def test_validity_report_block():
    s37 = parse_scenario(KERR + VIB.format(eta=3.7))
    s86 = parse_scenario(KERR + VIB.format(eta=8.6))
    r37, r86 = report_validity(s37), report_validity(s86)
    assert r37["tau_max_margin"] / r86["tau_max_margin"] == pytest.approx(5.40, abs=5e-3)
    assert r37["status"] == "within validity regime"
    r = report_validity(s86.with_overrides(t_max=10 * r86["tau_max_margin"]))
    assert r["status"] == "outside validity regime" and "warning" in r


def test_validity_verb(capsys, tmp_path):
    cfg = tmp_path / "v.toml"
    cfg.write_text(KERR + VIB.format(eta=3.7))
    assert main(["validity", str(cfg)]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["evaluated"] and rep["t_max"] == 20.0


def test_presets_verb(capsys):
    assert main(["presets"]) == 0
    assert "kerr-fig2" in capsys.readouterr().out
    assert main(["presets", "--show", "kerr-fig2"]) == 0
    assert "omega_R = 0.1" in capsys.readouterr().out
    assert main(["presets", "--show", "nope"]) == EXIT_VALIDATION


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "rotmaster", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.startswith("rotmaster ")
