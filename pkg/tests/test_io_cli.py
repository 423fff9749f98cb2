import json
import os
from pathlib import Path

import numpy as np
import pytest

from kacsim.cli import main, verify_kernel
from kacsim.estimators import DiagnosticsRecord, EstimatorReport
from kacsim.io import (DIAGNOSTICS_SCHEMA, OUTPUT_DIR_ENV, RunConfig, config_from_dict, emit_diagnostics,
                       load_config, parse_config, read_diagnostics, read_snapshot, save_config, write_event_log,
                       write_snapshot)

DATA = Path(__file__).parent / "data"
GOLDEN_FLAGS = ["--gamma", "-1", "--nu", "0.25", "--eps", "0.05", "--n", "64", "--t-final", "0.5", "--seed", "7",
                "--replicas", "2", "--snapshot-times", "0.25", "--fisher-n-boot", "2"]


def test_minimal_flags_resolve_defaults():
    cfg = parse_config(["--gamma", "-1", "--nu", "0.25", "--eps", "0.05", "--n", "1024", "--t-final", "4",
                        "--seed", "7"])
    assert cfg.n_particles == 1024 and cfg.t_final == 4.0 and cfg.seed == 7
    assert cfg.entropy_k == 4 and cfg.fisher_k == 32 and cfg.n_projections == 128
    assert json.loads(cfg.to_json())["beta_form"] == "power_law"


def test_physical_ranges_rejected():
    with pytest.raises(ValueError, match="moderately soft"):
        parse_config(["--gamma", "-2.5"])
    with pytest.raises(ValueError, match="nu"):
        parse_config(["--nu", "1.5"])
    with pytest.raises(ValueError, match="eps"):
        parse_config(["--eps", "0"])


def test_unknown_keys_fatal(tmp_path):
    with pytest.raises(ValueError, match="unknown"):
        config_from_dict({"gama": -1})
    with pytest.raises(ValueError, match="unknown"):
        parse_config(["--gama", "-1"])
    (tmp_path / "c.json").write_text(json.dumps({"gamma": -1, "typo": 1}))
    with pytest.raises(ValueError, match="typo"):
        load_config(tmp_path / "c.json")


def test_round_trip_hash(tmp_path):
    cfg = parse_config(["--gamma", "-0.5", "--snapshot-times", "0.5,1", "--t-final", "2"])
    save_config(cfg, tmp_path / "c.json")
    again = parse_config(["--config", str(tmp_path / "c.json")])
    assert again == cfg and again.config_hash == cfg.config_hash
    assert parse_config(["--gamma", "-0.6"]).config_hash != cfg.config_hash


def test_flags_override_file(tmp_path):
    save_config(RunConfig(seed=3), tmp_path / "c.json")
    assert parse_config(["--config", str(tmp_path / "c.json"), "--seed", "9"]).seed == 9


def test_output_dir_env(monkeypatch):
    monkeypatch.setenv(OUTPUT_DIR_ENV, "/tmp/somewhere")
    assert RunConfig().resolved_output_dir() == "/tmp/somewhere"
    assert RunConfig(output_dir="x").resolved_output_dir() == "x"


def _rec(t):
    r = EstimatorReport("x", 1.0 / 3.0, 0.1, 10)
    return DiagnosticsRecord(t, 3.0, 15.0, r, r, r, None, None, {"energy_drift": 0.0})


def test_empty_diagnostics_is_header_only(tmp_path):
    emit_diagnostics([], tmp_path / "d.tsv", config_hash="abc")
    lines = (tmp_path / "d.tsv").read_text().splitlines()
    assert lines[0] == f"# schema: {DIAGNOSTICS_SCHEMA}" and lines[-1].startswith("t\tm2")
    header, rows = read_diagnostics(tmp_path / "d.tsv")
    assert header["config_hash"] == "abc" and rows == []


def test_diagnostics_roundtrip_and_order(tmp_path):
    emit_diagnostics([_rec(0.0), _rec(1.0)], tmp_path / "d.tsv", config_hash="abc")
    _, rows = read_diagnostics(tmp_path / "d.tsv")
    assert float(rows[0]["entropy"]) == 1.0 / 3.0 and rows[1]["w2"] == "nan"
    with pytest.raises(ValueError):
        emit_diagnostics([_rec(1.0), _rec(0.0)], tmp_path / "e.tsv", config_hash="abc")


def test_io_failure_surfaces(tmp_path):
    with pytest.raises(OSError):
        emit_diagnostics([], tmp_path / "missing" / "d.tsv", config_hash="abc")


def test_snapshot_roundtrip(tmp_path):
    v = np.random.default_rng(0).standard_normal((5, 3))
    write_snapshot(tmp_path / "s.txt", v, t=0.25, seed=1, replica=2, config_hash="h")
    t, w, meta = read_snapshot(tmp_path / "s.txt")
    assert t == 0.25 and np.array_equal(v, w) and meta["config_hash"] == "h"


def test_event_log_csv(tmp_path):
    ev = {"t": np.array([0.1, 0.2]), "i": np.array([0, 1]), "j": np.array([1, 0]), "theta": np.array([0.1, 0.2]),
          "phi": np.array([1.0, 2.0]), "accepted": np.array([True, False])}
    write_event_log(tmp_path / "e.csv", ev)
    lines = (tmp_path / "e.csv").read_text().splitlines()
    assert lines[0] == "t,i,j,theta,phi,accepted" and lines[2].endswith(",0")


def test_simulate_is_byte_identical_and_matches_golden(tmp_path):
    out = []
    for k in range(2):
        d = tmp_path / f"run{k}"
        assert main(["simulate", *GOLDEN_FLAGS, "--out", str(d)]) == 0
        out.append((d / "diagnostics.tsv").read_bytes())
    assert out[0] == out[1]
    assert out[0] == (DATA / "golden_diagnostics.tsv").read_bytes()


def test_simulate_t_final_zero(tmp_path):
    assert main(["simulate", "--n", "128", "--t-final", "0", "--out", str(tmp_path), "--no-snapshots"]) == 0
    _, rows = read_diagnostics(tmp_path / "diagnostics.tsv")
    assert [r["t"] for r in rows] == ["0.0"]


def test_simulate_rejects_bad_range(tmp_path, capsys):
    assert main(["simulate", "--gamma", "-2.5", "--out", str(tmp_path)]) == 2
    assert "moderately soft" in capsys.readouterr().err


def test_verify_weakform_on_stored_flow(tmp_path):
    assert main(["simulate", "--n", "48", "--t-final", "0.3", "--snapshot-times", "0.1,0.2", "--replicas", "2",
                 "--out", str(tmp_path)]) == 0
    assert main(["verify-weakform", "--dir", str(tmp_path)]) == 0
    assert main(["verify-weakform", "--dir", str(tmp_path), "--bump-tol", "1e-12"]) == 1


def test_verify_kernel_table(capsys):
    assert main(["verify-kernel", "--gamma", "-1"]) == 0
    text = capsys.readouterr().out
    assert "second_moment" in text and "FAIL" not in text
    rows = verify_kernel([-0.5, -1.0, -1.5], [0.5, 1.0, 2.0])
    assert len(rows) == 9 * 5 and all(r[-1] for r in rows)


def test_chaos_study_cli(capsys):
    assert main(["chaos-study", "--n", "32,128", "--replicas", "30", "--t", "0.3"]) in (0, 1)
    assert "ratio_to_next" in capsys.readouterr().out


def test_benchmark_equilibrium(capsys):
    assert main(["benchmark", "equilibrium"]) == 0
