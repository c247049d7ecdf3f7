import json
import time
from pathlib import Path

import numpy as np
import pytest

import bvfsm.cli as cli
from bvfsm.cli import (
    EXIT_CONFIG,
    EXIT_OK,
    EXIT_RUNTIME,
    main,
    run_dimension_sweep,
    run_experiment,
    time_step,
)

FAST_BVFSM = {
    "K": 40,
    "T_z": 10,
    "T_y": 10,
    "schedule": {"sigma2": {"rule": "static", "value": 2.0, "decay_pow": 0.6}},
    "aux_f": {"name": "inverse", "modified": True},
}


def write_config(tmp_path, **overrides):
    cfg = {
        "problem": "sin:n=2,a=2,c=2",
        "methods": ["bvfsm", "rhg"],
        "x0": 8.0,
        "y0": 8.0,
        "seed": 0,
        "bvfsm": FAST_BVFSM,
        "baseline": {"T": 10, "I": 10, "Q": 5, "ul_steps": 15},
    }
    cfg.update(overrides)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    return path


def read_csv(path):
    lines = Path(path).read_text().strip().split("\n")
    header = lines[0].split(",")
    rows = [dict(zip(header, line.split(","))) for line in lines[1:]]
    return header, rows


def test_run_experiment_writes_artifacts(tmp_path):
    cfg = write_config(tmp_path)
    out = tmp_path / "out"
    assert run_experiment(cfg, out_dir=out) == EXIT_OK
    summary = json.loads((out / "summary.json").read_text())
    assert summary["seed"] == 0
    assert set(summary["results"]) == {"bvfsm", "rhg"}
    header, rows = read_csv(out / "trace_bvfsm.csv")
    assert header == ["k", "l", "wall_time_s", "F", "f", "ul_grad_norm",
                      "rel_err_x", "rel_err_F"]
    assert len(rows) == 42  # initial record + K steps + feasibility polish
    # summary round-trips: the echoed config re-validates end to end
    from bvfsm.cli import build_solver_config, load_problem

    echoed = summary["config"]
    bench = load_problem(echoed, summary["seed"])
    build_solver_config(echoed, bench)
    assert echoed["methods"] == ["bvfsm", "rhg"]


def test_run_experiment_deterministic_outside_timing(tmp_path):
    cfg = write_config(tmp_path)
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert run_experiment(cfg, out_dir=out1) == EXIT_OK
    assert run_experiment(cfg, out_dir=out2) == EXIT_OK
    for name in ("trace_bvfsm.csv", "trace_rhg.csv"):
        h1, rows1 = read_csv(out1 / name)
        h2, rows2 = read_csv(out2 / name)
        for r1, r2 in zip(rows1, rows2):
            for col in h1:
                if col == "wall_time_s":
                    continue
                assert r1[col] == r2[col], f"{name}:{col}"


def test_run_experiment_empty_methods_is_config_error(tmp_path):
    cfg = write_config(tmp_path, methods=[])
    out = tmp_path / "nothing"
    assert run_experiment(cfg, out_dir=out) == EXIT_CONFIG
    assert not out.exists()


def test_run_experiment_unknown_problem_is_config_error(tmp_path):
    cfg = write_config(tmp_path, problem="mnist:n=2")
    assert run_experiment(cfg, out_dir=tmp_path / "x") == EXIT_CONFIG


def test_run_experiment_unknown_method_is_config_error(tmp_path):
    cfg = write_config(tmp_path, methods=["bvfsm", "sgd"])
    assert run_experiment(cfg, out_dir=tmp_path / "x") == EXIT_CONFIG


def test_run_experiment_timeout_partial_artifacts(tmp_path):
    cfg = write_config(tmp_path, methods=["bvfsm"],
                       bvfsm={**FAST_BVFSM, "K": 100000},
                       wall_clock_cap_s=0.05)
    out = tmp_path / "partial"
    assert run_experiment(cfg, out_dir=out) == EXIT_RUNTIME
    summary = json.loads((out / "summary.json").read_text())
    assert summary["results"]["bvfsm"]["flag"] == "SolveTimeout"
    _, rows = read_csv(out / "trace_bvfsm.csv")
    assert 1 <= len(rows) < 100001


def test_seed_env_fallback(tmp_path, monkeypatch):
    cfg_dict = {
        "problem": "hyperclean:n_train=8,n_val=6,dim=2",
        "methods": ["bvfsm"],
        "bvfsm": {**FAST_BVFSM, "K": 2, "schedule": {"sigma2": {"rule": "dynamic"}}},
    }
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cfg_dict))
    monkeypatch.setenv("BVFSM_SEED", "17")
    out = tmp_path / "env"
    assert run_experiment(path, out_dir=out) == EXIT_OK
    summary = json.loads((out / "summary.json").read_text())
    assert summary["seed"] == 17


def test_dimension_sweep_row_per_cell(tmp_path):
    out = tmp_path / "sweep.csv"
    rows = run_dimension_sweep(
        "sin", [1, 2], ["bvfsm", "rhg"],
        cfg={"bvfsm": FAST_BVFSM, "baseline": {"T": 10, "I": 10, "ul_steps": 5}},
        out_path=out,
    )
    assert len(rows) == 4
    header, parsed = read_csv(out)
    assert header[:3] == ["n", "method", "rel_err_x"]
    assert len(parsed) == 4


def test_dimension_sweep_records_cell_failures(tmp_path):
    rows = run_dimension_sweep(
        "sin", [1], ["bvfsm"],
        cfg={"bvfsm": {**FAST_BVFSM, "K": 100000}, "wall_clock_cap_s": 0.05},
    )
    assert len(rows) == 1
    assert np.isnan(rows[0]["rel_err_x"])
    assert "SolveTimeout" in rows[0]["note"]


def test_dimension_sweep_sanity_row_fast():
    start = time.perf_counter()
    rows = run_dimension_sweep(
        "sin", [1], ["bvfsm", "rhg"],
        cfg={"bvfsm": FAST_BVFSM, "baseline": {"T": 10, "I": 10, "ul_steps": 5}},
    )
    assert time.perf_counter() - start < 5.0
    assert all(not r["note"] for r in rows)


def test_dimension_sweep_parallel_cells_match_serial():
    cfg = {"bvfsm": FAST_BVFSM, "baseline": {"T": 10, "I": 10, "ul_steps": 5}}
    serial = run_dimension_sweep("sin", [1, 2], ["bvfsm"], cfg)
    parallel = run_dimension_sweep("sin", [1, 2], ["bvfsm"], cfg, parallel=2)
    for a, b in zip(serial, parallel):
        assert a["n"] == b["n"] and a["rel_err_x"] == b["rel_err_x"]


def test_time_step_stub_medians_stable(monkeypatch):
    # constant-time stub: medians across reruns must agree within 20%
    def stub(problem, method, x, y, cfg):
        time.sleep(0.004)
        return np.zeros(problem.m), np.asarray(y), ""

    monkeypatch.setattr(cli, "hypergradient_step", stub)
    rows1 = time_step([(1, 4)], ["rhg"], repeats=3)
    rows2 = time_step([(1, 4)], ["rhg"], repeats=3)
    m1, m2 = rows1[0]["median_s"], rows2[0]["median_s"]
    assert abs(m1 - m2) / max(m1, m2) < 0.2


def test_time_step_requires_three_repeats():
    from bvfsm import InvalidParameter

    with pytest.raises(InvalidParameter):
        time_step([(1, 2)], ["rhg"], repeats=2)


def test_main_list_verbs(capsys):
    assert main(["list-problems"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "sin" in out and "hyperclean" in out
    assert main(["list-methods"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "bvfsm" in out and "neumann" in out


def test_main_validate_verb(capsys):
    assert main(["validate", "--problem", "sin:n=2", "--probes", "3"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "PASS" in out


def test_main_run_verb(tmp_path):
    cfg = write_config(tmp_path, methods=["bvfsm"])
    out = tmp_path / "cli-run"
    assert main(["run", "--config", str(cfg), "--out-dir", str(out)]) == EXIT_OK
    assert (out / "summary.json").exists()


def test_main_sweep_verb(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"bvfsm": FAST_BVFSM}))
    out = tmp_path / "sweep.csv"
    code = main(["sweep", "--config", str(cfg), "--n", "1", "--methods", "bvfsm",
                 "--out", str(out)])
    assert code == EXIT_OK
    assert out.exists()


def test_main_time_verb(tmp_path):
    out = tmp_path / "timing.csv"
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"bvfsm": {**FAST_BVFSM, "K": 1},
                               "baseline": {"T": 5, "I": 5, "Q": 3}}))
    code = main(["time", "--config", str(cfg), "--sizes", "1:4", "--methods",
                 "bvfsm", "cg", "--repeats", "3", "--out", str(out)])
    assert code == EXIT_OK
    header, rows = read_csv(out)
    assert header[:4] == ["m", "n", "method", "median_s"]
    assert len(rows) == 2


def test_main_bad_config_exit_code(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["run", "--config", str(bad)]) == EXIT_CONFIG
