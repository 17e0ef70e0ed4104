import json

import pytest

from sttomo.cli import main

TINY = """\
metric: {eps: 0.01}
dump: {N: 5}
tau: {n_src: 3, n_dst: 3}
scatter: {n_rays: 2}
straighten: {lattice_n: 9, round_trip_stride: 7}
identity: {n_rays: 1, n_samples: 128, eps_ladder: [0.01, 0.005], ladder_samples: 64}
fourier: {parts: [slice, contraction], N: 16, lattice_n: 9}
riemannian: {lattice_n: 9, boundary_points: 8, b21_rays: 2, b21_samples: 64, tilts: [0.05, 0.1, 0.2]}
acceptance:
  criteria: [1, 2, 10, 13]
  overrides:
    1: {n_src: 4, n_dst: 4}
    2: {n_rays: 4, seeds: [1]}
    10: {sizes: [8, 12]}
"""

STAGES = [
    (["metric", "dump"], "metric", "metric.csv"),
    (["flow", "trace"], "flow", "trajectory.csv"),
    (["tau", "table"], "tau", "tau.jsonl"),
    (["scatter"], "scatter", "scatter.jsonl"),
    (["straighten"], "straighten", None),
    (["identity", "run"], "identity", None),
    (["fourier", "run"], "fourier", None),
    (["riemannian", "run"], "riemannian", "distance.csv"),
]


@pytest.fixture
def tiny(tmp_path):
    path = tmp_path / "tiny.yaml"
    path.write_text(TINY)
    return str(path)


def read(out):
    return json.loads((out / "report.json").read_text())


@pytest.mark.parametrize("words, experiment, extra", STAGES, ids=[s[1] for s in STAGES])
def test_stage_writes_its_outputs(tiny, tmp_path, capsys, words, experiment, extra):
    out = tmp_path / "out"
    assert main(words + ["--config", tiny, "--out", str(out)]) == 0
    assert "wrote" in capsys.readouterr().out
    rep = read(out)
    assert rep["experiment"] == experiment
    assert experiment in rep["results"]
    manifest = json.loads((out / "MANIFEST").read_text())
    assert manifest["config_hash"] == rep["config_hash"]
    if extra is not None:
        assert (out / extra).exists()
        assert extra in manifest["files"]


def test_minkowski_tau_config(tmp_path):
    cfg = tmp_path / "flat.yaml"
    cfg.write_text("metric: {family: minkowski}\ntau: {n_src: 4, n_dst: 4, kappa: 1.5}\n")
    assert main(["tau", "table", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    res = read(tmp_path / "o")["results"]["tau"]
    assert res["pairs"] == 16
    assert res["status_counts"].get("ok") == 16


def test_config_error_exits_with_two_and_a_location(tmp_path, capsys):
    cfg = tmp_path / "bad.yaml"
    cfg.write_text("seed: 1\ntau:\n  n_scr: 4\n")
    assert main(["tau", "table", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    err = capsys.readouterr().err
    assert "bad.yaml:3:3" in err and "n_scr" in err
    assert not (tmp_path / "o").exists()


def test_workers_must_be_positive(tiny, tmp_path):
    assert main(["tau", "table", "--config", tiny, "--out", str(tmp_path / "o"), "--workers", "0"]) == 2


def test_seed_overrides_the_configuration(tiny, tmp_path):
    assert main(["metric", "dump", "--config", tiny, "--out", str(tmp_path / "a"), "--seed", "7"]) == 0
    assert main(["metric", "dump", "--config", tiny, "--out", str(tmp_path / "b")]) == 0
    a, b = read(tmp_path / "a"), read(tmp_path / "b")
    assert a["config"]["seed"] == 7 and b["config"]["seed"] == 0
    assert a["config_hash"] != b["config_hash"]
    assert a["results"] != b["results"]


def test_seed_must_fit_in_64_bits(tiny, tmp_path):
    with pytest.raises(SystemExit):
        main(["tau", "table", "--config", tiny, "--out", str(tmp_path / "o"), "--seed", str(2**64)])


def test_full_runs_are_byte_identical_across_worker_counts(tiny, tmp_path, capsys):
    assert main(["full", "--config", tiny, "--out", str(tmp_path / "a")]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 4 and all(ln.startswith("[PASS]") for ln in lines)
    assert main(["full", "--config", tiny, "--out", str(tmp_path / "b"), "--workers", "2"]) == 0
    a = (tmp_path / "a" / "report.json").read_bytes()
    assert a == (tmp_path / "b" / "report.json").read_bytes()
    rep = json.loads(a)
    assert [c["id"] for c in rep["criteria"]] == [1, 2, 10, 13]
    assert rep["results"]["summary"] == {"passed": 4, "total": 4}
    manifest = json.loads((tmp_path / "b" / "MANIFEST").read_text())
    assert manifest["workers"] == 2
    assert "criterion_01" in manifest["wall_clock_seconds"]
