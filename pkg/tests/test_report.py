import json
import os

import numpy as np
import pytest

from sttomo.config import config_hash, default_config
from sttomo.errors import ConfigError
from sttomo.report import (build_report, clean, combine_reports, emit_plot_data, to_json_bytes,
                           write_outputs)


def make_report(results, experiment="tau", cfg=None):
    cfg = cfg or default_config()
    return build_report(experiment, cfg, config_hash(cfg), results)


def test_json_bytes_are_canonical():
    a = to_json_bytes({"b": 1.0, "a": [np.float64(0.1), np.int64(2)]})
    b = to_json_bytes({"a": [0.1, 2], "b": 1.0})
    assert a == b
    assert a.endswith(b"\n")


def test_non_finite_values_become_null():
    out = json.loads(to_json_bytes({"x": float("nan"), "y": [np.inf, 1.5]}))
    assert out == {"x": None, "y": [None, 1.5]}
    assert clean(np.array([True, False])) == [True, False]
    assert clean(1 + 2j) == [1.0, 2.0]


def test_empty_report_still_gets_csv_headers(tmp_path):
    files = emit_plot_data(make_report({}), str(tmp_path))
    assert files == ["plot_data.csv", "cone.csv", "eps_ladder.csv"]
    assert (tmp_path / "plot_data.csv").read_text() == "experiment,parameter,value\n"
    assert (tmp_path / "cone.csv").read_text() == "field,mu,ratio\n"
    assert (tmp_path / "eps_ladder.csv").read_text() == "eps,maxB,residual\n"


def test_plot_data_lists_numeric_leaves(tmp_path):
    rep = make_report({"tau": {"max_err": 1e-12, "rows": [1, 2], "ok": True, "label": "x"},
                       "cone": {"mus": [0.1, 0.2], "ratios": [[0.3, 0.5]]},
                       "ladder": {"eps": [0.01], "max_B": [0.2], "residual": [1e-9]}})
    emit_plot_data(rep, str(tmp_path))
    lines = (tmp_path / "plot_data.csv").read_text().splitlines()
    assert "tau,max_err,1e-12" in lines
    assert "tau,rows[1],2.0" in lines
    assert "tau,ok,True" in lines
    assert not any("label" in ln for ln in lines)
    assert (tmp_path / "cone.csv").read_text().splitlines()[1:] == ["0,0.1,0.3", "0,0.2,0.5"]
    assert (tmp_path / "eps_ladder.csv").read_text().splitlines()[1] == "0.01,0.2,1e-09"


def test_manifest_records_hashes_and_timings(tmp_path):
    rep = make_report({"tau": {"v": 1.0}})
    man = write_outputs(str(tmp_path), rep, {"total": 7.3125}, workers=3)
    on_disk = json.loads((tmp_path / "MANIFEST").read_text())
    assert on_disk == man
    assert man["workers"] == 3
    assert man["wall_clock_seconds"] == {"total": 7.3125}
    assert set(man["files"]) == {"report.json", "plot_data.csv", "cone.csv", "eps_ladder.csv"}
    assert man["versions"]["kernel_backend"] in ("cython", "numpy")
    assert b"7.3125" not in (tmp_path / "report.json").read_bytes()


def test_combine_reports(tmp_path):
    paths = []
    for name, exp in (("a", "tau"), ("b", "flow")):
        write_outputs(str(tmp_path / name), make_report({exp: {"v": 1.0}}, exp))
        paths.append(str(tmp_path / name / "report.json"))
    merged = combine_reports(paths)
    assert set(merged["results"]) == {"tau", "flow"}
    cfg = default_config()
    cfg["seed"] = 9
    write_outputs(str(tmp_path / "c"), make_report({"tau": {}}, cfg=cfg))
    with pytest.raises(ConfigError, match="different configurations"):
        combine_reports(paths + [os.path.join(str(tmp_path), "c", "report.json")])
    assert combine_reports([]) == {}
