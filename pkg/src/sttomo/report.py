"""Report serialisation, the run manifest and plot-ready CSV files.

``report.json`` holds only deterministic content (sorted keys, floats by
``repr``, no timestamps or timings) so two runs of the same configuration
are byte-identical.  Everything that legitimately varies between runs
goes to ``MANIFEST``.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
import os
import platform
from importlib import metadata

import numpy as np

from . import kernels
from .errors import ConfigError

REPORT_SCHEMA = 1
SUMMATION_MODE = "numpy pairwise, fixed traversal order"


def clean(obj):
    """Plain JSON types; non-finite floats become ``None``."""
    if isinstance(obj, dict):
        return {str(k): clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return clean(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, complex):
        return [clean(obj.real), clean(obj.imag)]
    return obj


def to_json_bytes(report: dict) -> bytes:
    return (json.dumps(clean(report), sort_keys=True, indent=2, allow_nan=False) + "\n").encode()


def build_report(experiment: str, cfg: dict, cfg_hash: str, results: dict, criteria=None) -> dict:
    rep = {"schema_version": REPORT_SCHEMA, "experiment": experiment, "config_hash": cfg_hash,
           "config": cfg, "summation": SUMMATION_MODE, "results": results}
    if criteria is not None:
        rep["criteria"] = [c.as_dict() if hasattr(c, "as_dict") else c for c in criteria]
    return rep


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def _version(dist):
    try:
        return metadata.version(dist)
    except metadata.PackageNotFoundError:
        return None


def versions() -> dict:
    return {"artifact": _version("artifact"), "numpy": np.__version__, "scipy": _version("scipy"),
            "pyyaml": _version("pyyaml") or _version("PyYAML"), "python": platform.python_version(),
            "kernel_backend": kernels.BACKEND}


def write_outputs(out_dir: str, report: dict, timings: dict | None = None, workers: int = 1) -> dict:
    """Write ``report.json``, plot CSVs and ``MANIFEST``; return the manifest."""
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "report.json")
    with open(path, "wb") as fh:
        fh.write(to_json_bytes(report))
    files = ["report.json"] + emit_plot_data(report, out_dir)
    files += [f for f in report.get("artifacts", []) if f not in files]
    manifest = {
        "config_hash": report["config_hash"],
        "report_schema": report["schema_version"],
        "experiment": report["experiment"],
        "versions": versions(),
        "workers": workers,
        "wall_clock_seconds": clean(timings or {}),
        "files": {f: _sha256(os.path.join(out_dir, f)) for f in sorted(files)
                  if os.path.exists(os.path.join(out_dir, f))},
    }
    with open(os.path.join(out_dir, "MANIFEST"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return manifest


def _leaves(obj, prefix=""):
    if isinstance(obj, dict):
        for k in sorted(obj):
            yield from _leaves(obj[k], f"{prefix}.{k}" if prefix else str(k))
    elif isinstance(obj, (list, tuple)):
        for i, v in enumerate(obj):
            yield from _leaves(v, f"{prefix}[{i}]")
    elif isinstance(obj, (bool, int, float)) and obj is not None:
        yield prefix, obj


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def emit_plot_data(report: dict, out_dir: str) -> list:
    """Long-format and per-figure CSV files; files are written even when empty.

    ``plot_data.csv`` has one row per numeric leaf of ``results`` as
    ``(experiment, parameter, value)``.  ``cone.csv`` and ``eps_ladder.csv``
    are the two series worth plotting directly.
    """
    os.makedirs(out_dir, exist_ok=True)
    results = clean(report.get("results", {}) or {})
    rows = []
    for stage in sorted(results):
        for key, val in _leaves(results[stage]):
            rows.append((stage, key, repr(float(val)) if not isinstance(val, bool) else str(val)))
    _write_csv(os.path.join(out_dir, "plot_data.csv"), ("experiment", "parameter", "value"), rows)

    cone = results.get("cone") or {}
    cone_rows = []
    for k, ratios in enumerate(cone.get("ratios", [])):
        cone_rows += [(k, mu, r) for mu, r in zip(cone.get("mus", []), ratios)]
    _write_csv(os.path.join(out_dir, "cone.csv"), ("field", "mu", "ratio"), cone_rows)

    lad = results.get("ladder") or {}
    lad_rows = list(zip(lad.get("eps", []), lad.get("max_B", []), lad.get("residual", [])))
    _write_csv(os.path.join(out_dir, "eps_ladder.csv"), ("eps", "maxB", "residual"), lad_rows)
    return ["plot_data.csv", "cone.csv", "eps_ladder.csv"]


def load_report(path: str) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def combine_reports(paths) -> dict:
    """Merge the ``results`` of several reports made from one configuration.

    Reports from different configurations are refused.
    """
    reps = [load_report(p) for p in paths]
    if not reps:
        return {}
    hashes = {r["config_hash"] for r in reps}
    if len(hashes) != 1:
        raise ConfigError(f"refusing to combine reports from {len(hashes)} different configurations")
    merged = {"config_hash": hashes.pop(), "results": {}}
    for r in reps:
        merged["results"][r["experiment"]] = r["results"]
    return merged
