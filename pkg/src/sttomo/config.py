"""Experiment configuration: a YAML tree checked against a fixed schema.

Every key has a declared type and default.  Unknown keys, wrong types
and non-positive tolerances are rejected with the line and column of the
offending node, so a typo can never silently fall back to a default.
"""
from __future__ import annotations

import copy
import hashlib
import inspect
import json
from dataclasses import dataclass
from typing import Any

import yaml

from .errors import ConfigError

SCHEMA_VERSION = 1
EXPERIMENTS = ("metric", "flow", "tau", "scatter", "straighten", "identity", "fourier", "riemannian", "full")
FOURIER_PARTS = ("slice", "fio", "cone", "contraction")


@dataclass(frozen=True)
class Field:
    kind: str                 # int, float, bool, str, or a list kind (floats, ints, strs), or map
    default: Any = None
    optional: bool = False    # ``null`` accepted
    positive: bool = False
    choices: tuple | None = None
    length: int | None = None


S = Field
SCHEMA: dict = {
    "schema_version": S("int", SCHEMA_VERSION),
    "experiment": S("str", "full", choices=EXPERIMENTS),
    "seed": S("int", 0),
    "domain": {
        "n": S("int", 2, choices=(2, 3)),
        "r_omega": S("float", 1.0, positive=True),
        "rho": S("float", 1.25, positive=True),
    },
    "metric": {
        "family": S("str", "bump", choices=("bump", "minkowski")),
        "eps": S("float", 1e-2),
        "n_bumps": S("int", 3, positive=True),
        "special_form": S("bool", True),
        "psi_scale": S("float", 0.5),
    },
    "dump": {"N": S("int", 17, positive=True)},
    "flow": {
        "z0": S("floats", [0.0, -1.0, 0.0]),
        "zeta0": S("floats", [-1.05, 1.0, 0.0]),
        "mode": S("str", "exit", choices=("exit", "param")),
        "s_end": S("float", 1.0, positive=True),
        "step": S("float", None, optional=True, positive=True),
    },
    "tau": {
        "n_src": S("int", 8, positive=True),
        "n_dst": S("int", 8, positive=True),
        "kappa": S("float", 1.05, positive=True),
        "cone": S("float", None, optional=True, positive=True),
    },
    "scatter": {
        "n_rays": S("int", 8, positive=True),
        "varrho": S("float", -1.05),
        "max_tilt": S("float", 0.6),
    },
    "straighten": {
        "lattice_n": S("int", 17, positive=True),
        "round_trip_stride": S("int", 11, positive=True),
        "residual_tol": S("float", 1e-6, positive=True),
        "round_trip_tol": S("float", 1e-9, positive=True),
    },
    "identity": {
        "n_rays": S("int", 3, positive=True),
        "n_samples": S("int", 512, positive=True),
        "varrho": S("float", -1.05),
        "eps_ladder": S("floats", [1e-2, 5e-3, 2.5e-3]),
        "ladder_samples": S("int", 128, positive=True),
        "residual_tol": S("float", 1e-6, positive=True),
    },
    "fourier": {
        "parts": S("strs", list(FOURIER_PARTS), choices=FOURIER_PARTS),
        "N": S("int", 32, positive=True),
        "mu": S("float", 0.1, positive=True),
        "varrho": S("float", -1.05),
        "slice_tol": S("float", 0.01, positive=True),
        "fio_sizes": S("ints", [16, 24, 32]),
        "cone_N": S("int", 128, positive=True),
        "cone_mus": S("floats", [0.01, 0.02, 0.05, 0.1, 0.2, 0.3, 0.5]),
        "K": S("float", 5.0, positive=True),
        "lattice_n": S("int", 17, positive=True),
        "slack": S("float", 1.0, positive=True),
        "floor": S("float", 1e-6, positive=True),
    },
    "riemannian": {
        "lattice_n": S("int", 17, positive=True),
        "boundary_points": S("int", 24, positive=True),
        "cone": S("float", 0.2, optional=True, positive=True),
        "b21_rays": S("int", 3, positive=True),
        "b21_samples": S("int", 64, positive=True),
        "tilts": S("floats", [0.025, 0.05, 0.1, 0.2]),
        "mu": S("float", 0.05, positive=True),
    },
    "acceptance": {
        "criteria": S("ints", list(range(1, 14))),
        "overrides": S("map", {}),
    },
}


def _defaults(schema):
    out = {}
    for k, v in schema.items():
        out[k] = _defaults(v) if isinstance(v, dict) else copy.deepcopy(v.default)
    return out


def default_config() -> dict:
    return _defaults(SCHEMA)


def _where(node) -> str:
    m = node.start_mark
    return f"{m.name}:{m.line + 1}:{m.column + 1}"


def _fail(node, msg):
    raise ConfigError(f"{_where(node)}: {msg}")


def _scalar(node, kind, key):
    if not isinstance(node, yaml.ScalarNode):
        _fail(node, f"{key}: expected a single {kind} value")
    value = yaml.safe_load(yaml.serialize(node))
    if value is None:
        return None
    if kind == "bool":
        if not isinstance(value, bool):
            _fail(node, f"{key}: expected true or false, got {node.value!r}")
        return value
    if kind == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            _fail(node, f"{key}: expected an integer, got {node.value!r}")
        return value
    if kind == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            _fail(node, f"{key}: expected a number, got {node.value!r}")
        return float(value)
    if kind == "str":
        if not isinstance(value, str):
            _fail(node, f"{key}: expected a string, got {node.value!r}")
        return value
    raise AssertionError(kind)


def _check(node, field: Field, value, key):
    if value is None:
        if not field.optional:
            _fail(node, f"{key}: null is not allowed here")
        return None
    items = value if isinstance(value, list) else [value]
    for v in items:
        if field.positive and isinstance(v, (int, float)) and not v > 0:
            _fail(node, f"{key}: must be positive, got {v}")
        if field.choices is not None and v not in field.choices:
            _fail(node, f"{key}: {v!r} is not one of {list(field.choices)}")
    return value


def _value(node, field: Field, key):
    if field.kind in ("floats", "ints", "strs"):
        if not isinstance(node, yaml.SequenceNode):
            _fail(node, f"{key}: expected a list")
        base = {"floats": "float", "ints": "int", "strs": "str"}[field.kind]
        vals = [_scalar(item, base, key) for item in node.value]
        for item, v in zip(node.value, vals):
            if v is None:
                _fail(item, f"{key}: list entries may not be null")
        if field.length is not None and len(vals) != field.length:
            _fail(node, f"{key}: expected {field.length} entries")
        return _check(node, field, vals, key)
    if field.kind == "map":
        if not isinstance(node, yaml.MappingNode):
            _fail(node, f"{key}: expected a mapping")
        return _plain(node)
    return _check(node, field, _scalar(node, field.kind, key), key)


def _plain(node):
    """Mapping node to plain Python with line marks kept for later checks."""
    return yaml.safe_load(yaml.serialize(node)) if node.value else {}


def _walk(node, schema, path, out, marks):
    if not isinstance(node, yaml.MappingNode):
        _fail(node, f"{path or 'top level'}: expected a mapping")
    seen = set()
    for knode, vnode in node.value:
        key = knode.value
        full = f"{path}.{key}" if path else key
        if key in seen:
            _fail(knode, f"duplicate key {full!r}")
        seen.add(key)
        if key not in schema:
            _fail(knode, f"unknown key {full!r}")
        sub = schema[key]
        marks[full] = vnode
        if isinstance(sub, dict):
            _walk(vnode, sub, full, out[key], marks)
        else:
            out[key] = _value(vnode, sub, full)


def _check_overrides(cfg, marks):
    from . import acceptance

    normal = {}
    for key, kw in cfg["acceptance"]["overrides"].items():
        try:
            cid = int(key)
        except (TypeError, ValueError):
            _fail_at(marks, "acceptance.overrides", f"acceptance.overrides: {key!r} is not a criterion id")
        fn = acceptance.CRITERIA.get(cid)
        if fn is None:
            _fail_at(marks, "acceptance.overrides", f"acceptance.overrides: criterion {cid} takes no overrides")
        if not isinstance(kw, dict):
            _fail_at(marks, "acceptance.overrides", f"acceptance.overrides: entry {cid} must be a mapping")
        params = inspect.signature(fn.__wrapped__).parameters
        for name in kw:
            if name not in params:
                _fail_at(marks, "acceptance.overrides",
                         f"acceptance.overrides: criterion {cid} has no parameter {name!r}")
        normal[str(cid)] = kw
    cfg["acceptance"]["overrides"] = normal


def _fail_at(marks, key, msg):
    node = marks.get(key)
    if node is None:
        raise ConfigError(msg)
    _fail(node, msg)


def _cross_checks(cfg, marks):
    d = cfg["domain"]
    if not d["r_omega"] < d["rho"]:
        _fail_at(marks, "domain.rho", "domain: need r_omega < rho")
    if cfg["schema_version"] != SCHEMA_VERSION:
        _fail_at(marks, "schema_version", f"schema_version {cfg['schema_version']} is not supported "
                                          f"(expected {SCHEMA_VERSION})")
    D = d["n"] + 1
    for key in ("z0", "zeta0"):
        if len(cfg["flow"][key]) != D:
            _fail_at(marks, f"flow.{key}", f"flow.{key}: expected {D} entries for n = {d['n']}")
    bad = [c for c in cfg["acceptance"]["criteria"] if not 1 <= c <= 13]
    if bad:
        _fail_at(marks, "acceptance.criteria", f"acceptance.criteria: unknown criteria {bad}")


def parse_config(text: str, name: str = "<config>") -> dict:
    """Validate YAML ``text`` and return the fully resolved configuration."""
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"{name}:{mark.line + 1}:{mark.column + 1}" if mark else name
        raise ConfigError(f"{where}: {getattr(exc, 'problem', exc)}") from None
    cfg = default_config()
    marks: dict = {}
    if root is not None:
        if root.start_mark.name != name:
            for n in _nodes(root):
                n.start_mark.name = name
        _walk(root, SCHEMA, "", cfg, marks)
    _cross_checks(cfg, marks)
    _check_overrides(cfg, marks)
    return cfg


def _nodes(node):
    yield node
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            yield k
            yield from _nodes(v)
    elif isinstance(node, yaml.SequenceNode):
        for v in node.value:
            yield from _nodes(v)


def load_config(path: str) -> dict:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), name=str(path))


def canonical(cfg: dict) -> str:
    return json.dumps(cfg, sort_keys=True, separators=(",", ":"))


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(canonical(cfg).encode()).hexdigest()
