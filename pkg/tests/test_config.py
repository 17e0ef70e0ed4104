import glob
import os

import pytest

from sttomo.config import config_hash, default_config, load_config, parse_config
from sttomo.errors import ConfigError

CONFIGS = sorted(glob.glob(os.path.join(os.path.dirname(__file__), "..", "configs", "*.yaml")))


def test_empty_text_gives_defaults():
    assert parse_config("") == default_config()
    assert default_config()["domain"] == {"n": 2, "r_omega": 1.0, "rho": 1.25}


@pytest.mark.parametrize("path", CONFIGS, ids=os.path.basename)
def test_shipped_configs_load(path):
    cfg = load_config(path)
    assert cfg["schema_version"] == 1


def test_unknown_key_reports_its_position():
    text = "seed: 1\nmetric:\n  epsilon: 0.01\n"
    with pytest.raises(ConfigError, match=r"run\.yaml:3:3: unknown key 'metric\.epsilon'"):
        parse_config(text, "run.yaml")


def test_duplicate_key_is_rejected():
    with pytest.raises(ConfigError, match=r"c\.yaml:2:1: duplicate key 'seed'"):
        parse_config("seed: 1\nseed: 2\n", "c.yaml")


@pytest.mark.parametrize("text, needle", [
    ("seed: one\n", "expected an integer"),
    ("metric:\n  eps: [1, 2]\n", "expected a single float"),
    ("metric:\n  special_form: 1\n", "expected true or false"),
    ("tau:\n  kappa: -1\n", "must be positive"),
    ("experiment: everything\n", "is not one of"),
    ("fourier:\n  parts: slice\n", "expected a list"),
    ("seed: [\n", "c.yaml:"),
])
def test_bad_values_are_located(text, needle):
    with pytest.raises(ConfigError, match=r"c\.yaml:\d+:\d+") as info:
        parse_config(text, "c.yaml")
    assert needle in str(info.value)


def test_null_only_where_optional():
    assert parse_config("flow:\n  step: null\n")["flow"]["step"] is None
    with pytest.raises(ConfigError, match="null is not allowed"):
        parse_config("tau:\n  kappa: null\n")


def test_integers_are_accepted_as_floats():
    assert parse_config("domain:\n  rho: 2\n")["domain"]["rho"] == 2.0


def test_cross_checks():
    with pytest.raises(ConfigError, match="r_omega < rho"):
        parse_config("domain:\n  rho: 0.5\n")
    with pytest.raises(ConfigError, match="expected 4 entries"):
        parse_config("domain:\n  n: 3\n")
    with pytest.raises(ConfigError, match="unknown criteria"):
        parse_config("acceptance:\n  criteria: [1, 14]\n")
    with pytest.raises(ConfigError, match="schema_version 2"):
        parse_config("schema_version: 2\n")


def test_overrides_are_checked_against_the_criteria():
    cfg = parse_config("acceptance:\n  overrides:\n    1: {n_src: 4}\n")
    assert cfg["acceptance"]["overrides"] == {"1": {"n_src": 4}}
    with pytest.raises(ConfigError, match=r"c\.yaml:3:5: .*no parameter 'bogus'"):
        parse_config("acceptance:\n  overrides:\n    1: {bogus: 4}\n", "c.yaml")
    with pytest.raises(ConfigError, match="not a criterion id"):
        parse_config("acceptance:\n  overrides:\n    first: {n_src: 4}\n")
    with pytest.raises(ConfigError, match="takes no overrides"):
        parse_config("acceptance:\n  overrides:\n    99: {n_src: 4}\n")


def test_hash_depends_only_on_content():
    a = parse_config("seed: 3\ntau:\n  n_src: 4\n")
    b = parse_config("tau: {n_src: 4}\nseed: 3\n")
    assert config_hash(a) == config_hash(b)
    assert config_hash(a) != config_hash(default_config())
    assert len(config_hash(a)) == 64
