from dataclasses import dataclass, field

import pytest
from hypothesis import given
from hypothesis import strategies as st

from textforge.configfile import (
    apply_overrides,
    coerce_value,
    config_summary,
    load_config_file,
    merge_config,
    normalize_key,
    parse_config_text,
    split_known_keys,
)
from textforge.errors import ConfigurationError


@dataclass
class _Demo:
    steps: int = 100
    lr: float = 1e-3
    name: str = "run"
    verbose: bool = False
    dims: tuple = (1, 2)
    limit: int | None = None
    log_every: int = 0


def test_parse_basics():
    text = """
    # a comment
    steps = 50

    lr=0.5
    name = hello world
    """
    assert parse_config_text(text) == {"steps": "50", "lr": "0.5", "name": "hello world"}


def test_parse_rejects_bad_lines():
    with pytest.raises(ConfigurationError):
        parse_config_text("just some words")
    with pytest.raises(ConfigurationError):
        parse_config_text("= value")
    with pytest.raises(ConfigurationError):
        parse_config_text("a=1\na=2")


def test_normalize_key_dashes():
    assert normalize_key("lambda-char") == "lambda_char"
    assert normalize_key("  x ") == "x"


def test_coerce_bool_spellings():
    for raw in ("true", "YES", "on", "1"):
        assert coerce_value(raw, bool, "k") is True
    for raw in ("false", "No", "off", "0"):
        assert coerce_value(raw, bool, "k") is False
    with pytest.raises(ConfigurationError):
        coerce_value("maybe", bool, "k")


def test_coerce_numbers_and_errors():
    assert coerce_value("42", int, "k") == 42
    assert coerce_value("2.5", float, "k") == 2.5
    with pytest.raises(ConfigurationError):
        coerce_value("2.5", int, "k")
    with pytest.raises(ConfigurationError):
        coerce_value("abc", float, "k")


def test_coerce_optional_and_tuple():
    assert coerce_value("none", int | None, "k") is None
    assert coerce_value("7", int | None, "k") == 7
    assert coerce_value("1, 2, 3", tuple[int, ...], "k") == (1, 2, 3)


def test_apply_overrides_round_trip():
    cfg = apply_overrides(_Demo(), {"steps": "5", "lr": "0.1", "verbose": "yes"})
    assert cfg.steps == 5
    assert cfg.lr == pytest.approx(0.1)
    assert cfg.verbose is True
    # original untouched
    assert _Demo().steps == 100


def test_apply_overrides_unknown_key():
    with pytest.raises(ConfigurationError, match="unknown"):
        apply_overrides(_Demo(), {"zzz": "1"})


def test_apply_overrides_dash_spelling():
    assert apply_overrides(_Demo(), {"log-every": "25"}).log_every == 25


def test_merge_precedence_flags_beat_file():
    cfg = merge_config(_Demo(), {"steps": "10", "lr": "0.9"}, {"steps": "20"})
    assert cfg.steps == 20
    assert cfg.lr == pytest.approx(0.9)


def test_split_known_keys():
    known, unknown = split_known_keys(_Demo(), {"steps": "1", "mystery": "2"})
    assert known == {"steps": "1"}
    assert unknown == {"mystery": "2"}


def test_load_config_file_missing(tmp_path):
    with pytest.raises(ConfigurationError):
        load_config_file(tmp_path / "absent.cfg")


def test_load_config_file_round_trip(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("steps = 7\nverbose = true\n")
    cfg = merge_config(_Demo(), load_config_file(p), {})
    assert cfg.steps == 7 and cfg.verbose is True


def test_config_summary_lists_fields():
    text = config_summary(_Demo(steps=3))
    assert "steps" in text and "3" in text


@given(st.integers(min_value=-10**6, max_value=10**6))
def test_int_coercion_round_trips(n):
    assert coerce_value(str(n), int, "k") == n


@given(st.booleans())
def test_bool_coercion_round_trips(b):
    assert coerce_value(str(b).lower(), bool, "k") is b
