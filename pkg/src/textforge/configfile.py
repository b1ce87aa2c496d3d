"""Flat key=value config files with typed overrides for dataclass configs.

Precedence is flags > file > dataclass defaults. Keys mirror dataclass field
names; ``-`` is accepted as a spelling of ``_`` so shell-friendly flags like
``--set lambda-char=0.1`` work unchanged.
"""

from __future__ import annotations

import dataclasses
import types
import typing
from pathlib import Path
from typing import Any, TypeVar

from .errors import ConfigurationError

T = TypeVar("T")

_TRUE = {"true", "yes", "on", "1"}
_FALSE = {"false", "no", "off", "0"}


def parse_config_text(text: str) -> dict[str, str]:
    """``key = value`` per line; blank lines and ``#`` comments ignored."""
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {lineno}: expected key=value, got {line!r}")
        key, _, value = line.partition("=")
        key = normalize_key(key.strip())
        if not key:
            raise ConfigurationError(f"line {lineno}: empty key")
        if key in values:
            raise ConfigurationError(f"line {lineno}: duplicate key {key!r}")
        values[key] = value.strip()
    return values


def load_config_file(path: str | Path) -> dict[str, str]:
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"config file not found: {path}")
    return parse_config_text(path.read_text(encoding="utf-8"))


def normalize_key(key: str) -> str:
    return key.strip().replace("-", "_")


def coerce_value(raw: str, annotation: Any, key: str) -> Any:
    """Parse ``raw`` as the annotated field type."""
    origin = typing.get_origin(annotation)
    if origin is typing.Union or origin is types.UnionType:  # Optional[X] / X | None
        args = [a for a in typing.get_args(annotation) if a is not type(None)]
        if raw.lower() in {"none", "null", ""}:
            return None
        if len(args) == 1:
            return coerce_value(raw, args[0], key)
        raise ConfigurationError(f"{key}: ambiguous union type {annotation}")
    if annotation is bool:
        low = raw.lower()
        if low in _TRUE:
            return True
        if low in _FALSE:
            return False
        raise ConfigurationError(f"{key}: expected a boolean, got {raw!r}")
    if annotation is int:
        try:
            return int(raw)
        except ValueError as exc:
            raise ConfigurationError(f"{key}: expected an integer, got {raw!r}") from exc
    if annotation is float:
        try:
            return float(raw)
        except ValueError as exc:
            raise ConfigurationError(f"{key}: expected a number, got {raw!r}") from exc
    if annotation is str:
        return raw
    if origin is tuple:
        item_types = typing.get_args(annotation)
        item = item_types[0] if item_types else str
        parts = [p.strip() for p in raw.split(",") if p.strip()]
        return tuple(coerce_value(p, item, key) for p in parts)
    raise ConfigurationError(f"{key}: unsupported config field type {annotation}")


def _field_types(cfg: Any) -> dict[str, Any]:
    return typing.get_type_hints(type(cfg))


def apply_overrides(cfg: T, overrides: dict[str, str], *, source: str = "override") -> T:
    """Return a copy of dataclass ``cfg`` with string overrides coerced in.

    Unknown keys raise; nested dataclass fields are not addressable (flat
    key space only).
    """
    if not dataclasses.is_dataclass(cfg) or isinstance(cfg, type):
        raise ConfigurationError("apply_overrides expects a dataclass instance")
    hints = _field_types(cfg)
    names = {f.name for f in dataclasses.fields(cfg)}
    updates: dict[str, Any] = {}
    for raw_key, raw_value in overrides.items():
        key = normalize_key(raw_key)
        if key not in names:
            raise ConfigurationError(
                f"unknown {source} key {raw_key!r} for {type(cfg).__name__}"
            )
        annotation = hints[key]
        if dataclasses.is_dataclass(annotation):
            raise ConfigurationError(f"{key}: nested configs cannot be set from flat keys")
        updates[key] = coerce_value(raw_value, annotation, key)
    return dataclasses.replace(cfg, **updates)


def split_known_keys(cfg: Any, values: dict[str, str]) -> tuple[dict[str, str], dict[str, str]]:
    """Partition ``values`` into (keys of ``cfg``, everything else)."""
    names = {f.name for f in dataclasses.fields(cfg)}
    known = {k: v for k, v in values.items() if normalize_key(k) in names}
    rest = {k: v for k, v in values.items() if normalize_key(k) not in names}
    return known, rest


def merge_config(cfg: T, file_values: dict[str, str], flag_values: dict[str, str]) -> T:
    """Defaults <- file <- flags, later sources winning per key."""
    merged = apply_overrides(cfg, file_values, source="config-file")
    return apply_overrides(merged, flag_values, source="flag")


def config_summary(cfg: Any) -> str:
    """One ``key = value`` line per field, in declaration order."""
    lines = []
    for f in dataclasses.fields(cfg):
        value = getattr(cfg, f.name)
        if dataclasses.is_dataclass(value) and not isinstance(value, type):
            for inner in config_summary(value).splitlines():
                lines.append(f"{f.name}.{inner}")
        elif isinstance(value, tuple):
            lines.append(f"{f.name} = {','.join(str(v) for v in value)}")
        else:
            lines.append(f"{f.name} = {value}")
    return "\n".join(lines)
