"""Shared checkpoint container: config plus named parameter tensors.

One format for every trainable component so tools can inspect any checkpoint
without knowing in advance what it holds.
"""

from __future__ import annotations

from dataclasses import asdict, is_dataclass
from pathlib import Path
from typing import Any

import torch

FORMAT = "textforge-checkpoint"
VERSION = 1


def save_checkpoint(
    path: str | Path,
    kind: str,
    config: Any,
    state_dict: dict[str, torch.Tensor],
    meta: dict | None = None,
) -> None:
    if is_dataclass(config) and not isinstance(config, type):
        config = asdict(config)
    payload = {
        "format": FORMAT,
        "version": VERSION,
        "kind": kind,
        "config": config,
        "state": state_dict,
        "meta": meta or {},
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)


def load_checkpoint(path: str | Path, expected_kind: str | None = None) -> dict:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if not isinstance(payload, dict) or payload.get("format") != FORMAT:
        raise ValueError(f"{path} is not a {FORMAT} file")
    if expected_kind is not None and payload["kind"] != expected_kind:
        raise ValueError(f"expected kind {expected_kind!r}, found {payload['kind']!r}")
    return payload
