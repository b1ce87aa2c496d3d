from dataclasses import dataclass

import pytest
import torch

from textforge.checkpoint import FORMAT, VERSION, load_checkpoint, save_checkpoint


@dataclass
class _Cfg:
    width: int = 8
    name: str = "x"


def test_round_trip_preserves_everything(tmp_path):
    path = tmp_path / "model.ckpt"
    state = {"w": torch.randn(3, 3), "b": torch.zeros(3)}
    save_checkpoint(path, "demo-kind", _Cfg(width=16), state, meta={"steps": 10})
    payload = load_checkpoint(path, expected_kind="demo-kind")
    assert payload["format"] == FORMAT
    assert payload["version"] == VERSION
    assert payload["config"] == {"width": 16, "name": "x"}
    assert payload["meta"] == {"steps": 10}
    assert torch.equal(payload["state"]["w"], state["w"])


def test_kind_mismatch_raises(tmp_path):
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, "kind-a", {"k": 1}, {})
    with pytest.raises(ValueError):
        load_checkpoint(path, expected_kind="kind-b")


def test_non_checkpoint_file_rejected(tmp_path):
    path = tmp_path / "junk.pt"
    torch.save({"something": "else"}, path)
    with pytest.raises(ValueError):
        load_checkpoint(path)


def test_plain_dict_config_allowed(tmp_path):
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, "demo", {"a": 1}, {})
    assert load_checkpoint(path)["config"] == {"a": 1}


def test_parent_directories_created(tmp_path):
    path = tmp_path / "deep" / "nest" / "model.ckpt"
    save_checkpoint(path, "demo", {"a": 1}, {})
    assert path.exists()
