"""Character segmenters: a pixel-space U-Net for template images and a
latent-space U-Net that supplies the character-aware training loss.

Both classify every spatial position into 96 classes (95 characters plus the
null/background class 0). The latent segmenter is trained once on
(vae_encode(image), mask-at-latent-resolution) pairs and then frozen; during
diffusion training its cross-entropy on the predicted clean latent is the
character-aware loss term.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .alphabet import DEFAULT_ALPHABET
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import ConfigurationError, DataError
from .glyphs import CharSegMask
from .schedule import NoiseSchedule, x0_from_noise
from .unet import UNet, UNetConfig
from .vae import image_to_model

NUM_CHAR_CLASSES = DEFAULT_ALPHABET.num_classes  # 95 characters + null


def pixel_segmenter_unet(base_width: int = 16) -> UNetConfig:
    """Default pixel-space architecture: 4 down/up stages (1/16 reduction)."""
    return UNetConfig(
        in_channels=3,
        out_channels=NUM_CHAR_CLASSES,
        base_width=base_width,
        channel_mults=(1, 2, 2, 4),
        groups=8,
    )


def latent_segmenter_unet(base_width: int = 32, latent_channels: int = 4) -> UNetConfig:
    """Latent-space architecture; shallower because latents are already small."""
    return UNetConfig(
        in_channels=latent_channels,
        out_channels=NUM_CHAR_CLASSES,
        base_width=base_width,
        channel_mults=(1, 2),
        groups=8,
    )


@dataclass
class SegmenterConfig:
    unet: UNetConfig = field(default_factory=pixel_segmenter_unet)
    optimizer: str = "adadelta"
    lr: float = 1.0
    steps: int = 400
    batch_size: int = 16
    val_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.unet.out_channels != NUM_CHAR_CLASSES:
            raise ConfigurationError(
                f"segmenter must output {NUM_CHAR_CLASSES} classes"
            )
        if self.optimizer not in ("adadelta", "adamw"):
            raise ConfigurationError(f"unknown optimizer {self.optimizer!r}")
        if not 0 < self.val_fraction < 1:
            raise ConfigurationError("val_fraction must be in (0, 1)")


class CharSegmenter(nn.Module):
    """U-Net classifier over the 96 character classes."""

    def __init__(self, config: SegmenterConfig):
        super().__init__()
        self.config = config
        self.unet = UNet(config.unet)

    def logits(self, x: torch.Tensor) -> torch.Tensor:
        return self.unet(x)

    @torch.no_grad()
    def segment(self, x: torch.Tensor) -> torch.Tensor:
        """(B, C, H, W) -> (B, H, W) int64 class map."""
        self.eval()
        return self.logits(x).argmax(dim=1)

    def freeze(self) -> "CharSegmenter":
        self.eval()
        for p in self.parameters():
            p.requires_grad_(False)
        return self


def segment_template_image(segmenter: CharSegmenter, image_uint8: np.ndarray) -> CharSegMask:
    """Run the pixel segmenter on an (H, W, 3) uint8 image."""
    if image_uint8.ndim != 3 or image_uint8.shape[2] != 3:
        raise DataError(f"expected (H, W, 3) uint8 image, got {image_uint8.shape}")
    x = image_to_model(torch.from_numpy(np.ascontiguousarray(image_uint8)))
    classes = segmenter.segment(x.permute(2, 0, 1).unsqueeze(0))[0]
    return CharSegMask(classes.numpy().astype(np.uint8))


def latent_x0_from_noise(
    noisy_latent: torch.Tensor,
    predicted_noise: torch.Tensor,
    t: int | torch.Tensor,
    schedule: NoiseSchedule,
) -> torch.Tensor:
    """Predicted clean latent from the noise estimate (differentiable)."""
    return x0_from_noise(noisy_latent, t, predicted_noise, schedule)


def char_cross_entropy(logits: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Mean per-position cross-entropy; target is (B, H, W) class indices."""
    if logits.shape[-2:] != target.shape[-2:]:
        raise DataError(
            f"logits {tuple(logits.shape[-2:])} vs target {tuple(target.shape[-2:])}"
        )
    return nn.functional.cross_entropy(logits, target.long())


def char_aware_loss(
    predicted_latent: torch.Tensor,
    target_mask: torch.Tensor,
    latent_segmenter: CharSegmenter,
) -> torch.Tensor:
    """Cross-entropy of the frozen latent segmenter on the predicted latent."""
    return char_cross_entropy(latent_segmenter.unet(predicted_latent), target_mask)


def resize_class_mask(mask: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Nearest-neighbor resize of a 2-D class-index mask."""
    if mask.ndim != 2:
        raise DataError(f"expected 2-D mask, got shape {mask.shape}")
    in_h, in_w = mask.shape
    rows = (np.arange(out_h) * in_h) // out_h
    cols = (np.arange(out_w) * in_w) // out_w
    return mask[np.ix_(rows, cols)]


def mask_to_latent_target(mask: CharSegMask, latent_hw: tuple[int, int]) -> torch.Tensor:
    """CharSegMask at image resolution -> (H', W') int64 target for the latent segmenter."""
    resized = resize_class_mask(mask.grid, *latent_hw)
    return torch.from_numpy(resized.astype(np.int64))


def corpus_fingerprint(inputs: torch.Tensor, targets: torch.Tensor) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(inputs.numpy()).tobytes())
    h.update(np.ascontiguousarray(targets.numpy()).tobytes())
    return h.hexdigest()[:16]


def pixel_accuracy(segmenter: CharSegmenter, inputs: torch.Tensor, targets: torch.Tensor) -> float:
    with torch.no_grad():
        pred = segmenter.segment(inputs)
    return float((pred == targets).float().mean())


SEGMENTER_KIND = "char-segmenter"


def segmenter_config_from_dict(raw: dict) -> SegmenterConfig:
    raw = dict(raw)
    unet = dict(raw["unet"])
    unet["channel_mults"] = tuple(unet["channel_mults"])
    unet["attn_stages"] = tuple(unet["attn_stages"])
    raw["unet"] = UNetConfig(**unet)
    return SegmenterConfig(**raw)


def save_char_segmenter(path, model: CharSegmenter, meta: dict | None = None) -> None:
    save_checkpoint(path, SEGMENTER_KIND, model.config, model.state_dict(), meta)


def load_char_segmenter(path) -> CharSegmenter:
    payload = load_checkpoint(path, expected_kind=SEGMENTER_KIND)
    model = CharSegmenter(segmenter_config_from_dict(payload["config"]))
    model.load_state_dict(payload["state"])
    return model


def train_segmenter(
    inputs: torch.Tensor,
    targets: torch.Tensor,
    config: SegmenterConfig,
    log_every: int = 0,
) -> tuple[CharSegmenter, dict]:
    """Train a segmenter on (inputs, class-mask targets); returns (model, meta).

    ``meta`` records the validation pixel accuracy, the loss trace, and a
    fingerprint of the training corpus.
    """
    if inputs.shape[0] == 0:
        raise DataError("empty corpus")
    if inputs.shape[0] != targets.shape[0]:
        raise DataError("inputs and targets disagree on corpus size")
    torch.manual_seed(config.seed)
    model = CharSegmenter(config)
    if config.optimizer == "adadelta":
        opt = torch.optim.Adadelta(model.parameters(), lr=config.lr)
    else:
        opt = torch.optim.AdamW(model.parameters(), lr=config.lr)

    n_val = max(1, int(inputs.shape[0] * config.val_fraction))
    perm = torch.randperm(inputs.shape[0], generator=torch.Generator().manual_seed(config.seed))
    val_idx, train_idx = perm[:n_val], perm[n_val:]
    if train_idx.numel() == 0:
        raise DataError("corpus too small to hold out validation data")
    gen = torch.Generator().manual_seed(config.seed + 1)

    losses = []
    model.train()
    for step in range(config.steps):
        idx = train_idx[torch.randint(0, train_idx.numel(), (config.batch_size,), generator=gen)]
        loss = char_cross_entropy(model.logits(inputs[idx]), targets[idx])
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()
        losses.append(float(loss.detach()))
        if log_every and (step + 1) % log_every == 0:
            print(f"segmenter step {step + 1}/{config.steps} loss {losses[-1]:.4f}")

    model.eval()
    meta = {
        "val_pixel_accuracy": pixel_accuracy(model, inputs[val_idx], targets[val_idx]),
        "losses": losses,
        "corpus_fingerprint": corpus_fingerprint(inputs, targets),
    }
    return model, meta
