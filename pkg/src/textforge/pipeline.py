"""Prompt-to-image glue: Stage-1 layout, glyph-mask rendering, Stage-2 sampling.

One object bundles the trained models so the CLI and the HTTP service share a
single code path, and the whole bundle round-trips through one checkpoint file.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import torch

from .checkpoint import load_checkpoint, save_checkpoint
from .diffusion import (
    Denoiser,
    DenoiserConfig,
    DiffusionModels,
    MaskEncoderConfig,
    SamplerConfig,
    inpaint_region,
    remove_text,
    sample_image,
)
from .errors import DataError, DegenerateRegionError
from .geometry import BoundingBoxSet
from .glyphs import CharSegMask, GlyphAtlas, RenderSpec, compose_char_mask, default_atlas
from .layout import LayoutModel, LayoutModelConfig
from .prompts import extract_keywords, prepare_prompt
from .segmenter import (
    CharSegmenter,
    segment_template_image,
    segmenter_config_from_dict,
)
from .tokenizer import BpeTokenizer, default_tokenizer
from .vae import ToyVAE, VAEConfig, image_to_model

PIPELINE_KIND = "two-stage-pipeline"


def caption_token_ids(text: str, tokenizer: BpeTokenizer | None = None) -> torch.Tensor:
    """(1, L) conditioning ids; quote characters are stripped first so quoted
    keywords read the same as the plain captions seen in training."""
    tokenizer = tokenizer or default_tokenizer()
    cleaned, _ = extract_keywords(text)
    return torch.tensor([tokenizer.encode(cleaned)], dtype=torch.long)


def image_tensor(image: np.ndarray, expected_size: int | None = None) -> torch.Tensor:
    """(H, W, 3) uint8 -> (1, 3, H, W) float in [-1, 1]."""
    arr = np.asarray(image)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise DataError(f"expected an (H, W, 3) image, got shape {arr.shape}")
    if expected_size is not None and arr.shape[:2] != (expected_size, expected_size):
        raise DataError(
            f"image is {arr.shape[0]}x{arr.shape[1]}, expected {expected_size}x{expected_size}"
        )
    chw = torch.from_numpy(np.ascontiguousarray(arr.transpose(2, 0, 1)))
    return image_to_model(chw).unsqueeze(0)


def region_tensor(region: np.ndarray, expected_size: int | None = None) -> torch.Tensor:
    """(H, W) truthy array -> (1, H, W) bool region mask."""
    arr = np.asarray(region)
    if arr.ndim != 2:
        raise DataError(f"expected an (H, W) region mask, got shape {arr.shape}")
    if expected_size is not None and arr.shape != (expected_size, expected_size):
        raise DataError(
            f"region is {arr.shape[0]}x{arr.shape[1]}, expected {expected_size}x{expected_size}"
        )
    return torch.from_numpy(arr.astype(bool)).unsqueeze(0)


def to_uint8_hwc(batch: torch.Tensor) -> np.ndarray:
    """First image of a (B, 3, H, W) uint8 batch as (H, W, 3)."""
    return batch[0].permute(1, 2, 0).cpu().numpy()


def region_word_boxes(region: np.ndarray, num_words: int, image_size: int) -> BoundingBoxSet:
    """Stack ``num_words`` rows inside the region's bounding rectangle."""
    ys, xs = np.nonzero(np.asarray(region).astype(bool))
    if ys.size == 0:
        raise DegenerateRegionError("cannot place text in an empty region")
    y0, y1 = int(ys.min()), int(ys.max()) + 1
    x0, x1 = int(xs.min()), int(xs.max()) + 1
    rows = []
    step = (y1 - y0) / max(1, num_words)
    for i in range(num_words):
        rows.append((x0, y0 + i * step, x1, y0 + (i + 1) * step))
    return BoundingBoxSet.from_pixels(np.array(rows), image_size, image_size)


@dataclass
class LayoutResult:
    keywords: list[str]
    boxes: BoundingBoxSet  # normalized (x0, y0, x1, y1)


class TwoStagePipeline:
    """Trained models behind one prompt-in / image-out facade."""

    def __init__(
        self,
        layout_model: LayoutModel,
        models: DiffusionModels,
        tokenizer: BpeTokenizer | None = None,
        atlas: GlyphAtlas | None = None,
        pixel_segmenter: CharSegmenter | None = None,
    ):
        self.layout_model = layout_model
        self.models = models
        ctx = models.denoiser.config.context_length
        self.tokenizer = tokenizer or default_tokenizer(ctx)
        if self.tokenizer.context_length != ctx:
            raise DataError(
                f"tokenizer context {self.tokenizer.context_length} != denoiser context {ctx}"
            )
        if layout_model.config.seq_len != self.tokenizer.context_length:
            raise DataError(
                f"layout seq_len {layout_model.config.seq_len} != "
                f"tokenizer context {self.tokenizer.context_length}"
            )
        self.atlas = atlas or default_atlas()
        self.pixel_segmenter = pixel_segmenter

    @property
    def image_size(self) -> int:
        return self.models.denoiser.config.image_size

    @property
    def k_max(self) -> int:
        return self.layout_model.config.k_max

    def predict_layout(self, prompt: str) -> LayoutResult:
        tp, spans = prepare_prompt(prompt, self.tokenizer, self.atlas, self.k_max)
        boxes = self.layout_model.predict_boxes(tp, len(spans))
        return LayoutResult([s.word for s in spans], boxes)

    def render_mask(self, keywords: list[str], boxes: BoundingBoxSet) -> CharSegMask:
        """Draw keywords into their (normalized) boxes at canvas resolution."""
        if len(keywords) != len(boxes):
            raise DataError(f"{len(keywords)} keywords for {len(boxes)} boxes")
        size = self.image_size
        if not keywords:
            return CharSegMask.empty(size, size)
        pix = boxes.canonical().to_pixels(size, size)
        items = [(w, tuple(float(v) for v in b)) for w, b in zip(keywords, pix)]
        spec = RenderSpec(items=items, height=size, width=size)
        spec.validate()
        return compose_char_mask(spec, self.atlas)

    def caption_tokens(self, prompt: str) -> torch.Tensor:
        return caption_token_ids(prompt, self.tokenizer)

    def mask_tensor(self, mask: CharSegMask) -> torch.Tensor:
        if (mask.height, mask.width) != (self.image_size, self.image_size):
            raise DataError(
                f"mask is {mask.height}x{mask.width}, "
                f"expected {self.image_size}x{self.image_size}"
            )
        return torch.from_numpy(mask.grid.astype(np.int64)).unsqueeze(0)

    def resolve_mask(
        self,
        prompt: str,
        boxes: BoundingBoxSet | None = None,
        keywords: list[str] | None = None,
        mask: CharSegMask | None = None,
        template_image: np.ndarray | None = None,
    ) -> tuple[CharSegMask, LayoutResult | None]:
        """Pick the conditioning mask from exactly one source: an explicit
        mask, a template image run through the segmenter, keyword boxes, or a
        fresh Stage-1 prediction."""
        supplied = sum(x is not None for x in (mask, boxes, template_image))
        if supplied > 1:
            raise DataError("supply at most one of mask, boxes, or template image")
        if mask is not None:
            return mask, None
        if template_image is not None:
            if self.pixel_segmenter is None:
                raise DataError("no template segmenter loaded")
            return segment_template_image(self.pixel_segmenter, template_image), None
        if boxes is not None:
            if keywords is None:
                raise DataError("boxes need keyword strings to render")
            return self.render_mask(keywords, boxes), None
        layout = self.predict_layout(prompt)
        return self.render_mask(layout.keywords, layout.boxes), layout

    def generate(
        self,
        prompt: str,
        *,
        boxes: BoundingBoxSet | None = None,
        keywords: list[str] | None = None,
        mask: CharSegMask | None = None,
        template_image: np.ndarray | None = None,
        sampler: SamplerConfig | None = None,
    ) -> np.ndarray:
        """Whole-image generation; returns (H, W, 3) uint8."""
        sampler = sampler or SamplerConfig()
        char_mask, _ = self.resolve_mask(prompt, boxes, keywords, mask, template_image)
        out = sample_image(
            self.models, self.caption_tokens(prompt), self.mask_tensor(char_mask), sampler
        )
        return to_uint8_hwc(out)

    def inpaint(
        self,
        image: np.ndarray,
        region: np.ndarray,
        text: str | None = None,
        boxes: BoundingBoxSet | None = None,
        sampler: SamplerConfig | None = None,
    ) -> np.ndarray:
        """Regenerate ``region`` of ``image``; without text the region's
        characters are removed instead."""
        sampler = sampler or SamplerConfig()
        img_t = image_tensor(image, self.image_size)
        reg_t = region_tensor(region, self.image_size)
        if not bool(reg_t.any()):
            raise DegenerateRegionError("inpainting needs a non-empty region")
        if text is None or not text.strip():
            return to_uint8_hwc(remove_text(self.models, img_t, reg_t, sampler))
        words = text.split()
        if boxes is None:
            boxes = region_word_boxes(region, len(words), self.image_size)
        char_mask = self.render_mask(words, boxes)
        out = inpaint_region(
            self.models,
            img_t,
            reg_t,
            self.mask_tensor(char_mask),
            self.caption_tokens(text),
            sampler,
        )
        return to_uint8_hwc(out)


# -- Bundle persistence ---------------------------------------------------------


def _module_entry(module: torch.nn.Module, config) -> dict:
    return {"config": asdict(config), "state": module.state_dict()}


def save_pipeline(path, pipe: TwoStagePipeline) -> None:
    models = pipe.models
    state = {
        "layout": _module_entry(pipe.layout_model, pipe.layout_model.config),
        "vae": _module_entry(models.vae, models.vae.config),
        "denoiser": _module_entry(models.denoiser, models.denoiser.config),
    }
    if models.latent_segmenter is not None:
        state["latent_segmenter"] = _module_entry(
            models.latent_segmenter, models.latent_segmenter.config
        )
    if pipe.pixel_segmenter is not None:
        state["pixel_segmenter"] = _module_entry(
            pipe.pixel_segmenter, pipe.pixel_segmenter.config
        )
    save_checkpoint(path, PIPELINE_KIND, config=None, state_dict=state)


def _denoiser_config(raw: dict) -> DenoiserConfig:
    raw = dict(raw)
    raw["mask_encoder"] = MaskEncoderConfig(**raw["mask_encoder"])
    raw["channel_mults"] = tuple(raw["channel_mults"])
    raw["attn_stages"] = tuple(raw["attn_stages"])
    return DenoiserConfig(**raw)


def _load_segmenter(entry: dict) -> CharSegmenter:
    seg = CharSegmenter(segmenter_config_from_dict(entry["config"]))
    seg.load_state_dict(entry["state"])
    return seg


def load_pipeline(path) -> TwoStagePipeline:
    payload = load_checkpoint(path, expected_kind=PIPELINE_KIND)
    state = payload["state"]

    layout_cfg = LayoutModelConfig(**state["layout"]["config"])
    layout = LayoutModel(layout_cfg)
    layout.load_state_dict(state["layout"]["state"])

    vae = ToyVAE(VAEConfig(**state["vae"]["config"]))
    vae.load_state_dict(state["vae"]["state"])

    denoiser = Denoiser(_denoiser_config(state["denoiser"]["config"]))
    denoiser.load_state_dict(state["denoiser"]["state"])

    latent_seg = None
    if "latent_segmenter" in state:
        latent_seg = _load_segmenter(state["latent_segmenter"])
        latent_seg.freeze()
    pixel_seg = None
    if "pixel_segmenter" in state:
        pixel_seg = _load_segmenter(state["pixel_segmenter"])
        pixel_seg.freeze()

    models = DiffusionModels(vae=vae, denoiser=denoiser, latent_segmenter=latent_seg)
    return TwoStagePipeline(layout, models, pixel_segmenter=pixel_seg)
