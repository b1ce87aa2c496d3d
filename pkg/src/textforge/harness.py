"""Toy-scale training recipes: corpus builders plus end-to-end model fitting.

Everything here targets a single CPU core. Step counts are the time dial; the
defaults are sized so each recipe finishes in minutes. All randomness flows
through explicit seeds, so reruns reproduce bit-identical corpora and models.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np
import torch

from .dataset import SynthStyle, synthesize_record, synthetic_prompt_boxes
from .diffusion import (
    Denoiser,
    DenoiserConfig,
    DiffusionBatch,
    DiffusionModels,
    MaskEncoderConfig,
    SamplerConfig,
    TrainingConfig,
    sample_image,
    train_diffusion,
)
from .evaluation import glyph_region_iou
from .geometry import mean_pairwise_iou
from .glyphs import GlyphAtlas, RenderSpec, compose_char_mask, default_atlas
from .layout import (
    LayoutBatch,
    LayoutModel,
    LayoutModelConfig,
    layout_l1_loss,
    make_optimizer,
    train_layout_step,
)
from .pipeline import caption_token_ids
from .prompts import TokenizedPrompt, extract_keywords, prepare_prompt
from .segmenter import (
    CharSegmenter,
    SegmenterConfig,
    latent_segmenter_unet,
    pixel_segmenter_unet,
    train_segmenter,
)
from .tokenizer import BpeTokenizer, default_tokenizer
from .vae import ToyVAE, VAEConfig, psnr, train_vae

TOY_CONTEXT = 32  # caption token budget shared by both stages at toy scale

# Validation seeds must never collide with training seeds; corpora are seeded
# per record, so offset the held-out stream far away.
VAL_SEED_OFFSET = 10_000_019


# -- Stage 1: layout -------------------------------------------------------------


@dataclass
class LayoutCorpus:
    prompts: list[str]
    tokenized: list[TokenizedPrompt]
    gt_boxes: list[np.ndarray]  # per prompt (K_i, 4), normalized
    batch: LayoutBatch  # the whole corpus as padded tensors


def build_layout_corpus(
    n: int,
    seed: int,
    image_size: int = 64,
    k_max: int = 8,
    tokenizer: BpeTokenizer | None = None,
    atlas: GlyphAtlas | None = None,
) -> LayoutCorpus:
    tokenizer = tokenizer or default_tokenizer(TOY_CONTEXT)
    atlas = atlas or default_atlas()
    prompts: list[str] = []
    toks: list[TokenizedPrompt] = []
    gts: list[np.ndarray] = []
    for i in range(n):
        caption, _, boxes = synthetic_prompt_boxes(
            seed + i, image_size=image_size, max_words=k_max
        )
        tp, _ = prepare_prompt(caption, tokenizer, atlas, k_max)
        prompts.append(caption)
        toks.append(tp)
        gts.append(boxes)

    length = tokenizer.context_length
    ids = torch.zeros(n, length, dtype=torch.long)
    flags = torch.zeros(n, length, dtype=torch.long)
    buckets = torch.zeros(n, length, dtype=torch.long)
    boxes_t = torch.zeros(n, k_max, 4)
    mask_t = torch.zeros(n, k_max)
    for i, (tp, gt) in enumerate(zip(toks, gts)):
        ids[i] = torch.from_numpy(tp.token_ids)
        flags[i] = torch.from_numpy(tp.keyword_flags)
        buckets[i] = torch.from_numpy(tp.width_buckets)
        k = gt.shape[0]
        boxes_t[i, :k] = torch.from_numpy(gt.astype(np.float32))
        mask_t[i, :k] = 1.0
    batch = LayoutBatch(ids, flags, buckets, boxes_t, mask_t)
    return LayoutCorpus(prompts, toks, gts, batch)


@dataclass
class LayoutTrainSpec:
    corpus_size: int = 5000
    val_size: int = 500
    image_size: int = 64
    k_max: int = 8
    batch_size: int = 64
    steps: int = 1500
    seed: int = 0
    time_budget_s: float | None = 25 * 60.0
    dim: int = 128
    num_layers: int = 2
    num_heads: int = 4
    text_encoder_layers: int = 1
    lr: float = 1e-3
    use_width_embedding: bool = True


def _index_batch(batch: LayoutBatch, idx: torch.Tensor) -> LayoutBatch:
    return LayoutBatch(
        batch.token_ids[idx],
        batch.keyword_flags[idx],
        batch.width_buckets[idx],
        batch.boxes[idx],
        batch.box_mask[idx],
    )


@torch.no_grad()
def layout_val_loss(model: LayoutModel, batch: LayoutBatch) -> float:
    model.eval()
    pred = model(batch.token_ids, batch.keyword_flags, batch.width_buckets, batch.boxes)
    return float(layout_l1_loss(pred, batch.boxes, batch.box_mask))


def layout_predict_metrics(
    model: LayoutModel, corpus: LayoutCorpus, limit: int | None = None
) -> tuple[float, float]:
    """(mean IoU vs ground truth, fraction of coordinates inside [0, 1])."""
    n = len(corpus.prompts) if limit is None else min(limit, len(corpus.prompts))
    ious, in_unit, total = [], 0, 0
    for i in range(n):
        gt = corpus.gt_boxes[i]
        pred = model.predict_boxes(corpus.tokenized[i], gt.shape[0]).boxes
        in_unit += int(((pred >= 0.0) & (pred <= 1.0)).sum())
        total += pred.size
        if gt.shape[0]:
            ious.append(mean_pairwise_iou(pred, gt))
    return float(np.mean(ious)), (in_unit / total if total else 1.0)


def train_layout_model(
    spec: LayoutTrainSpec,
    tokenizer: BpeTokenizer | None = None,
    log_every: int = 0,
) -> tuple[LayoutModel, dict]:
    tokenizer = tokenizer or default_tokenizer(TOY_CONTEXT)
    train = build_layout_corpus(
        spec.corpus_size, spec.seed, spec.image_size, spec.k_max, tokenizer
    )
    val = build_layout_corpus(
        spec.val_size, spec.seed + VAL_SEED_OFFSET, spec.image_size, spec.k_max, tokenizer
    )
    torch.manual_seed(spec.seed)
    model = LayoutModel(
        LayoutModelConfig(
            vocab_size=tokenizer.vocab_size,
            num_layers=spec.num_layers,
            dim=spec.dim,
            seq_len=tokenizer.context_length,
            k_max=spec.k_max,
            num_heads=spec.num_heads,
            text_encoder_layers=spec.text_encoder_layers,
            use_width_embedding=spec.use_width_embedding,
            lr=spec.lr,
        )
    )
    opt = make_optimizer(model)
    gen = torch.Generator().manual_seed(spec.seed)

    init_val = layout_val_loss(model, val.batch)
    started = time.monotonic()
    losses = []
    steps_run = 0
    for step in range(spec.steps):
        idx = torch.randint(0, spec.corpus_size, (spec.batch_size,), generator=gen)
        losses.append(train_layout_step(_index_batch(train.batch, idx), model, opt))
        steps_run = step + 1
        if log_every and steps_run % log_every == 0:
            tail = losses[-log_every:]
            print(f"layout step {steps_run}/{spec.steps} l1 {sum(tail) / len(tail):.4f}")
        if spec.time_budget_s is not None and time.monotonic() - started > spec.time_budget_s:
            break
    final_val = layout_val_loss(model, val.batch)
    iou, in_unit = layout_predict_metrics(model, val)
    report = {
        "init_val_l1": init_val,
        "final_val_l1": final_val,
        "drop_fraction": 1.0 - final_val / init_val if init_val > 0 else 0.0,
        "val_iou": iou,
        "coord_in_unit_fraction": in_unit,
        "steps": steps_run,
        "seconds": time.monotonic() - started,
        "train_losses": losses,
    }
    return model, report


# -- Stage 2 corpora ---------------------------------------------------------------


@dataclass
class ImageCorpus:
    images: torch.Tensor  # (N, 3, H, W) uint8
    model_images: torch.Tensor  # (N, 3, H, W) float in [-1, 1]
    char_masks: torch.Tensor  # (N, H, W) long
    captions: list[str]
    token_ids: torch.Tensor  # (N, L)
    boxes: list[torch.Tensor]  # per record (K_i, 4) long pixel ink boxes

    def __len__(self) -> int:
        return self.images.shape[0]


def build_image_corpus(
    n: int,
    seed: int,
    image_size: int = 64,
    style: SynthStyle | None = None,
    tokenizer: BpeTokenizer | None = None,
    max_words: int = 3,
) -> ImageCorpus:
    tokenizer = tokenizer or default_tokenizer(TOY_CONTEXT)
    images, masks, captions, tokens, boxes = [], [], [], [], []
    for i in range(n):
        rec = synthesize_record(
            seed + i, style=style, image_size=image_size, max_words=max_words
        )
        images.append(torch.from_numpy(rec.image.transpose(2, 0, 1).copy()))
        masks.append(torch.from_numpy(rec.annotation.mask.grid.astype(np.int64)))
        captions.append(rec.record.caption)
        tokens.append(caption_token_ids(rec.record.caption, tokenizer)[0])
        boxes.append(torch.from_numpy(rec.annotation.boxes.astype(np.int64)))
    images_t = torch.stack(images)
    return ImageCorpus(
        images=images_t,
        model_images=images_t.float() / 127.5 - 1.0,
        char_masks=torch.stack(masks),
        captions=captions,
        token_ids=torch.stack(tokens),
        boxes=boxes,
    )


# -- VAE and segmenters ---------------------------------------------------------------


def train_toy_vae(
    corpus: ImageCorpus, config: VAEConfig | None = None, seed: int = 0, log_every: int = 0
) -> tuple[ToyVAE, dict]:
    cfg = config or VAEConfig()
    vae, history = train_vae(corpus.model_images, cfg, seed=seed, log_every=log_every)
    history["roundtrip_psnr"] = vae_roundtrip_psnr(vae, corpus.model_images)
    return vae, history


@torch.no_grad()
def vae_roundtrip_psnr(vae: ToyVAE, model_images: torch.Tensor, batch_size: int = 32) -> float:
    vae.eval()
    recon = []
    for i in range(0, model_images.shape[0], batch_size):
        chunk = model_images[i : i + batch_size]
        recon.append(vae.decode(vae.encode(chunk)))
    return psnr(torch.cat(recon), model_images)


def train_pixel_segmenter(
    corpus: ImageCorpus, base_width: int = 16, steps: int = 300, seed: int = 0,
    log_every: int = 0,
) -> tuple[CharSegmenter, dict]:
    cfg = SegmenterConfig(unet=pixel_segmenter_unet(base_width), steps=steps, seed=seed)
    return train_segmenter(corpus.model_images, corpus.char_masks, cfg, log_every=log_every)


@torch.no_grad()
def encode_corpus_latents(vae: ToyVAE, corpus: ImageCorpus, batch_size: int = 32) -> torch.Tensor:
    vae.eval()
    out = []
    for i in range(0, len(corpus), batch_size):
        out.append(vae.encode(corpus.model_images[i : i + batch_size]))
    return torch.cat(out)


def latent_mask_targets(corpus: ImageCorpus, latent_size: int) -> torch.Tensor:
    """Downsample class masks with the same nearest rule the train step uses."""
    return (
        torch.nn.functional.interpolate(
            corpus.char_masks.unsqueeze(1).float(),
            size=(latent_size, latent_size),
            mode="nearest",
        )
        .squeeze(1)
        .long()
    )


def train_latent_segmenter(
    corpus: ImageCorpus,
    vae: ToyVAE,
    base_width: int = 32,
    steps: int = 300,
    seed: int = 0,
    log_every: int = 0,
) -> tuple[CharSegmenter, dict]:
    latents = encode_corpus_latents(vae, corpus)
    targets = latent_mask_targets(corpus, latents.shape[-1])
    cfg = SegmenterConfig(
        unet=latent_segmenter_unet(base_width, latents.shape[1]), steps=steps, seed=seed
    )
    model, meta = train_segmenter(latents, targets, cfg, log_every=log_every)
    model.freeze()
    return model, meta


# -- Toy diffusion ---------------------------------------------------------------------


def toy_denoiser_config(
    vocab_size: int,
    image_size: int = 64,
    latent_reduction: int = 4,
    base_width: int = 32,
    text_dim: int = 64,
    context_length: int = TOY_CONTEXT,
) -> DenoiserConfig:
    """Denoiser sized for 64-px glyph work on a CPU.

    Width 32 with attention at the 8- and 4-cell stages (and a 64-wide mask
    encoder) is the smallest recipe found to place strokes precisely; at width
    16 generated ink sprawls to roughly 3x the conditioning mask's area.
    """
    return DenoiserConfig(
        vocab_size=vocab_size,
        image_size=image_size,
        latent_reduction=latent_reduction,
        text_dim=text_dim,
        text_layers=1,
        text_heads=4,
        context_length=context_length,
        base_width=base_width,
        channel_mults=(1, 2, 4),
        attn_stages=(1, 2),
        num_heads=4,
        mask_encoder=MaskEncoderConfig(hidden=64),
    )


def corpus_batches(corpus: ImageCorpus, batch_size: int):
    """DiffusionBatch sampler over a fixed corpus, driven by the train generator."""

    def batches(step: int, generator: torch.Generator) -> DiffusionBatch:
        idx = torch.randint(0, len(corpus), (batch_size,), generator=generator)
        return DiffusionBatch(
            images=corpus.model_images[idx],
            char_masks=corpus.char_masks[idx],
            token_ids=corpus.token_ids[idx],
            boxes=[corpus.boxes[int(i)] for i in idx],
        )

    return batches


def train_toy_diffusion(
    corpus: ImageCorpus,
    vae: ToyVAE,
    latent_segmenter: CharSegmenter | None,
    train_cfg: TrainingConfig,
    denoiser_cfg: DenoiserConfig | None = None,
    tokenizer: BpeTokenizer | None = None,
    log_every: int = 0,
) -> tuple[DiffusionModels, dict]:
    tokenizer = tokenizer or default_tokenizer(TOY_CONTEXT)
    if denoiser_cfg is None:
        denoiser_cfg = toy_denoiser_config(
            tokenizer.vocab_size,
            image_size=corpus.images.shape[-1],
            latent_reduction=vae.config.downsample_factor,
            context_length=tokenizer.context_length,
        )
    torch.manual_seed(train_cfg.seed)
    models = DiffusionModels(
        vae=vae, denoiser=Denoiser(denoiser_cfg), latent_segmenter=latent_segmenter
    )
    history = train_diffusion(
        corpus_batches(corpus, train_cfg.batch_size), models, train_cfg, log_every=log_every
    )
    return models, history


# -- Held-out evaluation -----------------------------------------------------------------


def prompt_char_mask(
    prompt: str, image_size: int, atlas: GlyphAtlas | None = None
) -> np.ndarray:
    """Ground-truth conditioning mask for a prompt's quoted keywords."""
    atlas = atlas or default_atlas()
    _, spans = extract_keywords(prompt)
    words = [s.word for s in spans]
    from .dataset import procedural_layout

    boxes = procedural_layout(words, image_size, atlas)
    spec = RenderSpec(
        items=[(w, tuple(map(float, b))) for w, b in zip(words, boxes)],
        height=image_size,
        width=image_size,
    )
    return compose_char_mask(spec, atlas).grid


def eval_glyph_iou(
    models: DiffusionModels,
    prompts: list[str],
    sampler: SamplerConfig | None = None,
    tokenizer: BpeTokenizer | None = None,
    atlas: GlyphAtlas | None = None,
) -> dict:
    """Mean IoU between each sampled image's ink and its conditioning mask.

    Each prompt gets its own seed (base seed + index) so the set covers many
    noise draws while staying reproducible.
    """
    tokenizer = tokenizer or default_tokenizer(TOY_CONTEXT)
    sampler = sampler or SamplerConfig(steps=20, guidance_scale=1.0)
    size = models.denoiser.config.image_size
    ious = []
    for i, prompt in enumerate(prompts):
        grid = prompt_char_mask(prompt, size, atlas)
        tokens = caption_token_ids(prompt, tokenizer)
        mask_t = torch.from_numpy(grid.astype(np.int64)).unsqueeze(0)
        image = sample_image(
            models, tokens, mask_t, replace(sampler, seed=sampler.seed + i)
        )
        ious.append(glyph_region_iou(image[0].permute(1, 2, 0).numpy(), grid))
    return {"mean_iou": float(np.mean(ious)), "per_prompt": ious}
