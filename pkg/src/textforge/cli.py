"""Command-line driver for every pipeline stage and the ablation sweeps.

Config handling is flat key=value: an optional ``--config`` file plus
repeatable ``--set key=value`` flags, resolved flags > file > defaults. Keys
mirror the relevant dataclass field names. Every verb honors ``--seed`` and
``--dry-run`` (validate configuration, touch nothing, exit 0).

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from PIL import Image

from .configfile import (
    config_summary,
    load_config_file,
    merge_config,
    normalize_key,
)
from .dataset import SynthStyle, SyntheticSourceSpec, build_dataset
from .diffusion import SamplerConfig, TrainingConfig
from .errors import ConfigurationError, TextForgeError
from .evaluation import (
    BenchmarkSpec,
    evaluate_benchmark,
    ground_truth_generator,
    synthetic_benchmark,
)
from .geometry import BoundingBoxSet
from .glyphs import CharSegMask
from .harness import (
    TOY_CONTEXT,
    VAL_SEED_OFFSET,
    LayoutTrainSpec,
    build_image_corpus,
    eval_glyph_iou,
    toy_denoiser_config,
    train_latent_segmenter,
    train_layout_model,
    train_pixel_segmenter,
    train_toy_diffusion,
    train_toy_vae,
)
from .layout import load_layout_model, save_layout_model
from .pipeline import TwoStagePipeline, load_pipeline, save_pipeline
from .segmenter import save_char_segmenter
from .tokenizer import default_tokenizer
from .vae import VAEConfig

LAMBDA_GRID = (0.0, 0.001, 0.01, 0.1, 1.0)
SIGMA_GRID = (0.0, 0.25, 0.5, 0.75, 1.0)


# -- Per-verb configs (flat key=value addressable) --------------------------------


@dataclass
class BuildDatasetCfg:
    count: int = 200
    image_size: int = 64
    max_words: int = 8
    test_fraction: float = 0.1
    style: str = "mono"
    seed: int = 0


@dataclass
class SegmenterTrainCfg:
    space: str = "pixel"  # pixel: template images; latent: VAE latents
    corpus_size: int = 300
    image_size: int = 64
    max_words: int = 3
    base_width: int = 16
    steps: int = 300
    vae_steps: int = 400
    seed: int = 0


@dataclass
class DiffusionTrainCfg:
    """TrainingConfig fields plus the toy corpus / architecture dials."""

    sigma_whole: float = 0.5
    lambda_char: float = 0.01
    caption_drop: float = 0.10
    box_mask_prob: float = 0.50
    batch_size: int = 8
    steps: int = 400
    lr: float = 2e-4
    seed: int = 0
    warmup_steps: int = 100
    ema_decay: float = 0.999
    grad_clip: float = 1.0
    corpus_size: int = 256
    image_size: int = 64
    max_words: int = 3
    vae_steps: int = 600
    segmenter_steps: int = 300
    base_width: int = 32
    text_dim: int = 64
    layout_corpus: int = 1000
    layout_steps: int = 300


@dataclass
class EvaluateCfg:
    image_size: int = 64
    exact_set: bool = False
    steps: int = 20
    guidance_scale: float = 1.0
    seed: int = 0


@dataclass
class AblateCfg:
    corpus_size: int = 128
    image_size: int = 64
    max_words: int = 2
    vae_steps: int = 300
    segmenter_steps: int = 200
    steps: int = 150
    batch_size: int = 8
    lr: float = 2e-4
    eval_prompts: int = 8
    sample_steps: int = 10
    guidance_scale: float = 1.0
    lambda_char: float = 0.01
    sigma_whole: float = 0.5
    seed: int = 0


@dataclass
class ServeCfg:
    host: str = "127.0.0.1"
    port: int = 8000
    steps: int = 20
    guidance_scale: float = 1.0
    seed: int = 0


# -- Option plumbing ----------------------------------------------------------------


def _common_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument(
        "--set",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="config override; repeatable, wins over --config",
    )
    p.add_argument("--seed", type=int, help="override the config's seed field")
    p.add_argument(
        "--dry-run",
        action="store_true",
        help="validate configuration and exit without side effects",
    )


def _flag_overrides(args: argparse.Namespace, defaults) -> dict[str, str]:
    overrides: dict[str, str] = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigurationError(f"--set expects KEY=VALUE, got {item!r}")
        key, _, value = item.partition("=")
        overrides[normalize_key(key)] = value.strip()
    field_names = {f.name for f in dataclasses.fields(defaults)}
    if args.seed is not None and "seed" in field_names:
        overrides["seed"] = str(args.seed)
    return overrides


def resolve_config(defaults, args: argparse.Namespace):
    file_values = load_config_file(args.config) if args.config else {}
    return merge_config(defaults, file_values, _flag_overrides(args, defaults))


def _dry_run(cfg) -> int:
    print(config_summary(cfg))
    print("dry run: configuration valid")
    return 0


def _sampler(cfg) -> SamplerConfig:
    return SamplerConfig(steps=cfg.steps, guidance_scale=cfg.guidance_scale, seed=cfg.seed)


def _save_image(image: np.ndarray, path: str) -> None:
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(image).save(out)


def _parse_boxes(raw: str | None) -> BoundingBoxSet | None:
    if raw is None:
        return None
    return BoundingBoxSet(np.asarray(json.loads(raw), dtype=np.float64).reshape(-1, 4))


def _load_gray(path: str) -> np.ndarray:
    return np.asarray(Image.open(path).convert("L"))


def _load_rgb(path: str) -> np.ndarray:
    return np.asarray(Image.open(path).convert("RGB"))


# -- Verb handlers --------------------------------------------------------------------


def _cmd_build_dataset(args) -> int:
    cfg = resolve_config(BuildDatasetCfg(), args)
    if args.dry_run:
        return _dry_run(cfg)
    spec = SyntheticSourceSpec(
        image_size=cfg.image_size,
        style=SynthStyle(cfg.style),
        max_words=cfg.max_words,
        test_fraction=cfg.test_fraction,
    )
    stats = build_dataset(spec, cfg.count, cfg.seed, args.out)
    print(f"wrote {stats['survivors']}/{stats['ingested']} records to {args.out}")
    print(f"manifest checksum {stats['manifest_checksum']}")
    return 0


def _cmd_train_layout(args) -> int:
    cfg = resolve_config(LayoutTrainSpec(), args)
    if args.dry_run:
        return _dry_run(cfg)
    model, report = train_layout_model(cfg, log_every=args.log_every)
    meta = {k: v for k, v in report.items() if k != "train_losses"}
    save_layout_model(args.out, model, meta=meta)
    print(
        f"layout: val l1 {report['init_val_l1']:.4f} -> {report['final_val_l1']:.4f} "
        f"({report['drop_fraction']:.1%} drop), IoU {report['val_iou']:.3f}, "
        f"{report['steps']} steps in {report['seconds']:.0f}s"
    )
    print(f"saved {args.out}")
    return 0


def _cmd_train_segmenter(args) -> int:
    cfg = resolve_config(SegmenterTrainCfg(), args)
    if cfg.space not in ("pixel", "latent"):
        raise ConfigurationError(f"space must be pixel or latent, got {cfg.space!r}")
    if args.dry_run:
        return _dry_run(cfg)
    corpus = build_image_corpus(
        cfg.corpus_size, cfg.seed, cfg.image_size, max_words=cfg.max_words
    )
    if cfg.space == "pixel":
        model, meta = train_pixel_segmenter(
            corpus, cfg.base_width, cfg.steps, cfg.seed, log_every=args.log_every
        )
    else:
        vae, _ = train_toy_vae(corpus, VAEConfig(steps=cfg.vae_steps), seed=cfg.seed)
        model, meta = train_latent_segmenter(
            corpus, vae, cfg.base_width, cfg.steps, cfg.seed, log_every=args.log_every
        )
    save_char_segmenter(
        args.out,
        model,
        meta={"space": cfg.space, "val_pixel_accuracy": meta["val_pixel_accuracy"]},
    )
    print(f"{cfg.space} segmenter accuracy {meta['val_pixel_accuracy']:.4f}")
    print(f"saved {args.out}")
    return 0


def _training_config(cfg: DiffusionTrainCfg) -> TrainingConfig:
    return TrainingConfig(
        sigma_whole=cfg.sigma_whole,
        lambda_char=cfg.lambda_char,
        caption_drop=cfg.caption_drop,
        box_mask_prob=cfg.box_mask_prob,
        batch_size=cfg.batch_size,
        steps=cfg.steps,
        lr=cfg.lr,
        seed=cfg.seed,
        warmup_steps=cfg.warmup_steps,
        ema_decay=cfg.ema_decay,
        grad_clip=cfg.grad_clip,
    )


def _cmd_train_diffusion(args) -> int:
    cfg = resolve_config(DiffusionTrainCfg(), args)
    if args.dry_run:
        return _dry_run(cfg)
    tokenizer = default_tokenizer(TOY_CONTEXT)
    corpus = build_image_corpus(
        cfg.corpus_size, cfg.seed, cfg.image_size, tokenizer=tokenizer,
        max_words=cfg.max_words,
    )
    vae, vae_hist = train_toy_vae(corpus, VAEConfig(steps=cfg.vae_steps), seed=cfg.seed)
    print(f"vae round-trip psnr {vae_hist['roundtrip_psnr']:.1f} dB")
    latent_seg = None
    if cfg.lambda_char > 0:
        latent_seg, seg_meta = train_latent_segmenter(
            corpus, vae, steps=cfg.segmenter_steps, seed=cfg.seed
        )
        print(f"latent segmenter accuracy {seg_meta['val_pixel_accuracy']:.4f}")
    models, history = train_toy_diffusion(
        corpus,
        vae,
        latent_seg,
        _training_config(cfg),
        denoiser_cfg=toy_denoiser_config(
            tokenizer.vocab_size,
            image_size=cfg.image_size,
            latent_reduction=vae.config.downsample_factor,
            base_width=cfg.base_width,
            text_dim=cfg.text_dim,
            context_length=tokenizer.context_length,
        ),
        tokenizer=tokenizer,
        log_every=args.log_every,
    )
    tail = history["loss"][-50:]
    print(f"diffusion loss (last-50 mean) {sum(tail) / len(tail):.4f}")

    if args.layout:
        layout = load_layout_model(args.layout)
    else:
        spec = LayoutTrainSpec(
            corpus_size=cfg.layout_corpus,
            val_size=max(50, cfg.layout_corpus // 10),
            steps=cfg.layout_steps,
            image_size=cfg.image_size,
            seed=cfg.seed,
        )
        layout, report = train_layout_model(spec, tokenizer=tokenizer)
        print(f"layout (fresh): val IoU {report['val_iou']:.3f}")
    pipe = TwoStagePipeline(layout, models, tokenizer=tokenizer)
    save_pipeline(args.out, pipe)
    print(f"saved {args.out}")
    return 0


def _cmd_generate(args) -> int:
    cfg = resolve_config(SamplerConfig(), args)
    if args.dry_run:
        return _dry_run(cfg)
    pipe = load_pipeline(args.model)
    boxes = _parse_boxes(args.boxes_json)
    mask = CharSegMask(_load_gray(args.mask)) if args.mask else None
    image = pipe.generate(
        args.prompt, boxes=boxes, keywords=args.keywords, mask=mask, sampler=cfg
    )
    _save_image(image, args.out)
    print(f"wrote {args.out}")
    return 0


def _cmd_inpaint(args) -> int:
    cfg = resolve_config(SamplerConfig(), args)
    if args.dry_run:
        return _dry_run(cfg)
    pipe = load_pipeline(args.model)
    image = pipe.inpaint(
        _load_rgb(args.image),
        _load_gray(args.region) > 0,
        text=args.text,
        boxes=_parse_boxes(args.boxes_json),
        sampler=cfg,
    )
    _save_image(image, args.out)
    print(f"wrote {args.out}")
    return 0


def _cmd_remove_text(args) -> int:
    cfg = resolve_config(SamplerConfig(), args)
    if args.dry_run:
        return _dry_run(cfg)
    pipe = load_pipeline(args.model)
    image = pipe.inpaint(
        _load_rgb(args.image), _load_gray(args.region) > 0, text=None, sampler=cfg
    )
    _save_image(image, args.out)
    print(f"wrote {args.out}")
    return 0


def _cmd_evaluate(args) -> int:
    cfg = resolve_config(EvaluateCfg(), args)
    if args.dry_run:
        return _dry_run(cfg)
    spec = BenchmarkSpec.from_file(args.spec)
    if args.generator == "oracle":
        generator = ground_truth_generator(cfg.image_size)
    else:
        if not args.model:
            raise ConfigurationError("--generator pipeline requires --model")
        pipe = load_pipeline(args.model)
        sampler = SamplerConfig(
            steps=cfg.steps, guidance_scale=cfg.guidance_scale, seed=cfg.seed
        )

        def generator(prompt: str, idx: int) -> np.ndarray:
            return pipe.generate(prompt, sampler=replace(sampler, seed=sampler.seed + idx))

    report = evaluate_benchmark(spec, generator, exact_set=cfg.exact_set)
    print(f"accuracy {report.accuracy}")
    print(f"precision {report.precision:.4f}")
    print(f"recall {report.recall:.4f}")
    print(f"f_measure {report.f:.4f}")
    if report.failures:
        print(f"failures {report.failures}")
    if args.report:
        Path(args.report).write_text(report.to_json())
        print(f"wrote {args.report}")
    return 0


def _cmd_ablate(args) -> int:
    cfg = resolve_config(AblateCfg(), args)
    if args.dry_run:
        return _dry_run(cfg)
    tokenizer = default_tokenizer(TOY_CONTEXT)
    corpus = build_image_corpus(
        cfg.corpus_size, cfg.seed, cfg.image_size, tokenizer=tokenizer,
        max_words=cfg.max_words,
    )
    vae, _ = train_toy_vae(corpus, VAEConfig(steps=cfg.vae_steps), seed=cfg.seed)
    latent_seg, _ = train_latent_segmenter(
        corpus, vae, steps=cfg.segmenter_steps, seed=cfg.seed
    )
    bench = synthetic_benchmark(
        cfg.eval_prompts, seed=cfg.seed + VAL_SEED_OFFSET, image_size=cfg.image_size
    )
    sampler = SamplerConfig(
        steps=cfg.sample_steps, guidance_scale=cfg.guidance_scale, seed=cfg.seed
    )
    if args.param == "lambda-char":
        param, values = "lambda_char", LAMBDA_GRID
    else:
        param, values = "sigma_whole", SIGMA_GRID

    rows = []
    for value in values:
        train_cfg = TrainingConfig(
            sigma_whole=cfg.sigma_whole if param != "sigma_whole" else value,
            lambda_char=cfg.lambda_char if param != "lambda_char" else value,
            batch_size=cfg.batch_size,
            steps=cfg.steps,
            lr=cfg.lr,
            seed=cfg.seed,
        )
        models, history = train_toy_diffusion(
            corpus, vae, latent_seg, train_cfg, tokenizer=tokenizer
        )
        result = eval_glyph_iou(models, bench.prompts, sampler, tokenizer=tokenizer)
        rows.append(
            {
                "param": param,
                "value": value,
                "mean_iou": result["mean_iou"],
                "final_loss": history["loss"][-1],
            }
        )
        print(f"{param}={value:g}: mean_iou {result['mean_iou']:.4f}")

    lines = [f"{'param':<14}{'value':>8}{'mean_iou':>12}{'final_loss':>13}"]
    for r in rows:
        lines.append(
            f"{r['param']:<14}{r['value']:>8g}{r['mean_iou']:>12.4f}{r['final_loss']:>13.4f}"
        )
    table = "\n".join(lines)
    if args.out:
        Path(args.out).write_text(table + "\n")
        print(f"wrote {args.out}")
    else:
        print(table)
    return 0


def _cmd_serve(args) -> int:
    cfg = resolve_config(ServeCfg(), args)
    if args.dry_run:
        return _dry_run(cfg)
    import uvicorn

    from .service import create_app

    pipe = load_pipeline(args.model)
    app = create_app(pipe, args.store, default_sampler=_sampler(cfg))
    uvicorn.run(app, host=cfg.host, port=cfg.port, log_level="warning")
    return 0


# -- Parser -----------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="textforge",
        description="Two-stage text-in-image generation toolkit.",
    )
    sub = parser.add_subparsers(dest="verb", required=True, metavar="VERB")

    def verb(name: str, handler, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        _common_flags(p)
        p.set_defaults(handler=handler)
        return p

    p = verb("build-dataset", _cmd_build_dataset, "synthesize and filter a corpus")
    p.add_argument("--out", required=True, help="output directory")

    p = verb("train-layout", _cmd_train_layout, "train the keyword layout model")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log-every", type=int, default=0)

    p = verb("train-segmenter", _cmd_train_segmenter, "train a character segmenter")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log-every", type=int, default=0)

    p = verb(
        "train-diffusion", _cmd_train_diffusion,
        "train VAE, latent segmenter, and denoiser; write a pipeline bundle",
    )
    p.add_argument("--out", required=True, help="pipeline checkpoint path")
    p.add_argument("--layout", help="reuse an existing layout checkpoint")
    p.add_argument("--log-every", type=int, default=0)

    p = verb("generate", _cmd_generate, "prompt to image")
    p.add_argument("--model", required=True, help="pipeline checkpoint")
    p.add_argument("--prompt", required=True)
    p.add_argument("--out", required=True, help="output PNG")
    p.add_argument("--mask", help="character-class mask PNG (overrides layout)")
    p.add_argument("--boxes-json", help="JSON [[x0,y0,x1,y1],...] normalized boxes")
    p.add_argument("--keywords", nargs="*", help="words for --boxes-json")

    p = verb("inpaint", _cmd_inpaint, "regenerate a region with new text")
    p.add_argument("--model", required=True)
    p.add_argument("--image", required=True, help="input PNG")
    p.add_argument("--region", required=True, help="region mask PNG (nonzero = edit)")
    p.add_argument("--text", help="text to place; omit to clear the region")
    p.add_argument("--boxes-json", help="optional explicit boxes for the text")
    p.add_argument("--out", required=True)

    p = verb("remove-text", _cmd_remove_text, "clear all characters in a region")
    p.add_argument("--model", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--region", required=True)
    p.add_argument("--out", required=True)

    p = verb("evaluate", _cmd_evaluate, "run a benchmark spec through OCR metrics")
    p.add_argument("--spec", required=True, help="file with one prompt per line")
    p.add_argument("--generator", choices=("oracle", "pipeline"), default="oracle")
    p.add_argument("--model", help="pipeline checkpoint (for --generator pipeline)")
    p.add_argument("--report", help="write the full JSON report here")

    p = verb("ablate", _cmd_ablate, "sweep lambda-char or sigma and tabulate")
    p.add_argument("--param", choices=("lambda-char", "sigma"), required=True)
    p.add_argument("--out", help="table output path (default: stdout)")

    p = verb("serve", _cmd_serve, "run the HTTP service")
    p.add_argument("--model", required=True, help="pipeline checkpoint")
    p.add_argument("--store", required=True, help="SQLite job store path")

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        code = exc.code
        return code if isinstance(code, int) else 2
    try:
        return args.handler(args)
    except ConfigurationError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except TextForgeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
