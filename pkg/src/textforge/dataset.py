"""Corpus construction: synthetic record generation, caption templating,
OCR annotation plumbing, the five filtering rules, and manifest writing.

Records flow through: synthesize (or ingest) -> annotate -> filter -> split ->
manifest. Synthetic records are exact by construction: the renderer that
produces the image also produces the character mask, the word boxes, and the
caption embedding the words in quotes, so every synthetic record passes all
five filters.
"""

from __future__ import annotations

import hashlib
import json
import random
import string
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable

import numpy as np
from PIL import Image

from .errors import ConfigurationError, DataError, UnrenderableBoxError
from .glyphs import CharSegMask, RenderSpec, default_atlas, render_spec_details
from .prompts import extract_keywords

MOVIE_TEMPLATES = (
    "Logo {XXX}",
    "Text {XXX}",
    "Title {XXX}",
    "Title text {XXX}",
    "A poster with a title text of {XXX}",
    "A poster design with a title text of {XXX}",
    "A quality movie print with a title text of {XXX}",
    "A film poster of {XXX}",
    "A movie poster of {XXX}",
    "A movie poster titled {XXX}",
    "A movie poster named {XXX}",
    "A movie poster with text {XXX} on it",
    "A movie poster with logo {XXX} on it",
    "A movie poster with a title text of {XXX}",
    "An illustration of {XXX} movie",
    "An photography of {XXX} movie",
    "A TV show poster titled {XXX}",
    "A TV show poster of {XXX}",
    "A TV show poster with logo {XXX} on it",
    "A TV show poster with a title text of {XXX}",
    "A TV show poster with text {XXX}",
    "A TV show poster named {XXX}",
)

BOOK_TEMPLATES = (
    "A book with a title text of {XXX}",
    "A book design with a title text of {XXX}",
    "A book cover with a title text of {XXX}",
    "A book of {XXX}",
    "A cover named {XXX}",
    "A cover titled {XXX}",
    "A book with text {XXX} on it",
    "A book cover with logo {XXX} on it",
)

_SIGN_PATTERNS = (
    "A photo of a sign that says {W}",
    "A poster with the words {W}",
    "A street sign reading {W}",
    "A billboard displaying {W}",
    "Graffiti spelling {W} on a wall",
    "A storefront banner that says {W}",
)

_TEMPLATE_SOURCES = {"tmdb-like": MOVIE_TEMPLATES, "openlibrary-like": BOOK_TEMPLATES}


def caption_from_template(title: str, source_kind: str, seed: int) -> str:
    """Seed-deterministic caption with the quoted title substituted in."""
    templates = _TEMPLATE_SOURCES.get(source_kind)
    if templates is None:
        raise ConfigurationError(
            f"unknown source kind {source_kind!r}; expected one of {sorted(_TEMPLATE_SOURCES)}"
        )
    template = random.Random(seed).choice(templates)
    return template.replace("{XXX}", f"'{title}'")


# -- Records and annotations -----------------------------------------------------


@dataclass
class DatasetRecord:
    record_id: str
    caption: str
    source: str  # laion-like | tmdb-like | openlibrary-like | synthetic
    width: int
    height: int
    nsfw: bool = False
    split: str = "train"
    image_path: str | None = None
    mask_path: str | None = None

    def __post_init__(self):
        if not self.caption:
            raise DataError(f"record {self.record_id} has an empty caption")


@dataclass
class OCRAnnotation:
    boxes: np.ndarray  # (K, 4) int left-top/right-bottom pixel boxes
    strings: list[str]
    mask: CharSegMask

    def __post_init__(self):
        self.boxes = np.asarray(self.boxes, dtype=np.int64).reshape(-1, 4)
        if self.boxes.shape[0] != len(self.strings):
            raise DataError(
                f"{self.boxes.shape[0]} boxes vs {len(self.strings)} strings"
            )

    @property
    def char_fraction(self) -> float:
        return float(self.mask.ink().mean())


def clamp_boxes(boxes: np.ndarray, width: int, height: int) -> np.ndarray:
    boxes = np.asarray(boxes, dtype=np.int64).reshape(-1, 4).copy()
    boxes[:, 0::2] = boxes[:, 0::2].clip(0, width)
    boxes[:, 1::2] = boxes[:, 1::2].clip(0, height)
    return boxes


def annotate_record(
    record: DatasetRecord,
    image: np.ndarray,
    adapter: Callable[[np.ndarray], tuple[np.ndarray, list[str], CharSegMask]],
) -> OCRAnnotation:
    """Run an OCR adapter and normalize its output (boxes clamped to bounds)."""
    try:
        boxes, strings, mask = adapter(image)
    except Exception as exc:
        raise DataError(f"OCR adapter failed on record {record.record_id}: {exc}") from exc
    return OCRAnnotation(
        boxes=clamp_boxes(boxes, record.width, record.height),
        strings=list(strings),
        mask=mask,
    )


# -- Filtering --------------------------------------------------------------------


@dataclass(frozen=True)
class FilterConfig:
    min_size: int = 256  # desk-scale runs configure this down to their image size
    min_boxes: int = 1
    max_boxes: int = 8
    min_char_fraction: float = 0.10


@dataclass(frozen=True)
class RuleFailure:
    rule_id: int
    evidence: str


@dataclass(frozen=True)
class FilterReport:
    passed: bool
    failures: tuple[RuleFailure, ...]

    @property
    def failed_rule_ids(self) -> tuple[int, ...]:
        return tuple(f.rule_id for f in self.failures)


_WORD_STRIP = string.punctuation


def caption_contains_word(caption: str, word: str) -> bool:
    """Case-sensitive exact word match, ignoring surrounding punctuation."""
    for token in caption.split():
        if token == word or token.strip(_WORD_STRIP) == word:
            return True
    return False


def apply_filters(
    record: DatasetRecord, annotation: OCRAnnotation, config: FilterConfig | None = None
) -> FilterReport:
    """Evaluate all five rules in order and report every failure.

    1. min(height, width) strictly greater than the size threshold;
    2. the NSFW flag is not set;
    3. detected box count within [min_boxes, max_boxes];
    4. character pixels cover strictly more than the area threshold;
    5. at least one recognized string appears in the caption as an exact,
       case-sensitive word.
    """
    if annotation is None:
        raise DataError(f"record {record.record_id} has no annotation")
    cfg = config or FilterConfig()
    failures: list[RuleFailure] = []

    smallest = min(record.height, record.width)
    if not smallest > cfg.min_size:
        failures.append(RuleFailure(1, f"min dimension {smallest} <= {cfg.min_size}"))
    if record.nsfw:
        failures.append(RuleFailure(2, "NSFW flag set"))
    n_boxes = annotation.boxes.shape[0]
    if not cfg.min_boxes <= n_boxes <= cfg.max_boxes:
        failures.append(
            RuleFailure(3, f"box count {n_boxes} outside [{cfg.min_boxes}, {cfg.max_boxes}]")
        )
    fraction = annotation.char_fraction
    if not fraction > cfg.min_char_fraction:
        failures.append(
            RuleFailure(4, f"char fraction {fraction:.4f} <= {cfg.min_char_fraction}")
        )
    if not any(caption_contains_word(record.caption, s) for s in annotation.strings):
        failures.append(RuleFailure(5, "no recognized string appears in the caption"))

    return FilterReport(passed=not failures, failures=tuple(failures))


# -- Synthesis --------------------------------------------------------------------


def load_lexicon() -> list[str]:
    """Bundled list of words whose renders round-trip exactly through OCR."""
    path = resources.files("textforge.assets").joinpath("lexicon.txt")
    words = [line for line in path.read_text().splitlines() if line]
    if not words:
        raise DataError("bundled lexicon is empty")
    return words


WORD_GAP = 6  # min horizontal ink separation; keeps oracle word-splitting safe


def procedural_layout(
    words: list[str], image_size: int, atlas=None
) -> np.ndarray:
    """Deterministic pixel boxes for ``words``: at most two per row, row
    widths split proportionally to rendered text width. Returns (K, 4)."""
    if not words:
        return np.zeros((0, 4), dtype=np.int64)
    atlas = atlas or default_atlas()
    margin = max(2, image_size // 24)
    row_gap = 2
    rows = [words[i : i + 2] for i in range(0, len(words), 2)]
    avail_h = image_size - 2 * margin - row_gap * (len(rows) - 1)
    row_h = min(avail_h // len(rows), image_size // 3)
    total_h = row_h * len(rows) + row_gap * (len(rows) - 1)
    top = (image_size - total_h) // 2
    boxes = []
    for row in rows:
        widths = [max(atlas.text_width(w), 1) for w in row]
        avail_w = image_size - 2 * margin - WORD_GAP * (len(row) - 1)
        scale = avail_w / sum(widths)
        x = margin
        for w_px in widths:
            bw = max(4, int(round(w_px * scale)))
            boxes.append((x, top, min(x + bw, image_size - margin), top + row_h))
            x += bw + WORD_GAP
        top += row_h + row_gap
    return np.asarray(boxes, dtype=np.int64)


@dataclass
class SynthStyle:
    """Color scheme for synthetic renders."""

    name: str = "mono"  # mono: dark ink on light background; color: full RGB

    def colors(self, rng: random.Random) -> tuple[np.ndarray, np.ndarray]:
        if self.name == "mono":
            bg = np.array([rng.randint(200, 255)] * 3)
            fg = np.array([rng.randint(0, 60)] * 3)
        elif self.name == "color":
            bg = np.array([rng.randint(0, 255) for _ in range(3)])
            jitter = rng.randint(-16, 16)
            fg = (bg + 128 + jitter) % 256
        else:
            raise ConfigurationError(f"unknown style {self.name!r}")
        return fg.astype(np.uint8), bg.astype(np.uint8)


def colorize_mask(mask: CharSegMask, fg: np.ndarray, bg: np.ndarray) -> np.ndarray:
    """Character mask -> (H, W, 3) uint8 image with flat colors."""
    img = np.empty((mask.height, mask.width, 3), dtype=np.uint8)
    img[:] = bg
    img[mask.ink()] = fg
    return img


def synthetic_caption(words: list[str], rng: random.Random) -> str:
    pattern = rng.choice(_SIGN_PATTERNS)
    quoted = [f'"{w}"' for w in words]
    if len(quoted) == 1:
        joined = quoted[0]
    else:
        joined = ", ".join(quoted[:-1]) + " and " + quoted[-1]
    return pattern.replace("{W}", joined)


@dataclass
class SynthesizedRecord:
    record: DatasetRecord
    annotation: OCRAnnotation
    image: np.ndarray  # (H, W, 3) uint8


MIN_OCR_GLYPH_HEIGHT = 10  # below this the oracle OCR is unreliable

# Two words share a row in the procedural layout, splitting the row width
# proportionally to their reference widths, so the row's glyph scale is
# avail_width / sum(reference widths). Capping the combined character count of
# a shared row keeps that scale above the legibility floor at 64 px.
_ROW_CHAR_BUDGET = 9


def _sample_words(rng: random.Random, n: int, lexicon: list[str]) -> list[str]:
    """Draw ``n`` words whose row pairing stays renderable at small sizes."""
    words: list[str] = []
    while len(words) < n:
        if n - len(words) >= 2:  # this word opens a shared row
            first = rng.choice(lexicon)
            remaining = _ROW_CHAR_BUDGET - len(first)
            partners = [w for w in lexicon if len(w) <= remaining]
            if not partners:
                continue
            words.append(first)
            words.append(rng.choice(partners))
        else:  # a row of its own: full width, any lexicon word fits
            words.append(rng.choice(lexicon))
    return words


def synthesize_record(
    seed: int,
    style: SynthStyle | None = None,
    image_size: int = 64,
    lexicon: list[str] | None = None,
    max_words: int = 8,
    max_attempts: int = 200,
) -> SynthesizedRecord:
    """Render 1–8 lexicon words on a colored background; exact annotation.

    Word sets that leave less than the rule-4 character coverage, or whose
    glyphs would render too small for the oracle OCR, are resampled
    (deterministically, continuing the seeded stream) so every synthesized
    record passes all five filters at its own image size.
    """
    style = style or SynthStyle()
    lexicon = lexicon or load_lexicon()
    rng = random.Random(seed)
    atlas = default_atlas()

    for _ in range(max_attempts):
        n = rng.randint(1, max_words)
        words = _sample_words(rng, n, lexicon)
        boxes = procedural_layout(words, image_size, atlas)
        spec = RenderSpec(
            items=[(w, tuple(map(float, b))) for w, b in zip(words, boxes)],
            height=image_size,
            width=image_size,
        )
        try:
            mask, renders = render_spec_details(spec, atlas)
        except UnrenderableBoxError:
            continue
        if float(mask.ink().mean()) <= 0.105:
            continue
        if any(r.scale * atlas.line_height < MIN_OCR_GLYPH_HEIGHT for r in renders):
            continue
        fg, bg = style.colors(rng)
        image = colorize_mask(mask, fg, bg)
        ink_boxes = np.asarray(
            [r.ink_box for r in renders if r.ink_box is not None], dtype=np.int64
        )
        if ink_boxes.shape[0] != len(words):
            continue
        caption = synthetic_caption(words, rng)
        record = DatasetRecord(
            record_id=f"synth-{seed:08d}",
            caption=caption,
            source="synthetic",
            width=image_size,
            height=image_size,
        )
        annotation = OCRAnnotation(boxes=ink_boxes, strings=words, mask=mask)
        return SynthesizedRecord(record, annotation, image)
    raise DataError(f"could not synthesize a filter-passing record for seed {seed}")


def synthetic_prompt_boxes(
    seed: int, image_size: int = 64, lexicon: list[str] | None = None, max_words: int = 8
) -> tuple[str, list[str], np.ndarray]:
    """(caption, keywords, normalized boxes) pair for layout-model training.

    The boxes are the deterministic procedural layout of the sampled words, so
    the caption -> layout mapping is learnable.
    """
    lexicon = lexicon or load_lexicon()
    rng = random.Random(seed)
    n = rng.randint(1, max_words)
    words = [rng.choice(lexicon) for _ in range(n)]
    caption = synthetic_caption(words, rng)
    boxes = procedural_layout(words, image_size).astype(np.float64) / image_size
    cleaned, spans = extract_keywords(caption)
    assert [s.word for s in spans] == words
    return caption, words, boxes


# -- Dataset building ---------------------------------------------------------------


@dataclass
class SyntheticSourceSpec:
    image_size: int = 64
    style: SynthStyle = field(default_factory=SynthStyle)
    max_words: int = 8
    test_fraction: float = 0.1
    filter_config: FilterConfig = field(default_factory=lambda: FilterConfig(min_size=32))


def manifest_checksum(manifest_path: str | Path) -> str:
    return hashlib.sha256(Path(manifest_path).read_bytes()).hexdigest()


def build_dataset(
    spec: SyntheticSourceSpec, n: int, seed: int, out_dir: str | Path
) -> dict:
    """Generate, annotate, filter, and split ``n`` synthetic records.

    Writes images/, masks/, manifest.jsonl, and stats.json under ``out_dir``;
    returns the stats dict (ingested / survivors / per-rule rejections /
    checksum). Rejection counts plus survivors always equal the ingested count.
    """
    if n < 10:
        raise DataError(f"need at least 10 records, got {n}")
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    lexicon = load_lexicon()
    split_rng = random.Random(seed)

    rejections = {rule: 0 for rule in range(1, 6)}
    survivors = 0
    lines = []
    for i in range(n):
        synth = synthesize_record(
            seed=seed * 1_000_003 + i,
            style=spec.style,
            image_size=spec.image_size,
            lexicon=lexicon,
            max_words=spec.max_words,
        )
        report = apply_filters(synth.record, synth.annotation, spec.filter_config)
        if not report.passed:
            for f in report.failures:
                rejections[f.rule_id] += 1
            continue
        survivors += 1
        rec = synth.record
        rec.split = "test" if split_rng.random() < spec.test_fraction else "train"
        rec.image_path = f"images/{rec.record_id}.png"
        rec.mask_path = f"masks/{rec.record_id}.png"
        Image.fromarray(synth.image).save(out / rec.image_path)
        synth.annotation.mask.save(out / rec.mask_path)
        lines.append(
            json.dumps(
                {
                    "id": rec.record_id,
                    "image": rec.image_path,
                    "mask": rec.mask_path,
                    "caption": rec.caption,
                    "source": rec.source,
                    "split": rec.split,
                    "nsfw": rec.nsfw,
                    "width": rec.width,
                    "height": rec.height,
                    "boxes": synth.annotation.boxes.tolist(),
                    "texts": synth.annotation.strings,
                },
                sort_keys=True,
            )
        )
    if survivors == 0:
        raise DataError("no records survived filtering")

    manifest = out / "manifest.jsonl"
    manifest.write_text("\n".join(lines) + "\n")
    stats = {
        "ingested": n,
        "survivors": survivors,
        "rejections": rejections,
        "manifest_checksum": manifest_checksum(manifest),
    }
    (out / "stats.json").write_text(json.dumps(stats, indent=2, sort_keys=True))
    return stats


def load_manifest(out_dir: str | Path) -> list[dict]:
    path = Path(out_dir) / "manifest.jsonl"
    if not path.exists():
        raise DataError(f"no manifest at {path}")
    return [json.loads(line) for line in path.read_text().splitlines() if line]
