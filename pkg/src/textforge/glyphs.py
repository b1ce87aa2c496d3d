"""Bitmap glyph rendering: character masks, printed templates, width measurement.

All rasterization goes through the bundled atlas (committed under assets/,
regenerated only by scripts/build_glyph_atlas.py), so outputs are bit-exact
across machines. Scaling is nearest-neighbor per glyph with a uniform scale
factor per word, and characters never share pixels, which keeps the oracle
OCR's component splitting reliable.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path

import numpy as np
from PIL import Image

from .alphabet import DEFAULT_ALPHABET, Alphabet
from .errors import UnrenderableBoxError, UnsupportedCharacterError

MIN_GLYPH_HEIGHT = 4  # smaller boxes raise instead of emitting illegible masks


class GlyphAtlas:
    """Per-character ink bitmaps (full line height) and advance widths."""

    def __init__(
        self,
        bitmaps: np.ndarray,
        ink_widths: np.ndarray,
        advances: np.ndarray,
        line_height: int,
        reference_size: int,
        alphabet: Alphabet = DEFAULT_ALPHABET,
    ):
        self.alphabet = alphabet
        self.line_height = int(line_height)
        self.reference_size = int(reference_size)
        self._ink_widths = np.asarray(ink_widths, dtype=np.int64)
        self._advances = np.asarray(advances, dtype=np.int64)
        self._bitmaps = [
            np.ascontiguousarray(bitmaps[i, :, : self._ink_widths[i]])
            for i in range(len(alphabet.chars))
        ]
        for i, ch in enumerate(alphabet.chars):
            if ch != " " and self._ink_widths[i] == 0:
                raise ValueError(f"atlas bitmap for {ch!r} is empty")

    def bitmap(self, ch: str) -> np.ndarray:
        """Boolean ink bitmap of shape (line_height, ink_width)."""
        return self._bitmaps[self.alphabet.class_of(ch) - 1]

    def advance(self, ch: str) -> int:
        return int(self._advances[self.alphabet.class_of(ch) - 1])

    def text_width(self, word: str) -> int:
        """Sum of advance widths at the reference size."""
        self.alphabet.validate_text(word)
        return int(sum(self.advance(c) for c in word))


@lru_cache(maxsize=1)
def default_atlas() -> GlyphAtlas:
    path = Path(resources.files("textforge").joinpath("assets", "glyph_atlas.npz"))  # type: ignore[arg-type]
    data = np.load(path)
    return GlyphAtlas(
        bitmaps=data["bitmaps"],
        ink_widths=data["ink_widths"],
        advances=data["advances"],
        line_height=int(data["line_height"]),
        reference_size=int(data["reference_size"]),
    )


def measure_text_width(word: str, atlas: GlyphAtlas | None = None) -> int:
    """Pixel width of ``word`` at the atlas reference size (advance sum)."""
    atlas = atlas or default_atlas()
    return atlas.text_width(word)


@dataclass
class CharSegMask:
    """H x W grid of character class indices; 0 marks non-character pixels."""

    grid: np.ndarray

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=np.uint8)
        if self.grid.ndim != 2:
            raise ValueError("mask grid must be 2-D")
        if self.grid.max(initial=0) > len(DEFAULT_ALPHABET):
            raise ValueError("mask contains class indices outside the alphabet")

    @property
    def height(self) -> int:
        return self.grid.shape[0]

    @property
    def width(self) -> int:
        return self.grid.shape[1]

    def ink(self) -> np.ndarray:
        return self.grid > 0

    def save(self, path) -> None:
        """8-bit single-channel image; pixel value == class index."""
        Image.fromarray(self.grid, mode="L").save(path)

    @classmethod
    def load(cls, path) -> "CharSegMask":
        return cls(np.asarray(Image.open(path).convert("L")))

    @classmethod
    def empty(cls, height: int, width: int) -> "CharSegMask":
        return cls(np.zeros((height, width), dtype=np.uint8))


@dataclass
class RenderSpec:
    """Words with pixel boxes, drawn in order onto a fixed-size canvas."""

    items: list[tuple[str, tuple[float, float, float, float]]]
    height: int
    width: int

    def validate(self) -> None:
        for word, (x0, y0, x1, y1) in self.items:
            if not (x0 < x1 and y0 < y1):
                raise ValueError(f"degenerate box for {word!r}: {(x0, y0, x1, y1)}")
            DEFAULT_ALPHABET.validate_text(word)


@dataclass
class WordRender:
    """Placement result for one word on a canvas."""

    word: str
    sub_boxes: list[tuple[int, int, int, int] | None]  # tight ink boxes, end-exclusive
    ink_box: tuple[int, int, int, int] | None  # union of sub-boxes
    scale: float


def _scale_bitmap(bits: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Nearest-neighbor resize of a boolean bitmap."""
    in_h, in_w = bits.shape
    rows = np.minimum((np.arange(out_h) + 0.5) * in_h / out_h, in_h - 1).astype(np.int64)
    cols = np.minimum((np.arange(out_w) + 0.5) * in_w / out_w, in_w - 1).astype(np.int64)
    return bits[rows][:, cols]


def render_word_in_box(
    word: str,
    box: tuple[float, float, float, float],
    atlas: GlyphAtlas,
    canvas: np.ndarray,
) -> WordRender:
    """Draw ``word`` into ``box`` on a class-index canvas, modifying it in place.

    Glyphs are uniformly scaled so the word fits the box (aspect preserved,
    centered); each ink pixel is labeled with the character's class index.
    Later calls overwrite earlier ink on conflicts.
    """
    x0, y0, x1, y1 = box
    box_w, box_h = x1 - x0, y1 - y0
    if box_w <= 0 or box_h <= 0:
        raise UnrenderableBoxError(f"box {box} has no area")
    atlas.alphabet.validate_text(word)

    ref_w = atlas.text_width(word)
    if ref_w == 0:  # empty word or spaces only: nothing to draw
        return WordRender(word, [None] * len(word), None, 0.0)

    scale = min(box_h / atlas.line_height, box_w / ref_w)
    glyph_h = int(round(atlas.line_height * scale))
    if glyph_h < MIN_GLYPH_HEIGHT:
        raise UnrenderableBoxError(
            f"box {box} scales glyphs to {glyph_h} px; minimum is {MIN_GLYPH_HEIGHT}"
        )

    # Lay out in scaled space with at least 1 px between ink spans so that
    # characters never touch regardless of rounding.
    widths, gaps = [], []
    for ch in word:
        ink_w = atlas.bitmap(ch).shape[1]
        adv = atlas.advance(ch)
        if ink_w == 0:
            widths.append(0)
            gaps.append(max(1, int(round(adv * scale))))
        else:
            widths.append(max(1, int(round(ink_w * scale))))
            gaps.append(max(1, int(round((adv - ink_w) * scale))))
    placed_w = sum(widths) + sum(gaps[:-1]) if word else 0

    left = int(round(x0 + (box_w - placed_w) / 2))
    top = int(round(y0 + (box_h - glyph_h) / 2))
    canvas_h, canvas_w = canvas.shape

    sub_boxes: list[tuple[int, int, int, int] | None] = []
    cursor = left
    for ch, w, gap in zip(word, widths, gaps):
        if w == 0:
            sub_boxes.append(None)
            cursor += gap
            continue
        scaled = _scale_bitmap(atlas.bitmap(ch), glyph_h, w)
        cls = atlas.alphabet.class_of(ch)
        gx0, gy0 = cursor, top
        sx0, sy0 = max(0, -gx0), max(0, -gy0)
        sx1 = min(w, canvas_w - gx0)
        sy1 = min(glyph_h, canvas_h - gy0)
        if sx1 > sx0 and sy1 > sy0:
            view = canvas[gy0 + sy0 : gy0 + sy1, gx0 + sx0 : gx0 + sx1]
            patch = scaled[sy0:sy1, sx0:sx1]
            view[patch] = cls
        ys, xs = np.nonzero(scaled)
        if ys.size:
            sub_boxes.append(
                (gx0 + int(xs.min()), gy0 + int(ys.min()), gx0 + int(xs.max()) + 1, gy0 + int(ys.max()) + 1)
            )
        else:
            sub_boxes.append(None)
        cursor += w + gap

    inky = [b for b in sub_boxes if b is not None]
    ink_box = None
    if inky:
        arr = np.array(inky)
        ink_box = (int(arr[:, 0].min()), int(arr[:, 1].min()), int(arr[:, 2].max()), int(arr[:, 3].max()))
    return WordRender(word, sub_boxes, ink_box, scale)


def compose_char_mask(spec: RenderSpec, atlas: GlyphAtlas | None = None) -> CharSegMask:
    """Render every (word, box) in order; later words overwrite on conflict."""
    atlas = atlas or default_atlas()
    spec.validate()
    canvas = np.zeros((spec.height, spec.width), dtype=np.uint8)
    for word, box in spec.items:
        render_word_in_box(word, box, atlas, canvas)
    return CharSegMask(canvas)


def render_spec_details(
    spec: RenderSpec, atlas: GlyphAtlas | None = None
) -> tuple[CharSegMask, list[WordRender]]:
    """compose_char_mask plus per-word placement metadata."""
    atlas = atlas or default_atlas()
    spec.validate()
    canvas = np.zeros((spec.height, spec.width), dtype=np.uint8)
    renders = [render_word_in_box(word, box, atlas, canvas) for word, box in spec.items]
    return CharSegMask(canvas), renders


@dataclass
class PrintStyle:
    """Gray levels for printed templates."""

    foreground: int = 0
    background: int = 255


def render_printed_template(
    spec: RenderSpec, style: PrintStyle | None = None, atlas: GlyphAtlas | None = None
) -> np.ndarray:
    """Grayscale glyphs-on-canvas image sharing the mask's rasterization path."""
    style = style or PrintStyle()
    mask = compose_char_mask(spec, atlas)
    img = np.full(mask.grid.shape, style.background, dtype=np.uint8)
    img[mask.ink()] = style.foreground
    return img
