#!/usr/bin/env python3
"""Regenerate the bundled bitmap glyph atlas from a free sans-serif TTF.

The atlas is committed under src/textforge/assets/ so the library never
touches system fonts at runtime and rasterization stays bit-exact across
machines. Re-run only when deliberately changing the atlas.

Usage: python3 scripts/build_glyph_atlas.py [--font path/to/font.ttf]
"""

import argparse
import sys
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw, ImageFont

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from textforge.alphabet import DEFAULT_ALPHABET

REFERENCE_SIZE = 24  # em size used for width measurement and mask rendering
LETTER_GAP = 3       # px of tracking appended to every ink glyph's advance
INK_THRESHOLD = 128


def default_font_path() -> str:
    # Bold face: thicker strokes survive nearest-neighbor downscaling without
    # fragmenting, which keeps small renders machine-readable.
    import matplotlib

    return str(
        Path(matplotlib.__file__).parent / "mpl-data/fonts/ttf/DejaVuSans-Bold.ttf"
    )


def rasterize(font: ImageFont.FreeTypeFont, ch: str, line_h: int) -> np.ndarray:
    canvas = Image.new("L", (4 * REFERENCE_SIZE, line_h), 0)
    ImageDraw.Draw(canvas).text((0, 0), ch, font=font, fill=255)
    return np.asarray(canvas) >= INK_THRESHOLD


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--font", default=None, help="TTF to rasterize (default: bundled DejaVuSans)")
    ap.add_argument(
        "--out",
        default=str(Path(__file__).resolve().parents[1] / "src/textforge/assets/glyph_atlas.npz"),
    )
    args = ap.parse_args()

    font = ImageFont.truetype(args.font or default_font_path(), REFERENCE_SIZE)
    ascent, descent = font.getmetrics()
    line_h = ascent + descent

    chars = DEFAULT_ALPHABET.chars
    bitmaps, ink_widths, advances = [], [], []
    for ch in chars:
        bits = rasterize(font, ch, line_h)
        cols = np.nonzero(bits.any(axis=0))[0]
        if ch == " ":
            ink = np.zeros((line_h, 0), dtype=bool)
            adv = int(round(font.getlength(" ")))
        else:
            if cols.size == 0:
                raise RuntimeError(f"glyph {ch!r} rendered empty")
            ink = bits[:, cols.min() : cols.max() + 1]
            adv = ink.shape[1] + LETTER_GAP
        bitmaps.append(ink)
        ink_widths.append(ink.shape[1])
        advances.append(adv)

    w_max = max(ink_widths)
    packed = np.zeros((len(chars), line_h, w_max), dtype=bool)
    for i, bm in enumerate(bitmaps):
        packed[i, :, : bm.shape[1]] = bm

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    np.savez_compressed(
        out,
        bitmaps=packed,
        ink_widths=np.array(ink_widths, dtype=np.int32),
        advances=np.array(advances, dtype=np.int32),
        line_height=np.int32(line_h),
        ascent=np.int32(ascent),
        reference_size=np.int32(REFERENCE_SIZE),
        letter_gap=np.int32(LETTER_GAP),
    )
    DEFAULT_ALPHABET.save(out.parent / "alphabet.txt")
    print(f"wrote {out} ({out.stat().st_size} bytes), line_h={line_h}, w_max={w_max}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
