#!/usr/bin/env python3
"""Build the bundled lexicon of OCR-safe words and write it to assets/.

A word qualifies if rendering it at several box scales (both height- and
width-limited) and reading it back with the oracle OCR reproduces it exactly.
Words with ambiguous glyph pairs at small sizes (I/l, O/0, rn/m, ...) drop out
here, which is what makes closed-loop evaluation on the synthetic corpus
exact: every corpus word is read back verbatim.

Usage: python3 scripts/build_lexicon.py
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

import numpy as np

from textforge.evaluation import oracle_ocr
from textforge.errors import UnrenderableBoxError
from textforge.glyphs import RenderSpec, compose_char_mask, default_atlas

from build_tokenizer_vocab import WORDS  # same embedded word list

# Corpus renders keep glyph heights >= 10; 40 covers upscaled boxes.
TEST_HEIGHTS = (10, 11, 12, 13, 14, 15, 16, 18, 21, 25, 29, 40)
MIN_LEN, MAX_LEN = 2, 9


def render_word(word: str, box_w: int, box_h: int) -> np.ndarray:
    """Black-on-white render of ``word`` centered in a (box_h, box_w) box."""
    canvas_h, canvas_w = box_h + 8, box_w + 8
    spec = RenderSpec(
        items=[(word, (4.0, 4.0, 4.0 + box_w, 4.0 + box_h))],
        height=canvas_h,
        width=canvas_w,
    )
    mask = compose_char_mask(spec)
    img = np.full((canvas_h, canvas_w, 3), 255, dtype=np.uint8)
    img[mask.ink()] = 0
    return img


def round_trips(word: str, atlas) -> bool:
    ref_w = atlas.text_width(word)
    if ref_w == 0:
        return False
    for h in TEST_HEIGHTS:
        # Wide box -> height-limited scaling, glyph height exactly h. Jitter
        # the box width slightly to also exercise width-limited rounding.
        scale = h / atlas.line_height
        for box_w in (4 * ref_w, int(ref_w * scale) + 1, int(ref_w * scale)):
            if box_w < 4:
                continue
            try:
                img = render_word(word, box_w, h)
            except UnrenderableBoxError:
                return False
            dets = oracle_ocr(img)
            if len(dets) != 1 or dets[0].text != word:
                return False
    return True


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument(
        "--out",
        default=str(Path(__file__).resolve().parents[1] / "src/textforge/assets/lexicon.txt"),
    )
    args = ap.parse_args()

    atlas = default_atlas()
    candidates = []
    seen = set()
    for w in WORDS.split():
        for variant in (w, w.capitalize(), w.upper()):
            if MIN_LEN <= len(variant) <= MAX_LEN and variant not in seen:
                seen.add(variant)
                candidates.append(variant)

    kept = [w for w in candidates if round_trips(w, atlas)]
    Path(args.out).write_text("\n".join(kept) + "\n")
    print(f"kept {len(kept)}/{len(candidates)} words -> {args.out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
