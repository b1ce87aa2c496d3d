"""Evaluation harness: keyword-match OCR metrics, a deterministic oracle OCR
for synthetic flat-background renders, benchmark running, and layout IoU.

The oracle OCR inverts the glyph renderer on clean images: binarize against
the dominant background color, group connected ink components into characters
by horizontal overlap (the renderer guarantees at least one blank column
between characters), split words at large gaps, and template-match each
character against the glyph atlas by minimum Hamming distance after
nearest-neighbor resize. The bundled lexicon contains only words this
round-trips exactly, so closed-loop evaluation is exact by construction.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import ndimage

from .errors import DataError
from .geometry import mean_pairwise_iou
from .glyphs import GlyphAtlas, _scale_bitmap, default_atlas
from .prompts import extract_keywords

# -- Metrics ---------------------------------------------------------------------


def f_measure(p: float, r: float) -> float:
    """Harmonic mean of precision and recall; 0 when both are 0."""
    if p + r == 0:
        return 0.0
    return 2 * p * r / (p + r)


def keyword_match_metrics(
    detected: list[str], keywords: list[str], exact_set: bool = False
) -> tuple[int, float, float]:
    """Per-image (correct, precision, recall) with multiset intersection.

    correct = 1 iff every keyword is detected (subset containment); with
    ``exact_set`` the detected multiset must equal the keyword multiset.
    """
    det = Counter(detected)
    kw = Counter(keywords)
    inter = sum((det & kw).values())
    p = inter / sum(det.values()) if det else 0.0
    r = inter / sum(kw.values()) if kw else 0.0
    if exact_set:
        correct = int(det == kw)
    else:
        correct = int(not kw - det)
    if not keywords:
        correct, r = 1, 1.0
    return correct, p, r


@dataclass
class MetricRow:
    prompt: str
    keywords: list[str]
    detected: list[str]
    correct: int
    precision: float
    recall: float


@dataclass
class MetricReport:
    accuracy: float
    precision: float
    recall: float
    f: float
    rows: list[MetricRow]
    failures: int = 0

    def to_json(self) -> str:
        return json.dumps(
            {
                "accuracy": self.accuracy,
                "precision": self.precision,
                "recall": self.recall,
                "f_measure": self.f,
                "failures": self.failures,
                "rows": [vars(r) for r in self.rows],
            },
            indent=2,
            sort_keys=True,
        )


# -- Oracle OCR --------------------------------------------------------------------


@dataclass
class OcrDetection:
    text: str
    box: tuple[int, int, int, int]  # left, top, right, bottom (end-exclusive)


def binarize_ink(image: np.ndarray, threshold: int = 60) -> np.ndarray:
    """Boolean ink mask: pixels far (L1, per-channel mean) from the dominant color."""
    if image.ndim == 2:
        image = np.stack([image] * 3, axis=-1)
    flat = image.reshape(-1, image.shape[-1])
    colors, counts = np.unique(flat, axis=0, return_counts=True)
    bg = colors[counts.argmax()].astype(np.int64)
    dist = np.abs(image.astype(np.int64) - bg).mean(axis=-1)
    return dist > threshold


@dataclass
class _CharCluster:
    x0: int
    y0: int
    x1: int
    y1: int

    def merge(self, other: "_CharCluster") -> "_CharCluster":
        return _CharCluster(
            min(self.x0, other.x0),
            min(self.y0, other.y0),
            max(self.x1, other.x1),
            max(self.y1, other.y1),
        )


def _component_boxes(ink: np.ndarray) -> list[_CharCluster]:
    labels, n = ndimage.label(ink, structure=np.ones((3, 3), dtype=int))
    out = []
    for sl in ndimage.find_objects(labels):
        if sl is not None:
            out.append(_CharCluster(sl[1].start, sl[0].start, sl[1].stop, sl[0].stop))
    return out


def _group_rows(clusters: list[_CharCluster]) -> list[list[_CharCluster]]:
    """Group clusters whose vertical extents overlap into text rows."""
    rows: list[list[_CharCluster]] = []
    for c in sorted(clusters, key=lambda c: c.y0):
        for row in rows:
            lo = max(c.y0, min(r.y0 for r in row))
            hi = min(c.y1, max(r.y1 for r in row))
            if hi > lo:
                row.append(c)
                break
        else:
            rows.append([c])
    rows.sort(key=lambda row: min(r.y0 for r in row))
    return rows


def _merge_x_overlaps(row: list[_CharCluster]) -> list[_CharCluster]:
    """Merge clusters that overlap horizontally (multi-part characters)."""
    chars: list[_CharCluster] = []
    for c in sorted(row, key=lambda c: c.x0):
        if chars and c.x0 < chars[-1].x1:
            chars[-1] = chars[-1].merge(c)
        else:
            chars.append(c)
    return chars


@dataclass
class _Template:
    char: str
    bits: np.ndarray  # full line-height bitmap, as rendered
    tight_h: int  # ink rows at reference size
    ink_w: int


def _prepare_templates(atlas: GlyphAtlas) -> list[_Template]:
    out = []
    for ch in atlas.alphabet.chars:
        bits = atlas.bitmap(ch)
        if bits.shape[1] == 0:
            continue
        ys = np.nonzero(bits.any(axis=1))[0]
        if ys.size == 0:
            continue
        out.append(_Template(ch, bits, int(ys[-1] - ys[0] + 1), bits.shape[1]))
    return out


def _match_char_scaled(
    crop: np.ndarray, templates: list[_Template], line_height: int
) -> tuple[str, int]:
    """Identify a detected ink component by re-rendering candidates.

    The renderer scales the full line-height bitmap with nearest-neighbor
    sampling and the component is its tight ink crop, so re-running those ops
    for candidate glyph heights reproduces the true character pixel-exactly;
    the match is the minimum-Hamming candidate (first in class order on ties).
    Returns the character and the glyph height of the best match so callers
    can reason about rendered-scale quantities such as letter spacing.
    """
    h, w = crop.shape
    best_ch, best_cost, best_g = "?", None, 0
    for tpl in templates:
        g_est = h * line_height / tpl.tight_h
        lo, hi = max(4, int(g_est) - 2), int(g_est) + 3
        for g in range(lo, hi):
            w_nom = int(round(tpl.ink_w * g / line_height))
            for trial_w in (w_nom - 1, w_nom, w_nom + 1):
                if trial_w < 1:
                    continue
                scaled = _scale_bitmap(tpl.bits, g, trial_w)
                rows = np.nonzero(scaled.any(axis=1))[0]
                cols = np.nonzero(scaled.any(axis=0))[0]
                if rows.size == 0:
                    continue
                tight = scaled[rows[0] : rows[-1] + 1, cols[0] : cols[-1] + 1]
                if tight.shape != (h, w):
                    continue
                cost = float(np.logical_xor(tight, crop).mean())
                if best_cost is None or cost < best_cost:
                    best_ch, best_cost, best_g = tpl.char, cost, g
        if best_cost == 0.0:
            break  # later classes cannot displace an exact match
    return best_ch, best_g


def _match_char(crop: np.ndarray, templates: list[_Template], line_height: int) -> str:
    return _match_char_scaled(crop, templates, line_height)[0]


def oracle_ocr(
    image: np.ndarray, atlas: GlyphAtlas | None = None, threshold: int = 60
) -> list[OcrDetection]:
    """Detect and read words on a clean synthetic render, in reading order."""
    atlas = atlas or default_atlas()
    ink = binarize_ink(image, threshold)
    if not ink.any():
        return []
    templates = _prepare_templates(atlas)
    # Largest advance-minus-ink spacing in the atlas: the widest possible
    # letter gap inside a word is that many atlas pixels at the rendered scale.
    intra_slack = max(
        atlas.advance(ch) - atlas.bitmap(ch).shape[1]
        for ch in atlas.alphabet.chars
        if atlas.bitmap(ch).shape[1] > 0
    )
    detections: list[OcrDetection] = []
    for row in _group_rows(_component_boxes(ink)):
        matched = [
            (c, *_match_char_scaled(ink[c.y0 : c.y1, c.x0 : c.x1], templates, atlas.line_height))
            for c in _merge_x_overlaps(row)
        ]
        words: list[list[tuple[_CharCluster, str]]] = [[(matched[0][0], matched[0][1])]]
        for (prev, _, prev_g), (cur, cur_ch, _) in zip(matched, matched[1:]):
            # Letter spacing scales with glyph height; word gaps (space
            # advances or separate boxes) are strictly wider at every scale.
            gap_limit = max(3, round(intra_slack * prev_g / atlas.line_height) + 1)
            if cur.x0 - prev.x1 > gap_limit:
                words.append([(cur, cur_ch)])
            else:
                words[-1].append((cur, cur_ch))
        for group in words:
            text = "".join(ch for _, ch in group)
            box = (
                min(c.x0 for c, _ in group),
                min(c.y0 for c, _ in group),
                max(c.x1 for c, _ in group),
                max(c.y1 for c, _ in group),
            )
            detections.append(OcrDetection(text=text, box=box))
    return detections


def oracle_ocr_adapter(
    image: np.ndarray,
) -> tuple[np.ndarray, list[str], "CharSegMask"]:
    """dataset.annotate_record adapter built on the oracle OCR."""
    from .glyphs import CharSegMask

    dets = oracle_ocr(image)
    boxes = np.asarray([d.box for d in dets], dtype=np.int64).reshape(-1, 4)
    grid = np.zeros(image.shape[:2], dtype=np.uint8)
    ink = binarize_ink(image)
    atlas = default_atlas()
    templates = _prepare_templates(atlas)
    for row in _group_rows(_component_boxes(ink)):
        for c in _merge_x_overlaps(row):
            crop = ink[c.y0 : c.y1, c.x0 : c.x1]
            ch = _match_char(crop, templates, atlas.line_height)
            if ch == "?" or ch not in atlas.alphabet:
                continue
            cls = atlas.alphabet.class_of(ch)
            view = grid[c.y0 : c.y1, c.x0 : c.x1]
            view[crop] = cls
    return boxes, [d.text for d in dets], CharSegMask(grid)


# -- Benchmark running ----------------------------------------------------------------


@dataclass
class BenchmarkSpec:
    prompts: list[str]
    name: str = "synthetic"

    def __post_init__(self):
        if not self.prompts:
            raise DataError("benchmark needs at least one prompt")

    @classmethod
    def from_file(cls, path: str | Path, name: str | None = None) -> "BenchmarkSpec":
        p = Path(path)
        prompts = [line for line in p.read_text().splitlines() if line.strip()]
        return cls(prompts=prompts, name=name or p.stem)

    def to_file(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self.prompts) + "\n")


def evaluate_benchmark(
    spec: BenchmarkSpec,
    generator: Callable[[str, int], np.ndarray],
    ocr: Callable[[np.ndarray], list[OcrDetection]] = oracle_ocr,
    exact_set: bool = False,
) -> MetricReport:
    """Generate an image per prompt, read it back, and aggregate metrics.

    Generator failures are recorded and excluded from the means.
    """
    rows: list[MetricRow] = []
    failures = 0
    for idx, prompt in enumerate(spec.prompts):
        _, spans = extract_keywords(prompt)
        keywords = [s.word for s in spans]
        try:
            image = generator(prompt, idx)
        except Exception:
            failures += 1
            continue
        detected = [d.text for d in ocr(image)]
        correct, p, r = keyword_match_metrics(detected, keywords, exact_set=exact_set)
        rows.append(MetricRow(prompt, keywords, detected, correct, p, r))
    if not rows:
        raise DataError("every generation failed; nothing to score")
    acc = float(np.mean([r.correct for r in rows]))
    prec = float(np.mean([r.precision for r in rows]))
    rec = float(np.mean([r.recall for r in rows]))
    return MetricReport(acc, prec, rec, f_measure(prec, rec), rows, failures)


def ground_truth_generator(
    image_size: int = 64, atlas: GlyphAtlas | None = None
) -> Callable[[str, int], np.ndarray]:
    """Reference generator closing the evaluation loop: renders each prompt's
    quoted keywords with the same rasterizer the oracle OCR inverts."""
    from .dataset import procedural_layout
    from .glyphs import RenderSpec, render_printed_template

    atlas = atlas or default_atlas()

    def generate(prompt: str, idx: int) -> np.ndarray:
        _, spans = extract_keywords(prompt)
        words = [s.word for s in spans]
        boxes = procedural_layout(words, image_size, atlas)
        spec = RenderSpec(
            items=[(w, tuple(map(float, b))) for w, b in zip(words, boxes)],
            height=image_size,
            width=image_size,
        )
        gray = render_printed_template(spec, atlas=atlas)
        return np.stack([gray] * 3, axis=-1)

    return generate


def synthetic_benchmark(n: int, seed: int = 0, image_size: int = 64) -> BenchmarkSpec:
    """n prompts whose keywords render legibly at ``image_size``; captions come
    from the same generator as the synthetic training corpus."""
    from .dataset import synthesize_record

    prompts = [
        synthesize_record(seed * 1_000_003 + i, image_size=image_size).record.caption
        for i in range(n)
    ]
    return BenchmarkSpec(prompts, name=f"synthetic-{n}")


def glyph_region_iou(image: np.ndarray, char_mask: np.ndarray) -> float:
    """IoU between the image's binarized ink and the conditioning mask's ink."""
    ink = binarize_ink(image)
    target = np.asarray(char_mask) > 0
    if ink.shape != target.shape:
        raise DataError(f"shape mismatch: image ink {ink.shape} vs mask {target.shape}")
    union = np.logical_or(ink, target).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(ink, target).sum() / union)


def layout_eval(pred_sets: list, gt_sets: list) -> float:
    """Mean IoU over index-paired boxes across paired layout sets."""
    if len(pred_sets) != len(gt_sets):
        raise DataError(f"{len(pred_sets)} predictions vs {len(gt_sets)} ground truths")
    if not pred_sets:
        raise DataError("no layouts to evaluate")
    ious = []
    for pred, gt in zip(pred_sets, gt_sets):
        ious.append(mean_pairwise_iou(pred, gt))
    return float(np.mean(ious))


# -- Embedding-based adapters ----------------------------------------------------------

# No pretrained networks ship with this package; these utilities accept
# embeddings computed elsewhere and reduce them to the standard scores.


def frechet_distance(emb_a: np.ndarray, emb_b: np.ndarray) -> float:
    """Fréchet distance between Gaussians fitted to two embedding sets."""
    from scipy import linalg

    a = np.atleast_2d(emb_a).astype(np.float64)
    b = np.atleast_2d(emb_b).astype(np.float64)
    if a.shape[0] < 2 or b.shape[0] < 2:
        raise DataError("need at least two embeddings per side")
    mu_a, mu_b = a.mean(axis=0), b.mean(axis=0)
    cov_a = np.cov(a, rowvar=False)
    cov_b = np.cov(b, rowvar=False)
    covmean = linalg.sqrtm(cov_a @ cov_b)
    if np.iscomplexobj(covmean):
        covmean = covmean.real
    diff = mu_a - mu_b
    return float(diff @ diff + np.trace(cov_a + cov_b - 2.0 * covmean))


def clip_style_score(image_emb: np.ndarray, text_emb: np.ndarray) -> float:
    """Mean non-negative cosine similarity between paired embeddings, scaled by 100."""
    a = np.asarray(image_emb, dtype=np.float64)
    b = np.asarray(text_emb, dtype=np.float64)
    if a.shape != b.shape:
        raise DataError("embedding sets must be index-paired with equal shapes")
    a = a / np.linalg.norm(a, axis=-1, keepdims=True)
    b = b / np.linalg.norm(b, axis=-1, keepdims=True)
    cos = (a * b).sum(axis=-1)
    return float(100.0 * np.clip(cos, 0.0, None).mean())
