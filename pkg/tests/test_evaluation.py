import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from textforge.dataset import load_lexicon
from textforge.errors import DataError
from textforge.evaluation import (
    BenchmarkSpec,
    MetricReport,
    MetricRow,
    binarize_ink,
    evaluate_benchmark,
    f_measure,
    glyph_region_iou,
    ground_truth_generator,
    keyword_match_metrics,
    oracle_ocr,
    synthetic_benchmark,
)
from textforge.glyphs import PrintStyle, RenderSpec, render_printed_template


def test_f_measure_zero_when_both_zero():
    assert f_measure(0.0, 0.0) == 0.0


def test_f_measure_reference_values():
    # published operating points for a text-render evaluation
    assert f_measure(0.7846, 0.7802) == pytest.approx(0.7824, abs=1e-4)
    assert f_measure(0.5211, 0.6707) == pytest.approx(0.5865, abs=1e-3)


@given(
    p=st.floats(min_value=0, max_value=1, allow_nan=False),
    r=st.floats(min_value=0, max_value=1, allow_nan=False),
)
def test_f_measure_bounded_by_min_max(p, r):
    f = f_measure(p, r)
    assert 0.0 <= f <= 1.0
    assert f <= max(p, r) + 1e-12
    if p > 0 and r > 0:
        assert f >= min(p, r) * 2 * max(p, r) / (p + r) - 1e-12


def test_keyword_match_subset_containment():
    correct, p, r = keyword_match_metrics(["A", "B", "C"], ["A", "B"])
    assert correct == 1
    assert p == pytest.approx(2 / 3)
    assert r == pytest.approx(1.0)


def test_keyword_match_exact_set():
    correct, _, _ = keyword_match_metrics(["A", "B", "C"], ["A", "B"], exact_set=True)
    assert correct == 0
    correct, _, _ = keyword_match_metrics(["A", "B"], ["B", "A"], exact_set=True)
    assert correct == 1


def test_keyword_match_multiset_semantics():
    # duplicated keyword must be detected twice for full recall
    correct, p, r = keyword_match_metrics(["GO"], ["GO", "GO"])
    assert correct == 0
    assert r == pytest.approx(0.5)


def test_keyword_match_no_keywords_counts_correct():
    correct, p, r = keyword_match_metrics(["noise"], [])
    assert correct == 1 and r == 1.0


def test_binarize_ink_dominant_color():
    img = np.full((20, 20, 3), 240, dtype=np.uint8)
    img[5:10, 5:10] = 10  # dark square on light background
    ink = binarize_ink(img)
    assert ink[6, 6]
    assert not ink[0, 0]
    # inverted polarity works the same way
    inv = 255 - img
    ink2 = binarize_ink(inv)
    assert ink2[6, 6] and not ink2[0, 0]


def test_oracle_reads_rendered_words(atlas):
    spec = RenderSpec(
        items=[("HELLO", (4, 8, 124, 40)), ("WORLD", (4, 44, 124, 76))],
        height=84, width=128,
    )
    img = render_printed_template(spec, PrintStyle(), atlas)
    rgb = np.stack([img] * 3, axis=-1)
    dets = oracle_ocr(rgb)
    assert [d.text for d in dets] == ["HELLO", "WORLD"]


def test_oracle_empty_image(atlas):
    blank = np.full((64, 64, 3), 255, dtype=np.uint8)
    assert oracle_ocr(blank) == []


def test_oracle_reading_order_two_words_one_row(atlas):
    spec = RenderSpec(
        items=[("AB", (4, 10, 56, 42)), ("CD", (70, 10, 122, 42))],
        height=52, width=128,
    )
    img = render_printed_template(spec, PrintStyle(), atlas)
    rgb = np.stack([img] * 3, axis=-1)
    assert [d.text for d in oracle_ocr(rgb)] == ["AB", "CD"]


@settings(max_examples=20, deadline=None)
@given(data=st.data())
def test_oracle_round_trips_lexicon_words(data, atlas):
    """Any lexicon word rendered at a generous size must read back exactly."""
    word = data.draw(st.sampled_from(load_lexicon()[:200]))
    height = data.draw(st.integers(min_value=16, max_value=36))
    width = atlas.text_width(word) * height // atlas.line_height + 8
    spec = RenderSpec(items=[(word, (4, 4, 4 + width, 4 + height))],
                      height=height + 8, width=width + 8)
    img = render_printed_template(spec, PrintStyle(), atlas)
    rgb = np.stack([img] * 3, axis=-1)
    dets = oracle_ocr(rgb)
    assert len(dets) == 1
    assert dets[0].text == word


def test_benchmark_spec_round_trip(tmp_path):
    spec = BenchmarkSpec(prompts=['A sign "X"', 'A sign "Y"'], name="t")
    path = tmp_path / "bench.txt"
    spec.to_file(path)
    loaded = BenchmarkSpec.from_file(path)
    assert loaded.prompts == spec.prompts


def test_benchmark_spec_rejects_empty():
    with pytest.raises(DataError):
        BenchmarkSpec(prompts=[])


def test_synthetic_benchmark_deterministic():
    a = synthetic_benchmark(5, seed=3)
    b = synthetic_benchmark(5, seed=3)
    assert a.prompts == b.prompts
    assert len(a.prompts) == 5


def test_evaluate_benchmark_counts_failures():
    spec = BenchmarkSpec(prompts=['A sign "OK"', 'A sign "NO"'])
    gen = ground_truth_generator(64)

    calls = {"n": 0}

    def flaky(prompt, idx):
        calls["n"] += 1
        if idx == 1:
            raise RuntimeError("boom")
        return gen(prompt, idx)

    report = evaluate_benchmark(spec, flaky)
    assert report.failures == 1
    assert len(report.rows) == 1


def test_evaluate_benchmark_all_failures_raise():
    spec = BenchmarkSpec(prompts=['A sign "OK"'])

    def broken(prompt, idx):
        raise RuntimeError("boom")

    with pytest.raises(DataError):
        evaluate_benchmark(spec, broken)


def test_metric_report_json_round_trip():
    row = MetricRow("p", ["A"], ["A"], 1, 1.0, 1.0)
    report = MetricReport(1.0, 1.0, 1.0, 1.0, [row], failures=0)
    data = json.loads(report.to_json())
    assert data["accuracy"] == 1.0
    assert data["f_measure"] == 1.0
    assert data["rows"][0]["prompt"] == "p"


def test_glyph_region_iou_perfect_and_empty(atlas):
    spec = RenderSpec(items=[("GO", (4, 4, 60, 36))], height=40, width=64)
    mask = render_printed_template(spec, PrintStyle(), atlas)
    rgb = np.stack([mask] * 3, axis=-1)
    from textforge.glyphs import compose_char_mask

    grid = compose_char_mask(spec, atlas).grid
    assert glyph_region_iou(rgb, grid) == pytest.approx(1.0)
    blank = np.full((40, 64, 3), 255, dtype=np.uint8)
    assert glyph_region_iou(blank, np.zeros((40, 64), dtype=np.uint8)) == 1.0
    assert glyph_region_iou(blank, grid) == 0.0
