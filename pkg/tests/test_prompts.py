import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from textforge.errors import DataError, MalformedPromptError, TooManyKeywordsError
from textforge.prompts import (
    NUM_WIDTH_BUCKETS,
    WIDTH_BUCKET_DIVISOR,
    KeywordSpan,
    RawPrompt,
    TokenizedPrompt,
    extract_keywords,
    prepare_prompt,
    tokenize_and_mark,
    width_bucket,
)
from textforge.tokenizer import PAD

WORDS = st.text(
    alphabet=st.sampled_from("ABCdefgh123"), min_size=1, max_size=8
)


def test_extract_single_quoted_keyword():
    cleaned, kws = extract_keywords('A sign that says "STOP"')
    assert cleaned == "A sign that says STOP"
    assert [k.word for k in kws] == ["STOP"]
    assert [k.order_index for k in kws] == [0]


def test_extract_multiple_spans_in_reading_order():
    cleaned, kws = extract_keywords("Poster with 'Hello World' and \"Bye\"")
    assert [k.word for k in kws] == ["Hello", "World", "Bye"]
    assert [k.order_index for k in kws] == [0, 1, 2]
    assert '"' not in cleaned and "'" not in cleaned


def test_multiword_span_splits_per_word():
    _, kws = extract_keywords('"ONE TWO THREE"')
    assert [k.word for k in kws] == ["ONE", "TWO", "THREE"]


def test_curly_quotes_normalize():
    _, kws = extract_keywords("A sign that says “OPEN”")
    assert [k.word for k in kws] == ["OPEN"]


def test_unbalanced_quotes_raise():
    with pytest.raises(MalformedPromptError):
        extract_keywords('A sign that says "STOP')


def test_empty_prompt_raises():
    with pytest.raises(MalformedPromptError):
        RawPrompt("   ")


def test_no_quotes_yields_no_keywords():
    cleaned, kws = extract_keywords("Just a plain caption")
    assert kws == []
    assert cleaned == "Just a plain caption"


def test_keyword_span_rejects_whitespace():
    with pytest.raises(ValueError):
        KeywordSpan("two words", 0)


@given(st.lists(WORDS, min_size=1, max_size=4))
def test_extract_keywords_preserve_order(words):
    prompt = "A sign saying " + " ".join(f'"{w}"' for w in words)
    _, kws = extract_keywords(prompt)
    assert [k.word for k in kws] == words
    assert [k.order_index for k in kws] == list(range(len(words)))


def test_width_bucket_monotone_and_bounded(atlas):
    narrow = width_bucket("i", atlas)
    wide = width_bucket("WWWWWWWW", atlas)
    assert 0 <= narrow <= wide < NUM_WIDTH_BUCKETS
    assert width_bucket("W" * 100, atlas) == NUM_WIDTH_BUCKETS - 1


def test_width_bucket_matches_measured_width(atlas):
    w = "HELLO"
    assert width_bucket(w, atlas) == min(
        atlas.text_width(w) // WIDTH_BUCKET_DIVISOR, NUM_WIDTH_BUCKETS - 1
    )


def test_tokenize_marks_first_subtoken_only(tokenizer, atlas):
    tp, kws = prepare_prompt('A poster of "EXTRAORDINARY"', tokenizer, atlas)
    assert tp.num_keywords == 1
    flagged = np.flatnonzero(tp.keyword_flags)
    assert len(flagged) == 1
    assert tp.width_buckets[flagged[0]] == width_bucket("EXTRAORDINARY", atlas)
    assert tp.width_buckets[tp.keyword_flags == 0].sum() == 0


def test_tokenize_fixed_length(tokenizer):
    tp, _ = prepare_prompt('A sign that says "GO"', tokenizer)
    assert len(tp) == tokenizer.context_length


def test_too_many_keywords_raise(tokenizer):
    words = " ".join(f'"W{i}"' for i in range(9))
    with pytest.raises(TooManyKeywordsError):
        prepare_prompt(f"A wall of {words}", tokenizer, k_max=8)


def test_exactly_k_max_keywords_allowed(tokenizer):
    words = " ".join(f'"W{i}"' for i in range(8))
    tp, kws = prepare_prompt(f"A wall of {words}", tokenizer, k_max=8)
    assert tp.num_keywords == 8


def test_keyword_missing_from_text_raises(tokenizer):
    with pytest.raises(DataError):
        tokenize_and_mark("some text", [KeywordSpan("ABSENT", 0)], tokenizer)


def test_padding_positions_carry_no_flags(tokenizer):
    tp, _ = prepare_prompt('Tiny "A"', tokenizer)
    pad = tp.token_ids == PAD
    assert pad.any()
    assert tp.keyword_flags[pad].sum() == 0
    assert tp.width_buckets[pad].sum() == 0


def test_tokenized_prompt_validates_lengths():
    with pytest.raises(ValueError):
        TokenizedPrompt(np.zeros(4), np.zeros(3), np.zeros(4))


@given(words=st.lists(WORDS, min_size=1, max_size=3))
def test_prepare_prompt_flags_match_keyword_count(words, tokenizer):
    prompt = "A label reads " + " ".join(f'"{w}"' for w in words)
    tp, kws = prepare_prompt(prompt, tokenizer)
    assert tp.num_keywords == len(words) == len(kws)
