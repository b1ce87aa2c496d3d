"""Prompt parsing: quoted-keyword extraction, tokenization, width buckets.

Keywords are the words the user wants painted into the image, marked by
enclosing them in quotes inside the prompt. Quoted multi-word phrases are
split into one keyword per whitespace-separated word, each later receiving
its own bounding box.
"""

from __future__ import annotations

import string
from dataclasses import dataclass, field

import numpy as np

from .alphabet import DEFAULT_ALPHABET
from .errors import DataError, MalformedPromptError, TooManyKeywordsError
from .glyphs import GlyphAtlas, default_atlas
from .tokenizer import END, PAD, START, BpeTokenizer, default_tokenizer

WIDTH_BUCKET_DIVISOR = 8
NUM_WIDTH_BUCKETS = 64

# Typographic variants accepted and normalized before pairing.
_SINGLE_QUOTES = "'‘’`"
_DOUBLE_QUOTES = '"“”'
_QUOTE_MAP = {c: "'" for c in _SINGLE_QUOTES}
_QUOTE_MAP.update({c: '"' for c in _DOUBLE_QUOTES})


@dataclass(frozen=True)
class RawPrompt:
    text: str

    def __post_init__(self):
        if not self.text.strip():
            raise MalformedPromptError("prompt is empty")


@dataclass(frozen=True)
class KeywordSpan:
    """One whitespace-free keyword and its reading-order position."""

    word: str
    order_index: int

    def __post_init__(self):
        if not self.word or any(c.isspace() for c in self.word):
            raise ValueError(f"keyword must be a single token, got {self.word!r}")
        DEFAULT_ALPHABET.validate_text(self.word)


def _normalize_quotes(text: str) -> str:
    return "".join(_QUOTE_MAP.get(c, c) for c in text)


def _paired_spans(text: str, quote: str) -> list[tuple[int, int]]:
    positions = [i for i, c in enumerate(text) if c == quote]
    if len(positions) % 2:
        raise MalformedPromptError(
            f"unbalanced {quote} quotes in prompt ({len(positions)} found)"
        )
    return [(positions[i], positions[i + 1]) for i in range(0, len(positions), 2)]


def extract_keywords(prompt: RawPrompt | str) -> tuple[str, list[KeywordSpan]]:
    """Locate maximal quoted spans, split them into per-word keywords.

    Returns the prompt with all quote characters removed plus the keywords in
    reading order. Raises MalformedPromptError on unbalanced or overlapping
    quotes.
    """
    text = prompt.text if isinstance(prompt, RawPrompt) else RawPrompt(prompt).text
    norm = _normalize_quotes(text)
    spans = sorted(_paired_spans(norm, "'") + _paired_spans(norm, '"'))
    for (_, e0), (s1, _) in zip(spans, spans[1:]):
        if s1 < e0:
            raise MalformedPromptError("overlapping quoted spans")

    keywords: list[KeywordSpan] = []
    for start, end in spans:
        for w in norm[start + 1 : end].split():
            keywords.append(KeywordSpan(w, len(keywords)))
    cleaned = "".join(c for c in norm if c not in "'\"")
    return cleaned, keywords


def width_bucket(word: str, atlas: GlyphAtlas | None = None) -> int:
    """Quantized pixel width of ``word`` at the atlas reference size."""
    atlas = atlas or default_atlas()
    px = atlas.text_width(word)
    return min(px // WIDTH_BUCKET_DIVISOR, NUM_WIDTH_BUCKETS - 1)


@dataclass
class TokenizedPrompt:
    """Fixed-length token ids with keyword flags and width buckets."""

    token_ids: np.ndarray
    keyword_flags: np.ndarray
    width_buckets: np.ndarray

    def __post_init__(self):
        self.token_ids = np.asarray(self.token_ids, dtype=np.int64)
        self.keyword_flags = np.asarray(self.keyword_flags, dtype=np.int64)
        self.width_buckets = np.asarray(self.width_buckets, dtype=np.int64)
        n = self.token_ids.shape[0]
        if self.keyword_flags.shape[0] != n or self.width_buckets.shape[0] != n:
            raise ValueError("token_ids, flags, and buckets must share length")
        pad = self.token_ids == PAD
        if self.keyword_flags[pad].any() or self.width_buckets[pad].any():
            raise ValueError("padding positions must have flag 0 and bucket 0")

    def __len__(self) -> int:
        return self.token_ids.shape[0]

    @property
    def num_keywords(self) -> int:
        return int(self.keyword_flags.sum())


_STRIP = string.punctuation


def _word_matches(word: str, keyword: str) -> bool:
    return word == keyword or word.strip(_STRIP) == keyword


def tokenize_and_mark(
    cleaned_text: str,
    keywords: list[KeywordSpan],
    tokenizer: BpeTokenizer | None = None,
    atlas: GlyphAtlas | None = None,
    k_max: int = 8,
) -> TokenizedPrompt:
    """Tokenize to the fixed context length, flagging each keyword's first subtoken.

    When a keyword splits into several subtokens only the first carries the
    flag and the width bucket.
    """
    tokenizer = tokenizer or default_tokenizer()
    atlas = atlas or default_atlas()
    if len(keywords) > k_max:
        raise TooManyKeywordsError(f"{len(keywords)} keywords exceed the {k_max} query slots")

    length = tokenizer.context_length
    ids: list[int] = [START]
    flags: list[int] = [0]
    buckets: list[int] = [0]
    next_kw = 0
    for word in cleaned_text.split():
        subtokens = tokenizer.encode_word(word)
        mark = next_kw < len(keywords) and _word_matches(word, keywords[next_kw].word)
        for j, tok in enumerate(subtokens):
            ids.append(tok)
            if mark and j == 0:
                flags.append(1)
                buckets.append(width_bucket(keywords[next_kw].word, atlas))
            else:
                flags.append(0)
                buckets.append(0)
        if mark:
            next_kw += 1
    if next_kw < len(keywords):
        raise DataError(f"keyword {keywords[next_kw].word!r} not found in cleaned text")

    ids, flags, buckets = ids[: length - 1], flags[: length - 1], buckets[: length - 1]
    ids.append(END)
    flags.append(0)
    buckets.append(0)
    pad_n = length - len(ids)
    ids += [PAD] * pad_n
    flags += [0] * pad_n
    buckets += [0] * pad_n
    return TokenizedPrompt(np.array(ids), np.array(flags), np.array(buckets))


def prepare_prompt(
    text: str,
    tokenizer: BpeTokenizer | None = None,
    atlas: GlyphAtlas | None = None,
    k_max: int = 8,
) -> tuple[TokenizedPrompt, list[KeywordSpan]]:
    """extract_keywords + tokenize_and_mark in one step."""
    cleaned, keywords = extract_keywords(text)
    return tokenize_and_mark(cleaned, keywords, tokenizer, atlas, k_max), keywords
