"""Byte-pair tokenizer over the bundled vocabulary.

Mirrors the interface of the usual contrastively-pretrained text encoders'
tokenizers (fixed context length, start/end/pad specials, per-word subword
splits) so a pretrained tokenizer can be swapped in behind the same methods.
Case is preserved: rendered text is case-sensitive.
"""

from __future__ import annotations

import json
from functools import lru_cache
from importlib import resources
from pathlib import Path

from .alphabet import DEFAULT_ALPHABET

PAD, START, END, UNK = 0, 1, 2, 3
_SPECIALS = ["<|pad|>", "<|start|>", "<|end|>", "<|unk|>"]
END_OF_WORD = "</w>"


class BpeTokenizer:
    """Greedy merge-rank BPE with end-of-word markers."""

    def __init__(self, merges: list[tuple[str, str]], context_length: int = 77):
        self.context_length = context_length
        self.merge_ranks = {tuple(m): i for i, m in enumerate(merges)}
        vocab = list(_SPECIALS)
        vocab += [c for c in DEFAULT_ALPHABET.chars]
        vocab += [c + END_OF_WORD for c in DEFAULT_ALPHABET.chars]
        vocab += [a + b for a, b in merges]
        self.token_to_id = {t: i for i, t in enumerate(vocab)}
        self.id_to_token = vocab

    @property
    def vocab_size(self) -> int:
        return len(self.id_to_token)

    def _bpe(self, word: str) -> list[str]:
        symbols = list(word[:-1]) + [word[-1] + END_OF_WORD]
        while len(symbols) > 1:
            pairs = [(symbols[i], symbols[i + 1]) for i in range(len(symbols) - 1)]
            ranked = [(self.merge_ranks[p], i) for i, p in enumerate(pairs) if p in self.merge_ranks]
            if not ranked:
                break
            _, i = min(ranked)
            symbols[i : i + 2] = [symbols[i] + symbols[i + 1]]
        return symbols

    def encode_word(self, word: str) -> list[int]:
        """Subtoken ids for one whitespace-free word. Unknown chars map to UNK."""
        if not word:
            return []
        if any(c not in DEFAULT_ALPHABET for c in word):
            return [UNK] * len(word)
        return [self.token_to_id[s] for s in self._bpe(word)]

    def encode_words(self, words: list[str]) -> list[list[int]]:
        return [self.encode_word(w) for w in words]

    def encode(self, text: str) -> list[int]:
        """Start + subtokens + end, padded/truncated to the context length."""
        ids = [START]
        for w in text.split():
            ids.extend(self.encode_word(w))
        ids = ids[: self.context_length - 1]
        ids.append(END)
        ids += [PAD] * (self.context_length - len(ids))
        return ids


def _asset_path(name: str) -> Path:
    return Path(resources.files("textforge").joinpath("assets", name))  # type: ignore[arg-type]


@lru_cache(maxsize=1)
def default_tokenizer(context_length: int = 77) -> BpeTokenizer:
    payload = json.loads(_asset_path("bpe_vocab.json").read_text(encoding="utf-8"))
    return BpeTokenizer([tuple(m) for m in payload["merges"]], context_length)
