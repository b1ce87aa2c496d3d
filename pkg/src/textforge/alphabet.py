"""The 95-character alphabet and its class-index mapping.

Class 0 is reserved for the null / non-character label, classes 1..95 map to
characters in a fixed order: uppercase letters, lowercase letters, digits,
punctuation, space.
"""

from __future__ import annotations

import string
from dataclasses import dataclass, field
from pathlib import Path

from .errors import UnsupportedCharacterError

NULL_CLASS = 0

# Fixed ordering: 26 upper + 26 lower + 10 digits + 32 punctuation + space.
_CHARS = (
    string.ascii_uppercase
    + string.ascii_lowercase
    + string.digits
    + string.punctuation
    + " "
)
assert len(_CHARS) == 95


@dataclass(frozen=True)
class Alphabet:
    """Bijective char <-> class-index map over the 95 printable characters."""

    chars: str = _CHARS
    _index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        if len(set(self.chars)) != len(self.chars):
            raise ValueError("alphabet characters must be unique")
        object.__setattr__(
            self, "_index", {c: i + 1 for i, c in enumerate(self.chars)}
        )

    def __len__(self) -> int:
        return len(self.chars)

    @property
    def num_classes(self) -> int:
        """Character classes plus the null class."""
        return len(self.chars) + 1

    def __contains__(self, ch: str) -> bool:
        return ch in self._index

    def class_of(self, ch: str) -> int:
        try:
            return self._index[ch]
        except KeyError:
            raise UnsupportedCharacterError(f"character {ch!r} not in alphabet") from None

    def char_of(self, cls: int) -> str:
        if not 1 <= cls <= len(self.chars):
            raise UnsupportedCharacterError(f"class {cls} has no character")
        return self.chars[cls - 1]

    def validate_text(self, text: str) -> None:
        for ch in text:
            if ch not in self._index:
                raise UnsupportedCharacterError(
                    f"character {ch!r} in {text!r} not in alphabet"
                )

    def save(self, path: str | Path) -> None:
        """One character per line; line number == class index - 1 (0-based)."""
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for ch in self.chars:
                fh.write(ch + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "Alphabet":
        with open(path, "r", encoding="utf-8", newline="\n") as fh:
            chars = "".join(line.rstrip("\n") for line in fh)
        return cls(chars=chars)


DEFAULT_ALPHABET = Alphabet()
