import string

import pytest
from hypothesis import given
from hypothesis import strategies as st

from textforge.alphabet import DEFAULT_ALPHABET, NULL_CLASS, Alphabet
from textforge.errors import UnsupportedCharacterError

PRINTABLE = st.sampled_from(DEFAULT_ALPHABET.chars)


def test_alphabet_has_95_characters_plus_null():
    assert len(DEFAULT_ALPHABET) == 95
    assert DEFAULT_ALPHABET.num_classes == 96
    assert NULL_CLASS == 0


def test_fixed_ordering():
    chars = DEFAULT_ALPHABET.chars
    assert chars[:26] == string.ascii_uppercase
    assert chars[26:52] == string.ascii_lowercase
    assert chars[52:62] == string.digits
    assert chars[62:94] == string.punctuation
    assert chars[94] == " "


def test_class_indices_start_at_one():
    assert DEFAULT_ALPHABET.class_of("A") == 1
    assert DEFAULT_ALPHABET.class_of(" ") == 95


@given(PRINTABLE)
def test_char_class_round_trip(ch):
    cls = DEFAULT_ALPHABET.class_of(ch)
    assert 1 <= cls <= 95
    assert DEFAULT_ALPHABET.char_of(cls) == ch


@given(st.integers(min_value=1, max_value=95))
def test_class_char_round_trip(cls):
    assert DEFAULT_ALPHABET.class_of(DEFAULT_ALPHABET.char_of(cls)) == cls


@pytest.mark.parametrize("bad", ["é", "\t", "\n", "™", "字"])
def test_unsupported_characters_raise(bad):
    with pytest.raises(UnsupportedCharacterError):
        DEFAULT_ALPHABET.class_of(bad)
    with pytest.raises(UnsupportedCharacterError):
        DEFAULT_ALPHABET.validate_text(f"ok{bad}ok")


@pytest.mark.parametrize("cls", [0, 96, -1, 1000])
def test_out_of_range_classes_raise(cls):
    with pytest.raises(UnsupportedCharacterError):
        DEFAULT_ALPHABET.char_of(cls)


def test_duplicate_characters_rejected():
    with pytest.raises(ValueError):
        Alphabet(chars="AAB")


def test_save_load_round_trip(tmp_path):
    path = tmp_path / "alphabet.txt"
    DEFAULT_ALPHABET.save(path)
    loaded = Alphabet.load(path)
    assert loaded.chars == DEFAULT_ALPHABET.chars
