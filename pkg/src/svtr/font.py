"""Built-in 7x5 bitmap glyphs for the 36 alphanumerics.

Rows are strings over {0, 1}; letters use upright capital shapes but are
keyed by their lowercase character to match the case-insensitive charset.
"""

from __future__ import annotations

import numpy as np

GLYPH_H = 7
GLYPH_W = 5

_GLYPHS = {
    "0": ("01110", "10001", "10011", "10101", "11001", "10001", "01110"),
    "1": ("00100", "01100", "00100", "00100", "00100", "00100", "01110"),
    "2": ("01110", "10001", "00001", "00010", "00100", "01000", "11111"),
    "3": ("11111", "00010", "00100", "00010", "00001", "10001", "01110"),
    "4": ("00010", "00110", "01010", "10010", "11111", "00010", "00010"),
    "5": ("11111", "10000", "11110", "00001", "00001", "10001", "01110"),
    "6": ("00110", "01000", "10000", "11110", "10001", "10001", "01110"),
    "7": ("11111", "00001", "00010", "00100", "01000", "01000", "01000"),
    "8": ("01110", "10001", "10001", "01110", "10001", "10001", "01110"),
    "9": ("01110", "10001", "10001", "01111", "00001", "00010", "01100"),
    "a": ("01110", "10001", "10001", "11111", "10001", "10001", "10001"),
    "b": ("11110", "10001", "10001", "11110", "10001", "10001", "11110"),
    "c": ("01110", "10001", "10000", "10000", "10000", "10001", "01110"),
    "d": ("11100", "10010", "10001", "10001", "10001", "10010", "11100"),
    "e": ("11111", "10000", "10000", "11110", "10000", "10000", "11111"),
    "f": ("11111", "10000", "10000", "11110", "10000", "10000", "10000"),
    "g": ("01110", "10001", "10000", "10111", "10001", "10001", "01111"),
    "h": ("10001", "10001", "10001", "11111", "10001", "10001", "10001"),
    "i": ("01110", "00100", "00100", "00100", "00100", "00100", "01110"),
    "j": ("00111", "00010", "00010", "00010", "00010", "10010", "01100"),
    "k": ("10001", "10010", "10100", "11000", "10100", "10010", "10001"),
    "l": ("10000", "10000", "10000", "10000", "10000", "10000", "11111"),
    "m": ("10001", "11011", "10101", "10101", "10001", "10001", "10001"),
    "n": ("10001", "10001", "11001", "10101", "10011", "10001", "10001"),
    "o": ("01110", "10001", "10001", "10001", "10001", "10001", "01110"),
    "p": ("11110", "10001", "10001", "11110", "10000", "10000", "10000"),
    "q": ("01110", "10001", "10001", "10001", "10101", "10010", "01101"),
    "r": ("11110", "10001", "10001", "11110", "10100", "10010", "10001"),
    "s": ("01111", "10000", "10000", "01110", "00001", "00001", "11110"),
    "t": ("11111", "00100", "00100", "00100", "00100", "00100", "00100"),
    "u": ("10001", "10001", "10001", "10001", "10001", "10001", "01110"),
    "v": ("10001", "10001", "10001", "10001", "10001", "01010", "00100"),
    "w": ("10001", "10001", "10001", "10101", "10101", "10101", "01010"),
    "x": ("10001", "10001", "01010", "00100", "01010", "10001", "10001"),
    "y": ("10001", "10001", "01010", "00100", "00100", "00100", "00100"),
    "z": ("11111", "00001", "00010", "00100", "01000", "10000", "11111"),
}


def glyph(ch: str) -> np.ndarray:
    """Boolean [7, 5] ink mask for one symbol (case-insensitive)."""
    key = ch.lower()
    if key not in _GLYPHS:
        raise KeyError(f"no glyph for character {ch!r}")
    rows = _GLYPHS[key]
    return np.array([[c == "1" for c in row] for row in rows], dtype=bool)


def available_symbols() -> str:
    return "".join(_GLYPHS)
