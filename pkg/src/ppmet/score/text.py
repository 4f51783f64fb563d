"""Text normalization and character edit distance."""
from __future__ import annotations

import unicodedata
from dataclasses import dataclass

from .._kernels import edit_ops


@dataclass(frozen=True)
class TextNormPolicy:
    strip_whitespace: bool = True
    strip_punctuation: bool = True
    unicode_form: bool = True


def normalize_text(s: str, norm: TextNormPolicy = TextNormPolicy()) -> str:
    if norm.unicode_form:
        s = unicodedata.normalize("NFC", s)
    out = []
    for ch in s:
        cat = unicodedata.category(ch)
        if norm.strip_whitespace and (ch.isspace() or cat == "Zs"):
            continue
        if norm.strip_punctuation and cat.startswith("P"):
            continue
        out.append(ch)
    return "".join(out)


def edit_distance(ref: str, hyp: str) -> tuple[int, int, int]:
    """``(substitutions, insertions, deletions)`` of a minimum-cost alignment.

    Among minimum-cost alignments the one with the fewest substitutions, then
    the fewest insertions, is reported.
    """
    return edit_ops(ref, hyp)
