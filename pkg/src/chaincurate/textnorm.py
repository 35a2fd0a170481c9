"""Shared text normalization used by decontamination and chain scoring."""

from __future__ import annotations


def normalize_text(text: str) -> list[str]:
    """Lowercase, replace every non-alphanumeric character with a space, split.

    Alphanumeric is Unicode-aware (str.isalnum), so CJK text survives
    normalization instead of collapsing to nothing.
    """
    return "".join(ch if ch.isalnum() else " " for ch in text.lower()).split()


def normalize_phrase(phrase: str) -> tuple[str, ...]:
    """Normalize a lexicon phrase to its token sequence ("re-check" -> (re, check))."""
    return tuple(normalize_text(phrase))
