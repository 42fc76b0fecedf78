"""Tokenization and name normalization used by scoring, hashing and dedup."""

from __future__ import annotations

import re
import unicodedata

_WORD = re.compile(r"[a-z0-9]+")
_PUNCT = re.compile(r"[^\w\s]", re.UNICODE)
_SPACE = re.compile(r"\s+")


def tokenize(text: str) -> list[str]:
    """Lowercase word tokens."""
    return _WORD.findall(text.lower())


def normalize_name(name: str) -> str:
    """Lowercase, punctuation-stripped, whitespace-collapsed form of an entity name."""
    name = unicodedata.normalize("NFKC", name).lower()
    name = _PUNCT.sub(" ", name).replace("_", " ")
    return _SPACE.sub(" ", name).strip()


def slug(name: str) -> str:
    return normalize_name(name).replace(" ", "_")
