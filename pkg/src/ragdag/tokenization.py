"""Pluggable token counting.

Context budgets predate any specific tokenizer choice, so every component
that needs a token count takes a tokenizer object. The default estimates
ceil(utf8_bytes / 4), a standard rough equivalence for English text; a
whitespace word counter is provided for fixtures where exact counts matter.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Protocol


class Tokenizer(Protocol):
    def count(self, text: str) -> int:
        """Number of tokens in ``text``; non-negative."""
        ...


@dataclass(frozen=True)
class ByteEstimateTokenizer:
    """Approximate tokens as ceil(len(utf-8 bytes) / bytes_per_token)."""

    bytes_per_token: int = 4

    def count(self, text: str) -> int:
        if not text:
            return 0
        return math.ceil(len(text.encode("utf-8")) / self.bytes_per_token)


@dataclass(frozen=True)
class WordTokenizer:
    """One token per whitespace-separated word."""

    def count(self, text: str) -> int:
        return len(text.split())


DEFAULT_TOKENIZER = ByteEstimateTokenizer()
