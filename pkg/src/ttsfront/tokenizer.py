"""Deterministic TN tokenizer.

Text is split on whitespace into words, then each word is split again
wherever the major unicode category of consecutive characters changes::

    >>> [t.text for t in tokenize("1/2023").tokens]
    ['1', '/', '2023']

Offsets are counted in unicode scalar values (python ``str`` indices).
"""

from __future__ import annotations

import unicodedata
from dataclasses import dataclass, field

LETTER = "LETTER"
DIGIT = "DIGIT"
PUNCT = "PUNCT"
SYMBOL = "SYMBOL"
OTHER = "OTHER"

UCLASSES = (LETTER, DIGIT, PUNCT, SYMBOL, OTHER)

_MAJOR = {"L": LETTER, "N": DIGIT, "P": PUNCT, "S": SYMBOL}


def uclass_of(ch: str) -> str:
    """Major unicode category label of a single non-whitespace character."""
    return _MAJOR.get(unicodedata.category(ch)[0], OTHER)


@dataclass(frozen=True)
class Token:
    text: str
    start: int
    end: int
    word_index: int
    uclass: str

    @property
    def span(self) -> tuple[int, int]:
        return (self.start, self.end)


@dataclass(frozen=True)
class TokenSequence:
    source: str
    tokens: tuple[Token, ...] = field(default_factory=tuple)

    @property
    def n(self) -> int:
        return len(self.tokens)

    def __len__(self) -> int:
        return len(self.tokens)

    def __getitem__(self, i):
        return self.tokens[i]

    def __iter__(self):
        return iter(self.tokens)

    @property
    def texts(self) -> list[str]:
        return [t.text for t in self.tokens]

    def word_groups(self) -> list[list[int]]:
        """Token indices grouped by word, in word order."""
        groups: list[list[int]] = []
        for i, tok in enumerate(self.tokens):
            if tok.word_index == len(groups):
                groups.append([])
            groups[tok.word_index].append(i)
        return groups

    def words(self) -> list[str]:
        return ["".join(self.tokens[i].text for i in g) for g in self.word_groups()]


def tokenize(text: str) -> TokenSequence:
    tokens: list[Token] = []
    word = -1
    start = None
    cls = None
    in_space = True

    for i, ch in enumerate(text):
        if ch.isspace():
            if start is not None:
                tokens.append(Token(text[start:i], start, i, word, cls))
                start = None
            in_space = True
            continue
        c = uclass_of(ch)
        if in_space:
            word += 1
            in_space = False
            start, cls = i, c
        elif c != cls:
            tokens.append(Token(text[start:i], start, i, word, cls))
            start, cls = i, c
    if start is not None:
        tokens.append(Token(text[start:], start, len(text), word, cls))
    return TokenSequence(text, tuple(tokens))


def word_count(seq: TokenSequence) -> int:
    if not seq.tokens:
        return 0
    return seq.tokens[-1].word_index + 1
