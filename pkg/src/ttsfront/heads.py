"""Task heads over the shared embedding sequence, plus POS/HD label inventories."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import torch
from torch import nn

from .tokenizer import TokenSequence

POS_TAGS = (
    "adjective", "adverb", "article", "auxiliary", "conjunction",
    "interjection", "name", "noun", "participle", "particle",
    "preposition", "pronoun", "punctuation", "spelling", "verb",
)
POS_INDEX = {t: i for i, t in enumerate(POS_TAGS)}


@dataclass
class HeadConfig:
    ff_dim: int = 256

    def __post_init__(self):
        if self.ff_dim < 1:
            raise ValueError("ff_dim must be positive")


class HomographLexicon:
    """Ordered map ``homograph -> pronunciation labels``.

    Label order defines the logit order of that homograph's head, and entry
    order defines parameter names in checkpoints.
    """

    def __init__(self, entries: Mapping[str, Sequence[str]] | Iterable[tuple[str, Sequence[str]]]):
        items = entries.items() if isinstance(entries, Mapping) else entries
        self._entries: dict[str, tuple[str, ...]] = {}
        for key, labels in items:
            if key != key.lower() or not key or any(c.isspace() for c in key):
                raise ValueError(f"homograph key must be a lowercased word: {key!r}")
            labels = tuple(labels)
            if len(labels) < 2 or len(set(labels)) != len(labels):
                raise ValueError(f"{key!r} needs at least two distinct pronunciation labels")
            if key in self._entries:
                raise ValueError(f"duplicate homograph {key!r}")
            self._entries[key] = labels

    def __contains__(self, key) -> bool:
        return key in self._entries

    def __getitem__(self, key: str) -> tuple[str, ...]:
        return self._entries[key]

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self):
        return iter(self._entries)

    def __eq__(self, other) -> bool:
        return isinstance(other, HomographLexicon) and list(self.items()) == list(other.items())

    def items(self):
        return self._entries.items()

    def keys(self) -> list[str]:
        return list(self._entries)

    def label_index(self, key: str, label: str) -> int:
        try:
            return self._entries[key].index(label)
        except KeyError:
            raise KeyError(f"unknown homograph {key!r}") from None
        except ValueError:
            raise ValueError(f"{label!r} is not a pronunciation of {key!r}") from None

    @property
    def n_labels(self) -> int:
        return sum(len(v) for v in self._entries.values())

    def to_text(self) -> str:
        return "".join(f"{k}\t{','.join(v)}\n" for k, v in self._entries.items())

    @classmethod
    def from_text(cls, text: str) -> "HomographLexicon":
        entries = []
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip() or line.startswith("#"):
                continue
            key, sep, labels = line.partition("\t")
            if not sep:
                raise ValueError(f"lexicon line {lineno}: expected key<TAB>labels")
            entries.append((key, labels.split(",")))
        return cls(entries)

    @classmethod
    def from_examples(cls, examples) -> "HomographLexicon":
        """Lexicon with each homograph's labels in sorted order."""
        labels: dict[str, set] = {}
        for ex in examples:
            labels.setdefault(ex.homograph, set()).add(ex.pronunciation_label)
        return cls((k, sorted(v)) for k, v in sorted(labels.items()))


def load_lexicon(path: str | Path) -> HomographLexicon:
    return HomographLexicon.from_text(Path(path).read_text(encoding="utf-8"))


def write_lexicon(lexicon: HomographLexicon, path: str | Path) -> None:
    Path(path).write_text(lexicon.to_text(), encoding="utf-8", newline="\n")


def feedforward(in_dim: int, ff_dim: int) -> nn.Sequential:
    return nn.Sequential(nn.Linear(in_dim, ff_dim), nn.ReLU())


def word_average_matrix(seqs: Sequence[TokenSequence], n_max: int, dtype=torch.float32) -> tuple[torch.Tensor, torch.Tensor]:
    """``(B, W_max, n_max)`` averaging weights and the ``(B, W_max)`` word mask."""
    groups = [s.word_groups() for s in seqs]
    w_max = max(len(g) for g in groups)
    avg = torch.zeros(len(seqs), w_max, n_max, dtype=dtype)
    mask = torch.zeros(len(seqs), w_max, dtype=torch.bool)
    for b, g in enumerate(groups):
        for w, idx in enumerate(g):
            avg[b, w, idx] = 1.0 / len(idx)
            mask[b, w] = True
    return avg, mask


def check_alignment(word_index: Sequence[int], n: int) -> None:
    """Word alignment must assign each of the ``n`` tokens to words 0, 1, ... in order."""
    if len(word_index) != n:
        raise ValueError(f"alignment covers {len(word_index)} tokens, expected {n}")
    prev = -1
    for w in word_index:
        if w not in (prev, prev + 1) or (prev == -1 and w != 0):
            raise ValueError("word alignment does not partition the tokens into consecutive words")
        prev = w


class TNHead(nn.Module):
    def __init__(self, dim: int, n_rules: int, cfg: HeadConfig):
        super().__init__()
        self.ff = feedforward(dim, cfg.ff_dim)
        self.out = nn.Linear(cfg.ff_dim, n_rules)

    def forward(self, e: torch.Tensor) -> torch.Tensor:
        return self.out(self.ff(e))


class POSHead(nn.Module):
    def __init__(self, dim: int, cfg: HeadConfig, n_tags: int = len(POS_TAGS)):
        super().__init__()
        self.ff = feedforward(dim, cfg.ff_dim)
        self.out = nn.Linear(cfg.ff_dim, n_tags)

    def forward(self, e: torch.Tensor, avg: torch.Tensor) -> torch.Tensor:
        """``e`` (B, n, D) and word averaging weights ``avg`` (B, W, n) -> (B, W, tags)."""
        return self.out(self.ff(torch.bmm(avg, e)))


class HDHead(nn.Module):
    """Shared feed-forward plus one linear classifier per homograph.

    The final-layer LM embeddings at the homograph's subwords are averaged,
    projected to the trunk width and added after the feed-forward.
    """

    def __init__(self, dim: int, lm_dim: int | None, lexicon: HomographLexicon, cfg: HeadConfig, residual: bool = True):
        super().__init__()
        self.lexicon = lexicon
        self.ff = feedforward(dim, cfg.ff_dim)
        self.residual = residual and lm_dim is not None
        if self.residual:
            self.lm_proj = nn.Linear(lm_dim, cfg.ff_dim)
        self.heads = nn.ModuleDict(
            {self.head_name(i): nn.Linear(cfg.ff_dim, len(labels)) for i, (_, labels) in enumerate(lexicon.items())}
        )
        self._index = {k: i for i, k in enumerate(lexicon.keys())}

    @staticmethod
    def head_name(i: int) -> str:
        return f"h{i:04d}"

    def head_for(self, homograph: str) -> nn.Linear:
        if homograph not in self._index:
            raise KeyError(f"unknown homograph {homograph!r}")
        return self.heads[self.head_name(self._index[homograph])]

    def hidden(self, e_avg: torch.Tensor, lm_avg: torch.Tensor | None) -> torch.Tensor:
        h = self.ff(e_avg)
        if self.residual:
            if lm_avg is None:
                raise ValueError("residual HD head needs final-layer LM embeddings")
            h = h + self.lm_proj(lm_avg)
        return h

    def forward(self, e_avg: torch.Tensor, lm_avg: torch.Tensor | None, homographs: Sequence[str]) -> list[torch.Tensor]:
        """Per-example logits; lengths follow each homograph's label count."""
        h = self.hidden(e_avg, lm_avg)
        out: list[torch.Tensor | None] = [None] * len(homographs)
        by_key: dict[str, list[int]] = {}
        for i, k in enumerate(homographs):
            by_key.setdefault(k, []).append(i)
        for k, idx in by_key.items():
            logits = self.head_for(k)(h[idx])
            for j, i in enumerate(idx):
                out[i] = logits[j]
        return out


def index_average(x: torch.Tensor, indices: Sequence[Sequence[int]]) -> torch.Tensor:
    """Mean of ``x[b, indices[b]]`` per batch row -> ``(B, D)``."""
    w = x.new_zeros(x.shape[0], x.shape[1])
    for b, idx in enumerate(indices):
        if len(idx) == 0:
            raise ValueError("empty index set")
        w[b, list(idx)] = 1.0 / len(idx)
    return torch.bmm(w.unsqueeze(1), x).squeeze(1)


def tn_head(e: torch.Tensor, head: TNHead) -> torch.Tensor:
    return head(e)


def pos_head(e: torch.Tensor, seq: TokenSequence, head: POSHead) -> torch.Tensor:
    """Word-level POS logits ``(W, tags)`` for one sentence with embeddings ``e`` (n, D)."""
    check_alignment([t.word_index for t in seq.tokens], e.shape[0])
    avg, _ = word_average_matrix([seq], e.shape[0], e.dtype)
    return head(e.unsqueeze(0), avg)[0]


def hd_head(
    e: torch.Tensor,
    token_indices: Sequence[int],
    lm_final: torch.Tensor | None,
    lm_indices: Sequence[int],
    homograph: str,
    head: HDHead,
) -> torch.Tensor:
    """Pronunciation logits for one homograph occurrence."""
    if homograph not in head.lexicon:
        raise KeyError(f"unknown homograph {homograph!r}")
    e_avg = index_average(e.unsqueeze(0), [token_indices])
    lm_avg = None
    if head.residual:
        lm_avg = index_average(lm_final.unsqueeze(0), [lm_indices])
    return head(e_avg, lm_avg, [homograph])[0]


def locate_homograph(seq: TokenSequence, lm, text: str, char_span: tuple[int, int]) -> tuple[list[int], list[int]]:
    """TN-token and subword indices overlapping ``char_span``."""
    start, end = char_span
    if not 0 <= start < end <= len(text):
        raise ValueError(f"invalid homograph span {char_span} for text of length {len(text)}")
    tn = [i for i, t in enumerate(seq.tokens) if t.start < end and start < t.end]
    sub = [i for i, (_, s, e) in enumerate(lm.subword_tokenize(text)) if s < end and start < e]
    if not tn or not sub:
        raise ValueError(f"span {char_span} overlaps no {'TN token' if not tn else 'subword'}")
    return tn, sub
