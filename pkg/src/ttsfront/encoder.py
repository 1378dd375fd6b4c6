"""Shared trunk: TN-token stream, contextual-encoder stream and their fusion.

The TN stream embeds each token's characters, runs a 1-D convolution stack
over them, mean-pools to one vector per token and contextualizes the token
sequence with a Bi-LSTM followed by a Transformer layer. The contextual
stream is a frozen pretrained-style encoder; its first-layer embeddings are
fused into the TN stream by cross-attention (TN tokens are the queries), so
the fused sequence keeps exactly one row per TN token.
"""

from __future__ import annotations

import math
import re
import zlib
from collections import OrderedDict
from dataclasses import dataclass
from typing import Protocol, Sequence, runtime_checkable

import torch
from torch import nn
from torch.nn.utils.rnn import pack_padded_sequence, pad_packed_sequence

from .tokenizer import TokenSequence

CHAR_BUCKETS = 512
CHAR_PAD = 0
CHAR_OUT_OF_RANGE = CHAR_BUCKETS + 1
CHAR_VOCAB = CHAR_BUCKETS + 2


@dataclass
class TrunkConfig:
    char_emb_dim: int = 32
    conv_layers: int = 1
    conv_channels: int = 64
    conv_kernel: int = 5
    conv_dropout: float = 0.2
    lstm_hidden: int = 128
    xformer_hidden: int = 256
    xformer_ff: int = 1024
    attn_heads: int = 4
    xformer_dropout: float = 0.1
    lm_first_layer: int = 1
    lm_last_layer: int = 12
    seed: int = 0

    def __post_init__(self):
        if self.xformer_hidden % self.attn_heads:
            raise ValueError("xformer_hidden must be divisible by attn_heads")
        if 2 * self.lstm_hidden != self.xformer_hidden:
            raise ValueError("Bi-LSTM output (2 * lstm_hidden) must equal xformer_hidden")
        for name in ("conv_dropout", "xformer_dropout"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ValueError(f"{name} must be in [0, 1)")
        if self.conv_kernel % 2 == 0:
            raise ValueError("conv_kernel must be odd for same-padding")


def char_index(ch: str) -> int:
    cp = ord(ch)
    if cp > 0xFFFF:
        return CHAR_OUT_OF_RANGE
    return cp % CHAR_BUCKETS + 1


def sinusoidal_positions(length: int, dim: int, dtype=torch.float32) -> torch.Tensor:
    pos = torch.arange(length, dtype=torch.float64).unsqueeze(1)
    rate = torch.exp(torch.arange(0, dim, 2, dtype=torch.float64) * (-math.log(10000.0) / dim))
    pe = torch.zeros(length, dim, dtype=torch.float64)
    pe[:, 0::2] = torch.sin(pos * rate)
    pe[:, 1::2] = torch.cos(pos * rate[: dim // 2])
    return pe.to(dtype)


def masked_mean(x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Mean over dim 1 of ``x`` (B, L, D) counting only rows where ``mask`` is set."""
    w = mask.to(x.dtype).unsqueeze(-1)
    return (x * w).sum(1) / w.sum(1).clamp_min(1.0)


# -- TN token stream ----------------------------------------------------------


class CharConvEncoder(nn.Module):
    """Character embeddings -> conv stack (BN, ReLU, dropout) -> mean pool."""

    def __init__(self, cfg: TrunkConfig):
        super().__init__()
        self.embed = nn.Embedding(CHAR_VOCAB, cfg.char_emb_dim, padding_idx=CHAR_PAD)
        convs, norms = [], []
        in_dim = cfg.char_emb_dim
        for _ in range(cfg.conv_layers):
            convs.append(nn.Conv1d(in_dim, cfg.conv_channels, cfg.conv_kernel, padding=cfg.conv_kernel // 2))
            norms.append(nn.BatchNorm1d(cfg.conv_channels))
            in_dim = cfg.conv_channels
        self.convs = nn.ModuleList(convs)
        self.norms = nn.ModuleList(norms)
        self.dropout = nn.Dropout(cfg.conv_dropout)
        self.out_dim = in_dim

    def forward(self, chars: torch.Tensor) -> torch.Tensor:
        # chars: (T, L) character ids, 0 = padding
        mask = chars != CHAR_PAD
        x = self.embed(chars)
        for conv, norm in zip(self.convs, self.norms):
            h = conv((x * mask.unsqueeze(-1)).transpose(1, 2)).transpose(1, 2)
            # batch statistics over real characters only
            flat = h[mask]
            if self.training and flat.shape[0] < 2:
                flat = nn.functional.batch_norm(
                    flat, norm.running_mean, norm.running_var, norm.weight, norm.bias, False, 0.0, norm.eps
                )
            else:
                flat = norm(flat)
            h = torch.zeros_like(h).masked_scatter(mask.unsqueeze(-1), flat)
            x = self.dropout(torch.relu(h))
        return masked_mean(x, mask)


class SelfAttentionBlock(nn.Module):
    """Pre-norm Transformer encoder layer."""

    def __init__(self, dim: int, heads: int, ff: int, dropout: float):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = nn.MultiheadAttention(dim, heads, dropout=dropout, batch_first=True)
        self.norm2 = nn.LayerNorm(dim)
        self.ff = nn.Sequential(nn.Linear(dim, ff), nn.ReLU(), nn.Dropout(dropout), nn.Linear(ff, dim))
        self.dropout = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        h = self.norm1(x)
        a, _ = self.attn(h, h, h, key_padding_mask=~mask, need_weights=False)
        x = x + self.dropout(a)
        return x + self.dropout(self.ff(self.norm2(x)))


class TNStream(nn.Module):
    def __init__(self, cfg: TrunkConfig):
        super().__init__()
        self.cfg = cfg
        self.chars = CharConvEncoder(cfg)
        self.lstm = nn.LSTM(self.chars.out_dim, cfg.lstm_hidden, batch_first=True, bidirectional=True)
        self.xformer = SelfAttentionBlock(cfg.xformer_hidden, cfg.attn_heads, cfg.xformer_ff, cfg.xformer_dropout)

    def forward(self, chars: torch.Tensor, n_tokens: Sequence[int]) -> tuple[torch.Tensor, torch.Tensor]:
        """``chars`` holds every token of the batch, sentence by sentence."""
        pooled = self.chars(chars)
        lengths = torch.as_tensor(list(n_tokens), dtype=torch.long)
        B, n_max = len(lengths), int(lengths.max())
        mask = torch.arange(n_max).unsqueeze(0) < lengths.unsqueeze(1)
        x = pooled.new_zeros(B, n_max, pooled.shape[-1]).masked_scatter(mask.unsqueeze(-1), pooled)
        packed = pack_padded_sequence(x, lengths, batch_first=True, enforce_sorted=False)
        h, _ = self.lstm(packed)
        h, _ = pad_packed_sequence(h, batch_first=True, total_length=n_max)
        h = h + sinusoidal_positions(n_max, h.shape[-1], h.dtype)
        return self.xformer(h, mask), mask


# -- fusion -------------------------------------------------------------------


class CrossAttentionBlock(nn.Module):
    """Transformer-style block with TN tokens as queries and LM embeddings as keys/values."""

    def __init__(self, dim: int, kv_dim: int, heads: int, ff: int, dropout: float):
        super().__init__()
        self.kv_proj = nn.Linear(kv_dim, dim)
        self.norm_q = nn.LayerNorm(dim)
        self.norm_kv = nn.LayerNorm(dim)
        self.attn = nn.MultiheadAttention(dim, heads, dropout=dropout, batch_first=True)
        self.norm2 = nn.LayerNorm(dim)
        self.ff = nn.Sequential(nn.Linear(dim, ff), nn.ReLU(), nn.Dropout(dropout), nn.Linear(ff, dim))
        self.dropout = nn.Dropout(dropout)

    def attend(self, e_t, e_a, a_mask, need_weights=False):
        q = self.norm_q(e_t)
        kv = self.norm_kv(self.kv_proj(e_a))
        return self.attn(q, kv, kv, key_padding_mask=~a_mask, need_weights=need_weights, average_attn_weights=False)

    def forward(self, e_t: torch.Tensor, e_a: torch.Tensor, a_mask: torch.Tensor) -> torch.Tensor:
        e_t = e_t + sinusoidal_positions(e_t.shape[1], e_t.shape[-1], e_t.dtype)
        a, _ = self.attend(e_t, e_a, a_mask)
        x = e_t + self.dropout(a)
        return x + self.dropout(self.ff(self.norm2(x)))


def cross_attend(e_t: torch.Tensor, e_a: torch.Tensor, block: CrossAttentionBlock) -> torch.Tensor:
    """Fuse one sentence: ``e_t`` (n, D) with ``e_a`` (m, d_a) -> (n, D)."""
    if e_t.ndim != 2 or e_a.ndim != 2 or e_t.shape[0] == 0 or e_a.shape[0] == 0:
        raise ValueError("cross_attend needs non-empty (n, D) and (m, d_a) matrices")
    mask = torch.ones(1, e_a.shape[0], dtype=torch.bool)
    return block(e_t.unsqueeze(0), e_a.unsqueeze(0), mask)[0]


# -- contextual encoder ---------------------------------------------------------


@runtime_checkable
class ContextualEncoder(Protocol):
    num_layers: int
    dim: int

    def subword_tokenize(self, text: str) -> list[tuple[str, int, int]]: ...

    def layer_embeddings(self, text: str, layer: int) -> torch.Tensor: ...


@dataclass
class DeskLMConfig:
    num_layers: int = 12
    dim: int = 64
    heads: int = 4
    ff: int = 128
    vocab: int = 4096
    max_piece: int = 6
    seed: int = 1234
    cache_size: int = 50_000


_PIECE_RE = re.compile(r"\w+|[^\w\s]")


class DeskContextualEncoder(nn.Module):
    """Small randomly initialized, frozen Transformer encoder.

    Stands in for a downloaded pretrained LM: same two-tap interface, no
    weights to fetch. Subwords are word-character runs (chunked to
    ``max_piece`` characters) and single punctuation characters.
    """

    frozen = True

    def __init__(self, cfg: DeskLMConfig | None = None):
        super().__init__()
        self.cfg = cfg = cfg or DeskLMConfig()
        self.num_layers = cfg.num_layers
        self.dim = cfg.dim
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(cfg.seed)
            self.embed = nn.Embedding(cfg.vocab, cfg.dim)
            self.layers = nn.ModuleList(
                nn.TransformerEncoderLayer(cfg.dim, cfg.heads, cfg.ff, dropout=0.0, batch_first=True, norm_first=True)
                for _ in range(cfg.num_layers)
            )
        for p in self.parameters():
            p.requires_grad_(False)
        self._cache: OrderedDict = OrderedDict()
        super().train(False)

    def train(self, mode: bool = True):
        # always frozen in evaluation mode
        return super().train(False)

    def _apply(self, fn, *args, **kwargs):
        self._cache.clear()
        return super()._apply(fn, *args, **kwargs)

    def subword_tokenize(self, text: str) -> list[tuple[str, int, int]]:
        pieces = []
        step = self.cfg.max_piece
        for m in _PIECE_RE.finditer(text):
            for s in range(m.start(), m.end(), step):
                e = min(s + step, m.end())
                pieces.append((text[s:e], s, e))
        return pieces

    def _ids(self, text: str) -> torch.Tensor:
        return torch.tensor(
            [zlib.crc32(p.encode("utf-8")) % self.cfg.vocab for p, _, _ in self.subword_tokenize(text)],
            dtype=torch.long,
        )

    def _hidden(self, text: str) -> tuple[torch.Tensor, ...]:
        key = text
        if key in self._cache:
            self._cache.move_to_end(key)
            return self._cache[key]
        ids = self._ids(text)
        if ids.numel() == 0:
            raise ValueError("text has no subword tokens")
        with torch.no_grad():
            x = self.embed(ids).unsqueeze(0) + sinusoidal_positions(len(ids), self.dim, self.embed.weight.dtype)
            states = []
            for layer in self.layers:
                x = layer(x)
                states.append(x[0])
        out = tuple(states)
        self._cache[key] = out
        if len(self._cache) > self.cfg.cache_size:
            self._cache.popitem(last=False)
        return out

    def layer_embeddings(self, text: str, layer: int) -> torch.Tensor:
        if not 1 <= layer <= self.num_layers:
            raise ValueError(f"layer must be in [1, {self.num_layers}], got {layer}")
        return self._hidden(text)[layer - 1]

    def batch_layers(self, texts: Sequence[str], layers: Sequence[int]) -> tuple[dict[int, torch.Tensor], torch.Tensor]:
        """Padded ``(B, m_max, d)`` tensors per requested layer plus the validity mask."""
        per_text = [[self.layer_embeddings(t, l) for l in layers] for t in texts]
        lengths = [p[0].shape[0] for p in per_text]
        m_max = max(lengths)
        mask = torch.arange(m_max).unsqueeze(0) < torch.tensor(lengths).unsqueeze(1)
        out = {}
        for j, layer in enumerate(layers):
            buf = self.embed.weight.new_zeros(len(texts), m_max, self.dim)
            for i, p in enumerate(per_text):
                buf[i, : lengths[i]] = p[j]
            out[layer] = buf
        return out, mask


def encode_lm_stream(text: str, lm: ContextualEncoder, layer: int) -> torch.Tensor:
    if not 1 <= layer <= lm.num_layers:
        raise ValueError(f"layer must be in [1, {lm.num_layers}], got {layer}")
    with torch.no_grad():
        return lm.layer_embeddings(text, layer).detach()


# -- trunk ----------------------------------------------------------------------


def token_char_ids(seqs: Sequence[TokenSequence]) -> torch.Tensor:
    """All tokens of all sentences as a padded ``(T, L)`` char-id matrix."""
    toks = [t.text for s in seqs for t in s.tokens]
    L = max(len(t) for t in toks)
    out = torch.zeros(len(toks), L, dtype=torch.long)
    for i, t in enumerate(toks):
        out[i, : len(t)] = torch.tensor([char_index(c) for c in t])
    return out


class Trunk(nn.Module):
    def __init__(self, cfg: TrunkConfig, lm: DeskContextualEncoder | None, use_lm: bool = True):
        super().__init__()
        self.cfg = cfg
        self.tn_stream = TNStream(cfg)
        self.use_lm = use_lm and lm is not None
        self.lm = lm
        if self.use_lm:
            self.fusion = CrossAttentionBlock(
                cfg.xformer_hidden, lm.dim, cfg.attn_heads, cfg.xformer_ff, cfg.xformer_dropout
            )

    @property
    def out_dim(self) -> int:
        return self.cfg.xformer_hidden

    def lm_layers(self, seqs: Sequence[TokenSequence], layers: Sequence[int]):
        return self.lm.batch_layers([s.source for s in seqs], layers)

    def forward(self, seqs: Sequence[TokenSequence], lm_states=None) -> tuple[torch.Tensor, torch.Tensor]:
        """Fused embeddings ``(B, n_max, D)`` and the token validity mask."""
        if any(s.n == 0 for s in seqs):
            raise ValueError("cannot encode an empty token sequence")
        chars = token_char_ids(seqs)
        e_t, mask = self.tn_stream(chars, [s.n for s in seqs])
        if not self.use_lm:
            return e_t, mask
        if lm_states is None:
            lm_states = self.lm_layers(seqs, [self.cfg.lm_first_layer])
        states, a_mask = lm_states
        e_a = states[self.cfg.lm_first_layer].to(e_t.dtype)
        return self.fusion(e_t, e_a, a_mask), mask


def encode_tn_stream(seq: TokenSequence, stream: TNStream) -> torch.Tensor:
    if seq.n == 0:
        raise ValueError("cannot encode an empty token sequence")
    e_t, _ = stream(token_char_ids([seq]), [seq.n])
    return e_t[0]
