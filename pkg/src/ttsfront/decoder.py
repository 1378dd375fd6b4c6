"""Rule-logit masking, beam search over rule covers, and rendering.

A plan is a sequence of rule applications that tiles the token sequence.
Each application is scored by the log-probability of its rule in the row of
its *start* token; tail tokens of multi-token spans contribute nothing.
Because the score decomposes over positions, hypotheses are bucketed by the
next uncovered position and only the ``beam_width`` best are kept per bucket.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import log_softmax

from .rules import (
    PLAIN_ID,
    RuleApplication,
    RuleRegistry,
    applicable_spans,
    default_registry,
    verbalize,
)
from .tokenizer import TokenSequence

NEG_INF = -np.inf
BRUTE_FORCE_MAX_N = 12


@dataclass(frozen=True)
class NormalizationPlan:
    applications: tuple[RuleApplication, ...]
    score: float

    @property
    def rule_ids(self) -> list[int]:
        return [a.rule_id for a in self.applications]

    def is_cover_of(self, n: int) -> bool:
        pos = 0
        for app in self.applications:
            if app.start != pos or app.span < 1:
                return False
            pos += app.span
        return pos == n


def mask_logits(logits: np.ndarray, mask: np.ndarray) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if logits.shape != mask.shape:
        raise ValueError(f"shape mismatch: logits {logits.shape} vs mask {mask.shape}")
    if logits.ndim != 2:
        raise ValueError("logits must be an n x R matrix")
    empty = ~mask.any(axis=1)
    if empty.any():
        raise ValueError(f"mask rows with no applicable rule: {np.flatnonzero(empty).tolist()}")
    return np.where(mask, logits, NEG_INF)


def log_probs(masked: np.ndarray) -> np.ndarray:
    if masked.shape[0] == 0:
        return masked.astype(np.float64)
    return log_softmax(masked, axis=1)


def _key(score, rule_ids):
    # smaller is better
    return (-score, len(rule_ids), rule_ids)


def _check_shapes(masked, seq, registry):
    if masked.ndim != 2 or masked.shape != (seq.n, len(registry)):
        raise ValueError(
            f"logits shape {masked.shape} does not match ({seq.n}, {len(registry)})"
        )


def beam_search(
    masked: np.ndarray,
    seq: TokenSequence,
    registry: RuleRegistry | None = None,
    beam_width: int = 8,
    n_best: int = 1,
) -> NormalizationPlan | list[NormalizationPlan]:
    """Best full cover of ``seq`` under masked rule logits.

    Returns a single plan, or the ``n_best`` best plans when ``n_best > 1``.
    """
    if beam_width < 1:
        raise ValueError("beam_width must be positive")
    registry = registry or default_registry()
    masked = np.asarray(masked, dtype=np.float64)
    _check_shapes(masked, seq, registry)
    n = seq.n
    lp = log_probs(masked)
    spans = applicable_spans(seq, registry)

    # buckets[pos] holds (score, rule_ids, starts) hypotheses ending at pos
    buckets: list[list[tuple[float, tuple[int, ...], tuple[int, ...]]]] = [[] for _ in range(n + 1)]
    buckets[0].append((0.0, (), ()))
    for pos in range(n):
        hyps = sorted(buckets[pos], key=lambda h: _key(h[0], h[1]))[:beam_width]
        buckets[pos] = []
        for score, ids, starts in hyps:
            for rule_id, span in spans[pos].items():
                if not np.isfinite(lp[pos, rule_id]):
                    continue
                buckets[pos + span].append(
                    (score + float(lp[pos, rule_id]), ids + (rule_id,), starts + (pos,))
                )

    finals = sorted(buckets[n], key=lambda h: _key(h[0], h[1]))[:max(beam_width, n_best)]
    if not finals:
        raise ValueError("no valid cover: logits mask excludes every path")
    plans = [_build_plan(seq, registry, ids, starts, score) for score, ids, starts in finals[:n_best]]
    return plans[0] if n_best == 1 else plans


def _build_plan(seq, registry, rule_ids, starts, score) -> NormalizationPlan:
    apps = []
    for rule_id, start in zip(rule_ids, starts):
        end = starts[len(apps) + 1] if len(apps) + 1 < len(starts) else seq.n
        words = verbalize(registry[rule_id], seq, start, end - start)
        apps.append(RuleApplication(rule_id, start, end - start, tuple(words)))
    return NormalizationPlan(tuple(apps), score)


def brute_force_decode(
    masked: np.ndarray, seq: TokenSequence, registry: RuleRegistry | None = None
) -> NormalizationPlan:
    """Exact optimum by enumerating every cover. Test oracle; ``n <= 12``."""
    registry = registry or default_registry()
    masked = np.asarray(masked, dtype=np.float64)
    _check_shapes(masked, seq, registry)
    if seq.n > BRUTE_FORCE_MAX_N:
        raise ValueError(f"brute force limited to n <= {BRUTE_FORCE_MAX_N}, got {seq.n}")
    lp = log_probs(masked)
    spans = applicable_spans(seq, registry)

    def covers(pos):
        if pos == seq.n:
            yield ()
            return
        for rule_id, span in spans[pos].items():
            if np.isfinite(lp[pos, rule_id]):
                for rest in covers(pos + span):
                    yield ((rule_id, pos),) + rest

    best = None
    for cover in covers(0):
        ids = tuple(r for r, _ in cover)
        score = 0.0
        for r, p in cover:
            score += float(lp[p, r])
        if best is None or _key(score, ids) < _key(best[0], best[1]):
            best = (score, ids, tuple(p for _, p in cover))
    if best is None:
        raise ValueError("no valid cover")
    return _build_plan(seq, registry, best[1], best[2], best[0])


def render(
    plan: NormalizationPlan,
    seq: TokenSequence,
    registry: RuleRegistry | None = None,
    lowercase: bool = True,
) -> str:
    """Spoken form of a plan.

    PLAIN tokens that are adjacent within one source word are glued back
    together ("Mary ' s" -> "Mary's"); every other application contributes
    its words separated by spaces. With ``lowercase`` the whole output is
    case-folded; without it PLAIN keeps source casing.
    """
    pieces: list[str] = []
    prev_plain_word = None
    for app in plan.applications:
        if app.rule_id == PLAIN_ID:
            tok = seq.tokens[app.start]
            text = app.words[0] if app.words else tok.text
            if prev_plain_word == tok.word_index and pieces:
                pieces[-1] += text
            else:
                pieces.append(text)
            prev_plain_word = tok.word_index
            continue
        prev_plain_word = None
        pieces.extend(w.lower() for w in app.words)
    out = " ".join(pieces)
    return out.lower() if lowercase else out


def plan_from_rules(
    seq: TokenSequence, rules: list[tuple[int, int]], registry: RuleRegistry | None = None
) -> NormalizationPlan:
    """Plan for explicit ``(start, rule_id)`` pairs; validates the tiling."""
    registry = registry or default_registry()
    ordered = sorted(rules)
    starts = tuple(s for s, _ in ordered)
    bounds = list(starts) + [seq.n]
    apps = []
    for k, (start, rule_id) in enumerate(ordered):
        span = bounds[k + 1] - start
        if span < 1:
            raise ValueError(f"overlapping applications at token {start}")
        words = verbalize(registry[rule_id], seq, start, span)
        apps.append(RuleApplication(rule_id, start, span, tuple(words)))
    plan = NormalizationPlan(tuple(apps), 0.0)
    if not plan.is_cover_of(seq.n) or (seq.n and starts[0] != 0):
        raise ValueError("applications do not tile the token sequence")
    return plan


def enumerate_covers(seq: TokenSequence, registry: RuleRegistry | None = None):
    """All full covers as tuples of ``(start, rule_id)``; for small ``n`` only."""
    registry = registry or default_registry()
    spans = applicable_spans(seq, registry)

    def rec(pos):
        if pos == seq.n:
            yield ()
            return
        for rule_id, span in spans[pos].items():
            for rest in rec(pos + span):
                yield ((pos, rule_id),) + rest

    return list(rec(0))
