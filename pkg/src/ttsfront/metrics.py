"""Evaluation metrics: TN line accuracy and WER, POS accuracy, HD micro/macro."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

REPORT_KEYS = ("tn.line_acc", "tn.wer", "pos.acc", "hd.micro", "hd.macro")


def normalize_ws(s: str) -> str:
    return " ".join(s.split())


def line_accuracy(predictions: Sequence[str], references: Sequence[str]) -> float:
    if len(predictions) != len(references):
        raise ValueError(f"length mismatch: {len(predictions)} vs {len(references)}")
    if not references:
        raise ValueError("empty corpus")
    hits = sum(normalize_ws(p) == normalize_ws(r) for p, r in zip(predictions, references))
    return hits / len(references)


def edit_distance(a: Sequence, b: Sequence) -> int:
    """Levenshtein distance with unit costs."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        cur = [i]
        for j, y in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y)))
        prev = cur
    return prev[-1]


def wer(prediction: str, reference: str) -> float:
    ref = normalize_ws(reference).split()
    if not ref:
        raise ValueError("reference has no words")
    return edit_distance(normalize_ws(prediction).split(), ref) / len(ref)


def corpus_wer(predictions: Sequence[str], references: Sequence[str]) -> float:
    if len(predictions) != len(references):
        raise ValueError(f"length mismatch: {len(predictions)} vs {len(references)}")
    dist = total = 0
    for p, r in zip(predictions, references):
        ref = normalize_ws(r).split()
        if not ref:
            raise ValueError("reference has no words")
        dist += edit_distance(normalize_ws(p).split(), ref)
        total += len(ref)
    if total == 0:
        raise ValueError("empty corpus")
    return dist / total


def pos_accuracy(pred_tags: Sequence, gold_tags: Sequence, ignore: Iterable = ()) -> float:
    """Fraction of matching tags. Gold tags listed in ``ignore`` are skipped."""
    if len(pred_tags) != len(gold_tags):
        raise ValueError(f"length mismatch: {len(pred_tags)} vs {len(gold_tags)}")
    ignore = set(ignore)
    pairs = [(p, g) for p, g in zip(pred_tags, gold_tags) if g not in ignore]
    if not pairs:
        raise ValueError("empty corpus")
    return sum(p == g for p, g in pairs) / len(pairs)


def hd_accuracy(examples: Iterable[tuple[str, str, str]]) -> tuple[float, float]:
    """Micro and macro accuracy over ``(homograph, gold, predicted)`` triples.

    Classes are ``(homograph, gold label)`` pairs; the macro average only
    counts classes that occur in ``examples``.
    """
    correct: dict[tuple[str, str], int] = defaultdict(int)
    total: dict[tuple[str, str], int] = defaultdict(int)
    for homograph, gold, pred in examples:
        total[homograph, gold] += 1
        correct[homograph, gold] += gold == pred
    if not total:
        raise ValueError("no examples")
    # exact rationals, so balanced classes give bitwise-identical floats
    micro = Fraction(sum(correct.values()), sum(total.values()))
    macro = sum(Fraction(correct[k], total[k]) for k in total) / len(total)
    return float(micro), float(macro)


@dataclass
class EvalReport:
    metrics: dict[str, float] = field(default_factory=dict)
    counts: dict[str, int] = field(default_factory=dict)

    def to_text(self) -> str:
        lines = [f"{k}={self.metrics[k]!r}" for k in REPORT_KEYS if k in self.metrics]
        lines += [f"{k}={v!r}" for k, v in sorted(self.metrics.items()) if k not in REPORT_KEYS]
        lines += [f"count.{k}={v}" for k, v in sorted(self.counts.items())]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "EvalReport":
        report = cls()
        for line in text.splitlines():
            if not line.strip():
                continue
            key, _, value = line.partition("=")
            if key.startswith("count."):
                report.counts[key[len("count."):]] = int(value)
            else:
                report.metrics[key] = float(value)
        return report
