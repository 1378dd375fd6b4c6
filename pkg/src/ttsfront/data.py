"""Dataset records, loaders/writers, balance validation and stratified splits.

File formats
------------
HD table (UTF-8, LF, tab separated, header line)::

    homograph  wordid  sentence  start  end

``start``/``end`` are offsets of the homograph occurrence in ``sentence``;
the ``wordid`` string is used directly as the pronunciation label.

TN and POS files hold one JSON object per line::

    {"schema": "ttsfront.tn/1", "text": ..., "normalization": ..., "rules": [[start, rule_id], ...]}
    {"schema": "ttsfront.pos/1", "words": [...], "tags": [...]}
"""

from __future__ import annotations

import json
import logging
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .decoder import plan_from_rules, render
from .heads import POS_INDEX, HomographLexicon
from .rules import RuleRegistry, default_registry
from .tokenizer import tokenize, word_count

logger = logging.getLogger(__name__)

TN_SCHEMA = "ttsfront.tn/1"
POS_SCHEMA = "ttsfront.pos/1"
HD_HEADER = ("homograph", "wordid", "sentence", "start", "end")


class DataError(ValueError):
    """Malformed or inconsistent dataset record."""

    def __init__(self, message: str, path=None, line: int | None = None):
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        elif line is not None:
            where = f"line {line}: "
        super().__init__(where + message)
        self.line = line


@dataclass(frozen=True)
class TNExample:
    text: str
    gold_normalization: str
    gold_rules: tuple[tuple[int, int], ...]


@dataclass(frozen=True)
class POSExample:
    words: tuple[str, ...]
    tags: tuple[str, ...]

    @property
    def text(self) -> str:
        return " ".join(self.words)


@dataclass(frozen=True)
class HDExample:
    homograph: str
    pronunciation_label: str
    sentence: str
    span: tuple[int, int]


# -- TN / POS ------------------------------------------------------------------


def check_tn(ex: TNExample, registry: RuleRegistry) -> None:
    """Gold rules must tile the tokens, be applicable, and render to the gold text."""
    seq = tokenize(ex.text)
    for _, rule_id in ex.gold_rules:
        if not 0 <= rule_id < len(registry):
            raise DataError(f"unknown rule id {rule_id}")
    starts = [s for s, _ in ex.gold_rules]
    if starts != sorted(set(starts)):
        raise DataError("gold applications overlap or are out of order")
    try:
        plan = plan_from_rules(seq, list(ex.gold_rules), registry)
    except ValueError as err:
        raise DataError(f"invalid gold rules: {err}") from None
    rendered = render(plan, seq, registry)
    if rendered != ex.gold_normalization:
        raise DataError(f"gold rules render {rendered!r}, expected {ex.gold_normalization!r}")


def tn_to_record(ex: TNExample) -> dict:
    return {
        "schema": TN_SCHEMA,
        "text": ex.text,
        "normalization": ex.gold_normalization,
        "rules": [list(r) for r in ex.gold_rules],
    }


def pos_to_record(ex: POSExample) -> dict:
    return {"schema": POS_SCHEMA, "words": list(ex.words), "tags": list(ex.tags)}


def _dump(rec: dict) -> str:
    return json.dumps(rec, ensure_ascii=False, separators=(", ", ": "))


def write_tn(examples: Iterable[TNExample], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for ex in examples:
            f.write(_dump(tn_to_record(ex)) + "\n")


def write_pos(examples: Iterable[POSExample], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for ex in examples:
            f.write(_dump(pos_to_record(ex)) + "\n")


def _records(path, schema):
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as err:
                raise DataError(f"invalid JSON: {err.msg}", path, lineno) from None
            if not isinstance(rec, dict) or rec.get("schema") != schema:
                raise DataError(f"expected schema {schema!r}", path, lineno)
            yield lineno, rec


def load_tn(path: str | Path, registry: RuleRegistry | None = None) -> list[TNExample]:
    registry = registry or default_registry()
    out = []
    for lineno, rec in _records(path, TN_SCHEMA):
        try:
            rules = tuple((int(s), int(r)) for s, r in rec["rules"])
            ex = TNExample(str(rec["text"]), str(rec["normalization"]), rules)
        except (KeyError, TypeError, ValueError) as err:
            raise DataError(f"bad TN record: {err}", path, lineno) from None
        try:
            check_tn(ex, registry)
        except DataError as err:
            raise DataError(str(err), path, lineno) from None
        out.append(ex)
    return out


def load_pos(path: str | Path) -> list[POSExample]:
    out = []
    for lineno, rec in _records(path, POS_SCHEMA):
        words, tags = rec.get("words"), rec.get("tags")
        if not isinstance(words, list) or not isinstance(tags, list):
            raise DataError("words and tags must be lists", path, lineno)
        if len(words) != len(tags):
            raise DataError(f"{len(words)} words but {len(tags)} tags", path, lineno)
        if not words:
            raise DataError("empty sentence", path, lineno)
        bad = [t for t in tags if t not in POS_INDEX]
        if bad:
            raise DataError(f"unknown POS tags {bad}", path, lineno)
        if any(not w or any(c.isspace() for c in w) for w in words):
            raise DataError("words must be non-empty and whitespace-free", path, lineno)
        ex = POSExample(tuple(words), tuple(tags))
        assert word_count(tokenize(ex.text)) == len(words)
        out.append(ex)
    return out


# -- HD ------------------------------------------------------------------------


def _byte_span_to_chars(sentence: str, start: int, end: int) -> tuple[int, int] | None:
    raw = sentence.encode("utf-8")
    if not 0 <= start < end <= len(raw):
        return None
    try:
        return len(raw[:start].decode("utf-8")), len(raw[:end].decode("utf-8"))
    except UnicodeDecodeError:
        return None


def _span_ok(sentence, homograph, span):
    s, e = span
    return 0 <= s < e <= len(sentence) and sentence[s:e].lower() == homograph


def read_hd_table(path: str | Path, lexicon: HomographLexicon | None = None) -> tuple[list[HDExample], str]:
    """Parse an HD table; returns the examples and the offset unit that validated.

    The unit is ``"chars"`` when every span checks out as character offsets,
    otherwise ``"bytes"`` if every span checks out as UTF-8 byte offsets.
    """
    rows = []
    with open(path, encoding="utf-8", newline="") as f:
        lines = f.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise DataError("missing header", path, 1)
    header = tuple(c.strip().lower() for c in lines[0].rstrip("\r").split("\t"))
    if header[:5] != HD_HEADER:
        raise DataError(f"expected header {HD_HEADER}, got {header}", path, 1)
    for lineno, line in enumerate(lines[1:], 2):
        line = line.rstrip("\r")
        if not line.strip():
            continue
        cols = line.split("\t")
        if len(cols) < 5:
            raise DataError(f"expected 5 tab-separated columns, got {len(cols)}", path, lineno)
        homograph, wordid, sentence, start, end = cols[:5]
        try:
            start_i, end_i = int(start), int(end)
        except ValueError:
            raise DataError(f"non-integer span {start!r}, {end!r}", path, lineno) from None
        if not homograph or not wordid:
            raise DataError("empty homograph or wordid", path, lineno)
        rows.append((lineno, homograph.lower(), wordid, sentence, start_i, end_i))

    as_chars = all(_span_ok(r[3], r[1], (r[4], r[5])) for r in rows)
    unit = "chars"
    if not as_chars:
        converted = [_byte_span_to_chars(r[3], r[4], r[5]) for r in rows]
        if all(c is not None and _span_ok(r[3], r[1], c) for r, c in zip(rows, converted)):
            unit = "bytes"
            rows = [r[:4] + c for r, c in zip(rows, converted)]
        else:
            for r in rows:
                if not _span_ok(r[3], r[1], (r[4], r[5])):
                    got = r[3][r[4]:r[5]]
                    raise DataError(f"span [{r[4]}, {r[5]}) is {got!r}, not {r[1]!r}", path, r[0])
    logger.info("%s: %d rows, offsets interpreted as %s", path, len(rows), unit)

    examples = []
    for lineno, homograph, wordid, sentence, s, e in rows:
        if lexicon is not None:
            if homograph not in lexicon:
                raise DataError(f"homograph {homograph!r} not in lexicon", path, lineno)
            if wordid not in lexicon[homograph]:
                raise DataError(f"{wordid!r} is not a pronunciation of {homograph!r}", path, lineno)
        examples.append(HDExample(homograph, wordid, sentence, (s, e)))
    return examples, unit


def load_hd(path: str | Path, lexicon: HomographLexicon | None = None) -> list[HDExample]:
    return read_hd_table(path, lexicon)[0]


def load_hd_dataset(path: str | Path, lexicon: HomographLexicon | None = None) -> list[HDExample]:
    """An HD table, or every ``*.tsv`` under a directory (e.g. train/eval splits) in sorted order."""
    path = Path(path)
    if path.is_dir():
        files = sorted(path.rglob("*.tsv"))
        if not files:
            raise DataError("no .tsv files found", path)
        return [ex for f in files for ex in load_hd(f, lexicon)]
    return load_hd(path, lexicon)


def write_hd(examples: Iterable[HDExample], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("\t".join(HD_HEADER) + "\n")
        for ex in examples:
            if "\t" in ex.sentence or "\n" in ex.sentence:
                raise DataError("sentence contains a tab or newline")
            f.write(f"{ex.homograph}\t{ex.pronunciation_label}\t{ex.sentence}\t{ex.span[0]}\t{ex.span[1]}\n")


@dataclass
class BalanceReport:
    counts: dict[tuple[str, str], int] = field(default_factory=dict)
    total: int = 0
    is_balanced: bool = True
    violations: list[str] = field(default_factory=list)

    @property
    def n_classes(self) -> int:
        return len(self.counts)

    @property
    def n_homographs(self) -> int:
        return len({h for h, _ in self.counts})

    def per_class(self) -> set[int]:
        return set(self.counts.values())

    def summary(self) -> str:
        lines = [
            f"sentences: {self.total}",
            f"homographs: {self.n_homographs}",
            f"pronunciation classes: {self.n_classes}",
            f"per-class counts: {sorted(self.per_class())}",
            f"balanced: {'yes' if self.is_balanced else 'no'}",
        ]
        lines += [f"violation: {v}" for v in self.violations]
        return "\n".join(lines)


def validate_balance(examples: Iterable[HDExample], lexicon: HomographLexicon | None = None) -> BalanceReport:
    """Check that every pronunciation of every homograph has the same sentence count.

    With a lexicon, pronunciations that never occur count as zero.
    """
    counts: Counter = Counter()
    for ex in examples:
        counts[ex.homograph, ex.pronunciation_label] += 1
    if lexicon is not None:
        for h in {h for h, _ in counts}:
            if h in lexicon:
                for label in lexicon[h]:
                    counts.setdefault((h, label), 0)
    by_hom: dict[str, dict[str, int]] = defaultdict(dict)
    for (h, label), c in sorted(counts.items()):
        by_hom[h][label] = c
    violations = []
    for h, labels in by_hom.items():
        if len(set(labels.values())) > 1:
            detail = ", ".join(f"{lab}={c}" for lab, c in labels.items())
            violations.append(f"{h}: {detail}")
    return BalanceReport(
        counts=dict(sorted(counts.items())),
        total=sum(counts.values()),
        is_balanced=not violations,
        violations=violations,
    )


def stratified_split(
    examples: Sequence[HDExample], fraction: float, seed: int = 0
) -> tuple[list[HDExample], list[HDExample]]:
    """Split each (homograph, pronunciation) class, ``fraction`` of it to train.

    Per class, ``round(fraction * count)`` examples (clipped to leave one on
    each side) go to train; original order is kept inside each split.
    """
    if not 0.0 < fraction < 1.0:
        raise ValueError("fraction must be in (0, 1)")
    classes: dict[tuple[str, str], list[int]] = defaultdict(list)
    for i, ex in enumerate(examples):
        classes[ex.homograph, ex.pronunciation_label].append(i)
    small = sorted(k for k, v in classes.items() if len(v) < 2)
    if small:
        raise ValueError(f"classes with fewer than 2 examples cannot be split: {small}")
    rng = np.random.default_rng(seed)
    train_idx = set()
    for key in sorted(classes):
        idx = classes[key]
        k = int(math.floor(fraction * len(idx) + 0.5))
        k = min(max(k, 1), len(idx) - 1)
        chosen = rng.permutation(len(idx))[:k]
        train_idx.update(idx[j] for j in chosen)
    train = [ex for i, ex in enumerate(examples) if i in train_idx]
    test = [ex for i, ex in enumerate(examples) if i not in train_idx]
    return train, test
