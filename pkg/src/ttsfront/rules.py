"""Semiotic rules: applicability tests and verbalizers.

The rule inventory is data (``resources/ruleset.json``); each record names a
matcher kind and a verbalizer kind from the tables below, plus parameters.
Matchers only look at tokens inside ``[pos, pos + max_span)``.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from . import numwords
from .tokenizer import DIGIT, LETTER, Token, TokenSequence

SEMIOTIC_CLASSES = (
    "PLAIN", "PUNCT", "CARDINAL", "ORDINAL", "DECIMAL", "FRACTION", "DATE",
    "TIME", "CURRENCY", "MEASURE", "ABBREVIATION", "LETTERS", "TELEPHONE",
    "URL",
)

PLAIN_ID = 0


@dataclass(frozen=True)
class RuleSpec:
    rule_id: int
    name: str
    semiotic_class: str
    max_span: int
    matcher: str
    verbalizer: str
    matcher_params: dict = field(default_factory=dict, compare=False, hash=False)
    verbalizer_params: dict = field(default_factory=dict, compare=False, hash=False)


@dataclass(frozen=True)
class RuleApplication:
    rule_id: int
    start: int
    span: int
    words: tuple[str, ...] = ()

    @property
    def end(self) -> int:
        return self.start + self.span


# -- matchers ---------------------------------------------------------------
# Each takes the token window and the rule params and returns a span or None.


def _is_int(tok: Token, min_digits=1, max_digits=None) -> bool:
    if tok.uclass != DIGIT or not tok.text.isascii() or not tok.text.isdigit():
        return False
    return len(tok.text) >= min_digits and (max_digits is None or len(tok.text) <= max_digits)


def _no_leading_zero(s: str) -> bool:
    return s == "0" or not s.startswith("0")


def _text_is(tok: Token, text: str) -> bool:
    return tok.text == text


def _m_any(w, p):
    return 1


def _m_uclass(w, p):
    return 1 if w[0].uclass == p["uclass"] else None


def _m_lookup(w, p):
    return 1 if w[0].text in p["table"] else None


def _m_integer(w, p):
    tok = w[0]
    if not _is_int(tok, p.get("min_digits", 1), p.get("max_digits")):
        return None
    if p.get("no_leading_zero", False) and not _no_leading_zero(tok.text):
        return None
    value = int(tok.text)
    if value < p.get("min_value", 0) or value > p.get("max_value", numwords.MAX_CARDINAL):
        return None
    return 1


def _m_comma_number(w, p):
    if not (_is_int(w[0], 1, 3) and _no_leading_zero(w[0].text)):
        return None
    span = None
    i = 1
    while i + 1 < len(w) and _text_is(w[i], ",") and _is_int(w[i + 1], 3, 3):
        i += 2
        span = i
    return span


def _m_ordinal_suffix(w, p):
    if len(w) < 2 or not _is_int(w[0], 1, 9) or not _no_leading_zero(w[0].text):
        return None
    if w[1].uclass != LETTER or w[1].word_index != w[0].word_index:
        return None
    n = int(w[0].text)
    return 2 if n > 0 and w[1].text.lower() == numwords.ordinal_suffix(n) else None


def _m_decimal(w, p):
    if len(w) < 3 or not _is_int(w[0], 1, 9) or not _no_leading_zero(w[0].text):
        return None
    if not (_text_is(w[1], ".") and _is_int(w[2]) and _same_word(w[:3])):
        return None
    return 3


def _same_word(w: Sequence[Token]) -> bool:
    return all(t.word_index == w[0].word_index for t in w)


def _m_fraction(w, p):
    if len(w) < 3 or not _same_word(w[:3]):
        return None
    if not (_is_int(w[0], 1, 9) and _text_is(w[1], "/") and _is_int(w[2], 1, 4)):
        return None
    if not (_no_leading_zero(w[0].text) and _no_leading_zero(w[2].text)):
        return None
    return 3 if int(w[2].text) >= 2 else None


def _is_month(tok):
    return _is_int(tok, 1, 2) and 1 <= int(tok.text) <= 12


def _is_day(tok):
    return _is_int(tok, 1, 2) and 1 <= int(tok.text) <= 31


def _is_year(tok, p):
    return _is_int(tok, 4, 4) and p.get("min_year", 1000) <= int(tok.text) <= p.get("max_year", 2099)


def _m_date_mdy(w, p):
    if len(w) < 5 or not _same_word(w[:5]):
        return None
    sep = p.get("sep", "/")
    if _is_month(w[0]) and _text_is(w[1], sep) and _is_day(w[2]) and _text_is(w[3], sep) and _is_year(w[4], p):
        return 5
    return None


def _m_date_my(w, p):
    if len(w) < 3 or not _same_word(w[:3]):
        return None
    if _is_month(w[0]) and _text_is(w[1], "/") and _is_year(w[2], p):
        return 3
    return None


def _m_month_day(w, p):
    if len(w) < 2 or w[0].text.lower() not in numwords.MONTHS:
        return None
    if not w[0].text[0].isupper():
        return None
    if w[1].word_index != w[0].word_index + 1 or not _is_day(w[1]):
        return None
    return 2


def _m_year(w, p):
    return 1 if _is_year(w[0], p) else None


def _m_time(w, p):
    if len(w) < 3 or not _same_word(w[:3]):
        return None
    if not (_is_int(w[0], 1, 2) and _text_is(w[1], ":") and _is_int(w[2], 2, 2)):
        return None
    if int(w[0].text) > 23 or int(w[2].text) > 59:
        return None
    if len(w) >= 4 and w[3].text.lower() in ("am", "pm") and int(w[0].text) <= 12:
        return 4
    return 3


def _m_currency(w, p):
    if w[0].text not in p["symbols"] or len(w) < 2 or not _is_int(w[1], 1, 9):
        return None
    if w[1].word_index != w[0].word_index or not _no_leading_zero(w[1].text):
        return None
    if len(w) >= 4 and _text_is(w[2], ".") and _is_int(w[3], 2, 2) and _same_word(w[:4]):
        return 4
    return 2


def _m_measure(w, p):
    if len(w) < 2 or not _is_int(w[0], 1, 9) or not _no_leading_zero(w[0].text):
        return None
    if w[1].text not in p["units"] or w[1].word_index - w[0].word_index > 1:
        return None
    return 2


def _m_abbrev(w, p):
    if w[0].text != p["abbr"]:
        return None
    if len(w) >= 2 and _text_is(w[1], ".") and w[1].word_index == w[0].word_index:
        return 2
    return None if p.get("require_period", True) else 1


def _m_letters(w, p):
    t = w[0].text
    if w[0].uclass != LETTER or not t.isascii() or not t.isupper():
        return None
    return 1 if p.get("min_len", 2) <= len(t) <= p.get("max_len", 5) else None


def _m_telephone(w, p):
    if len(w) < 5 or not _same_word(w[:5]):
        return None
    ok = (
        _is_int(w[0], 3, 3) and _text_is(w[1], "-") and _is_int(w[2], 3, 3)
        and _text_is(w[3], "-") and _is_int(w[4], 4, 4)
    )
    return 5 if ok else None


def _m_url(w, p):
    tlds = p["tlds"]

    def host(i):
        return i + 2 < len(w) and w[i].uclass == LETTER and _text_is(w[i + 1], ".")

    if not _same_word(w):
        w = [t for t in w if t.word_index == w[0].word_index]
    if host(0) and w[2].text.lower() in tlds:
        return 3
    if w[0].text.lower() == "www" and host(0) and host(2) and w[4].text.lower() in tlds:
        return 5
    return None


MATCHERS: dict[str, Callable[[Sequence[Token], dict], int | None]] = {
    "any": _m_any,
    "uclass": _m_uclass,
    "lookup": _m_lookup,
    "integer": _m_integer,
    "comma_number": _m_comma_number,
    "ordinal_suffix": _m_ordinal_suffix,
    "decimal": _m_decimal,
    "fraction": _m_fraction,
    "date_mdy": _m_date_mdy,
    "date_my": _m_date_my,
    "month_day": _m_month_day,
    "year": _m_year,
    "time": _m_time,
    "currency": _m_currency,
    "measure": _m_measure,
    "abbrev": _m_abbrev,
    "letters": _m_letters,
    "telephone": _m_telephone,
    "url": _m_url,
}


# -- verbalizers ------------------------------------------------------------


def _v_plain(w, p):
    return [w[0].text]


def _v_silent(w, p):
    return []


def _v_lookup(w, p):
    return p["table"][w[0].text].split()


def _v_cardinal(w, p):
    return numwords.cardinal(int(w[0].text))


def _v_digits(w, p):
    return numwords.digits(w[0].text)


def _v_comma_number(w, p):
    return numwords.cardinal(int("".join(t.text for t in w[::2])))


def _v_ordinal(w, p):
    return numwords.ordinal(int(w[0].text))


def _v_decimal(w, p):
    return numwords.decimal(w[0].text, w[2].text)


def _v_fraction(w, p):
    return numwords.fraction(int(w[0].text), int(w[2].text))


def _v_date_mdy(w, p):
    month = numwords.MONTHS[int(w[0].text) - 1]
    return [month] + numwords.ordinal(int(w[2].text)) + numwords.year(int(w[4].text))


def _v_date_my(w, p):
    return [numwords.MONTHS[int(w[0].text) - 1]] + numwords.year(int(w[2].text))


def _v_month_day(w, p):
    return [w[0].text.lower()] + numwords.ordinal(int(w[1].text))


def _v_year(w, p):
    return numwords.year(int(w[0].text))


def _v_time(w, p):
    hour, minute = int(w[0].text), int(w[2].text)
    words = numwords.cardinal(hour)
    if minute == 0:
        if len(w) == 3:
            words.append("o'clock")
    elif minute < 10:
        words += ["oh", numwords.ONES[minute]]
    else:
        words += numwords.cardinal(minute)
    if len(w) == 4:
        words += list(w[3].text.lower())
    return words


def _v_currency(w, p):
    one, many, sub_one, sub_many = p["symbols"][w[0].text]
    major = int(w[1].text)
    words = numwords.cardinal(major) + [one if major == 1 else many]
    if len(w) == 4 and int(w[3].text):
        minor = int(w[3].text)
        words += ["and"] + numwords.cardinal(minor) + [sub_one if minor == 1 else sub_many]
    return words


def _v_measure(w, p):
    value = int(w[0].text)
    one, many = p["units"][w[1].text]
    return numwords.cardinal(value) + (one if value == 1 else many).split()


def _v_expand(w, p):
    return list(p["words"])


def _v_spell(w, p):
    return list(w[0].text.lower())


def _v_telephone(w, p):
    words: list[str] = []
    for t in w[::2]:
        words += numwords.digits(t.text)
    return words


def _v_url(w, p):
    words: list[str] = []
    for t in w:
        if t.text == ".":
            words.append("dot")
        elif t.text.lower() == "www":
            words += list("www")
        else:
            words.append(t.text.lower())
    return words


VERBALIZERS: dict[str, Callable[[Sequence[Token], dict], list[str]]] = {
    "plain": _v_plain,
    "silent": _v_silent,
    "lookup": _v_lookup,
    "cardinal": _v_cardinal,
    "digits": _v_digits,
    "comma_number": _v_comma_number,
    "ordinal": _v_ordinal,
    "decimal": _v_decimal,
    "fraction": _v_fraction,
    "date_mdy": _v_date_mdy,
    "date_my": _v_date_my,
    "month_day": _v_month_day,
    "year": _v_year,
    "time": _v_time,
    "currency": _v_currency,
    "measure": _v_measure,
    "expand": _v_expand,
    "spell": _v_spell,
    "telephone": _v_telephone,
    "url": _v_url,
}


# -- registry ---------------------------------------------------------------


class RuleRegistry:
    """Immutable, id-ordered collection of rules loaded from a manifest."""

    def __init__(self, rules: Sequence[RuleSpec], version: str = "", digest: str = ""):
        rules = tuple(rules)
        if [r.rule_id for r in rules] != list(range(len(rules))):
            raise ValueError("rule ids must be dense and ordered 0..R-1")
        plain = rules[PLAIN_ID] if rules else None
        if plain is None or plain.matcher != "any" or plain.max_span != 1:
            raise ValueError("rule 0 must be the PLAIN fallback with max_span 1")
        for r in rules:
            if r.semiotic_class not in SEMIOTIC_CLASSES:
                raise ValueError(f"rule {r.name}: unknown class {r.semiotic_class}")
            if r.matcher not in MATCHERS:
                raise ValueError(f"rule {r.name}: unknown matcher {r.matcher}")
            if r.verbalizer not in VERBALIZERS:
                raise ValueError(f"rule {r.name}: unknown verbalizer {r.verbalizer}")
            if r.max_span < 1:
                raise ValueError(f"rule {r.name}: max_span must be positive")
        names = [r.name for r in rules]
        if len(set(names)) != len(names):
            raise ValueError("duplicate rule names")
        self._rules = rules
        self._by_name = {r.name: r for r in rules}
        self.version = version
        self.digest = digest

    @classmethod
    def from_manifest(cls, path: str | Path | None = None) -> "RuleRegistry":
        if path is None:
            raw = resources.files("ttsfront").joinpath("resources/ruleset.json").read_bytes()
        else:
            raw = Path(path).read_bytes()
        data = json.loads(raw)
        rules = [
            RuleSpec(
                rule_id=rec["id"],
                name=rec["name"],
                semiotic_class=rec["class"],
                max_span=rec["max_span"],
                matcher=rec["matcher"]["kind"],
                verbalizer=rec["verbalizer"]["kind"],
                matcher_params={k: v for k, v in rec["matcher"].items() if k != "kind"},
                verbalizer_params={k: v for k, v in rec["verbalizer"].items() if k != "kind"},
            )
            for rec in data["rules"]
        ]
        return cls(rules, data.get("version", ""), hashlib.sha256(raw).hexdigest())

    def __len__(self) -> int:
        return len(self._rules)

    def __iter__(self):
        return iter(self._rules)

    def __getitem__(self, rule_id: int) -> RuleSpec:
        return self._rules[rule_id]

    def by_name(self, name: str) -> RuleSpec:
        return self._by_name[name]

    def id_of(self, name: str) -> int:
        return self._by_name[name].rule_id

    @property
    def names(self) -> list[str]:
        return [r.name for r in self._rules]


_DEFAULT: RuleRegistry | None = None


def default_registry() -> RuleRegistry:
    global _DEFAULT
    if _DEFAULT is None:
        _DEFAULT = RuleRegistry.from_manifest()
    return _DEFAULT


def can_parse(rule: RuleSpec, seq: TokenSequence, pos: int) -> int | None:
    if not 0 <= pos < seq.n:
        raise IndexError(f"position {pos} outside sequence of length {seq.n}")
    window = seq.tokens[pos:pos + rule.max_span]
    span = MATCHERS[rule.matcher](window, rule.matcher_params)
    if span is None:
        return None
    assert 1 <= span <= len(window), (rule.name, span)
    return span


def verbalize(rule: RuleSpec, seq: TokenSequence, pos: int, span: int) -> list[str]:
    expected = can_parse(rule, seq, pos)
    if expected is None or expected != span:
        raise ValueError(
            f"rule {rule.name} cannot verbalize span {span} at position {pos} "
            f"(applicable span: {expected})"
        )
    return VERBALIZERS[rule.verbalizer](seq.tokens[pos:pos + span], rule.verbalizer_params)


def applicability_mask(seq: TokenSequence, registry: RuleRegistry | None = None) -> np.ndarray:
    """Boolean ``n x R`` matrix; entry ``(i, r)`` is set when rule ``r`` parses at ``i``."""
    registry = registry or default_registry()
    mask = np.zeros((seq.n, len(registry)), dtype=bool)
    for i in range(seq.n):
        for rule in registry:
            mask[i, rule.rule_id] = can_parse(rule, seq, i) is not None
    return mask


def applicable_spans(seq: TokenSequence, registry: RuleRegistry | None = None) -> list[dict[int, int]]:
    """Per position, ``{rule_id: span}`` for every applicable rule."""
    registry = registry or default_registry()
    out = []
    for i in range(seq.n):
        row = {}
        for rule in registry:
            span = can_parse(rule, seq, i)
            if span is not None:
                row[rule.rule_id] = span
        out.append(row)
    return out


def apply_rule(registry: RuleRegistry, seq: TokenSequence, rule_id: int, pos: int) -> RuleApplication:
    rule = registry[rule_id]
    span = can_parse(rule, seq, pos)
    if span is None:
        raise ValueError(f"rule {rule.name} is not applicable at position {pos}")
    return RuleApplication(rule_id, pos, span, tuple(verbalize(rule, seq, pos, span)))


def manifest_records(registry: RuleRegistry) -> list[dict[str, Any]]:
    return [
        {
            "id": r.rule_id,
            "name": r.name,
            "class": r.semiotic_class,
            "max_span": r.max_span,
            "matcher": {"kind": r.matcher, **r.matcher_params},
            "verbalizer": {"kind": r.verbalizer, **r.verbalizer_params},
        }
        for r in registry
    ]
