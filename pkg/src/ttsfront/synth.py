"""Template-based desk fixtures with programmatically known labels.

TN sentences are assembled from parts that carry their own gold rule names,
so the gold rule sequence never has to be inferred from the text.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from pathlib import Path

from . import numwords
from .data import (
    HDExample,
    POSExample,
    TNExample,
    check_tn,
    write_hd,
    write_pos,
    write_tn,
)
from .decoder import plan_from_rules, render
from .heads import HomographLexicon, write_lexicon
from .rules import RuleRegistry, can_parse, default_registry
from .tokenizer import tokenize


@dataclass
class SynthSpec:
    tn: int = 50
    pos: int = 50
    hd_homographs: int = 4
    hd_per_label: int = 10
    anchors: bool = True


# -- TN ------------------------------------------------------------------------

# A part is (surface text, rule names for its tokens, glued to previous part).


def _plain(word):
    return (word, ["PLAIN"] * tokenize(word).n, False)


def _rule(text, *rules):
    return (text, list(rules), False)


def _punct(p="."):
    return (p, ["PUNCT_SILENT"], True)


def _words(text):
    return [_plain(w) for w in text.split()]


SAINTS = ["Mary", "John", "Paul", "Anne", "Luke", "Jude", "Peter", "Agnes"]
STREETS = ["Main", "Oak", "Elm", "Pine", "Maple", "Cedar", "Park", "Lake"]
SURNAMES = ["Smith", "Jones", "Brown", "Patel", "Garcia", "Kim", "Lee", "Wong"]
THINGS = ["apples", "books", "tickets", "chairs", "lamps", "pens", "shirts"]
FOODS = ["flour", "sugar", "milk", "rice", "butter", "oil"]
SITES = ["example", "weather", "recipes", "library", "travel"]
ACRONYMS = ["FBI", "NASA", "BBC", "CIA", "NBA", "IBM"]
UNITS = ["kg", "km", "lbs", "ft", "mi", "cm"]
MONTH_NAMES = [m.capitalize() for m in numwords.MONTHS]


def _tn_templates(r: random.Random):
    def num(lo=2, hi=999):
        return str(r.randint(lo, hi))

    def year():
        return str(r.randint(1950, 2030))

    def mday():
        return str(r.randint(1, 12)), str(r.randint(1, 28))

    def ordinal():
        n = r.randint(1, 99)
        return f"{n}{numwords.ordinal_suffix(n)}"

    templates = [
        lambda: _words("I paid") + [_rule(f"${num(2, 99)}", "CURRENCY_DOLLAR_PREFIX")]
        + _words("for") + [_rule(num(2, 20), "CARDINAL_1TOK"), _plain(r.choice(THINGS)), _punct()],
        lambda: _words("The total was") + [_rule(f"${num(1, 99)}.{r.randint(10, 99)}", "CURRENCY_DOLLAR_PREFIX"), _punct()],
        lambda: _words("The meeting is on") + [_rule("/".join(mday()) + "/" + year(), "DATE_SLASH_MDY"), _punct()],
        lambda: _words("Sales grew in") + [_rule(f"{r.randint(1, 12)}/{year()}", "DATE_MONTH_YEAR"), _punct()],
        lambda: _words("Add") + [_rule(f"{r.randint(1, 9)}/{r.choice([2, 3, 4, 8])}", "FRACTION_3TOK")]
        + _words("cup of") + [_plain(r.choice(FOODS)), _punct()],
        lambda: _words("Cut the board to") + [_rule(f"{r.randint(1, 15)}/{r.choice([4, 8, 16])}", "FRACTION_3TOK")]
        + _words("inches") + [_punct()],
        lambda: [_rule("St.", "ST_AS_SAINT"), _plain(r.choice(SAINTS) + "'s")] + _words("Church is on")
        + [_plain(r.choice(STREETS)), _rule("St.", "ST_AS_STREET")],
        lambda: _words("She lives at") + [_rule(num(10, 999), "CARDINAL_1TOK"), _plain(r.choice(STREETS)), _rule("St.", "ST_AS_STREET")],
        # the am/pm word is a rule-less part; TIME_COLON's span already covers it
        lambda: [_rule("Dr.", "DR_AS_DOCTOR"), _plain(r.choice(SURNAMES))] + _words("will see you at")
        + [_rule(f"{r.randint(1, 12)}:{r.randint(10, 59)}", "TIME_COLON")]
        + [(r.choice(["am", "pm"]), [], False), _punct()],
        lambda: _words("Turn left onto") + [_plain(r.choice(STREETS)), _rule("Dr.", "DR_AS_DRIVE")]
        + _words("after") + [_rule(num(2, 9), "CARDINAL_1TOK")] + _words("miles") + [_punct()],
        lambda: _words("He finished") + [_rule(ordinal(), "ORDINAL_SUFFIX")] + _words("in the race") + [_punct()],
        lambda: _words("Call") + [_rule(f"{num(200, 999)}-{num(100, 999)}-{r.randint(1000, 9999)}", "TELEPHONE_DIGITS")]
        + _words("today") + [_punct()],
        lambda: _words("Visit") + [_rule(f"{r.choice(SITES)}.com", "URL_SPELL")] + _words("for details") + [_punct()],
        lambda: _words("The") + [_rule(r.choice(ACRONYMS), "LETTERS_SPELL")] + _words("rate was")
        + [_rule(f"{r.randint(1, 9)}.{r.randint(1, 9)}", "DECIMAL_3TOK"), _plain("percent"), _punct()],
        lambda: _words("The bag weighs") + [_rule(f"{num(2, 99)} {r.choice(UNITS)}", "MEASURE_UNIT_SUFFIX"), _punct()],
        lambda: _words("About") + [_rule(f"{r.randint(1, 99)},{r.randint(100, 999)}", "CARDINAL_COMMA")]
        + _words("people came") + [_punct()],
        lambda: _words("It was built in") + [_rule(year(), "DATE_YEAR"), _punct()],
        lambda: [_rule("Mr.", "MR_AS_MISTER"), _plain(r.choice(SURNAMES)), _rule("&", "SYMBOL_WORD"),
                 _plain(r.choice(SURNAMES))] + _words("met on")
        + [_rule(f"{r.choice(MONTH_NAMES)} {r.randint(1, 28)}", "DATE_MONTH_DAY"), _punct()],
        lambda: _words("Your code is") + [_rule(f"0{r.randint(100, 999)}", "DIGIT_SEQUENCE"), _punct()],
        lambda: _words("Prices rose") + [_rule(f"{num(2, 60)}%", "MEASURE_UNIT_SUFFIX")] + _words("this year") + [_punct()],
    ]
    return templates

TN_ANCHORS = [
    [_rule("St.", "ST_AS_SAINT"), _plain("Mary's"), _rule("St.", "ST_AS_STREET")],
    [_rule("7/8", "FRACTION_3TOK"), _plain("inches")],
]


def build_tn(parts, registry: RuleRegistry | None = None) -> TNExample:
    """Text and gold rules for a list of parts; validated like a loaded record."""
    registry = registry or default_registry()
    text = ""
    for surface, _, glued in parts:
        text += surface if glued or not text else " " + surface
    seq = tokenize(text)
    pos = 0
    gold = []
    for _, names, _ in parts:
        for name in names:
            rule = registry.by_name(name)
            span = can_parse(rule, seq, pos)
            if span is None:
                raise ValueError(f"{name} not applicable at token {pos} of {text!r}")
            gold.append((pos, rule.rule_id))
            pos += span
    if pos != seq.n:
        raise ValueError(f"parts cover {pos} of {seq.n} tokens in {text!r}")
    plan = plan_from_rules(seq, gold, registry)
    ex = TNExample(text, render(plan, seq, registry), tuple(gold))
    check_tn(ex, registry)
    return ex


def synth_tn(n: int, seed: int, anchors: bool = True, registry: RuleRegistry | None = None) -> list[TNExample]:
    r = random.Random(f"tn-{seed}")
    templates = _tn_templates(r)
    out: list[TNExample] = []
    seen = set()
    if anchors:
        for parts in TN_ANCHORS[:n]:
            ex = build_tn(parts, registry)
            out.append(ex)
            seen.add(ex.text)
    k = 0
    attempts = 0
    while len(out) < n:
        attempts += 1
        if attempts > 100 * n + 1000:
            raise RuntimeError("could not generate enough distinct TN sentences")
        ex = build_tn(templates[k % len(templates)](), registry)
        k += 1
        if ex.text not in seen:
            seen.add(ex.text)
            out.append(ex)
    return out


# -- POS -----------------------------------------------------------------------

POS_WORDS = {
    "article": ["the", "a"],
    "adjective": ["big", "small", "red", "happy", "old", "quick", "quiet"],
    "noun": ["dog", "cat", "house", "car", "book", "teacher", "garden", "box"],
    "verb": ["sees", "likes", "finds", "wants", "opens", "paints"],
    "intransitive": ["sleeps", "waits", "laughs", "sings"],
    "phrasal": ["picked", "turned", "gave", "put"],
    "auxiliary": ["will", "can", "should", "must"],
    "base_verb": ["see", "like", "find", "open", "paint"],
    "adverb": ["quickly", "often", "slowly", "rarely"],
    "pronoun": ["he", "she", "they", "we"],
    "preposition": ["in", "on", "under", "near", "with"],
    "conjunction": ["and", "but", "or"],
    "interjection": ["oh", "wow", "hey", "well"],
    "name": ["John", "Mary", "Alice", "Boston", "Omar", "Paris"],
    "participle": ["broken", "painted", "opened", "cleaned"],
    "particle": ["up", "off", "down", "out"],
    "spelling": ["A", "B", "C", "D", "E", "X"],
    "punctuation": [".", "!", "?"],
}

# (slot, tag) sequences; slot picks the word list, tag is the label.
POS_PATTERNS = [
    ["article", "adjective", "noun", ("intransitive", "verb"), "preposition", "article", "noun", "punctuation"],
    ["name", "auxiliary", ("base_verb", "verb"), "article", "noun", "punctuation"],
    ["pronoun", ("intransitive", "verb"), "adverb", "punctuation"],
    ["interjection", (",", "punctuation"), "pronoun", ("has", "auxiliary"), "participle", "article", "noun", "punctuation"],
    ["pronoun", ("phrasal", "verb"), "particle", "article", "noun", "punctuation"],
    ["name", "conjunction", "name", ("verb", "verb"), "article", "adjective", "noun", "punctuation"],
    ["pronoun", ("spelled", "verb"), "spelling", "spelling", "spelling", "punctuation"],
    ["adverb", "pronoun", ("base_verb", "verb"), "name", "punctuation"],
]


def synth_pos(n: int, seed: int) -> list[POSExample]:
    r = random.Random(f"pos-{seed}")
    out, seen = [], set()
    k = 0
    while len(out) < n:
        pattern = POS_PATTERNS[k % len(POS_PATTERNS)]
        k += 1
        words, tags = [], []
        for slot in pattern:
            src, tag = slot if isinstance(slot, tuple) else (slot, slot)
            words.append(r.choice(POS_WORDS[src]) if src in POS_WORDS else src)
            tags.append(tag)
        words[0] = words[0][0].upper() + words[0][1:]
        ex = POSExample(tuple(words), tuple(tags))
        if ex.words not in seen:
            seen.add(ex.words)
            out.append(ex)
        if k > 100 * n + 1000:
            raise RuntimeError("could not generate enough distinct POS sentences")
    return out


# -- HD ------------------------------------------------------------------------

SUBJECTS = ["we", "they", "the students", "my parents", "the kids", "our team", "you", "the neighbors"]

# homograph -> label -> templates; {H} marks the homograph, {S} a subject.
HD_TEMPLATES = {
    "read": {
        "read_past": [
            "Yesterday {S} {H} the whole report.",
            "Last night {S} {H} two chapters.",
            "{S} already {H} that letter last week.",
            "Years ago {S} {H} every book in the library.",
            "{S} had {H} the news before breakfast.",
        ],
        "read_present": [
            "Tomorrow {S} will {H} the whole report.",
            "{S} want to {H} two chapters tonight.",
            "Every morning {S} {H} the newspaper.",
            "{S} can {H} music very well.",
            "Please ask {S} to {H} the instructions aloud.",
        ],
    },
    "lead": {
        "lead_metal": [
            "The old pipes in the house contain {H}.",
            "{S} tested the water for {H} and copper.",
            "The fishing weights were made of {H}.",
            "Paint with {H} was banned long ago.",
            "{S} found traces of {H} in the soil.",
        ],
        "lead_guide": [
            "{S} will {H} the group up the mountain.",
            "The captain asked {S} to {H} the parade.",
            "These clues could {H} the detectives to the truth.",
            "{S} want to {H} the new project.",
            "Good managers {H} by example, and {S} agree.",
        ],
    },
    "bass": {
        "bass_fish": [
            "{S} caught a large {H} in the lake.",
            "The river is full of striped {H} this summer.",
            "{S} grilled the {H} with lemon and salt.",
            "A {H} jumped out of the water near the boat.",
            "{S} went fishing for {H} at dawn.",
        ],
        "bass_music": [
            "{S} turned up the {H} on the speakers.",
            "He plays {H} guitar in a jazz band, and {S} love it.",
            "The {H} line in this song is amazing.",
            "{S} heard the deep {H} through the wall.",
            "She sings {H} in the choir with {S}.",
        ],
    },
    "tear": {
        "tear_cry": [
            "A single {H} rolled down her cheek.",
            "{S} wiped a {H} from the child's face.",
            "The sad movie brought a {H} to every eye.",
            "{S} shed a {H} at the wedding.",
            "Not one {H} fell during the goodbye.",
        ],
        "tear_rip": [
            "Be careful not to {H} the paper.",
            "{S} watched the dog {H} the pillow apart.",
            "{S} will {H} down the old fence.",
            "Do not {H} the tickets before the show.",
            "The wind could {H} the tent, so {S} tied it down.",
        ],
    },
    "wind": {
        "wind_air": [
            "The cold {H} blew all night.",
            "{S} felt the {H} on the hill.",
            "A strong {H} knocked over the sign.",
            "The {H} carried the kite high.",
            "{S} heard the {H} in the trees.",
        ],
        "wind_turn": [
            "{S} need to {H} the old clock.",
            "Please {H} the rope around the post.",
            "{S} will {H} the yarn into a ball.",
            "Roads {H} through the hills, and {S} drive slowly.",
            "Remember to {H} your watch, {S} said.",
        ],
    },
    "live": {
        "live_adj": [
            "{S} watched a {H} concert downtown.",
            "The station shows {H} news every hour.",
            "Careful, that is a {H} wire.",
            "{S} saw {H} music at the festival.",
            "The game was broadcast {H} on radio.",
        ],
        "live_verb": [
            "{S} {H} near the river.",
            "Many birds {H} in these woods.",
            "{S} want to {H} in a big city.",
            "Where do {S} {H} now?",
            "Cats can {H} for twenty years.",
        ],
    },
}


def desk_lexicon(n_homographs: int | None = None) -> HomographLexicon:
    keys = list(HD_TEMPLATES)[:n_homographs]
    return HomographLexicon((k, list(HD_TEMPLATES[k])) for k in keys)


def _fill(template: str, homograph: str, subject: str) -> tuple[str, tuple[int, int]]:
    if template.startswith("{S}"):
        subject = subject[0].upper() + subject[1:]
    before, _, after = template.partition("{H}")
    before = before.replace("{S}", subject)
    after = after.replace("{S}", subject)
    h = homograph[0].upper() + homograph[1:] if not before else homograph
    sentence = before + h + after
    return sentence, (len(before), len(before) + len(homograph))


def synth_hd(n_homographs: int, per_label: int, seed: int) -> list[HDExample]:
    r = random.Random(f"hd-{seed}")
    out = []
    for homograph in list(HD_TEMPLATES)[:n_homographs]:
        for label, templates in HD_TEMPLATES[homograph].items():
            combos = [(t, s) for t in templates for s in SUBJECTS]
            if "{S}" not in "".join(templates):
                combos = [(t, SUBJECTS[0]) for t in templates]
            r.shuffle(combos)
            seen = set()
            for t, s in combos:
                sentence, span = _fill(t, homograph, s)
                if sentence in seen:
                    continue
                seen.add(sentence)
                out.append(HDExample(homograph, label, sentence, span))
                if len(seen) == per_label:
                    break
            if len(seen) < per_label:
                raise ValueError(f"templates for {label} yield only {len(seen)} distinct sentences")
    return out


def synth_corpus(spec: SynthSpec | None = None, seed: int = 0, out_dir: str | Path | None = None):
    """Generate TN, POS and HD fixtures; optionally write them under ``out_dir``.

    Returns ``(tn, pos, hd, lexicon)``.
    """
    spec = spec or SynthSpec()
    tn = synth_tn(spec.tn, seed, spec.anchors)
    pos = synth_pos(spec.pos, seed)
    hd = synth_hd(spec.hd_homographs, spec.hd_per_label, seed)
    lexicon = desk_lexicon(spec.hd_homographs)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_tn(tn, out / "tn.jsonl")
        write_pos(pos, out / "pos.jsonl")
        write_hd(hd, out / "hd.tsv")
        write_lexicon(lexicon, out / "lexicon.tsv")
    return tn, pos, hd, lexicon
