"""American English number verbalization.

Cardinals cover 0..999,999,999; anything larger is read digit by digit.
All functions return lists of lowercase words, never hyphenated
("forty two", not "forty-two").
"""

from __future__ import annotations

MAX_CARDINAL = 999_999_999

ONES = [
    "zero", "one", "two", "three", "four", "five", "six", "seven", "eight",
    "nine", "ten", "eleven", "twelve", "thirteen", "fourteen", "fifteen",
    "sixteen", "seventeen", "eighteen", "nineteen",
]
TENS = [
    "", "", "twenty", "thirty", "forty", "fifty", "sixty", "seventy",
    "eighty", "ninety",
]
_SCALES = [(1_000_000, "million"), (1_000, "thousand")]

_IRREGULAR_ORDINALS = {
    "one": "first",
    "two": "second",
    "three": "third",
    "five": "fifth",
    "eight": "eighth",
    "nine": "ninth",
    "twelve": "twelfth",
}

MONTHS = [
    "january", "february", "march", "april", "may", "june", "july",
    "august", "september", "october", "november", "december",
]


def _below_thousand(n: int) -> list[str]:
    words: list[str] = []
    hundreds, rest = divmod(n, 100)
    if hundreds:
        words += [ONES[hundreds], "hundred"]
    if rest >= 20:
        tens, ones = divmod(rest, 10)
        words.append(TENS[tens])
        if ones:
            words.append(ONES[ones])
    elif rest or not words:
        words.append(ONES[rest])
    return words


def cardinal(n: int) -> list[str]:
    if n < 0:
        return ["minus"] + cardinal(-n)
    if n > MAX_CARDINAL:
        return digits(str(n))
    if n < 1000:
        return _below_thousand(n)
    words: list[str] = []
    for scale, name in _SCALES:
        if n >= scale:
            head, n = divmod(n, scale)
            words += _below_thousand(head) + [name]
    if n:
        words += _below_thousand(n)
    return words


def _ordinalize(word: str) -> str:
    if word in _IRREGULAR_ORDINALS:
        return _IRREGULAR_ORDINALS[word]
    if word.endswith("y"):
        return word[:-1] + "ieth"
    return word + "th"


def ordinal(n: int) -> list[str]:
    if n < 0 or n > MAX_CARDINAL:
        raise ValueError(f"ordinal out of range: {n}")
    words = cardinal(n)
    return words[:-1] + [_ordinalize(words[-1])]


def ordinal_suffix(n: int) -> str:
    """Written suffix for ``n`` (1 -> "st", 12 -> "th", 22 -> "nd")."""
    if n % 100 in (11, 12, 13):
        return "th"
    return {1: "st", 2: "nd", 3: "rd"}.get(n % 10, "th")


def digits(s: str) -> list[str]:
    return [ONES[int(c)] for c in s]


def fraction(numerator: int, denominator: int) -> list[str]:
    if denominator < 2:
        raise ValueError("denominator must be at least 2")
    num = cardinal(numerator)
    if denominator == 2:
        return num + ["half" if numerator == 1 else "halves"]
    den = ordinal(denominator)
    if numerator != 1:
        den[-1] += "s"
    return num + den


def year(n: int) -> list[str]:
    """Conventional reading of a four digit year (1999, 2005, 2023)."""
    if not 1000 <= n <= 9999:
        return cardinal(n)
    head, tail = divmod(n, 100)
    if n % 1000 == 0 or (n % 1000 < 10 and head % 10 == 0):
        # 2000, 2005, 3001
        return cardinal(n)
    if tail == 0:
        return cardinal(head) + ["hundred"]
    if tail < 10:
        return cardinal(head) + ["oh", ONES[tail]]
    return cardinal(head) + cardinal(tail)


def decimal(integer: str, frac: str) -> list[str]:
    return cardinal(int(integer)) + ["point"] + digits(frac)
