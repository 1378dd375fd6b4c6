import json

import pytest

from ttsfront.data import (
    DataError,
    HDExample,
    POSExample,
    TNExample,
    load_hd,
    load_hd_dataset,
    load_pos,
    load_tn,
    read_hd_table,
    stratified_split,
    validate_balance,
    write_hd,
    write_pos,
    write_tn,
)
from ttsfront.synth import SynthSpec, synth_corpus, synth_hd, synth_pos, synth_tn


def test_synth_sizes_and_validity(tmp_path):
    tn, pos, hd, lex = synth_corpus(SynthSpec(), seed=0, out_dir=tmp_path)
    assert (len(tn), len(pos), len(hd), len(lex)) == (50, 50, 80, 4)
    assert load_tn(tmp_path / "tn.jsonl") == tn
    assert load_pos(tmp_path / "pos.jsonl") == pos
    assert load_hd(tmp_path / "hd.tsv", lex) == hd
    texts = {ex.text for ex in tn}
    assert "St. Mary's St." in texts and "7/8 inches" in texts


def test_seeds_differ():
    assert [e.text for e in synth_tn(20, 1)] != [e.text for e in synth_tn(20, 2)]
    assert [e.words for e in synth_pos(20, 1)] != [e.words for e in synth_pos(20, 2)]
    assert [e.sentence for e in synth_hd(2, 5, 1)] != [e.sentence for e in synth_hd(2, 5, 2)]


def test_roundtrips_are_bit_exact(tmp_path):
    tn, pos, hd, _ = synth_corpus(SynthSpec(tn=20, pos=20, hd_homographs=2, hd_per_label=3), seed=4)
    for write, load, data, name in [(write_tn, load_tn, tn, "a.jsonl"), (write_pos, load_pos, pos, "b.jsonl"),
                                    (write_hd, load_hd, hd, "c.tsv")]:
        p, q = tmp_path / name, tmp_path / ("re_" + name)
        write(data, p)
        write(load(p), q)
        assert p.read_bytes() == q.read_bytes()
        assert b"\r" not in p.read_bytes()


def test_tn_validation(tmp_path):
    p = tmp_path / "tn.jsonl"
    good = {"schema": "ttsfront.tn/1", "text": "7/8 inches", "normalization": "seven eighths inches",
            "rules": [[0, 7], [3, 0]]}
    p.write_text(json.dumps(good) + "\n")
    assert load_tn(p)[0] == TNExample("7/8 inches", "seven eighths inches", ((0, 7), (3, 0)))
    cases = [
        dict(good, rules=[[0, 7], [2, 0], [3, 0]]),      # overlap
        dict(good, rules=[[0, 0], [1, 0], [3, 0]]),      # gap
        dict(good, rules=[[0, 3], [1, 0], [2, 0], [3, 0]]),  # inapplicable
        dict(good, normalization="five eighth inches"),  # wrong reference
        dict(good, schema="ttsfront.tn/9"),
        {"schema": "ttsfront.tn/1", "text": "x"},
    ]
    for rec in cases:
        p.write_text(json.dumps(good) + "\n" + json.dumps(rec) + "\n")
        with pytest.raises(DataError, match=":2:"):
            load_tn(p)


def test_pos_validation(tmp_path):
    p = tmp_path / "pos.jsonl"
    p.write_text(json.dumps({"schema": "ttsfront.pos/1", "words": ["a", "b", "c"], "tags": ["noun", "verb"]}) + "\n")
    with pytest.raises(DataError):
        load_pos(p)
    p.write_text(json.dumps({"schema": "ttsfront.pos/1", "words": ["a"], "tags": ["nounish"]}) + "\n")
    with pytest.raises(DataError):
        load_pos(p)
    assert POSExample(("a", "b"), ("noun", "verb")).text == "a b"


def test_hd_offsets_bytes_or_chars(tmp_path):
    p = tmp_path / "hd.tsv"
    header = "homograph\twordid\tsentence\tstart\tend\n"
    p.write_text(header + "read\tread_past\tCafé: I read it\t8\t12\n", encoding="utf-8")
    ex, unit = read_hd_table(p)
    assert unit == "chars" and ex[0].span == (8, 12)
    p.write_text(header + "read\tread_past\tCafé: I read it\t9\t13\n", encoding="utf-8")
    ex, unit = read_hd_table(p)
    assert unit == "bytes" and ex[0].span == (8, 12)
    p.write_text(header + "read\tread_past\tI read it\t0\t3\n", encoding="utf-8")
    with pytest.raises(DataError, match=":2:"):
        read_hd_table(p)
    p.write_text("h\tw\n", encoding="utf-8")
    with pytest.raises(DataError):
        read_hd_table(p)


def test_hd_lexicon_membership(tmp_path):
    _, _, hd, lex = synth_corpus(SynthSpec(tn=1, pos=1, hd_homographs=2, hd_per_label=2), seed=0)
    p = tmp_path / "hd.tsv"
    write_hd(hd + [HDExample("wind", "wind_air", "The wind blew.", (4, 8))], p)
    with pytest.raises(DataError, match="not in lexicon"):
        load_hd(p, lex)


def test_load_dataset_directory(tmp_path):
    hd = synth_hd(2, 3, 0)
    (tmp_path / "d").mkdir()
    write_hd(hd[:5], tmp_path / "d" / "a_train.tsv")
    write_hd(hd[5:], tmp_path / "d" / "b_eval.tsv")
    assert load_hd_dataset(tmp_path / "d") == hd


def test_validate_balance():
    hd = synth_hd(4, 10, 0)
    report = validate_balance(hd)
    assert report.total == 80 and report.n_classes == 8 and report.per_class() == {10} and report.is_balanced
    assert "sentences: 80" in report.summary()
    report = validate_balance(hd[1:])
    assert not report.is_balanced and len(report.violations) == 1


def test_stratified_split_is_balanced_partition():
    hd = synth_hd(4, 10, 0)
    for fraction in (0.5, 0.8, 0.9, 0.33):
        train, test = stratified_split(hd, fraction, seed=1)
        assert sorted(map(repr, train + test)) == sorted(map(repr, hd))
        for part in (train, test):
            counts = validate_balance(part).counts.values()
            assert max(counts) - min(counts) <= 1
        assert len(train) == 8 * round(fraction * 10 + 1e-9)
    assert stratified_split(hd, 0.8, seed=1) == stratified_split(hd, 0.8, seed=1)
    with pytest.raises(ValueError):
        stratified_split(hd[:1], 0.5)
    with pytest.raises(ValueError):
        stratified_split(hd, 1.0)
