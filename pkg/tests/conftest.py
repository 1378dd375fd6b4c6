import time
from collections import OrderedDict

import pytest

from ttsfront.model import ModelConfig, MultiTaskModel, save_checkpoint
from ttsfront.synth import SynthSpec, synth_corpus
from ttsfront.training import TrainConfig, prepare, train_loop

OVERFIT_ITERS = 3000


def overfit_reached(report):
    m = report.metrics
    return (
        m["tn.token_acc"] >= 0.99
        and m["pos.acc"] >= 0.99
        and m["hd.micro"] == 1.0
        and m["tn.line_acc"] >= 0.95
        and m["tn.wer"] <= 0.02
    )


@pytest.fixture(scope="session")
def corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("desk")
    tn, pos, hd, lexicon = synth_corpus(SynthSpec(), seed=0, out_dir=out)
    return {"dir": out, "TN": tn, "POS": pos, "HD": hd, "lexicon": lexicon}


@pytest.fixture(scope="session")
def overfit(corpus, tmp_path_factory):
    """Full-size model trained on the desk corpus until it fits it, checkpointed once."""
    model = MultiTaskModel(ModelConfig(), None, corpus["lexicon"])
    data = {t: prepare(t, corpus[t], model) for t in ("TN", "POS", "HD")}
    cfg = TrainConfig(batch_size=16, total_iterations=OVERFIT_ITERS, val_every=150, seed=0)
    t0 = time.perf_counter()
    result = train_loop(model, data, cfg, val_sets=data, stop_when=overfit_reached)
    elapsed = time.perf_counter() - t0
    ckpt = tmp_path_factory.mktemp("overfit") / "model.ckpt"
    save_checkpoint(model, ckpt)
    return {"model": model, "result": result, "elapsed": elapsed, "data": data, "checkpoint": ckpt}


# -- acceptance summary: one pass/fail line per criterion --------------------------

_criteria: "OrderedDict[int, dict]" = OrderedDict()


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("acceptance")
        if mark:
            n = mark.args[0]
            entry = _criteria.setdefault(n, {"title": mark.kwargs.get("title", ""), "nodes": set(), "failed": []})
            entry["nodes"].add(item.nodeid)


def pytest_deselected(items):
    for item in items:
        for n in list(_criteria):
            _criteria[n]["nodes"].discard(item.nodeid)
            if not _criteria[n]["nodes"]:
                del _criteria[n]


def pytest_runtest_logreport(report):
    for n, entry in _criteria.items():
        if report.nodeid in entry["nodes"]:
            if report.failed:
                entry["failed"].append(report.nodeid.split("::")[-1])
            elif report.when == "call":
                entry.setdefault("ran", set()).add(report.nodeid)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(_criteria):
        e = _criteria[n]
        ran = e.get("ran", set())
        if e["failed"]:
            status = "FAIL"
        elif ran == e["nodes"]:
            status = "PASS"
        else:
            status = "NOT RUN"
        detail = f"  ({', '.join(sorted(set(e['failed'])))})" if e["failed"] else ""
        tr.write_line(f"criterion {n:2d}: {status}  {e['title']}{detail}")
