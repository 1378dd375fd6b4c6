import json
import math

import pytest
import torch

from ttsfront.encoder import DeskLMConfig, TrunkConfig
from ttsfront.heads import HeadConfig
from ttsfront.model import ModelConfig, MultiTaskModel
from ttsfront.synth import desk_lexicon, synth_hd, synth_pos, synth_tn
from ttsfront.training import (
    IGNORE,
    AblationRow,
    BatchStream,
    TaskBatch,
    TrainConfig,
    ablation_grid,
    all_task_subsets,
    format_table,
    masked_cross_entropy,
    prepare,
    task_loss,
    train_loop,
)
from ttsfront.metrics import EvalReport


def small(tasks=("TN", "POS", "HD")):
    cfg = ModelConfig(
        trunk=TrunkConfig(char_emb_dim=4, conv_channels=8, lstm_hidden=4, xformer_hidden=8, xformer_ff=8,
                          attn_heads=2, lm_first_layer=1, lm_last_layer=2),
        head=HeadConfig(ff_dim=8),
        lm=DeskLMConfig(num_layers=2, dim=8, heads=2, ff=8),
        tasks=tasks,
    )
    return MultiTaskModel(cfg, None, desk_lexicon(2) if "HD" in tasks else None)


def raw():
    return {"TN": synth_tn(8, seed=3), "POS": synth_pos(8, seed=3), "HD": synth_hd(2, 3, seed=3)}


def prepared(model):
    return {t: prepare(t, ex, model) for t, ex in raw().items() if t in model.tasks}


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(lr=0)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(task_cycle=("TN", "XX"))


def test_masked_ce_uniform_and_margin():
    k = 5
    logits = torch.zeros(3, k)
    mask = torch.ones(3, k, dtype=torch.bool)
    targets = torch.tensor([0, 2, 4])
    assert masked_cross_entropy(logits, mask, targets).item() == pytest.approx(math.log(k))
    big = torch.full((3, k), -50.0)
    big[torch.arange(3), targets] = 50.0
    assert masked_cross_entropy(big, mask, targets).item() == pytest.approx(0.0, abs=1e-12)


def test_masked_ce_two_way_by_hand():
    # three classes, one masked: softmax over the remaining two only
    logits = torch.tensor([[1.0, 2.0, 9.0]])
    mask = torch.tensor([[True, True, False]])
    loss = masked_cross_entropy(logits, mask, torch.tensor([0]))
    assert loss.item() == pytest.approx(math.log(1 + math.e), rel=1e-6)


def test_masked_ce_rejects_bad_gold():
    logits = torch.zeros(2, 3)
    mask = torch.tensor([[True, False, True], [True, True, True]])
    with pytest.raises(ValueError, match="masked out"):
        masked_cross_entropy(logits, mask, torch.tensor([1, 0]))
    with pytest.raises(ValueError, match="no labeled"):
        masked_cross_entropy(logits, mask, torch.tensor([IGNORE, IGNORE]))


def test_tn_targets_only_at_span_starts():
    model = small(("TN",))
    examples = synth_tn(8, seed=3)
    for ex, it in zip(examples, prepare("TN", examples, model)):
        labeled = {i: t for i, t in enumerate(it.targets) if t != IGNORE}
        assert labeled == dict(ex.gold_rules)
        assert it.reference == ex.gold_normalization


def test_round_robin_counts(tmp_path):
    model = small()
    log = tmp_path / "log.jsonl"
    result = train_loop(model, prepared(model), TrainConfig(batch_size=4, total_iterations=9), log_path=log)
    assert result.task_steps == {"TN": 3, "POS": 3, "HD": 3}
    recs = [json.loads(line) for line in log.read_text().splitlines()]
    assert [r["task"] for r in recs] == ["TN", "POS", "HD"] * 3
    assert [r["step"] for r in recs] == list(range(9))
    assert all(math.isfinite(r["loss"]) and r["lr"] == 5e-4 for r in recs)
    assert recs == result.history


def test_single_task_model():
    model = small(("TN",))
    result = train_loop(model, prepared(model), TrainConfig(batch_size=4, total_iterations=4))
    assert result.task_steps == {"TN": 4}


def test_deterministic_training():
    def run():
        torch.manual_seed(0)
        model = small()
        train_loop(model, prepared(model), TrainConfig(batch_size=4, total_iterations=6))
        return [p.detach().clone() for p in model.parameters()]

    assert all(torch.equal(a, b) for a, b in zip(run(), run()))


def test_non_finite_loss_reports_context():
    model = small(("POS",))
    with torch.no_grad():
        model.heads["POS"].out.weight.fill_(float("nan"))
    with pytest.raises(FloatingPointError, match="step 0.*POS"):
        train_loop(model, prepared(model), TrainConfig(batch_size=4, total_iterations=2))


def test_empty_dataset_rejected():
    model = small()
    data = prepared(model)
    data["POS"] = []
    with pytest.raises(ValueError, match="POS"):
        train_loop(model, data, TrainConfig(total_iterations=3))
    with pytest.raises(ValueError):
        BatchStream([], 4, 0)


def test_batch_stream_covers_each_epoch():
    s = BatchStream(list(range(10)), 4, seed=1)
    seen = s.next() + s.next() + s.next()
    assert sorted(seen) == list(range(10))


def test_validation_and_checkpoints(tmp_path):
    model = small()
    data = prepared(model)
    result = train_loop(model, data, TrainConfig(batch_size=4, total_iterations=7, val_every=3), val_sets=data,
                        checkpoint_dir=tmp_path)
    assert [s for s, _ in result.evaluations] == [3, 6, 7]
    assert result.best_step in (3, 6, 7)
    assert (tmp_path / "best.ckpt").exists() and (tmp_path / "last.ckpt").exists()
    stopped = train_loop(small(), data, TrainConfig(batch_size=4, total_iterations=30, val_every=3), val_sets=data,
                         stop_when=lambda r: True)
    assert stopped.stopped_early and stopped.iterations == 3


def test_task_loss_rejects_missing_head():
    model = small(("TN",))
    with pytest.raises(ValueError):
        task_loss(model, TaskBatch("POS", []))


def test_ablation_grid_and_table():
    assert all_task_subsets()[0] == ("TN", "POS", "HD") and len(all_task_subsets()) == 7
    base = small().cfg
    data = raw()
    rows = ablation_grid(base, TrainConfig(batch_size=4), data, data, per_task_iters=2,
                         subsets=[("TN", "POS", "HD"), ("POS", "HD"), ("TN",)], lexicon=desk_lexicon(2))
    assert [r.iterations for r in rows] == [6, 4, 2]
    assert [r.name for r in rows] == ["TN + POS + HD", "POS + HD", "TN only"]
    table = format_table(rows).splitlines()
    assert table[0].startswith("Model")
    assert table[3].count("--") == 2  # POS + HD: no TN columns
    assert table[4].count("--") == 3  # TN only


def test_format_table_values():
    row = AblationRow(("HD",), 5, EvalReport({"hd.micro": 0.5, "hd.macro": 0.25}, {}))
    line = format_table([row]).splitlines()[2]
    assert "50.00" in line and "25.00" in line and line.count("--") == 3
