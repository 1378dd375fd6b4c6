"""Round-robin multi-task training.

Every minibatch holds examples of exactly one task; tasks are visited in a
fixed cycle and each step backpropagates that task's plain cross-entropy,
with no task weighting. The contextual encoder is frozen, and heads of
other tasks receive no gradient, so AdamW leaves them untouched.
"""

from __future__ import annotations

import copy
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from itertools import combinations
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .data import HDExample, POSExample, TNExample
from .decoder import beam_search, mask_logits, render
from .heads import POS_INDEX, POS_TAGS
from .metrics import EvalReport, corpus_wer, hd_accuracy, line_accuracy, pos_accuracy
from .model import TASKS, HDInput, ModelConfig, MultiTaskModel, save_checkpoint
from .rules import RuleRegistry, applicability_mask
from .tokenizer import TokenSequence, tokenize

logger = logging.getLogger(__name__)

IGNORE = -100


@dataclass
class TrainConfig:
    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.99
    weight_decay: float = 0.01
    batch_size: int = 128
    decay_factor: float = 0.2
    decay_every: int = 16_000
    total_iterations: int = 3_000
    task_cycle: tuple[str, ...] = TASKS
    val_every: int = 500
    seed: int = 0

    def __post_init__(self):
        self.task_cycle = tuple(self.task_cycle)
        if self.lr <= 0 or self.batch_size < 1 or self.total_iterations < 0 or self.decay_every < 1:
            raise ValueError("lr, batch_size, decay_every must be positive and iterations non-negative")
        if not 0.0 < self.decay_factor <= 1.0:
            raise ValueError("decay_factor must be in (0, 1]")
        bad = [t for t in self.task_cycle if t not in TASKS]
        if bad or not self.task_cycle:
            raise ValueError(f"task_cycle must be a non-empty sequence over {TASKS}, got {self.task_cycle}")


def lr_at(cfg: TrainConfig, step: int) -> float:
    """Step-decayed learning rate for 0-based ``step``."""
    return cfg.lr * cfg.decay_factor ** (step // cfg.decay_every)


# -- prepared examples ---------------------------------------------------------


@dataclass
class TNItem:
    seq: TokenSequence
    targets: list[int]
    mask: np.ndarray
    reference: str


@dataclass
class POSItem:
    seq: TokenSequence
    targets: list[int]


@dataclass
class HDItem:
    inp: HDInput
    target: int
    label: str


@dataclass
class TaskBatch:
    task: str
    items: list

    @property
    def size(self) -> int:
        return len(self.items)


def prepare_tn(examples: Iterable[TNExample], registry: RuleRegistry) -> list[TNItem]:
    """Gold label at each application's start token; covered tail tokens are ignored."""
    out = []
    for ex in examples:
        seq = tokenize(ex.text)
        targets = [IGNORE] * seq.n
        for start, rule_id in ex.gold_rules:
            targets[start] = rule_id
        out.append(TNItem(seq, targets, applicability_mask(seq, registry), ex.gold_normalization))
    return out


def prepare_pos(examples: Iterable[POSExample]) -> list[POSItem]:
    out = []
    for ex in examples:
        seq = tokenize(ex.text)
        if len(seq.word_groups()) != len(ex.tags):
            raise ValueError(f"{ex.text!r}: {len(ex.tags)} tags for {len(seq.word_groups())} words")
        out.append(POSItem(seq, [POS_INDEX[t] for t in ex.tags]))
    return out


def prepare_hd(examples: Iterable[HDExample], model: MultiTaskModel) -> list[HDItem]:
    out = []
    for ex in examples:
        inp = model.hd_input(ex.sentence, ex.homograph, ex.span)
        target = model.lexicon.label_index(ex.homograph, ex.pronunciation_label)
        out.append(HDItem(inp, target, ex.pronunciation_label))
    return out


def prepare(task: str, examples, model: MultiTaskModel):
    if task == "TN":
        return prepare_tn(examples, model.registry)
    if task == "POS":
        return prepare_pos(examples)
    return prepare_hd(examples, model)


# -- losses --------------------------------------------------------------------


def masked_cross_entropy(logits: torch.Tensor, mask: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    """Mean cross-entropy over positions with a target; masked-out classes leave the softmax.

    ``logits``/``mask`` are (..., C), ``targets`` (...) with ``IGNORE`` for
    unlabeled positions.
    """
    logits = logits.reshape(-1, logits.shape[-1])
    mask = mask.reshape(-1, mask.shape[-1])
    targets = targets.reshape(-1)
    keep = targets != IGNORE
    if not keep.any():
        raise ValueError("batch has no labeled positions")
    logits, mask, targets = logits[keep], mask[keep], targets[keep]
    if not mask.gather(1, targets.unsqueeze(1)).all():
        bad = torch.nonzero(~mask.gather(1, targets.unsqueeze(1)).squeeze(1)).flatten().tolist()
        raise ValueError(f"gold labels masked out as inapplicable at labeled positions {bad}")
    return F.cross_entropy(logits.masked_fill(~mask, float("-inf")), targets)


def _pad_targets(rows: Sequence[Sequence[int]], width: int) -> torch.Tensor:
    out = torch.full((len(rows), width), IGNORE, dtype=torch.long)
    for i, r in enumerate(rows):
        out[i, : len(r)] = torch.as_tensor(r, dtype=torch.long)
    return out


def task_loss(model: MultiTaskModel, batch: TaskBatch) -> torch.Tensor:
    if batch.task not in model.tasks:
        raise ValueError(f"model has no {batch.task} head")
    if batch.task == "TN":
        seqs = [it.seq for it in batch.items]
        logits, _ = model.tn_logits(seqs)
        n_max = logits.shape[1]
        mask = torch.zeros(len(seqs), n_max, logits.shape[-1], dtype=torch.bool)
        for b, it in enumerate(batch.items):
            mask[b, : it.seq.n] = torch.from_numpy(it.mask)
        mask[:, :, 0] = True
        targets = _pad_targets([it.targets for it in batch.items], n_max)
        return masked_cross_entropy(logits, mask, targets)
    if batch.task == "POS":
        logits, _ = model.pos_logits([it.seq for it in batch.items])
        targets = _pad_targets([it.targets for it in batch.items], logits.shape[1])
        return F.cross_entropy(logits.reshape(-1, logits.shape[-1]), targets.reshape(-1), ignore_index=IGNORE)
    logits = model.hd_logits([it.inp for it in batch.items])
    losses = [
        F.cross_entropy(lg.unsqueeze(0), torch.tensor([it.target])) for lg, it in zip(logits, batch.items)
    ]
    return torch.stack(losses).mean()


# -- optimization ----------------------------------------------------------------


def make_optimizer(model: MultiTaskModel, cfg: TrainConfig) -> torch.optim.AdamW:
    params = [p for p in model.parameters() if p.requires_grad]
    return torch.optim.AdamW(params, lr=cfg.lr, betas=(cfg.beta1, cfg.beta2), weight_decay=cfg.weight_decay)


def train_step(model: MultiTaskModel, optimizer, batch: TaskBatch, step: int, cfg: TrainConfig) -> float:
    lr = lr_at(cfg, step)
    for group in optimizer.param_groups:
        group["lr"] = lr
    model.train()
    # set_to_none: heads outside this batch's graph keep grad None and are skipped by AdamW
    optimizer.zero_grad(set_to_none=True)
    loss = task_loss(model, batch)
    if not torch.isfinite(loss):
        raise FloatingPointError(f"non-finite loss {loss.item()} at step {step} (task {batch.task}, lr {lr:g})")
    loss.backward()
    optimizer.step()
    return float(loss.detach())


class BatchStream:
    """Endless minibatches over one task's items, reshuffled every epoch."""

    def __init__(self, items: Sequence, batch_size: int, seed: int):
        if not items:
            raise ValueError("empty dataset")
        self.items = list(items)
        self.batch_size = batch_size
        self.rng = np.random.default_rng(seed)
        self.epoch = 0
        self._order: list[int] = []

    def next(self) -> list:
        if not self._order:
            self._order = self.rng.permutation(len(self.items)).tolist()
            self.epoch += 1
        take, self._order = self._order[: self.batch_size], self._order[self.batch_size:]
        return [self.items[i] for i in take]


@dataclass
class TrainResult:
    model: MultiTaskModel
    history: list[dict] = field(default_factory=list)
    task_steps: dict[str, int] = field(default_factory=dict)
    evaluations: list[tuple[int, EvalReport]] = field(default_factory=list)
    best_step: int | None = None
    stopped_early: bool = False

    @property
    def iterations(self) -> int:
        return sum(self.task_steps.values())


def selection_score(report: EvalReport) -> float:
    keys = [k for k in ("tn.line_acc", "pos.acc", "hd.micro") if k in report.metrics]
    return sum(report.metrics[k] for k in keys) / len(keys) if keys else 0.0


def train_loop(
    model: MultiTaskModel,
    datasets: dict[str, Sequence],
    cfg: TrainConfig,
    val_sets: dict[str, Sequence] | None = None,
    stop_when: Callable[[EvalReport], bool] | None = None,
    log_path: str | Path | None = None,
    checkpoint_dir: str | Path | None = None,
) -> TrainResult:
    """Train on prepared items (see ``prepare``), one task per step in ``cfg.task_cycle`` order.

    Validation runs every ``cfg.val_every`` steps when ``val_sets`` is given;
    the best state by mean validation metric is restored at the end.
    ``stop_when`` may end training early after a validation.
    """
    cycle = [t for t in cfg.task_cycle if t in model.tasks]
    if not cycle:
        raise ValueError("no task of the cycle has a head in the model")
    for t in cycle:
        if not datasets.get(t):
            raise ValueError(f"empty dataset for configured task {t}")
    torch.manual_seed(cfg.seed)
    streams = {t: BatchStream(datasets[t], cfg.batch_size, cfg.seed * 1000 + TASKS.index(t)) for t in cycle}
    optimizer = make_optimizer(model, cfg)
    result = TrainResult(model, task_steps={t: 0 for t in cycle})
    best = (-math.inf, None)
    log = open(log_path, "w", encoding="utf-8") if log_path else None
    try:
        for step in range(cfg.total_iterations):
            task = cycle[step % len(cycle)]
            batch = TaskBatch(task, streams[task].next())
            loss = train_step(model, optimizer, batch, step, cfg)
            result.task_steps[task] += 1
            rec = {"step": step, "task": task, "loss": loss, "lr": lr_at(cfg, step)}
            result.history.append(rec)
            if log:
                log.write(json.dumps(rec) + "\n")
            done = step + 1 == cfg.total_iterations
            if val_sets and ((step + 1) % cfg.val_every == 0 or done):
                report = evaluate(model, **{k.lower(): v for k, v in val_sets.items()})
                result.evaluations.append((step + 1, report))
                score = selection_score(report)
                logger.info("step %d: %s", step + 1, report.metrics)
                if score > best[0]:
                    best = (score, copy.deepcopy(model.state_dict()))
                    result.best_step = step + 1
                    if checkpoint_dir:
                        save_checkpoint(model, Path(checkpoint_dir) / "best.ckpt", {"step": step + 1})
                if stop_when is not None and stop_when(report):
                    result.stopped_early = not done
                    break
    finally:
        if log:
            log.close()
    if best[1] is not None:
        model.load_state_dict(best[1])
    if checkpoint_dir:
        save_checkpoint(model, Path(checkpoint_dir) / "last.ckpt", {"steps": result.iterations})
    model.eval()
    return result


# -- evaluation ------------------------------------------------------------------


def _chunks(items, size):
    for i in range(0, len(items), size):
        yield items[i:i + size]


@torch.no_grad()
def evaluate(
    model: MultiTaskModel,
    tn: Sequence[TNItem] | None = None,
    pos: Sequence[POSItem] | None = None,
    hd: Sequence[HDItem] | None = None,
    beam_width: int = 8,
    batch_size: int = 64,
) -> EvalReport:
    model.eval()
    report = EvalReport()
    if tn and "TN" in model.tasks:
        preds, refs = [], []
        hits = labeled = 0
        for chunk in _chunks(list(tn), batch_size):
            logits, _ = model.tn_logits([it.seq for it in chunk])
            for b, it in enumerate(chunk):
                masked = mask_logits(logits[b, : it.seq.n].double().numpy(), it.mask)
                for i, t in enumerate(it.targets):
                    if t != IGNORE:
                        labeled += 1
                        hits += int(np.argmax(masked[i]) == t)
                plan = beam_search(masked, it.seq, model.registry, beam_width)
                preds.append(render(plan, it.seq, model.registry))
                refs.append(it.reference)
        report.metrics["tn.line_acc"] = line_accuracy(preds, refs)
        report.metrics["tn.wer"] = corpus_wer(preds, refs)
        report.metrics["tn.token_acc"] = hits / labeled
        report.counts["tn.sentences"] = len(refs)
        report.counts["tn.tokens"] = labeled
    if pos and "POS" in model.tasks:
        pred, gold = [], []
        for chunk in _chunks(list(pos), batch_size):
            logits, _ = model.pos_logits([it.seq for it in chunk])
            for b, it in enumerate(chunk):
                pred += logits[b, : len(it.targets)].argmax(-1).tolist()
                gold += it.targets
        report.metrics["pos.acc"] = pos_accuracy(pred, gold)
        report.counts["pos.words"] = len(gold)
    if hd and "HD" in model.tasks:
        triples = []
        for chunk in _chunks(list(hd), batch_size):
            logits = model.hd_logits([it.inp for it in chunk])
            for lg, it in zip(logits, chunk):
                labels = model.lexicon[it.inp.homograph]
                triples.append((it.inp.homograph, it.label, labels[int(lg.argmax())]))
        micro, macro = hd_accuracy(triples)
        report.metrics["hd.micro"] = micro
        report.metrics["hd.macro"] = macro
        report.counts["hd.examples"] = len(triples)
        report.counts["hd.classes"] = len({(h, g) for h, g, _ in triples})
    return report


# -- task ablations ----------------------------------------------------------------


def all_task_subsets(tasks: Sequence[str] = TASKS) -> list[tuple[str, ...]]:
    """Non-empty subsets, largest first (full model, pairs, singles)."""
    return [c for k in range(len(tasks), 0, -1) for c in combinations(tasks, k)]


@dataclass
class AblationRow:
    tasks: tuple[str, ...]
    iterations: int
    report: EvalReport

    @property
    def name(self) -> str:
        return " + ".join(self.tasks) + (" only" if len(self.tasks) == 1 else "")


TABLE_COLUMNS = [
    ("TN line acc", "tn.line_acc"),
    ("TN WER", "tn.wer"),
    ("POS acc", "pos.acc"),
    ("HD micro", "hd.micro"),
    ("HD macro", "hd.macro"),
]


def format_table(rows: Sequence[AblationRow]) -> str:
    """Plain-text results table; metrics of tasks a model was not trained on show as ``--``."""
    width = max(len("Model"), *(len(r.name) for r in rows))
    header = "Model".ljust(width) + " | " + " | ".join(c for c, _ in TABLE_COLUMNS)
    lines = [header, "-" * len(header)]
    for r in rows:
        cells = []
        for col, key in TABLE_COLUMNS:
            v = r.report.metrics.get(key)
            cells.append(("--" if v is None else f"{100 * v:.2f}").rjust(len(col)))
        lines.append(r.name.ljust(width) + " | " + " | ".join(cells))
    return "\n".join(lines) + "\n"


def ablation_grid(
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    train_data: dict[str, Sequence],
    eval_data: dict[str, Sequence],
    per_task_iters: int,
    subsets: Sequence[Sequence[str]] | None = None,
    registry: RuleRegistry | None = None,
    lexicon=None,
) -> list[AblationRow]:
    """Train one model per task subset for ``per_task_iters * len(subset)`` steps.

    ``train_data``/``eval_data`` hold raw examples keyed by task.
    """
    subsets = [tuple(s) for s in (subsets or all_task_subsets())]
    if any(not s for s in subsets):
        raise ValueError("task subsets must be non-empty")
    rows = []
    for subset in subsets:
        cfg = ModelConfig.from_dict({**model_cfg.to_dict(), "tasks": list(subset)})
        model = MultiTaskModel(cfg, registry, lexicon if "HD" in subset else None)
        tcfg = TrainConfig(**{**asdict(train_cfg), "total_iterations": per_task_iters * len(subset),
                              "task_cycle": tuple(t for t in train_cfg.task_cycle if t in subset)})
        train = {t: prepare(t, train_data[t], model) for t in subset}
        result = train_loop(model, train, tcfg)
        evals = {t.lower(): prepare(t, eval_data[t], model) for t in subset if eval_data.get(t)}
        rows.append(AblationRow(cfg.tasks, result.iterations, evaluate(model, **evals)))
        logger.info("ablation %s: %s", subset, rows[-1].report.metrics)
    return rows


__all__ = [
    "AblationRow",
    "BatchStream",
    "HDItem",
    "POSItem",
    "POS_TAGS",
    "TNItem",
    "TaskBatch",
    "TrainConfig",
    "TrainResult",
    "ablation_grid",
    "all_task_subsets",
    "evaluate",
    "format_table",
    "lr_at",
    "make_optimizer",
    "masked_cross_entropy",
    "prepare",
    "prepare_hd",
    "prepare_pos",
    "prepare_tn",
    "task_loss",
    "train_loop",
    "train_step",
]
