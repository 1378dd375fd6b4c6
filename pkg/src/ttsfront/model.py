"""Multi-task model: shared trunk plus TN, POS and HD heads."""

from __future__ import annotations

import hashlib
import io
import json
import zipfile
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import torch
from torch import nn

from .decoder import NormalizationPlan, beam_search, mask_logits, render
from .encoder import DeskContextualEncoder, DeskLMConfig, Trunk, TrunkConfig
from .heads import (
    POS_TAGS,
    HDHead,
    HeadConfig,
    HomographLexicon,
    POSHead,
    TNHead,
    index_average,
    locate_homograph,
    word_average_matrix,
)
from .rules import RuleRegistry, applicability_mask, default_registry
from .tokenizer import TokenSequence, tokenize

TASKS = ("TN", "POS", "HD")
CHECKPOINT_FORMAT = "ttsfront-checkpoint/1"


class ChecksumMismatch(ValueError):
    """Checkpoint was trained against a different ruleset manifest."""


@dataclass
class ModelConfig:
    trunk: TrunkConfig = field(default_factory=TrunkConfig)
    head: HeadConfig = field(default_factory=HeadConfig)
    lm: DeskLMConfig = field(default_factory=DeskLMConfig)
    tasks: tuple[str, ...] = TASKS
    use_lm: bool = True
    hd_residual: bool = True

    def __post_init__(self):
        self.tasks = tuple(t for t in TASKS if t in set(self.tasks))
        if not self.tasks:
            raise ValueError("at least one task is required")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["tasks"] = list(self.tasks)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(
            trunk=TrunkConfig(**d.get("trunk", {})),
            head=HeadConfig(**d.get("head", {})),
            lm=DeskLMConfig(**d.get("lm", {})),
            tasks=tuple(d.get("tasks", TASKS)),
            use_lm=d.get("use_lm", True),
            hd_residual=d.get("hd_residual", True),
        )


@dataclass
class HDInput:
    """One homograph occurrence resolved against both token streams."""

    seq: TokenSequence
    homograph: str
    token_indices: list[int]
    subword_indices: list[int]


class MultiTaskModel(nn.Module):
    def __init__(
        self,
        cfg: ModelConfig | None = None,
        registry: RuleRegistry | None = None,
        lexicon: HomographLexicon | None = None,
    ):
        super().__init__()
        self.cfg = cfg = cfg or ModelConfig()
        self.registry = registry or default_registry()
        self.lexicon = lexicon
        if "HD" in cfg.tasks and lexicon is None:
            raise ValueError("HD task needs a homograph lexicon")
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(cfg.trunk.seed)
            self._build(cfg, lexicon)

    def _build(self, cfg, lexicon):
        lm = DeskContextualEncoder(cfg.lm)
        self.trunk = Trunk(cfg.trunk, lm, use_lm=cfg.use_lm)
        dim = self.trunk.out_dim
        self.heads = nn.ModuleDict()
        if "TN" in cfg.tasks:
            self.heads["TN"] = TNHead(dim, len(self.registry), cfg.head)
        if "POS" in cfg.tasks:
            self.heads["POS"] = POSHead(dim, cfg.head)
        if "HD" in cfg.tasks:
            residual = cfg.use_lm and cfg.hd_residual
            self.heads["HD"] = HDHead(dim, lm.dim if residual else None, lexicon, cfg.head, residual=residual)

    @property
    def lm(self) -> DeskContextualEncoder:
        return self.trunk.lm

    @property
    def tasks(self) -> tuple[str, ...]:
        return self.cfg.tasks

    # -- forward passes --------------------------------------------------------

    def _lm_states(self, seqs, layers):
        if not self.trunk.use_lm:
            return None
        return self.trunk.lm_layers(seqs, sorted(set(layers)))

    def encode(self, seqs: Sequence[TokenSequence]) -> tuple[torch.Tensor, torch.Tensor]:
        return self.trunk(seqs, self._lm_states(seqs, [self.cfg.trunk.lm_first_layer]))

    def tn_logits(self, seqs: Sequence[TokenSequence]) -> tuple[torch.Tensor, torch.Tensor]:
        e, mask = self.encode(seqs)
        return self.heads["TN"](e), mask

    def pos_logits(self, seqs: Sequence[TokenSequence]) -> tuple[torch.Tensor, torch.Tensor]:
        e, _ = self.encode(seqs)
        avg, wmask = word_average_matrix(seqs, e.shape[1], e.dtype)
        return self.heads["POS"](e, avg), wmask

    def hd_logits(self, items: Sequence[HDInput]) -> list[torch.Tensor]:
        seqs = [it.seq for it in items]
        first, last = self.cfg.trunk.lm_first_layer, self.cfg.trunk.lm_last_layer
        states = self._lm_states(seqs, [first, last])
        e, _ = self.trunk(seqs, states)
        e_avg = index_average(e, [it.token_indices for it in items])
        head: HDHead = self.heads["HD"]
        lm_avg = None
        if head.residual:
            lm_final = states[0][last].to(e.dtype)
            lm_avg = index_average(lm_final, [it.subword_indices for it in items])
        return head(e_avg, lm_avg, [it.homograph for it in items])

    def hd_input(self, text: str, homograph: str, span: tuple[int, int]) -> HDInput:
        seq = tokenize(text)
        tn, sub = locate_homograph(seq, self.lm, text, span)
        return HDInput(seq, homograph, tn, sub)

    # -- inference ---------------------------------------------------------------

    @torch.no_grad()
    def normalize(self, texts: Sequence[str], beam_width: int = 8) -> list[str]:
        return [render(p, tokenize(t), self.registry) if p is not None else "" for t, p in zip(texts, self.plan(texts, beam_width))]

    @torch.no_grad()
    def plan(self, texts: Sequence[str], beam_width: int = 8) -> list[NormalizationPlan | None]:
        self.eval()
        seqs = [tokenize(t) for t in texts]
        out: list[NormalizationPlan | None] = [None] * len(texts)
        live = [i for i, s in enumerate(seqs) if s.n]
        if not live:
            return out
        logits, _ = self.tn_logits([seqs[i] for i in live])
        for row, i in enumerate(live):
            seq = seqs[i]
            lg = logits[row, : seq.n].double().numpy()
            masked = mask_logits(lg, applicability_mask(seq, self.registry))
            out[i] = beam_search(masked, seq, self.registry, beam_width)
        return out

    @torch.no_grad()
    def tag(self, texts: Sequence[str]) -> list[list[tuple[str, str]]]:
        self.eval()
        seqs = [tokenize(t) for t in texts]
        out: list[list[tuple[str, str]]] = [[] for _ in texts]
        live = [i for i, s in enumerate(seqs) if s.n]
        if not live:
            return out
        logits, wmask = self.pos_logits([seqs[i] for i in live])
        for row, i in enumerate(live):
            words = seqs[i].words()
            pred = logits[row, : len(words)].argmax(-1).tolist()
            out[i] = [(w, POS_TAGS[p]) for w, p in zip(words, pred)]
        return out

    @torch.no_grad()
    def disambiguate(self, items: Sequence[HDInput]) -> list[str]:
        self.eval()
        logits = self.hd_logits(items)
        return [self.lexicon[it.homograph][int(lg.argmax())] for it, lg in zip(items, logits)]


def save_checkpoint(model: MultiTaskModel, path: str | Path, extra: dict | None = None) -> None:
    """Single zip archive: config, ruleset digest, lexicon and tensors by parameter path."""
    buf = io.BytesIO()
    torch.save(model.state_dict(), buf)
    meta = {
        "format": CHECKPOINT_FORMAT,
        "config": model.cfg.to_dict(),
        "ruleset_version": model.registry.version,
        "ruleset_sha256": model.registry.digest,
        "n_rules": len(model.registry),
        "extra": extra or {},
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        zf.writestr("meta.json", json.dumps(meta, indent=1, sort_keys=True))
        zf.writestr("lexicon.tsv", model.lexicon.to_text() if model.lexicon is not None else "")
        zf.writestr("parameters.pt", buf.getvalue())


def read_checkpoint_meta(path: str | Path) -> dict:
    with zipfile.ZipFile(path) as zf:
        return json.loads(zf.read("meta.json"))


def load_checkpoint(path: str | Path, registry: RuleRegistry | None = None) -> MultiTaskModel:
    registry = registry or default_registry()
    with zipfile.ZipFile(path) as zf:
        meta = json.loads(zf.read("meta.json"))
        lex_text = zf.read("lexicon.tsv").decode("utf-8")
        params = zf.read("parameters.pt")
    if meta.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"unsupported checkpoint format {meta.get('format')!r}")
    if meta["ruleset_sha256"] != registry.digest:
        raise ChecksumMismatch(
            f"checkpoint ruleset {meta['ruleset_sha256'][:12]} does not match active manifest {registry.digest[:12]}"
        )
    lexicon = HomographLexicon.from_text(lex_text) if lex_text.strip() else None
    model = MultiTaskModel(ModelConfig.from_dict(meta["config"]), registry, lexicon)
    state = torch.load(io.BytesIO(params), weights_only=True)
    model.load_state_dict(state)
    model.eval()
    return model


def parameter_checksums(module: nn.Module) -> dict[str, str]:
    """Byte-level digest per parameter/buffer, for bitwise-unchanged assertions."""
    return {
        k: hashlib.sha256(v.detach().cpu().contiguous().numpy().tobytes()).hexdigest()
        for k, v in module.state_dict().items()
    }


def tn_mask_tensor(seqs: Sequence[TokenSequence], registry: RuleRegistry, n_max: int) -> torch.Tensor:
    out = torch.zeros(len(seqs), n_max, len(registry), dtype=torch.bool)
    for b, s in enumerate(seqs):
        if s.n:
            out[b, : s.n] = torch.from_numpy(applicability_mask(s, registry))
    out[:, :, 0] |= True
    return out


__all__ = [
    "ChecksumMismatch",
    "HDInput",
    "ModelConfig",
    "MultiTaskModel",
    "TASKS",
    "load_checkpoint",
    "parameter_checksums",
    "read_checkpoint_meta",
    "save_checkpoint",
    "tn_mask_tensor",
]
