"""Command-line entry points: ``ttsfront <subcommand> ...``.

All input and output is line oriented so the tool composes in pipelines.
Training and ablation read a JSON manifest::

    {
      "seed": 0,
      "tasks": ["TN", "POS", "HD"],
      "model": {...ModelConfig fields...},
      "train": {...TrainConfig fields...},
      "data": {"tn": "tn.jsonl", "pos": "pos.jsonl", "hd": "hd.tsv", "lexicon": "lexicon.tsv"},
      "val": {"tn": ..., "pos": ..., "hd": ...},
      "out_dir": "runs/demo",
      "per_task_iters": 50
    }

Relative paths resolve against the manifest's directory. ``val`` is optional
and defaults to the training data; ``per_task_iters`` is used by ``ablate``.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import torch

from .data import (
    DataError,
    load_hd,
    load_hd_dataset,
    load_pos,
    load_tn,
    read_hd_table,
    stratified_split,
    validate_balance,
    write_hd,
)
from .heads import load_lexicon
from .model import TASKS, ChecksumMismatch, ModelConfig, MultiTaskModel, load_checkpoint, save_checkpoint
from .rules import RuleRegistry
from .synth import SynthSpec, synth_corpus
from .training import TrainConfig, ablation_grid, evaluate, format_table, prepare, train_loop

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_MODEL = 4

logger = logging.getLogger("ttsfront")


class ConfigError(Exception):
    pass


class ModelError(Exception):
    pass


# -- manifests -------------------------------------------------------------------


@dataclass
class Manifest:
    seed: int = 0
    tasks: tuple[str, ...] = TASKS
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: dict[str, Path] = field(default_factory=dict)
    val: dict[str, Path] = field(default_factory=dict)
    out_dir: Path = Path("runs")
    per_task_iters: int = 50
    ruleset: Path | None = None

    @classmethod
    def load(cls, path: str | Path) -> "Manifest":
        path = Path(path)
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except OSError as e:
            raise ConfigError(f"cannot read manifest {path}: {e.strerror}") from None
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON: {e}") from None
        known = {"seed", "tasks", "model", "train", "data", "val", "out_dir", "per_task_iters", "ruleset"}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ConfigError(f"{path}: unknown manifest keys {unknown}")
        base = path.parent

        def resolve(p):
            p = Path(p)
            return p if p.is_absolute() else base / p

        try:
            seed = int(raw.get("seed", 0))
            tasks = tuple(raw.get("tasks", TASKS))
            bad = [t for t in tasks if t not in TASKS]
            if bad or not tasks:
                raise ConfigError(f"tasks must be a non-empty subset of {TASKS}, got {list(tasks)}")
            model_d = {**raw.get("model", {}), "tasks": list(tasks)}
            model_d.setdefault("trunk", {}).setdefault("seed", seed)
            train_d = {"seed": seed, **raw.get("train", {})}
            train_d["task_cycle"] = tuple(t for t in train_d.get("task_cycle", TASKS) if t in tasks)
            m = cls(
                seed=seed,
                tasks=tasks,
                model=ModelConfig.from_dict(model_d),
                train=TrainConfig(**train_d),
                data={k: resolve(v) for k, v in raw.get("data", {}).items()},
                val={k: resolve(v) for k, v in raw.get("val", {}).items()},
                out_dir=resolve(raw.get("out_dir", "runs")),
                per_task_iters=int(raw.get("per_task_iters", 50)),
                ruleset=resolve(raw["ruleset"]) if "ruleset" in raw else None,
            )
        except (TypeError, ValueError) as e:
            raise ConfigError(f"{path}: {e}") from None
        for key in ("tn", "pos", "hd", "lexicon"):
            needed = key == "lexicon" and "HD" in tasks or key.upper() in tasks
            if needed and key not in m.data:
                raise ConfigError(f"{path}: data.{key} is required for tasks {list(tasks)}")
        for p in [*m.data.values(), *m.val.values()]:
            if not p.is_file():
                raise ConfigError(f"{path}: data file not found: {p}")
        return m

    def registry(self) -> RuleRegistry | None:
        return RuleRegistry.from_manifest(self.ruleset) if self.ruleset else None


def _load_examples(paths: dict[str, Path], tasks, registry, lexicon) -> dict[str, list]:
    out = {}
    if "TN" in tasks and "tn" in paths:
        out["TN"] = load_tn(paths["tn"], registry)
    if "POS" in tasks and "pos" in paths:
        out["POS"] = load_pos(paths["pos"])
    if "HD" in tasks and "hd" in paths:
        out["HD"] = load_hd(paths["hd"], lexicon)
    return out


# -- I/O helpers -------------------------------------------------------------------


@contextlib.contextmanager
def _output(path):
    if path is None or str(path) == "-":
        yield sys.stdout
    else:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            yield f


def _input_lines(args) -> list[str]:
    if getattr(args, "text", None):
        return list(args.text)
    if args.inp is None or str(args.inp) == "-":
        data = sys.stdin.read()
    else:
        try:
            data = Path(args.inp).read_text(encoding="utf-8")
        except OSError as e:
            raise ConfigError(f"cannot read {args.inp}: {e.strerror}") from None
    lines = data.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    return [ln.rstrip("\r") for ln in lines]


def _model(args, registry=None) -> MultiTaskModel:
    if not args.checkpoint:
        raise ConfigError("--checkpoint is required")
    if not Path(args.checkpoint).is_file():
        raise ConfigError(f"checkpoint not found: {args.checkpoint}")
    if registry is None and getattr(args, "manifest", None):
        registry = Manifest.load(args.manifest).registry()
    try:
        return load_checkpoint(args.checkpoint, registry)
    except ChecksumMismatch as e:
        raise ModelError(str(e)) from None
    except (KeyError, ValueError, RuntimeError, OSError) as e:
        raise ModelError(f"cannot load checkpoint {args.checkpoint}: {e}") from None


def _require_task(model, task):
    if task not in model.tasks:
        raise ModelError(f"checkpoint has no {task} head (tasks: {', '.join(model.tasks)})")


# -- subcommands ----------------------------------------------------------------------


def cmd_normalize(args) -> int:
    lines = _input_lines(args)
    model = _model(args)
    _require_task(model, "TN")
    with _output(args.out) as out:
        for start in range(0, len(lines), 64):
            for line in model.normalize(lines[start:start + 64], beam_width=args.beam_width):
                out.write(line + "\n")
    return EXIT_OK


def cmd_tag(args) -> int:
    lines = _input_lines(args)
    model = _model(args)
    _require_task(model, "POS")
    with _output(args.out) as out:
        for start in range(0, len(lines), 64):
            for pairs in model.tag(lines[start:start + 64]):
                out.write(" ".join(f"{w}/{t}" for w, t in pairs) + "\n")
    return EXIT_OK


def cmd_homograph(args) -> int:
    """One predicted label per input row; unknown homographs yield an ERROR record."""
    if args.inp is None:
        raise ConfigError("homograph needs --in with an HD table")
    model = _model(args)
    _require_task(model, "HD")
    examples, _ = read_hd_table(args.inp)
    failures = 0
    results: list[str | None] = [None] * len(examples)
    todo = []
    for i, ex in enumerate(examples):
        if ex.homograph not in model.lexicon:
            results[i] = f"ERROR\tunknown homograph {ex.homograph!r}"
            failures += 1
        else:
            todo.append(i)
    for start in range(0, len(todo), 64):
        idx = todo[start:start + 64]
        items = [model.hd_input(examples[i].sentence, examples[i].homograph, examples[i].span) for i in idx]
        for i, label in zip(idx, model.disambiguate(items)):
            results[i] = label
    with _output(args.out) as out:
        for r in results:
            out.write(r + "\n")
    if failures:
        print(f"error: {failures} row(s) reference homographs missing from the lexicon", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


def _prepared(model, examples: dict[str, list]) -> dict[str, list]:
    return {t: prepare(t, ex, model) for t, ex in examples.items()}


def cmd_train(args) -> int:
    m = Manifest.load(args.manifest)
    if args.seed is not None:
        m.train.seed = args.seed
        m.model.trunk.seed = args.seed
    registry = m.registry()
    lexicon = load_lexicon(m.data["lexicon"]) if "HD" in m.tasks else None
    train_ex = _load_examples(m.data, m.tasks, registry, lexicon)
    val_ex = _load_examples(m.val, m.tasks, registry, lexicon) if m.val else train_ex
    model = MultiTaskModel(m.model, registry, lexicon)
    out_dir = Path(args.out) if args.out else m.out_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    result = train_loop(
        model,
        _prepared(model, train_ex),
        m.train,
        val_sets=_prepared(model, val_ex),
        log_path=out_dir / "metrics.jsonl",
        checkpoint_dir=out_dir,
    )
    save_checkpoint(model, out_dir / "model.ckpt", {"steps": result.iterations, "best_step": result.best_step})
    if result.evaluations:
        (out_dir / "eval.txt").write_text(result.evaluations[-1][1].to_text(), encoding="utf-8")
    print(f"trained {result.iterations} steps {result.task_steps}; checkpoint {out_dir / 'model.ckpt'}")
    return EXIT_OK


def cmd_eval(args) -> int:
    model = _model(args)
    paths = {}
    for key in ("tn", "pos", "hd"):
        p = getattr(args, key)
        if p is not None:
            if not Path(p).is_file():
                raise ConfigError(f"{key} data not found: {p}")
            paths[key] = Path(p)
    if not paths:
        raise ConfigError("eval needs at least one of --tn, --pos, --hd")
    examples = _load_examples(paths, model.tasks, model.registry, model.lexicon)
    missing = sorted(set(k.upper() for k in paths) - set(examples))
    if missing:
        raise ModelError(f"checkpoint has no head for {missing}")
    prepared = _prepared(model, examples)
    report = evaluate(model, **{t.lower(): v for t, v in prepared.items()}, beam_width=args.beam_width)
    with _output(args.out) as out:
        out.write(report.to_text())
    return EXIT_OK


def cmd_ablate(args) -> int:
    m = Manifest.load(args.manifest)
    if args.seed is not None:
        m.train.seed = args.seed
        m.model.trunk.seed = args.seed
    registry = m.registry()
    lexicon = load_lexicon(m.data["lexicon"]) if "HD" in m.tasks else None
    train_ex = _load_examples(m.data, m.tasks, registry, lexicon)
    eval_ex = _load_examples(m.val, m.tasks, registry, lexicon) if m.val else train_ex
    subsets = None
    if args.tasks:
        subsets = [tuple(s.split("+")) for s in args.tasks.split(",")]
        for s in subsets:
            if not s or any(t not in m.tasks for t in s):
                raise ConfigError(f"invalid task subset {'+'.join(s)!r} for manifest tasks {list(m.tasks)}")
    elif m.tasks != TASKS:
        raise ConfigError("ablate over all subsets needs a manifest with all three tasks")
    iters = args.per_task_iters if args.per_task_iters is not None else m.per_task_iters
    rows = ablation_grid(m.model, m.train, train_ex, eval_ex, iters, subsets, registry, lexicon)
    with _output(args.out) as out:
        out.write(format_table(rows))
    return EXIT_OK


def cmd_data_validate(args) -> int:
    if args.inp is None:
        raise ConfigError("validate-balance needs --in")
    lexicon = load_lexicon(args.lexicon) if args.lexicon else None
    if not Path(args.inp).exists():
        raise ConfigError(f"not found: {args.inp}")
    if Path(args.inp).is_dir():
        examples, unit = load_hd_dataset(args.inp, lexicon), None
    else:
        examples, unit = read_hd_table(args.inp, lexicon)
    report = validate_balance(examples, lexicon)
    with _output(args.out) as out:
        out.write(report.summary() + (f"\noffsets: {unit}" if unit else "") + "\n")
    return EXIT_OK if report.is_balanced else EXIT_DATA


def cmd_data_split(args) -> int:
    if args.inp is None or args.out is None:
        raise ConfigError("split needs --in and --out (output directory)")
    examples = load_hd(args.inp)
    try:
        train, test = stratified_split(examples, args.fraction, args.seed or 0)
    except ValueError as e:
        raise DataError(str(e)) from None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_hd(train, out / "train.tsv")
    write_hd(test, out / "test.tsv")
    print(f"train: {len(train)}  test: {len(test)}")
    return EXIT_OK


def cmd_data_synth(args) -> int:
    if args.out is None:
        raise ConfigError("synth needs --out (output directory)")
    spec = SynthSpec(tn=args.tn, pos=args.pos, hd_homographs=args.hd_homographs, hd_per_label=args.hd_per_label)
    try:
        tn, pos, hd, lexicon = synth_corpus(spec, args.seed or 0, args.out)
    except ValueError as e:
        raise ConfigError(str(e)) from None
    print(f"wrote {len(tn)} TN, {len(pos)} POS, {len(hd)} HD examples and {len(lexicon)} homographs to {args.out}")
    return EXIT_OK


# -- parser ----------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ttsfront", description="Multi-task TTS front-end: TN, POS tagging, homographs.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, inp=True, out=True, ckpt=False):
        if inp:
            sp.add_argument("--in", dest="inp", metavar="PATH", help="input file (default stdin)")
        if out:
            sp.add_argument("--out", metavar="PATH", help="output file (default stdout)")
        if ckpt:
            sp.add_argument("--checkpoint", required=True, metavar="PATH")
            sp.add_argument("--manifest", metavar="PATH", help="manifest whose ruleset must match the checkpoint")
        sp.add_argument("--seed", type=int, default=None)

    sp = sub.add_parser("normalize", help="text normalization, one line in, one line out")
    common(sp, ckpt=True)
    sp.add_argument("--beam-width", type=int, default=8)
    sp.add_argument("text", nargs="*", help="lines to normalize instead of --in")
    sp.set_defaults(func=cmd_normalize)

    sp = sub.add_parser("tag", help="POS tags as word/tag pairs per line")
    common(sp, ckpt=True)
    sp.add_argument("text", nargs="*", help="lines to tag instead of --in")
    sp.set_defaults(func=cmd_tag)

    sp = sub.add_parser("homograph", help="pronunciation label per row of an HD table")
    common(sp, ckpt=True)
    sp.set_defaults(func=cmd_homograph)

    sp = sub.add_parser("train", help="train from a manifest")
    sp.add_argument("--manifest", required=True, metavar="PATH")
    common(sp, inp=False)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="evaluate a checkpoint, writing an EvalReport")
    common(sp, inp=False, ckpt=True)
    sp.add_argument("--tn", metavar="PATH")
    sp.add_argument("--pos", metavar="PATH")
    sp.add_argument("--hd", metavar="PATH")
    sp.add_argument("--beam-width", type=int, default=8)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("ablate", help="train and evaluate every task subset")
    sp.add_argument("--manifest", required=True, metavar="PATH")
    common(sp, inp=False)
    sp.add_argument("--tasks", help="comma-separated subsets such as TN,POS+HD (default: all 7)")
    sp.add_argument("--per-task-iters", type=int, default=None)
    sp.set_defaults(func=cmd_ablate)

    data = sub.add_parser("data", help="dataset utilities")
    dsub = data.add_subparsers(dest="data_command", required=True)
    sp = dsub.add_parser("validate-balance", help="check per-pronunciation balance of an HD table or directory of tables")
    common(sp)
    sp.add_argument("--lexicon", metavar="PATH")
    sp.set_defaults(func=cmd_data_validate)
    sp = dsub.add_parser("split", help="stratified train/test split of an HD table")
    common(sp)
    sp.add_argument("--fraction", type=float, default=0.8)
    sp.set_defaults(func=cmd_data_split)
    sp = dsub.add_parser("synth", help="write the synthetic desk corpus")
    common(sp, inp=False)
    sp.add_argument("--tn", type=int, default=50)
    sp.add_argument("--pos", type=int, default=50)
    sp.add_argument("--hd-homographs", type=int, default=4)
    sp.add_argument("--hd-per-label", type=int, default=10)
    sp.set_defaults(func=cmd_data_synth)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0) and EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    if getattr(args, "beam_width", 1) < 1:
        print("error: --beam-width must be positive", file=sys.stderr)
        return EXIT_CONFIG
    if args.seed is not None:
        torch.manual_seed(args.seed)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, KeyError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except ModelError as e:
        print(f"model error: {e}", file=sys.stderr)
        return EXIT_MODEL


if __name__ == "__main__":
    sys.exit(main())
