"""Train the full multi-task model on the synthetic desk corpus.

The desk corpus is small enough to fit in well under a minute on a CPU,
which makes it a quick end-to-end check of the pipeline.

    python demos/02_train_desk_model.py [out_dir]
"""

import sys
import time
from pathlib import Path

from ttsfront.model import ModelConfig, MultiTaskModel, load_checkpoint, save_checkpoint
from ttsfront.synth import SynthSpec, synth_corpus
from ttsfront.training import TrainConfig, prepare, train_loop

out = Path(sys.argv[1] if len(sys.argv) > 1 else "runs/desk")
out.mkdir(parents=True, exist_ok=True)

# 50 TN sentences, 50 POS sentences, 4 homographs x 2 readings x 10 sentences.
tn, pos, hd, lexicon = synth_corpus(SynthSpec(), seed=0, out_dir=out)
model = MultiTaskModel(ModelConfig(), None, lexicon)
data = {"TN": prepare("TN", tn, model), "POS": prepare("POS", pos, model), "HD": prepare("HD", hd, model)}


def fitted(report):
    m = report.metrics
    return m["tn.line_acc"] >= 0.95 and m["pos.acc"] >= 0.99 and m["hd.micro"] == 1.0


cfg = TrainConfig(batch_size=16, total_iterations=3000, val_every=150)
t0 = time.perf_counter()
result = train_loop(model, data, cfg, val_sets=data, stop_when=fitted, log_path=out / "metrics.jsonl")
print(f"trained {result.iterations} steps in {time.perf_counter() - t0:.1f}s, per task {result.task_steps}")
for step, report in result.evaluations:
    print(f"  step {step:5d}", {k: round(v, 4) for k, v in report.metrics.items()})

save_checkpoint(model, out / "model.ckpt")
model = load_checkpoint(out / "model.ckpt")

# The desk model has memorized its corpus; it is not a general-purpose front-end.
print(model.normalize([ex.text for ex in tn[:4]]))
print(model.tag([pos[0].text]))
sentence = "Yesterday I read the report."
start = sentence.index("read")
print(model.disambiguate([model.hd_input(sentence, "read", (start, start + 4))]))
