"""Train one model per task subset and print the comparison table.

Each model gets the same number of steps per task it trains, so a
three-task model trains three times as long as a single-task one.

    python demos/03_ablation.py [per_task_iters]
"""

import sys

from ttsfront.data import stratified_split
from ttsfront.model import ModelConfig
from ttsfront.synth import SynthSpec, synth_corpus
from ttsfront.training import TrainConfig, ablation_grid, format_table

per_task = int(sys.argv[1]) if len(sys.argv) > 1 else 50
tn, pos, hd, lexicon = synth_corpus(SynthSpec(), seed=0)

# Hold out a balanced slice of the homograph data; TN and POS split 80/20.
hd_train, hd_test = stratified_split(hd, 0.8, seed=0)
train = {"TN": tn[:40], "POS": pos[:40], "HD": hd_train}
test = {"TN": tn[40:], "POS": pos[40:], "HD": hd_test}

rows = ablation_grid(ModelConfig(), TrainConfig(batch_size=16), train, test, per_task, lexicon=lexicon)
print(format_table(rows))
