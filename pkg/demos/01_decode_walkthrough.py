"""Walk one sentence through tokenization, rule masking and beam decoding.

No training needed: we hand-build rule logits to show how the decoder
turns per-token scores into a spoken form.

    python demos/01_decode_walkthrough.py
"""

import numpy as np

from ttsfront.decoder import beam_search, brute_force_decode, mask_logits, render
from ttsfront.rules import applicability_mask, default_registry
from ttsfront.tokenizer import tokenize

registry = default_registry()
text = "St. Mary's St. is 7/8 miles"
seq = tokenize(text)

# Tokens split on unicode category changes inside each whitespace word.
print("tokens:", [t.text for t in seq.tokens])

# Only rules whose matcher fires at a token may start there.
mask = applicability_mask(seq, registry)
for i, tok in enumerate(seq.tokens):
    names = [registry[r].name for r in np.flatnonzero(mask[i])]
    print(f"  {tok.text!r:10} {names}")

# Pretend a model prefers saint-then-street readings of "St.".
logits = np.zeros(mask.shape)
logits[0, registry.id_of("ST_AS_SAINT")] = 4.0
logits[5, registry.id_of("ST_AS_STREET")] = 4.0
masked = mask_logits(logits, mask)

plan = beam_search(masked, seq, registry, beam_width=8)
print("\nplan:", [(a.start, registry[a.rule_id].name, a.span) for a in plan.applications])
print("spoken:", render(plan, seq, registry))

# The beam is exact here: brute force over every cover agrees.
assert brute_force_decode(masked, seq, registry).rule_ids == plan.rule_ids
print("score:", round(plan.score, 4), "(matches exhaustive search)")
