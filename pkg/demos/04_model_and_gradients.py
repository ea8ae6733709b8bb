"""Build both network variants, run a batch through them, and verify
backpropagation against finite differences.
"""

import numpy as np

from serkit.gradcheck import THRESHOLD, run_gradcheck
from serkit.model import (EmotionRecognizer, chain_valid, default_2d_spec,
                          default_temporal_spec, stack_output_shape)
from serkit.net import multitask_total, softmax_cross_entropy

for label, spec in (("temporal", default_temporal_spec(input_dims=120)),
                    ("2d", default_2d_spec(input_dims=120))):
    model = EmotionRecognizer(spec, seed=0)
    out_t, out_f, out_c = stack_output_shape(spec)
    print(f"{label} variant: {model.param_count():,} parameters, "
          f"conv stack output {out_t}x{out_f}x{out_c}")

# Valid-length bookkeeping follows the convolution geometry exactly: a
# 238-frame input keeps shrinking in step with the executed shapes.
spec = default_temporal_spec(input_dims=120)
valid = np.array([300, 238, 97])
print(f"\nvalid frames {valid.tolist()} -> {chain_valid(valid, spec).tolist()} "
      "after the conv stack")

model = EmotionRecognizer(spec, seed=0)
rng = np.random.default_rng(1)
x = rng.standard_normal((4, 1, 300, 120)).astype(np.float32)
emotions = np.array([0, 1, 2, 3])
genders = np.array([0, 1, 0, 1])

logits_e, logits_g, cache = model.forward(x, np.array([300, 238, 97, 150]))
losses_e, _, grad_e = softmax_cross_entropy(logits_e, emotions)
losses_g, _, grad_g = softmax_cross_entropy(logits_g, genders)
breakdown = multitask_total(float(losses_e.mean()), float(losses_g.mean()))
print(f"\nbatch of 4: emotion loss {breakdown.emotion:.4f} + "
      f"gender loss {breakdown.gender:.4f} = {breakdown.total:.4f}")

_, grads = model.backward(cache, (grad_e / 4).astype(np.float32),
                          (grad_g / 4).astype(np.float32))
print(f"gradient tensors: {len(grads)} "
      f"(largest magnitude {max(float(np.abs(g).max()) for g in grads.values()):.4f})")

# Central-difference verification of every layer plus assembled models.
print(f"\nrunning gradient checks (threshold {THRESHOLD:g})...")
report = run_gradcheck(seed=0)
for name, err in sorted(report["checks"].items(), key=lambda kv: -kv[1]):
    print(f"  {name:16s} {err:.2e}")
print(f"overall: max {report['max_error']:.2e}, pass={report['pass']}")
