"""Speaker-independent cross-validation on a small synthetic corpus,
entirely through the library API.

Takes a couple of minutes on one CPU core; shrink the corpus or epochs
to go faster.
"""

import tempfile
import time
from pathlib import Path

from serkit.audio import load_wav
from serkit.corpus import speaker_kfold
from serkit.evaluate import crossval
from serkit.features import featurize_signal
from serkit.synth import generate_synthetic_corpus
from serkit.train import OptimizerConfig

out = Path(tempfile.mkdtemp(prefix="serkit_demo_cv_"))
records = generate_synthetic_corpus(out, seed=13, n_speakers=8,
                                    segments_per_speaker=12,
                                    duration_range_s=(1.0, 3.0))
print(f"{len(records)} utterances from 8 speakers under {out}")

# Raw (unnormalized) features; the harness fits fold-local statistics.
features = {rec.id: featurize_signal(load_wav(out / rec.audio_path),
                                     n_mels=40, use_deltas=False)
            for rec in records}

for fold in speaker_kfold(records, k=2, seed=3):
    print(f"fold {fold.fold_index}: train={fold.train_speakers} "
          f"val={fold.val_speakers} test={fold.test_speakers}")

t0 = time.monotonic()
result = crossval(records, features,
                  class_names=["anger", "fear", "positive", "neutral"],
                  opt=OptimizerConfig(lr0=1e-3, batch_size=64, max_epochs=8),
                  k=2, seed=3)
elapsed = time.monotonic() - t0

report = result.pooled
print(f"\nper-fold UA:  {[round(u, 3) for u in report['fold_ua']]}")
print(f"mean UA {report['mean_ua']:.3f}, pooled WA {report['pooled_wa']:.3f} "
      f"in {elapsed:.0f}s")
print(f"auxiliary gender head, pooled UA: {report['gender_pooled_ua']:.3f}")
for fold in result.folds:
    print(f"fold {fold.fold_index} confusion: {fold.report['confusion']}")
