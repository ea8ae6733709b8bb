"""Training loop: Adam with bias correction, staircase learning-rate decay,
elementwise gradient clipping, and best-validation-UA model selection.

Validation runs at segment level each epoch: sub-segment posteriors are
aggregated per parent segment under each strategy and the best strategy's
unweighted average recall decides which parameters to keep.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigError, DataError, NumericsError
from .model import GENDER_CLASSES, EmotionRecognizer
from .net import multitask_total, softmax_cross_entropy
from .segments import SubSegment


@dataclass(frozen=True)
class OptimizerConfig:
    lr0: float = 1e-4
    decay_rate: float = 0.9
    decay_steps: int = 1000
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_lo: float = -1.0
    clip_hi: float = 1.0
    batch_size: int = 32
    max_epochs: int = 100

    def __post_init__(self) -> None:
        if self.lr0 <= 0 or not 0 < self.decay_rate <= 1 or self.decay_steps < 1:
            raise ConfigError("bad learning-rate schedule")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.eps > 0):
            raise ConfigError("bad Adam moments configuration")
        if self.clip_lo >= self.clip_hi:
            raise ConfigError("clip_lo must be below clip_hi")
        if self.batch_size < 1 or self.max_epochs < 0:
            raise ConfigError("batch_size must be >= 1 and max_epochs >= 0")


def lr_at_step(step: int, cfg: OptimizerConfig = OptimizerConfig()) -> float:
    """Staircase decay: lr0 * decay_rate ** floor(step / decay_steps)."""
    if step < 0:
        raise ConfigError(f"step must be nonnegative, got {step}")
    return cfg.lr0 * cfg.decay_rate ** (step // cfg.decay_steps)


def clip_gradients(grads: dict[str, np.ndarray], lo: float = -1.0,
                   hi: float = 1.0) -> dict[str, np.ndarray]:
    """Clamp every gradient element to [lo, hi]; NaN anywhere is a hard error."""
    out = {}
    for name, g in grads.items():
        if np.isnan(g).any():
            raise NumericsError(f"NaN gradient in tensor {name!r}")
        out[name] = np.clip(g, lo, hi)
    return out


@dataclass
class AdamState:
    step: int
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]

    @classmethod
    def for_params(cls, params: dict[str, np.ndarray]) -> "AdamState":
        return cls(step=0,
                   m={k: np.zeros_like(p) for k, p in params.items()},
                   v={k: np.zeros_like(p) for k, p in params.items()})


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: AdamState, cfg: OptimizerConfig = OptimizerConfig()) -> float:
    """One in-place Adam update; returns the learning rate that was applied."""
    if set(grads) != set(params):
        raise DataError(f"gradient names mismatch: {sorted(set(grads) ^ set(params))}")
    lr = lr_at_step(state.step, cfg)
    t = state.step + 1
    bias1 = 1.0 - cfg.beta1 ** t
    bias2 = 1.0 - cfg.beta2 ** t
    for name, p in params.items():
        g = grads[name].astype(p.dtype, copy=False)
        m = state.m[name]
        v = state.v[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * g * g
        p -= lr * (m / bias1) / (np.sqrt(v / bias2) + cfg.eps)
    state.step = t
    return lr


@dataclass
class FitResult:
    best_params: dict[str, np.ndarray]
    best_val_ua: float | None
    best_val_wa: float | None
    best_strategy: str | None
    best_epoch: int
    log: list[dict] = field(default_factory=list)


def _encode_labels(subsegments: Sequence[SubSegment],
                   class_names: Sequence[str]) -> tuple[np.ndarray, np.ndarray]:
    emotions = np.zeros(len(subsegments), dtype=np.int64)
    genders = np.zeros(len(subsegments), dtype=np.int64)
    for i, seg in enumerate(subsegments):
        try:
            emotions[i] = class_names.index(seg.emotion_label)
        except ValueError:
            raise DataError(f"label {seg.emotion_label!r} not among classes "
                            f"{list(class_names)}") from None
        try:
            genders[i] = GENDER_CLASSES.index(seg.gender_label)
        except ValueError:
            raise DataError(f"gender {seg.gender_label!r} not in "
                            f"{GENDER_CLASSES}") from None
    return emotions, genders


def snapshot_preferred(val_ua: float, val_aux_ua: float | None,
                       best_ua: float | None,
                       best_aux_ua: float | None) -> bool:
    """Should this epoch replace the best snapshot so far?

    Selection is by validation UA; exact ties go to the epoch with the
    higher auxiliary (gender) validation UA, so a saturating primary
    metric cannot freeze a half-trained auxiliary head. Remaining ties
    keep the earliest epoch.
    """
    if best_ua is None or val_ua > best_ua:
        return True
    if val_ua == best_ua and val_aux_ua is not None and best_aux_ua is not None:
        return val_aux_ua > best_aux_ua
    return False


def fit(model: EmotionRecognizer, train_subsegments: Sequence[SubSegment],
        val_segments: Sequence, cfg: OptimizerConfig = OptimizerConfig(),
        class_names: Sequence[str] = (), seed: int = 0) -> FitResult:
    """Train on sub-segments, validating per epoch at segment level.

    Keeps a snapshot of the parameters with the best validation UA across
    epochs (ties resolved per snapshot_preferred). With max_epochs = 0 the
    initial state is returned and the log stays empty.
    """
    from .evaluate import (make_model_predictor, select_strategy,
                           validation_report)

    if not train_subsegments:
        raise DataError("no training sub-segments")
    if not val_segments:
        raise DataError("no validation segments")
    class_names = list(class_names)
    if len(class_names) != model.spec.n_emotions:
        raise ConfigError(f"{len(class_names)} class names for a "
                          f"{model.spec.n_emotions}-way model")

    params = model.params()
    if cfg.max_epochs == 0:
        return FitResult(best_params={k: p.copy() for k, p in params.items()},
                         best_val_ua=None, best_val_wa=None, best_strategy=None,
                         best_epoch=-1, log=[])

    values = np.stack([s.values for s in train_subsegments])
    valid = np.array([s.valid_frames for s in train_subsegments], dtype=np.int64)
    y_emotion, y_gender = _encode_labels(train_subsegments, class_names)

    rng = np.random.default_rng(seed)
    state = AdamState.for_params(params)
    best: FitResult | None = None
    best_gender_ua: float | None = None
    log: list[dict] = []
    n = len(train_subsegments)
    for epoch in range(cfg.max_epochs):
        order = rng.permutation(n)
        epoch_losses = []
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            xb = values[idx][:, None, :, :]
            logits_e, logits_g, cache = model.forward(xb, valid[idx],
                                                      train=True, rng=rng)
            losses_e, _, grad_e = softmax_cross_entropy(logits_e, y_emotion[idx])
            d_emotion = (grad_e / len(idx)).astype(model.dtype)
            d_gender = None
            loss_gender = None
            if logits_g is not None:
                losses_g, _, grad_g = softmax_cross_entropy(logits_g, y_gender[idx])
                loss_gender = float(losses_g.mean())
                d_gender = (grad_g / len(idx)).astype(model.dtype)
            breakdown = multitask_total(float(losses_e.mean()), loss_gender)
            if not math.isfinite(breakdown.total):
                raise NumericsError(
                    f"non-finite training loss at epoch {epoch}, step {state.step}"
                )
            _, grads = model.backward(cache, d_emotion, d_gender)
            grads = clip_gradients(grads, cfg.clip_lo, cfg.clip_hi)
            adam_step(params, grads, state, cfg)
            epoch_losses.append(breakdown.total)

        metrics, val_gender_ua = validation_report(make_model_predictor(model),
                                                   val_segments, class_names)
        strategy = select_strategy({name: ua for name, (ua, _) in metrics.items()})
        val_ua, val_wa = metrics[strategy]
        log.append({"epoch": epoch, "train_loss": float(np.mean(epoch_losses)),
                    "val_ua": val_ua, "val_wa": val_wa, "strategy": strategy,
                    "lr": lr_at_step(state.step, cfg)})
        if snapshot_preferred(val_ua, val_gender_ua,
                              None if best is None else best.best_val_ua,
                              best_gender_ua):
            best = FitResult(best_params={k: p.copy() for k, p in params.items()},
                             best_val_ua=val_ua, best_val_wa=val_wa,
                             best_strategy=strategy, best_epoch=epoch, log=log)
            best_gender_ua = val_gender_ua
    assert best is not None
    best.log = log
    return best
