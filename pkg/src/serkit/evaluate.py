"""Segment-level evaluation: confusion matrices, unweighted/weighted average
recall, posterior aggregation across sub-segments, strategy selection,
speaker-independent cross-validation, and cross-corpus transfer runs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .corpus import (FoldSplit, UtteranceRecord, downsample_neutral,
                     oversample_balance, records_for_speakers, speaker_kfold)
from .errors import ConfigError, DataError
from .features import FeatureStats
from .model import GENDER_CLASSES, EmotionRecognizer, ModelSpec
from .segments import ChopConfig, SubSegment, chop
from .train import FitResult, OptimizerConfig, fit

STRATEGIES = ("majority", "mean", "max")


# --- confusion matrices and recall metrics ----------------------------------


@dataclass
class ConfusionMatrix:
    """Rows are true classes, columns are predictions."""

    counts: np.ndarray
    class_names: tuple[str, ...]

    def __post_init__(self) -> None:
        self.counts = np.asarray(self.counts, dtype=np.int64)
        e = len(self.class_names)
        if self.counts.shape != (e, e):
            raise DataError(f"confusion matrix {self.counts.shape} does not "
                            f"match {e} classes")
        if (self.counts < 0).any():
            raise DataError("confusion matrix counts must be nonnegative")

    @classmethod
    def from_pairs(cls, truths: Sequence[int], preds: Sequence[int],
                   class_names: Sequence[str]) -> "ConfusionMatrix":
        e = len(class_names)
        counts = np.zeros((e, e), dtype=np.int64)
        for t, p in zip(truths, preds, strict=True):
            counts[t, p] += 1
        return cls(counts=counts, class_names=tuple(class_names))

    @property
    def n(self) -> int:
        return int(self.counts.sum())


def recall_per_class(cm: ConfusionMatrix) -> np.ndarray:
    """Diagonal over row sums; a class with no true instances is an error."""
    support = cm.counts.sum(axis=1)
    empty = np.flatnonzero(support == 0)
    if empty.size:
        raise DataError(f"recall undefined: class {cm.class_names[int(empty[0])]!r} "
                        f"has no true instances")
    return cm.counts.diagonal() / support


def unweighted_average_recall(cm: ConfusionMatrix) -> float:
    """UA: plain mean of per-class recalls."""
    return float(recall_per_class(cm).mean())


def weighted_average_recall(cm: ConfusionMatrix) -> float:
    """WA: support-weighted mean recall, identical to trace/N."""
    if cm.n == 0:
        raise DataError("weighted recall undefined on an empty matrix")
    return float(cm.counts.diagonal().sum() / cm.n)


def _present_class_ua(truths: np.ndarray, preds: np.ndarray,
                      n_classes: int) -> float:
    # Mean recall over classes that actually occur; used for validation-time
    # strategy selection where strict undefined-exclusion could exclude all.
    recalls = []
    for c in range(n_classes):
        mask = truths == c
        if mask.any():
            recalls.append(float((preds[mask] == c).mean()))
    if not recalls:
        raise DataError("no segments to score")
    return float(np.mean(recalls))


# --- sub-segment aggregation --------------------------------------------------


def aggregate_segment(posteriors: np.ndarray,
                      strategy: str) -> tuple[int, np.ndarray]:
    """Fuse one segment's sub-segment posteriors into (class, vector).

    majority: modal argmax over sub-segments (vector = vote shares); a modal
    tie falls back to the mean strategy. mean/max: argmax of the elementwise
    mean/max vector. Argmax ties resolve to the lowest class index.
    """
    posteriors = np.asarray(posteriors, dtype=np.float64)
    if posteriors.ndim != 2 or posteriors.shape[0] == 0:
        raise DataError(f"expected (subsegments, classes), got {posteriors.shape}")
    if strategy == "mean":
        vector = posteriors.mean(axis=0)
        return int(vector.argmax()), vector
    if strategy == "max":
        vector = posteriors.max(axis=0)
        return int(vector.argmax()), vector
    if strategy == "majority":
        votes = np.bincount(posteriors.argmax(axis=1),
                            minlength=posteriors.shape[1])
        winners = np.flatnonzero(votes == votes.max())
        if winners.size > 1:
            return aggregate_segment(posteriors, "mean")
        return int(winners[0]), votes / votes.sum()
    raise ConfigError(f"unknown aggregation strategy {strategy!r}")


def select_strategy(ua_by_strategy: Mapping[str, float | None]) -> str:
    """Best strategy by UA; ties and near-ties resolve majority > mean > max."""
    best_name = None
    best_ua = None
    for name in STRATEGIES:
        ua = ua_by_strategy.get(name)
        if ua is None:
            continue
        if best_ua is None or ua > best_ua:
            best_name, best_ua = name, ua
    if best_name is None:
        raise ConfigError("every aggregation strategy is undefined")
    return best_name


# --- segment grouping and predictors ------------------------------------------


@dataclass
class SegmentGroup:
    """All sub-segments of one parent segment, stacked for batched scoring."""

    segment_id: str
    speaker_id: str
    emotion_label: str
    gender_label: str
    values: np.ndarray  # (n_subsegments, frames, dims) float32
    valid: np.ndarray   # (n_subsegments,) int64

    @classmethod
    def from_subsegments(cls, subsegments: Sequence[SubSegment]) -> "SegmentGroup":
        if not subsegments:
            raise DataError("a segment group needs at least one sub-segment")
        first = subsegments[0]
        return cls(segment_id=first.parent_segment_id, speaker_id=first.speaker_id,
                   emotion_label=first.emotion_label,
                   gender_label=first.gender_label,
                   values=np.stack([s.values for s in subsegments]),
                   valid=np.array([s.valid_frames for s in subsegments],
                                  dtype=np.int64))


PredictGroupsFn = Callable[[Sequence[SegmentGroup]],
                           list[tuple[np.ndarray, np.ndarray | None]]]


def make_model_predictor(model: EmotionRecognizer,
                         batch_size: int = 256) -> PredictGroupsFn:
    """Batched eval-mode posteriors per group from one concatenated pass."""

    def predict_groups(groups: Sequence[SegmentGroup]):
        values = np.concatenate([g.values for g in groups])
        valid = np.concatenate([g.valid for g in groups])
        probs_e, probs_g = model.predict_posteriors(values, valid, batch_size)
        out = []
        offset = 0
        for g in groups:
            n = g.values.shape[0]
            out.append((probs_e[offset:offset + n],
                        None if probs_g is None else probs_g[offset:offset + n]))
            offset += n
        return out

    return predict_groups


def validation_report(predict_groups: PredictGroupsFn,
                      groups: Sequence[SegmentGroup],
                      class_names: Sequence[str],
                      ) -> tuple[dict[str, tuple[float, float]], float | None]:
    """Per-strategy emotion (UA, WA) plus gender UA, from one posterior pass.

    UA here averages over classes present in the set, so selection stays
    defined even when a split is missing a class. The gender figure uses
    mean fusion (as at test time) and is None for single-task models.
    """
    class_names = list(class_names)
    posts = predict_groups(groups)
    truths = np.array([class_names.index(g.emotion_label) for g in groups],
                      dtype=np.int64)
    out = {}
    for strategy in STRATEGIES:
        preds = np.array([aggregate_segment(pe, strategy)[0] for pe, _ in posts],
                         dtype=np.int64)
        out[strategy] = (_present_class_ua(truths, preds, len(class_names)),
                         float((preds == truths).mean()))
    gender_ua = None
    if posts and posts[0][1] is not None:
        g_truths = np.array([GENDER_CLASSES.index(g.gender_label)
                             for g in groups], dtype=np.int64)
        g_preds = np.array([aggregate_segment(pg, "mean")[0]
                            for _, pg in posts], dtype=np.int64)
        gender_ua = _present_class_ua(g_truths, g_preds, len(GENDER_CLASSES))
    return out, gender_ua


def validation_metrics(predict_groups: PredictGroupsFn,
                       groups: Sequence[SegmentGroup],
                       class_names: Sequence[str]) -> dict[str, tuple[float, float]]:
    """Per-strategy (UA, WA) over the given segments."""
    return validation_report(predict_groups, groups, class_names)[0]


# --- reports -------------------------------------------------------------------


def _report_from_predictions(truths: np.ndarray, preds: np.ndarray,
                             class_names: Sequence[str], strategy: str,
                             gender_truths: np.ndarray | None = None,
                             gender_preds: np.ndarray | None = None) -> dict:
    cm = ConfusionMatrix.from_pairs(truths.tolist(), preds.tolist(), class_names)
    support = cm.counts.sum(axis=1)
    absent = [name for name, s in zip(cm.class_names, support) if s == 0]
    recalls = [float(cm.counts[i, i] / support[i]) if support[i] else None
               for i in range(len(class_names))]
    defined = [r for r in recalls if r is not None]
    report = {
        "class_names": list(class_names),
        "n_segments": cm.n,
        "strategy": strategy,
        "confusion": cm.counts.tolist(),
        "per_class_recall": recalls,
        "ua": float(np.mean(defined)) if not absent else None,
        "ua_present": float(np.mean(defined)),
        "wa": weighted_average_recall(cm),
        "absent_classes": absent,
    }
    if gender_truths is not None and gender_preds is not None:
        gcm = ConfusionMatrix.from_pairs(gender_truths.tolist(),
                                         gender_preds.tolist(), GENDER_CLASSES)
        gsupport = gcm.counts.sum(axis=1)
        grecalls = [float(gcm.counts[i, i] / gsupport[i]) if gsupport[i] else None
                    for i in range(len(GENDER_CLASSES))]
        gdefined = [r for r in grecalls if r is not None]
        report["gender"] = {
            "class_names": list(GENDER_CLASSES),
            "confusion": gcm.counts.tolist(),
            "per_class_recall": grecalls,
            "ua": float(np.mean(gdefined)) if all(gsupport) else None,
            "wa": weighted_average_recall(gcm),
        }
    return report


def evaluate_groups(predict_groups: PredictGroupsFn,
                    groups: Sequence[SegmentGroup],
                    class_names: Sequence[str], strategy: str) -> dict:
    """Score segments with a fixed emotion strategy; gender uses mean fusion."""
    class_names = list(class_names)
    posts = predict_groups(groups)
    truths = np.array([class_names.index(g.emotion_label) for g in groups],
                      dtype=np.int64)
    preds = np.array([aggregate_segment(pe, strategy)[0] for pe, _ in posts],
                     dtype=np.int64)
    gender_truths = gender_preds = None
    if posts and posts[0][1] is not None:
        gender_truths = np.array([GENDER_CLASSES.index(g.gender_label)
                                  for g in groups], dtype=np.int64)
        gender_preds = np.array([aggregate_segment(pg, "mean")[0]
                                 for _, pg in posts], dtype=np.int64)
    return _report_from_predictions(truths, preds, class_names, strategy,
                                    gender_truths, gender_preds)


# --- fold pipeline ----------------------------------------------------------------


@dataclass
class TrainedPredictor:
    predict_groups: PredictGroupsFn
    strategy: str
    log: list[dict]
    params: dict[str, np.ndarray] | None = None
    model_spec: ModelSpec | None = None
    fit_result: FitResult | None = None


TrainerFn = Callable[[list[SubSegment], list[SegmentGroup], int], TrainedPredictor]


def chop_records(records: Sequence[UtteranceRecord],
                  features: Mapping[str, np.ndarray], stats: FeatureStats,
                  chop_cfg: ChopConfig) -> dict[str, list[SubSegment]]:
    out = {}
    for rec in records:
        try:
            raw = features[rec.id]
        except KeyError:
            raise DataError(f"no features for record {rec.id!r}") from None
        out[rec.id] = chop(stats.normalize(raw), chop_cfg, parent_id=rec.id,
                           emotion=rec.emotion, gender=rec.gender,
                           speaker=rec.speaker_id)
    return out


def groups_for(records: Sequence[UtteranceRecord],
                chopped: Mapping[str, list[SubSegment]]) -> list[SegmentGroup]:
    return [SegmentGroup.from_subsegments(chopped[rec.id]) for rec in records]


def default_trainer(model_spec_fn: Callable[..., ModelSpec],
                    class_names: Sequence[str], opt: OptimizerConfig,
                    multitask: bool, input_frames: int,
                    input_dims: int) -> TrainerFn:
    """Build-and-fit trainer used by crossval unless a stub is injected."""

    def train(train_subsegs: list[SubSegment], val_groups: list[SegmentGroup],
              seed: int) -> TrainedPredictor:
        spec = model_spec_fn(input_dims=input_dims, input_frames=input_frames,
                             n_emotions=len(class_names), multitask=multitask)
        model = EmotionRecognizer(spec, seed=seed)
        result = fit(model, train_subsegs, val_groups, opt,
                     class_names=class_names, seed=seed)
        model.set_params(result.best_params)
        return TrainedPredictor(predict_groups=make_model_predictor(model),
                                strategy=result.best_strategy or "majority",
                                log=result.log, params=result.best_params,
                                model_spec=spec, fit_result=result)

    return train


@dataclass
class FoldOutcome:
    fold_index: int
    split: FoldSplit
    report: dict
    log: list[dict]
    strategy: str
    params: dict[str, np.ndarray] | None
    model_spec: ModelSpec | None


@dataclass
class CrossvalResult:
    folds: list[FoldOutcome]
    pooled: dict


def _pooled_report(folds: Sequence[FoldOutcome], class_names: Sequence[str],
                   k: int) -> dict:
    fold_ua = [f.report["ua"] for f in folds]
    fold_wa = [f.report["wa"] for f in folds]
    defined = [(i, ua) for i, ua in enumerate(fold_ua) if ua is not None]
    if not defined:
        raise DataError("UA undefined in every fold")
    best_idx, best_ua = max(defined, key=lambda pair: pair[1])
    pooled_counts = np.sum([np.asarray(f.report["confusion"]) for f in folds],
                           axis=0)
    pooled_cm = ConfusionMatrix(counts=pooled_counts,
                                class_names=tuple(class_names))
    pooled = {
        "k": k,
        "class_names": list(class_names),
        "fold_ua": fold_ua,
        "fold_wa": fold_wa,
        "fold_strategy": [f.strategy for f in folds],
        "mean_ua": float(np.mean([ua for _, ua in defined])),
        "mean_wa": float(np.mean(fold_wa)),
        "best_fold": int(folds[best_idx].fold_index),
        "best_ua": float(best_ua),
        "best_wa": float(fold_wa[best_idx]),
        "pooled_confusion": pooled_counts.tolist(),
        "pooled_ua": unweighted_average_recall(pooled_cm),
        "pooled_wa": weighted_average_recall(pooled_cm),
    }
    gender_reports = [f.report["gender"] for f in folds if "gender" in f.report]
    if len(gender_reports) == len(folds):
        # Per-fold gender UA can be undefined when a small test group is
        # single-gender; pooling over folds always covers both classes.
        gender_counts = np.sum([np.asarray(g["confusion"]) for g in gender_reports],
                               axis=0)
        gender_cm = ConfusionMatrix(counts=gender_counts,
                                    class_names=GENDER_CLASSES)
        pooled["gender_fold_ua"] = [g["ua"] for g in gender_reports]
        pooled["gender_pooled_confusion"] = gender_counts.tolist()
        pooled["gender_pooled_ua"] = unweighted_average_recall(gender_cm)
        pooled["gender_pooled_wa"] = weighted_average_recall(gender_cm)
    return pooled


def crossval(records: Sequence[UtteranceRecord],
             features: Mapping[str, np.ndarray],
             class_names: Sequence[str],
             opt: OptimizerConfig = OptimizerConfig(),
             chop_cfg: ChopConfig = ChopConfig(),
             model_spec_fn: Callable[..., ModelSpec] | None = None,
             k: int = 5, seed: int = 0, multitask: bool = True,
             neutral_fraction: float | None = None,
             neutral_label: str = "neutral",
             trainer: TrainerFn | None = None,
             fold_indices: Sequence[int] | None = None) -> CrossvalResult:
    """Speaker-independent k-fold run over precomputed raw features.

    Per fold: normalization statistics come from that fold's training
    speakers only, training sub-segments are oversampled to class balance,
    and the test report uses the strategy picked on validation data.
    """
    from .model import default_temporal_spec

    class_names = list(class_names)
    record_list = list(records)
    sample = features[record_list[0].id]
    input_dims = sample.shape[1]
    input_frames = chop_cfg.window_frames
    if model_spec_fn is None:
        model_spec_fn = default_temporal_spec
    folds = speaker_kfold(record_list, k=k, seed=seed)
    if fold_indices is not None:
        folds = [folds[i] for i in fold_indices]
    outcomes = []
    for split in folds:
        fold_seed = seed + 9973 * (split.fold_index + 1)
        train_records = records_for_speakers(record_list, split.train_speakers)
        val_records = records_for_speakers(record_list, split.val_speakers)
        test_records = records_for_speakers(record_list, split.test_speakers)
        if neutral_fraction is not None:
            train_records = downsample_neutral(train_records, neutral_fraction,
                                               seed=fold_seed,
                                               neutral_label=neutral_label)
        stats = FeatureStats.from_matrices([features[r.id] for r in train_records])
        chopped = chop_records(train_records + val_records + test_records,
                                features, stats, chop_cfg)
        train_subsegs = [s for rec in train_records for s in chopped[rec.id]]
        train_subsegs = oversample_balance(train_subsegs, seed=fold_seed)
        val_groups = groups_for(val_records, chopped)
        test_groups = groups_for(test_records, chopped)
        fold_trainer = trainer if trainer is not None else default_trainer(
            model_spec_fn, class_names, opt, multitask, input_frames, input_dims)
        trained = fold_trainer(train_subsegs, val_groups, fold_seed)
        report = evaluate_groups(trained.predict_groups, test_groups,
                                 class_names, trained.strategy)
        report["fold"] = split.fold_index
        report["test_speakers"] = sorted(split.test_speakers)
        outcomes.append(FoldOutcome(
            fold_index=split.fold_index, split=split, report=report,
            log=trained.log, strategy=trained.strategy, params=trained.params,
            model_spec=trained.model_spec))
    return CrossvalResult(folds=outcomes,
                          pooled=_pooled_report(outcomes, class_names, k))


def cross_corpus(train_records: Sequence[UtteranceRecord],
                 train_features: Mapping[str, np.ndarray],
                 test_records: Sequence[UtteranceRecord],
                 test_features: Mapping[str, np.ndarray],
                 class_names: Sequence[str],
                 opt: OptimizerConfig = OptimizerConfig(),
                 chop_cfg: ChopConfig = ChopConfig(),
                 model_spec_fn: Callable[..., ModelSpec] | None = None,
                 seed: int = 0, multitask: bool = True,
                 val_fraction: float = 0.2,
                 trainer: TrainerFn | None = None) -> dict:
    """Train on corpus A (internal speaker-split validation), test on corpus B.

    Corpus B is normalized with A's training statistics. The corpora must
    not share utterances (ids alone may collide across independently built
    corpora, so identity means the whole record matching) and must cover
    the same class set after mapping.
    """
    from .model import default_temporal_spec

    def fingerprint(rec: UtteranceRecord):
        return (rec.id, rec.audio_path, rec.speaker_id, rec.gender,
                rec.emotion, rec.duration_s)

    class_names = list(class_names)
    overlap = ({fingerprint(r) for r in train_records}
               & {fingerprint(r) for r in test_records})
    if overlap:
        raise DataError(f"corpora share {len(overlap)} utterances; "
                        "cross-corpus runs need distinct corpora")
    train_classes = {r.emotion for r in train_records}
    test_classes = {r.emotion for r in test_records}
    if train_classes != test_classes:
        raise DataError(f"class sets differ after mapping: "
                        f"{sorted(train_classes)} vs {sorted(test_classes)}")
    if not 0.0 < val_fraction < 1.0:
        raise ConfigError(f"val_fraction must be in (0, 1), got {val_fraction}")
    speakers = sorted({r.speaker_id for r in train_records})
    if len(speakers) < 2:
        raise DataError("need at least 2 training speakers for an internal split")
    rng = np.random.default_rng(seed)
    order = [speakers[i] for i in rng.permutation(len(speakers))]
    n_val = max(1, int(round(val_fraction * len(speakers))))
    val_speakers = order[:n_val]
    fit_speakers = order[n_val:]
    fit_records = records_for_speakers(train_records, fit_speakers)
    val_records = records_for_speakers(train_records, val_speakers)

    sample = train_features[fit_records[0].id]
    input_dims = sample.shape[1]
    input_frames = chop_cfg.window_frames
    if model_spec_fn is None:
        model_spec_fn = default_temporal_spec
    stats = FeatureStats.from_matrices([train_features[r.id] for r in fit_records])
    chopped = chop_records(fit_records + val_records, train_features, stats,
                            chop_cfg)
    train_subsegs = oversample_balance(
        [s for rec in fit_records for s in chopped[rec.id]], seed=seed)
    val_groups = groups_for(val_records, chopped)
    run_trainer = trainer if trainer is not None else default_trainer(
        model_spec_fn, class_names, opt, multitask, input_frames, input_dims)
    trained = run_trainer(train_subsegs, val_groups, seed)

    test_chopped = chop_records(test_records, test_features, stats, chop_cfg)
    test_groups = groups_for(test_records, test_chopped)
    report = evaluate_groups(trained.predict_groups, test_groups, class_names,
                             trained.strategy)
    report["direction"] = "train-on-A/test-on-B"
    report["n_train_records"] = len(fit_records)
    report["n_val_records"] = len(val_records)
    return report
