"""Metrics against brute-force loops, aggregation rules, strategy selection,
and the fold pipeline exercised with stub predictors (no real training).
"""

import numpy as np
import pytest

from serkit.corpus import UtteranceRecord
from serkit.errors import ConfigError, DataError
from serkit.evaluate import (ConfusionMatrix, SegmentGroup, TrainedPredictor,
                             aggregate_segment, chop_records, cross_corpus,
                             crossval, evaluate_groups, groups_for,
                             make_model_predictor, recall_per_class,
                             select_strategy, unweighted_average_recall,
                             validation_metrics, weighted_average_recall)
from serkit.features import FeatureStats
from serkit.model import EmotionRecognizer, ModelSpec
from serkit.net import ConvSpec
from serkit.segments import ChopConfig


# --- recall metrics ------------------------------------------------------------


def test_metrics_match_brute_force():
    rng = np.random.default_rng(101)
    names = ("a", "b", "c", "d")
    for _ in range(1000):
        counts = rng.integers(0, 50, size=(4, 4))
        counts[np.arange(4), rng.integers(0, 4, size=4)] += 1  # nonzero rows
        cm = ConfusionMatrix(counts=counts, class_names=names)
        recalls = recall_per_class(cm)
        total = 0
        correct = 0
        for i in range(4):
            row = counts[i].sum()
            assert abs(recalls[i] - counts[i, i] / row) < 1e-12
            total += row
            correct += counts[i, i]
        assert abs(unweighted_average_recall(cm) - recalls.sum() / 4) < 1e-12
        assert abs(weighted_average_recall(cm) - correct / total) < 1e-12


def test_balanced_ua_equals_wa():
    rng = np.random.default_rng(103)
    names = ("a", "b", "c")
    for _ in range(200):
        counts = rng.integers(0, 30, size=(3, 3))
        row_sums = counts.sum(axis=1)
        counts[:, 0] += row_sums.max() - row_sums  # equalize supports
        cm = ConfusionMatrix(counts=counts, class_names=names)
        if cm.counts.sum(axis=1).min() == 0:
            continue
        assert abs(unweighted_average_recall(cm)
                   - weighted_average_recall(cm)) < 1e-12


def test_confusion_matrix_validation():
    with pytest.raises(DataError):
        ConfusionMatrix(counts=np.zeros((2, 3)), class_names=("a", "b"))
    with pytest.raises(DataError):
        ConfusionMatrix(counts=np.array([[1, 0], [0, -1]]), class_names=("a", "b"))
    cm = ConfusionMatrix.from_pairs([0, 1, 1], [0, 1, 0], ("a", "b"))
    assert cm.counts.tolist() == [[1, 0], [1, 1]]
    assert cm.n == 3


def test_recall_undefined_names_class():
    cm = ConfusionMatrix(counts=np.array([[3, 0], [0, 0]]),
                         class_names=("anger", "fear"))
    with pytest.raises(DataError, match="fear"):
        recall_per_class(cm)
    with pytest.raises(DataError):
        weighted_average_recall(ConfusionMatrix(counts=np.zeros((2, 2), dtype=int),
                                                class_names=("a", "b")))


# --- aggregation -----------------------------------------------------------------


def test_aggregate_mean_and_max():
    post = np.array([[0.6, 0.3, 0.1],
                     [0.2, 0.5, 0.3],
                     [0.1, 0.8, 0.1]])
    cls, vec = aggregate_segment(post, "mean")
    assert cls == 1
    assert np.abs(vec - post.mean(axis=0)).max() < 1e-15
    cls, vec = aggregate_segment(post, "max")
    assert cls == 1
    assert np.array_equal(vec, [0.6, 0.8, 0.3])


def test_aggregate_majority():
    post = np.array([[0.9, 0.1, 0.0],
                     [0.6, 0.3, 0.1],
                     [0.1, 0.2, 0.7]])
    cls, vec = aggregate_segment(post, "majority")
    assert cls == 0
    assert np.abs(vec - [2 / 3, 0.0, 1 / 3]).max() < 1e-15
    # Modal tie (one vote each) falls back to the mean rule.
    tied = np.array([[0.9, 0.1, 0.0],
                     [0.0, 0.8, 0.2],
                     [0.1, 0.2, 0.7]])
    cls, vec = aggregate_segment(tied, "majority")
    mean_cls, mean_vec = aggregate_segment(tied, "mean")
    assert cls == mean_cls
    assert np.array_equal(vec, mean_vec)


def test_aggregate_tie_goes_to_lowest_index():
    post = np.array([[0.5, 0.5]])
    assert aggregate_segment(post, "mean")[0] == 0
    assert aggregate_segment(post, "max")[0] == 0


def test_aggregate_single_subsegment():
    post = np.array([[0.2, 0.7, 0.1]])
    for strategy in ("majority", "mean", "max"):
        assert aggregate_segment(post, strategy)[0] == 1


def test_aggregate_validation():
    with pytest.raises(DataError):
        aggregate_segment(np.zeros((0, 3)), "mean")
    with pytest.raises(DataError):
        aggregate_segment(np.zeros(3), "mean")
    with pytest.raises(ConfigError):
        aggregate_segment(np.ones((2, 3)), "median")


def test_select_strategy():
    assert select_strategy({"majority": 0.7, "mean": 0.8, "max": 0.6}) == "mean"
    # Exact ties resolve in declaration order: majority, then mean, then max.
    assert select_strategy({"majority": 0.7, "mean": 0.7, "max": 0.7}) == "majority"
    assert select_strategy({"majority": None, "mean": 0.5, "max": 0.5}) == "mean"
    with pytest.raises(ConfigError):
        select_strategy({"majority": None, "mean": None, "max": None})


# --- stub predictors over segment groups ------------------------------------------


CLASSES = ["anger", "fear", "positive", "neutral"]


def make_groups(labels, speakers=None, genders=None, frames=20, dims=3):
    groups = []
    for i, label in enumerate(labels):
        groups.append(SegmentGroup(
            segment_id=f"seg{i}", speaker_id=(speakers or ["s0"] * len(labels))[i],
            emotion_label=label,
            gender_label=(genders or ["M"] * len(labels))[i],
            values=np.zeros((2, frames, dims), dtype=np.float32),
            valid=np.array([frames, frames // 2], dtype=np.int64)))
    return groups


def oracle_predictor(groups):
    # Posterior mass on the true class for every sub-segment.
    out = []
    for g in groups:
        probs = np.full((g.values.shape[0], len(CLASSES)), 0.05)
        probs[:, CLASSES.index(g.emotion_label)] = 0.85
        gender = np.array([[0.9, 0.1] if g.gender_label == "M" else [0.1, 0.9]]
                          * g.values.shape[0])
        out.append((probs, gender))
    return out


def test_evaluate_groups_perfect_oracle():
    labels = ["anger", "fear", "positive", "neutral", "anger", "fear"]
    genders = ["M", "F", "M", "F", "M", "F"]
    groups = make_groups(labels, genders=genders)
    report = evaluate_groups(oracle_predictor, groups, CLASSES, "majority")
    assert report["ua"] == 1.0
    assert report["wa"] == 1.0
    assert report["per_class_recall"] == [1.0, 1.0, 1.0, 1.0]
    assert report["absent_classes"] == []
    assert report["n_segments"] == 6
    assert report["gender"]["ua"] == 1.0
    trace = sum(report["confusion"][i][i] for i in range(4))
    assert trace == 6


def test_evaluate_groups_absent_class():
    groups = make_groups(["anger", "anger", "fear"])
    report = evaluate_groups(oracle_predictor, groups, CLASSES, "mean")
    assert report["ua"] is None
    assert report["absent_classes"] == ["positive", "neutral"]
    assert report["ua_present"] == 1.0
    assert report["per_class_recall"][2] is None


def test_validation_metrics_all_strategies():
    groups = make_groups(["anger", "fear", "positive", "neutral"])
    metrics = validation_metrics(oracle_predictor, groups, CLASSES)
    assert set(metrics) == {"majority", "mean", "max"}
    for ua, wa in metrics.values():
        assert ua == 1.0 and wa == 1.0


def test_make_model_predictor_groups_match_direct_calls():
    spec = ModelSpec(stack=(ConvSpec(2, 3, 3, stride_h=2, mode="temporal"),),
                     input_frames=20, input_dims=3, n_emotions=4,
                     recurrent_hidden=2, trunk_hidden=3, multitask=True)
    model = EmotionRecognizer(spec, seed=5)
    rng = np.random.default_rng(0)
    groups = make_groups(["anger", "fear"], frames=20, dims=3)
    for g in groups:
        g.values = rng.standard_normal(g.values.shape).astype(np.float32)
    predictor = make_model_predictor(model)
    outputs = predictor(groups)
    assert len(outputs) == 2
    for g, (probs_e, probs_g) in zip(groups, outputs):
        direct_e, direct_g = model.predict_posteriors(g.values, g.valid)
        assert np.array_equal(probs_e, direct_e)
        assert np.array_equal(probs_g, direct_g)


def test_segment_group_from_subsegments():
    from serkit.segments import SubSegment
    subs = [SubSegment(values=np.ones((5, 2), dtype=np.float32), valid_frames=5,
                       parent_segment_id="p", emotion_label="anger",
                       gender_label="F", speaker_id="s9"),
            SubSegment(values=np.zeros((5, 2), dtype=np.float32), valid_frames=3,
                       parent_segment_id="p", emotion_label="anger",
                       gender_label="F", speaker_id="s9")]
    group = SegmentGroup.from_subsegments(subs)
    assert group.segment_id == "p"
    assert group.values.shape == (2, 5, 2)
    assert group.valid.tolist() == [5, 3]
    with pytest.raises(DataError):
        SegmentGroup.from_subsegments([])


# --- fold pipeline with a stub trainer ----------------------------------------------


def synthetic_setup(n_speakers=10, per_speaker=6, frames=700, dims=3, seed=0):
    rng = np.random.default_rng(seed)
    records = []
    features = {}
    for s in range(n_speakers):
        for i in range(per_speaker):
            rid = f"s{s:02d}-{i}"
            label = CLASSES[(s + i) % 4]
            records.append(UtteranceRecord(
                id=rid, audio_path=f"{rid}.wav", speaker_id=f"s{s:02d}",
                gender="M" if s % 2 == 0 else "F", emotion=label,
                duration_s=float(frames) / 100.0))
            features[rid] = rng.standard_normal((frames, dims)).astype(np.float32)
    return records, features


def stub_trainer_factory(calls):
    def trainer(train_subsegs, val_groups, seed):
        calls.append({"n_train": len(train_subsegs),
                      "train_speakers": {s.speaker_id for s in train_subsegs},
                      "val_speakers": {g.speaker_id for g in val_groups},
                      "seed": seed})
        return TrainedPredictor(predict_groups=oracle_predictor,
                                strategy="majority", log=[])
    return trainer


def test_crossval_with_oracle_stub():
    records, features = synthetic_setup()
    calls = []
    result = crossval(records, features, CLASSES, k=5, seed=3,
                      trainer=stub_trainer_factory(calls))
    assert len(result.folds) == 5
    tested = []
    speakers = sorted({r.speaker_id for r in records})
    for outcome, call in zip(result.folds, calls):
        assert outcome.report["ua"] == 1.0
        assert outcome.report["wa"] == 1.0
        assert outcome.strategy == "majority"
        tested.extend(outcome.split.test_speakers)
        # Fold hygiene: the stub saw no test speaker during training.
        test = set(outcome.split.test_speakers)
        assert not call["train_speakers"] & test
        assert not call["val_speakers"] & test
        assert not call["train_speakers"] & call["val_speakers"]
        assert call["seed"] == 3 + 9973 * (outcome.fold_index + 1)
        assert outcome.report["fold"] == outcome.fold_index
        assert outcome.report["test_speakers"] == sorted(test)
    assert sorted(tested) == speakers
    pooled = result.pooled
    assert pooled["k"] == 5
    assert pooled["mean_ua"] == 1.0
    assert pooled["best_ua"] == 1.0
    assert pooled["pooled_ua"] == 1.0
    assert pooled["pooled_wa"] == 1.0
    assert pooled["fold_strategy"] == ["majority"] * 5
    assert np.trace(np.array(pooled["pooled_confusion"])) == len(records)
    assert pooled["gender_pooled_ua"] == 1.0
    assert len(pooled["gender_fold_ua"]) == 5


def test_crossval_oversamples_training_subsegments():
    records, features = synthetic_setup(n_speakers=8, per_speaker=4)
    calls = []
    crossval(records, features, CLASSES, k=4, seed=1,
             trainer=stub_trainer_factory(calls), fold_indices=[0])
    assert len(calls) == 1
    # 700-frame utterances chop into 3 windows; oversampling then equalizes
    # class counts, so the total is a multiple of the largest class count.
    assert calls[0]["n_train"] >= 3 * 4 * 4


def test_crossval_fold_subset():
    records, features = synthetic_setup()
    calls = []
    result = crossval(records, features, CLASSES, k=5, seed=3,
                      trainer=stub_trainer_factory(calls), fold_indices=[1, 3])
    assert [f.fold_index for f in result.folds] == [1, 3]
    assert len(calls) == 2


def test_chop_records_and_groups():
    records, features = synthetic_setup(n_speakers=2, per_speaker=2)
    stats = FeatureStats.from_matrices(list(features.values()))
    chopped = chop_records(records, features, stats, ChopConfig())
    assert set(chopped) == {r.id for r in records}
    assert all(len(subs) == 3 for subs in chopped.values())  # 700 frames
    groups = groups_for(records, chopped)
    assert [g.segment_id for g in groups] == [r.id for r in records]
    assert all(g.values.shape == (3, 300, 3) for g in groups)
    with pytest.raises(DataError):
        chop_records(records, {}, stats, ChopConfig())


def test_cross_corpus_with_stub():
    train_records, train_features = synthetic_setup(seed=0)
    test_records, test_features = synthetic_setup(seed=1)
    # Same naming scheme on both sides; only the content differs, which is
    # what distinguishes two independently generated corpora.
    test_records = [UtteranceRecord(id=r.id, audio_path=r.audio_path,
                                    speaker_id=r.speaker_id, gender=r.gender,
                                    emotion=r.emotion,
                                    duration_s=r.duration_s + 0.01)
                    for r in test_records]
    calls = []
    report = cross_corpus(train_records, train_features, test_records,
                          test_features, CLASSES, seed=2,
                          trainer=stub_trainer_factory(calls))
    assert report["ua"] == 1.0
    assert report["direction"] == "train-on-A/test-on-B"
    assert report["n_train_records"] + report["n_val_records"] == len(train_records)
    assert len(calls) == 1
    # The internal validation split is speaker-disjoint from training.
    assert not calls[0]["train_speakers"] & calls[0]["val_speakers"]


def test_cross_corpus_rejects_identical_corpora():
    records, features = synthetic_setup()
    with pytest.raises(DataError, match="share"):
        cross_corpus(records, features, records, features, CLASSES)


def test_cross_corpus_rejects_class_mismatch():
    train_records, train_features = synthetic_setup()
    test_records, test_features = synthetic_setup(seed=1)
    test_records = [UtteranceRecord(id=r.id + "x", audio_path=r.audio_path,
                                    speaker_id=r.speaker_id, gender=r.gender,
                                    emotion="other", duration_s=r.duration_s)
                    for r in test_records]
    test_features = {r.id: train_features[r.id[:-1]] for r in test_records}
    with pytest.raises(DataError, match="class sets"):
        cross_corpus(train_records, train_features, test_records, test_features,
                     CLASSES)


def test_cross_corpus_validation():
    train_records, train_features = synthetic_setup()
    test_records, test_features = synthetic_setup(seed=1)
    test_records = [UtteranceRecord(id=r.id, audio_path=r.audio_path,
                                    speaker_id=r.speaker_id, gender=r.gender,
                                    emotion=r.emotion,
                                    duration_s=r.duration_s + 0.01)
                    for r in test_records]
    with pytest.raises(ConfigError):
        cross_corpus(train_records, train_features, test_records, test_features,
                     CLASSES, val_fraction=1.5)
