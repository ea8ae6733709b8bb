"""Corpus management: JSONL manifests, label maps, speaker-independent
folds, class rebalancing, descriptive statistics, and annotator agreement.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ConfigError, DataError, ManifestError
from .features import StftConfig
from .segments import ChopConfig, count_subsegments

GENDERS = ("M", "F")

# Sentinel target in a label map: matching source labels are removed.
DROP = "DROP"


@dataclass
class UtteranceRecord:
    id: str
    audio_path: str
    speaker_id: str
    gender: str
    emotion: str
    duration_s: float
    ann_a: list[str] | None = None
    ann_b: list[str] | None = None

    def to_json_dict(self) -> dict:
        out = {"id": self.id, "audio_path": self.audio_path,
               "speaker_id": self.speaker_id, "gender": self.gender,
               "emotion": self.emotion, "duration_s": self.duration_s}
        if self.ann_a is not None:
            out["ann_a"] = self.ann_a
        if self.ann_b is not None:
            out["ann_b"] = self.ann_b
        return out


_REQUIRED_FIELDS = ("id", "audio_path", "speaker_id", "gender", "emotion", "duration_s")


def load_manifest(path: str | Path) -> list[UtteranceRecord]:
    """Parse a JSONL manifest; audio paths stay relative to the manifest dir."""
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except FileNotFoundError as exc:
        raise ManifestError(f"manifest not found: {path}") from exc
    records: list[UtteranceRecord] = []
    seen_ids: set[str] = set()
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ManifestError(f"{path}:{lineno}: invalid JSON ({exc})") from exc
        if not isinstance(row, dict):
            raise ManifestError(f"{path}:{lineno}: expected an object")
        missing = [k for k in _REQUIRED_FIELDS if k not in row]
        if missing:
            raise ManifestError(f"{path}:{lineno}: missing fields {missing}")
        if row["gender"] not in GENDERS:
            raise ManifestError(
                f"{path}:{lineno}: gender must be one of {GENDERS}, got {row['gender']!r}"
            )
        duration = row["duration_s"]
        if not isinstance(duration, (int, float)) or not duration > 0:
            raise ManifestError(f"{path}:{lineno}: duration_s must be positive")
        if row["id"] in seen_ids:
            raise ManifestError(f"{path}:{lineno}: duplicate id {row['id']!r}")
        seen_ids.add(row["id"])
        records.append(UtteranceRecord(
            id=str(row["id"]), audio_path=str(row["audio_path"]),
            speaker_id=str(row["speaker_id"]), gender=str(row["gender"]),
            emotion=str(row["emotion"]), duration_s=float(duration),
            ann_a=row.get("ann_a"), ann_b=row.get("ann_b")))
    if not records:
        raise ManifestError(f"manifest has no records: {path}")
    return records


def save_manifest(records: Sequence[UtteranceRecord], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as handle:
        for rec in records:
            handle.write(json.dumps(rec.to_json_dict()) + "\n")


def resolve_audio_path(manifest_path: str | Path, record: UtteranceRecord) -> Path:
    audio = Path(record.audio_path)
    return audio if audio.is_absolute() else Path(manifest_path).parent / audio


# --- label maps -----------------------------------------------------------


@dataclass(frozen=True)
class LabelMap:
    """Source-label -> task-label mapping; DROP removes a source label."""

    entries: dict[str, str]

    @property
    def task_classes(self) -> list[str]:
        # First-appearance order of non-DROP targets.
        out: list[str] = []
        for target in self.entries.values():
            if target != DROP and target not in out:
                out.append(target)
        return out

    def __post_init__(self) -> None:
        if not self.task_classes:
            raise ConfigError("label map leaves no task classes")


def apply_label_map(records: Sequence[UtteranceRecord],
                    label_map: LabelMap) -> list[UtteranceRecord]:
    """Relabel emotions; records mapped to DROP are removed.

    A source emotion absent from the map is a data error.
    """
    out = []
    for rec in records:
        try:
            target = label_map.entries[rec.emotion]
        except KeyError:
            raise DataError(f"emotion {rec.emotion!r} (record {rec.id!r}) "
                            f"missing from label map") from None
        if target == DROP:
            continue
        out.append(replace(rec, emotion=target))
    if not out:
        raise DataError("label map dropped every record")
    return out


# --- speaker-independent folds ---------------------------------------------


@dataclass
class FoldSplit:
    fold_index: int
    train_speakers: list[str]
    val_speakers: list[str]
    test_speakers: list[str]


def speaker_kfold(records: Sequence[UtteranceRecord], k: int = 5,
                  seed: int = 0) -> list[FoldSplit]:
    """Speaker-independent folds covering every speaker as test exactly once.

    Speakers are shuffled once (seeded) and split into k groups whose sizes
    differ by at most one. Fold i tests the whole of group i; validation
    speakers are the first half of group i+1; everything else trains.
    """
    speakers = sorted({rec.speaker_id for rec in records})
    if k < 2:
        raise ConfigError(f"k must be >= 2, got {k}")
    if len(speakers) < 2 * k:
        raise ConfigError(
            f"need at least {2 * k} speakers for k={k} folds "
            f"(got {len(speakers)}; held-out groups cannot be split)"
        )
    rng = np.random.default_rng(seed)
    order = [speakers[i] for i in rng.permutation(len(speakers))]
    base, extra = divmod(len(order), k)
    groups: list[list[str]] = []
    start = 0
    for g in range(k):
        size = base + (1 if g < extra else 0)
        groups.append(order[start:start + size])
        start += size
    folds = []
    for i in range(k):
        nxt = groups[(i + 1) % k]
        val = nxt[:len(nxt) // 2] if len(nxt) > 1 else nxt[:1]
        taken = set(groups[i]) | set(val)
        train = [s for s in order if s not in taken]
        folds.append(FoldSplit(fold_index=i, train_speakers=train,
                               val_speakers=list(val), test_speakers=list(groups[i])))
    return folds


def records_for_speakers(records: Sequence[UtteranceRecord],
                         speakers: Iterable[str]) -> list[UtteranceRecord]:
    wanted = set(speakers)
    return [rec for rec in records if rec.speaker_id in wanted]


# --- rebalancing ------------------------------------------------------------


def downsample_neutral(records: Sequence[UtteranceRecord], target_fraction: float,
                       seed: int = 0, neutral_label: str = "neutral",
                       per_speaker_min: int = 1) -> list[UtteranceRecord]:
    """Reduce the neutral class to ~target_fraction of its original count.

    Every speaker who had neutral material keeps at least per_speaker_min
    neutral records; other classes are untouched. Output preserves the
    original record order.
    """
    if not 0.0 < target_fraction <= 1.0:
        raise ConfigError(f"target_fraction must be in (0, 1], got {target_fraction}")
    neutral = [rec for rec in records if rec.emotion == neutral_label]
    if not neutral:
        return list(records)
    rng = np.random.default_rng(seed)
    by_speaker: dict[str, list[str]] = {}
    for rec in neutral:
        by_speaker.setdefault(rec.speaker_id, []).append(rec.id)
    keep: set[str] = set()
    for speaker in sorted(by_speaker):
        ids = by_speaker[speaker]
        picked = rng.choice(len(ids), size=min(per_speaker_min, len(ids)),
                            replace=False)
        keep.update(ids[int(i)] for i in picked)
    target = int(round(target_fraction * len(neutral)))
    remaining = [rec.id for rec in neutral if rec.id not in keep]
    if target > len(keep) and remaining:
        extra = rng.choice(len(remaining), size=min(target - len(keep), len(remaining)),
                           replace=False)
        keep.update(remaining[int(i)] for i in extra)
    return [rec for rec in records
            if rec.emotion != neutral_label or rec.id in keep]


def oversample_balance(items: Sequence, seed: int = 0,
                       label_fn: Callable = lambda item: item.emotion_label) -> list:
    """Duplicate items (with replacement) until every class matches the max.

    The originals are all kept, so the output is a superset of the input.
    """
    if not items:
        raise DataError("cannot oversample an empty collection")
    by_class: dict[str, list[int]] = {}
    for idx, item in enumerate(items):
        by_class.setdefault(label_fn(item), []).append(idx)
    top = max(len(v) for v in by_class.values())
    rng = np.random.default_rng(seed)
    out = list(items)
    for label in sorted(by_class):
        indices = by_class[label]
        shortfall = top - len(indices)
        if shortfall:
            picks = rng.integers(0, len(indices), size=shortfall)
            out.extend(items[indices[int(p)]] for p in picks)
    return out


# --- descriptive statistics -------------------------------------------------


def corpus_stats(records: Sequence[UtteranceRecord],
                 neutral_label: str = "neutral") -> dict:
    """Class shares, speaker coverage, and duration statistics."""
    if not records:
        raise DataError("no records to describe")
    classes = sorted({rec.emotion for rec in records})
    class_counts = {c: 0 for c in classes}
    gender_counts = {g: 0 for g in GENDERS}
    durations = []
    speaker_classes: dict[str, set[str]] = {}
    for rec in records:
        class_counts[rec.emotion] += 1
        gender_counts[rec.gender] += 1
        durations.append(rec.duration_s)
        speaker_classes.setdefault(rec.speaker_id, set()).add(rec.emotion)
    n = len(records)
    n_speakers = len(speaker_classes)
    durations_arr = np.asarray(durations, dtype=np.float64)
    emotions_per_speaker = {count: 0 for count in range(1, len(classes) + 1)}
    for expressed in speaker_classes.values():
        emotions_per_speaker[len(expressed)] += 1
    speakers_per_class = {
        c: sum(1 for expressed in speaker_classes.values() if c in expressed)
        for c in classes
    }
    with_neutral = [s for s, expressed in speaker_classes.items()
                    if neutral_label in expressed]
    neutral_only = [s for s in with_neutral if speaker_classes[s] == {neutral_label}]
    return {
        "n_records": n,
        "n_speakers": n_speakers,
        "classes": classes,
        "class_counts": class_counts,
        "class_shares": {c: class_counts[c] / n for c in classes},
        "gender_counts": gender_counts,
        "duration_s": {
            "mean": float(durations_arr.mean()),
            "median": float(np.median(durations_arr)),
            "min": float(durations_arr.min()),
            "max": float(durations_arr.max()),
            "total": float(durations_arr.sum()),
        },
        "emotions_per_speaker": emotions_per_speaker,
        "speakers_per_class": speakers_per_class,
        "speakers_per_class_pct": {c: speakers_per_class[c] / n_speakers
                                   for c in classes},
        "neutral_only_speakers": {
            "count": len(neutral_only),
            "pct_of_neutral_speakers": (len(neutral_only) / len(with_neutral)
                                        if with_neutral else 0.0),
        },
    }


def per_class_chop_tally(records: Sequence[UtteranceRecord],
                         cfg: ChopConfig = ChopConfig(),
                         stft_cfg: StftConfig = StftConfig(),
                         sample_rate_hz: int = 16000) -> dict[str, dict[str, int]]:
    """Per-class segment and sub-segment counts implied by record durations."""
    by_class: dict[str, list[float]] = {}
    for rec in records:
        by_class.setdefault(rec.emotion, []).append(rec.duration_s)
    out = {}
    for label in sorted(by_class):
        segments, subsegments = count_subsegments(by_class[label], cfg, stft_cfg,
                                                  sample_rate_hz)
        out[label] = {"segments": segments, "subsegments": subsegments}
    return out


def cohen_kappa(labels_a: Sequence, labels_b: Sequence) -> float:
    """Chance-corrected agreement between two label sequences."""
    if len(labels_a) != len(labels_b):
        raise DataError(f"length mismatch: {len(labels_a)} vs {len(labels_b)}")
    if not labels_a:
        raise DataError("cannot compute agreement on empty sequences")
    n = len(labels_a)
    observed = sum(1 for a, b in zip(labels_a, labels_b) if a == b) / n
    counts_a: dict = {}
    counts_b: dict = {}
    for a, b in zip(labels_a, labels_b):
        counts_a[a] = counts_a.get(a, 0) + 1
        counts_b[b] = counts_b.get(b, 0) + 1
    expected = sum(counts_a.get(label, 0) * counts_b.get(label, 0)
                   for label in counts_a) / (n * n)
    if expected == 1.0:
        # Both coders constant on the same label, which forces agreement.
        return 1.0
    return (observed - expected) / (1.0 - expected)


def exclude_all_neutral_speakers(records: Sequence[UtteranceRecord],
                                 neutral_label: str = "neutral") -> list[UtteranceRecord]:
    """Drop speakers whose every record is neutral."""
    speaker_classes: dict[str, set[str]] = {}
    for rec in records:
        speaker_classes.setdefault(rec.speaker_id, set()).add(rec.emotion)
    kept = {s for s, expressed in speaker_classes.items()
            if expressed != {neutral_label}}
    out = [rec for rec in records if rec.speaker_id in kept]
    if not out:
        raise DataError("every speaker is neutral-only; nothing left")
    return out


def permute_emotions(records: Sequence[UtteranceRecord],
                     seed: int) -> list[UtteranceRecord]:
    """Reassign emotion labels by random permutation across records.

    Class counts are preserved while any label-audio association is
    destroyed, which makes this the control condition for sanity-checking
    that a trained system performs at chance on shuffled data.
    """
    record_list = list(records)
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(record_list))
    return [replace(rec, emotion=record_list[j].emotion)
            for rec, j in zip(record_list, order)]
