"""Deterministic synthetic emotion corpora for end-to-end testing.

Each emotion class is a distinct acoustic family: a band-limited noise
carrier at a class-specific center frequency, amplitude-modulated at a
class-specific rate. Speaker gender sets the register of a harmonic tone
mixed under the band (male near 115 Hz, female near 215 Hz), so both the
emotion and gender tasks are learnable by construction. Given the same
seed and arguments the generator writes byte-identical WAVs and manifest.
"""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .audio import write_wav
from .corpus import UtteranceRecord, save_manifest
from .errors import ConfigError

DEFAULT_SHARES = {"anger": 0.25, "fear": 0.25, "positive": 0.25, "neutral": 0.25}

# Share of signal power carried by the class band vs the gender tone.
BAND_WEIGHT = 0.65
TONE_WEIGHT = 0.35

MIN_DURATION_S = 0.3
MAX_DURATION_S = 30.0


def class_band_centers(n_classes: int, nyquist_hz: float,
                       band_shift: float = 0.0) -> np.ndarray:
    """Class carrier centers, spread between 0.15 and 0.75 of Nyquist."""
    fractions = np.linspace(0.15, 0.75, n_classes) + band_shift
    if fractions.min() <= 0.05 or fractions.max() >= 0.95:
        raise ConfigError(f"band_shift {band_shift} pushes carriers out of range")
    return fractions * nyquist_hz


def largest_remainder_counts(shares: Sequence[float], total: int) -> list[int]:
    """Integer class counts summing to total, proportional to shares."""
    raw = [s * total for s in shares]
    counts = [int(x) for x in raw]
    remainders = sorted(range(len(raw)), key=lambda i: (raw[i] - counts[i], -i),
                        reverse=True)
    for i in remainders[:total - sum(counts)]:
        counts[i] += 1
    return counts


def _deal_labels(classes: Sequence[str], counts: Sequence[int],
                 n_speakers: int, per_speaker: int) -> list[list[str]]:
    # Card-dealing assignment from the class-sorted pool: every speaker gets
    # floor/ceil(count/n_speakers) of each class, so with enough segments and
    # nonzero shares every speaker expresses every class by construction.
    pool: list[str] = []
    for label, count in zip(classes, counts):
        pool.extend([label] * count)
    hands: list[list[str]] = [[] for _ in range(n_speakers)]
    for pos, label in enumerate(pool):
        hands[pos % n_speakers].append(label)
    assert all(len(h) == per_speaker for h in hands)
    return hands


def _band_noise(rng: np.random.Generator, n: int, rate: int,
                center_hz: float, halfwidth_hz: float) -> np.ndarray:
    white = rng.standard_normal(n)
    spectrum = np.fft.rfft(white)
    freqs = np.fft.rfftfreq(n, d=1.0 / rate)
    spectrum[(freqs < center_hz - halfwidth_hz) | (freqs > center_hz + halfwidth_hz)] = 0.0
    band = np.fft.irfft(spectrum, n=n)
    peak = np.abs(band).max()
    return band / peak if peak > 0 else band


def _harmonic_tone(rng: np.random.Generator, n: int, rate: int,
                   f0_hz: float) -> np.ndarray:
    t = np.arange(n) / rate
    tone = np.zeros(n)
    for harmonic in range(1, 6):
        tone += np.sin(2.0 * np.pi * harmonic * f0_hz * t
                       + rng.uniform(0.0, 2.0 * np.pi)) / harmonic
    return tone / np.abs(tone).max()


def generate_synthetic_corpus(out_dir: str | Path, seed: int,
                              n_speakers: int = 24, segments_per_speaker: int = 40,
                              class_shares: Mapping[str, float] | None = None,
                              duration_range_s: tuple[float, float] = (1.0, 4.0),
                              sample_rate_hz: int = 8000,
                              band_shift: float = 0.0,
                              annotator_noise: float = 0.0) -> list[UtteranceRecord]:
    """Write WAVs plus manifest.jsonl under out_dir and return the records.

    annotator_noise > 0 adds a dual annotation per record where coder B
    disagrees with that probability (for agreement statistics).
    """
    shares = dict(class_shares) if class_shares is not None else dict(DEFAULT_SHARES)
    if abs(sum(shares.values()) - 1.0) > 1e-9 or any(v < 0 for v in shares.values()):
        raise ConfigError(f"class shares must be nonnegative and sum to 1: {shares}")
    if n_speakers < 1 or segments_per_speaker < 1:
        raise ConfigError("need at least one speaker and one segment per speaker")
    lo, hi = duration_range_s
    if not MIN_DURATION_S <= lo <= hi <= MAX_DURATION_S:
        raise ConfigError(
            f"durations must satisfy {MIN_DURATION_S} <= lo <= hi <= {MAX_DURATION_S}"
        )
    if not 0.0 <= annotator_noise < 1.0:
        raise ConfigError(f"annotator_noise must be in [0, 1), got {annotator_noise}")

    classes = list(shares)
    centers = class_band_centers(len(classes), sample_rate_hz / 2.0, band_shift)
    am_rates = 2.0 * (1.7 ** np.arange(len(classes)))
    halfwidth = 0.03 * sample_rate_hz

    total = n_speakers * segments_per_speaker
    counts = largest_remainder_counts([shares[c] for c in classes], total)
    hands = _deal_labels(classes, counts, n_speakers, segments_per_speaker)

    out_dir = Path(out_dir)
    wav_dir = out_dir / "wav"
    rng = np.random.default_rng(seed)
    records: list[UtteranceRecord] = []
    for spk_index in range(n_speakers):
        speaker_id = f"spk{spk_index:03d}"
        gender = "M" if spk_index % 2 == 0 else "F"
        f0 = (115.0 if gender == "M" else 215.0) * (1.0 + rng.uniform(-0.1, 0.1))
        labels = list(hands[spk_index])
        rng.shuffle(labels)
        for seg_index, label in enumerate(labels):
            class_idx = classes.index(label)
            duration = rng.uniform(lo, hi)
            n = int(round(duration * sample_rate_hz))
            t = np.arange(n) / sample_rate_hz
            band = _band_noise(rng, n, sample_rate_hz, centers[class_idx], halfwidth)
            tone = _harmonic_tone(rng, n, sample_rate_hz, f0)
            envelope = (1.0 + 0.8 * np.sin(2.0 * np.pi * am_rates[class_idx] * t
                                           + rng.uniform(0.0, 2.0 * np.pi))) / 1.8
            x = envelope * (BAND_WEIGHT * band + TONE_WEIGHT * tone)
            x += 0.01 * rng.standard_normal(n)
            x = 0.8 * x / np.abs(x).max()
            rec_id = f"{speaker_id}-{seg_index:04d}"
            rel_path = f"wav/{rec_id}.wav"
            write_wav(wav_dir / f"{rec_id}.wav", x, sample_rate_hz)
            ann_a = ann_b = None
            if annotator_noise > 0.0:
                ann_a = [label]
                if rng.random() < annotator_noise:
                    others = [c for c in classes if c != label]
                    ann_b = [others[int(rng.integers(0, len(others)))]]
                else:
                    ann_b = [label]
            records.append(UtteranceRecord(
                id=rec_id, audio_path=rel_path, speaker_id=speaker_id,
                gender=gender, emotion=label, duration_s=n / sample_rate_hz,
                ann_a=ann_a, ann_b=ann_b))
    save_manifest(records, out_dir / "manifest.jsonl")
    return records
