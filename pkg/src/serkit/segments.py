"""Fixed-length sub-segmentation of feature matrices.

Utterances are cut on the frame timeline into overlapping windows
(default 3 s with 1 s overlap at a 10 ms hop, i.e. 300-frame windows
every 200 frames). The last window is zero-padded; valid_frames records
how many rows are real so downstream layers can mask the padding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, DataError
from .features import StftConfig, frame_count


@dataclass(frozen=True)
class ChopConfig:
    window_s: float = 3.0
    overlap_s: float = 1.0
    frame_hop_s: float = 0.010

    def __post_init__(self) -> None:
        if self.frame_hop_s <= 0:
            raise ConfigError("frame_hop_s must be positive")
        if not 0.0 <= self.overlap_s < self.window_s:
            raise ConfigError("need 0 <= overlap_s < window_s")

    @property
    def window_frames(self) -> int:
        return int(round(self.window_s / self.frame_hop_s))

    @property
    def hop_frames(self) -> int:
        return self.window_frames - int(round(self.overlap_s / self.frame_hop_s))


@dataclass
class SubSegment:
    """One padded window plus the labels inherited from its parent."""

    values: np.ndarray          # (window_frames, dims) float32, zero-padded
    valid_frames: int
    parent_segment_id: str = ""
    emotion_label: str = ""
    gender_label: str = ""
    speaker_id: str = ""


def subsegment_count(n_frames: int, cfg: ChopConfig = ChopConfig()) -> int:
    """1 if n_frames <= window, else ceil((n_frames - window)/hop) + 1."""
    if n_frames <= 0:
        raise DataError(f"need at least one frame, got {n_frames}")
    window, hop = cfg.window_frames, cfg.hop_frames
    if n_frames <= window:
        return 1
    return math.ceil((n_frames - window) / hop) + 1


def chop(features: np.ndarray, cfg: ChopConfig = ChopConfig(), *,
         parent_id: str = "", emotion: str = "", gender: str = "",
         speaker: str = "") -> list[SubSegment]:
    """Cut a (frames, dims) matrix into padded, label-inheriting windows."""
    feats = np.asarray(features, dtype=np.float32)
    if feats.ndim != 2 or feats.shape[0] == 0:
        raise DataError(f"expected a non-empty (frames, dims) matrix, got {feats.shape}")
    t, dims = feats.shape
    window, hop = cfg.window_frames, cfg.hop_frames
    out = []
    for i in range(subsegment_count(t, cfg)):
        start = i * hop
        valid = min(window, t - start)
        block = np.zeros((window, dims), dtype=np.float32)
        block[:valid] = feats[start:start + valid]
        out.append(SubSegment(values=block, valid_frames=valid,
                              parent_segment_id=parent_id, emotion_label=emotion,
                              gender_label=gender, speaker_id=speaker))
    return out


def count_subsegments(segment_durations: Sequence[float],
                      cfg: ChopConfig = ChopConfig(),
                      stft_cfg: StftConfig = StftConfig(),
                      sample_rate_hz: int = 16000) -> tuple[int, int]:
    """(segments, sub-segments) totals for a list of durations in seconds.

    Durations are converted to frame counts with the exact framing formula
    before the chop count is applied.
    """
    win = stft_cfg.window_samples(sample_rate_hz)
    hop = stft_cfg.hop_samples(sample_rate_hz)
    total = 0
    for duration in segment_durations:
        frames = frame_count(int(round(duration * sample_rate_hz)), win, hop)
        total += subsegment_count(frames, cfg)
    return len(segment_durations), total
