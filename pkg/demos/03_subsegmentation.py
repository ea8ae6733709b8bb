"""Slice variable-length feature matrices into fixed 3-second windows.

The model consumes 300-frame sub-segments that overlap by 100 frames;
shorter inputs are zero-padded and carry a valid-frame count so the
padding stays invisible to training.
"""

import numpy as np

from serkit.segments import ChopConfig, chop, count_subsegments, subsegment_count

cfg = ChopConfig()
print(f"window {cfg.window_frames} frames, hop {cfg.hop_frames} frames "
      f"({cfg.window_s:.0f}s / {cfg.window_s - cfg.overlap_s:.0f}s at "
      f"{cfg.frame_hop_s * 1000:.0f}ms per frame)")

for frames in (120, 300, 301, 438, 900):
    print(f"  {frames:4d} frames -> {subsegment_count(frames, cfg)} sub-segments")

# A 4.38s utterance: two full windows plus a padded tail.
features = np.arange(438 * 3, dtype=np.float32).reshape(438, 3)
subs = chop(features, cfg, parent_id="seg-007", emotion="fear",
            gender="F", speaker="spk004")
print(f"\nchopped 438x3 matrix into {len(subs)} windows:")
for i, sub in enumerate(subs):
    start = i * cfg.hop_frames
    print(f"  window {i}: rows {start}..{start + sub.valid_frames - 1}, "
          f"valid {sub.valid_frames}/{cfg.window_frames}, "
          f"label {sub.emotion_label!r}")

# Consecutive windows share exactly 100 frames of content.
shared = subs[0].values[cfg.hop_frames:] == subs[1].values[:cfg.window_frames
                                                           - cfg.hop_frames]
print(f"overlap rows identical: {bool(shared.all())}")
print(f"padding rows all zero: {not subs[-1].values[subs[-1].valid_frames:].any()}")

# Planning helper: segment and sub-segment totals for a whole corpus.
durations = [2.5, 3.0, 7.25, 11.0]
segments, subsegments = count_subsegments(durations, cfg)
print(f"\n{len(durations)} utterances of {durations}s -> "
      f"{segments} segments, {subsegments} sub-segments")
