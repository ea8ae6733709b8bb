"""Spectral frontend: framed FFT magnitudes, triangular Mel filterbanks,
log compression, time-regression deltas, per-dimension normalization,
and a small binary cache format for feature matrices.

All heavy math runs in float64; assembled feature matrices are stored as
float32, which is also what the network trains on.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Sequence

import numpy as np

from .audio import AudioSignal
from .errors import ConfigError, DataError

LOG_FLOOR = 1e-10


@dataclass(frozen=True)
class StftConfig:
    """Framing parameters; FFT size is the next power of two >= window."""

    window_ms: float = 25.0
    hop_ms: float = 10.0
    window_kind: str = "hanning"

    def __post_init__(self) -> None:
        if self.window_ms <= 0 or self.hop_ms <= 0:
            raise ConfigError("window_ms and hop_ms must be positive")
        if self.hop_ms > self.window_ms:
            raise ConfigError("hop_ms must not exceed window_ms")
        if self.window_kind != "hanning":
            raise ConfigError(f"unsupported window kind {self.window_kind!r}")

    def window_samples(self, sample_rate_hz: int) -> int:
        return int(round(self.window_ms * sample_rate_hz / 1000.0))

    def hop_samples(self, sample_rate_hz: int) -> int:
        return int(round(self.hop_ms * sample_rate_hz / 1000.0))

    def fft_size(self, sample_rate_hz: int) -> int:
        return next_pow2(self.window_samples(sample_rate_hz))

    @property
    def frame_hop_s(self) -> float:
        return self.hop_ms / 1000.0


def next_pow2(n: int) -> int:
    """Smallest power of two >= n."""
    if n <= 0:
        raise ConfigError(f"need a positive size, got {n}")
    return 1 << (n - 1).bit_length()


def frame_count(n_samples: int, window: int, hop: int) -> int:
    """Number of full analysis windows: floor((N - window)/hop) + 1."""
    if n_samples < window:
        raise DataError(f"signal of {n_samples} samples shorter than one "
                        f"{window}-sample window")
    return (n_samples - window) // hop + 1


def stft_magnitude(signal: AudioSignal, cfg: StftConfig = StftConfig()) -> np.ndarray:
    """Magnitude spectrogram, shape (frames, fft_size//2 + 1), float64.

    Frames are Hanning-weighted and zero-padded to the FFT size; no
    pre-emphasis is applied.
    """
    rate = signal.sample_rate_hz
    win = cfg.window_samples(rate)
    hop = cfg.hop_samples(rate)
    x = np.asarray(signal.samples, dtype=np.float64)
    n_frames = frame_count(x.shape[0], win, hop)  # raises if too short
    frames = np.lib.stride_tricks.sliding_window_view(x, win)[::hop][:n_frames]
    spectrum = np.fft.rfft(frames * np.hanning(win), n=cfg.fft_size(rate), axis=1)
    return np.abs(spectrum)


def hz_to_mel(f_hz: np.ndarray | float) -> np.ndarray:
    return 2595.0 * np.log10(1.0 + np.asarray(f_hz, dtype=np.float64) / 700.0)


def mel_to_hz(mel: np.ndarray | float) -> np.ndarray:
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(fft_size: int, sample_rate_hz: int, n_mels: int = 40) -> np.ndarray:
    """Triangular filterbank, shape (n_mels, fft_size//2 + 1).

    Centers are equally spaced on the Mel scale between 0 Hz and Nyquist.
    Raises ConfigError when n_mels is too dense for the FFT resolution
    (some filter would cover no bin).
    """
    if n_mels < 1:
        raise ConfigError(f"n_mels must be >= 1, got {n_mels}")
    if fft_size <= 0 or fft_size & (fft_size - 1):
        raise ConfigError(f"fft_size must be a power of two, got {fft_size}")
    n_bins = fft_size // 2 + 1
    bin_hz = np.arange(n_bins, dtype=np.float64) * sample_rate_hz / fft_size
    points = mel_to_hz(np.linspace(0.0, float(hz_to_mel(sample_rate_hz / 2.0)),
                                   n_mels + 2))
    lo = points[:-2, None]
    center = points[1:-1, None]
    hi = points[2:, None]
    up = (bin_hz[None, :] - lo) / (center - lo)
    down = (hi - bin_hz[None, :]) / (hi - center)
    bank = np.clip(np.minimum(up, down), 0.0, None)
    empty = np.flatnonzero(bank.sum(axis=1) == 0.0)
    if empty.size:
        raise ConfigError(
            f"n_mels={n_mels} too large for fft_size={fft_size} at "
            f"{sample_rate_hz} Hz: filter {int(empty[0])} covers no FFT bin"
        )
    return bank


@lru_cache(maxsize=8)
def _cached_filterbank(fft_size: int, sample_rate_hz: int, n_mels: int) -> np.ndarray:
    return mel_filterbank(fft_size, sample_rate_hz, n_mels)


def apply_log_mel(magnitudes: np.ndarray, bank: np.ndarray,
                  eps: float = LOG_FLOOR) -> np.ndarray:
    """ln(bank-weighted energy + eps), shape (frames, n_mels)."""
    magnitudes = np.asarray(magnitudes, dtype=np.float64)
    bank = np.asarray(bank, dtype=np.float64)
    if magnitudes.ndim != 2 or bank.ndim != 2 or magnitudes.shape[1] != bank.shape[1]:
        raise DataError(
            f"bin-count mismatch: magnitudes {magnitudes.shape} vs bank {bank.shape}"
        )
    return np.log(magnitudes @ bank.T + eps)


def compute_deltas(features: np.ndarray, window_n: int = 2) -> np.ndarray:
    """Regression deltas over +/- window_n frames with edge replication."""
    if window_n < 1:
        raise ConfigError(f"window_n must be >= 1, got {window_n}")
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise DataError(f"expected a non-empty (frames, dims) matrix, got {x.shape}")
    t = x.shape[0]
    padded = np.pad(x, ((window_n, window_n), (0, 0)), mode="edge")
    num = np.zeros_like(x)
    for k in range(1, window_n + 1):
        num += k * (padded[window_n + k:window_n + k + t]
                    - padded[window_n - k:window_n - k + t])
    return num / (2.0 * sum(k * k for k in range(1, window_n + 1)))


@dataclass
class FeatureStats:
    """Per-dimension mean/std, fit on training material only."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def from_matrices(cls, matrices: Sequence[np.ndarray]) -> "FeatureStats":
        if not matrices:
            raise DataError("cannot fit feature statistics on an empty set")
        dims = matrices[0].shape[1]
        total = 0
        acc = np.zeros(dims, dtype=np.float64)
        acc_sq = np.zeros(dims, dtype=np.float64)
        for m in matrices:
            m = np.asarray(m, dtype=np.float64)
            if m.shape[1] != dims:
                raise DataError(f"dimension mismatch: {m.shape[1]} vs {dims}")
            total += m.shape[0]
            acc += m.sum(axis=0)
            acc_sq += (m * m).sum(axis=0)
        mean = acc / total
        var = np.maximum(acc_sq / total - mean * mean, 0.0)
        return cls(mean=mean, std=np.sqrt(var))

    def normalize(self, features: np.ndarray) -> np.ndarray:
        # Zero-variance dimensions divide by 1 instead of 0.
        denom = np.where(self.std > 0.0, self.std, 1.0)
        out = (np.asarray(features, dtype=np.float64) - self.mean) / denom
        return out.astype(np.float32)


def assemble_features(log_mel: np.ndarray, use_deltas: bool = True,
                      stats: FeatureStats | None = None) -> np.ndarray:
    """Stack [mel | delta | delta-delta] (or mel alone) as float32.

    When stats is given, applies per-dimension z-normalization with it;
    the caller is responsible for fitting stats on training data only.
    """
    log_mel = np.asarray(log_mel, dtype=np.float64)
    if use_deltas:
        d1 = compute_deltas(log_mel)
        d2 = compute_deltas(d1)
        feats = np.concatenate([log_mel, d1, d2], axis=1)
    else:
        feats = log_mel
    feats32 = np.ascontiguousarray(feats, dtype=np.float32)
    if stats is not None:
        feats32 = stats.normalize(feats32)
    return feats32


def featurize_signal(signal: AudioSignal, stft_cfg: StftConfig = StftConfig(),
                     n_mels: int = 40, use_deltas: bool = True) -> np.ndarray:
    """Full frontend for one utterance: raw (unnormalized) float32 features."""
    mags = stft_magnitude(signal, stft_cfg)
    bank = _cached_filterbank(stft_cfg.fft_size(signal.sample_rate_hz),
                              signal.sample_rate_hz, n_mels)
    return assemble_features(apply_log_mel(mags, bank), use_deltas=use_deltas)


# --- feature cache files -------------------------------------------------
#
# Layout: magic "SERF", then version, rows, cols as little-endian uint32,
# then rows*cols float32 little-endian values in row-major order.

CACHE_MAGIC = b"SERF"
CACHE_VERSION = 1
_HEADER = struct.Struct("<4sIII")


def write_feature_cache(path: str | Path, features: np.ndarray) -> None:
    feats = np.ascontiguousarray(features, dtype="<f4")
    if feats.ndim != 2:
        raise DataError(f"feature cache expects a 2-D matrix, got shape {feats.shape}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as handle:
        handle.write(_HEADER.pack(CACHE_MAGIC, CACHE_VERSION, *feats.shape))
        handle.write(feats.tobytes())


def read_feature_cache(path: str | Path) -> np.ndarray:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except FileNotFoundError as exc:
        raise DataError(f"feature cache not found: {path}") from exc
    if len(blob) < _HEADER.size:
        raise DataError(f"truncated feature cache: {path}")
    magic, version, rows, cols = _HEADER.unpack_from(blob)
    if magic != CACHE_MAGIC:
        raise DataError(f"bad magic {magic!r} in feature cache: {path}")
    if version != CACHE_VERSION:
        raise DataError(f"unsupported feature cache version {version}: {path}")
    payload = blob[_HEADER.size:]
    if len(payload) != 4 * rows * cols:
        raise DataError(
            f"feature cache payload of {len(payload)} bytes does not match "
            f"{rows}x{cols} float32: {path}"
        )
    return np.frombuffer(payload, dtype="<f4").reshape(rows, cols).copy()
