"""Reading and writing the PCM16 mono WAV files the pipeline consumes."""

from __future__ import annotations

import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import AudioFormatError

SUPPORTED_RATES = (8000, 16000)

# int16 full scale; -32768 maps to exactly -1.0.
PCM_SCALE = 32768.0


@dataclass
class AudioSignal:
    """Mono waveform with samples in [-1, 1]."""

    samples: np.ndarray
    sample_rate_hz: int
    source_path: str = ""

    @property
    def duration_s(self) -> float:
        return self.samples.shape[0] / self.sample_rate_hz

    def __post_init__(self) -> None:
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise AudioFormatError(f"empty or non-mono signal: {self.source_path!r}")
        if self.sample_rate_hz not in SUPPORTED_RATES:
            raise AudioFormatError(
                f"unsupported sample rate {self.sample_rate_hz} Hz "
                f"(expected one of {SUPPORTED_RATES}): {self.source_path!r}"
            )


def load_wav(path: str | Path) -> AudioSignal:
    """Load a PCM16 mono WAV file and scale samples by 1/32768.

    Raises AudioFormatError for non-PCM encodings, multichannel audio,
    non-16-bit widths, unsupported rates, or empty payloads.
    """
    path = Path(path)
    try:
        with wave.open(str(path), "rb") as handle:
            if handle.getcomptype() != "NONE":
                raise AudioFormatError(f"non-PCM encoding {handle.getcomptype()!r}: {path}")
            if handle.getnchannels() != 1:
                raise AudioFormatError(
                    f"expected mono, got {handle.getnchannels()} channels: {path}"
                )
            if handle.getsampwidth() != 2:
                raise AudioFormatError(
                    f"expected 16-bit PCM, got {8 * handle.getsampwidth()}-bit: {path}"
                )
            rate = handle.getframerate()
            raw = handle.readframes(handle.getnframes())
    except (wave.Error, EOFError) as exc:
        # The stdlib reader raises bare EOFError on truncated headers.
        raise AudioFormatError(f"not a PCM RIFF/WAVE file ({exc}): {path}") from exc
    except FileNotFoundError as exc:
        raise AudioFormatError(f"audio file not found: {path}") from exc
    if len(raw) == 0:
        raise AudioFormatError(f"empty audio payload: {path}")
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / PCM_SCALE
    return AudioSignal(samples=samples, sample_rate_hz=rate, source_path=str(path))


def write_wav(path: str | Path, samples: np.ndarray, sample_rate_hz: int) -> None:
    """Write a float waveform as PCM16 mono, clipping to the int16 range."""
    quantized = np.clip(np.rint(np.asarray(samples, dtype=np.float64) * PCM_SCALE),
                        -32768, 32767).astype("<i2")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with wave.open(str(path), "wb") as handle:
        handle.setnchannels(1)
        handle.setsampwidth(2)
        handle.setframerate(sample_rate_hz)
        handle.writeframes(quantized.tobytes())
