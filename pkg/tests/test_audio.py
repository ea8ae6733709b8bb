"""WAV round-trips and rejection of malformed audio."""

import struct
import wave

import numpy as np
import pytest

from serkit.audio import AudioSignal, load_wav, write_wav
from serkit.errors import AudioFormatError


def test_roundtrip_preserves_samples(tmp_path):
    rng = np.random.default_rng(0)
    x = rng.uniform(-0.9, 0.9, size=4000)
    path = tmp_path / "a.wav"
    write_wav(path, x, 16000)
    sig = load_wav(path)
    assert sig.sample_rate_hz == 16000
    assert sig.samples.shape == (4000,)
    # Quantization error is bounded by half an LSB on the 1/32768 grid.
    assert np.abs(sig.samples - x).max() <= 0.5 / 32768


def test_roundtrip_is_exact_on_grid(tmp_path):
    # Values already on the int16 grid survive write/read bit-exactly.
    levels = np.array([-32768, -1, 0, 1, 12345, 32767], dtype=np.float64) / 32768.0
    path = tmp_path / "grid.wav"
    write_wav(path, levels, 8000)
    sig = load_wav(path)
    assert np.array_equal(sig.samples, levels)


def test_write_clips_out_of_range(tmp_path):
    path = tmp_path / "clip.wav"
    write_wav(path, np.array([2.0, -2.0]), 8000)
    sig = load_wav(path)
    assert sig.samples[0] == 32767 / 32768.0
    assert sig.samples[1] == -1.0


def test_duration_property():
    sig = AudioSignal(samples=np.zeros(24000), sample_rate_hz=16000)
    assert sig.duration_s == 1.5


def test_unsupported_rate_rejected(tmp_path):
    path = tmp_path / "rate.wav"
    with wave.open(str(path), "wb") as handle:
        handle.setnchannels(1)
        handle.setsampwidth(2)
        handle.setframerate(44100)
        handle.writeframes(b"\x00\x00" * 100)
    with pytest.raises(AudioFormatError):
        load_wav(path)


def test_stereo_rejected(tmp_path):
    path = tmp_path / "stereo.wav"
    with wave.open(str(path), "wb") as handle:
        handle.setnchannels(2)
        handle.setsampwidth(2)
        handle.setframerate(16000)
        handle.writeframes(b"\x00\x00\x00\x00" * 100)
    with pytest.raises(AudioFormatError):
        load_wav(path)


def test_wrong_sample_width_rejected(tmp_path):
    path = tmp_path / "w8.wav"
    with wave.open(str(path), "wb") as handle:
        handle.setnchannels(1)
        handle.setsampwidth(1)
        handle.setframerate(16000)
        handle.writeframes(b"\x00" * 100)
    with pytest.raises(AudioFormatError):
        load_wav(path)


def test_not_a_wav_rejected(tmp_path):
    path = tmp_path / "noise.wav"
    path.write_bytes(b"this is not RIFF data at all")
    with pytest.raises(AudioFormatError):
        load_wav(path)


def test_truncated_header_rejected(tmp_path):
    # Short garbage makes the stdlib reader hit EOF mid-header.
    path = tmp_path / "stub.wav"
    path.write_bytes(b"garbage")
    with pytest.raises(AudioFormatError):
        load_wav(path)


def test_missing_file_rejected(tmp_path):
    with pytest.raises(AudioFormatError):
        load_wav(tmp_path / "absent.wav")


def test_empty_payload_rejected(tmp_path):
    path = tmp_path / "empty.wav"
    with wave.open(str(path), "wb") as handle:
        handle.setnchannels(1)
        handle.setsampwidth(2)
        handle.setframerate(16000)
    with pytest.raises(AudioFormatError):
        load_wav(path)


def test_signal_validation():
    with pytest.raises(AudioFormatError):
        AudioSignal(samples=np.zeros((10, 2)), sample_rate_hz=16000)
    with pytest.raises(AudioFormatError):
        AudioSignal(samples=np.zeros(0), sample_rate_hz=16000)
    with pytest.raises(AudioFormatError):
        AudioSignal(samples=np.zeros(10), sample_rate_hz=44100)
