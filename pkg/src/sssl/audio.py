"""Audio decoding, overlapped segmentation and log-mel features.

Clips are cut into fixed-duration segments with a configurable overlap
and are never padded: audio shorter than one segment yields nothing,
and frames that would overrun a segment are dropped.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .errors import AudioReadError, EmptyAudioError, ManifestError, UnsupportedEncodingError

DEFAULT_SAMPLE_RATE = 22_050
WIN_LENGTH = 1024
HOP_LENGTH = 512
N_MELS = 128
LOG_FLOOR = 1e-10


@dataclass
class Waveform:
    samples: np.ndarray  # float64 in [-1, 1], mono
    sample_rate: int
    source_id: str = ""

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass
class Segment:
    song_id: str
    start_s: float
    duration_s: float
    samples: np.ndarray
    sample_rate: int


@dataclass
class MelSpec:
    values: np.ndarray  # (n_mels, n_frames) log energies
    segment_ref: tuple = ("", 0.0)


@dataclass
class Manifest:
    rows: list  # of (audio_path, song_id, label_id)
    class_count: int
    label_names: list = field(default_factory=list)


def load_audio(path, target_rate: int = DEFAULT_SAMPLE_RATE) -> Waveform:
    """Decode a PCM WAV file to a mono waveform at ``target_rate``.

    Accepts 16-bit integer or 32-bit float RIFF WAV, mono or stereo.
    Stereo is averaged to mono; resampling is linear interpolation.
    """
    p = Path(path)
    if not p.is_file():
        raise AudioReadError(f"audio file not found: {p}")
    try:
        rate, data = wavfile.read(str(p))
    except Exception as e:
        raise AudioReadError(f"cannot decode {p}: {e}") from e

    if data.dtype == np.int16:
        x = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        x = data.astype(np.float64)
    else:
        raise UnsupportedEncodingError(
            f"{p}: unsupported sample format {data.dtype}; expected 16-bit PCM or 32-bit float"
        )
    if x.size == 0:
        raise EmptyAudioError(f"{p}: zero-length audio")
    if x.ndim == 2:
        x = x.mean(axis=1)
    elif x.ndim != 1:
        raise UnsupportedEncodingError(f"{p}: unexpected channel layout {data.shape}")
    x = np.clip(x, -1.0, 1.0)

    if rate != target_rate:
        x = _resample_linear(x, rate, target_rate)
    return Waveform(samples=x, sample_rate=target_rate, source_id=p.stem)


def _resample_linear(x: np.ndarray, src_rate: int, dst_rate: int) -> np.ndarray:
    n_out = int(round(len(x) * dst_rate / src_rate))
    if n_out <= 0:
        raise EmptyAudioError(f"resampling to {dst_rate} Hz leaves no samples")
    src_t = np.arange(len(x)) / src_rate
    dst_t = np.arange(n_out) / dst_rate
    return np.interp(dst_t, src_t, x)


def segment(w: Waveform, duration_s: int, overlap_s: int) -> list:
    """Cut a waveform into overlapping segments starting at t=0.

    hop = duration - overlap; a clip shorter than one segment yields an
    empty list. Segment sample counts are exact (no padding).
    """
    if overlap_s >= duration_s:
        raise ValueError(f"overlap ({overlap_s}s) must be smaller than duration ({duration_s}s)")
    if duration_s <= 0:
        raise ValueError("duration must be positive")
    hop_s = duration_s - overlap_s
    seg_len = int(round(duration_s * w.sample_rate))
    hop_len = int(round(hop_s * w.sample_rate))
    n = len(w.samples)
    if n < seg_len:
        return []
    count = (n - seg_len) // hop_len + 1
    out = []
    for i in range(count):
        start = i * hop_len
        out.append(
            Segment(
                song_id=w.source_id,
                start_s=start / w.sample_rate,
                duration_s=float(duration_s),
                samples=w.samples[start : start + seg_len],
                sample_rate=w.sample_rate,
            )
        )
    return out


def hann_window(n: int) -> np.ndarray:
    # Periodic variant, the usual choice for STFT analysis.
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * np.arange(n) / n))


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(sample_rate: int, n_fft: int = WIN_LENGTH, n_mels: int = N_MELS) -> np.ndarray:
    """Triangular mel filterbank (n_mels, n_fft//2 + 1), 0 Hz to Nyquist.

    Peak response of each triangle is 1 (no area normalization).
    """
    nyquist = sample_rate / 2.0
    mel_pts = np.linspace(hz_to_mel(0.0), hz_to_mel(nyquist), n_mels + 2)
    hz_pts = mel_to_hz(mel_pts)
    fft_freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    fb = np.zeros((n_mels, len(fft_freqs)))
    for m in range(n_mels):
        lo, ctr, hi = hz_pts[m], hz_pts[m + 1], hz_pts[m + 2]
        up = (fft_freqs - lo) / (ctr - lo)
        down = (hi - fft_freqs) / (hi - ctr)
        fb[m] = np.maximum(0.0, np.minimum(up, down))
    return fb


def frame_count(n_samples: int, win: int = WIN_LENGTH, hop: int = HOP_LENGTH) -> int:
    if n_samples < win:
        return 0
    return (n_samples - win) // hop + 1


def mel_power_spectrogram(samples: np.ndarray, sample_rate: int, filterbank: np.ndarray | None = None) -> np.ndarray:
    """Mel-projected power spectrogram, (n_mels, n_frames), pre-log.

    Frames are non-centered sliding windows (win 1024, hop 512); windows
    that would overrun the signal are dropped.
    """
    n_frames = frame_count(len(samples))
    if n_frames == 0:
        raise ValueError(f"segment of {len(samples)} samples is shorter than one {WIN_LENGTH}-sample window")
    if filterbank is None:
        filterbank = mel_filterbank(sample_rate)
    window = hann_window(WIN_LENGTH)
    idx = np.arange(WIN_LENGTH)[None, :] + HOP_LENGTH * np.arange(n_frames)[:, None]
    frames = samples[idx] * window[None, :]
    power = np.abs(np.fft.rfft(frames, axis=1)) ** 2  # (n_frames, n_fft//2+1)
    return filterbank @ power.T


def mel_spectrogram(s: Segment, filterbank: np.ndarray | None = None) -> MelSpec:
    """Log-mel spectrogram of a segment: log(mel_power + 1e-10)."""
    power = mel_power_spectrogram(s.samples, s.sample_rate, filterbank)
    return MelSpec(values=np.log(power + LOG_FLOOR), segment_ref=(s.song_id, s.start_s))


def load_manifest(path) -> Manifest:
    """Parse a ``path,song_id,label`` CSV into a manifest.

    Label ids are densified to 0..K-1 in first-seen order of label names.
    Missing audio files are not checked here; they surface at load time.
    """
    p = Path(path)
    if not p.is_file():
        raise ManifestError(f"manifest not found: {p}")
    rows = []
    label_ids: dict = {}
    seen_ids: set = set()
    with open(p, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["path", "song_id", "label"]:
            raise ManifestError(f"{p}: expected header 'path,song_id,label', got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 3:
                raise ManifestError(f"{p}:{lineno}: expected 3 fields, got {len(row)}")
            audio_path, song_id, label = (c.strip() for c in row)
            if not label:
                raise ManifestError(f"{p}:{lineno}: empty label for song '{song_id}'")
            if song_id in seen_ids:
                raise ManifestError(f"{p}: duplicate song_id '{song_id}'")
            seen_ids.add(song_id)
            if label not in label_ids:
                label_ids[label] = len(label_ids)
            rows.append((audio_path, song_id, label_ids[label]))
    return Manifest(rows=rows, class_count=len(label_ids), label_names=list(label_ids))
