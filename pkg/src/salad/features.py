"""FOA intensity-vector features.

A 4-channel first-order Ambisonics signal (W, X, Y, Z; N3D) is turned into
per time-frequency bin active and reactive intensity vectors, normalized by
the sound power, giving a frames x bins x 6 tensor.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .errors import BadMagicError, FormatError, TruncatedError, VersionError

__all__ = [
    "FoaSignal",
    "StftSpec",
    "stft",
    "intensity_features",
    "frame_sequences",
    "extract_features",
    "read_foa_wav",
    "write_foa_wav",
    "save_sldf",
    "load_sldf",
    "POWER_EPS",
]

POWER_EPS = 1e-12

SLDF_MAGIC = b"SLDF"
SLDF_VERSION = 1


@dataclass(frozen=True)
class FoaSignal:
    """Time-domain FOA audio, channel order W, X, Y, Z."""

    samples: np.ndarray
    sample_rate: int = 16000

    def __post_init__(self):
        s = np.asarray(self.samples)
        if s.ndim != 2 or s.shape[0] != 4:
            raise ValueError(f"FOA signal must have shape (4, T), got {s.shape}")
        if self.sample_rate <= 0:
            raise ValueError("sample rate must be positive")

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def duration(self) -> float:
        return self.n_samples / self.sample_rate


@dataclass(frozen=True)
class StftSpec:
    fft_size: int = 1024
    hop: int = 512

    def __post_init__(self):
        n = self.fft_size
        if n < 2 or n & (n - 1):
            raise ValueError(f"fft_size must be a power of two, got {n}")
        if not (0 < self.hop <= n):
            raise ValueError(f"hop must be in (0, fft_size], got {self.hop}")

    @property
    def n_bins(self) -> int:
        return self.fft_size // 2 + 1

    @classmethod
    def half_overlap(cls, fft_size: int) -> "StftSpec":
        return cls(fft_size, fft_size // 2)

    def window(self) -> np.ndarray:
        n = np.arange(self.fft_size)
        return np.sin(np.pi * (n + 0.5) / self.fft_size)

    def n_frames(self, n_samples: int) -> int:
        if n_samples < self.fft_size:
            return 0
        return 1 + (n_samples - self.fft_size) // self.hop

    def samples_for(self, n_frames: int) -> int:
        """Signal length that yields exactly ``n_frames`` frames."""
        return (n_frames - 1) * self.hop + self.fft_size


def stft(signal, spec: StftSpec = StftSpec()) -> np.ndarray:
    """Sine-windowed STFT of every channel.

    Returns a complex array of shape (channels, frames, fft_size // 2 + 1);
    frame t covers samples [t * hop, t * hop + fft_size).
    """
    x = np.asarray(signal.samples if isinstance(signal, FoaSignal) else signal, dtype=float)
    if x.ndim == 1:
        x = x[None]
    n_frames = spec.n_frames(x.shape[-1])
    if n_frames == 0:
        raise ValueError(
            f"signal of {x.shape[-1]} samples is shorter than one {spec.fft_size}-sample frame"
        )
    frames = np.lib.stride_tricks.sliding_window_view(x, spec.fft_size, axis=-1)[
        :, : (n_frames - 1) * spec.hop + 1 : spec.hop
    ]
    return np.fft.rfft(frames * spec.window(), axis=-1)


def intensity_features(spec: np.ndarray, eps: float = POWER_EPS) -> np.ndarray:
    """Power-normalized active/reactive intensity, shape (frames, bins, 6).

    Channel order: Ia_x, Ia_y, Ia_z, Ir_x, Ir_y, Ir_z with Ia = Re(W conj(V))
    and Ir = Im(W conj(V)) for V in X, Y, Z. The normalizer is
    |W|^2 + (|X|^2 + |Y|^2 + |Z|^2) / 3 + eps.
    """
    spec = np.asarray(spec)
    if spec.ndim != 3 or spec.shape[0] != 4:
        raise ValueError(f"expected a (4, frames, bins) spectrogram, got {spec.shape}")
    w, dip = spec[0], spec[1:]
    cross = w[None] * np.conj(dip)  # (3, N, F)
    power = np.abs(w) ** 2 + np.sum(np.abs(dip) ** 2, axis=0) / 3.0 + eps
    feats = np.concatenate([cross.real, cross.imag], axis=0) / power
    return np.moveaxis(feats, 0, -1)


def frame_sequences(features: np.ndarray, n: int = 25) -> list[np.ndarray]:
    """Split a (frames, bins, 6) stream into non-overlapping n-frame windows.

    A trailing partial window is dropped.
    """
    if n < 1:
        raise ValueError("sequence length must be >= 1")
    count = features.shape[0] // n
    return [features[k * n : (k + 1) * n] for k in range(count)]


def extract_features(
    signal, spec: StftSpec = StftSpec(), n_bins: int | None = None
) -> np.ndarray:
    """STFT + intensity features; optionally keep only the lowest ``n_bins`` bins."""
    feats = intensity_features(stft(signal, spec))
    if n_bins is not None:
        if n_bins > feats.shape[1]:
            raise ValueError(f"requested {n_bins} bins but the STFT has {feats.shape[1]}")
        feats = feats[:, :n_bins]
    return feats


def read_foa_wav(path) -> FoaSignal:
    rate, data = wavfile.read(path)
    data = np.asarray(data)
    if data.ndim != 2 or data.shape[1] != 4:
        raise FormatError(f"{path}: expected a 4-channel WAV, got shape {data.shape}")
    if np.issubdtype(data.dtype, np.integer):
        data = data / float(np.iinfo(data.dtype).max)
    return FoaSignal(np.ascontiguousarray(data.T, dtype=np.float64), int(rate))


def write_foa_wav(path, signal: FoaSignal) -> None:
    """Write 32-bit float 4-channel WAV (W, X, Y, Z)."""
    wavfile.write(path, signal.sample_rate, np.ascontiguousarray(signal.samples.T, dtype="<f4"))


def save_sldf(path, features: np.ndarray) -> None:
    arr = np.asarray(features)
    if arr.ndim != 3:
        raise ValueError(f"feature tensor must be 3-D, got shape {arr.shape}")
    header = SLDF_MAGIC + struct.pack("<4I", SLDF_VERSION, *arr.shape)
    Path(path).write_bytes(header + np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_sldf(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 4 or raw[:4] != SLDF_MAGIC:
        raise BadMagicError(f"{path}: not an SLDF feature file")
    if len(raw) < 20:
        raise TruncatedError(f"{path}: header truncated ({len(raw)} bytes)")
    version, n, f, ch = struct.unpack("<4I", raw[4:20])
    if version != SLDF_VERSION:
        raise VersionError(f"{path}: SLDF version {version}, expected {SLDF_VERSION}")
    expected = 20 + 4 * n * f * ch
    if len(raw) != expected:
        raise TruncatedError(f"{path}: expected {expected} bytes, found {len(raw)}")
    return np.frombuffer(raw, dtype="<f4", offset=20).reshape(n, f, ch).astype(np.float32)
