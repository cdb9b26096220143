"""Shoebox-room FOA impulse responses and labeled multi-speaker mixtures.

Impulse responses come from the image-source method. Each image adds an
impulse at delay d / c with amplitude beta^k / d (k = number of wall
reflections), encoded to FOA with N3D gains [1, sqrt3 ux, sqrt3 uy, sqrt3 uz]
where u is the unit direction from the microphone to the image.

The uniform wall reflection coefficient beta is calibrated per room so that
the Schroeder decay of the generated IR matches the requested RT60 (see
:func:`reflection_coefficient`).
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import signal as sps
from scipy.io import wavfile
from scipy.spatial.transform import Rotation

from .features import FoaSignal, StftSpec, extract_features, save_sldf, write_foa_wav
from .grid import to_angles

__all__ = [
    "SPEED_OF_SOUND",
    "RoomConfig",
    "FoaSrir",
    "MixtureSpec",
    "sample_room",
    "reflection_coefficient",
    "sabine_reflection_coefficient",
    "image_source_srir",
    "schroeder_t60",
    "synthetic_speech",
    "load_speech_pool",
    "render_mixture",
    "late_tail",
    "diffuse_babble",
    "build_dataset",
]

log = logging.getLogger(__name__)

SPEED_OF_SOUND = 343.0
SQRT3 = np.sqrt(3.0)
LATE_START_S = 0.050


@dataclass(frozen=True)
class RoomConfig:
    dims: np.ndarray  # (3,) length, width, height in meters
    rt60: float
    mic: np.ndarray  # (3,)
    sources: np.ndarray  # (S, 3)

    def __post_init__(self):
        dims = np.asarray(self.dims, dtype=float)
        mic = np.asarray(self.mic, dtype=float)
        src = np.atleast_2d(np.asarray(self.sources, dtype=float))
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "mic", mic)
        object.__setattr__(self, "sources", src)
        if dims.shape != (3,) or np.any(dims <= 0):
            raise ValueError(f"room dimensions must be 3 positive lengths, got {dims}")
        for p in (mic, *src):
            if np.any(p < 0) or np.any(p > dims):
                raise ValueError(f"position {p} lies outside the {dims} room")

    @property
    def volume(self) -> float:
        return float(np.prod(self.dims))

    @property
    def surface(self) -> float:
        lx, ly, lz = self.dims
        return float(2 * (lx * ly + ly * lz + lx * lz))

    def wall_clearance(self) -> float:
        return float(min(self.mic.min(), (self.dims - self.mic).min()))


@dataclass(frozen=True)
class FoaSrir:
    ir: np.ndarray  # (4, T) W, X, Y, Z
    azimuth: float  # direct-path DOA, degrees
    elevation: float
    distance: float  # meters
    sample_rate: int = 16000

    @property
    def doa(self) -> tuple[float, float]:
        """(elevation, azimuth) in degrees, the grid's ordering."""
        return self.elevation, self.azimuth


@dataclass(frozen=True)
class MixtureSpec:
    n_sources: int = 1
    sir_db: float = 0.0
    snr_db: float | None = None  # None: no noise
    seed: int = 0

    def __post_init__(self):
        if self.n_sources not in (1, 2, 3):
            raise ValueError("mixtures hold 1, 2 or 3 sources")
        if not 0.0 <= self.sir_db <= 10.0:
            raise ValueError("SIR must lie in [0, 10] dB")
        if self.snr_db is not None and not 0.0 <= self.snr_db <= 20.0:
            raise ValueError("SNR must lie in [0, 20] dB")


# -- room sampling ------------------------------------------------------------


def sample_room(rng: np.random.Generator, n_sources: int = 1, min_source_distance: float = 0.5,
                rt60_range=(0.2, 0.8), directions=None) -> RoomConfig:
    """Random shoebox room: L, W ~ U[2, 10] m, H ~ U[2, 3] m, RT60 ~ U[0.2, 0.8] s.

    The microphone is drawn uniformly in the room and redrawn until it is at
    least 0.5 m from every wall. Sources are uniform in the room, redrawn if
    closer than ``min_source_distance`` to the microphone. If ``directions``
    (unit vectors, one per source) is given, each source is instead placed
    at a uniform distance along its direction, and ``n_sources`` is ignored.
    """
    dims = np.array([rng.uniform(2, 10), rng.uniform(2, 10), rng.uniform(2, 3)])
    rt60 = float(rng.uniform(*rt60_range))
    if directions is not None:
        directions = np.atleast_2d(np.asarray(directions, dtype=float))
        directions = directions / np.linalg.norm(directions, axis=1, keepdims=True)
    while True:
        mic = rng.uniform(0, 1, 3) * dims
        if np.all(mic >= 0.5) and np.all(dims - mic >= 0.5):
            if directions is None:
                break
            reach = _reach(dims, mic, directions)
            if np.all(reach >= min_source_distance):
                break
    if directions is not None:
        dist = rng.uniform(min_source_distance, reach)
        return RoomConfig(dims, rt60, mic, mic + dist[:, None] * directions)
    sources = []
    while len(sources) < n_sources:
        s = rng.uniform(0, 1, 3) * dims
        if np.linalg.norm(s - mic) >= min_source_distance:
            sources.append(s)
    return RoomConfig(dims, rt60, mic, np.array(sources))


def _reach(dims, mic, directions, margin=0.1):
    """Distance from the mic to the first wall along each direction, less ``margin``."""
    with np.errstate(divide="ignore", invalid="ignore"):
        hit = np.where(directions > 0, (dims - mic) / directions,
                       np.where(directions < 0, -mic / directions, np.inf))
    return hit.min(axis=1) - margin


# -- reflection coefficient ----------------------------------------------------


@lru_cache(maxsize=1)
def _probe_directions(n: int = 1000) -> np.ndarray:
    i = np.arange(n) + 0.5
    z = 1.0 - 2.0 * i / n
    r = np.sqrt(1.0 - z * z)
    phi = np.pi * (1.0 + 5**0.5) * i
    return np.abs(np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1))


def _fit_decay(t, edc_db, hi=-5.0, lo=-35.0) -> float:
    i0 = int(np.argmax(edc_db <= hi))
    i1 = int(np.argmax(edc_db <= lo))
    if i1 <= i0 + 1:
        raise ValueError("decay curve does not span the fit range")
    slope = np.polyfit(t[i0:i1], edc_db[i0:i1], 1)[0]
    return -60.0 / slope


def reflection_coefficient(dims, rt60: float) -> float:
    """Uniform pressure reflection coefficient giving an image-source IR with ``rt60``.

    In an image lattice an arrival from direction u has undergone
    c t sum_i |u_i| / L_i reflections after t seconds, so the energy decay is
    a mixture of exponentials over directions rather than the single
    exponential assumed by Sabine's formula. The per-reflection energy loss
    k = -ln(beta^2) is chosen so that the -5..-35 dB fit of the predicted
    Schroeder curve equals ``rt60``. T60 scales as 1/k, so one evaluation at
    k = 1 suffices.
    """
    if rt60 <= 0:
        raise ValueError("RT60 must be positive")
    rates = SPEED_OF_SOUND * (_probe_directions() / np.asarray(dims, dtype=float)).sum(axis=1)
    t = np.linspace(0.0, 30.0 / rates.mean(), 3000)
    edc = (np.exp(-np.outer(t, rates)) / rates).mean(axis=1)
    t60_unit = _fit_decay(t, 10 * np.log10(edc / edc[0]))
    k = t60_unit / rt60
    return float(np.exp(-k / 2.0))


def sabine_reflection_coefficient(dims, rt60: float) -> float:
    """Sabine mapping beta = sqrt(1 - 0.161 V / (S T60)), kept for comparison."""
    dims = np.asarray(dims, dtype=float)
    v = np.prod(dims)
    s = 2 * (dims[0] * dims[1] + dims[1] * dims[2] + dims[0] * dims[2])
    alpha = 24 * np.log(10) * v / (SPEED_OF_SOUND * s * rt60)
    if alpha > 1:
        raise ValueError("RT60 too short for this room under Sabine's formula")
    return float(np.sqrt(1 - alpha))


# -- image sources -------------------------------------------------------------


def _accumulate(out, delays, amps, gains):
    """Add fractional-delay impulses (linear interpolation) to ``out`` (4, T)."""
    n = out.shape[1]
    i0 = np.floor(delays).astype(np.int64)
    frac = delays - i0
    keep = i0 + 1 < n
    i0, frac, amps, gains = i0[keep], frac[keep], amps[keep], gains[:, keep]
    for ch in range(4):
        w = amps * gains[ch]
        out[ch] += np.bincount(i0, w * (1 - frac), minlength=n)[:n]
        out[ch] += np.bincount(i0 + 1, w * frac, minlength=n)[:n]


def _images_for_source(out, dims, mic, src, beta, max_dist, fs):
    r = max_dist
    lx, ly, lz = dims
    nmax = np.ceil(r / (2 * dims)).astype(int) + 1
    qs = np.array([0, 1])
    for nx in range(-nmax[0], nmax[0] + 1):
        for qx in qs:
            dx = (1 - 2 * qx) * src[0] + 2 * nx * lx - mic[0]
            if abs(dx) > r:
                continue
            kx = abs(nx - qx) + abs(nx)
            ry = np.sqrt(r * r - dx * dx)
            ny_max = int(np.ceil(ry / (2 * ly))) + 1
            ny = np.arange(-ny_max, ny_max + 1)
            nz = np.arange(-nmax[2], nmax[2] + 1)
            NY, QY, NZ, QZ = np.meshgrid(ny, qs, nz, qs, indexing="ij")
            dy = (1 - 2 * QY) * src[1] + 2 * NY * ly - mic[1]
            dz = (1 - 2 * QZ) * src[2] + 2 * NZ * lz - mic[2]
            dist = np.sqrt(dx * dx + dy * dy + dz * dz)
            keep = dist <= r
            if not keep.any():
                continue
            k = kx + (np.abs(NY - QY) + np.abs(NY) + np.abs(NZ - QZ) + np.abs(NZ))[keep]
            if beta == 0.0:
                direct = k == 0
                if not direct.any():
                    continue
                keep[keep] = direct
                k = k[direct]
            d = dist[keep]
            amps = beta**k / d
            u = np.stack([np.full(d.shape, dx), dy[keep], dz[keep]]) / d
            gains = np.vstack([np.ones_like(d), SQRT3 * u])
            _accumulate(out, d / SPEED_OF_SOUND * fs, amps, gains)


def image_source_srir(room: RoomConfig, sample_rate: int = 16000, beta: float | None = None,
                      length: int | None = None, highpass_hz: float | None = 100.0,
                      refine: bool = True) -> list[FoaSrir]:
    """FOA impulse response from every source in ``room`` to its microphone.

    ``beta`` overrides the calibrated reflection coefficient (0 gives a free
    field). The IR covers 1.5 x RT60 by default; every image whose path fits
    in that window is included. Reverberant IRs are high-passed (2nd-order
    Butterworth at ``highpass_hz``): all image amplitudes are positive, so
    without it dense late arrivals pile up coherently at DC and stretch the
    decay.

    With ``refine`` the calibrated coefficient gets one correction from the
    measured Schroeder T60 of the first source's IR (see :func:`_refine_beta`).
    """
    fs = sample_rate
    if beta is None:
        beta = reflection_coefficient(room.dims, room.rt60)
        if refine:
            beta = _refine_beta(room, beta, fs, length, highpass_hz)
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"reflection coefficient must be in [0, 1], got {beta}")
    results = []
    for src in room.sources:
        rel = src - room.mic
        dist = float(np.linalg.norm(rel))
        if dist < 0.01:
            raise ValueError("source coincides with the microphone (< 1 cm)")
        n = length if length is not None else int(np.ceil(1.5 * room.rt60 * fs))
        n = max(n, int(np.ceil(dist / SPEED_OF_SOUND * fs)) + 3)
        out = np.zeros((4, n))
        max_dist = (n - 2) / fs * SPEED_OF_SOUND
        _images_for_source(out, room.dims, room.mic, src, beta, max_dist, fs)
        if beta > 0 and highpass_hz:
            sos = sps.butter(2, highpass_hz, "highpass", fs=fs, output="sos")
            out = sps.sosfilt(sos, out, axis=1)
        el, az = to_angles(rel)
        results.append(FoaSrir(out, float(az), float(el), dist, fs))
    return results


def _refine_beta(room: RoomConfig, beta: float, fs: int, length, highpass_hz) -> float:
    """Rescale the per-reflection energy loss k = -ln(beta^2) by measured T60 / target.

    The directional decay model leaves a room-dependent error of about
    +7 +- 7 % in the measured T60; one step using T60 ~ 1/k removes most
    of it. The coefficient stays a property of the room, shared by all
    sources.
    """
    probe = RoomConfig(room.dims, room.rt60, room.mic, room.sources[:1])
    ir = image_source_srir(probe, fs, beta, length, highpass_hz, refine=False)[0].ir[0]
    try:
        measured = schroeder_t60(ir, fs)
    except ValueError:
        return beta
    k = -2.0 * np.log(beta) * measured / room.rt60
    return float(np.clip(np.exp(-k / 2.0), 0.0, 1.0))


def schroeder_t60(ir, sample_rate: int = 16000, hi: float = -5.0, lo: float = -35.0) -> float:
    """T60 from a linear fit to the backward-integrated energy decay curve (T30 by default)."""
    e = np.asarray(ir, dtype=float) ** 2
    edc = np.cumsum(e[::-1])[::-1]
    edc_db = 10 * np.log10(np.maximum(edc / edc[0], 1e-300))
    t = np.arange(len(e)) / sample_rate
    return _fit_decay(t, edc_db, hi, lo)


# -- dry signals -------------------------------------------------------------


def synthetic_speech(rng: np.random.Generator, n_samples: int, sample_rate: int = 16000) -> np.ndarray:
    """Speech-like test signal: voiced formant segments, fricative bursts and pauses.

    Opens with sound rather than a pause. Normalized to unit RMS.
    """
    fs = sample_rate
    out = np.zeros(n_samples)
    f0_base = rng.uniform(90, 250)
    pos = 0
    while pos < n_samples:
        seg = int(rng.uniform(0.08, 0.3) * fs)
        kind = rng.choice(3, p=[0.7, 0.2, 0.1])
        if pos == 0 and kind == 2:
            kind = 0  # never open with a pause, short clips would be silent
        end = min(pos + seg, n_samples)
        m = end - pos
        if kind == 0:
            t = np.arange(m) / fs
            f0 = f0_base * (1 + 0.08 * np.sin(2 * np.pi * rng.uniform(2, 6) * t + rng.uniform(0, 6.3)))
            phase = 2 * np.pi * np.cumsum(f0) / fs
            src = sps.sawtooth(phase) + 0.05 * rng.standard_normal(m)
            for fc, bw in zip(
                (rng.uniform(300, 850), rng.uniform(850, 2500), rng.uniform(2300, 3500)),
                (80, 120, 180),
            ):
                r = np.exp(-np.pi * bw / fs)
                a = [1, -2 * r * np.cos(2 * np.pi * fc / fs), r * r]
                src = sps.lfilter([1 - r], a, src)
            piece = src
        elif kind == 1:
            lo, hi = sorted(rng.uniform(1500, 7000, 2))
            hi = max(hi, lo + 500)
            sos = sps.butter(4, [lo, min(hi, 0.45 * fs)], "bandpass", fs=fs, output="sos")
            piece = sps.sosfilt(sos, rng.standard_normal(m))
        else:
            piece = np.zeros(m)
        if m > 1:
            piece = piece * np.hanning(m + 2)[1:-1]
            rms = np.sqrt(np.mean(piece**2))
            if rms > 0:
                piece = piece / rms * rng.uniform(0.3, 1.0)
        out[pos:end] = piece
        pos = end
    rms = np.sqrt(np.mean(out**2))
    return out / rms if rms > 0 else out


def load_speech_pool(directory, sample_rate: int = 16000) -> list[np.ndarray]:
    """Mono WAV files at ``sample_rate`` from a directory, as float arrays."""
    pool = []
    for path in sorted(Path(directory).glob("**/*.wav")):
        rate, data = wavfile.read(path)
        if rate != sample_rate:
            log.warning("skipping %s: %d Hz != %d Hz", path, rate, sample_rate)
            continue
        data = np.asarray(data, dtype=float)
        if data.ndim > 1:
            data = data.mean(axis=1)
        if np.any(data):
            pool.append(data / np.sqrt(np.mean(data**2)))
    return pool


# -- mixing ------------------------------------------------------------------


def _convolve_foa(dry: np.ndarray, ir: np.ndarray) -> np.ndarray:
    return sps.fftconvolve(ir, dry[None, :], axes=1)


def render_mixture(srirs: Sequence[FoaSrir], dry_signals: Sequence[np.ndarray], spec: MixtureSpec,
                   noise: FoaSignal | np.ndarray | None = None):
    """Spatialize and mix speakers, then add diffuse noise.

    Interferers are scaled so that the W-channel power of source 1 over each
    interferer equals ``spec.sir_db``. Noise (babble generated from
    ``spec.seed`` unless given) is scaled to ``spec.snr_db`` relative to the
    W-channel power of the speech mixture. Returns ``(FoaSignal, doas)`` with
    doas as (el, az) per source.
    """
    if len(srirs) != len(dry_signals) or len(srirs) != spec.n_sources:
        raise ValueError(f"need {spec.n_sources} SRIRs and dry signals, got {len(srirs)} and {len(dry_signals)}")
    fs = srirs[0].sample_rate
    wet = []
    for srir, dry in zip(srirs, dry_signals):
        dry = np.asarray(dry, dtype=float)
        if not np.any(dry):
            raise ValueError("dry signal has zero power")
        wet.append(_convolve_foa(dry, srir.ir))
    n = max(w.shape[1] for w in wet)
    wet = [np.pad(w, ((0, 0), (0, n - w.shape[1]))) for w in wet]
    ref_power = np.mean(wet[0][0] ** 2)
    mix = wet[0].copy()
    for w in wet[1:]:
        gain = np.sqrt(ref_power / (np.mean(w[0] ** 2) * 10 ** (spec.sir_db / 10)))
        mix += gain * w
    if spec.snr_db is not None:
        if noise is None:
            noise = diffuse_babble(np.random.default_rng(spec.seed), n, fs)
        nz = np.asarray(noise.samples if isinstance(noise, FoaSignal) else noise, dtype=float)
        if nz.shape[1] < n:
            raise ValueError(f"noise has {nz.shape[1]} samples, mixture needs {n}")
        nz = nz[:, :n]
        gain = np.sqrt(np.mean(mix[0] ** 2) / (np.mean(nz[0] ** 2) * 10 ** (spec.snr_db / 10)))
        mix = mix + gain * nz
    return FoaSignal(mix, fs), [s.doa for s in srirs]


def late_tail(rng: np.random.Generator, sample_rate: int = 16000,
              room_sampler: Callable[[np.random.Generator], RoomConfig] = sample_room) -> np.ndarray:
    """Average of the late parts (after 50 ms) of two random-room SRIRs."""
    cut = int(LATE_START_S * sample_rate)
    tails = []
    for _ in range(2):
        room = room_sampler(rng)
        ir = image_source_srir(room, sample_rate)[0].ir
        tails.append(ir[:, cut:])
    n = max(t.shape[1] for t in tails)
    return sum(np.pad(t, ((0, 0), (0, n - t.shape[1]))) for t in tails) / 2.0


def diffuse_babble(rng: np.random.Generator, n_samples: int, sample_rate: int = 16000,
                   room_sampler: Callable[[np.random.Generator], RoomConfig] = sample_room,
                   tail: np.ndarray | None = None, n_talkers: int = 6) -> FoaSignal:
    """Diffuse 4-channel babble: synthetic talkers through a late reverb tail.

    A single tail is a fixed filter with a small but steady net intensity, so
    each talker hears its own randomly rotated copy (dipoles rotate as a
    vector), and every second talker the point-mirrored copy of its
    predecessor's rotation. The long-term net intensity then cancels and no
    direction dominates.
    """
    if tail is None:
        tail = late_tail(rng, sample_rate, room_sampler)
    pad = tail.shape[1]
    out = np.zeros((4, n_samples))
    rot = np.eye(3)
    for k in range(n_talkers):
        if k % 2 == 0:
            rot = Rotation.random(random_state=rng).as_matrix()
            sign = 1.0
        else:
            sign = -1.0
        t = np.vstack([tail[:1], sign * (rot @ tail[1:])])
        talker = synthetic_speech(rng, n_samples + pad, sample_rate)
        out += _convolve_foa(talker, t)[:, pad : pad + n_samples]
    return FoaSignal(out, sample_rate)


# -- datasets ----------------------------------------------------------------


def _render_sequence(index, seed, n_sources, tails, speech_pool, stft_spec, n_frames, n_bins,
                     sample_rate, lead_s, rt60_range, direction_grid=None):
    rng = np.random.default_rng([seed, index])
    seq_len = stft_spec.samples_for(n_frames)
    lead = int(lead_s * sample_rate)
    total = lead + seq_len
    dirs = None
    if direction_grid is not None:
        picks = rng.choice(direction_grid.n_classes, n_sources, replace=False)
        dirs = direction_grid.unit_vectors[picks]
    room = sample_room(rng, n_sources, rt60_range=rt60_range, directions=dirs)
    srirs = image_source_srir(room, sample_rate)
    dry = []
    for _ in range(n_sources):
        if speech_pool:
            clip = speech_pool[rng.integers(len(speech_pool))]
            if len(clip) < total:
                clip = np.tile(clip, int(np.ceil(total / len(clip))))
            start = rng.integers(len(clip) - total + 1)
            dry.append(clip[start : start + total])
        else:
            dry.append(synthetic_speech(rng, total, sample_rate))
    sir = float(rng.uniform(0, 10)) if n_sources > 1 else 0.0
    snr = float(rng.uniform(0, 20))
    tail = tails[rng.integers(len(tails))]
    noise = diffuse_babble(rng, total + max(s.ir.shape[1] for s in srirs), sample_rate, tail=tail)
    spec = MixtureSpec(n_sources, sir, snr, seed)
    mix, doas = render_mixture(srirs, dry, spec, noise)
    segment = FoaSignal(mix.samples[:, lead : lead + seq_len], sample_rate)
    feats = extract_features(segment, stft_spec, n_bins)[:n_frames]
    return segment, feats, doas, sir if n_sources > 1 else None, snr


def build_dataset(n_sequences: int, sources_per_mix, out_dir, seed: int = 0,
                  stft_spec: StftSpec = StftSpec(), n_frames: int = 25, n_bins: int | None = None,
                  speech_dir=None, synthetic_fallback: bool = True, n_tails: int = 8,
                  sample_rate: int = 16000, lead_s: float = 0.25, rt60_range=(0.2, 0.8),
                  write_wav: bool = True, direction_grid=None) -> list[dict]:
    """Render ``n_sequences`` labeled mixtures to ``out_dir``.

    Writes ``wav/<i>.wav`` (4-channel float32), ``features/<i>.sldf`` and
    ``manifest.jsonl``. ``sources_per_mix`` is an int or a list of counts
    drawn uniformly per sequence. Each sequence uses its own random stream
    derived from (seed, index), so output does not depend on generation order.
    Babble tails come from a pool of ``n_tails`` late reverbs shared by all
    sequences. With ``direction_grid`` every source sits exactly on a class
    direction of that grid (distinct classes within a mixture).
    """
    out = Path(out_dir)
    speech_pool = load_speech_pool(speech_dir, sample_rate) if speech_dir else []
    if not speech_pool and not synthetic_fallback:
        raise ValueError("speech pool is empty and the synthetic fallback is disabled")
    counts = [sources_per_mix] if np.isscalar(sources_per_mix) else list(sources_per_mix)
    tail_rng = np.random.default_rng([seed, 2**31 - 1])
    tails = [late_tail(tail_rng, sample_rate) for _ in range(n_tails)]
    (out / "features").mkdir(parents=True, exist_ok=True)
    if write_wav:
        (out / "wav").mkdir(parents=True, exist_ok=True)
    records = []
    for i in range(n_sequences):
        n_src = int(counts[np.random.default_rng([seed, i, 1]).integers(len(counts))])
        segment, feats, doas, sir, snr = _render_sequence(
            i, seed, n_src, tails, speech_pool, stft_spec, n_frames, n_bins, sample_rate,
            lead_s, rt60_range, direction_grid,
        )
        feat_path = f"features/{i:06d}.sldf"
        save_sldf(out / feat_path, feats.astype(np.float32))
        rec = {
            "features_path": feat_path,
            "doas": [{"az_deg": round(az, 6), "el_deg": round(el, 6)} for el, az in doas],
            "n_sources": n_src,
            "snr_db": round(snr, 6),
            "sir_db": None if sir is None else round(sir, 6),
        }
        if write_wav:
            wav_path = f"wav/{i:06d}.wav"
            write_foa_wav(out / wav_path, segment)
            rec["wav_path"] = wav_path
        records.append(rec)
        if (i + 1) % 100 == 0:
            log.info("rendered %d/%d sequences", i + 1, n_sequences)
    with open(out / "manifest.jsonl", "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    return records
