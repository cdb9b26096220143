"""DNN-free baseline: weighted histogram of per-bin pseudointensity directions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import DoaGrid, extract_peaks

__all__ = ["TrampConfig", "pseudointensity_doa", "bin_directions", "tramp_histogram", "tramp_localize"]


@dataclass(frozen=True)
class TrampConfig:
    weight_exponent: float = 2.0
    smoothing: str = "none"  # or "neighbor"

    def __post_init__(self):
        if not np.isfinite(self.weight_exponent) or self.weight_exponent < 0:
            raise ValueError("weight exponent must be finite and >= 0")
        if self.smoothing not in ("none", "neighbor"):
            raise ValueError(f"unknown histogram smoothing {self.smoothing!r}")


def bin_directions(spec: np.ndarray, config: TrampConfig = TrampConfig()):
    """Directions and plane-wave weights for every TF bin of a (4, T, F) spectrogram.

    The direction is the normalized active intensity Re(W conj([X, Y, Z])).
    The weight is (|Ia| / E)^p with energy density E = (|W|^2 + |XYZ|^2 / 3) / 2;
    the ratio reaches its maximum sqrt(3) for a single plane wave and is small
    for diffuse fields. Zero-energy bins get weight 0; no epsilon enters the
    ratio, so weights do not change when the input is rescaled.
    """
    spec = np.asarray(spec)
    w, dip = spec[0], spec[1:]
    ia = np.moveaxis((w[None] * np.conj(dip)).real, 0, -1)  # (T, F, 3)
    norm = np.linalg.norm(ia, axis=-1)
    energy = 0.5 * (np.abs(w) ** 2 + np.sum(np.abs(dip) ** 2, axis=0) / 3.0)
    ratio = np.where(energy > 0, norm / np.where(energy > 0, energy, 1.0), 0.0)
    weight = np.where(norm > 0, ratio**config.weight_exponent, 0.0)
    direction = ia / np.where(norm > 0, norm, 1.0)[..., None]
    return direction, weight


def pseudointensity_doa(spec: np.ndarray, t: int, f: int, config: TrampConfig = TrampConfig()):
    """(unit direction, weight) of a single TF bin."""
    direction, weight = bin_directions(spec[:, t : t + 1, f : f + 1], config)
    return direction[0, 0], float(weight[0, 0])


def tramp_histogram(spec: np.ndarray, grid: DoaGrid, config: TrampConfig = TrampConfig()) -> np.ndarray:
    """Accumulate bin weights into the nearest grid class (unnormalized)."""
    direction, weight = bin_directions(spec, config)
    d = direction.reshape(-1, 3)
    wts = weight.reshape(-1)
    live = wts > 0
    hist = np.zeros(grid.n_classes)
    if live.any():
        cls = np.argmax(d[live] @ grid.unit_vectors.T, axis=1)
        hist = np.bincount(cls, weights=wts[live], minlength=grid.n_classes)
    if config.smoothing == "neighbor":
        hist = np.array([(hist[i] + hist[nb].sum()) / (1 + len(nb))
                         for i, nb in enumerate(grid.neighbor_lists)])
    return hist


def tramp_localize(spec: np.ndarray, grid: DoaGrid, n_sources: int,
                   config: TrampConfig = TrampConfig()) -> list[tuple[float, float]]:
    """Estimate ``n_sources`` DOAs (el, az) as the highest histogram peaks."""
    hist = tramp_histogram(spec, grid, config)
    peak = hist.max()
    norm = hist / peak if peak > 0 else hist
    return [grid.center(i) for i in extract_peaks(norm, grid, n_sources)]
