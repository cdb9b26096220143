"""Quasi-uniform spherical DOA grid, target encoding and peak picking.

Directions are (elevation, azimuth) pairs in degrees. Elevation lies in
[-90, 90], azimuth in [-180, 180]. Cartesian unit vectors use the usual
convention x = cos(el) cos(az), y = cos(el) sin(az), z = sin(el).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

__all__ = [
    "DoaGrid",
    "build_grid",
    "to_unit",
    "to_angles",
    "angular_distance",
    "encode_target",
    "nearest_class",
    "extract_peaks",
    "find_peaks",
]


def to_unit(el_deg, az_deg) -> np.ndarray:
    """Convert elevation/azimuth (degrees, scalars or arrays) to unit vectors."""
    el = np.radians(np.asarray(el_deg, dtype=float))
    az = np.radians(np.asarray(az_deg, dtype=float))
    ce = np.cos(el)
    return np.stack([ce * np.cos(az), ce * np.sin(az), np.sin(el)], axis=-1)


def to_angles(vec) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of :func:`to_unit`; the vector need not be normalized."""
    v = np.asarray(vec, dtype=float)
    r = np.linalg.norm(v, axis=-1)
    el = np.degrees(np.arcsin(np.clip(v[..., 2] / np.where(r > 0, r, 1.0), -1.0, 1.0)))
    az = np.degrees(np.arctan2(v[..., 1], v[..., 0]))
    return el, az


def _as_unit(d) -> np.ndarray:
    d = np.asarray(d, dtype=float)
    if d.shape[-1] == 3:
        return d / np.linalg.norm(d, axis=-1, keepdims=True)
    if d.shape[-1] == 2:
        return to_unit(d[..., 0], d[..., 1])
    raise ValueError(f"direction must be (el, az) or a 3-vector, got shape {d.shape}")


def angular_distance(a, b) -> np.ndarray | float:
    """Great-circle angle in degrees between two directions.

    Each argument is either an (el, az) pair in degrees or a Cartesian
    vector; leading dimensions broadcast.
    """
    ua, ub = _as_unit(a), _as_unit(b)
    dot = np.clip(np.sum(ua * ub, axis=-1), -1.0, 1.0)
    out = np.degrees(np.arccos(dot))
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class DoaGrid:
    alpha: float
    elevations: np.ndarray  # (C,)
    azimuths: np.ndarray  # (C,)
    unit_vectors: np.ndarray  # (C, 3)
    ring_sizes: tuple[int, ...]
    neighbor_lists: tuple[np.ndarray, ...] = field(repr=False)

    @property
    def n_classes(self) -> int:
        return len(self.elevations)

    def __len__(self) -> int:
        return self.n_classes

    @cached_property
    def neighbor_table(self) -> np.ndarray:
        """Neighbor lists padded with the class's own index into a (C, K) array."""
        width = max((len(nb) for nb in self.neighbor_lists), default=0)
        table = np.repeat(np.arange(self.n_classes)[:, None], max(width, 1), axis=1)
        for i, nb in enumerate(self.neighbor_lists):
            table[i, : len(nb)] = nb
        return table

    def center(self, index: int) -> tuple[float, float]:
        """(elevation, azimuth) of a class center in degrees."""
        return float(self.elevations[index]), float(self.azimuths[index])

    def pairwise_separation(self) -> tuple[float, float]:
        """Minimum and maximum angular distance between distinct class centers."""
        d = _pairwise_degrees(self.unit_vectors)
        np.fill_diagonal(d, np.inf)
        lo = float(d.min())
        np.fill_diagonal(d, -np.inf)
        return lo, float(d.max())

    def covering_radius(self, n_probe: int = 20000, seed: int = 0) -> float:
        """Largest distance from a probe direction to its nearest class center.

        Estimated on a dense Fibonacci lattice, so it is a lower bound that is
        tight to a fraction of a degree for the probe counts used here.
        """
        probes = fibonacci_sphere(n_probe)
        best = np.max(probes @ self.unit_vectors.T, axis=1)
        return float(np.degrees(np.arccos(np.clip(best.min(), -1.0, 1.0))))


def _pairwise_degrees(u: np.ndarray) -> np.ndarray:
    return np.degrees(np.arccos(np.clip(u @ u.T, -1.0, 1.0)))


def fibonacci_sphere(n: int) -> np.ndarray:
    i = np.arange(n) + 0.5
    z = 1.0 - 2.0 * i / n
    r = np.sqrt(1.0 - z * z)
    phi = np.pi * (1.0 + 5**0.5) * i
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def build_grid(alpha: float = 10.0, neighbor_radius: float | None = None) -> DoaGrid:
    """Build the ring-based class grid for resolution ``alpha`` (degrees).

    Rings sit at elevations -90 + 180 i / I for i = 0..I with I = floor(180/alpha).
    Ring i holds J_i + 1 azimuths -180 + 360 j / (J_i + 1), where
    J_i = round(360/alpha * cos(el_i)). Classes are ordered ring by ring from
    the south pole, azimuth ascending.

    The peak neighborhood of a class is every other class within
    ``neighbor_radius`` degrees (default 1.5 * alpha).
    """
    if not (0 < alpha <= 90):
        raise ValueError(f"grid resolution alpha must be in (0, 90], got {alpha}")
    n_rings = int(np.floor(180.0 / alpha))
    els, azs, sizes = [], [], []
    for i in range(n_rings + 1):
        el = -90.0 + i / n_rings * 180.0
        # round half up; cos(+-90 deg) evaluates to ~6e-17 and rounds to 0
        j_max = int(np.floor(360.0 / alpha * np.cos(np.radians(el)) + 0.5))
        n_az = j_max + 1
        els.extend([el] * n_az)
        azs.extend(-180.0 + np.arange(n_az) / n_az * 360.0)
        sizes.append(n_az)
    elevations = np.asarray(els)
    azimuths = np.asarray(azs)
    units = to_unit(elevations, azimuths)
    units /= np.linalg.norm(units, axis=1, keepdims=True)

    radius = 1.5 * alpha if neighbor_radius is None else float(neighbor_radius)
    d = _pairwise_degrees(units)
    np.fill_diagonal(d, np.inf)
    neighbors = tuple(np.flatnonzero(row <= radius) for row in d)
    return DoaGrid(float(alpha), elevations, azimuths, units, tuple(sizes), neighbors)


def nearest_class(directions, grid: DoaGrid) -> np.ndarray:
    """Index of the closest class center for each direction (ties: lowest index)."""
    u = _as_unit(directions)
    # max dot product == min angle; argmax returns the first maximum
    return np.argmax(np.atleast_2d(u) @ grid.unit_vectors.T, axis=1)


def encode_target(doas, grid: DoaGrid) -> np.ndarray:
    """Multi-hot target vector with a one at the nearest class of each DOA."""
    y = np.zeros(grid.n_classes)
    doas = np.asarray(doas, dtype=float)
    if doas.size == 0:
        return y
    el, az = doas.reshape(-1, 2).T
    if np.any(np.abs(el) > 90) or np.any(np.abs(az) > 180):
        raise ValueError("DOA out of range: elevation must be in [-90, 90], azimuth in [-180, 180]")
    y[nearest_class(doas.reshape(-1, 2), grid)] = 1.0
    return y


def find_peaks(probs, grid: DoaGrid) -> np.ndarray:
    """Boolean mask of classes whose value is >= every neighbor's value."""
    p = np.asarray(probs, dtype=float)
    return np.all(p[:, None] >= p[grid.neighbor_table], axis=1)


def extract_peaks(probs, grid: DoaGrid, n_sources: int) -> list[int]:
    """Return the ``n_sources`` highest local maxima of a class-probability vector.

    Peaks are ordered by decreasing value with ties going to the lower class
    index. If there are fewer peaks than requested, the list is completed with
    the highest-valued non-peak classes.
    """
    p = np.asarray(probs, dtype=float)
    if p.shape != (grid.n_classes,):
        raise ValueError(f"expected {grid.n_classes} class values, got shape {p.shape}")
    if n_sources < 1:
        raise ValueError("number of sources must be >= 1")
    if n_sources > grid.n_classes:
        raise ValueError(f"cannot extract {n_sources} peaks from {grid.n_classes} classes")
    order = np.argsort(-p, kind="stable")
    is_peak = find_peaks(p, grid)
    peaks = [int(i) for i in order if is_peak[i]]
    if len(peaks) >= n_sources:
        return peaks[:n_sources]
    rest = [int(i) for i in order if not is_peak[i]]
    return peaks + rest[: n_sources - len(peaks)]
