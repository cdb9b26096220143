import math
from itertools import permutations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from salad.features import StftSpec, stft
from salad.grid import angular_distance, build_grid, to_unit
from salad.simulate import MixtureSpec, RoomConfig, diffuse_babble, image_source_srir, render_mixture, synthetic_speech
from salad.tramp import TrampConfig, bin_directions, pseudointensity_doa, tramp_histogram, tramp_localize

FS = 16000
GRID = build_grid(10)


def one_bin(w, x, y, z):
    return np.array([w, x, y, z], dtype=complex).reshape(4, 1, 1)


def test_plane_wave_from_x():
    d, wt = pseudointensity_doa(one_bin(1, math.sqrt(3), 0, 0), 0, 0)
    np.testing.assert_array_equal(d, [1.0, 0.0, 0.0])
    # |Ia| / E = sqrt3 / (0.5 * (1 + 1)) for a unit plane wave
    assert wt == pytest.approx(3.0, rel=1e-10)


def test_omni_only_has_zero_weight():
    assert pseudointensity_doa(one_bin(1, 0, 0, 0), 0, 0)[1] == 0
    d, w = bin_directions(np.zeros((4, 2, 2), complex))
    assert np.all(w == 0) and np.all(np.isfinite(d))


def test_diffuse_bins_weigh_less_than_plane_waves():
    rng = np.random.default_rng(0)
    diffuse = rng.standard_normal((4, 1, 1000)) + 1j * rng.standard_normal((4, 1, 1000))
    u = rng.standard_normal((3, 1000))
    u /= np.linalg.norm(u, axis=0)
    s = rng.standard_normal(1000) + 1j * rng.standard_normal(1000)
    plane = np.vstack([s[None], math.sqrt(3) * u * s])[:, None, :]
    assert bin_directions(diffuse)[1].mean() < bin_directions(plane)[1].mean()


def test_config_validation():
    for bad in (dict(weight_exponent=-1), dict(weight_exponent=float("inf")), dict(smoothing="gauss")):
        with pytest.raises(ValueError):
            TrampConfig(**bad)


def random_spec(seed, t=4, f=9):
    rng = np.random.default_rng(seed)
    return rng.standard_normal((4, t, f)) + 1j * rng.standard_normal((4, t, f))


def test_histogram_mass_and_brute_force_assignment():
    spec = random_spec(1)
    d, w = bin_directions(spec)
    hist = tramp_histogram(spec, GRID)
    assert np.all(hist >= 0) and np.all(np.isfinite(hist))
    assert hist.sum() == pytest.approx(w.sum(), abs=1e-9)
    ref = np.zeros(GRID.n_classes)
    for t in range(spec.shape[1]):
        for f in range(spec.shape[2]):
            dists = [angular_distance(d[t, f], GRID.unit_vectors[c]) for c in range(GRID.n_classes)]
            ref[int(np.argmin(dists))] += w[t, f]
    np.testing.assert_allclose(hist, ref, atol=1e-12)


def test_neighbor_smoothing_keeps_nonnegative():
    spec = random_spec(2)
    h = tramp_histogram(spec, GRID, TrampConfig(smoothing="neighbor"))
    assert np.all(h >= 0) and h.max() > 0


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(1e-3, 1e3))
def test_scale_invariant_normalized_histogram(seed, gain):
    spec = random_spec(seed)
    a = tramp_histogram(spec, GRID)
    b = tramp_histogram(gain * spec, GRID)
    np.testing.assert_allclose(b / b.max(), a / a.max(), atol=1e-9)


def anechoic_render(srcs, mic=(3.0, 3.0, 1.5), seed=0, sir=0.0):
    room = RoomConfig([6.0, 6.0, 3.0], 0.3, mic, srcs)
    srirs = image_source_srir(room, FS, beta=0.0)
    rng = np.random.default_rng(seed)
    dry = [synthetic_speech(rng, FS) for _ in srcs]
    sig, doas = render_mixture(srirs, dry, MixtureSpec(len(srcs), sir_db=sir))
    return stft(sig, StftSpec(1024, 512)), doas


def test_anechoic_single_source_within_10_degrees():
    spec, doas = anechoic_render([[4.6, 2.2, 2.1]])
    est = tramp_localize(spec, GRID, 1)
    assert angular_distance(est[0], doas[0]) < 10


def test_two_sources_90_degrees_apart():
    # +X and +Y of the microphone, equal power
    spec, doas = anechoic_render([[5.0, 3.0, 1.5], [3.0, 5.0, 1.5]], seed=1)
    assert angular_distance(doas[0], doas[1]) == pytest.approx(90)
    est = tramp_localize(spec, GRID, 2)
    best = min(max(angular_distance(e, t) for e, t in zip(p, doas)) for p in permutations(est))
    assert best < 15


def peakiness(h):
    return h.max() / h.mean()


def test_babble_histogram_is_flatter_than_single_sources():
    b = diffuse_babble(np.random.default_rng(3), 2 * FS).samples
    babble = peakiness(tramp_histogram(stft(b, StftSpec(1024, 512)), GRID))
    singles = [peakiness(tramp_histogram(anechoic_render([src], seed=k)[0], GRID))
               for k, src in enumerate([[4.6, 2.2, 2.1], [1.0, 1.3, 0.8], [3.2, 5.4, 2.6]])]
    assert babble < min(singles)
