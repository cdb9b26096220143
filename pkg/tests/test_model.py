import numpy as np
import pytest

from conftest import rel_err
from salad import nn
from salad.attention import Encoder, encoder_param_count
from salad.errors import BadMagicError, FormatError, TruncatedError, VersionError
from salad.grid import angular_distance, to_unit
from salad.model import (
    SaladConfig,
    build_model,
    infer_sequence,
    load_checkpoint,
    param_count,
    save_checkpoint,
)
from salad.train import bce_loss

TINY = dict(n_frames=3, n_freq=16, conv_channels=2, conv_blocks=1, pool_sizes=(4,), width=8,
            n_heads=2, grid_alpha=90, fft_size=32)


def test_default_config_reaches_width_128():
    cfg = SaladConfig()
    assert cfg.pooled_freq == 2 and cfg.conv_channels * cfg.pooled_freq == 128
    f = 513
    trail = [f]
    for k in cfg.pool_sizes:
        f //= k
        trail.append(f)
    assert trail == [513, 128, 32, 8, 4, 2, 2]


def test_inconsistent_dims_error_lists_product():
    with pytest.raises(ValueError, match="64 channels x 4 bins = 256"):
        SaladConfig(pool_sizes=(4, 4, 4, 2, 1, 1))
    with pytest.raises(ValueError):
        SaladConfig(conv_blocks=2)
    with pytest.raises(ValueError):
        SaladConfig(variant="RNN")


def test_names():
    cfg = SaladConfig.from_name("CMH-2enc-10H")
    assert (cfg.variant, cfg.n_encoders, cfg.n_heads, cfg.name) == ("CMH", 2, 10, "CMH-2enc-10H")
    with pytest.raises(ValueError):
        SaladConfig.from_name("CMH-2x-10H")


def test_same_seed_same_parameters():
    a = build_model(SaladConfig(**TINY), seed=5)
    b = build_model(SaladConfig(**TINY), seed=5)
    c = build_model(SaladConfig(**TINY), seed=6)
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)
    assert any(not np.array_equal(a.params[k], c.params[k]) for k in a.params)


def test_output_shape_range_and_time_axis():
    m = build_model(SaladConfig(**TINY), seed=0)
    x = np.random.default_rng(0).standard_normal((3, 16, 6))
    y = m.forward(x)
    assert y.shape == (3, 7) and np.all((y >= 0) & (y <= 1))
    assert m.forward(x[None]).shape == (1, 3, 7)
    with pytest.raises(ValueError):
        m.forward(np.zeros((3, 15, 6)))


def test_zero_input_gives_identical_frames():
    cfg = SaladConfig(**{**TINY, "n_frames": 5})
    m = build_model(cfg, seed=1)
    y = m.forward(np.zeros((5, 16, 6)))
    np.testing.assert_allclose(y, np.tile(y[0], (5, 1)), atol=1e-12)


def test_forward_matches_hand_composition():
    m = build_model(SaladConfig(**TINY), seed=2)
    p = m.params
    x = np.random.default_rng(2).standard_normal((1, 3, 16, 6))
    h = nn.relu(nn.conv2d(x, p["conv0a_w"], p["conv0a_b"])[0])[0]
    h = nn.relu(nn.conv2d(h, p["conv0b_w"], p["conv0b_b"])[0])[0]
    h = nn.maxpool_freq(h, 4)[0].reshape(1, 3, 8)
    enc = Encoder({k[5:]: v for k, v in p.items() if k.startswith("enc0.")}, "MH")
    h = enc.forward(h)
    h = h @ p["head1_w"].T + p["head1_b"]
    ref = 1 / (1 + np.exp(-(h @ p["head2_w"].T + p["head2_b"])))
    np.testing.assert_allclose(m.forward(x), ref, atol=1e-12)


def test_batch_composition_invariance():
    m = build_model(SaladConfig(**TINY, variant="CMH"), seed=3)
    xs = np.random.default_rng(3).standard_normal((4, 3, 16, 6))
    full = m.forward(xs)
    for b in range(4):
        np.testing.assert_allclose(full[b], m.forward(xs[b]), atol=1e-12)
    np.testing.assert_allclose(m.forward(xs[[2, 0]]), full[[2, 0]], atol=1e-12)


@pytest.mark.parametrize("variant", ["MH", "CMH"])
def test_full_model_gradients_through_bce(variant):
    m = build_model(SaladConfig(**TINY, variant=variant), seed=4)
    rng = np.random.default_rng(4)
    for k in m.params:
        if k.endswith("_b") or k.startswith("enc0.b"):
            m.params[k][...] = rng.normal(0, 0.2, m.params[k].shape)
    x = rng.standard_normal((2, 3, 16, 6))
    target = (rng.random((2, 3, 7)) < 0.3).astype(float)

    def loss():
        return bce_loss(m.forward(x), target)[0]

    probs = m.forward(x, keep_cache=True)
    grads = m.backward(bce_loss(probs, target)[1])
    num = nn.finite_diff_gradient(loss, m.params)
    worst = max(rel_err(grads[k], num[k]) for k in m.params)
    assert worst < 1e-4


def test_backward_requires_cached_forward():
    m = build_model(SaladConfig(**TINY), seed=0)
    m.forward(np.zeros((3, 16, 6)))
    with pytest.raises(RuntimeError):
        m.backward(np.zeros((3, 7)))


def test_param_count_closed_form_and_layers():
    for cfg in (SaladConfig(**TINY), SaladConfig.from_name("CMH-2enc-10H")):
        assert build_model(cfg).count_params() == param_count(cfg)
    one = param_count(SaladConfig.from_name("MH-1enc-4H"))
    two = param_count(SaladConfig.from_name("MH-2enc-4H"))
    assert two - one == encoder_param_count(128, 4)


def test_table3_counts_within_band():
    mh = param_count(SaladConfig.from_name("MH-1enc-1H"))
    cmh = param_count(SaladConfig.from_name("CMH-1enc-10H"))
    assert mh == 749_123 and cmh == 1_342_403
    assert abs(mh / 796_125 - 1) <= 0.2
    assert abs(cmh / 1_389_405 - 1) <= 0.2


def test_infer_sequence():
    m = build_model(SaladConfig(**{**TINY, "grid_alpha": 20, "n_freq": 16}), seed=0)
    g = m.grid

    class Fixed:
        def __init__(self, frames):
            self.frames = frames

        def forward(self, _):
            return self.frames

    stub = m
    frames = np.zeros((3, g.n_classes))
    frames[:, 40] = 0.9
    stub.forward = Fixed(frames).forward
    assert infer_sequence(stub, None, 1) == [g.center(40)]

    a, b = (10.0, -60.0), (-20.0, 100.0)

    def bump(c):
        return np.exp(-0.5 * (angular_distance(g.unit_vectors, to_unit(*c)) / 12) ** 2)

    # per-frame outputs differ, but their mean is the two-bump profile
    mean = 0.8 * bump(a) + 0.6 * bump(b)
    frames = np.stack([mean * 1.5, mean * 0.5, mean])
    stub.forward = Fixed(frames).forward
    est = infer_sequence(stub, None, 2)
    assert angular_distance(est[0], a) < g.alpha and angular_distance(est[1], b) < g.alpha

    got = infer_sequence(stub, None, 3)
    assert len(got) == 3 and got[:2] == est


def test_checkpoint_round_trip_bit_exact(tmp_path):
    for dtype in ("float64", "float32"):
        m = build_model(SaladConfig(**TINY, variant="CMH", dtype=dtype), seed=7)
        save_checkpoint(m, tmp_path / "m.sldc")
        r = load_checkpoint(tmp_path / "m.sldc")
        assert r.config == m.config
        assert list(r.params) == list(m.params)
        for k in m.params:
            assert r.params[k].dtype == m.params[k].dtype
            assert r.params[k].tobytes() == m.params[k].tobytes()
        x = np.random.default_rng(0).standard_normal((3, 16, 6))
        assert np.array_equal(r.forward(x), m.forward(x))


def test_checkpoint_corruption(tmp_path):
    m = build_model(SaladConfig(**TINY), seed=0)
    path = tmp_path / "m.sldc"
    save_checkpoint(m, path)
    raw = path.read_bytes()
    hlen = int.from_bytes(raw[8:12], "little")
    bad = {
        b"NOPE" + raw[4:]: BadMagicError,
        raw[:4] + (9).to_bytes(4, "little") + raw[8:]: VersionError,
        raw[:-3]: TruncatedError,
        raw[:10]: TruncatedError,
        raw[: 12 + hlen // 2]: TruncatedError,
        raw[:12] + b"[" + raw[13:]: FormatError,
        raw + b"\0\0": TruncatedError,
    }
    for blob, err in bad.items():
        path.write_bytes(blob)
        with pytest.raises(err):
            load_checkpoint(path)
    path.write_bytes(b"")
    with pytest.raises(FormatError):
        load_checkpoint(path)
