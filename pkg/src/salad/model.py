"""Conv module + self-attention encoders + per-frame classification head."""

from __future__ import annotations

import json
import re
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import nn
from .attention import Encoder, EncoderStack, encoder_param_count, head_width, init_encoder
from .errors import BadMagicError, FormatError, TruncatedError, VersionError
from .grid import DoaGrid, build_grid, extract_peaks

__all__ = [
    "SaladConfig",
    "SaladModel",
    "build_model",
    "infer_sequence",
    "param_count",
    "save_checkpoint",
    "load_checkpoint",
]

CKPT_MAGIC = b"SLDC"
CKPT_VERSION = 1
_NAME_RE = re.compile(r"^(MH|CMH)-(\d+)enc-(\d+)H$")


@dataclass(frozen=True)
class SaladConfig:
    n_frames: int = 25
    n_freq: int = 513
    in_channels: int = 6
    conv_channels: int = 64
    conv_blocks: int = 6
    pool_sizes: tuple[int, ...] = (4, 4, 4, 2, 2, 1)
    width: int = 128
    n_encoders: int = 1
    n_heads: int = 1
    variant: str = "MH"
    grid_alpha: float = 10.0
    d_head: int | None = None
    cmh_norm: str = "joint"
    dtype: str = "float64"
    fft_size: int = 1024  # STFT length the features are computed with; n_freq lowest bins are kept

    def __post_init__(self):
        if self.n_freq > self.fft_size // 2 + 1:
            raise ValueError(f"n_freq={self.n_freq} exceeds the {self.fft_size // 2 + 1} bins of a "
                             f"{self.fft_size}-point STFT")
        object.__setattr__(self, "pool_sizes", tuple(int(k) for k in self.pool_sizes))
        if len(self.pool_sizes) != self.conv_blocks:
            raise ValueError(
                f"{self.conv_blocks} conv blocks need {self.conv_blocks} pool sizes, "
                f"got {list(self.pool_sizes)}"
            )
        f = self.pooled_freq
        if self.conv_channels * f != self.width:
            raise ValueError(
                f"conv output {self.conv_channels} channels x {f} bins = "
                f"{self.conv_channels * f} does not equal model width G={self.width} "
                f"(n_freq={self.n_freq}, pools={list(self.pool_sizes)})"
            )
        if self.n_encoders < 1 or self.n_heads < 1:
            raise ValueError("need at least one encoder and one head")
        if self.variant not in ("MH", "CMH"):
            raise ValueError(f"unknown variant {self.variant!r}")

    @property
    def pooled_freq(self) -> int:
        f = self.n_freq
        for k in self.pool_sizes:
            if k < 1 or k > f:
                raise ValueError(f"pool size {k} invalid for {f} frequency bins")
            f //= k
        return f

    @property
    def head_dim(self) -> int:
        return head_width(self.width, self.n_heads) if self.d_head is None else self.d_head

    @property
    def name(self) -> str:
        return f"{self.variant}-{self.n_encoders}enc-{self.n_heads}H"

    @classmethod
    def from_name(cls, name: str, **overrides) -> "SaladConfig":
        """Parse names such as ``CMH-1enc-10H`` into a config."""
        m = _NAME_RE.match(name)
        if not m:
            raise ValueError(f"model name {name!r} does not match X-<L>enc-<H>H")
        return cls(variant=m.group(1), n_encoders=int(m.group(2)), n_heads=int(m.group(3)),
                   **overrides)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["pool_sizes"] = list(self.pool_sizes)
        return d


def param_count(config: SaladConfig, n_classes: int | None = None) -> int:
    """Closed-form number of scalar parameters."""
    if n_classes is None:
        n_classes = build_grid(config.grid_alpha).n_classes
    c, total, c_in = config.conv_channels, 0, config.in_channels
    for _ in range(config.conv_blocks):
        total += c * c_in * 9 + c + c * c * 9 + c
        c_in = c
    total += config.n_encoders * encoder_param_count(config.width, config.n_heads, config.head_dim)
    total += n_classes * config.width + n_classes + n_classes * n_classes + n_classes
    return total


class SaladModel:
    """Parameters live in ``self.params`` (an insertion-ordered dict of arrays).

    Encoder objects hold references to the same arrays, so in-place updates
    to ``params`` are seen everywhere.
    """

    def __init__(self, config: SaladConfig, params: dict[str, np.ndarray], grid: DoaGrid | None = None):
        self.config = config
        self.params = params
        self.grid = grid if grid is not None else build_grid(config.grid_alpha)
        self.stack = EncoderStack([
            Encoder({k.split(".", 1)[1]: v for k, v in params.items() if k.startswith(f"enc{l}.")},
                    config.variant, config.cmh_norm)
            for l in range(config.n_encoders)
        ])
        self._cache = None

    @property
    def n_classes(self) -> int:
        return self.grid.n_classes

    @property
    def dtype(self):
        return np.dtype(self.config.dtype)

    def count_params(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def forward(self, features, keep_cache: bool = False) -> np.ndarray:
        """Per-frame class probabilities.

        ``features`` is (N, F, 6) or a batch (B, N, F, 6); the result is
        (N, C) or (B, N, C).
        """
        cfg, p = self.config, self.params
        x = np.asarray(features, dtype=self.dtype)
        squeeze = x.ndim == 3
        if squeeze:
            x = x[None]
        if x.ndim != 4 or x.shape[2:] != (cfg.n_freq, cfg.in_channels):
            raise ValueError(
                f"expected features (..., N, {cfg.n_freq}, {cfg.in_channels}), got {np.shape(features)}"
            )
        caches = []
        h = x
        for b, k in enumerate(cfg.pool_sizes):
            h, c1 = nn.conv2d(h, p[f"conv{b}a_w"], p[f"conv{b}a_b"])
            h, r1 = nn.relu(h)
            h, c2 = nn.conv2d(h, p[f"conv{b}b_w"], p[f"conv{b}b_b"])
            h, r2 = nn.relu(h)
            h, pc = nn.maxpool_freq(h, k)
            caches.append((c1, r1, c2, r2, pc))
        bsz, n = h.shape[:2]
        pooled_shape = h.shape
        h = h.reshape(bsz, n, -1)
        h = self.stack.forward(h, keep_cache)
        h, hc1 = nn.linear(h, p["head1_w"], p["head1_b"])
        h, hc2 = nn.linear(h, p["head2_w"], p["head2_b"])
        out, sc = nn.sigmoid(h)
        self._cache = (caches, pooled_shape, hc1, hc2, sc) if keep_cache else None
        return out[0] if squeeze else out

    def backward(self, grad_probs) -> dict[str, np.ndarray]:
        """Gradients of every parameter given dLoss/dProbabilities of the last forward."""
        if self._cache is None:
            raise RuntimeError("backward needs a preceding forward(..., keep_cache=True)")
        caches, pooled_shape, hc1, hc2, sc = self._cache
        g = np.asarray(grad_probs, dtype=self.dtype)
        if g.ndim == 2:
            g = g[None]
        grads = {}
        g = nn.sigmoid_backward(g, sc)
        g, grads["head2_w"], grads["head2_b"] = nn.linear_backward(g, hc2)
        g, grads["head1_w"], grads["head1_b"] = nn.linear_backward(g, hc1)
        g, enc_grads = self.stack.backward(g)
        for l, eg in enumerate(enc_grads):
            for k, v in eg.items():
                grads[f"enc{l}.{k}"] = v
        g = g.reshape(pooled_shape)
        for b in reversed(range(self.config.conv_blocks)):
            c1, r1, c2, r2, pc = caches[b]
            g = nn.maxpool_freq_backward(g, pc)
            g = nn.relu_backward(g, r2)
            g, grads[f"conv{b}b_w"], grads[f"conv{b}b_b"] = nn.conv2d_backward(g, c2)
            g = nn.relu_backward(g, r1)
            g, grads[f"conv{b}a_w"], grads[f"conv{b}a_b"] = nn.conv2d_backward(g, c1)
        return {k: grads[k] for k in self.params}


def build_model(config: SaladConfig = SaladConfig(), seed: int = 0) -> SaladModel:
    """Glorot-uniform weights and zero biases, drawn deterministically from ``seed``."""
    rng = np.random.default_rng(seed)
    dt = np.dtype(config.dtype)
    grid = build_grid(config.grid_alpha)
    c = config.conv_channels
    params: dict[str, np.ndarray] = {}
    c_in = config.in_channels
    for b in range(config.conv_blocks):
        params[f"conv{b}a_w"] = nn.glorot_uniform(rng, (c, c_in, 3, 3), c_in * 9, c * 9, dt)
        params[f"conv{b}a_b"] = np.zeros(c, dt)
        params[f"conv{b}b_w"] = nn.glorot_uniform(rng, (c, c, 3, 3), c * 9, c * 9, dt)
        params[f"conv{b}b_b"] = np.zeros(c, dt)
        c_in = c
    for l in range(config.n_encoders):
        enc = init_encoder(rng, config.width, config.n_heads, config.head_dim, dt)
        params.update({f"enc{l}.{k}": v for k, v in enc.items()})
    n_cls, g = grid.n_classes, config.width
    params["head1_w"] = nn.glorot_uniform(rng, (n_cls, g), g, n_cls, dt)
    params["head1_b"] = np.zeros(n_cls, dt)
    params["head2_w"] = nn.glorot_uniform(rng, (n_cls, n_cls), n_cls, n_cls, dt)
    params["head2_b"] = np.zeros(n_cls, dt)
    return SaladModel(config, params, grid)


def infer_sequence(model: SaladModel, features, n_sources: int, grid: DoaGrid | None = None):
    """Average frame outputs, pick the ``n_sources`` highest peaks, return (el, az) centers."""
    grid = model.grid if grid is None else grid
    probs = model.forward(features)
    mean = probs.mean(axis=-2)
    return [grid.center(i) for i in extract_peaks(mean, grid, n_sources)]


# -- checkpoints --------------------------------------------------------------


def save_checkpoint(model: SaladModel, path) -> None:
    """Write an ``.sldc`` file: magic, version, JSON header, little-endian payload.

    float32 models are stored as 32-bit floats; float64 models keep 64-bit
    values so that every round trip is exact.
    """
    code = "<f4" if model.dtype == np.float32 else "<f8"
    manifest, offset, chunks = [], 0, []
    for name, arr in model.params.items():
        raw = np.ascontiguousarray(arr, dtype=code).tobytes()
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += len(raw)
        chunks.append(raw)
    header = json.dumps(
        {"config": model.config.to_dict(), "dtype": code, "params": manifest,
         "payload_bytes": offset},
        sort_keys=True,
    ).encode()
    Path(path).write_bytes(
        CKPT_MAGIC + struct.pack("<II", CKPT_VERSION, len(header)) + header + b"".join(chunks)
    )


def load_checkpoint(path) -> SaladModel:
    raw = Path(path).read_bytes()
    if raw[:4] != CKPT_MAGIC:
        raise BadMagicError(f"{path}: not an SLDC checkpoint")
    if len(raw) < 12:
        raise TruncatedError(f"{path}: checkpoint header truncated")
    version, hlen = struct.unpack("<II", raw[4:12])
    if version != CKPT_VERSION:
        raise VersionError(f"{path}: checkpoint version {version}, expected {CKPT_VERSION}")
    if len(raw) < 12 + hlen:
        raise TruncatedError(f"{path}: checkpoint header truncated")
    try:
        header = json.loads(raw[12 : 12 + hlen].decode())
        cfg = dict(header["config"])
        code = header["dtype"]
        manifest = header["params"]
        payload_bytes = int(header["payload_bytes"])
    except (ValueError, KeyError, UnicodeDecodeError) as exc:
        raise FormatError(f"{path}: corrupt checkpoint header ({exc})") from exc
    payload = raw[12 + hlen :]
    if len(payload) != payload_bytes:
        raise TruncatedError(f"{path}: expected {payload_bytes} payload bytes, found {len(payload)}")
    if code not in ("<f4", "<f8"):
        raise FormatError(f"{path}: unsupported payload dtype {code!r}")
    try:
        cfg["pool_sizes"] = tuple(cfg["pool_sizes"])
        cfg["dtype"] = "float32" if code == "<f4" else "float64"
        config = SaladConfig(**cfg)
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: stored config is invalid ({exc})") from exc
    itemsize = np.dtype(code).itemsize
    params = {}
    for entry in manifest:
        try:
            count = int(np.prod(entry["shape"], dtype=np.int64))
            start = int(entry["offset"])
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"{path}: corrupt parameter manifest ({exc})") from exc
        if start < 0 or count < 0 or start + count * itemsize > len(payload):
            raise TruncatedError(f"{path}: parameter {entry['name']} runs past the payload")
        params[entry["name"]] = (
            np.frombuffer(payload, dtype=code, count=count, offset=start)
            .reshape(entry["shape"]).astype(config.dtype)
        )
    reference = build_model(config, seed=0)
    if set(params) != set(reference.params) or any(
        params[k].shape != reference.params[k].shape for k in reference.params
    ):
        raise FormatError(f"{path}: parameter manifest does not match the stored config")
    return SaladModel(config, {k: params[k] for k in reference.params})
