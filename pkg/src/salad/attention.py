"""Multi-head (MH) and cross multi-head (CMH) self-attention encoders.

Scores use the scaled dot product q . k / sqrt(G) with G the model width.
In MH attention, query head h only sees key/value head h. In CMH attention,
query head h scores against every (frame j, head h') key, so the value
mixture for head h draws on all heads. No positional encoding is used: the
encoders are equivariant to permutations of the input frames.

Parameters of one encoder live in a flat dict of arrays:

    wq, wk, wv  (H, d_head, G)    bq, bk, bv  (H, d_head)
    wo          (G, H * d_head)   bo          (G,)
    ff1_w, ff2_w (G, G)           ff1_b, ff2_b (G,)
    ln1_g, ln1_b, ln2_g, ln2_b    (G,)
"""

from __future__ import annotations

from concurrent.futures import Executor

import numpy as np

from . import nn

__all__ = [
    "VARIANTS",
    "CMH_NORMS",
    "head_width",
    "init_encoder",
    "encoder_param_count",
    "attention_forward",
    "attention_backward",
    "Encoder",
    "EncoderStack",
    "encoder_forward_rows",
]

VARIANTS = ("MH", "CMH")
# normalization axis of CMH scores: jointly over (frame, head) or per key head
CMH_NORMS = ("joint", "per_head")


def head_width(width: int, n_heads: int) -> int:
    """Per-head width: G / H when H divides G, otherwise the full width G."""
    return width // n_heads if width % n_heads == 0 else width


def init_encoder(rng, width: int, n_heads: int, d_head: int | None = None, dtype=np.float64):
    g, h = width, n_heads
    if h < 1:
        raise ValueError("number of heads must be >= 1")
    d = head_width(g, h) if d_head is None else d_head
    p = {}
    for name in ("q", "k", "v"):
        p["w" + name] = nn.glorot_uniform(rng, (h, d, g), g, d, dtype)
        p["b" + name] = np.zeros((h, d), dtype)
    p["wo"] = nn.glorot_uniform(rng, (g, h * d), h * d, g, dtype)
    p["bo"] = np.zeros(g, dtype)
    for name in ("ff1", "ff2"):
        p[name + "_w"] = nn.glorot_uniform(rng, (g, g), g, g, dtype)
        p[name + "_b"] = np.zeros(g, dtype)
    for name in ("ln1", "ln2"):
        p[name + "_g"] = np.ones(g, dtype)
        p[name + "_b"] = np.zeros(g, dtype)
    return p


def encoder_param_count(width: int, n_heads: int, d_head: int | None = None) -> int:
    g, h = width, n_heads
    d = head_width(g, h) if d_head is None else d_head
    projections = 3 * h * d * (g + 1)
    output = g * h * d + g
    ffn = 2 * (g * g + g)
    norms = 4 * g
    return projections + output + ffn + norms


def _split_heads(t, bsz, n, h, d):
    return t.reshape(bsz, n, h, d).transpose(0, 2, 1, 3)


def _merge_heads(t):
    bsz, h, n, d = t.shape
    return t.transpose(0, 2, 1, 3).reshape(bsz, n, h * d)


def _grouped_softmax(logits, variant, cmh_norm, n_heads):
    if variant == "CMH" and cmh_norm == "per_head":
        shp = logits.shape
        s, _ = nn.softmax(logits.reshape(*shp[:-1], n_heads, -1), axis=-1)
        return s.reshape(shp)
    s, _ = nn.softmax(logits, axis=-1)
    return s


def _grouped_softmax_backward(grad, s, variant, cmh_norm, n_heads):
    if variant == "CMH" and cmh_norm == "per_head":
        shp = s.shape
        g = nn.softmax_backward(
            grad.reshape(*shp[:-1], n_heads, -1), (s.reshape(*shp[:-1], n_heads, -1), -1)
        )
        return g.reshape(shp)
    return nn.softmax_backward(grad, (s, -1))


def _check_variant(variant, cmh_norm):
    if variant not in VARIANTS:
        raise ValueError(f"unknown attention variant {variant!r}; expected one of {VARIANTS}")
    if cmh_norm not in CMH_NORMS:
        raise ValueError(f"unknown CMH normalization {cmh_norm!r}; expected one of {CMH_NORMS}")


def attention_forward(x, p, variant="MH", cmh_norm="joint"):
    """Self-attention over the frames of x, shape (B, N, G) or (N, G).

    Returns ``(z, scores, cache)``. ``scores`` has shape (B, H, N, N) for MH,
    indexed [b, h, i, j], and (B, H, N, H, N) for CMH, indexed [b, h, i, h', j].
    """
    _check_variant(variant, cmh_norm)
    squeeze = x.ndim == 2
    if squeeze:
        x = x[None]
    bsz, n, g = x.shape
    h, d, g_w = p["wq"].shape
    if g != g_w:
        raise ValueError(f"input width {g} does not match attention width {g_w}")
    scale = 1.0 / np.sqrt(g)

    x2 = x.reshape(-1, g)
    q = _split_heads(x2 @ p["wq"].reshape(h * d, g).T + p["bq"].reshape(-1), bsz, n, h, d)
    k = _split_heads(x2 @ p["wk"].reshape(h * d, g).T + p["bk"].reshape(-1), bsz, n, h, d)
    v = _split_heads(x2 @ p["wv"].reshape(h * d, g).T + p["bv"].reshape(-1), bsz, n, h, d)
    if variant == "CMH":
        # one joint key/value set over (head', frame), shared by all query heads
        kk = k.reshape(bsz, 1, h * n, d)
        vv = v.reshape(bsz, 1, h * n, d)
    else:
        kk, vv = k, v

    logits = (q @ kk.swapaxes(-1, -2)) * scale
    s = _grouped_softmax(logits, variant, cmh_norm, h)
    zh = s @ vv  # (B, H, N, d)
    zc = _merge_heads(zh)
    z = zc @ p["wo"].T + p["bo"]

    scores = s.reshape(bsz, h, n, h, n) if variant == "CMH" else s
    cache = dict(x=x, q=q, kk=kk, vv=vv, s=s, zc=zc, variant=variant, cmh_norm=cmh_norm,
                 squeeze=squeeze, p=p)
    if squeeze:
        return z[0], scores[0], cache
    return z, scores, cache


def attention_backward(dz, cache):
    p = cache["p"]
    x, q, kk, vv, s, zc = (cache[k] for k in ("x", "q", "kk", "vv", "s", "zc"))
    variant, cmh_norm = cache["variant"], cache["cmh_norm"]
    if cache["squeeze"]:
        dz = dz[None]
    bsz, n, g = x.shape
    h, d, _ = p["wq"].shape
    scale = 1.0 / np.sqrt(g)
    grads = {}

    dz2 = dz.reshape(-1, g)
    grads["wo"] = dz2.T @ zc.reshape(-1, h * d)
    grads["bo"] = dz2.sum(axis=0)
    dzh = _split_heads(dz2 @ p["wo"], bsz, n, h, d)

    ds = dzh @ vv.swapaxes(-1, -2)
    dvv = s.swapaxes(-1, -2) @ dzh
    dlogits = _grouped_softmax_backward(ds, s, variant, cmh_norm, h) * scale
    dq = dlogits @ kk
    dkk = dlogits.swapaxes(-1, -2) @ q
    if variant == "CMH":
        dk = dkk.sum(axis=1).reshape(bsz, h, n, d)
        dv = dvv.sum(axis=1).reshape(bsz, h, n, d)
    else:
        dk, dv = dkk, dvv

    x2 = x.reshape(-1, g)
    dx = np.zeros_like(x2)
    for name, dt in (("q", dq), ("k", dk), ("v", dv)):
        dt2 = _merge_heads(dt).reshape(-1, h * d)
        grads["w" + name] = (dt2.T @ x2).reshape(h, d, g)
        grads["b" + name] = dt2.sum(axis=0).reshape(h, d)
        dx += dt2 @ p["w" + name].reshape(h * d, g)
    dx = dx.reshape(bsz, n, g)
    return (dx[0] if cache["squeeze"] else dx), grads


def _encoder_tail(x, a, p):
    """Residual + norm, linear FFN layer, ReLU FFN layer, residual + norm."""
    y1, ln1 = nn.layer_norm(x + a, p["ln1_g"], p["ln1_b"])
    f1, l1 = nn.linear(y1, p["ff1_w"], p["ff1_b"])
    f2, l2 = nn.linear(f1, p["ff2_w"], p["ff2_b"])
    f2r, mask = nn.relu(f2)
    y2, ln2 = nn.layer_norm(y1 + f2r, p["ln2_g"], p["ln2_b"])
    return y2, (ln1, l1, l2, mask, ln2)


class Encoder:
    """One self-attention encoder block with cached forward state."""

    def __init__(self, params: dict, variant: str = "MH", cmh_norm: str = "joint"):
        _check_variant(variant, cmh_norm)
        self.params = params
        self.variant = variant
        self.cmh_norm = cmh_norm
        self._cache = None

    @property
    def n_heads(self) -> int:
        return self.params["wq"].shape[0]

    @property
    def width(self) -> int:
        return self.params["wq"].shape[2]

    def forward(self, x, keep_cache: bool = True):
        a, _, acache = attention_forward(x, self.params, self.variant, self.cmh_norm)
        y, tail = _encoder_tail(x, a, self.params)
        self._cache = (acache, tail) if keep_cache else None
        return y

    def backward(self, dy):
        if self._cache is None:
            raise RuntimeError("Encoder.backward called before a caching forward pass")
        acache, (ln1, l1, l2, mask, ln2) = self._cache
        grads = {}
        ds, grads["ln2_g"], grads["ln2_b"] = nn.layer_norm_backward(dy, ln2)
        df2 = nn.relu_backward(ds, mask)
        df1, grads["ff2_w"], grads["ff2_b"] = nn.linear_backward(df2, l2)
        dy1, grads["ff1_w"], grads["ff1_b"] = nn.linear_backward(df1, l1)
        dy1 = dy1 + ds
        dsum, grads["ln1_g"], grads["ln1_b"] = nn.layer_norm_backward(dy1, ln1)
        dx_att, agrads = attention_backward(dsum, acache)
        grads.update(agrads)
        return dx_att + dsum, grads


class EncoderStack:
    """L encoders applied in sequence."""

    def __init__(self, encoders: list[Encoder]):
        if not encoders:
            raise ValueError("an encoder stack needs at least one encoder")
        self.encoders = list(encoders)

    def forward(self, x, keep_cache: bool = True):
        for enc in self.encoders:
            x = enc.forward(x, keep_cache)
        return x

    def backward(self, dy):
        grads = []
        for enc in reversed(self.encoders):
            dy, g = enc.backward(dy)
            grads.append(g)
        return dy, grads[::-1]


def encoder_forward_rows(x, params, variant="MH", executor: Executor | None = None,
                         n_blocks: int = 1, cmh_norm: str = "joint"):
    """Inference-only encoder evaluated in frame blocks, optionally on a thread pool.

    x has shape (N, G). Phase one projects each block of frames to queries,
    keys and values; phase two computes, for each block of query frames, the
    attention output, both residual/norm steps and the FFN. Blocks are
    independent inside each phase, so a thread pool can run them
    concurrently (numpy releases the GIL inside BLAS calls).
    """
    _check_variant(variant, cmh_norm)
    n, g = x.shape
    h, d, _ = params["wq"].shape
    scale = 1.0 / np.sqrt(g)
    bounds = np.linspace(0, n, min(n_blocks, n) + 1).astype(int)
    blocks = [(lo, hi) for lo, hi in zip(bounds[:-1], bounds[1:])]
    w_qkv = np.concatenate([params[k].reshape(h * d, g) for k in ("wq", "wk", "wv")])
    b_qkv = np.concatenate([params[k].reshape(-1) for k in ("bq", "bk", "bv")])

    def project(block):
        lo, hi = block
        return x[lo:hi] @ w_qkv.T + b_qkv

    mapper = executor.map if executor is not None else map
    qkv = np.concatenate(list(mapper(project, blocks)))  # (N, 3*H*d)
    q = qkv[:, : h * d].reshape(n, h, d).transpose(1, 0, 2)
    k = qkv[:, h * d : 2 * h * d].reshape(n, h, d).transpose(1, 0, 2)
    v = qkv[:, 2 * h * d :].reshape(n, h, d).transpose(1, 0, 2)
    if variant == "CMH":
        kk, vv = k.reshape(1, h * n, d), v.reshape(1, h * n, d)
    else:
        kk, vv = k, v

    def attend(block):
        lo, hi = block
        logits = (q[:, lo:hi] @ kk.swapaxes(-1, -2)) * scale
        s = _grouped_softmax(logits, variant, cmh_norm, h)
        zc = (s @ vv).transpose(1, 0, 2).reshape(hi - lo, h * d)
        a = zc @ params["wo"].T + params["bo"]
        y, _ = _encoder_tail(x[lo:hi], a, params)
        return y

    return np.concatenate(list(mapper(attend, blocks)))
