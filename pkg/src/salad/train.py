"""Multi-label training: binary cross-entropy, Nadam, plateau scheduling."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError
from .evaluate import match_estimates
from .features import load_sldf
from .grid import DoaGrid, encode_target, extract_peaks, to_angles, to_unit
from .model import SaladModel

__all__ = [
    "TrainConfig",
    "TrainHistory",
    "SequenceSet",
    "load_manifest",
    "bce_loss",
    "Nadam",
    "sequence_accuracy",
    "rotate_sequences",
    "train_loop",
]

log = logging.getLogger(__name__)

CLAMP = 1e-7


def bce_loss(pred, target):
    """Mean binary cross-entropy and its gradient with respect to ``pred``.

    Predictions are clamped to [1e-7, 1 - 1e-7]; the gradient is evaluated at
    the clamped value.
    """
    pred = np.asarray(pred)
    target = np.asarray(target, dtype=pred.dtype)
    if pred.shape != target.shape:
        raise ValueError(f"prediction shape {pred.shape} != target shape {target.shape}")
    p = np.clip(pred, CLAMP, 1.0 - CLAMP)
    loss = -np.mean(target * np.log(p) + (1.0 - target) * np.log1p(-p))
    grad = (p - target) / (p * (1.0 - p)) / pred.size
    return float(loss), grad


class Nadam:
    """Adam with a Nesterov look-ahead on the first moment.

    The update uses bias-corrected moments, with the corrected first moment
    replaced by ``b1 * m_t / (1 - b1^(t+1)) + (1 - b1) * g_t / (1 - b1^t)``.
    """

    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: dict, grads: dict, lr: float) -> None:
        """Update ``params`` in place."""
        b1, b2 = self.beta1, self.beta2
        self.t += 1
        t = self.t
        for name, p in params.items():
            g = grads[name]
            if g.shape != p.shape:
                raise ValueError(f"gradient for {name} has shape {g.shape}, expected {p.shape}")
            m = self.m.setdefault(name, np.zeros_like(p))
            v = self.v.setdefault(name, np.zeros_like(p))
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            m_hat = b1 * m / (1.0 - b1 ** (t + 1)) + (1.0 - b1) * g / (1.0 - b1**t)
            v_hat = v / (1.0 - b2**t)
            p -= (lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(p.dtype, copy=False)


@dataclass
class SequenceSet:
    """Feature sequences with their ground-truth DOAs (list of (el, az) per sequence)."""

    features: np.ndarray  # (M, N, F, 6)
    doas: list

    def __post_init__(self):
        if len(self.features) != len(self.doas):
            raise ValueError("features and DOA lists differ in length")

    def __len__(self) -> int:
        return len(self.doas)

    def targets(self, grid: DoaGrid) -> np.ndarray:
        return np.stack([encode_target(d, grid) for d in self.doas])


def load_manifest(path, limit: int | None = None) -> SequenceSet:
    """Read a JSON-lines dataset manifest and the feature files it points to.

    ``features_path`` entries are resolved relative to the manifest's folder.
    """
    path = Path(path)
    feats, doas = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            if limit is not None and len(doas) >= limit:
                break
            try:
                rec = json.loads(line)
                seq_doas = [(float(d["el_deg"]), float(d["az_deg"])) for d in rec["doas"]]
                fpath = path.parent / rec["features_path"]
            except (ValueError, KeyError, TypeError) as exc:
                raise FormatError(f"{path}:{lineno}: bad manifest record ({exc})") from exc
            if int(rec.get("n_sources", len(seq_doas))) != len(seq_doas):
                raise FormatError(f"{path}:{lineno}: n_sources disagrees with the DOA list")
            feats.append(load_sldf(fpath))
            doas.append(seq_doas)
    if not doas:
        raise FormatError(f"{path}: manifest has no records")
    shapes = {f.shape for f in feats}
    if len(shapes) != 1:
        raise FormatError(f"{path}: feature files have differing shapes {sorted(shapes)}")
    return SequenceSet(np.stack(feats), doas)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 200
    early_stop_patience: int = 20
    lr_patience: int = 10
    lr_factor: float = 0.5
    seed: int = 0
    tolerance: float = 10.0
    target_accuracy: float | None = None  # stop as soon as validation reaches this (percent)
    augment: bool = False  # random azimuth rotation and vertical flip per training sequence

    def __post_init__(self):
        if self.early_stop_patience < 1 or self.lr_patience < 1:
            raise ValueError("patience values must be >= 1")
        if not (0.0 < self.lr_factor < 1.0):
            raise ValueError("lr_factor must lie in (0, 1)")


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    val_accuracy: list = field(default_factory=list)
    learning_rate: list = field(default_factory=list)
    best_epoch: int = 0
    best_accuracy: float = -1.0
    lr_drops: list = field(default_factory=list)  # epochs after which lr was reduced
    stopped_early: bool = False


def rotate_sequences(features, doas, rotations):
    """Apply one 3x3 orthogonal matrix per sequence to features and DOAs.

    The intensity normalizer only depends on the dipole channels through
    their total power, so rotating the active and reactive triplets equals
    computing features from the rotated sound field.
    """
    features = np.asarray(features)
    out = np.empty_like(features)
    new_doas = []
    for i, (f, d, r) in enumerate(zip(features, doas, rotations)):
        r = r.astype(features.dtype)
        out[i, ..., :3] = f[..., :3] @ r.T
        out[i, ..., 3:] = f[..., 3:] @ r.T
        if len(d):
            el, az = np.asarray(d, dtype=float).reshape(-1, 2).T
            el2, az2 = to_angles(to_unit(el, az) @ r.T)
            new_doas.append(list(zip(el2.tolist(), az2.tolist())))
        else:
            new_doas.append([])
    return out, new_doas


def random_rotations(rng, n):
    """Rotations about the vertical axis, each mirrored in z with probability 1/2."""
    phi = rng.uniform(-np.pi, np.pi, n)
    flip = np.where(rng.random(n) < 0.5, -1.0, 1.0)
    c, s = np.cos(phi), np.sin(phi)
    rot = np.zeros((n, 3, 3))
    rot[:, 0, 0], rot[:, 0, 1], rot[:, 1, 0], rot[:, 1, 1] = c, -s, s, c
    rot[:, 2, 2] = flip
    return rot


def sequence_accuracy(model: SaladModel, data: SequenceSet, tolerance: float = 10.0,
                      batch_size: int = 64) -> float:
    """Percentage of sequences whose matched DOA errors are all below ``tolerance``."""
    correct = 0
    for lo in range(0, len(data), batch_size):
        probs = model.forward(data.features[lo : lo + batch_size]).mean(axis=1)
        for p, truth in zip(probs, data.doas[lo : lo + batch_size]):
            est = [model.grid.center(i) for i in extract_peaks(p, model.grid, len(truth))]
            correct += bool(np.all(match_estimates(est, truth) < tolerance))
    return 100.0 * correct / len(data)


def train_loop(model: SaladModel, train_set: SequenceSet, val_set: SequenceSet,
               config: TrainConfig = TrainConfig()):
    """Train in place and restore the best-validation parameters.

    Each epoch is one shuffled pass in minibatches. Validation accuracy at
    ``config.tolerance`` drives both the learning-rate halving and early
    stopping. Returns ``(model, history)``.
    """
    if len(train_set) == 0 or len(val_set) == 0:
        raise ValueError("training and validation sets must be non-empty")
    rng = np.random.default_rng(config.seed)
    targets = train_set.targets(model.grid).astype(model.dtype)
    opt = Nadam()
    lr = config.learning_rate
    hist = TrainHistory()
    best_params = {k: v.copy() for k, v in model.params.items()}
    wait_lr = wait_stop = 0
    n_frames = train_set.features.shape[1]

    for epoch in range(1, config.max_epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(len(train_set))
        losses = []
        for lo in range(0, len(order), config.batch_size):
            idx = np.sort(order[lo : lo + config.batch_size])
            feats, batch_targets = train_set.features[idx], targets[idx]
            if config.augment:
                feats, doas = rotate_sequences(feats, [train_set.doas[i] for i in idx],
                                               random_rotations(rng, len(idx)))
                batch_targets = np.stack([encode_target(d, model.grid) for d in doas]).astype(model.dtype)
            probs = model.forward(feats, keep_cache=True)
            frame_targets = np.repeat(batch_targets[:, None, :], n_frames, axis=1)
            loss, grad = bce_loss(probs, frame_targets)
            grads = model.backward(grad)
            opt.step(model.params, grads, lr)
            losses.append(loss * len(idx))
        acc = sequence_accuracy(model, val_set, config.tolerance)
        hist.train_loss.append(float(np.sum(losses) / len(order)))
        hist.val_accuracy.append(acc)
        hist.learning_rate.append(lr)
        log.info("epoch %d loss %.5f val_acc %.2f lr %.3g (%.1fs)", epoch, hist.train_loss[-1],
                 acc, lr, time.perf_counter() - t0)

        if acc > hist.best_accuracy:
            hist.best_accuracy, hist.best_epoch = acc, epoch
            best_params = {k: v.copy() for k, v in model.params.items()}
            wait_lr = wait_stop = 0
        else:
            wait_lr += 1
            wait_stop += 1
            if wait_stop >= config.early_stop_patience:
                hist.stopped_early = True
                break
            if wait_lr >= config.lr_patience:
                lr *= config.lr_factor
                hist.lr_drops.append(epoch)
                wait_lr = 0
        if config.target_accuracy is not None and acc >= config.target_accuracy:
            break

    for k, v in best_params.items():
        model.params[k][...] = v
    return model, hist
