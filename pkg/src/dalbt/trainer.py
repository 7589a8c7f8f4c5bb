"""Mini-batch optimisation of the joint objective on a labeled pool."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .augmentations import AugmentationConfig, make_view_batch
from .errors import ConfigurationError, TrainingDivergedError
from .losses import LossWeights, joint_loss_with_grads
from .network import NetworkParams, backward, forward_joint, predict_latents


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    weight_decay: float = 1e-5
    batch_size: int = 64
    epochs: int = 20
    optimizer: str = "adam"  # or "sgd"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    momentum: float = 0.0  # sgd only
    reinit_per_stage: bool = True
    select_best_on_val: bool = False
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be >= 0")
        if self.batch_size < 2:
            raise ValueError(
                "batch_size must be >= 2: the cross-correlation matrix needs at least two rows per batch"
            )
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    loss: float
    ce_term: float
    bt_invariance: float
    bt_redundancy: float
    train_accuracy: float
    val_accuracy: float | None = None


class Adam:
    def __init__(self, cfg: TrainConfig):
        self.cfg = cfg
        self.t = 0
        self.m: dict = {}
        self.v: dict = {}

    def step(self, tensors, grads):
        c = self.cfg
        self.t += 1
        b1, b2 = c.adam_beta1, c.adam_beta2
        corr1 = 1 - b1**self.t
        corr2 = 1 - b2**self.t
        for name, w in tensors.items():
            g = grads[name] + c.weight_decay * w
            m = self.m.get(name)
            if m is None:
                m = self.m[name] = np.zeros_like(w)
                self.v[name] = np.zeros_like(w)
            v = self.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            w -= c.learning_rate * (m / corr1) / (np.sqrt(v / corr2) + c.adam_eps)


class SGD:
    def __init__(self, cfg: TrainConfig):
        self.cfg = cfg
        self.velocity: dict = {}

    def step(self, tensors, grads):
        c = self.cfg
        for name, w in tensors.items():
            g = grads[name] + c.weight_decay * w
            if c.momentum:
                vel = self.velocity.setdefault(name, np.zeros_like(w))
                vel *= c.momentum
                vel += g
                g = vel
            w -= c.learning_rate * g


def make_optimizer(cfg: TrainConfig):
    return Adam(cfg) if cfg.optimizer == "adam" else SGD(cfg)


def batch_loss_and_grads(params: NetworkParams, x, y, v1, v2, weights: LossWeights):
    """Joint loss and parameter gradients for one batch of fixed views."""
    out = forward_joint(params, x, v1, v2)
    breakdown, dlogits, dp1, dp2 = joint_loss_with_grads(out.logits, y, out.p1, out.p2, weights)
    grads = backward(params, out.tape, dlogits, dp1, dp2)
    return breakdown, grads, out.probs


def evaluate(params: NetworkParams, x, labels, batch_size=512) -> float:
    """Accuracy of argmax predictions on undistorted inputs (ties -> lowest class)."""
    labels = np.asarray(labels)
    if len(labels) == 0:
        raise ConfigurationError("cannot evaluate on an empty set")
    if np.any(labels < 0):
        raise ConfigurationError("every evaluation sample needs a label")
    _, probs = predict_latents(params, x, batch_size)
    return float(np.mean(probs.argmax(axis=1) == labels))


def _batches(n, batch_size, rng):
    perm = rng.permutation(n)
    for start in range(0, n, batch_size):
        idx = perm[start:start + batch_size]
        if len(idx) >= 2:
            yield idx


def train_stage(params: NetworkParams, x, y, aug_cfg: AugmentationConfig, loss_weights: LossWeights,
                train_cfg: TrainConfig, ids=None, val=None, seed=None):
    """Train a copy of ``params`` on ``(x, y)``; return ``(params', epoch_log)``.

    ``ids`` are the sample ids behind the rows of ``x``; they key the
    per-sample augmentation streams. ``val`` is an optional ``(x, y)`` pair
    used for per-epoch validation accuracy and, when
    ``train_cfg.select_best_on_val`` is set, to keep the best epoch.
    A final batch with fewer than two samples is dropped.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    ids = np.arange(len(x)) if ids is None else np.asarray(ids)
    seed = train_cfg.seed if seed is None else seed
    params = params.copy()
    opt = make_optimizer(train_cfg)
    rng = np.random.default_rng(seed)
    use_views = loss_weights.gamma > 0
    log: list = []
    best = (-1.0, None)
    for epoch in range(train_cfg.epochs):
        sums = np.zeros(4)
        correct = seen = nb = 0
        for bi, idx in enumerate(_batches(len(x), train_cfg.batch_size, rng)):
            xb, yb = x[idx], y[idx]
            v1 = v2 = None
            if use_views:
                v1, v2 = make_view_batch(xb, ids[idx], aug_cfg, seed, epoch)
            bd, grads, probs = batch_loss_and_grads(params, xb, yb, v1, v2, loss_weights)
            for term in ("total", "ce_term", "bt_invariance", "bt_redundancy"):
                if not np.isfinite(getattr(bd, term)):
                    raise TrainingDivergedError(epoch, bi, term, getattr(bd, term))
            opt.step(params.tensors, grads)
            sums += (bd.total, bd.ce_term, bd.bt_invariance, bd.bt_redundancy)
            correct += int(np.sum(probs.argmax(axis=1) == yb))
            seen += len(idx)
            nb += 1
        means = sums / max(nb, 1)
        val_acc = evaluate(params, *val) if val is not None and len(val[1]) else None
        log.append(EpochRecord(epoch, *map(float, means), correct / max(seen, 1), val_acc))
        if train_cfg.select_best_on_val and val_acc is not None and val_acc > best[0]:
            best = (val_acc, params.copy())
    if train_cfg.select_best_on_val and best[1] is not None:
        params = best[1]
    return params, log


def numeric_gradient(loss_fn, tensors, step=1e-5):
    """Central differences of ``loss_fn()`` w.r.t. every entry of ``tensors``."""
    out = {}
    for name, w in tensors.items():
        g = np.zeros_like(w)
        flat, gflat = w.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = loss_fn()
            flat[i] = orig - step
            down = loss_fn()
            flat[i] = orig
            gflat[i] = (up - down) / (2 * step)
        out[name] = g
    return out


def relative_error(a, b):
    return np.abs(a - b) / np.maximum(1e-8, np.abs(a) + np.abs(b))


def grad_check(params: NetworkParams, batch, step=1e-5, loss_weights: LossWeights = LossWeights(),
               return_all=False):
    """Worst relative error between analytic and central-difference gradients.

    ``batch`` is ``(x, y, view1, view2)``; the views are held fixed.
    """
    if not 1e-6 <= step <= 1e-4:
        raise ValueError("step must lie in [1e-6, 1e-4]")
    x, y, v1, v2 = batch
    if loss_weights.gamma == 0:
        v1 = v2 = None
    _, analytic, _ = batch_loss_and_grads(params, x, y, v1, v2, loss_weights)
    work = params.copy()

    def loss_fn():
        return batch_loss_and_grads(work, x, y, v1, v2, loss_weights)[0].total

    numeric = numeric_gradient(loss_fn, work.tensors, step)
    errors = {k: float(np.max(relative_error(analytic[k], numeric[k]), initial=0.0)) for k in analytic}
    worst = max(errors.values(), default=0.0)
    return (worst, errors, analytic, numeric) if return_all else worst
