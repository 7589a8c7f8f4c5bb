"""Cross-correlation, Barlow Twins and the joint classification objective.

Every loss here comes with an explicit gradient so the network can be
trained without an autodiff framework.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError

EPS = 1e-12


@dataclass(frozen=True)
class LossWeights:
    lambda_bt: float = 0.005  # off-diagonal (redundancy) weight
    gamma: float = 0.001  # weight of the whole Barlow Twins term
    center_embeddings: bool = False

    def __post_init__(self):
        if not (np.isfinite(self.lambda_bt) and self.lambda_bt > 0):
            raise ValueError(f"lambda_bt must be finite and > 0, got {self.lambda_bt}")
        if not (np.isfinite(self.gamma) and self.gamma >= 0):
            raise ValueError(f"gamma must be finite and >= 0, got {self.gamma}")


@dataclass(frozen=True)
class LossBreakdown:
    total: float
    ce_term: float
    bt_invariance: float
    bt_redundancy: float  # already multiplied by lambda_bt


def _column_normalize(z, eps):
    norms = np.sqrt(np.sum(z * z, axis=0))
    return z / np.maximum(norms, eps), norms


def cross_correlation(z1, z2, center=False, eps=EPS):
    """Normalized cross-correlation between the columns of two embeddings.

    ``C[i, j] = sum_b z1[b, i] z2[b, j] / (|z1[:, i]| |z2[:, j]|)``. Column
    norms are floored at ``eps`` so a dead (all-zero) column gives zeros
    rather than NaN, while any column with a real norm keeps an exact unit
    self-correlation. No mean-centering unless ``center``.
    """
    z1 = np.asarray(z1, dtype=np.float64)
    z2 = np.asarray(z2, dtype=np.float64)
    if z1.ndim != 2 or z1.shape != z2.shape:
        raise ValueError(f"embeddings must be equal-shape 2-D arrays, got {z1.shape} and {z2.shape}")
    if z1.shape[0] < 2:
        raise DegenerateInputError("cross-correlation needs a batch of at least 2 rows")
    if center:
        z1 = z1 - z1.mean(axis=0)
        z2 = z2 - z2.mean(axis=0)
    a, _ = _column_normalize(z1, eps)
    b, _ = _column_normalize(z2, eps)
    return a.T @ b


def _normalize_backward(z, grad_a, eps):
    norms = np.sqrt(np.sum(z * z, axis=0))
    active = norms > eps  # below the floor the divisor is the constant eps
    n = np.where(active, norms, eps)
    proj = np.sum(grad_a * z, axis=0)
    return grad_a / n - z * np.where(active, proj / n**3, 0.0)


def cross_correlation_backward(z1, z2, grad_c, center=False, eps=EPS):
    """Gradients of a scalar w.r.t. ``z1`` and ``z2`` given ``dL/dC``."""
    z1 = np.asarray(z1, dtype=np.float64)
    z2 = np.asarray(z2, dtype=np.float64)
    if center:
        z1 = z1 - z1.mean(axis=0)
        z2 = z2 - z2.mean(axis=0)
    a, _ = _column_normalize(z1, eps)
    b, _ = _column_normalize(z2, eps)
    grad_a = b @ grad_c.T
    grad_b = a @ grad_c
    d1 = _normalize_backward(z1, grad_a, eps)
    d2 = _normalize_backward(z2, grad_b, eps)
    if center:
        d1 = d1 - d1.mean(axis=0)
        d2 = d2 - d2.mean(axis=0)
    return d1, d2


def barlow_twins_terms(c, lambda_bt):
    """Return ``(invariance, lambda * redundancy)``."""
    c = np.asarray(c, dtype=np.float64)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise ValueError(f"cross-correlation matrix must be square, got {c.shape}")
    diag = np.diagonal(c)
    invariance = float(np.sum((1.0 - diag) ** 2))
    redundancy = float(np.sum(c * c) - np.sum(diag * diag))
    return invariance, lambda_bt * redundancy


def barlow_twins_loss(c, lambda_bt=0.005):
    inv, red = barlow_twins_terms(c, lambda_bt)
    return inv + red


def barlow_twins_grad(c, lambda_bt=0.005):
    g = 2.0 * lambda_bt * np.asarray(c, dtype=np.float64)
    idx = np.diag_indices_from(g)
    g[idx] = -2.0 * (1.0 - np.diagonal(c))
    return g


def log_softmax(logits):
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))


def softmax(logits):
    return np.exp(log_softmax(logits))


def classifier_loss(probs, labels):
    """Mean negative log-likelihood of ``labels`` under row-stochastic ``probs``."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    picked = probs[np.arange(len(labels)), labels]
    return float(-np.mean(np.log(picked)))


def classifier_loss_from_logits(logits, labels):
    """Cross-entropy via log-sum-exp. Returns ``(loss, dloss/dlogits)``."""
    logp = log_softmax(logits)
    labels = np.asarray(labels, dtype=np.int64)
    n = len(labels)
    loss = float(-np.mean(logp[np.arange(n), labels]))
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n


def joint_loss(probs, labels, c, weights: LossWeights):
    """Cross-entropy plus ``gamma`` times the Barlow Twins loss of ``c``.

    With ``gamma == 0`` the Barlow Twins terms are not evaluated and ``c``
    may be ``None``.
    """
    ce = classifier_loss(probs, labels)
    if weights.gamma == 0:
        return ce, LossBreakdown(ce, ce, 0.0, 0.0)
    inv, red = barlow_twins_terms(c, weights.lambda_bt)
    total = ce + weights.gamma * (inv + red)
    return total, LossBreakdown(total, ce, inv, red)


def joint_loss_with_grads(logits, labels, p1, p2, weights: LossWeights):
    """Joint loss from raw network outputs, with gradients.

    Returns ``(breakdown, dlogits, dp1, dp2)``; ``dp1``/``dp2`` are ``None``
    when ``gamma == 0`` (the projector path is then skipped entirely).
    """
    ce, dlogits = classifier_loss_from_logits(logits, labels)
    if weights.gamma == 0:
        return LossBreakdown(ce, ce, 0.0, 0.0), dlogits, None, None
    c = cross_correlation(p1, p2, center=weights.center_embeddings)
    inv, red = barlow_twins_terms(c, weights.lambda_bt)
    grad_c = weights.gamma * barlow_twins_grad(c, weights.lambda_bt)
    dp1, dp2 = cross_correlation_backward(p1, p2, grad_c, center=weights.center_embeddings)
    total = ce + weights.gamma * (inv + red)
    return LossBreakdown(total, ce, inv, red), dlogits, dp1, dp2
