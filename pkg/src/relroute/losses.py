"""Training losses (autodiff-tracked) and the Adam optimizer."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor

__all__ = ["bce_loss", "l1_loss", "bpr_loss", "AdamState", "adam_step", "Adam"]


def bce_loss(logits: Tensor, labels) -> Tensor:
    """Mean binary cross-entropy on raw logits.

    Uses the softplus form ``y*softplus(-z) + (1-y)*softplus(z)``, which is
    exact and overflow-safe for any logit magnitude.  Labels must be 0 or 1.
    """
    y = labels.data if isinstance(labels, Tensor) else np.asarray(labels, dtype=np.float64)
    y = y.reshape(logits.shape)
    if not np.all((y == 0.0) | (y == 1.0)):
        raise ValueError("bce_loss labels must be binary")
    pos = T.mul(Tensor(y), T.softplus(T.scalar_mul(logits, -1.0)))
    neg = T.mul(Tensor(1.0 - y), T.softplus(logits))
    return T.total_mean(T.add(pos, neg))


def l1_loss(pred: Tensor, target) -> Tensor:
    """Mean absolute difference."""
    t = target if isinstance(target, Tensor) else Tensor(np.asarray(target, dtype=np.float64))
    if t.shape != pred.shape:
        raise T.ShapeError(f"l1_loss shapes differ: {pred.shape} vs {t.shape}")
    return T.total_mean(T.absolute(T.add(pred, T.scalar_mul(t, -1.0))))


def bpr_loss(pos_scores: Tensor, neg_scores: Tensor) -> Tensor:
    """Pairwise ranking loss: mean of -log sigmoid(pos - neg)."""
    if pos_scores.shape != neg_scores.shape:
        raise T.ShapeError("bpr_loss needs one negative per positive")
    diff = T.add(pos_scores, T.scalar_mul(neg_scores, -1.0))
    return T.total_mean(T.softplus(T.scalar_mul(diff, -1.0)))


class AdamState:
    """First/second moment accumulators for one parameter set."""

    def __init__(self, params):
        self.m = [np.zeros(p.shape) for p in params]
        self.v = [np.zeros(p.shape) for p in params]
        self.t = 0


def adam_step(params, grads, state: AdamState, lr, beta1=0.9, beta2=0.999,
              eps=1e-8):
    """One bias-corrected Adam update, in place on the parameter tensors."""
    state.t += 1
    t = state.t
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            continue
        if not np.all(np.isfinite(g)):
            raise FloatingPointError("non-finite gradient in adam_step")
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g
        m_hat = state.m[i] / (1.0 - beta1 ** t)
        v_hat = state.v[i] / (1.0 - beta2 ** t)
        p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + eps)


class Adam:
    """Optimizer facade over a fixed parameter list."""

    def __init__(self, params, lr=0.005, betas=(0.9, 0.999), eps=1e-8):
        if lr <= 0:
            raise ValueError("lr must be positive")
        self.params = list(params)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.state = AdamState(self.params)

    def step(self):
        grads = [p.grad if p.grad is not None else np.zeros(p.shape)
                 for p in self.params]
        adam_step(self.params, grads, self.state, self.lr,
                  self.betas[0], self.betas[1], self.eps)

    def zero_grad(self):
        for p in self.params:
            p.grad = None
