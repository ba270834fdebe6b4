"""Central finite-difference checks for the loss gradients (loss-check
CLI backend)."""

from __future__ import annotations

import numpy as np

from .trainmath import (
    AamConfig,
    ContrastiveBatch,
    NegativeQueue,
    aam_softmax_loss,
    moco_loss,
)


def central_diff(fn, x, h=1e-6):
    """Central finite-difference gradient of scalar fn at x (flattened)."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros(x.size)
    flat = x.ravel()
    for i in range(x.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = fn(x)
        flat[i] = orig - h
        fm = fn(x)
        flat[i] = orig
        grad[i] = (fp - fm) / (2.0 * h)
    return grad.reshape(x.shape)


def _rel_err(analytic, numeric):
    denom = max(np.abs(analytic).max(), np.abs(numeric).max(), 1e-8)
    return float(np.abs(analytic - numeric).max() / denom)


def _unit_rows(rng, shape):
    v = rng.standard_normal(shape)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def check_aam(num_subcenters, instances=100, dim=8, num_classes=5, seed=0):
    """Max relative gradient error of the AAM loss over random instances."""
    rng = np.random.default_rng(seed)
    cfg = AamConfig(margin=0.2, scale=5.0, num_subcenters=num_subcenters)
    worst = 0.0
    for _ in range(instances):
        u = _unit_rows(rng, (dim,))
        W = _unit_rows(rng, (num_classes, num_subcenters, dim))
        t = int(rng.integers(num_classes))
        _, grad_u, grad_W = aam_softmax_loss(u, W, t, cfg)
        num_u = central_diff(
            lambda v: aam_softmax_loss(v, W, t, cfg)[0], u.copy()
        )
        num_W = central_diff(
            lambda M: aam_softmax_loss(u, M, t, cfg)[0], W.copy()
        )
        worst = max(worst, _rel_err(grad_u, num_u), _rel_err(grad_W, num_W))
    return worst


def check_moco(instances=100, dim=8, batch=4, queue_size=16, seed=0):
    """Max relative gradient error of the contrastive loss."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(instances):
        X = _unit_rows(rng, (batch, dim))
        P = _unit_rows(rng, (batch, dim))
        Q = NegativeQueue(queue_size, _unit_rows(rng, (queue_size, dim)))
        cb = ContrastiveBatch(X, P, scale=10.0)
        _, grad = moco_loss(cb, Q)
        num = central_diff(
            lambda V: moco_loss(ContrastiveBatch(V, P, scale=10.0), Q)[0],
            X.copy(),
        )
        worst = max(worst, _rel_err(grad, num))
    return worst


def run_suite(instances=100, seed=0):
    """Max relative error per loss, as a name -> error dict."""
    return {
        "aam_softmax_k1": check_aam(1, instances, seed=seed),
        "aam_softmax_k2": check_aam(2, instances, seed=seed + 1),
        "moco": check_moco(instances, seed=seed + 2),
    }
