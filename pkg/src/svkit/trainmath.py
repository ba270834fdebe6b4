"""Loss functions, momentum mechanics, negative queue, CLR schedule and
crop-pair selection, with exact analytic gradients in double precision.

All losses are plain functions of their raw inputs (no internal
re-normalization), so central finite differences apply directly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import (
    CropTooLong,
    DimMismatch,
    EmptyQueue,
    LengthMismatch,
    NonUnitInput,
    SvkitError,
)

_UNIT_ATOL = 1e-3  # loose: finite-difference probes perturb off the sphere


def _check_unit(arr, name):
    norms = np.linalg.norm(arr, axis=-1)
    if np.any(np.abs(norms - 1.0) > _UNIT_ATOL):
        raise NonUnitInput(f"{name} rows must be unit-norm")


@dataclass(frozen=True)
class AamConfig:
    margin: float = 0.2
    scale: float = 30.0
    num_subcenters: int = 1

    def __post_init__(self):
        if not 0.0 <= self.margin < math.pi / 2:
            raise SvkitError("margin must be in [0, pi/2)")
        if self.scale <= 0:
            raise SvkitError("scale must be positive")
        if self.num_subcenters < 1:
            raise SvkitError("num_subcenters must be >= 1")


def aam_softmax_loss(embedding, class_weights, target_class,
                     config: AamConfig):
    """Additive-angular-margin softmax with subcenters.

    class_weights is (C, K, d); the class cosine is the max over its K
    subcenter cosines (first index wins ties). The target logit is
    scale * cos(theta_target + margin), others scale * cos_j; loss is the
    cross-entropy of the softmax at the target class. Returns
    (loss, grad_embedding, grad_weights) with exact analytic gradients.
    """
    u = np.asarray(embedding, dtype=np.float64)
    W = np.asarray(class_weights, dtype=np.float64)
    if W.ndim != 3:
        raise SvkitError("class_weights must be (C, K, d)")
    C, K, d = W.shape
    if K != config.num_subcenters:
        raise SvkitError("subcenter count mismatch with config")
    if u.shape != (d,):
        raise DimMismatch("embedding dimension mismatch")
    if not 0 <= target_class < C:
        raise SvkitError("target_class out of range")
    _check_unit(u, "embedding")
    _check_unit(W, "class_weights")

    # einsum keeps per-row summation order independent of K, so duplicated
    # subcenters reproduce the K=1 loss bit-for-bit
    cos_all = np.einsum("ckd,d->ck", W, u)

    best = np.argmax(cos_all, axis=1)    # first index on ties
    cos = cos_all[np.arange(C), best]    # (C,)

    s, m = config.scale, config.margin
    logits = s * cos.copy()
    c_t = min(max(cos[target_class], -1.0 + 1e-12), 1.0 - 1e-12)
    sin_t = math.sqrt(1.0 - c_t * c_t)
    logits[target_class] = s * (c_t * math.cos(m) - sin_t * math.sin(m))

    lse = logsumexp(logits)
    loss = float(lse - logits[target_class])
    p = np.exp(logits - lse)

    dloss_dlogit = p.copy()
    dloss_dlogit[target_class] -= 1.0
    # d logit_j / d cos_j
    dlogit_dcos = np.full(C, s)
    dlogit_dcos[target_class] = s * (
        math.cos(m) + c_t * math.sin(m) / sin_t
    )
    dcos = dloss_dlogit * dlogit_dcos     # (C,)

    grad_u = (dcos[:, None] * W[np.arange(C), best]).sum(axis=0)
    grad_W = np.zeros_like(W)
    grad_W[np.arange(C), best] = dcos[:, None] * u[None, :]
    return loss, grad_u, grad_W


@dataclass
class NegativeQueue:
    """FIFO store of momentum-encoder embeddings, oldest evicted first."""

    capacity: int
    embeddings: np.ndarray  # (size, d)

    @classmethod
    def empty(cls, capacity, dim):
        if capacity < 1:
            raise SvkitError("capacity must be >= 1")
        return cls(capacity, np.empty((0, dim)))

    def __len__(self):
        return self.embeddings.shape[0]

    @property
    def dim(self):
        return self.embeddings.shape[1]


def queue_push(queue: NegativeQueue, batch) -> NegativeQueue:
    """Append a batch in order, then evict from the front down to
    capacity."""
    batch = np.atleast_2d(np.asarray(batch, dtype=np.float64))
    if batch.shape[1] != queue.dim:
        raise DimMismatch(
            f"batch dim {batch.shape[1]} vs queue dim {queue.dim}"
        )
    merged = np.vstack([queue.embeddings, batch])
    if merged.shape[0] > queue.capacity:
        merged = merged[-queue.capacity:]
    return NegativeQueue(queue.capacity, merged)


@dataclass
class ContrastiveBatch:
    queries: np.ndarray    # (n, d) embedding-extractor outputs
    positives: np.ndarray  # (n, d) momentum-encoder outputs
    scale: float = 10.0

    def __post_init__(self):
        self.queries = np.atleast_2d(
            np.asarray(self.queries, dtype=np.float64))
        self.positives = np.atleast_2d(
            np.asarray(self.positives, dtype=np.float64))
        if self.queries.shape != self.positives.shape:
            raise DimMismatch("queries/positives shape mismatch")
        if self.queries.shape[0] < 1:
            raise SvkitError("batch must be nonempty")
        if self.scale < 0:
            raise SvkitError("scale must be nonnegative")
        _check_unit(self.queries, "queries")
        _check_unit(self.positives, "positives")


def moco_loss(batch: ContrastiveBatch, queue: NegativeQueue):
    """Contrastive loss against the queue of negatives:
        -(1/n) sum_i log softmax_i(positive | positive + queue)
    with logits scale * (x_i . v). Gradient is with respect to the queries
    only; positives and queue entries come from the momentum encoder.
    """
    if len(queue) == 0:
        raise EmptyQueue("negative queue is empty")
    X, P = batch.queries, batch.positives
    if queue.dim != X.shape[1]:
        raise DimMismatch("queue dimension mismatch")
    s = batch.scale
    n = X.shape[0]
    Q = queue.embeddings

    pos_logit = s * np.einsum("ij,ij->i", X, P)       # (n,)
    neg_logits = s * X @ Q.T                           # (n, N)
    all_logits = np.hstack([pos_logit[:, None], neg_logits])
    lse = logsumexp(all_logits, axis=1)
    loss = float(np.mean(lse - pos_logit))

    probs = np.exp(all_logits - lse[:, None])          # softmax rows
    # dL/dx_i = (s/n) * (sum_k pi_k v_k - p_i)
    grad = (probs[:, :1] * P + probs[:, 1:] @ Q - P) * (s / n)
    return loss, grad


def momentum_update(theta_m, theta_e, momentum):
    """theta_m <- momentum * theta_m + (1 - momentum) * theta_e."""
    theta_m = np.asarray(theta_m, dtype=np.float64)
    theta_e = np.asarray(theta_e, dtype=np.float64)
    if theta_m.shape != theta_e.shape:
        raise LengthMismatch("parameter vectors differ in length")
    if not 0.0 <= momentum <= 1.0:
        raise SvkitError("momentum must be in [0, 1]")
    return momentum * theta_m + (1.0 - momentum) * theta_e


def clr_triangular2(t, cycle_len, lr_min=1e-8, lr_max=1e-3):
    """Triangular cyclical learning rate whose peak halves every cycle:
    within cycle c, the rate rises linearly from lr_min to
    lr_min + (lr_max - lr_min) / 2^c at the cycle midpoint and back."""
    if t < 0:
        raise SvkitError("iteration index must be >= 0")
    if cycle_len < 2:
        raise SvkitError("cycle_len must be >= 2")
    if lr_min > lr_max:
        raise SvkitError("lr_min must be <= lr_max")
    cycle = t // cycle_len
    pos = t - cycle * cycle_len
    peak = lr_min + (lr_max - lr_min) / (2.0 ** cycle)
    frac = 1.0 - abs(2.0 * pos / cycle_len - 1.0)
    return float(lr_min + (peak - lr_min) * frac)


def crop_overlap(start_a, start_b, crop_len):
    return max(0, crop_len - abs(start_a - start_b))


def min_overlap_crop_pair(utt_len_frames, crop_len, num_candidates=5,
                          seed=0):
    """Sample candidate crop starts uniformly and return the pair with the
    least overlap (ties: lexicographically smallest sorted pair)."""
    if crop_len < 1:
        raise SvkitError("crop_len must be >= 1")
    if crop_len > utt_len_frames:
        raise CropTooLong(
            f"crop of {crop_len} frames exceeds utterance of "
            f"{utt_len_frames}"
        )
    if num_candidates < 2:
        raise SvkitError("need at least two candidate crops")
    rng = np.random.default_rng(seed)
    starts = rng.integers(0, utt_len_frames - crop_len + 1,
                          size=num_candidates)
    return best_crop_pair(starts, crop_len)


def best_crop_pair(starts, crop_len):
    """Least-overlap unordered pair among explicit candidate starts."""
    starts = [int(s) for s in starts]
    best = None
    for i in range(len(starts)):
        for j in range(i + 1, len(starts)):
            pair = tuple(sorted((starts[i], starts[j])))
            key = (crop_overlap(pair[0], pair[1], crop_len), pair)
            if best is None or key < best:
                best = key
    return best[1]
