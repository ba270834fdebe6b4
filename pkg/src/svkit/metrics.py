"""Detection metrics (EER, MinDCF, actual DCF) and the adjusted Rand index.

Decision convention: accept when score >= threshold. Operating points are
taken at every distinct score plus an accept-all sentinel; the EER crossing
is linearly interpolated in (P_miss, P_fa).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import IdMismatch, OneClassOnly, SvkitError


@dataclass(frozen=True)
class DcfParams:
    p_target: float
    c_miss: float = 1.0
    c_fa: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.p_target < 1.0:
            raise SvkitError("p_target must be in (0, 1)")
        if self.c_miss <= 0 or self.c_fa <= 0:
            raise SvkitError("costs must be positive")


def _split_scores(score_set):
    labels = score_set.trials.labels
    if np.any(labels < 0):
        raise SvkitError("all trials need target/nontarget labels")
    tar = score_set.scores[labels == 1]
    non = score_set.scores[labels == 0]
    if tar.size == 0 or non.size == 0:
        raise OneClassOnly("need at least one target and one nontarget trial")
    return tar, non


def _operating_points(tar, non):
    """P_miss, P_fa at thresholds: one below min(score), then every distinct
    score, then one above max(score). Miss = target < thr, FA = non >= thr."""
    tar = np.sort(tar)
    non = np.sort(non)
    distinct = np.unique(np.concatenate([tar, non]))
    thresholds = np.concatenate(
        [[distinct[0] - 1.0], distinct, [distinct[-1] + 1.0]]
    )
    p_miss = np.searchsorted(tar, thresholds, side="left") / tar.size
    p_fa = (non.size - np.searchsorted(non, thresholds, side="left")) / non.size
    return p_miss, p_fa


def eer(score_set) -> float:
    """Equal error rate in [0, 1]."""
    tar, non = _split_scores(score_set)
    p_miss, p_fa = _operating_points(tar, non)
    diff = p_miss - p_fa
    # diff runs from -1 (accept all) to +1 (reject all)
    i = int(np.argmax(diff >= 0.0))
    if diff[i] == 0.0:
        return float(p_miss[i])
    m1, f1 = p_miss[i - 1], p_fa[i - 1]
    m2, f2 = p_miss[i], p_fa[i]
    alpha = (f1 - m1) / ((f1 - m1) - (f2 - m2))
    return float(m1 + alpha * (m2 - m1))


def _norm_factor(params):
    return min(params.c_miss * params.p_target,
               params.c_fa * (1.0 - params.p_target))


def min_dcf(score_set, params: DcfParams) -> float:
    """Minimum normalized detection cost over all thresholds."""
    tar, non = _split_scores(score_set)
    p_miss, p_fa = _operating_points(tar, non)
    cost = (params.c_miss * params.p_target * p_miss
            + params.c_fa * (1.0 - params.p_target) * p_fa)
    return float(cost.min() / _norm_factor(params))


def bayes_threshold(params: DcfParams) -> float:
    return math.log(
        (params.c_fa * (1.0 - params.p_target))
        / (params.c_miss * params.p_target)
    )


def actual_dcf(score_set, params: DcfParams) -> float:
    """Normalized detection cost at the fixed Bayes threshold; the scores
    must be on log-likelihood-ratio scale."""
    tar, non = _split_scores(score_set)
    thr = bayes_threshold(params)
    p_miss = np.mean(tar < thr)
    p_fa = np.mean(non >= thr)
    cost = (params.c_miss * params.p_target * p_miss
            + params.c_fa * (1.0 - params.p_target) * p_fa)
    return float(cost / _norm_factor(params))


def det_points(score_set):
    """(P_fa, P_miss) pairs for a DET curve CSV."""
    tar, non = _split_scores(score_set)
    p_miss, p_fa = _operating_points(tar, non)
    return list(zip(p_fa.tolist(), p_miss.tolist()))


def adjusted_rand_index(labels_a: dict, labels_b: dict) -> float:
    """Chance-corrected partition agreement from the pair-counting
    contingency table. Inputs map item id -> cluster label."""
    if set(labels_a) != set(labels_b):
        raise IdMismatch("partitions cover different id sets")
    ids = list(labels_a)
    n = len(ids)
    if n == 0:
        raise SvkitError("empty partitions")
    cont = {}
    for i in ids:
        key = (labels_a[i], labels_b[i])
        cont[key] = cont.get(key, 0) + 1
    a_sizes, b_sizes = {}, {}
    for (la, lb), c in cont.items():
        a_sizes[la] = a_sizes.get(la, 0) + c
        b_sizes[lb] = b_sizes.get(lb, 0) + c

    def comb2(x):
        return x * (x - 1) // 2

    sum_ij = sum(comb2(c) for c in cont.values())
    sum_a = sum(comb2(c) for c in a_sizes.values())
    sum_b = sum(comb2(c) for c in b_sizes.values())
    total = comb2(n)
    expected = sum_a * sum_b / total if total else 0.0
    max_index = 0.5 * (sum_a + sum_b)
    if max_index == expected:
        return 1.0
    return float((sum_ij - expected) / (max_index - expected))
