"""Calibration trial generation, quality measures and logistic regression.

Calibration trials come in three duration classes (short-short, short-long,
long-long) with short = [2 s, 6 s) and long = [6 s, inf). The quality-aware
second stage uses the feature vector
    [fused score, min_dur_q, max_dur_q, min_imp_q, max_imp_q].
Calibrated outputs are on log-likelihood-ratio scale (no sigmoid).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .embeddings import EmbeddingSet, UttMeta
from .errors import (
    ArityMismatch,
    InsufficientData,
    MissingMeta,
    SvkitError,
    TopNTooLarge,
)
from .scoring import Cohort, ScoreSet, TrialList

SHORT_MIN_S = 2.0
LONG_MIN_S = 6.0

TRIAL_CLASSES = ("short-short", "short-long", "long-long")


def duration_class(dur_a: float, dur_b: float) -> str | None:
    """Trial duration class, or None when a side is below the 2 s floor."""

    def bucket(d):
        if d < SHORT_MIN_S:
            return None
        return "short" if d < LONG_MIN_S else "long"

    a, b = bucket(dur_a), bucket(dur_b)
    if a is None or b is None:
        return None
    if a == b:
        return f"{a}-{a}"
    return "short-long"


def gen_calibration_trials(
    emb_set: EmbeddingSet, per_class: int, seed=0
) -> TrialList:
    """per_class trials for each duration class, half targets half
    nontargets, no duplicate pairs, deterministic per seed."""
    if per_class < 0 or per_class % 2:
        raise SvkitError("per_class must be a nonnegative even number")
    if per_class == 0:
        return TrialList([], [])

    buckets = {"short": [], "long": []}
    speaker_of = {}
    for utt_id in emb_set.ids:
        m = emb_set.meta.get(utt_id)
        if m is None or m.speaker is None:
            raise MissingMeta(utt_id)
        speaker_of[utt_id] = m.speaker
        if m.duration_s >= LONG_MIN_S:
            buckets["long"].append(utt_id)
        elif m.duration_s >= SHORT_MIN_S:
            buckets["short"].append(utt_id)

    rng = np.random.default_rng(seed)
    used = set()
    enroll, test, labels = [], [], []

    def candidate_pairs(cls, want_target):
        a_bucket, b_bucket = cls.split("-")
        pairs = []
        for a in buckets[a_bucket]:
            for b in buckets[b_bucket]:
                if a == b or (a, b) in used or (b, a) in used:
                    continue
                if a_bucket == b_bucket and a > b:
                    continue  # unordered within one bucket
                if (speaker_of[a] == speaker_of[b]) == want_target:
                    pairs.append((a, b))
        return pairs

    for cls in TRIAL_CLASSES:
        for want_target in (True, False):
            need = per_class // 2
            pairs = candidate_pairs(cls, want_target)
            if len(pairs) < need:
                kind = "target" if want_target else "nontarget"
                raise InsufficientData(
                    cls, f"need {need} {kind} pairs, have {len(pairs)}"
                )
            picked = rng.choice(len(pairs), size=need, replace=False)
            for idx in sorted(picked.tolist()):
                a, b = pairs[idx]
                used.add((a, b))
                enroll.append(a)
                test.append(b)
                labels.append(1 if want_target else 0)
    return TrialList(enroll, test, labels)


# ---------------------------------------------------------------------------
# quality measures

def duration_qmf(meta: UttMeta, log_scale=True) -> float:
    """Speech-duration quality measure: log(1 + speech_frames) by default,
    the raw count otherwise."""
    if meta is None:
        raise MissingMeta("<missing>")
    frames = meta.speech_frames
    return float(np.log1p(frames)) if log_scale else float(frames)


def imposter_mean_qmf(vec, cohort: Cohort, metric="inner_product",
                      top_n=None) -> float:
    """Mean of the (unit) embedding's top_n cohort scores under the chosen
    metric; top_n=None averages the whole cohort."""
    vec = np.asarray(vec, dtype=np.float64)
    if metric == "inner_product":
        scores = cohort.means @ vec
    elif metric == "cosine":
        scores = (cohort.means @ vec) / (
            np.linalg.norm(cohort.means, axis=1) * np.linalg.norm(vec)
        )
    else:
        raise SvkitError(f"unknown imposter metric '{metric}'")
    if top_n is not None:
        if top_n > len(cohort):
            raise TopNTooLarge(
                f"top_n={top_n} exceeds cohort size {len(cohort)}"
            )
        scores = np.sort(scores)[::-1][:top_n]
    return float(scores.mean())


@dataclass(frozen=True)
class QmfVector:
    min_dur_q: float
    max_dur_q: float
    min_imp_q: float
    max_imp_q: float

    def as_array(self):
        return np.array(
            [self.min_dur_q, self.max_dur_q, self.min_imp_q, self.max_imp_q]
        )


@dataclass(frozen=True)
class QmfConfig:
    metric: str = "inner_product"
    top_n: int | None = 100
    log_duration: bool = True


def utterance_qmfs(emb_set: EmbeddingSet, cohort: Cohort,
                   config: QmfConfig = QmfConfig()):
    """Per-utterance (dur_q, imp_q) pairs, cached by id."""
    out = {}
    for utt_id in emb_set.ids:
        m = emb_set.meta.get(utt_id)
        if m is None:
            raise MissingMeta(utt_id)
        out[utt_id] = (
            duration_qmf(m, log_scale=config.log_duration),
            imposter_mean_qmf(
                emb_set.vector(utt_id), cohort, config.metric, config.top_n
            ),
        )
    return out


def trial_qmfs(trials: TrialList, enroll: EmbeddingSet, test: EmbeddingSet,
               cohort: Cohort, config: QmfConfig = QmfConfig()):
    """Symmetric per-trial QMF vectors: (min, max) over the two sides for
    each metric."""
    cache = {}

    def get(emb_set, utt_id):
        if utt_id not in cache:
            m = emb_set.meta.get(utt_id)
            if m is None:
                raise MissingMeta(utt_id)
            cache[utt_id] = (
                duration_qmf(m, log_scale=config.log_duration),
                imposter_mean_qmf(
                    emb_set.vector(utt_id), cohort, config.metric,
                    config.top_n
                ),
            )
        return cache[utt_id]

    out = []
    for e, t, _ in trials:
        dur_e, imp_e = get(enroll, e)
        dur_t, imp_t = get(test, t)
        out.append(QmfVector(
            min_dur_q=min(dur_e, dur_t),
            max_dur_q=max(dur_e, dur_t),
            min_imp_q=min(imp_e, imp_t),
            max_imp_q=max(imp_e, imp_t),
        ))
    return out


# ---------------------------------------------------------------------------
# logistic regression

@dataclass
class CalibrationModel:
    weights: np.ndarray
    bias: float
    feature_names: tuple = ()
    converged: bool = True

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if not (np.all(np.isfinite(self.weights))
                and np.isfinite(self.bias)):
            raise SvkitError("calibration model must be finite")

    @property
    def arity(self):
        return self.weights.size


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _bce(z, y):
    # mean log(1 + exp(-y'z)) with y' in {-1,+1}, stable form
    m = np.where(y == 1, -z, z)
    return float(np.mean(np.logaddexp(0.0, m)))


def fit_logreg(features, labels, l2=1e-6, max_iter=100,
               feature_names=()) -> CalibrationModel:
    """Damped-Newton logistic regression minimizing
    mean BCE + l2 * ||w||^2 / 2 (bias unregularized).

    Converged when the gradient infinity-norm drops below 1e-9; otherwise the
    best iterate is returned with converged=False.
    """
    X = np.asarray(features, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(labels, dtype=np.float64)
    if y.shape != (X.shape[0],):
        raise SvkitError("labels length mismatch")
    if not (np.any(y == 1) and np.any(y == 0)):
        raise SvkitError("need at least one trial of each label")
    if l2 < 0:
        raise SvkitError("l2 must be >= 0")

    n, f = X.shape
    w = np.zeros(f)
    b = 0.0

    def objective(w, b):
        return _bce(X @ w + b, y) + 0.5 * l2 * float(w @ w)

    converged = False
    for _ in range(max_iter):
        z = X @ w + b
        p = _sigmoid(z)
        grad_w = X.T @ (p - y) / n + l2 * w
        grad_b = float(np.mean(p - y))
        gnorm = max(np.abs(grad_w).max(), abs(grad_b))
        if gnorm < 1e-9:
            converged = True
            break
        r = p * (1.0 - p)
        Xa = np.hstack([X, np.ones((n, 1))])
        H = (Xa * r[:, None]).T @ Xa / n
        H[:f, :f] += l2 * np.eye(f)
        H += 1e-12 * np.eye(f + 1)
        step = np.linalg.solve(H, np.concatenate([grad_w, [grad_b]]))
        # backtracking keeps the loss monotone on separable data
        obj0 = objective(w, b)
        t = 1.0
        for _ in range(50):
            w_new = w - t * step[:f]
            b_new = b - t * step[f]
            if objective(w_new, b_new) <= obj0:
                break
            t *= 0.5
        w, b = w_new, b_new
    else:
        z = X @ w + b
        p = _sigmoid(z)
        grad_w = X.T @ (p - y) / n + l2 * w
        grad_b = float(np.mean(p - y))
        converged = max(np.abs(grad_w).max(), abs(grad_b)) < 1e-9

    return CalibrationModel(w, float(b), tuple(feature_names), converged)


def build_features(scores: ScoreSet, qmfs=None):
    """Design matrix: [score] or [score, min_dur, max_dur, min_imp,
    max_imp]."""
    cols = [scores.scores]
    if qmfs is not None:
        if len(qmfs) != len(scores):
            raise SvkitError("qmf list length mismatch")
        q = np.array([v.as_array() for v in qmfs])
        cols.append(q)
        return np.column_stack(cols)
    return scores.scores[:, None]


def apply_calibration(model: CalibrationModel, scores: ScoreSet,
                      qmfs=None) -> ScoreSet:
    """bias + w . features per trial, on LLR scale."""
    X = build_features(scores, qmfs)
    if X.shape[1] != model.arity:
        raise ArityMismatch(
            f"model expects {model.arity} features, got {X.shape[1]}"
        )
    return scores.with_scores(X @ model.weights + model.bias)


# ---------------------------------------------------------------------------
# files

def write_model(model: CalibrationModel, path):
    payload = {
        "version": 1,
        "feature_names": list(model.feature_names),
        "weights": [float(v) for v in model.weights],
        "bias": float(model.bias),
    }
    with open(path, "w") as f:
        json.dump(payload, f, indent=2)
        f.write("\n")


def read_model(path) -> CalibrationModel:
    with open(path) as f:
        payload = json.load(f)
    if payload.get("version") != 1:
        raise SvkitError(f"{path}: unsupported model version")
    return CalibrationModel(
        np.array(payload["weights"], dtype=np.float64),
        float(payload["bias"]),
        tuple(payload.get("feature_names", ())),
    )


def write_qmf_cache(qmfs: dict, path):
    """CSV `utt_id,dur_q,imp_q`."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["utt_id", "dur_q", "imp_q"])
        for utt_id, (dur_q, imp_q) in qmfs.items():
            w.writerow([utt_id, repr(float(dur_q)), repr(float(imp_q))])


def read_qmf_cache(path) -> dict:
    out = {}
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != ["utt_id", "dur_q", "imp_q"]:
            raise SvkitError(f"{path}: bad qmf cache header")
        for row in reader:
            out[row["utt_id"]] = (float(row["dur_q"]), float(row["imp_q"]))
    return out
