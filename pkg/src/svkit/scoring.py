"""Trial scoring, imposter cohorts, adaptive s-normalization and fusion."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .embeddings import EmbeddingSet
from .errors import (
    DegenerateCohort,
    MisalignedTrials,
    MissingLabel,
    SvkitError,
    UnknownId,
)

TARGET = 1
NONTARGET = 0
UNKNOWN = -1

_SIGMA_FLOOR = 1e-12


@dataclass(frozen=True)
class Cohort:
    """Per-speaker mean embeddings. Means of unit vectors are deliberately
    NOT re-normalized, so inner-product and cosine comparisons differ."""

    speaker_ids: tuple
    means: np.ndarray  # (n_speakers, dim)

    def __len__(self):
        return len(self.speaker_ids)

    @property
    def dim(self):
        return self.means.shape[1]


class TrialList:
    """Ordered (enroll_id, test_id, label) triples."""

    def __init__(self, enroll_ids, test_ids, labels=None):
        self.enroll_ids = list(enroll_ids)
        self.test_ids = list(test_ids)
        if len(self.enroll_ids) != len(self.test_ids):
            raise SvkitError("enroll/test id lists disagree in length")
        n = len(self.enroll_ids)
        if labels is None:
            labels = np.full(n, UNKNOWN, dtype=np.int8)
        else:
            labels = np.asarray(labels, dtype=np.int8)
            if labels.shape != (n,):
                raise SvkitError("labels length mismatch")
        self.labels = labels
        self.labels.setflags(write=False)

    def __len__(self):
        return len(self.enroll_ids)

    def __iter__(self):
        return zip(self.enroll_ids, self.test_ids, self.labels)

    def same_trials(self, other):
        return (
            self.enroll_ids == other.enroll_ids
            and self.test_ids == other.test_ids
        )


class ScoreSet:
    """Per-trial scores aligned with a TrialList."""

    def __init__(self, trials: TrialList, scores):
        scores = np.asarray(scores, dtype=np.float64)
        if scores.shape != (len(trials),):
            raise SvkitError("scores length mismatch with trial list")
        self.trials = trials
        self.scores = scores
        self.scores.setflags(write=False)

    def __len__(self):
        return len(self.trials)

    def with_scores(self, scores):
        return ScoreSet(self.trials, scores)


def build_cohort(emb_set: EmbeddingSet) -> Cohort:
    """Mean of each speaker's (already length-normalized) embeddings, one
    vector per speaker, speakers in lexicographic order."""
    by_speaker = {}
    for utt_id in emb_set.ids:
        m = emb_set.meta.get(utt_id)
        if m is None or m.speaker is None:
            raise MissingLabel(utt_id)
        by_speaker.setdefault(m.speaker, []).append(emb_set.index(utt_id))
    speakers = sorted(by_speaker)
    means = np.array(
        [emb_set.vectors[by_speaker[s]].mean(axis=0) for s in speakers]
    )
    return Cohort(tuple(speakers), means)


def cosine_score(
    trials: TrialList, enroll: EmbeddingSet, test: EmbeddingSet | None = None
) -> ScoreSet:
    """Dot product of the (unit) enroll and test vectors."""
    if test is None:
        test = enroll
    try:
        e_idx = [enroll.index(u) for u in trials.enroll_ids]
        t_idx = [test.index(u) for u in trials.test_ids]
    except SvkitError as e:
        raise UnknownId(str(e)) from None
    scores = np.einsum(
        "ij,ij->i", enroll.vectors[e_idx], test.vectors[t_idx]
    )
    return ScoreSet(trials, scores)


def _cosine_matrix(vecs, cohort_means):
    sims = vecs @ cohort_means.T
    sims /= np.linalg.norm(vecs, axis=1)[:, None]
    sims /= np.linalg.norm(cohort_means, axis=1)[None, :]
    return sims


def _topn_stats(cohort_scores, top_n):
    """Mean and population std of the top_n largest cohort scores; ties are
    broken by cohort (lexicographic speaker) order via stable sort."""
    order = np.argsort(-cohort_scores, axis=1, kind="stable")[:, :top_n]
    top = np.take_along_axis(cohort_scores, order, axis=1)
    return top.mean(axis=1), top.std(axis=1)


def snorm(
    scores: ScoreSet,
    enroll: EmbeddingSet,
    test: EmbeddingSet,
    cohort: Cohort,
    top_n: int | None = 100,
    similarity=None,
) -> ScoreSet:
    """Adaptive symmetric score normalization.

    Per trial with raw score s: rank the enroll embedding's cosine scores
    against the cohort, keep the top_n largest, take mean/population-std
    (mu_e, sigma_e); same on the test side; return
    0.5 * ((s - mu_e) / sigma_e + (s - mu_t) / sigma_t).

    top_n=None uses the whole cohort. `similarity` overrides the cohort
    scoring function (for property testing); it maps (vectors, cohort_means)
    to a score matrix.
    """
    if top_n is None:
        top_n = len(cohort)
    if top_n < 2:
        raise SvkitError("top_n must be >= 2")
    if top_n > len(cohort):
        raise SvkitError(f"top_n={top_n} exceeds cohort size {len(cohort)}")
    if similarity is None:
        similarity = _cosine_matrix

    e_ids = sorted(set(scores.trials.enroll_ids))
    t_ids = sorted(set(scores.trials.test_ids))

    def side_stats(emb_set, ids):
        vecs = np.array([emb_set.vector(u) for u in ids])
        mu, sigma = _topn_stats(similarity(vecs, cohort.means), top_n)
        bad = np.where(sigma < _SIGMA_FLOOR)[0]
        if bad.size:
            raise DegenerateCohort(
                f"constant cohort scores for '{ids[int(bad[0])]}'"
            )
        return {u: (mu[i], sigma[i]) for i, u in enumerate(ids)}

    e_stats = side_stats(enroll, e_ids)
    t_stats = side_stats(test, t_ids)

    out = np.empty(len(scores))
    for i, (e, t, _) in enumerate(scores.trials):
        s = scores.scores[i]
        mu_e, sig_e = e_stats[e]
        mu_t, sig_t = t_stats[t]
        out[i] = 0.5 * ((s - mu_e) / sig_e + (s - mu_t) / sig_t)
    return scores.with_scores(out)


def mean_fuse(score_sets) -> ScoreSet:
    """Per-trial arithmetic mean across systems on one trial list."""
    score_sets = list(score_sets)
    if not score_sets:
        raise SvkitError("need at least one score set to fuse")
    first = score_sets[0]
    for other in score_sets[1:]:
        if not first.trials.same_trials(other.trials):
            raise MisalignedTrials("score sets cover different trials")
    # anchor on the first system so fusing identical sets is exact
    deltas = np.mean([s.scores - first.scores for s in score_sets], axis=0)
    return first.with_scores(first.scores + deltas)


# ---------------------------------------------------------------------------
# trial / score files

def write_trials(trials: TrialList, path):
    """Text, one per line: `enroll_id test_id [1|0]` (label omitted when
    unknown)."""
    with open(path, "w") as f:
        for e, t, lab in trials:
            if lab == UNKNOWN:
                f.write(f"{e} {t}\n")
            else:
                f.write(f"{e} {t} {int(lab)}\n")


def read_trials(path) -> TrialList:
    enroll, test, labels = [], [], []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) == 2:
                lab = UNKNOWN
            elif len(parts) == 3 and parts[2] in ("0", "1"):
                lab = int(parts[2])
            else:
                raise SvkitError(f"{path}:{lineno}: malformed trial line")
            enroll.append(parts[0])
            test.append(parts[1])
            labels.append(lab)
    return TrialList(enroll, test, labels)


def write_scores(score_set: ScoreSet, path):
    """Text `enroll_id test_id score` at 9 significant digits."""
    with open(path, "w") as f:
        for i, (e, t, _) in enumerate(score_set.trials):
            f.write(f"{e} {t} {score_set.scores[i]:.9g}\n")


def read_scores(path, trials: TrialList | None = None) -> ScoreSet:
    """Read a score file; if `trials` is given, scores must align with it
    (labels are taken from the trial list)."""
    enroll, test, vals = [], [], []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 3:
                raise SvkitError(f"{path}:{lineno}: malformed score line")
            enroll.append(parts[0])
            test.append(parts[1])
            vals.append(float(parts[2]))
    if trials is None:
        trials = TrialList(enroll, test)
    else:
        if enroll != trials.enroll_ids or test != trials.test_ids:
            raise MisalignedTrials(f"{path} does not match the trial list")
    return ScoreSet(trials, vals)
