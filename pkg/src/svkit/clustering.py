"""Unsupervised pseudo-labeling: mini-batch k-means, Ward AHC over the
k-means centers, label assignment, prototype computation, cluster-count
sweep and the iteration driver.

Ward linkage requires Euclidean geometry; centers are length-normalized
first so that for unit vectors ||a-b||^2 = 2(1 - cos(a,b)), which realizes
the cosine metric inside Ward.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from scipy.cluster.hierarchy import fcluster, linkage

from . import metrics as _metrics
from .embeddings import EmbeddingSet
from .errors import (
    BadMagic,
    DimMismatch,
    EmptyInput,
    IdSetChanged,
    KTooLarge,
    SvkitError,
    TruncatedFile,
)

_KM_MAGIC = b"SVKM"
_KM_VERSION = 1


@dataclass
class KMeansModel:
    centers: np.ndarray  # (k, d)
    counts: np.ndarray   # (k,) assignment counts
    inertia: float = 0.0

    def __post_init__(self):
        self.centers = np.asarray(self.centers, dtype=np.float64)
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.centers.ndim != 2 or self.centers.shape[0] < 1:
            raise SvkitError("centers must be a nonempty (k, d) matrix")
        if self.counts.shape != (self.centers.shape[0],):
            raise SvkitError("counts length mismatch")
        if np.any(self.counts < 0):
            raise SvkitError("counts must be nonnegative")

    @property
    def k(self):
        return self.centers.shape[0]


@dataclass(frozen=True)
class Dendrogram:
    """Merge list of (node_a, node_b, height, new_node); leaves are
    0..k-1, merged node i gets id k+i."""

    merges: tuple

    def heights(self):
        return np.array([m[2] for m in self.merges])


@dataclass
class PseudoLabeling:
    assignment: dict            # utt_id -> cluster index in [0, K)
    prototypes: np.ndarray      # (K, d) mean of normalized member embeddings

    @property
    def num_clusters(self):
        return self.prototypes.shape[0]


def _sq_dists(points, centers):
    d2 = (
        np.sum(points ** 2, axis=1)[:, None]
        - 2.0 * points @ centers.T
        + np.sum(centers ** 2, axis=1)[None, :]
    )
    np.maximum(d2, 0.0, out=d2)
    return d2


def _nearest(points, centers, chunk=4096):
    out = np.empty(points.shape[0], dtype=np.int64)
    for lo in range(0, points.shape[0], chunk):
        hi = min(lo + chunk, points.shape[0])
        out[lo:hi] = np.argmin(_sq_dists(points[lo:hi], centers), axis=1)
    return out


def _inertia(points, centers, chunk=4096):
    total = 0.0
    for lo in range(0, points.shape[0], chunk):
        hi = min(lo + chunk, points.shape[0])
        total += float(np.min(_sq_dists(points[lo:hi], centers), axis=1).sum())
    return total


def minibatch_kmeans(emb_set: EmbeddingSet, k, batch_size=10000,
                     n_batches=None, seed=0) -> KMeansModel:
    """Mini-batch k-means with per-center learning rate 1/count.

    Initialization picks k distinct points uniformly. Each batch is sampled
    uniformly with replacement from the whole set; batch points assigned to
    one center move it to the running mean of everything it has absorbed.
    Default n_batches gives roughly 10 epochs of coverage. Centers that were
    never hit are reseeded to the farthest points of the last batch.
    """
    X = emb_set.vectors
    n = X.shape[0]
    if k > n:
        raise KTooLarge(f"k={k} exceeds {n} points")
    if k < 1 or batch_size < 1:
        raise SvkitError("k and batch_size must be >= 1")
    if n_batches is None:
        n_batches = -(-10 * n // batch_size)

    rng = np.random.default_rng(seed)
    centers = X[rng.choice(n, size=k, replace=False)].copy()
    counts = np.zeros(k, dtype=np.int64)

    last_batch = None
    last_assign = None
    for _ in range(n_batches):
        batch = X[rng.integers(0, n, size=min(batch_size, n))]
        assign = _nearest(batch, centers)
        hit = np.unique(assign)
        sums = np.zeros((hit.size, X.shape[1]))
        np.add.at(sums, np.searchsorted(hit, assign), batch)
        m = np.bincount(assign, minlength=k)[hit]
        prior = counts[hit]
        centers[hit] = (
            prior[:, None] * centers[hit] + sums
        ) / (prior + m)[:, None]
        counts[hit] += m
        last_batch, last_assign = batch, assign

    empty = np.where(counts == 0)[0]
    if empty.size and last_batch is not None:
        # reseed dead centers with the worst-fit points of the last batch
        dists = _sq_dists(last_batch, centers)
        fit = dists[np.arange(last_batch.shape[0]), last_assign]
        order = np.argsort(-fit, kind="stable")
        for i, c in enumerate(empty[: order.size]):
            centers[c] = last_batch[order[i]]
            counts[c] = 1

    return KMeansModel(centers, counts, _inertia(X, centers))


def lloyd_kmeans(emb_set: EmbeddingSet, k, max_iter=300, seed=0,
                 init_centers=None) -> KMeansModel:
    """Full-batch Lloyd reference; inertia is non-increasing per iteration.
    Used as the oracle against the mini-batch variant."""
    X = emb_set.vectors
    n = X.shape[0]
    if k > n:
        raise KTooLarge(f"k={k} exceeds {n} points")
    if init_centers is None:
        rng = np.random.default_rng(seed)
        centers = X[rng.choice(n, size=k, replace=False)].copy()
    else:
        centers = np.array(init_centers, dtype=np.float64)
    assign = _nearest(X, centers)
    for _ in range(max_iter):
        for c in range(k):
            mask = assign == c
            if mask.any():
                centers[c] = X[mask].mean(axis=0)
        new_assign = _nearest(X, centers)
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
    counts = np.bincount(assign, minlength=k)
    return KMeansModel(centers, counts, _inertia(X, centers))


def ahc_ward(centers, num_clusters):
    """Ward AHC over length-normalized centers, cut to num_clusters flat
    clusters. Returns (Dendrogram, center_labels)."""
    centers = np.asarray(centers, dtype=np.float64)
    if centers.ndim != 2 or centers.shape[0] == 0:
        raise EmptyInput("no centers to cluster")
    k = centers.shape[0]
    if not 1 <= num_clusters <= k:
        raise SvkitError(f"num_clusters must be in [1, {k}]")
    norms = np.linalg.norm(centers, axis=1)
    if np.any(norms == 0):
        raise SvkitError("zero-norm center cannot be normalized")
    unit = centers / norms[:, None]
    if k == 1:
        return Dendrogram(()), np.zeros(1, dtype=np.int64)
    Z = linkage(unit, method="ward")
    merges = tuple(
        (int(row[0]), int(row[1]), float(row[2]), k + i)
        for i, row in enumerate(Z)
    )
    labels = fcluster(Z, t=num_clusters, criterion="maxclust") - 1
    return Dendrogram(merges), labels.astype(np.int64)


def assign_pseudo_labels(emb_set: EmbeddingSet, kmeans: KMeansModel,
                         center_labels) -> PseudoLabeling:
    """Utterance -> nearest k-means center -> that center's AHC cluster;
    prototypes are the per-cluster means of the normalized embeddings."""
    center_labels = np.asarray(center_labels, dtype=np.int64)
    if emb_set.dim != kmeans.centers.shape[1]:
        raise DimMismatch(
            f"embeddings are {emb_set.dim}-dim, centers "
            f"{kmeans.centers.shape[1]}-dim"
        )
    if center_labels.shape != (kmeans.k,):
        raise SvkitError("center_labels length mismatch")
    num_clusters = int(center_labels.max()) + 1

    nearest = _nearest(emb_set.vectors, kmeans.centers)
    labels = center_labels[nearest]
    assignment = {u: int(labels[i]) for i, u in enumerate(emb_set.ids)}

    norms = np.linalg.norm(emb_set.vectors, axis=1)
    if np.any(norms == 0):
        raise SvkitError("zero-norm embedding cannot be normalized")
    unit = emb_set.vectors / norms[:, None]
    prototypes = np.zeros((num_clusters, emb_set.dim))
    np.add.at(prototypes, labels, unit)
    sizes = np.bincount(labels, minlength=num_clusters)
    nonzero = sizes > 0
    prototypes[nonzero] /= sizes[nonzero, None]
    return PseudoLabeling(assignment, prototypes)


def prototype_scores(labeling: PseudoLabeling, trials):
    """Score = cosine of the two utterances' cluster prototypes."""
    from .scoring import ScoreSet

    protos = labeling.prototypes
    norms = np.linalg.norm(protos, axis=1)
    out = np.empty(len(trials))
    for i, (e, t, _) in enumerate(trials):
        a, b = labeling.assignment[e], labeling.assignment[t]
        denom = norms[a] * norms[b]
        out[i] = float(protos[a] @ protos[b] / denom) if denom > 0 else 0.0
    return ScoreSet(trials, out)


def sweep_cluster_count(emb_set: EmbeddingSet, kmeans: KMeansModel,
                        k_values, eval_trials):
    """EER of prototype-agreement scoring for each AHC cut; returns
    ([(K, eer)], best_K) with ties going to the smaller K."""
    k_values = list(k_values)
    if not k_values:
        raise SvkitError("k_values must be nonempty")
    rows = []
    for K in k_values:
        _, center_labels = ahc_ward(kmeans.centers, K)
        labeling = assign_pseudo_labels(emb_set, kmeans, center_labels)
        rows.append((K, _metrics.eer(prototype_scores(labeling, eval_trials))))
    best_k = min(rows, key=lambda r: (r[1], r[0]))[0]
    return rows, best_k


# ---------------------------------------------------------------------------
# iteration driver

def greedy_label_match(prev: dict, curr: dict):
    """Greedy maximum-overlap matching of current cluster labels onto the
    previous iteration's labels. Returns (mapping curr->prev label,
    agreement fraction)."""
    overlap = {}
    for utt_id, c in curr.items():
        p = prev[utt_id]
        overlap[(c, p)] = overlap.get((c, p), 0) + 1
    order = sorted(overlap.items(), key=lambda kv: (-kv[1], kv[0]))
    mapping = {}
    taken = set()
    for (c, p), _ in order:
        if c in mapping or p in taken:
            continue
        mapping[c] = p
        taken.add(p)
    agree = sum(
        1 for utt_id, c in curr.items() if mapping.get(c) == prev[utt_id]
    )
    return mapping, agree / len(curr)


@dataclass
class IterationRecord:
    iteration: int
    labeling: PseudoLabeling
    eer: float | None = None
    agreement_with_prev: float | None = None


def identity_refresher(emb_set, labeling):
    return emb_set


def make_prototype_pull_refresher(pull=0.2):
    """Refresher that moves each embedding `pull` of the way toward its
    cluster prototype and re-normalizes (stand-in for network retraining)."""

    def refresh(emb_set, labeling):
        vecs = emb_set.vectors.copy()
        for i, utt_id in enumerate(emb_set.ids):
            proto = labeling.prototypes[labeling.assignment[utt_id]]
            vecs[i] = (1.0 - pull) * vecs[i] + pull * proto
        vecs /= np.linalg.norm(vecs, axis=1, keepdims=True)
        return emb_set.with_vectors(vecs)

    return refresh


def iterate(emb_set: EmbeddingSet, refresher, k_centers, num_clusters,
            batch_size=10000, eval_trials=None, max_iters=7,
            eer_tol=0.001, seed=0):
    """Repeated cluster -> label -> prototype cycles with an external
    embedding refresher between them.

    Labels are permuted between iterations; `agreement_with_prev` reports
    matched-label agreement via greedy maximum-overlap matching. Stops early
    when the evaluation EER improves by less than eer_tol absolute.
    k-means is re-run from scratch each cycle with a seed derived from the
    iteration index.
    """
    id_set = set(emb_set.ids)
    records = []
    prev_assignment = None
    prev_eer = None
    current = emb_set
    for it in range(max_iters):
        it_seed = np.random.SeedSequence([seed, it]).generate_state(1)[0]
        km = minibatch_kmeans(current, k_centers, batch_size, seed=it_seed)
        _, center_labels = ahc_ward(km.centers, num_clusters)
        labeling = assign_pseudo_labels(current, km, center_labels)

        rec = IterationRecord(it, labeling)
        if prev_assignment is not None:
            _, rec.agreement_with_prev = greedy_label_match(
                prev_assignment, labeling.assignment
            )
        if eval_trials is not None:
            rec.eer = _metrics.eer(prototype_scores(labeling, eval_trials))
        records.append(rec)

        if (prev_eer is not None and rec.eer is not None
                and prev_eer - rec.eer < eer_tol):
            break
        prev_eer = rec.eer
        prev_assignment = labeling.assignment

        if it + 1 < max_iters:
            current = refresher(current, labeling)
            if set(current.ids) != id_set:
                raise IdSetChanged("refresher changed the utterance id set")
    return records


# ---------------------------------------------------------------------------
# files

def write_labels(assignment: dict, path):
    """Text `utt_id cluster_index` per line."""
    with open(path, "w") as f:
        for utt_id, c in assignment.items():
            f.write(f"{utt_id} {int(c)}\n")


def read_labels(path) -> dict:
    out = {}
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 2:
                raise SvkitError(f"{path}:{lineno}: malformed label line")
            out[parts[0]] = int(parts[1])
    return out


def write_kmeans(model: KMeansModel, path):
    """Binary, SVEB-style header: magic "SVKM", u32 version, u32 dim,
    u64 k; then k*d f32 centers, then k u64 counts."""
    k, d = model.centers.shape
    with open(path, "wb") as f:
        f.write(_KM_MAGIC)
        f.write(struct.pack("<IIQ", _KM_VERSION, d, k))
        f.write(model.centers.astype("<f4").tobytes())
        f.write(model.counts.astype("<u8").tobytes())


def read_kmeans(path) -> KMeansModel:
    with open(path, "rb") as f:
        header = f.read(20)
        if len(header) < 20:
            raise TruncatedFile(f"{path}: header truncated")
        if header[:4] != _KM_MAGIC:
            raise BadMagic(f"{path}: bad magic {header[:4]!r}")
        version, d, k = struct.unpack("<IIQ", header[4:])
        if version != _KM_VERSION:
            raise SvkitError(f"{path}: unsupported version {version}")
        centers_raw = f.read(4 * k * d)
        if len(centers_raw) < 4 * k * d:
            raise TruncatedFile(f"{path}: centers truncated")
        counts_raw = f.read(8 * k)
        if len(counts_raw) < 8 * k:
            raise TruncatedFile(f"{path}: counts truncated")
        if f.read(1):
            raise SvkitError(f"{path}: trailing bytes")
    centers = np.frombuffer(centers_raw, dtype="<f4").astype(np.float64)
    counts = np.frombuffer(counts_raw, dtype="<u8").astype(np.int64)
    model = KMeansModel(centers.reshape(k, d), counts)
    return model
