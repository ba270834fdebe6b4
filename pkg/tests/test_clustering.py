import numpy as np
import pytest

from svkit import (
    EmbeddingSet,
    TrialList,
    adjusted_rand_index,
    ahc_ward,
    assign_pseudo_labels,
    length_normalize,
    lloyd_kmeans,
    minibatch_kmeans,
    read_kmeans,
    sweep_cluster_count,
    synth_dataset,
    write_kmeans,
)
from svkit.clustering import (
    KMeansModel,
    greedy_label_match,
    identity_refresher,
    iterate,
    make_prototype_pull_refresher,
    prototype_scores,
    read_labels,
    write_labels,
)
from svkit.errors import (
    BadMagic,
    DimMismatch,
    EmptyInput,
    IdSetChanged,
    KTooLarge,
    SvkitError,
    TruncatedFile,
)


def _truth(emb):
    return {u: emb.meta[u].speaker for u in emb.ids}


def _eval_trials(emb, n_random=1500, seed=5):
    rng = np.random.default_rng(seed)
    truth = _truth(emb)
    ids = emb.ids
    e_ids, t_ids, labels = [], [], []
    for _ in range(n_random):
        a, b = rng.choice(len(ids), 2, replace=False)
        e_ids.append(ids[a])
        t_ids.append(ids[b])
        labels.append(1 if truth[ids[a]] == truth[ids[b]] else 0)
    per_spk = {}
    for u in ids:
        per_spk.setdefault(truth[u], []).append(u)
    for us in per_spk.values():
        if len(us) >= 4:
            e_ids += [us[0], us[2]]
            t_ids += [us[1], us[3]]
            labels += [1, 1]
    return TrialList(e_ids, t_ids, labels)


# ---------------------------------------------------------------------------
# mini-batch k-means

def test_kmeans_k_equals_count():
    emb = length_normalize(synth_dataset(4, 2, 8, 5.0, seed=0))
    model = minibatch_kmeans(emb, len(emb), batch_size=4, seed=1)
    assert model.inertia < 1e-12


def test_kmeans_k_too_large():
    emb = length_normalize(synth_dataset(2, 2, 8, 5.0, seed=0))
    with pytest.raises(KTooLarge):
        minibatch_kmeans(emb, 5)


def test_kmeans_two_blobs_vs_lloyd_oracle():
    rng = np.random.default_rng(2)
    a = rng.normal(0, 0.05, (100, 4)) + np.array([1, 0, 0, 0])
    b = rng.normal(0, 0.05, (100, 4)) + np.array([-1, 0, 0, 0])
    emb = EmbeddingSet([f"u{i}" for i in range(200)], np.vstack([a, b]))
    mb = minibatch_kmeans(emb, 2, batch_size=32, seed=3)
    ll = lloyd_kmeans(emb, 2, seed=4)
    assert mb.inertia <= ll.inertia * 1.01


def test_kmeans_deterministic():
    emb = length_normalize(synth_dataset(10, 10, 16, 6.0, seed=5))
    m1 = minibatch_kmeans(emb, 12, batch_size=20, seed=9)
    m2 = minibatch_kmeans(emb, 12, batch_size=20, seed=9)
    assert np.array_equal(m1.centers, m2.centers)
    assert np.array_equal(m1.counts, m2.counts)
    assert m1.inertia == m2.inertia


def test_lloyd_inertia_monotone():
    emb = length_normalize(synth_dataset(8, 12, 16, 4.0, seed=6))
    rng = np.random.default_rng(7)
    init = emb.vectors[rng.choice(len(emb), 8, replace=False)]
    inertias = []
    centers = init
    for iters in range(1, 8):
        m = lloyd_kmeans(emb, 8, max_iter=iters, init_centers=init)
        inertias.append(m.inertia)
    assert all(b <= a + 1e-12 for a, b in zip(inertias, inertias[1:]))


# ---------------------------------------------------------------------------
# AHC

def test_ahc_singletons():
    rng = np.random.default_rng(8)
    centers = rng.standard_normal((6, 4))
    _, labels = ahc_ward(centers, 6)
    assert sorted(labels.tolist()) == list(range(6))


def test_ahc_angle_pairs_merge_first():
    angles = np.deg2rad([0.0, 5.0, 85.0, 90.0])
    centers = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    dend, labels = ahc_ward(centers, 2)
    first_two = {frozenset(m[:2]) for m in dend.merges[:2]}
    assert first_two == {frozenset({0, 1}), frozenset({2, 3})}
    assert labels[0] == labels[1] and labels[2] == labels[3]
    assert labels[0] != labels[2]


def test_ahc_heights_nondecreasing():
    rng = np.random.default_rng(9)
    centers = rng.standard_normal((40, 8))
    dend, _ = ahc_ward(centers, 5)
    h = dend.heights()
    assert np.all(np.diff(h) >= -1e-12)


def test_ahc_cut_nesting():
    # cutting at K then K-1 merges exactly one pair of flat clusters
    rng = np.random.default_rng(10)
    centers = rng.standard_normal((30, 6))
    for K in (10, 7, 3):
        _, la = ahc_ward(centers, K)
        _, lb = ahc_ward(centers, K - 1)
        groups_a = {}
        for i, lab in enumerate(la):
            groups_a.setdefault(lab, set()).add(i)
        groups_b = {}
        for i, lab in enumerate(lb):
            groups_b.setdefault(lab, set()).add(i)
        sets_a = set(map(frozenset, groups_a.values()))
        sets_b = set(map(frozenset, groups_b.values()))
        merged = sets_b - sets_a
        vanished = sets_a - sets_b
        assert len(merged) == 1
        assert len(vanished) == 2
        assert next(iter(merged)) == frozenset().union(*vanished)


def test_ahc_normalizes_centers():
    # scaling a center must not change the clustering (cosine geometry)
    rng = np.random.default_rng(11)
    centers = rng.standard_normal((12, 4))
    scaled = centers * rng.uniform(0.5, 3.0, (12, 1))
    _, la = ahc_ward(centers, 4)
    _, lb = ahc_ward(scaled, 4)
    assert adjusted_rand_index(
        {str(i): int(v) for i, v in enumerate(la)},
        {str(i): int(v) for i, v in enumerate(lb)},
    ) == 1.0


def test_ahc_validation():
    with pytest.raises(EmptyInput):
        ahc_ward(np.empty((0, 3)), 1)
    with pytest.raises(SvkitError):
        ahc_ward(np.eye(3), 4)


# ---------------------------------------------------------------------------
# pseudo-labels

def test_assign_exact_center_and_singleton_prototype():
    centers = np.array([[1.0, 0.0], [0.0, 1.0]])
    km = KMeansModel(centers, [1, 1])
    emb = EmbeddingSet(["a", "b"], [[1.0, 0.0], [0.0, 2.0]])
    lab = assign_pseudo_labels(emb, km, [0, 1])
    assert lab.assignment == {"a": 0, "b": 1}
    # prototype of a singleton cluster is that normalized embedding
    assert np.allclose(lab.prototypes[1], [0.0, 1.0])


def test_assign_matches_exhaustive_oracle():
    rng = np.random.default_rng(12)
    pts = rng.standard_normal((8, 3))
    pts /= np.linalg.norm(pts, axis=1, keepdims=True)
    emb = EmbeddingSet([f"u{i}" for i in range(8)], pts)
    centers = rng.standard_normal((4, 3))
    km = KMeansModel(centers, [2, 2, 2, 2])
    center_labels = np.array([0, 1, 0, 1])
    lab = assign_pseudo_labels(emb, km, center_labels)
    for i, u in enumerate(emb.ids):
        dists = [((pts[i] - c) ** 2).sum() for c in centers]
        want = center_labels[int(np.argmin(dists))]
        assert lab.assignment[u] == want


def test_assign_order_invariant():
    emb = length_normalize(synth_dataset(5, 6, 8, 6.0, seed=13))
    km = minibatch_kmeans(emb, 10, batch_size=10, seed=14)
    _, cl = ahc_ward(km.centers, 5)
    lab = assign_pseudo_labels(emb, km, cl)
    perm = np.random.default_rng(15).permutation(len(emb))
    shuffled = EmbeddingSet(
        [emb.ids[i] for i in perm], emb.vectors[perm], emb.meta)
    lab2 = assign_pseudo_labels(shuffled, km, cl)
    assert lab.assignment == lab2.assignment


def test_assign_dim_mismatch():
    km = KMeansModel(np.eye(3), [1, 1, 1])
    emb = EmbeddingSet(["a"], [[1.0, 0.0]])
    with pytest.raises(DimMismatch):
        assign_pseudo_labels(emb, km, [0, 1, 2])


def test_relabeling_permutes_prototypes():
    emb = length_normalize(synth_dataset(6, 5, 8, 8.0, seed=16))
    km = minibatch_kmeans(emb, 12, batch_size=10, seed=17)
    _, cl = ahc_ward(km.centers, 6)
    lab = assign_pseudo_labels(emb, km, cl)
    perm = np.array([3, 0, 5, 1, 4, 2])
    lab_p = assign_pseudo_labels(emb, km, perm[cl])
    assert adjusted_rand_index(lab.assignment, lab_p.assignment) == 1.0
    for c in range(6):
        assert np.array_equal(lab.prototypes[c], lab_p.prototypes[perm[c]])


# ---------------------------------------------------------------------------
# sweep and iteration

def test_sweep_single_k():
    emb = length_normalize(synth_dataset(10, 8, 16, 8.0, seed=18))
    km = minibatch_kmeans(emb, 40, batch_size=20, seed=19)
    trials = _eval_trials(emb, 300, seed=20)
    rows, best = sweep_cluster_count(emb, km, [10], trials)
    assert len(rows) == 1 and best == 10


def test_sweep_true_k_wins():
    emb = length_normalize(synth_dataset(20, 10, 32, 10.0, seed=21))
    km = minibatch_kmeans(emb, 60, batch_size=50, seed=22)
    trials = _eval_trials(emb, 800, seed=23)
    rows, best = sweep_cluster_count(emb, km, [5, 20, 50], trials)
    eers = dict(rows)
    assert best == 20
    assert eers[5] > eers[20]


def test_greedy_label_match_permutation():
    prev = {"a": 0, "b": 0, "c": 1, "d": 2}
    curr = {"a": 7, "b": 7, "c": 5, "d": 6}
    mapping, agree = greedy_label_match(prev, curr)
    assert agree == 1.0
    assert mapping == {7: 0, 5: 1, 6: 2}


def test_iterate_identity_fixed_point():
    emb = length_normalize(synth_dataset(12, 8, 16, 50.0, seed=24))
    recs = iterate(emb, identity_refresher, 24, 12, batch_size=24,
                   max_iters=3, seed=25)
    assert len(recs) == 3
    assert recs[1].agreement_with_prev == 1.0
    assert recs[2].agreement_with_prev == 1.0


def test_iterate_prototype_pull_ari_nondecreasing():
    emb = length_normalize(synth_dataset(15, 10, 24, 8.0, seed=26))
    truth = _truth(emb)
    recs = iterate(emb, make_prototype_pull_refresher(0.2), 45, 15,
                   batch_size=30, max_iters=3, seed=27)
    aris = [adjusted_rand_index(r.labeling.assignment, truth) for r in recs]
    assert all(b >= a - 1e-12 for a, b in zip(aris, aris[1:]))


def test_iterate_id_set_changed():
    emb = length_normalize(synth_dataset(4, 4, 8, 8.0, seed=28))

    def bad_refresher(s, labeling):
        return EmbeddingSet([f"x{i}" for i in range(len(s))], s.vectors)

    with pytest.raises(IdSetChanged):
        iterate(emb, bad_refresher, 8, 4, batch_size=8, max_iters=2, seed=29)


def test_iterate_early_stop_on_eer():
    emb = length_normalize(synth_dataset(10, 8, 16, 20.0, seed=30))
    trials = _eval_trials(emb, 300, seed=31)
    recs = iterate(emb, identity_refresher, 20, 10, batch_size=20,
                   eval_trials=trials, max_iters=5, seed=32)
    # identity refresher cannot improve the metric, so the driver stops early
    assert len(recs) <= 2


def test_prototype_scores_range():
    emb = length_normalize(synth_dataset(6, 6, 8, 6.0, seed=33))
    km = minibatch_kmeans(emb, 12, batch_size=12, seed=34)
    _, cl = ahc_ward(km.centers, 6)
    lab = assign_pseudo_labels(emb, km, cl)
    trials = _eval_trials(emb, 100, seed=35)
    s = prototype_scores(lab, trials)
    assert np.all(np.abs(s.scores) <= 1.0 + 1e-12)


# ---------------------------------------------------------------------------
# files

def test_labels_file_round_trip(tmp_path):
    labs = {"u1": 0, "u2": 5, "weird id": 3}
    path = tmp_path / "labels.txt"
    # ids with spaces are not representable in the labels format
    del labs["weird id"]
    write_labels(labs, path)
    assert read_labels(path) == labs


def test_kmeans_file_round_trip(tmp_path):
    rng = np.random.default_rng(36)
    centers = rng.standard_normal((5, 3)).astype(np.float32)
    model = KMeansModel(centers.astype(np.float64), [3, 1, 4, 1, 5])
    p1, p2 = tmp_path / "a.svkm", tmp_path / "b.svkm"
    write_kmeans(model, p1)
    back = read_kmeans(p1)
    write_kmeans(back, p2)
    assert p1.read_bytes() == p2.read_bytes()
    assert np.array_equal(back.centers, model.centers)
    assert np.array_equal(back.counts, model.counts)


def test_kmeans_file_errors(tmp_path):
    bad = tmp_path / "bad.svkm"
    bad.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(BadMagic):
        read_kmeans(bad)
    good = tmp_path / "g.svkm"
    write_kmeans(KMeansModel(np.eye(2), [1, 1]), good)
    trunc = tmp_path / "t.svkm"
    trunc.write_bytes(good.read_bytes()[:-4])
    with pytest.raises(TruncatedFile):
        read_kmeans(trunc)
