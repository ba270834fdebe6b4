"""Pseudo-label generation demo.

Clusters an unlabeled synthetic corpus with mini-batch k-means, groups the
centers with Ward AHC, sweeps the cluster count, and runs the iterative
cluster -> label -> refresh loop, reporting agreement with the hidden
ground-truth speakers.

Run:  python3 demos/pseudo_labeling.py
"""

import numpy as np

from svkit import (
    TrialList,
    adjusted_rand_index,
    ahc_ward,
    assign_pseudo_labels,
    iterate,
    length_normalize,
    make_prototype_pull_refresher,
    minibatch_kmeans,
    sweep_cluster_count,
    synth_dataset,
)

NUM_SPEAKERS = 100


def truth_labels(emb_set):
    return {u: u.split("_")[0] for u in emb_set.ids}


def eval_trials(emb_set, n_pairs=2000, seed=5):
    rng = np.random.default_rng(seed)
    ids = list(emb_set.ids)
    truth = truth_labels(emb_set)
    enroll, test, labels = [], [], []
    for _ in range(n_pairs):
        i, j = rng.integers(0, len(ids), size=2)
        enroll.append(ids[i])
        test.append(ids[j])
        labels.append(int(truth[ids[i]] == truth[ids[j]]))
    # make sure both classes appear
    enroll += [ids[0], ids[0]]
    test += [ids[1], ids[-1]]
    labels += [1, 0]
    return TrialList(enroll, test, labels)


def main():
    print("== 1. unlabeled corpus ==")
    data = length_normalize(
        synth_dataset(NUM_SPEAKERS, 20, 64, concentration=10.0, seed=1)
    )
    truth = truth_labels(data)
    print(f"{len(data)} embeddings (speaker labels hidden from clustering)")

    print("\n== 2. over-cluster with mini-batch k-means ==")
    km = minibatch_kmeans(data, k=1000, batch_size=500, seed=2)
    print(f"{km.k} centers, inertia {km.inertia:.1f}")

    print("\n== 3. Ward AHC down to the target speaker count ==")
    _, center_labels = ahc_ward(km.centers, NUM_SPEAKERS)
    labeling = assign_pseudo_labels(data, km, center_labels)
    ari = adjusted_rand_index(labeling.assignment, truth)
    print(f"cut at K={NUM_SPEAKERS}: ARI vs truth = {ari:.3f}")

    print("\n== 4. sweep the cluster count ==")
    trials = eval_trials(data)
    rows, best_k = sweep_cluster_count(
        data, km, [NUM_SPEAKERS // 3, NUM_SPEAKERS, NUM_SPEAKERS * 3],
        trials)
    for K, e in rows:
        print(f"  K={K:4d}  prototype-agreement EER {e * 100:6.2f}%")
    print(f"selected K={best_k} (truth: {NUM_SPEAKERS})")

    print("\n== 5. iterative refinement ==")
    # the prototype-pull refresher stands in for retraining the embedding
    # network on the pseudo-labels
    records = iterate(data, make_prototype_pull_refresher(0.2),
                      k_centers=1000, num_clusters=NUM_SPEAKERS,
                      batch_size=500, max_iters=3, seed=7)
    for rec in records:
        ari = adjusted_rand_index(rec.labeling.assignment, truth)
        agree = ("-" if rec.agreement_with_prev is None
                 else f"{rec.agreement_with_prev:.3f}")
        print(f"  iter {rec.iteration}: ARI {ari:.3f}, "
              f"agreement with previous {agree}")


if __name__ == "__main__":
    main()
