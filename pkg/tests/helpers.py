"""Shared constructions for the test modules."""

import numpy as np
from scipy.linalg import subspace_angles
from scipy.optimize import linear_sum_assignment


def best_match_accuracy(labels, truth) -> float:
    """Fraction correct under the best one-to-one relabeling of clusters."""
    labels, truth = np.asarray(labels), np.asarray(truth)
    k = int(max(labels.max(), truth.max())) + 1
    counts = np.zeros((k, k))
    np.add.at(counts, (labels, truth), 1)
    rows, cols = linear_sum_assignment(-counts)
    return counts[rows, cols].sum() / len(labels)


def union_of_subspaces(s, seed, n=50, ambient=40, dim=4, sigma=0.01, min_angle_deg=60.0):
    """Unit-norm columns drawn sequentially from ``s`` random subspaces.

    Bases are redrawn until every pair of subspaces has all principal angles
    at or above ``min_angle_deg``.
    """
    rng = np.random.default_rng(seed)
    bases = []
    while len(bases) < s:
        B, _ = np.linalg.qr(rng.normal(size=(ambient, dim)))
        if all(np.degrees(subspace_angles(B, C)).min() >= min_angle_deg for C in bases):
            bases.append(B)
    X = np.hstack([B @ rng.normal(size=(dim, n)) for B in bases])
    X = X + sigma * rng.normal(size=X.shape)
    return X / np.linalg.norm(X, axis=0), np.repeat(np.arange(s), n)
