"""Post-processing of recorded draws.

Everything here is a pure function of the recorded allocation matrix,
pointwise log-likelihood matrix, and parameter traces: co-clustering
frequencies, the least-squares point partition, Rand-index scoring,
cluster-count/singleton summaries, WAIC/LPML model scores, and the
per-draw series of mean pairwise distances between occupied component
curves (the separation diagnostic the repulsion acts on).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from curvemix.repulsion import RepulsionConfig, curve_distance

__all__ = [
    "PartitionSummary",
    "coclustering",
    "dahl_partition",
    "rand_index",
    "cluster_count_series",
    "singleton_count_series",
    "waic",
    "lpml",
    "pairwise_theta_distances",
    "summarize_partition",
]


def _alloc_matrix(draws):
    """Accept a PosteriorDraws-like object (with .z) or a bare matrix."""
    Z = np.asarray(draws.z if hasattr(draws, "z") else draws)
    if Z.ndim != 2:
        raise ValueError("allocations must form an (n_kept, m) matrix")
    if Z.shape[0] < 1:
        raise ValueError("need at least one recorded draw")
    return Z


def coclustering(draws):
    """m x m matrix of pairwise same-component frequencies across draws.

    Entry (i, k) is the fraction of recorded draws in which individuals i
    and k share a component; the diagonal is identically 1 and the matrix
    is symmetric. Invariant to relabeling components within any draw.
    """
    Z = _alloc_matrix(draws)
    return (Z[:, :, None] == Z[:, None, :]).mean(axis=0)


def dahl_partition(draws):
    """The recorded allocation closest to the co-clustering frequencies.

    Returns the recorded draw minimizing the squared deviation between its
    own co-membership indicator matrix and the co-clustering matrix; ties
    break toward the earliest draw. The result is always a partition the
    chain actually visited.
    """
    Z = _alloc_matrix(draws)
    C = coclustering(Z)
    delta = (Z[:, :, None] == Z[:, None, :]).astype(float)
    scores = ((delta - C[None]) ** 2).sum(axis=(1, 2))
    return Z[int(np.argmin(scores))].copy()


def rand_index(partition_a, partition_b):
    """Fraction of individual pairs on which two partitions agree.

    A pair agrees when the two partitions both put it in one group or both
    split it. Symmetric; equals 1 exactly when the partitions coincide as
    set partitions (labels are irrelevant).
    """
    a = np.asarray(partition_a).ravel()
    b = np.asarray(partition_b).ravel()
    if a.shape != b.shape:
        raise ValueError(
            f"partition lengths differ: {a.shape[0]} vs {b.shape[0]}"
        )
    m = a.shape[0]
    if m < 2:
        raise ValueError("need at least two individuals to compare pairs")
    iu = np.triu_indices(m, k=1)
    same_a = (a[:, None] == a[None, :])[iu]
    same_b = (b[:, None] == b[None, :])[iu]
    return float((same_a == same_b).mean())


def cluster_count_series(draws):
    """Number of occupied components in each recorded draw."""
    Z = _alloc_matrix(draws)
    return np.array([np.unique(row).size for row in Z])


def singleton_count_series(draws):
    """Number of single-member components in each recorded draw."""
    Z = _alloc_matrix(draws)
    out = np.empty(Z.shape[0], dtype=int)
    for r, row in enumerate(Z):
        _, counts = np.unique(row, return_counts=True)
        out[r] = int((counts == 1).sum())
    return out


def _loglik_matrix(loglik):
    ll = np.asarray(loglik, dtype=float)
    if ll.ndim != 2:
        raise ValueError("pointwise log-likelihoods must form an "
                         "(n_kept, m) matrix")
    if ll.shape[0] < 2:
        raise ValueError("need at least two draws for variance-based scores")
    return ll


def waic(loglik):
    """Widely applicable information criterion from pointwise draws.

    -2 * (lppd - p), where lppd sums the log of each individual's
    draw-averaged likelihood and the penalty p sums the per-individual
    variances of the log-likelihood over draws. Lower is better.
    """
    ll = _loglik_matrix(loglik)
    R = ll.shape[0]
    lppd = float((logsumexp(ll, axis=0) - np.log(R)).sum())
    p_eff = float(ll.var(axis=0, ddof=1).sum())
    return -2.0 * (lppd - p_eff)


def lpml(loglik):
    """Log pseudo marginal likelihood: sum of log conditional predictive
    ordinates, each the harmonic mean of one individual's per-draw
    likelihoods. Higher is better."""
    ll = _loglik_matrix(loglik)
    R = ll.shape[0]
    log_cpo = -(logsumexp(-ll, axis=0) - np.log(R))
    return float(log_cpo.sum())


def pairwise_theta_distances(draws, Hdist, q=2.0):
    """Per-draw, per-dimension mean distance between occupied components.

    For each recorded draw, averages the curve distance (discretized L_q
    norm on the centered grid `Hdist`) over all pairs of components that
    have at least one member. Draws with fewer than two occupied
    components yield NaN in every dimension (no pairs to average).
    Returns an (n_kept, D) array ready to emit as a draw-indexed series.
    """
    Z = _alloc_matrix(draws)
    theta = draws.theta
    n_kept = Z.shape[0]
    if len(theta) != n_kept:
        raise ValueError("theta trace and allocation draws disagree on "
                         "the number of recorded iterations")
    D = theta[0].shape[1]
    cfg = RepulsionConfig(0.0, np.asarray(Hdist, dtype=float), q=q)
    out = np.full((n_kept, D), np.nan)
    for r in range(n_kept):
        occ = np.unique(Z[r])
        if occ.size < 2:
            continue
        th = theta[r]
        for d in range(D):
            dists = [
                curve_distance(th[occ[a], d], th[occ[b], d], cfg)
                for a in range(occ.size)
                for b in range(a + 1, occ.size)
            ]
            out[r, d] = float(np.mean(dists))
    return out


@dataclass
class PartitionSummary:
    """Partition-level posterior summary: co-clustering frequencies, the
    least-squares point partition, and the mean occupied-component and
    singleton counts, plus the Rand index against a reference partition
    when one is supplied."""

    coclustering: np.ndarray
    dahl_partition: np.ndarray
    n_clusters_mean: float
    n_singletons_mean: float
    rand_vs_truth: float | None = None


def summarize_partition(draws, truth=None):
    """Bundle the partition summaries of one chain's recorded draws."""
    Z = _alloc_matrix(draws)
    C = coclustering(Z)
    point = dahl_partition(Z)
    rand = None if truth is None else rand_index(point, truth)
    return PartitionSummary(
        coclustering=C,
        dahl_partition=point,
        n_clusters_mean=float(cluster_count_series(Z).mean()),
        n_singletons_mean=float(singleton_count_series(Z).mean()),
        rand_vs_truth=rand,
    )
