"""Product-partition baseline: cohesion, covariate similarity, allocation.

The partition prior is Pr(rho) proportional to prod_j c(S_j) g(X_j) with
cohesion c(S) = mass * (|S| - 1)! and similarity g the product over
covariates of marginal densities: an integrated normal-normal for
(standardized) continuous covariates and a Dirichlet-multinomial for
categorical ones. No repulsion, and the number of clusters is whatever the
data support.

The allocation sweep reallocates one individual at a time. Weights over
existing clusters are the marginal-likelihood factor times the
cohesion-times-similarity ratio of the cluster with and without the
individual; a candidate new cluster carries prior-drawn curve parameters and
weight mass * g({x_i}) times its marginal-likelihood factor. When the
individual currently sits alone, the candidate inherits its own cluster's
parameters instead of a fresh draw, which is what makes the sweep leave the
partition posterior invariant.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln


@dataclass
class CohesionConfig:
    mass: float = 1.0

    def __post_init__(self):
        if self.mass <= 0:
            raise ValueError("cohesion mass must be positive")


@dataclass
class SimilarityConfig:
    """Covariate layout for the similarity product.

    cont: (m, n_cont) standardized continuous values, or None.
    cat: (m, n_cat) integer-coded categorical values, or None.
    cat_conc: Dirichlet concentration per category (same for every level).
    """

    cont: np.ndarray | None = None
    cat: np.ndarray | None = None
    cat_conc: float = 1.0
    cat_levels: list = field(default_factory=list)

    def __post_init__(self):
        if self.cat_conc <= 0:
            raise ValueError("categorical similarity concentrations must be positive")
        if self.cat is not None and not self.cat_levels:
            self.cat_levels = [np.unique(self.cat[:, k]) for k in range(self.cat.shape[1])]

    @property
    def active(self):
        return self.cont is not None or self.cat is not None


def log_cohesion(n_j, cfg: CohesionConfig):
    """log of mass * (n_j - 1)!."""
    if n_j < 1:
        raise ValueError("cohesion is defined for nonempty clusters")
    return math.log(cfg.mass) + gammaln(n_j)


def log_similarity_continuous(xvals):
    """Integrated N(x | m, 1) N(m | 0, 10) marginal of one cluster's values."""
    x = np.asarray(xvals, dtype=float)
    n = x.size
    s_sq = 1.0 / (n + 0.1)
    return (
        0.5 * math.log(s_sq)
        - 0.5 * math.log(10.0)
        - 0.5 * n * math.log(2.0 * math.pi)
        - 0.5 * (float((x ** 2).sum()) - s_sq * float(x.sum()) ** 2)
    )


def log_similarity_categorical(counts, conc):
    """Dirichlet-multinomial marginal from per-category counts."""
    counts = np.asarray(counts, dtype=float)
    if np.any(counts < 0) or counts.sum() < 1:
        raise ValueError("need nonnegative counts with at least one observation")
    conc = np.broadcast_to(np.asarray(conc, dtype=float), counts.shape)
    return float(
        gammaln(conc.sum())
        - gammaln(conc).sum()
        + gammaln(counts + conc).sum()
        - gammaln(counts.sum() + conc.sum())
    )


def log_similarity_cluster(members, sim: SimilarityConfig):
    """Similarity of one cluster: product over all covariates."""
    if not sim.active or len(members) == 0:
        return 0.0
    total = 0.0
    if sim.cont is not None:
        for k in range(sim.cont.shape[1]):
            total += log_similarity_continuous(sim.cont[members, k])
    if sim.cat is not None:
        for k in range(sim.cat.shape[1]):
            levels = sim.cat_levels[k]
            vals = sim.cat[members, k]
            counts = np.array([(vals == lev).sum() for lev in levels])
            total += log_similarity_categorical(counts, sim.cat_conc)
    return total


def log_partition_prior(z, data, hp):
    """Unnormalized log prior of the partition induced by z."""
    cohesion = CohesionConfig(mass=hp.cohesion_mass)
    sim = similarity_from_data(data, hp)
    total = 0.0
    for j in np.unique(z):
        members = np.flatnonzero(z == j)
        total += log_cohesion(len(members), cohesion) + log_similarity_cluster(members, sim)
    return total


def similarity_from_data(data, hp):
    return SimilarityConfig(
        cont=None if data.cov_cont is None else data.cont_standardized(),
        cat=data.cov_cat,
        cat_conc=hp.cat_sim_conc,
    )


def _log_weight_existing(i, members_wo_i, sim):
    """log of the cohesion x similarity ratio for adding i to a cluster."""
    n = len(members_wo_i)
    lw = math.log(n)  # cohesion ratio: mass * n! / (mass * (n-1)!)
    if sim.active:
        lw += log_similarity_cluster(members_wo_i + [i], sim) - log_similarity_cluster(
            members_wo_i, sim
        )
    return lw


def _log_weight_new(i, cohesion, sim):
    lw = math.log(cohesion.mass)
    if sim.active:
        lw += log_similarity_cluster([i], sim)
    return lw


def step_allocations_ppmx(state, data, hp, rng, ml_fn, candidate_fn):
    """One reallocation sweep over individuals (in index order).

    ml_fn(i, theta, lam2) -> marginal log-likelihood factor of individual i
        under a component with curve coefficients theta (D, p) and spreads
        lam2 (D,).
    candidate_fn() -> (theta, tau2, lam2) fresh prior draw for a candidate
        cluster. Called once up front and again whenever a candidate is
        adopted; singletons reuse their own parameters instead.

    Mutates state in place (z relabeled compactly; component arrays resized).
    """
    cohesion = CohesionConfig(mass=hp.cohesion_mass)
    sim = similarity_from_data(data, hp)
    members = {j: list(np.flatnonzero(state.z == j)) for j in range(state.n_components)}
    cand = candidate_fn()

    for i in range(data.m):
        zi = int(state.z[i])
        members[zi].remove(i)
        singleton = len(members[zi]) == 0

        labels = [j for j in sorted(members) if members[j]]
        logw = np.empty(len(labels) + 1)
        for idx, j in enumerate(labels):
            logw[idx] = _log_weight_existing(i, members[j], sim) + ml_fn(
                i, state.theta[j], state.lam2[j]
            )
        if singleton:
            new_theta, new_tau2, new_lam2 = state.theta[zi], state.tau2[zi], state.lam2[zi]
        else:
            new_theta, new_tau2, new_lam2 = cand
        logw[-1] = _log_weight_new(i, cohesion, sim) + ml_fn(i, new_theta, new_lam2)

        logw -= logw.max()
        w = np.exp(logw)
        pick = int(np.searchsorted(np.cumsum(w), rng.random() * w.sum()))

        if pick == len(labels):  # new / retained-singleton cluster
            if singleton:
                members[zi].append(i)  # unchanged
            else:
                j_new = state.n_components
                state.theta = np.concatenate([state.theta, new_theta[None]], axis=0)
                state.tau2 = np.concatenate([state.tau2, new_tau2[None]], axis=0)
                state.lam2 = np.concatenate([state.lam2, new_lam2[None]], axis=0)
                state.z[i] = j_new
                members[j_new] = [i]
                cand = candidate_fn()
        else:
            j_to = labels[pick]
            state.z[i] = j_to
            members[j_to].append(i)
            if singleton:
                _drop_component(state, members, zi)
    return state


def _drop_component(state, members, j_gone):
    """Remove an emptied component and renumber compactly."""
    keep = [j for j in range(state.n_components) if j != j_gone]
    state.theta = state.theta[keep]
    state.tau2 = state.tau2[keep]
    state.lam2 = state.lam2[keep]
    state.z = np.where(state.z > j_gone, state.z - 1, state.z)
    del members[j_gone]
    for j in sorted(list(members)):
        if j > j_gone:
            members[j - 1] = members.pop(j)
