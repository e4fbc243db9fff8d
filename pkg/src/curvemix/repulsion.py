"""Curve distance and the repulsive prior factor, on the log scale.

The repulsive factor for one response dimension penalizes proximity between
all pairs of component mean curves:

    log h(Theta_d) = -phi_d * sum_{l<j} dist(theta_jd, theta_ld)^{-power}

where dist is the discretized L_q distance between the *centered* curves, so
two components differing only by a vertical shift still repel. Distances are
floored at a tiny epsilon: the prior density vanishes at coincident curves,
and the resulting huge penalty makes any Metropolis proposal there rejected
rather than raising a division error.

`DistanceCache` keeps component curves and all pairwise distances current so
the Metropolis theta-updates and the split-merge move can evaluate repulsion
changes in O(J) per proposal instead of O(J^2 n).
"""

from dataclasses import dataclass

import numpy as np

EPS_FLOOR = 1e-12


@dataclass
class RepulsionConfig:
    phi: np.ndarray          # per-dimension strength, >= 0
    Hdist: np.ndarray        # centered n x p distance design
    nu: float = 2.0          # decay power on inverse distance
    q: float = 2.0           # norm exponent of the curve distance
    epsilon_floor: float = EPS_FLOOR

    def __post_init__(self):
        self.phi = np.atleast_1d(np.asarray(self.phi, dtype=float))
        self.Hdist = np.asarray(self.Hdist, dtype=float)

    def strength(self, dim=0):
        return self.phi[dim] if self.phi.size > 1 else float(self.phi[0])


def curve_distance(theta_a, theta_b, cfg: RepulsionConfig):
    """Discretized L_q distance between the centered curves of two components."""
    diff = cfg.Hdist @ (np.asarray(theta_a) - np.asarray(theta_b))
    return float(np.mean(np.abs(diff) ** cfg.q) ** (1.0 / cfg.q))


def _dist_from_curves(ca, cb, q):
    if q == 2.0:
        d = ca - cb
        return float(np.sqrt((d @ d) / d.size))
    return float(np.mean(np.abs(ca - cb) ** q) ** (1.0 / q))


def _pair_penalty(dist, nu, floor):
    return max(dist, floor) ** (-nu)


def log_repulsive_factor(Theta_d, cfg: RepulsionConfig, dim=0):
    """log h over all component pairs of one dimension; 0 when phi = 0."""
    phi = cfg.strength(dim)
    if phi == 0.0:
        return 0.0
    Theta_d = np.asarray(Theta_d)
    curves = Theta_d @ cfg.Hdist.T
    total = 0.0
    J = len(Theta_d)
    for j in range(1, J):
        for l in range(j):
            d = _dist_from_curves(curves[j], curves[l], cfg.q)
            total += _pair_penalty(d, cfg.nu, cfg.epsilon_floor)
    return -phi * total


def log_repulsion_delta(Theta_d, changed_index, new_theta, cfg: RepulsionConfig, dim=0):
    """log h(Theta_d with row changed_index replaced) - log h(Theta_d).

    Only the J - 1 pairs involving the changed component contribute.
    """
    phi = cfg.strength(dim)
    if phi == 0.0:
        return 0.0
    Theta_d = np.asarray(Theta_d)
    curves = Theta_d @ cfg.Hdist.T
    new_curve = cfg.Hdist @ np.asarray(new_theta)
    delta = 0.0
    for l in range(len(Theta_d)):
        if l == changed_index:
            continue
        d_old = _dist_from_curves(curves[changed_index], curves[l], cfg.q)
        d_new = _dist_from_curves(new_curve, curves[l], cfg.q)
        delta += _pair_penalty(d_new, cfg.nu, cfg.epsilon_floor) - _pair_penalty(
            d_old, cfg.nu, cfg.epsilon_floor
        )
    return -phi * delta


# convenience wrapper used by the joint log-prior
def log_repulsion(Theta_d, Hdist, phi, nu=2.0, q=2.0):
    cfg = RepulsionConfig(phi=np.array([phi]), Hdist=Hdist, nu=nu, q=q)
    return log_repulsive_factor(Theta_d, cfg)


class DistanceCache:
    """Pairwise component-curve distances, kept current across theta updates.

    Stores curves (J, D, n) on the distance grid and distances (D, J, J).
    `set_component` invalidates and refreshes exactly the row/column of the
    touched component.
    """

    def __init__(self, theta, cfg: RepulsionConfig):
        self.cfg = cfg
        theta = np.asarray(theta)  # (J, D, p)
        self.J, self.D = theta.shape[0], theta.shape[1]
        self.curves = np.einsum("jdp,np->jdn", theta, cfg.Hdist)
        self.dist = np.zeros((self.D, self.J, self.J))
        for d in range(self.D):
            for j in range(1, self.J):
                for l in range(j):
                    v = _dist_from_curves(self.curves[j, d], self.curves[l, d], cfg.q)
                    self.dist[d, j, l] = self.dist[d, l, j] = v

    def component_curve(self, theta_jd):
        return self.cfg.Hdist @ theta_jd

    def set_component(self, j, theta_j):
        """Refresh curves and distance row/column of component j."""
        self.curves[j] = theta_j @ self.cfg.Hdist.T
        for d in range(self.D):
            for l in range(self.J):
                if l == j:
                    continue
                v = _dist_from_curves(self.curves[j, d], self.curves[l, d], self.cfg.q)
                self.dist[d, j, l] = self.dist[d, l, j] = v

    def log_h(self, dim):
        phi = self.cfg.strength(dim)
        if phi == 0.0:
            return 0.0
        iu = np.triu_indices(self.J, k=1)
        d = np.maximum(self.dist[dim][iu], self.cfg.epsilon_floor)
        return -phi * float((d ** (-self.cfg.nu)).sum())

    def delta_component(self, j, new_theta_j):
        """Per-dimension change in log h if component j moved to new_theta_j."""
        cfg = self.cfg
        new_curves = new_theta_j @ cfg.Hdist.T  # (D, n)
        out = np.zeros(self.D)
        for d in range(self.D):
            phi = cfg.strength(d)
            if phi == 0.0:
                continue
            acc = 0.0
            for l in range(self.J):
                if l == j:
                    continue
                d_new = _dist_from_curves(new_curves[d], self.curves[l, d], cfg.q)
                acc += _pair_penalty(d_new, cfg.nu, cfg.epsilon_floor) - _pair_penalty(
                    self.dist[d, j, l], cfg.nu, cfg.epsilon_floor
                )
            out[d] = -phi * acc
        return out

    def log_pairs_involving(self, comps, theta_override=None):
        """Per-dimension sum of -phi * penalty over pairs touching `comps`.

        `theta_override` maps component index -> (D, p) replacement
        coefficients; distances involving overridden components are computed
        fresh. Used by the split-merge ratio, where exactly the pairs
        involving the two working components change.
        """
        cfg = self.cfg
        comps = sorted(set(comps))
        over = {}
        if theta_override:
            for jj, th in theta_override.items():
                over[jj] = th @ cfg.Hdist.T
        out = np.zeros(self.D)
        comp_set = set(comps)
        for d in range(self.D):
            phi = cfg.strength(d)
            if phi == 0.0:
                continue
            acc = 0.0
            for j in comps:
                cj = over[j][d] if j in over else self.curves[j, d]
                for l in range(self.J):
                    if l == j or (l in comp_set and l < j):
                        continue  # count each involved pair once
                    cl = over[l][d] if l in over else self.curves[l, d]
                    dist = _dist_from_curves(cj, cl, cfg.q)
                    acc += _pair_penalty(dist, cfg.nu, cfg.epsilon_floor)
            out[d] = -phi * acc
        return out
