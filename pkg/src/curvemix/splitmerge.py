"""Split-merge move on component allocations with exact proposal densities.

One move chooses two anchor individuals and either splits their shared
component or merges their two components. Proposals are refined by a fixed
number of restricted Gibbs scans over the individuals in the affected
components (the launch states), and the Metropolis-Hastings log-ratio adds

* the reverse minus forward proposal log-densities: the forward density is
  accumulated over one final sampling scan, the reverse one by rerunning the
  opposite move's final scan in evaluation mode at the current state's values,
* the prior ratio localized to the affected individuals and components
  (allocation weights, component-parameter priors, repulsion pairs touching
  the two working components), and
* the coefficient-likelihood ratio over the affected individuals.

Mixture modes keep the component count fixed: a split re-occupies the lowest
empty component, and a merge redraws the vacated component's parameters from
the prior (the redraw density and the matching prior terms are both kept
explicit rather than cancelled analytically, so the bookkeeping stays
testable term by term). Product-partition modes create and delete components
instead, use cohesion x similarity allocation weights, and carry no repulsion
or vacated-component terms.

`frozen_partition_move` is a reduced variant that holds every component
parameter fixed and moves allocations only; it is draw-for-draw equivalent to
`propose_split_merge(..., update_params=False)` and cheap enough for long
exact-kernel validation runs.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg.lapack import dpotrs as _dpotrs, dtrtrs as _dtrtrs

from curvemix import ppmx as ppmx_mod
from curvemix import randdist as rd
from curvemix import repulsion as rep
from curvemix import weights as weights_mod
from curvemix.model import _gauss_pen_logpdf

__all__ = ["MoveRecord", "propose_split_merge", "frozen_partition_move", "apply_move"]


@dataclass
class MoveRecord:
    """Everything needed to audit (or re-apply) one proposed move."""

    kind: str                      # "split" | "merge" | "skipped"
    accepted: bool = False
    anchors: tuple = ()
    labels: tuple = ()             # (moving/new label, kept label)
    log_ratio: float = -math.inf
    log_q_forward: float = 0.0
    log_q_reverse: float = 0.0
    log_prior_delta: float = 0.0   # allocation + parameter priors + repulsion
    log_lik_delta: float = 0.0     # coefficient likelihood over affected individuals
    z_proposed: np.ndarray = None
    params_proposed: dict = field(default_factory=dict)  # label -> (theta, tau2, lam2)


class _Launch:
    """Working allocation plus private copies of the touched components."""

    def __init__(self, z, labels, param_source):
        self.z = z
        self.theta, self.tau2, self.lam2 = {}, {}, {}
        for lab in labels:
            th, t2, l2 = param_source(lab)
            self.theta[lab], self.tau2[lab], self.lam2[lab] = th, t2, l2


@dataclass
class _Targets:
    theta: dict
    tau2: dict
    lam2: dict
    z: np.ndarray = None


class _ScanCtx:
    """Read-only bundle of everything the restricted scans condition on."""

    def __init__(self, state, data, ctx, mode, logW, update_params):
        hp = ctx.hp
        self.hp = hp
        self.D, self.p = hp.n_dims, hp.n_coef
        self.beta = state.beta
        self.mu = state.mu
        self.b_tau = state.b_tau
        self.K = ctx.penalty
        self.K_chol = ctx.penalty_chol
        self.K_logdet = ctx.penalty_logdet
        self.logW = logW
        self.update_params = update_params
        self.is_ppmx = mode.startswith("mfppmx")
        if self.is_ppmx:
            self.cohesion = ppmx_mod.CohesionConfig(mass=hp.cohesion_mass)
            self.sim = ppmx_mod.similarity_from_data(data, hp)


def _log_u(u):
    return math.log(u) if u > 0.0 else -math.inf


def _iso_loglik(beta_i, theta, lam2):
    """sum_d log N(beta_id; theta_d, lam2_d * I)."""
    p = beta_i.shape[1]
    diff = beta_i - theta
    return float(
        -0.5 * p * (len(lam2) * rd.LOG2PI + np.log(lam2).sum())
        - 0.5 * ((diff ** 2).sum(axis=1) / lam2).sum()
    )


def _z_logweight(sctx, launch, i, label, S_all):
    """Log allocation weight of individual i for one working component."""
    iso = _iso_loglik(sctx.beta[i], launch.theta[label], launch.lam2[label])
    if sctx.is_ppmx:
        members = [k for k in S_all if k != i and launch.z[k] == label]
        return ppmx_mod._log_weight_existing(i, members, sctx.sim) + iso
    return sctx.logW[i, label] + iso


def _component_prior_logpdf(theta, tau2, lam2, sctx):
    """Joint prior log-density of one component's (theta, tau2, lam2)."""
    hp = sctx.hp
    lp = 0.0
    for d in range(sctx.D):
        lp += rd.invgamma_logpdf(tau2[d], hp.tau_shape, sctx.b_tau)
        lp += _gauss_pen_logpdf(theta[d], sctx.mu[d], tau2[d], sctx.K, sctx.K_logdet)
        lp += rd.sqrt_uniform_logpdf(lam2[d], hp.lam_sd_bound[d])
    return lp


def _draw_component_prior(sctx, rng):
    """Fresh prior draw of one component's parameters, with its log-density.

    Draw order is fixed (spreads, then centers given spreads, then coefficient
    spreads) so runs are reproducible.
    """
    hp = sctx.hp
    D, p = sctx.D, sctx.p
    tau2, lam2 = np.empty(D), np.empty(D)
    theta = np.empty((D, p))
    lp = 0.0
    for d in range(D):
        tau2[d] = rd.sample_invgamma(hp.tau_shape, sctx.b_tau, rng)
        lp += rd.invgamma_logpdf(tau2[d], hp.tau_shape, sctx.b_tau)
    for d in range(D):
        eps = rng.standard_normal(p)
        theta[d] = sctx.mu[d] + math.sqrt(tau2[d]) * _dtrtrs(
            sctx.K_chol, eps, lower=1, trans=1, overwrite_b=1
        )[0]
        lp += _gauss_pen_logpdf(theta[d], sctx.mu[d], tau2[d], sctx.K, sctx.K_logdet)
    for d in range(D):
        lam2[d] = rd.sample_sqrt_uniform(hp.lam_sd_bound[d], rng)
        lp += rd.sqrt_uniform_logpdf(lam2[d], hp.lam_sd_bound[d])
    return (theta, tau2, lam2), lp


def _scan(sctx, launch, pair, S, rng, S_all, *, collect=False, targets=None, update_z=True):
    """One restricted scan over the working components and individuals.

    Order: centers (all labels, all dimensions), center spreads, coefficient
    spreads, then two-way reallocation of S in ascending order. Sample mode
    draws new values; with `collect` it also accumulates the log-density of
    what it drew. Evaluation mode (`targets` given) consumes no randomness:
    it accumulates the same conditionals' log-densities at the target values
    while installing them progressively, mirroring a sampling scan that
    happened to produce exactly those values.
    """
    hp = sctx.hp
    eval_mode = targets is not None
    logq = 0.0

    if sctx.update_params:
        members = {lab: [k for k in S_all if launch.z[k] == lab] for lab in pair}
        # component centers
        for lab in pair:
            n_l = len(members[lab])
            bsum = sctx.beta[members[lab]].sum(axis=0)
            for d in range(sctx.D):
                P = sctx.K / launch.tau2[lab][d] + (n_l / launch.lam2[lab][d]) * np.eye(sctx.p)
                info = (sctx.K @ sctx.mu[d]) / launch.tau2[lab][d] + bsum[d] / launch.lam2[lab][d]
                if eval_mode:
                    L = rd.chol_lower(P)
                    mean = _dpotrs(L, info, lower=1)[0]
                    value = targets.theta[lab][d]
                else:
                    value, mean = rd.sample_mvn_prec_info(info, P, rng)
                if eval_mode or collect:
                    logq += rd.mvn_logpdf_prec(value, mean, P)
                launch.theta[lab][d] = value
        # center spreads given the new centers
        for lab in pair:
            for d in range(sctx.D):
                resid = launch.theta[lab][d] - sctx.mu[d]
                shape = hp.tau_shape + 0.5 * sctx.p
                scale = sctx.b_tau + 0.5 * float(resid @ sctx.K @ resid)
                if eval_mode:
                    value = targets.tau2[lab][d]
                else:
                    value = float(rd.sample_invgamma(shape, scale, rng))
                if eval_mode or collect:
                    logq += rd.invgamma_logpdf(value, shape, scale)
                launch.tau2[lab][d] = value
        # coefficient spreads given the new centers
        for lab in pair:
            n_l = len(members[lab])
            diffs = sctx.beta[members[lab]] - launch.theta[lab][None, :, :]
            sq = (diffs ** 2).sum(axis=(0, 2))  # (D,)
            for d in range(sctx.D):
                shape = 0.5 * (n_l * sctx.p - 1.0)
                scale = 0.5 * float(sq[d])
                upper = hp.lam_sd_bound[d] ** 2
                if eval_mode:
                    value = targets.lam2[lab][d]
                else:
                    value = rd.sample_trunc_invgamma(shape, scale, upper, rng)
                if eval_mode or collect:
                    logq += rd.trunc_invgamma_logpdf(value, shape, scale, upper)
                launch.lam2[lab][d] = value

    if update_z:
        for i in S:
            la = _z_logweight(sctx, launch, i, pair[0], S_all)
            lb = _z_logweight(sctx, launch, i, pair[1], S_all)
            denom = np.logaddexp(la, lb)
            if eval_mode:
                new = int(targets.z[i])
            else:
                u = rng.random()
                new = pair[0] if u < math.exp(la - denom) else pair[1]
            if eval_mode or collect:
                logq += (la if new == pair[0] else lb) - denom
            launch.z[i] = new
    return logq


def _default_logW(state, data):
    if state.alpha is not None:
        return weights_mod.log_weight_matrix(state.alpha, data.stick_design())
    return np.broadcast_to(np.log(state.pi), (data.m, len(state.pi)))


def apply_move(state, record: MoveRecord, mode):
    """Install an accepted move's allocation and component parameters.

    Mixture modes overwrite the two working components in place. Product-
    partition modes append the new component (split) or delete the vacated
    one and renumber the labels above it (merge).
    """
    if record.kind == "skipped":
        return
    A, B = record.labels
    is_ppmx = mode.startswith("mfppmx")
    if is_ppmx and record.kind == "split":
        if A != state.theta.shape[0]:
            raise ValueError(f"new component label {A} does not extend the current set")
        th, t2, l2 = record.params_proposed[A]
        state.theta = np.concatenate([state.theta, th[None]], axis=0)
        state.tau2 = np.concatenate([state.tau2, t2[None]], axis=0)
        state.lam2 = np.concatenate([state.lam2, l2[None]], axis=0)
        state.z[:] = record.z_proposed
        thB, t2B, l2B = record.params_proposed[B]
        state.theta[B], state.tau2[B], state.lam2[B] = thB, t2B, l2B
        return
    state.z[:] = record.z_proposed
    for lab, (th, t2, l2) in record.params_proposed.items():
        state.theta[lab], state.tau2[lab], state.lam2[lab] = th, t2, l2
    if is_ppmx and record.kind == "merge":
        state.theta = np.delete(state.theta, A, axis=0)
        state.tau2 = np.delete(state.tau2, A, axis=0)
        state.lam2 = np.delete(state.lam2, A, axis=0)
        state.z[state.z > A] -= 1


def propose_split_merge(
    state,
    data,
    ctx,
    rng,
    *,
    mode="mfrmmx",
    logW=None,
    n_scans=5,
    update_params=True,
    dist_cache=None,
):
    """Propose and (on acceptance) apply one split-merge move.

    `logW` is the (m, n_components) matrix of log mixing weights per
    individual for the mixture modes (computed from the state's weights when
    omitted; ignored for product-partition modes). `dist_cache` may hold a
    DistanceCache for the current state's centers; it is kept current when a
    move is accepted. With `update_params=False` (mixture modes only) the
    component parameters are frozen and only allocations move.

    Mutates `state` when the move is accepted and returns a `MoveRecord`.
    """
    hp = ctx.hp
    m = data.m
    is_ppmx = mode.startswith("mfppmx")
    if not update_params and is_ppmx:
        raise ValueError("frozen split-merge needs a fixed component set (mixture modes)")
    if m < 2:
        return MoveRecord(kind="skipped")
    if logW is None and not is_ppmx:
        logW = _default_logW(state, data)

    i0 = int(rng.integers(m))
    i1 = int(rng.integers(m - 1))
    if i1 >= i0:
        i1 += 1
    z = state.z
    zi0, zi1 = int(z[i0]), int(z[i1])
    split = zi0 == zi1
    J = state.n_components
    if split:
        if is_ppmx:
            A = J
        else:
            empties = np.flatnonzero(np.bincount(z, minlength=J) == 0)
            if empties.size == 0:
                return MoveRecord(kind="skipped", anchors=(i0, i1))
            A = int(empties[0])
        B = zi1
    else:
        A, B = zi0, zi1
    pair = (A, B)
    S = [i for i in range(m) if i != i0 and i != i1 and z[i] in (zi0, zi1)]
    S_all = S + [i0, i1]
    kind = "split" if split else "merge"

    sctx = _ScanCtx(state, data, ctx, mode, logW, update_params)

    def comp_params(lab):
        src = B if (is_ppmx and split and lab == A) else lab
        return state.theta[src].copy(), state.tau2[src].copy(), state.lam2[src].copy()

    zs = z.copy()
    zs[i0] = A
    launch_s = _Launch(zs, pair, comp_params)
    zm = z.copy()
    zm[S + [i0]] = B
    launch_m = _Launch(zm, (B,), comp_params)

    try:
        for _ in range(n_scans):
            _scan(sctx, launch_s, pair, S, rng, S_all)
        for _ in range(n_scans):
            _scan(sctx, launch_m, (B,), S, rng, S_all, update_z=False)

        if split:
            q_fwd = _scan(sctx, launch_s, pair, S, rng, S_all, collect=True)
            z_prop = launch_s.z
            prop = {lab: (launch_s.theta[lab], launch_s.tau2[lab], launch_s.lam2[lab]) for lab in pair}
            # reverse move: a merge, whose scan densities are evaluated at the
            # current state's values and which redraws the moving component
            # from the prior (mixture modes).
            tgt = _Targets(
                theta={B: state.theta[B]}, tau2={B: state.tau2[B]}, lam2={B: state.lam2[B]}
            )
            q_rev = _scan(sctx, launch_m, (B,), S, None, S_all, targets=tgt, update_z=False)
            if update_params and not is_ppmx:
                q_rev += _component_prior_logpdf(state.theta[A], state.tau2[A], state.lam2[A], sctx)
        else:
            q_fwd = _scan(sctx, launch_m, (B,), S, rng, S_all, collect=True, update_z=False)
            z_prop = launch_m.z
            prop = {B: (launch_m.theta[B], launch_m.tau2[B], launch_m.lam2[B])}
            if update_params and not is_ppmx:
                prop[A], lp_vac = _draw_component_prior(sctx, rng)
                q_fwd += lp_vac
            # reverse move: a split, whose final scan is evaluated at the
            # current state's parameters and allocation.
            tgt = _Targets(
                theta={A: state.theta[A], B: state.theta[B]},
                tau2={A: state.tau2[A], B: state.tau2[B]},
                lam2={A: state.lam2[A], B: state.lam2[B]},
                z=z,
            )
            q_rev = _scan(sctx, launch_s, pair, S, None, S_all, targets=tgt)
    except np.linalg.LinAlgError:
        return MoveRecord(kind=kind, anchors=(i0, i1), labels=pair, log_ratio=-math.inf)

    # ---- target ratio, localized to the affected individuals/components ----
    idx = np.asarray(S_all)
    if is_ppmx:
        def cluster_term(mem):
            return ppmx_mod.log_cohesion(len(mem), sctx.cohesion) + ppmx_mod.log_similarity_cluster(
                sorted(mem), sctx.sim
            )

        if split:
            alloc_delta = (
                cluster_term([k for k in S_all if z_prop[k] == A])
                + cluster_term([k for k in S_all if z_prop[k] == B])
                - cluster_term(S_all)
            )
        else:
            alloc_delta = (
                cluster_term(S_all)
                - cluster_term([k for k in S_all if z[k] == A])
                - cluster_term([k for k in S_all if z[k] == B])
            )
    else:
        alloc_delta = float(logW[idx, z_prop[idx]].sum() - logW[idx, z[idx]].sum())

    param_delta = 0.0
    if update_params:
        for lab in prop:
            param_delta += _component_prior_logpdf(*prop[lab], sctx)
        curr_labels = [B] if (is_ppmx and split) else [A, B]
        for lab in curr_labels:
            param_delta -= _component_prior_logpdf(
                state.theta[lab], state.tau2[lab], state.lam2[lab], sctx
            )

    rep_delta = 0.0
    if update_params and not is_ppmx and np.any(hp.repulsion > 0):
        cache = dist_cache
        if cache is None:
            cfg = rep.RepulsionConfig(
                phi=hp.repulsion,
                Hdist=ctx.dist_design,
                nu=hp.repulsion_power,
                q=hp.distance_exponent,
            )
            cache = rep.DistanceCache(state.theta, cfg)
        override = {lab: prop[lab][0] for lab in pair}
        rep_delta = float(
            cache.log_pairs_involving(pair, override).sum()
            - cache.log_pairs_involving(pair).sum()
        )

    lik_delta = 0.0
    for i in S_all:
        lab_new = int(z_prop[i])
        th_new, _, l2_new = prop[lab_new]
        lik_delta += _iso_loglik(sctx.beta[i], th_new, l2_new)
        lab_old = int(z[i])
        lik_delta -= _iso_loglik(sctx.beta[i], state.theta[lab_old], state.lam2[lab_old])

    log_ratio = (q_rev - q_fwd) + alloc_delta + param_delta + rep_delta + lik_delta
    record = MoveRecord(
        kind=kind,
        anchors=(i0, i1),
        labels=pair,
        log_ratio=float(log_ratio),
        log_q_forward=float(q_fwd),
        log_q_reverse=float(q_rev),
        log_prior_delta=float(alloc_delta + param_delta + rep_delta),
        log_lik_delta=float(lik_delta),
        z_proposed=z_prop.copy(),
        params_proposed={lab: tuple(a.copy() for a in prop[lab]) for lab in prop},
    )

    u = rng.random()
    if _log_u(u) < log_ratio:
        record.accepted = True
        apply_move(state, record, mode)
        if dist_cache is not None and not is_ppmx and update_params:
            for lab in pair:
                dist_cache.set_component(lab, state.theta[lab])
    return record


def frozen_partition_move(z, logw, rng, n_scans=5):
    """One allocation-only split-merge move with all parameters held fixed.

    `logw[i, j]` is the full log allocation weight of individual i under
    component j (log mixing weight plus coefficient log-likelihood). Mutates
    `z` on acceptance and returns whether the move was accepted. Draw-for-draw
    equivalent to `propose_split_merge(..., update_params=False)` with the
    matching weight matrix, but with none of the bookkeeping overhead.
    """
    m, J = logw.shape
    i0 = int(rng.integers(m))
    i1 = int(rng.integers(m - 1))
    if i1 >= i0:
        i1 += 1
    zi0, zi1 = int(z[i0]), int(z[i1])
    split = zi0 == zi1
    if split:
        empties = np.flatnonzero(np.bincount(z, minlength=J) == 0)
        if empties.size == 0:
            return False
        A = int(empties[0])
        B = zi1
    else:
        A, B = zi0, zi1
    S = [i for i in range(m) if i != i0 and i != i1 and z[i] in (zi0, zi1)]

    zs = z.copy()
    zs[i0] = A
    for _ in range(n_scans):
        for i in S:
            la, lb = logw[i, A], logw[i, B]
            denom = np.logaddexp(la, lb)
            zs[i] = A if rng.random() < math.exp(la - denom) else B

    if split:
        q_fwd = 0.0
        for i in S:
            la, lb = logw[i, A], logw[i, B]
            denom = np.logaddexp(la, lb)
            new = A if rng.random() < math.exp(la - denom) else B
            q_fwd += (la if new == A else lb) - denom
            zs[i] = new
        z_prop = zs
        q_rev = 0.0
    else:
        z_prop = z.copy()
        z_prop[S + [i0]] = B
        q_fwd = 0.0
        q_rev = 0.0
        for i in S:
            la, lb = logw[i, A], logw[i, B]
            denom = np.logaddexp(la, lb)
            q_rev += (la if z[i] == A else lb) - denom
            zs[i] = z[i]

    idx = np.asarray(S + [i0, i1])
    delta = float(logw[idx, z_prop[idx]].sum() - logw[idx, z[idx]].sum())
    log_ratio = (q_rev - q_fwd) + delta
    if _log_u(rng.random()) < log_ratio:
        z[:] = z_prop
        return True
    return False
