"""Batch MCMC for the curve-mixture models: one chain = one `run_chain` call.

Sweep layout (one iteration), ordered so the collapsed draws stay valid: the
allocation and component-curve updates integrate the individual coefficient
matrices out of their conditionals, so both run before the coefficients are
redrawn, and no step in between conditions on the coefficients.

    1. split-merge move(s) on the allocations (Metropolis-Hastings)
    2. allocations z | weights, components   (coefficients marginalized)
    3. mixing weights: Dirichlet draw, or Polya-Gamma stick-breaking pass
    4. component curves Theta | z            (coefficients marginalized;
       exact Gaussian draw without repulsion, adaptive MH with it)
    5. individual coefficients B | Theta, z
    6. smoothing variances tau2              (inverse-gamma)
    7. coefficient spreads lam2              (truncated inverse-gamma)
    8. tau2 prior rate b_tau                 (gamma)
    9. component prior means mu              (Gaussian)
   10. individual levels beta0               (Gaussian)
   11. error covariances Sigma               (inverse-Wishart, or per-dim
                                              inverse-gamma in "-ind" modes)
   12. level prior means mu0                 (Gaussian)
   13. level prior variances sig0_sq         (inverse-gamma)

Product-partition ("mfppmx*") modes replace steps 2-3 with a cohesion x
similarity reallocation sweep that creates and deletes components on the fly,
and never carry repulsion, so their component-curve draw is always the exact
Gaussian. Every step is exposed as a module-level function so calibration
tests can drive the kernels one at a time.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.linalg.lapack import dpotrs as _dpotrs, dtrtrs as _dtrtrs

from curvemix import randdist as rd
from curvemix import weights as weights_mod
from curvemix.model import (
    ChainState,
    CurveData,
    ModelContext,
    alloc_quantities,
    initial_state,
    loglik_all,
    marginal_logweight,
    sample_prior_component,
)
from curvemix.ppmx import step_allocations_ppmx
from curvemix.repulsion import DistanceCache, RepulsionConfig
from curvemix.splitmerge import propose_split_merge

__all__ = [
    "SamplerSchedule",
    "MhAdaptation",
    "PosteriorDraws",
    "MoveStat",
    "SamplerError",
    "run_chain",
    "compute_alloc_info",
    "marginal_logweight_matrix",
    "log_mixing_weights",
    "conditional_allocation_logweights",
    "step_allocation",
    "step_weights",
    "step_theta",
    "step_coefficients",
    "step_tau2",
    "step_lam2",
    "step_b_tau",
    "step_mu",
    "step_beta0",
    "step_error_cov",
    "step_mu0",
    "step_sig0",
    "sample_state_from_prior",
    "resample_curves",
]

MODES = ("mfrmmx", "mfrmmx-ind", "mfppmx", "mfppmx-ind")


class SamplerError(RuntimeError):
    """A sampler step failed; the message names the iteration and step."""


@dataclass
class SamplerSchedule:
    """Chain length bookkeeping.

    Total iterations = n_burn + n_keep * thin; one state is recorded at the
    end of each post-burn-in block of `thin` iterations. Proposal-scale
    adaptation runs during the first n_adapt burn-in iterations (default: all
    of burn-in) and is frozen afterwards.
    """

    n_burn: int
    n_keep: int
    thin: int = 1
    n_adapt: int | None = None
    split_merge_per_iter: int = 1
    gibbs_scans_in_launch: int = 5

    def __post_init__(self):
        if self.n_adapt is None:
            self.n_adapt = self.n_burn
        if self.n_burn < 0 or self.n_keep < 0:
            raise ValueError("n_burn and n_keep must be nonnegative")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")
        if not 0 <= self.n_adapt <= self.n_burn:
            raise ValueError("need 0 <= n_adapt <= n_burn")
        if self.split_merge_per_iter < 0:
            raise ValueError("split_merge_per_iter must be >= 0")
        if self.gibbs_scans_in_launch < 1:
            raise ValueError("gibbs_scans_in_launch must be >= 1")

    @property
    def n_iter(self):
        return self.n_burn + self.n_keep * self.thin


@dataclass
class MhAdaptation:
    """Proposal-scale adaptation for the repulsive component-curve update.

    Every `window` iterations during the adaptation phase, each class's scale
    is multiplied by `grow` if its acceptance rate exceeded `rate_high` and by
    `shrink` if it fell below `rate_low`. Scales are kept per (component
    class, dimension), where the two classes are occupied and empty
    components; empty components start wider because their conditional is the
    (broad) prior.
    """

    window: int = 200
    grow: float = 1.5
    shrink: float = 0.67
    rate_high: float = 0.25
    rate_low: float = 0.05
    eps_init: float = 0.1
    eps_empty_init: float = 0.5


class _MhRuntime:
    """Mutable adaptation state: scales plus windowed/lifetime counters."""

    def __init__(self, cfg: MhAdaptation, n_dims: int):
        self.cfg = cfg
        self.eps = np.array(
            [[cfg.eps_init] * n_dims, [cfg.eps_empty_init] * n_dims], dtype=float
        )
        self.win_proposed = np.zeros(2, dtype=int)
        self.win_accepted = np.zeros(2, dtype=int)
        self.proposed = np.zeros(2, dtype=int)
        self.accepted = np.zeros(2, dtype=int)

    def record(self, cls, accepted):
        self.win_proposed[cls] += 1
        self.proposed[cls] += 1
        if accepted:
            self.win_accepted[cls] += 1
            self.accepted[cls] += 1

    def adapt(self):
        for cls in range(2):
            if self.win_proposed[cls] == 0:
                continue
            rate = self.win_accepted[cls] / self.win_proposed[cls]
            if rate > self.cfg.rate_high:
                self.eps[cls] *= self.cfg.grow
            elif rate < self.cfg.rate_low:
                self.eps[cls] *= self.cfg.shrink
        self.win_proposed[:] = 0
        self.win_accepted[:] = 0

    def accept_rate(self):
        with np.errstate(invalid="ignore"):
            return np.where(self.proposed > 0, self.accepted / self.proposed, np.nan)


class MoveStat(NamedTuple):
    """One split-merge attempt in the move log."""

    iteration: int
    kind: str
    accepted: bool
    log_ratio: float


@dataclass
class PosteriorDraws:
    """Recorded output of one chain (one entry per kept draw)."""

    mode: str
    covariates: bool
    z: np.ndarray                    # (n_keep, m) int allocations
    loglik: np.ndarray               # (n_keep, m) per-individual log-likelihood
    n_components: np.ndarray         # (n_keep,) component-array length
    b_tau: np.ndarray                # (n_keep,)
    theta: list                      # n_keep arrays (J_t, D, p)
    tau2: list                       # n_keep arrays (J_t, D)
    lam2: list                       # n_keep arrays (J_t, D)
    weights: list | None             # pi (J,) or alpha (J, L) per draw; None if ppmx
    move_log: list                   # MoveStat per split-merge attempt
    mh_eps: np.ndarray | None        # final (2, D) proposal scales, or None
    mh_accept_rate: np.ndarray | None
    final_state: ChainState
    schedule: SamplerSchedule
    seed_info: str = ""

    @property
    def n_kept(self):
        return self.z.shape[0]

    def cluster_counts(self):
        """(n_keep,) number of occupied clusters in each kept draw."""
        return np.array([len(np.unique(zt)) for zt in self.z], dtype=int)


# ---------------------------------------------------------------------------
# marginalized allocation quantities
# ---------------------------------------------------------------------------


@dataclass
class AllocInfo:
    """Per-individual precision/information pieces with coefficients
    marginalized: P_base[i] = Sigma_i^{-1} kron (H_i'H_i), c[i] the matching
    information vector, sig_inv[i] = Sigma_i^{-1}. Valid until beta0 or
    Sigma change."""

    P_base: np.ndarray  # (m, Dp, Dp)
    c: np.ndarray       # (m, Dp)
    sig_inv: np.ndarray  # (m, D, D)


def compute_alloc_info(state: ChainState, data: CurveData, ctx: ModelContext):
    Dp = data.D * ctx.hp.n_coef
    P_base = np.empty((data.m, Dp, Dp))
    c = np.empty((data.m, Dp))
    for i in range(data.m):
        n = data.n[i]
        P_base[i], c[i] = alloc_quantities(
            data.Y[i], ctx.design(n), ctx.gram(n), state.beta0[i], state.Sigma[i]
        )
    return AllocInfo(P_base, c, np.linalg.inv(state.Sigma))


def _marginal_matrix_dense(state: ChainState, alloc: AllocInfo):
    """(m, J) marginal log-weights via batched Cholesky on the full
    cross-dimensional precision. Works for every mode."""
    m, Dp = alloc.c.shape
    J = state.n_components
    p = state.theta.shape[2]
    out = np.empty((m, J))
    dgi = np.arange(Dp)
    for j in range(J):
        linv = np.repeat(1.0 / state.lam2[j], p)
        P = alloc.P_base.copy()
        P[:, dgi, dgi] += linv
        mv = alloc.c + linv * state.theta[j].reshape(-1)
        L = np.linalg.cholesky(P)
        u = np.linalg.solve(L, mv[:, :, None])[:, :, 0]
        logdet = 2.0 * np.log(np.einsum("ikk->ik", L)).sum(axis=1)
        out[:, j] = 0.5 * (
            -p * np.log(state.lam2[j]).sum()
            - float(((state.theta[j] ** 2).sum(axis=1) / state.lam2[j]).sum())
            - logdet
            + np.einsum("ik,ik->i", u, u)
        )
    return out


def _marginal_matrix_fast(state: ChainState, data: CurveData, ctx: ModelContext,
                          alloc: AllocInfo):
    """(m, J) marginal log-weights for diagonal-error modes.

    With Sigma_i diagonal the precision is block diagonal across dimensions
    and each block shares the Gram matrix's eigenvectors: for G = Q diag(w) Q'
    the block for (i, j, d) is Q diag(w / sig2_id + 1 / lam2_jd) Q', so the
    determinant and quadratic form reduce to elementwise work on eigenvalues.
    """
    hp = ctx.hp
    p, D, m, J = hp.n_coef, data.D, data.m, state.n_components
    sig2 = np.diagonal(state.Sigma, axis1=1, axis2=2)  # (m, D)
    lam2 = state.lam2                                   # (J, D)
    out = np.zeros((m, J))
    out += 0.5 * (
        -p * np.log(lam2).sum(axis=1)
        - ((state.theta ** 2).sum(axis=2) / lam2).sum(axis=1)
    )[None, :]
    cmat = alloc.c.reshape(m, D, p)
    for n in np.unique(data.n):
        idx = np.flatnonzero(data.n == n)
        evals, Q = np.linalg.eigh(ctx.gram(int(n)))
        qc = np.einsum("idp,pl->idl", cmat[idx], Q)         # (g, D, p): Q'c
        qt = np.einsum("jdp,pl->jdl", state.theta, Q)       # (J, D, p): Q'theta
        for d in range(D):
            il = 1.0 / lam2[None, :, d, None]                       # (1, J, 1)
            denom = evals[None, None, :] / sig2[idx, d][:, None, None] + il
            u = qc[:, d][:, None, :] + qt[:, d][None, :, :] * il    # (g, J, p)
            out[idx] += 0.5 * ((u * u / denom).sum(axis=2) - np.log(denom).sum(axis=2))
    return out


def _marginal_matrix_eigh_dep(state: ChainState, data: CurveData, ctx: ModelContext,
                              alloc: AllocInfo):
    """(m, J) marginal log-weights for the dependent-error modes.

    Individuals sharing a design share its Gram matrix G = Q diag(w) Q'.
    Rotating each dimension block by Q turns the cross-dimensional precision
    Sigma_i^{-1} kron G + Lam_j^{-1} into p independent D x D blocks
    w_k Sigma_i^{-1} + diag(1 / lam2_j), so every (i, j) weight reduces to
    batched D x D factorizations instead of one dense Dp x Dp one.
    """
    hp = ctx.hp
    p, D, m, J = hp.n_coef, data.D, data.m, state.n_components
    lam2 = state.lam2                                   # (J, D)
    linv = 1.0 / lam2
    out = np.zeros((m, J))
    out += 0.5 * (
        -p * np.log(lam2).sum(axis=1)
        - ((state.theta ** 2).sum(axis=2) / lam2).sum(axis=1)
    )[None, :]
    cmat = alloc.c.reshape(m, D, p)
    eye = np.eye(D)
    lam_diag = linv[:, :, None] * eye[None]             # (J, D, D)
    for n in np.unique(data.n):
        idx = np.flatnonzero(data.n == n)
        w, Q = np.linalg.eigh(ctx.gram(int(n)))
        qc = cmat[idx] @ Q                               # (g, D, p): Q'c per dim
        qt = state.theta @ Q                             # (J, D, p): Q'theta per dim
        blocks = (
            w[None, None, :, None, None] * alloc.sig_inv[idx, None, None, :, :]
            + lam_diag[None, :, None, :, :]
        )                                                # (g, J, p, D, D)
        mv = (
            qc.transpose(0, 2, 1)[:, None]               # (g, 1, p, D)
            + (qt * linv[:, :, None]).transpose(0, 2, 1)[None]  # (1, J, p, D)
        )
        L = np.linalg.cholesky(blocks)
        u = np.linalg.solve(L, mv[..., None])[..., 0]    # (g, J, p, D)
        logdet = 2.0 * np.log(np.einsum("...kk->...k", L)).sum(axis=(2, 3))
        quad = np.einsum("gjpd,gjpd->gj", u, u)
        out[idx] += 0.5 * (quad - logdet)
    return out


def marginal_logweight_matrix(state, data, ctx, alloc, mode):
    """(m, J) coefficient-marginalized component log-weights; matches
    `marginal_logweight` entry by entry."""
    if mode.endswith("-ind"):
        return _marginal_matrix_fast(state, data, ctx, alloc)
    return _marginal_matrix_eigh_dep(state, data, ctx, alloc)


def log_mixing_weights(state: ChainState, data: CurveData, stick_X=None):
    """(m, J) log mixing weights, or None for product-partition states."""
    if state.alpha is not None:
        X = data.stick_design() if stick_X is None else stick_X
        return weights_mod.log_weight_matrix(state.alpha, X)
    if state.pi is not None:
        with np.errstate(divide="ignore"):
            return np.tile(np.log(state.pi), (data.m, 1))
    return None


def conditional_allocation_logweights(state: ChainState, log_mix):
    """(m, J) allocation log-weights conditional on the coefficients:
    log mixing weight + sum_d log N(beta_id; theta_jd, lam2_jd I)."""
    p = state.beta.shape[2]
    diff = state.beta[:, None, :, :] - state.theta[None, :, :, :]
    ss = np.einsum("mjdp,mjdp->mjd", diff, diff)
    pen = ss / state.lam2[None] + p * (rd.LOG2PI + np.log(state.lam2))[None]
    return log_mix - 0.5 * pen.sum(axis=2)


# ---------------------------------------------------------------------------
# sweep steps
# ---------------------------------------------------------------------------


def _categorical_rows(logw, rng):
    """One categorical draw per row of a log-weight matrix."""
    lw = logw - logw.max(axis=1, keepdims=True)
    w = np.exp(lw)
    cdf = np.cumsum(w, axis=1)
    u = rng.random(logw.shape[0]) * cdf[:, -1]
    return np.minimum((cdf < u[:, None]).sum(axis=1), logw.shape[1] - 1).astype(int)


def step_allocation(state, data, ctx, rng, mode, alloc, log_mix=None):
    """Reallocation sweep with the individual coefficients marginalized out.

    Mixture modes draw every z_i from the (m, J) weight matrix; product-
    partition modes run the sequential cohesion x similarity sweep (component
    arrays are resized in place as clusters appear and vanish).
    """
    if mode.startswith("mfppmx"):
        hp = ctx.hp

        def ml_fn(i, theta, lam2):
            return marginal_logweight(alloc.P_base[i], alloc.c[i], theta, lam2)

        def candidate_fn():
            return sample_prior_component(hp, state.mu, state.b_tau, rng, ctx.penalty_chol)

        step_allocations_ppmx(state, data, hp, rng, ml_fn, candidate_fn)
        return
    if log_mix is None:
        log_mix = log_mixing_weights(state, data)
    logw = log_mix + marginal_logweight_matrix(state, data, ctx, alloc, mode)
    state.z = _categorical_rows(logw, rng)


def step_weights(state, data, ctx, rng, covariates, stick_X=None):
    """Conjugate weight update (mixture modes only)."""
    hp = ctx.hp
    if covariates:
        X = data.stick_design() if stick_X is None else stick_X
        mean, cov = hp.alpha_prior(X.shape[1])
        state.alpha = weights_mod.update_alpha(state.alpha, state.z, X, mean, cov, rng)
    else:
        state.pi = weights_mod.update_pi_dirichlet(
            state.z, hp.weight_conc, rng, n_components=state.n_components
        )


def _theta_precision_info(state, ctx, alloc, j, members):
    """Precision and information vector of vec(Theta_j) | z with the member
    coefficients marginalized out."""
    hp = ctx.hp
    D, p = hp.n_dims, hp.n_coef
    Dp = D * p
    K = ctx.penalty
    P = np.zeros((Dp, Dp))
    info = np.empty(Dp)
    for d in range(D):
        sl = slice(d * p, (d + 1) * p)
        P[sl, sl] = K / state.tau2[j, d]
        info[sl] = (K @ state.mu[d]) / state.tau2[j, d]
    if len(members):
        linv = np.repeat(1.0 / state.lam2[j], p)
        SV = np.zeros((Dp, Dp))
        Svc = np.zeros(Dp)
        eye = np.eye(Dp)
        dgi = np.arange(Dp)
        for i in members:
            Pi = alloc.P_base[i].copy(order="F")
            np.einsum("ii->i", Pi)[:] += linv
            Li = rd.chol_lower(Pi, overwrite_a=True)
            SV += _dpotrs(Li, eye, lower=1)[0]
            Svc += _dpotrs(Li, alloc.c[i], lower=1)[0]
        P[dgi, dgi] += len(members) * linv
        P -= linv[:, None] * SV * linv[None, :]
        info = info + linv * Svc
    return 0.5 * (P + P.T), info


def _default_mh_eps(n_dims):
    cfg = MhAdaptation()
    return np.array([[cfg.eps_init] * n_dims, [cfg.eps_empty_init] * n_dims])


def step_theta(state, data, ctx, rng, mode, alloc, mh=None, dist_cache=None):
    """Component-curve update with the member coefficients marginalized out.

    Without repulsion (all phi = 0, and always in ppmx modes) each vec(Theta_j)
    has a Gaussian conditional and is drawn exactly; empty components fall
    back to their prior automatically. With repulsion the Gaussian kernel is
    used as a Metropolis target together with the pairwise repulsion change:
    the proposal perturbs every dimension as N(theta_jd, eps_d K^{-1}) and the
    component accepts or rejects jointly.
    """
    hp = ctx.hp
    D, p = hp.n_dims, hp.n_coef
    use_mh = (not mode.startswith("mfppmx")) and bool(np.any(hp.repulsion > 0))
    if use_mh and dist_cache is None:
        dist_cache = DistanceCache(
            state.theta,
            RepulsionConfig(hp.repulsion, ctx.dist_design, hp.repulsion_power,
                            hp.distance_exponent),
        )
    eps = mh.eps if mh is not None else _default_mh_eps(D)
    for j in range(state.n_components):
        members = np.flatnonzero(state.z == j)
        P, info = _theta_precision_info(state, ctx, alloc, j, members)
        if not use_mh:
            draw, _ = rd.sample_mvn_prec_info(info, P, rng)
            state.theta[j] = draw.reshape(D, p)
            continue
        cls = 0 if len(members) else 1
        zeta = rng.standard_normal((D, p))
        step = _dtrtrs(ctx.penalty_chol, zeta.T, lower=1, trans=1,
                       overwrite_b=1)[0].T
        prop = state.theta[j] + np.sqrt(eps[cls])[:, None] * step
        pv, cv = prop.reshape(-1), state.theta[j].reshape(-1)
        d_kernel = (-0.5 * pv @ P @ pv + info @ pv) - (-0.5 * cv @ P @ cv + info @ cv)
        d_rep = float(dist_cache.delta_component(j, prop).sum())
        accepted = np.log(rng.random()) < d_kernel + d_rep
        if accepted:
            state.theta[j] = prop
            dist_cache.set_component(j, prop)
        if mh is not None:
            mh.record(cls, accepted)


def step_coefficients(state, data, ctx, rng, alloc):
    """Draw each individual's coefficient matrix from its Gaussian full
    conditional."""
    p = ctx.hp.n_coef
    Dp = alloc.c.shape[1]
    dgi = np.arange(Dp)
    for i in range(data.m):
        j = state.z[i]
        linv = np.repeat(1.0 / state.lam2[j], p)
        P = alloc.P_base[i].copy()
        P[dgi, dgi] += linv
        info = alloc.c[i] + linv * state.theta[j].reshape(-1)
        draw, _ = rd.sample_mvn_prec_info(info, P, rng)
        state.beta[i] = draw.reshape(data.D, p)


def step_tau2(state, ctx, rng):
    """Inverse-gamma draw of every smoothing variance."""
    hp = ctx.hp
    p = hp.n_coef
    resid = state.theta - state.mu[None]
    quad = np.einsum("jdp,pq,jdq->jd", resid, ctx.penalty, resid)
    scale = state.b_tau + 0.5 * quad
    state.tau2 = rd.sample_invgamma(hp.tau_shape + 0.5 * p, scale, rng, size=scale.shape)


def step_lam2(state, ctx, rng):
    """Truncated inverse-gamma draw of every coefficient spread; empty
    components redraw from the square-root-uniform prior."""
    hp = ctx.hp
    p = hp.n_coef
    counts = state.comp_counts()
    for j in range(state.n_components):
        members = np.flatnonzero(state.z == j)
        for d in range(ctx.hp.n_dims):
            upper = hp.lam_sd_bound[d] ** 2
            if counts[j] == 0:
                state.lam2[j, d] = rd.sample_sqrt_uniform(hp.lam_sd_bound[d], rng)
                continue
            diff = state.beta[members, d] - state.theta[j, d][None]
            shape = 0.5 * (counts[j] * p - 1)
            scale = 0.5 * float((diff * diff).sum())
            state.lam2[j, d] = rd.sample_trunc_invgamma(shape, scale, upper, rng)


def step_b_tau(state, ctx, rng):
    """Gamma draw of the shared inverse-gamma rate of the tau2 prior."""
    hp = ctx.hp
    shape = hp.tau_rate_shape + state.tau2.size * hp.tau_shape
    rate = hp.tau_rate_rate + float((1.0 / state.tau2).sum())
    state.b_tau = rng.gamma(shape, 1.0 / rate)


def step_mu(state, ctx, rng):
    """Gaussian draw of the per-dimension prior mean curves."""
    hp = ctx.hp
    p = hp.n_coef
    K = ctx.penalty
    eye = np.eye(p)
    for d in range(hp.n_dims):
        w = float((1.0 / state.tau2[:, d]).sum())
        P = w * K + eye / hp.comp_mean_var
        info = K @ (state.theta[:, d, :] / state.tau2[:, d, None]).sum(axis=0)
        state.mu[d], _ = rd.sample_mvn_prec_info(info, P, rng)


def step_beta0(state, data, ctx, rng):
    """Gaussian draw of each individual's level vector."""
    for i in range(data.m):
        H = ctx.design(data.n[i])
        R = data.Y[i] - H @ state.beta[i].T
        L = rd.chol_lower(state.Sigma[i])
        Sig_inv = _dpotrs(L, np.eye(data.D), lower=1)[0]
        P = data.n[i] * Sig_inv + np.diag(1.0 / state.sig0_sq)
        info = Sig_inv @ R.sum(axis=0) + state.mu0 / state.sig0_sq
        state.beta0[i], _ = rd.sample_mvn_prec_info(info, P, rng)


def step_error_cov(state, data, ctx, rng, mode):
    """Error-covariance draw: inverse-Wishart per individual, or independent
    per-dimension inverse-gamma variances in the diagonal modes."""
    hp = ctx.hp
    for i in range(data.m):
        H = ctx.design(data.n[i])
        E = data.Y[i] - state.beta0[i][None, :] - H @ state.beta[i].T
        if mode.endswith("-ind"):
            shape = hp.error_var_shape + 0.5 * data.n[i]
            scale = hp.error_var_scale + 0.5 * (E * E).sum(axis=0)
            state.Sigma[i] = np.diag(rd.sample_invgamma(shape, scale, rng, size=data.D))
        else:
            state.Sigma[i] = rd.sample_invwishart(
                hp.error_df + data.n[i], hp.error_scale + E.T @ E, rng
            )


def step_mu0(state, data, ctx, rng):
    """Gaussian draw of the level prior means."""
    hp = ctx.hp
    prec = data.m / state.sig0_sq + 1.0 / hp.intercept_mean_var
    mean = (state.beta0.sum(axis=0) / state.sig0_sq) / prec
    state.mu0 = mean + rng.standard_normal(data.D) / np.sqrt(prec)


def step_sig0(state, data, ctx, rng):
    """Inverse-gamma draw of the level prior variances."""
    hp = ctx.hp
    diff = state.beta0 - state.mu0[None]
    shape = hp.intercept_var_shape + 0.5 * data.m
    scale = hp.intercept_var_scale + 0.5 * (diff * diff).sum(axis=0)
    state.sig0_sq = rd.sample_invgamma(shape, scale, rng, size=data.D)


# ---------------------------------------------------------------------------
# prior / observation samplers (used by simulation-based calibration tests)
# ---------------------------------------------------------------------------


def sample_state_from_prior(data, hp, mode, covariates, rng, ctx=None):
    """Draw a complete state from the prior of a (non-repulsive) mixture mode.

    Requires phi = 0 in every dimension (the repulsion factor has no direct
    sampler) and a proper error-covariance prior in the dependent mode.
    """
    if mode.startswith("mfppmx"):
        raise ValueError("prior state sampling covers the mixture modes only")
    if np.any(hp.repulsion > 0):
        raise ValueError("prior state sampling requires zero repulsion")
    ctx = ModelContext(data, hp) if ctx is None else ctx
    D, p, J, m = hp.n_dims, hp.n_coef, hp.n_components, data.m

    b_tau = float(rng.gamma(hp.tau_rate_shape, 1.0 / hp.tau_rate_rate))
    mu = np.sqrt(hp.comp_mean_var) * rng.standard_normal((D, p))
    theta = np.empty((J, D, p))
    tau2 = np.empty((J, D))
    lam2 = np.empty((J, D))
    for j in range(J):
        theta[j], tau2[j], lam2[j] = sample_prior_component(hp, mu, b_tau, rng,
                                                            ctx.penalty_chol)
    pi = alpha = None
    if covariates:
        X = data.stick_design()
        mean, cov = hp.alpha_prior(X.shape[1])
        Lc = np.linalg.cholesky(cov)
        alpha = np.zeros((J, X.shape[1]))
        for j in range(J - 1):
            alpha[j] = mean + Lc @ rng.standard_normal(X.shape[1])
        log_mix = weights_mod.log_weight_matrix(alpha, X)
    else:
        pi = rd.sample_dirichlet(hp.weight_conc, rng)
        with np.errstate(divide="ignore"):
            log_mix = np.tile(np.log(pi), (m, 1))
    z = _categorical_rows(log_mix, rng)

    beta = theta[z] + np.sqrt(lam2[z])[:, :, None] * rng.standard_normal((m, D, p))
    mu0 = np.sqrt(hp.intercept_mean_var) * rng.standard_normal(D)
    sig0_sq = rd.sample_invgamma(hp.intercept_var_shape, hp.intercept_var_scale, rng,
                                 size=D)
    beta0 = mu0[None, :] + np.sqrt(sig0_sq)[None, :] * rng.standard_normal((m, D))
    Sigma = np.empty((m, D, D))
    for i in range(m):
        if mode.endswith("-ind"):
            Sigma[i] = np.diag(
                rd.sample_invgamma(hp.error_var_shape, hp.error_var_scale, rng, size=D)
            )
        else:
            Sigma[i] = rd.sample_invwishart(hp.error_df, hp.error_scale, rng)
    return ChainState(z=z, theta=theta, tau2=tau2, lam2=lam2, b_tau=b_tau, beta=beta,
                      beta0=beta0, Sigma=Sigma, mu=mu, mu0=mu0, sig0_sq=sig0_sq,
                      pi=pi, alpha=alpha)


def resample_curves(state, data, ctx, rng):
    """Redraw every curve matrix from the observation model at the state."""
    for i in range(data.m):
        H = ctx.design(data.n[i])
        mean = state.beta0[i][None, :] + H @ state.beta[i].T
        L = np.linalg.cholesky(state.Sigma[i])
        data.Y[i] = mean + rng.standard_normal((data.n[i], data.D)) @ L.T
    return data


# ---------------------------------------------------------------------------
# the chain driver
# ---------------------------------------------------------------------------


def run_chain(data, hp, *, mode="mfrmmx", covariates=False, schedule=None, rng=None,
              init=None, adapt=None):
    """Run one MCMC chain and return its recorded draws.

    data:       CurveData with the observed curves (and covariates, if used)
    hp:         Hyperparams
    mode:       one of mfrmmx | mfrmmx-ind | mfppmx | mfppmx-ind
    covariates: route covariates into the weights (mixture) or similarity
                (ppmx); when False any covariates in `data` are ignored
    schedule:   SamplerSchedule
    rng:        numpy Generator or integer seed
    init:       optional ChainState to start from (copied); default builds the
                k-means-based starting point
    adapt:      MhAdaptation settings (repulsive modes only)

    Any exception inside a step aborts the chain with a SamplerError naming
    the iteration and step.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    if covariates and not data.has_covariates:
        raise ValueError("covariates=True but the data carry none")
    if schedule is None:
        schedule = SamplerSchedule(n_burn=1000, n_keep=1000)
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    if not covariates and data.has_covariates:
        data = CurveData(data.Y, None, None, ids=data.ids)

    ctx = ModelContext(data, hp)
    state = init.copy() if init is not None else initial_state(data, hp, mode,
                                                               covariates, rng)
    mixture = not mode.startswith("mfppmx")
    use_rep = mixture and bool(np.any(hp.repulsion > 0))
    stick_X = data.stick_design() if (mixture and covariates) else None

    dist_cache = None
    mh = None
    if use_rep:
        cfg = RepulsionConfig(hp.repulsion, ctx.dist_design, hp.repulsion_power,
                              hp.distance_exponent)
        dist_cache = DistanceCache(state.theta, cfg)
        mh = _MhRuntime(adapt if adapt is not None else MhAdaptation(), data.D)

    n_keep, thin = schedule.n_keep, schedule.thin
    rec_z = np.empty((n_keep, data.m), dtype=int)
    rec_ll = np.empty((n_keep, data.m))
    rec_J = np.empty(n_keep, dtype=int)
    rec_btau = np.empty(n_keep)
    rec_theta, rec_tau2, rec_lam2 = [], [], []
    rec_weights = [] if mixture else None
    move_log = []
    kept = 0

    step = "setup"
    for t in range(schedule.n_iter):
        try:
            step = "split-merge"
            if schedule.split_merge_per_iter:
                log_mix = log_mixing_weights(state, data, stick_X) if mixture else None
                for _ in range(schedule.split_merge_per_iter):
                    rec = propose_split_merge(
                        state, data, ctx, rng, mode=mode, logW=log_mix,
                        n_scans=schedule.gibbs_scans_in_launch,
                        update_params=True, dist_cache=dist_cache,
                    )
                    move_log.append(MoveStat(t, rec.kind, rec.accepted, rec.log_ratio))

            step = "allocation"
            alloc = compute_alloc_info(state, data, ctx)
            log_mix = log_mixing_weights(state, data, stick_X) if mixture else None
            step_allocation(state, data, ctx, rng, mode, alloc, log_mix)

            if mixture:
                step = "weights"
                step_weights(state, data, ctx, rng, covariates, stick_X)

            step = "component-curves"
            step_theta(state, data, ctx, rng, mode, alloc, mh=mh, dist_cache=dist_cache)
            if mh is not None and t < schedule.n_adapt and (t + 1) % mh.cfg.window == 0:
                mh.adapt()

            step = "coefficients"
            step_coefficients(state, data, ctx, rng, alloc)

            step = "tau2"
            step_tau2(state, ctx, rng)
            step = "lam2"
            step_lam2(state, ctx, rng)
            step = "b-tau"
            step_b_tau(state, ctx, rng)
            step = "component-mean"
            step_mu(state, ctx, rng)
            step = "levels"
            step_beta0(state, data, ctx, rng)
            step = "error-cov"
            step_error_cov(state, data, ctx, rng, mode)
            step = "level-mean"
            step_mu0(state, data, ctx, rng)
            step = "level-var"
            step_sig0(state, data, ctx, rng)

            if t >= schedule.n_burn and (t - schedule.n_burn) % thin == thin - 1:
                step = "record"
                rec_z[kept] = state.z
                rec_ll[kept] = loglik_all(state, data, ctx)
                rec_J[kept] = state.n_components
                rec_btau[kept] = state.b_tau
                rec_theta.append(state.theta.copy())
                rec_tau2.append(state.tau2.copy())
                rec_lam2.append(state.lam2.copy())
                if mixture:
                    rec_weights.append(
                        state.pi.copy() if state.pi is not None else state.alpha.copy()
                    )
                kept += 1
        except Exception as exc:
            raise SamplerError(
                f"iteration {t}, step '{step}': {type(exc).__name__}: {exc}"
            ) from exc

    return PosteriorDraws(
        mode=mode,
        covariates=covariates,
        z=rec_z,
        loglik=rec_ll,
        n_components=rec_J,
        b_tau=rec_btau,
        theta=rec_theta,
        tau2=rec_tau2,
        lam2=rec_lam2,
        weights=rec_weights,
        move_log=move_log,
        mh_eps=None if mh is None else mh.eps.copy(),
        mh_accept_rate=None if mh is None else mh.accept_rate(),
        final_state=state,
        schedule=schedule,
    )
