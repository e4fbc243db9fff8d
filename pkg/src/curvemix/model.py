"""Data containers, model state, likelihood, and the joint log-prior.

The observation model, per individual i with n_i time points and D
dimensions:

    Y_i = 1 beta0_i' + H_i B_i + E_i,   vec(E_i) ~ N(0, Sigma_i kron I_{n_i})

where H_i is the cubic B-spline design on rescaled time, B_i = [beta_i1 ...
beta_iD] holds the individual coefficient vectors, beta0_i the per-dimension
levels, and Sigma_i the D x D error covariance (diagonal in the independent
variants).

The clustering layer places beta_id ~ N(theta_{z_i,d}, lam2_{z_i,d} I_p);
component curve coefficients theta_jd carry a smoothing prior
N(mu_d, tau2_jd K^{-1}) with the random-walk penalty K, optionally tied
together by a repulsive factor. Mixture weights are either Dirichlet,
covariate-dependent logit stick-breaking, or replaced by a product-partition
prior in the baseline modes.

vec() convention everywhere: dimension-major. vec(Theta_j) stacks theta_j1,
..., theta_jD, so a Kronecker product A kron B acts with A indexing
dimensions and B indexing basis coefficients.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.cluster.vq import kmeans2
from scipy.linalg.lapack import dpotrf as _dpotrf, dpotrs as _dpotrs, dtrtrs as _dtrtrs
from scipy.stats import gamma as gamma_dist, invgamma

from curvemix import randdist as rd
from curvemix.basis import build_centered_design, build_design, build_penalty

MODES = ("mfrmmx", "mfrmmx-ind", "mfppmx", "mfppmx-ind")


def _as_dim_array(x, D, name):
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        arr = np.full(D, float(arr))
    if arr.shape != (D,):
        raise ValueError(f"{name} must be scalar or length-{D}, got shape {arr.shape}")
    return arr


@dataclass
class Hyperparams:
    """Fixed model constants. Array-valued entries accept scalars (broadcast)."""

    n_coef: int                      # B-spline coefficients per curve (p)
    n_components: int                # mixture truncation level (ignored by ppmx modes)
    n_dims: int                      # response dimensions (D)
    lam_sd_bound: np.ndarray = 10.0  # A_d: sqrt(lam2_jd) ~ U(0, A_d)
    repulsion: np.ndarray = 0.0      # phi_d >= 0, per dimension
    repulsion_power: float = 2.0     # decay exponent on inverse distance
    distance_exponent: float = 2.0   # q in the curve distance
    tau_shape: float = 1.0           # tau2_jd ~ IG(tau_shape, tau_rate)
    tau_rate_shape: float = 1.0      # tau_rate ~ Gamma(shape, rate), rate param.
    tau_rate_rate: float = 0.1
    comp_mean_var: float = 1.0e4     # mu_d ~ N(0, comp_mean_var I)
    intercept_mean_var: float = 1.0e4    # mu_0d ~ N(0, intercept_mean_var)
    intercept_var_shape: float = 1.0     # sig0_sq_d ~ IG(shape, scale)
    intercept_var_scale: float = 1.0
    error_df: float = 1.0            # Sigma_i ~ IW(error_scale, error_df)
    error_scale: np.ndarray | None = None  # D x D scale, default identity
    error_var_shape: float = 1.0     # independent mode: sig2_id ~ IG(shape, scale)
    error_var_scale: float = 1.0
    weight_conc: np.ndarray | None = None  # Dirichlet conc., default 1/J each
    alpha_mean: np.ndarray | None = None   # stick-breaking coefficient prior mean
    alpha_cov: np.ndarray | None = None    # ... and covariance (default 25 I)
    cohesion_mass: float = 1.0       # ppmx cohesion c(S) = mass * (|S|-1)!
    cat_sim_conc: float = 1.0        # Dirichlet-multinomial similarity concentration
    dist_grid: int | None = None     # grid length for the curve distance (default max n_i)

    def __post_init__(self):
        D = self.n_dims
        self.lam_sd_bound = _as_dim_array(self.lam_sd_bound, D, "lam_sd_bound")
        self.repulsion = _as_dim_array(self.repulsion, D, "repulsion")
        if np.any(self.lam_sd_bound <= 0):
            raise ValueError("lam_sd_bound must be positive")
        if np.any(self.repulsion < 0):
            raise ValueError("repulsion must be nonnegative")
        if self.error_scale is None:
            self.error_scale = np.eye(D)
        else:
            self.error_scale = np.asarray(self.error_scale, dtype=float)
            if self.error_scale.shape != (D, D):
                raise ValueError("error_scale must be D x D")
        if self.weight_conc is None:
            J = self.n_components
            self.weight_conc = np.full(J, 1.0 / J)
        else:
            self.weight_conc = np.asarray(self.weight_conc, dtype=float)
            if self.weight_conc.ndim == 0:
                self.weight_conc = np.full(self.n_components, float(self.weight_conc))

    def alpha_prior(self, n_cov):
        mean = np.zeros(n_cov) if self.alpha_mean is None else np.asarray(self.alpha_mean, float)
        cov = 25.0 * np.eye(n_cov) if self.alpha_cov is None else np.asarray(self.alpha_cov, float)
        if mean.shape != (n_cov,) or cov.shape != (n_cov, n_cov):
            raise ValueError("alpha prior dimensions do not match the covariate design")
        return mean, cov


class CurveData:
    """Observed curves plus (optional) covariates.

    curves: list of (n_i, D) arrays, one per individual.
    cov_cont: (m, n_cont) continuous covariates, or None.
    cov_cat: (m, n_cat) integer-coded categorical covariates, or None.
    """

    def __init__(self, curves, cov_cont=None, cov_cat=None, ids=None):
        self.Y = [np.atleast_2d(np.asarray(y, dtype=float)) for y in curves]
        self.m = len(self.Y)
        if self.m == 0:
            raise ValueError("no individuals")
        self.D = self.Y[0].shape[1]
        for i, y in enumerate(self.Y):
            if y.ndim != 2 or y.shape[1] != self.D:
                raise ValueError(f"individual {i}: expected (n_i, {self.D}) curve matrix")
            if not np.all(np.isfinite(y)):
                raise ValueError(f"individual {i}: non-finite observations")
        self.n = np.array([y.shape[0] for y in self.Y])
        self.ids = list(ids) if ids is not None else list(range(self.m))
        self.cov_cont = None if cov_cont is None else np.atleast_2d(np.asarray(cov_cont, float))
        self.cov_cat = None if cov_cat is None else np.atleast_2d(np.asarray(cov_cat))
        for name, c in (("cov_cont", self.cov_cont), ("cov_cat", self.cov_cat)):
            if c is not None and c.shape[0] != self.m:
                raise ValueError(f"{name} must have one row per individual")

    @property
    def has_covariates(self):
        return self.cov_cont is not None or self.cov_cat is not None

    def cont_standardized(self):
        """Continuous covariates centered and scaled to unit variance."""
        x = self.cov_cont
        sd = x.std(axis=0, ddof=0)
        sd = np.where(sd > 0, sd, 1.0)
        return (x - x.mean(axis=0)) / sd

    def cat_levels(self):
        """Per categorical covariate, the sorted list of observed levels."""
        return [np.unique(self.cov_cat[:, k]) for k in range(self.cov_cat.shape[1])]

    def stick_design(self):
        """Design matrix for the logit stick-breaking weights.

        Intercept, standardized continuous covariates, and one-hot indicators
        for all but the first level of each categorical covariate.
        """
        cols = [np.ones((self.m, 1))]
        if self.cov_cont is not None:
            cols.append(self.cont_standardized())
        if self.cov_cat is not None:
            for k, levels in enumerate(self.cat_levels()):
                for lev in levels[1:]:
                    cols.append((self.cov_cat[:, k] == lev).astype(float)[:, None])
        return np.hstack(cols)


@dataclass
class ChainState:
    """One imputation of every model unknown.

    Component-indexed arrays have length J = the truncation level (mixture
    modes) or the current number of occupied clusters (ppmx modes).
    """

    z: np.ndarray          # (m,) int allocations
    theta: np.ndarray      # (J, D, p) component curve coefficients
    tau2: np.ndarray       # (J, D) smoothing variances
    lam2: np.ndarray       # (J, D) within-cluster coefficient variances
    b_tau: float           # random IG rate of the tau2 prior
    beta: np.ndarray       # (m, D, p) individual coefficients
    beta0: np.ndarray      # (m, D) individual levels
    Sigma: np.ndarray      # (m, D, D) error covariances
    mu: np.ndarray         # (D, p) prior means of component coefficients
    mu0: np.ndarray        # (D,) prior means of levels
    sig0_sq: np.ndarray    # (D,) prior variances of levels
    pi: np.ndarray | None = None     # (J,) weights (no-covariate mixture modes)
    alpha: np.ndarray | None = None  # (J, L) stick-breaking coefficients (last row unused)

    def copy(self):
        return ChainState(
            z=self.z.copy(),
            theta=self.theta.copy(),
            tau2=self.tau2.copy(),
            lam2=self.lam2.copy(),
            b_tau=self.b_tau,
            beta=self.beta.copy(),
            beta0=self.beta0.copy(),
            Sigma=self.Sigma.copy(),
            mu=self.mu.copy(),
            mu0=self.mu0.copy(),
            sig0_sq=self.sig0_sq.copy(),
            pi=None if self.pi is None else self.pi.copy(),
            alpha=None if self.alpha is None else self.alpha.copy(),
        )

    @property
    def n_components(self):
        return self.theta.shape[0]

    def vec_theta(self, j):
        return self.theta[j].reshape(-1)

    def comp_counts(self):
        return np.bincount(self.z, minlength=self.n_components)


class ModelContext:
    """Per-fit precomputations shared by every sampler step."""

    def __init__(self, data: CurveData, hp: Hyperparams):
        p = hp.n_coef
        self.hp = hp
        self.penalty = build_penalty(p)
        self.penalty_chol = np.asfortranarray(np.linalg.cholesky(self.penalty))
        self.penalty_logdet = 2.0 * np.log(np.diag(self.penalty_chol)).sum()
        # one design per distinct sequence length
        self.designs = {}
        self.grams = {}
        for n in np.unique(data.n):
            H = build_design(int(n), p)
            self.designs[int(n)] = H
            self.grams[int(n)] = H.T @ H
        n_grid = hp.dist_grid if hp.dist_grid is not None else int(data.n.max())
        self.dist_design = build_centered_design(n_grid, p)

    def design(self, n):
        return self.designs[int(n)]

    def gram(self, n):
        return self.grams[int(n)]


def loglik_individual(Y_i, H_i, beta0_i, beta_i, Sigma_i):
    """Matrix-normal log-likelihood of one individual's curve matrix."""
    E = Y_i - beta0_i[None, :] - H_i @ beta_i.T
    n, D = E.shape
    L = rd.chol_lower(Sigma_i)
    logdet = 2.0 * np.log(np.diag(L)).sum()
    tr = np.trace(_dpotrs(L, E.T @ E, lower=1)[0])
    return -0.5 * n * D * rd.LOG2PI - 0.5 * n * logdet - 0.5 * tr


def loglik_all(state: ChainState, data: CurveData, ctx: ModelContext):
    """(m,) log-likelihood of each individual at the current state."""
    out = np.empty(data.m)
    for i in range(data.m):
        out[i] = loglik_individual(
            data.Y[i], ctx.design(data.n[i]), state.beta0[i], state.beta[i], state.Sigma[i]
        )
    return out


def alloc_quantities(Y_i, H_i, G_i, beta0_i, Sigma_i):
    """(P_base, c) for the coefficient-marginalized component weights of one
    individual: P_base = Sigma_i^{-1} kron (H_i' H_i) and c the matching
    information vector of the level-corrected data."""
    L = rd.chol_lower(Sigma_i)
    Sigma_inv = _dpotrs(L, np.eye(Sigma_i.shape[0]), lower=1)[0]
    P_base = np.kron(Sigma_inv, G_i)
    R = Y_i - beta0_i[None, :]
    c = (H_i.T @ R @ Sigma_inv).T.reshape(-1)
    return P_base, c


def marginal_logweight(P_base, c, theta_j, lam2_j):
    """Log weight of one component for one individual, with the individual's
    coefficient matrix integrated out.

    Equals, up to an additive constant shared by all components,
    log N(data slice; component curve, spread + error covariance).
    """
    D, p = theta_j.shape
    laminv = np.repeat(1.0 / lam2_j, p)
    P = P_base.copy(order="F")
    np.einsum("ii->i", P)[:] += laminv
    m = c + laminv * theta_j.reshape(-1)
    L = rd.chol_lower(P, overwrite_a=True)
    u, _ = _dtrtrs(L, m, lower=1, trans=0, overwrite_b=1)
    logdet_P = 2.0 * np.log(np.einsum("ii->i", L)).sum()
    return 0.5 * (
        -p * np.log(lam2_j).sum()
        - float(((theta_j ** 2).sum(axis=1) / lam2_j).sum())
        - logdet_P
        + float(u @ u)
    )


def _gauss_pen_logpdf(x, mean, var, K, K_logdet):
    """log N(x; mean, var * K^{-1}) for the penalty precision K."""
    d = x - mean
    p = len(x)
    return -0.5 * p * (rd.LOG2PI + np.log(var)) + 0.5 * K_logdet - 0.5 * (d @ K @ d) / var


def logprior_state(state, data, ctx, mode="mfrmmx"):
    """Joint log-prior of every unknown in the state (data enters only via z).

    For ppmx modes the partition factor is the unnormalized cohesion x
    similarity product, whose constant cancels in any ratio of states. The
    same applies when the error-covariance prior is improper (df <= D - 1):
    the inverse-Wishart term is then unnormalized, so only differences of
    this function across states are meaningful.
    """
    from curvemix import ppmx as ppmx_mod
    from curvemix import repulsion as rep_mod
    from curvemix import weights as weights_mod

    hp = ctx.hp
    J = state.n_components
    D, p = hp.n_dims, hp.n_coef
    K, K_logdet = ctx.penalty, ctx.penalty_logdet
    total = 0.0

    # allocation + weight layer
    if mode.startswith("mfppmx"):
        total += ppmx_mod.log_partition_prior(state.z, data, hp)
    elif state.alpha is not None:
        lw = weights_mod.log_weight_matrix(state.alpha, data.stick_design())
        total += lw[np.arange(data.m), state.z].sum()
        a_mean, a_cov = hp.alpha_prior(state.alpha.shape[1])
        a_prec = np.linalg.inv(a_cov)
        for j in range(J - 1):
            total += rd.mvn_logpdf_prec(state.alpha[j], a_mean, a_prec)
    else:
        total += np.log(state.pi[state.z]).sum()
        total += rd.dirichlet_logpdf(state.pi, hp.weight_conc)

    # component curve coefficients, their variances, and repulsion
    for j in range(J):
        for d in range(D):
            total += _gauss_pen_logpdf(
                state.theta[j, d], state.mu[d], state.tau2[j, d], K, K_logdet
            )
            total += rd.invgamma_logpdf(state.tau2[j, d], hp.tau_shape, state.b_tau)
            total += rd.sqrt_uniform_logpdf(state.lam2[j, d], hp.lam_sd_bound[d])
    if not mode.startswith("mfppmx"):
        for d in range(D):
            if hp.repulsion[d] > 0:
                total += rep_mod.log_repulsion(
                    state.theta[:, d, :],
                    ctx.dist_design,
                    hp.repulsion[d],
                    hp.repulsion_power,
                    hp.distance_exponent,
                )
    total += rd.gamma_logpdf_rate(state.b_tau, hp.tau_rate_shape, hp.tau_rate_rate)

    # component mean hyperpriors
    for d in range(D):
        total += -0.5 * p * (rd.LOG2PI + np.log(hp.comp_mean_var))
        total += -0.5 * state.mu[d] @ state.mu[d] / hp.comp_mean_var

    # individual coefficients around their component
    for i in range(data.m):
        j = state.z[i]
        for d in range(D):
            diff = state.beta[i, d] - state.theta[j, d]
            lv = state.lam2[j, d]
            total += -0.5 * p * (rd.LOG2PI + np.log(lv)) - 0.5 * diff @ diff / lv

    # levels and their hyperpriors
    for d in range(D):
        diff = state.beta0[:, d] - state.mu0[d]
        total += (-0.5 * (rd.LOG2PI + np.log(state.sig0_sq[d])) * data.m
                  - 0.5 * (diff @ diff) / state.sig0_sq[d])
        total += -0.5 * (rd.LOG2PI + np.log(hp.intercept_mean_var))
        total += -0.5 * state.mu0[d] ** 2 / hp.intercept_mean_var
        total += rd.invgamma_logpdf(
            state.sig0_sq[d], hp.intercept_var_shape, hp.intercept_var_scale
        )

    # error covariances
    if mode.endswith("-ind"):
        for i in range(data.m):
            for d in range(D):
                total += rd.invgamma_logpdf(
                    state.Sigma[i, d, d], hp.error_var_shape, hp.error_var_scale
                )
    else:
        for i in range(data.m):
            total += rd.invwishart_logpdf(state.Sigma[i], hp.error_df, hp.error_scale)
    return total


def sample_prior_component(hp, mu, b_tau, rng, K_chol):
    """Draw (theta_d, tau2_d, lam2_d) for one fresh component from its prior.

    Repulsion is deliberately ignored here: prior draws for vacated or
    candidate components always come from the independent part of the prior.
    """
    D, p = hp.n_dims, hp.n_coef
    theta = np.empty((D, p))
    tau2 = rd.sample_invgamma(hp.tau_shape, b_tau, rng, size=D)
    lam2 = np.array([rd.sample_sqrt_uniform(hp.lam_sd_bound[d], rng) for d in range(D)])
    for d in range(D):
        z = rng.standard_normal(p)
        theta[d] = mu[d] + np.sqrt(tau2[d]) * _dtrtrs(
            K_chol, z, lower=1, trans=1, overwrite_b=1
        )[0]
    return theta, tau2, lam2


def initial_state(data: CurveData, hp: Hyperparams, mode, covariates, rng) -> ChainState:
    """Deterministic-given-rng starting point.

    Allocations come from k-means on the stacked per-individual ridge
    coefficients with k = min(n_components, ceil(m/4)); component centers are
    the cluster means; every scalar variance starts at its prior median.
    """
    m, D, p = data.m, hp.n_dims, hp.n_coef
    ctx_designs = {int(n): build_design(int(n), p) for n in np.unique(data.n)}
    K = build_penalty(p)

    beta0 = np.array([y.mean(axis=0) for y in data.Y])
    beta = np.empty((m, D, p))
    for i in range(m):
        H = ctx_designs[int(data.n[i])]
        A = H.T @ H + 0.1 * K
        rhs = H.T @ (data.Y[i] - beta0[i][None, :])
        beta[i] = np.linalg.solve(A, rhs).T

    k = max(1, min(hp.n_components, -(-m // 4)))
    if k == 1 or m == 1:
        labels = np.zeros(m, dtype=int)
    else:
        _, labels = kmeans2(beta.reshape(m, D * p), k, minit="++", seed=rng)
    if mode.startswith("mfppmx"):
        # Dynamic label space: compact so every component is occupied.
        _, z = np.unique(labels, return_inverse=True)
        J = int(z.max()) + 1
    else:
        J = hp.n_components
        z = labels.astype(int)

    b_tau = float(gamma_dist.median(hp.tau_rate_shape, scale=1.0 / hp.tau_rate_rate))
    tau2 = np.full((J, D), float(invgamma.median(hp.tau_shape, scale=b_tau)))
    lam2 = np.tile((hp.lam_sd_bound / 2.0) ** 2, (J, 1))

    theta = np.empty((J, D, p))
    overall = beta.mean(axis=0)
    K_chol = np.linalg.cholesky(K)
    for j in range(J):
        members = np.flatnonzero(z == j)
        if len(members):
            theta[j] = beta[members].mean(axis=0)
        else:
            # Empty component: draw the center around the overall coefficient
            # mean so centers stay distinct (coincident centers have zero
            # density under a repulsive prior).
            for d in range(D):
                eps = _dtrtrs(
                    K_chol, rng.standard_normal(p), lower=1, trans=1, overwrite_b=1
                )[0]
                theta[j, d] = overall[d] + np.sqrt(tau2[j, d]) * eps

    if mode.endswith("-ind"):
        s2 = float(invgamma.median(hp.error_var_shape, scale=hp.error_var_scale))
        Sigma = np.tile(s2 * np.eye(D), (m, 1, 1))
    else:
        scale = np.eye(D) if hp.error_scale is None else np.asarray(hp.error_scale, float)
        Sigma = np.tile(scale, (m, 1, 1))

    state = ChainState(
        z=z,
        theta=theta,
        tau2=tau2,
        lam2=lam2,
        b_tau=b_tau,
        beta=beta,
        beta0=beta0,
        Sigma=Sigma,
        mu=theta.mean(axis=0),
        mu0=beta0.mean(axis=0),
        sig0_sq=np.full(D, float(invgamma.median(hp.intercept_var_shape, scale=hp.intercept_var_scale))),
    )
    if mode.startswith("mfrmmx"):
        if covariates:
            L = data.stick_design().shape[1]
            state.alpha = np.zeros((J, L))
        else:
            state.pi = np.full(J, 1.0 / J)
    return state
