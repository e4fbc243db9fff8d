"""Mixing weights: Dirichlet, and covariate-dependent logit stick-breaking.

The stick-breaking construction with a finite truncation J sets

    pi_j(x) = sigmoid(x'a_j) * prod_{l<j} (1 - sigmoid(x'a_l)),   j < J
    pi_J(x) = prod_{l<J} (1 - sigmoid(x'a_l))

so the last component absorbs the leftover stick and the weights always sum
to one. The coefficient update is a Polya-Gamma augmented Gaussian draw: for
each j < J, omega_i ~ PG(1, x_i'a_j) for every individual still "in play"
(z_i >= j), then a_j from the resulting Gaussian full conditional.
"""

import numpy as np

from curvemix import randdist as rd


def log_weight_matrix(alpha, X):
    """(m, J) matrix of log pi_j(x_i); rows logsumexp to 0."""
    X = np.atleast_2d(X)
    eta = X @ alpha.T  # (m, J); last column ignored structurally
    log_sig = -np.logaddexp(0.0, -eta)
    log_one_minus = -np.logaddexp(0.0, eta)
    m, J = eta.shape
    out = np.empty((m, J))
    cum = np.zeros(m)
    for j in range(J - 1):
        out[:, j] = log_sig[:, j] + cum
        cum = cum + log_one_minus[:, j]
    out[:, J - 1] = cum
    return out


def weights_from_alpha(alpha, x):
    """Simplex of J weights for one covariate vector."""
    return np.exp(log_weight_matrix(alpha, np.atleast_2d(x))[0])


def update_alpha(alpha, z, X, prior_mean, prior_cov, rng):
    """One Gibbs pass over the stick-breaking coefficient rows.

    Row j's Gaussian full conditional, after augmenting with
    omega_i ~ PG(1, x_i'a_j) for {i : z_i >= j}:

        V^{-1} = sum omega_i x_i x_i' + Sigma0^{-1}
        m      = V (0.5 * (sum_{z_i=j} x_i - sum_{z_i>j} x_i) + Sigma0^{-1} mu0)

    Rows with nobody in play are redrawn from the prior. The last row is
    structurally unused and left untouched.
    """
    alpha = alpha.copy()
    J = alpha.shape[0]
    prior_prec = np.linalg.inv(prior_cov)
    prior_info = prior_prec @ prior_mean
    prior_chol = np.linalg.cholesky(prior_cov)
    for j in range(J - 1):
        in_play = np.flatnonzero(z >= j)
        if in_play.size == 0:
            alpha[j] = prior_mean + prior_chol @ rng.standard_normal(len(prior_mean))
            continue
        Xj = X[in_play]
        eta = Xj @ alpha[j]
        omega = np.array([rd.sample_polya_gamma_1(e, rng) for e in eta])
        kappa = np.where(z[in_play] == j, 0.5, -0.5)
        prec = (Xj * omega[:, None]).T @ Xj + prior_prec
        info = Xj.T @ kappa + prior_info
        alpha[j], _ = rd.sample_mvn_prec_info(info, prec, rng)
    return alpha


def update_pi_dirichlet(z, conc, rng, n_components=None):
    """Conjugate Dirichlet weight draw with counts added to the concentration."""
    J = n_components if n_components is not None else len(conc)
    counts = np.bincount(z, minlength=J)
    return rd.sample_dirichlet(np.asarray(conc) + counts, rng)
