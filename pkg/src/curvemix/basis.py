"""Cubic B-spline design matrices and the random-walk roughness penalty.

Curves are modeled on rescaled time t* = t/n, t = 1..n, so that every
individual lives on (0, 1] and knots can be shared regardless of sequence
length. The basis is the clamped cubic B-spline basis with equally spaced
inner knots; p coefficient functions require p - 4 inner knots (p >= 4).

The roughness penalty K is the first-order random-walk precision with a
proper first level:

    theta' K theta = theta_1^2 + sum_{l=2}^{p} (theta_l - theta_{l-1})^2

which is tridiagonal with diagonal (2, ..., 2, 1) and off-diagonal -1.
K is positive definite (not just semi-definite), so it can serve as a
Gaussian prior precision without further regularization.
"""

import numpy as np
from scipy.interpolate import BSpline

DEGREE = 3  # cubic


def _knots(p):
    """Clamped knot vector on [0, 1] for p cubic basis functions."""
    if p < DEGREE + 1:
        raise ValueError(
            f"cubic B-spline basis needs at least {DEGREE + 1} coefficients, got p={p}"
        )
    interior = np.linspace(0.0, 1.0, p - DEGREE + 1)[1:-1]
    return np.concatenate([np.zeros(DEGREE + 1), interior, np.ones(DEGREE + 1)])


def build_design(n, p):
    """n x p cubic B-spline design evaluated at t* = t/n, t = 1..n.

    Rows are evaluations at the rescaled time points; row sums are exactly 1
    (partition of unity on (0, 1]).
    """
    n = int(n)
    p = int(p)
    if n < p + 4:
        raise ValueError(f"need n >= p + 4 time points for p={p} basis functions, got n={n}")
    kv = _knots(p)
    tstar = np.arange(1, n + 1) / n
    H = BSpline.design_matrix(tstar, kv, DEGREE).toarray()
    return H


def build_centered_design(n, p):
    """Design with each column mean-centered, for curve-distance evaluation.

    Centering removes the level so distances between coefficient vectors
    compare curve shapes, not intercepts.
    """
    H = build_design(n, p)
    return H - H.mean(axis=0)


def build_penalty(p):
    """p x p first-order random-walk penalty with proper first level."""
    p = int(p)
    if p < 2:
        raise ValueError(f"penalty needs p >= 2, got p={p}")
    K = np.zeros((p, p))
    idx = np.arange(p)
    K[idx, idx] = 2.0
    K[p - 1, p - 1] = 1.0
    K[idx[:-1], idx[:-1] + 1] = -1.0
    K[idx[:-1] + 1, idx[:-1]] = -1.0
    return K
