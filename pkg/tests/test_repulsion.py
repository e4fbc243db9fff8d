import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from curvemix import repulsion as rep
from curvemix.basis import build_centered_design


def make_cfg(phi=1.0, n=20, p=5, nu=2.0, q=2.0):
    return rep.RepulsionConfig(phi=np.atleast_1d(phi), Hdist=build_centered_design(n, p), nu=nu, q=q)


def test_distance_trivial_cases():
    cfg = make_cfg()
    th = np.arange(5.0)
    assert rep.curve_distance(th, th, cfg) == 0.0
    other = th + np.array([0.3, -1.0, 2.0, 0.0, 0.1])
    assert rep.curve_distance(th, other, cfg) == pytest.approx(
        rep.curve_distance(other, th, cfg)
    )


def test_distance_hand_case():
    # 2x2 explicit design, unit difference in the first coefficient
    cfg = rep.RepulsionConfig(phi=np.array([1.0]), Hdist=np.array([[0.5, -0.5], [-0.5, 0.5]]))
    got = rep.curve_distance(np.array([1.0, 0.0]), np.array([0.0, 0.0]), cfg)
    assert got == pytest.approx(0.5, abs=1e-15)


def test_log_factor_trivial_and_hand_cases():
    cfg = make_cfg(phi=0.0)
    rng = np.random.default_rng(0)
    assert rep.log_repulsive_factor(rng.standard_normal((4, 5)), cfg) == 0.0
    cfg = make_cfg(phi=1.0)
    assert rep.log_repulsive_factor(rng.standard_normal((1, 5)), cfg) == 0.0  # no pairs

    # J=2 at a known distance: log h = -phi / dist^2
    cfg2 = rep.RepulsionConfig(phi=np.array([1.0]), Hdist=np.array([[0.5, -0.5], [-0.5, 0.5]]))
    theta = np.array([[1.0, 0.0], [0.0, 0.0]])
    assert rep.log_repulsive_factor(theta, cfg2) == pytest.approx(-1.0 / 0.25)


def test_log_factor_permutation_invariant():
    rng = np.random.default_rng(3)
    cfg = make_cfg(phi=0.7)
    theta = rng.standard_normal((6, 5))
    base = rep.log_repulsive_factor(theta, cfg)
    for _ in range(4):
        perm = rng.permutation(6)
        assert rep.log_repulsive_factor(theta[perm], cfg) == pytest.approx(base, rel=1e-12)


def test_log_factor_increases_when_curves_spread():
    rng = np.random.default_rng(4)
    cfg = make_cfg(phi=2.0)
    theta = rng.standard_normal((5, 5))
    assert rep.log_repulsive_factor(2.0 * theta, cfg) > rep.log_repulsive_factor(theta, cfg)


def test_coincident_pair_gets_sentinel_penalty():
    cfg = make_cfg(phi=1.0)
    theta = np.zeros((2, 5))
    # floored distance gives a huge negative value rather than an error
    val = rep.log_repulsive_factor(theta, cfg)
    assert val <= -1.0 / cfg.epsilon_floor ** cfg.nu * 0.99
    assert np.isfinite(val)


def test_delta_trivial():
    rng = np.random.default_rng(5)
    cfg = make_cfg(phi=1.3)
    theta = rng.standard_normal((5, 5))
    assert rep.log_repulsion_delta(theta, 2, theta[2], cfg) == 0.0
    cfg0 = make_cfg(phi=0.0)
    assert rep.log_repulsion_delta(theta, 2, rng.standard_normal(5), cfg0) == 0.0


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_delta_matches_full_recomputation(seed):
    rng = np.random.default_rng(seed)
    cfg = make_cfg(phi=float(rng.uniform(0.1, 5.0)))
    theta = rng.standard_normal((5, 5))
    j = int(rng.integers(0, 5))
    new = rng.standard_normal(5)
    full_old = rep.log_repulsive_factor(theta, cfg)
    theta_new = theta.copy()
    theta_new[j] = new
    full_new = rep.log_repulsive_factor(theta_new, cfg)
    delta = rep.log_repulsion_delta(theta, j, new, cfg)
    assert delta == pytest.approx(full_new - full_old, abs=1e-10)


def test_cache_tracks_updates_and_deltas():
    rng = np.random.default_rng(9)
    J, D, p = 5, 3, 6
    cfg = rep.RepulsionConfig(
        phi=rng.uniform(0.2, 2.0, size=D), Hdist=build_centered_design(25, p)
    )
    theta = rng.standard_normal((J, D, p))
    cache = rep.DistanceCache(theta, cfg)

    for d in range(D):
        assert cache.log_h(d) == pytest.approx(
            rep.log_repulsive_factor(theta[:, d, :], cfg, dim=d), rel=1e-12
        )

    new_theta2 = rng.standard_normal((D, p))
    deltas = cache.delta_component(2, new_theta2)
    theta_new = theta.copy()
    theta_new[2] = new_theta2
    for d in range(D):
        expected = rep.log_repulsive_factor(theta_new[:, d, :], cfg, dim=d) - rep.log_repulsive_factor(
            theta[:, d, :], cfg, dim=d
        )
        assert deltas[d] == pytest.approx(expected, abs=1e-10)

    cache.set_component(2, new_theta2)
    for d in range(D):
        assert cache.log_h(d) == pytest.approx(
            rep.log_repulsive_factor(theta_new[:, d, :], cfg, dim=d), rel=1e-12
        )


def test_cache_pairs_involving_matches_bruteforce():
    rng = np.random.default_rng(10)
    J, D, p = 6, 2, 5
    cfg = rep.RepulsionConfig(phi=np.array([0.8, 1.6]), Hdist=build_centered_design(22, p))
    theta = rng.standard_normal((J, D, p))
    cache = rep.DistanceCache(theta, cfg)
    comps = [1, 4]
    override = {1: rng.standard_normal((D, p))}

    got = cache.log_pairs_involving(comps, override)

    theta_mod = theta.copy()
    theta_mod[1] = override[1]
    for d in range(D):
        acc = 0.0
        curves = theta_mod[:, d, :] @ cfg.Hdist.T
        for j in range(1, J):
            for l in range(j):
                if j in comps or l in comps:
                    dist = max(
                        np.sqrt(np.mean((curves[j] - curves[l]) ** 2)), cfg.epsilon_floor
                    )
                    acc += dist ** (-cfg.nu)
        assert got[d] == pytest.approx(-cfg.strength(d) * acc, abs=1e-10)
