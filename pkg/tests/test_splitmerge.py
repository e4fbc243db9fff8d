"""Tests for the split-merge move.

The key correctness anchors:

* evaluation-mode scans reproduce exactly the density that a sampling scan
  assigns to the values it drew (the forward/reverse bookkeeping is symmetric),
* the move's localized prior + coefficient-likelihood delta matches the full
  joint log-prior difference between the proposed and current states,
* the allocation-only variant is draw-for-draw identical to the general move
  with frozen parameters, and its kernel leaves an enumerable target invariant,
* repulsion enters the ratio exactly as the pairwise-penalty difference,
* rejected moves leave the state bit-identical, accepted ones apply the record.
"""

import itertools
import math
from collections import Counter

import numpy as np
import pytest

from curvemix import repulsion as rep
from curvemix.model import ChainState, CurveData, Hyperparams, ModelContext, logprior_state
from curvemix.splitmerge import (
    _Launch,
    _ScanCtx,
    _Targets,
    _iso_loglik,
    _scan,
    apply_move,
    frozen_partition_move,
    propose_split_merge,
)


def make_data(m=12, D=2, n=12, seed=0, covariates=False):
    rng = np.random.default_rng(seed)
    curves = [rng.standard_normal((n, D)) for _ in range(m)]
    if covariates:
        return CurveData(
            curves,
            cov_cont=rng.standard_normal((m, 1)),
            cov_cat=rng.integers(0, 2, size=(m, 1)),
        )
    return CurveData(curves)


def make_mixture(seed=1, J=4, m=12, D=2, p=4, phi=0.0, covariates=False, sep=1.5, noise=0.3):
    """A controlled mixture state: components 0..2 occupied, component 3 empty.

    `sep` scales the component centers and `noise` the coefficient scatter;
    small `sep` with large `noise` gives overlapping components whose moves
    actually get accepted.
    """
    data = make_data(m=m, D=D, covariates=covariates)
    hp = Hyperparams(
        n_coef=p,
        n_components=J,
        n_dims=D,
        lam_sd_bound=3.0,
        repulsion=phi,
        tau_shape=2.0,
        tau_rate_shape=2.0,
        tau_rate_rate=1.0,
    )
    ctx = ModelContext(data, hp)
    rng = np.random.default_rng(seed)
    z = np.array([0, 0, 0, 1, 1, 1, 2, 2, 2, 0, 1, 2])[:m]
    theta = sep * rng.standard_normal((J, D, p))
    state = ChainState(
        z=z.copy(),
        theta=theta,
        tau2=rng.uniform(0.5, 2.0, (J, D)),
        lam2=rng.uniform(0.2, 0.6, (J, D)),
        b_tau=1.3,
        beta=theta[z] + noise * rng.standard_normal((m, D, p)),
        beta0=rng.standard_normal((m, D)),
        Sigma=np.tile(np.eye(D), (m, 1, 1)),
        mu=0.3 * rng.standard_normal((D, p)),
        mu0=np.zeros(D),
        sig0_sq=np.ones(D),
    )
    if covariates:
        L = data.stick_design().shape[1]
        state.alpha = 0.5 * rng.standard_normal((J, L))
    else:
        state.pi = np.array([0.4, 0.3, 0.2, 0.1])
    return state, data, ctx


def make_ppmx(seed=2, m=10, D=2, p=4, sep=1.5, noise=0.3):
    data = make_data(m=m, D=D, covariates=True, seed=seed)
    hp = Hyperparams(n_coef=p, n_components=3, n_dims=D, lam_sd_bound=3.0)
    ctx = ModelContext(data, hp)
    rng = np.random.default_rng(seed)
    z = np.array([0, 0, 0, 0, 1, 1, 1, 2, 2, 2])[:m]
    theta = sep * rng.standard_normal((3, D, p))
    state = ChainState(
        z=z.copy(),
        theta=theta,
        tau2=rng.uniform(0.5, 2.0, (3, D)),
        lam2=rng.uniform(0.2, 0.6, (3, D)),
        b_tau=1.0,
        beta=theta[z] + noise * rng.standard_normal((m, D, p)),
        beta0=rng.standard_normal((m, D)),
        Sigma=np.tile(np.eye(D), (m, 1, 1)),
        mu=np.zeros((D, p)),
        mu0=np.zeros(D),
        sig0_sq=np.ones(D),
    )
    return state, data, ctx


def uniform_logW(state, m):
    return np.log(np.tile(np.asarray(state.pi), (m, 1)))


class TestScanSampleEvalSymmetry:
    """Eval mode must return exactly the density the sampling scan collected."""

    def _roundtrip(self, pair, update_z, mode="mfrmmx"):
        state, data, ctx = make_mixture(seed=4)
        logW = uniform_logW(state, data.m)
        sctx = _ScanCtx(state, data, ctx, mode, logW, True)
        i0, i1 = 0, 1
        S = [2, 9]
        S_all = S + [i0, i1]
        zs = state.z.copy()
        zs[i0] = pair[0]

        def params(lab):
            return state.theta[lab].copy(), state.tau2[lab].copy(), state.lam2[lab].copy()

        launch1 = _Launch(zs.copy(), pair, params)
        rng = np.random.default_rng(7)
        q1 = _scan(sctx, launch1, pair, S, rng, S_all, collect=True, update_z=update_z)

        tgt = _Targets(
            theta={lab: launch1.theta[lab].copy() for lab in pair},
            tau2={lab: launch1.tau2[lab].copy() for lab in pair},
            lam2={lab: launch1.lam2[lab].copy() for lab in pair},
            z=launch1.z.copy(),
        )
        launch2 = _Launch(zs.copy(), pair, params)
        q2 = _scan(sctx, launch2, pair, S, None, S_all, targets=tgt, update_z=update_z)

        assert q1 == pytest.approx(q2, abs=1e-10)
        for lab in pair:
            np.testing.assert_array_equal(launch2.theta[lab], launch1.theta[lab])
            np.testing.assert_array_equal(launch2.tau2[lab], launch1.tau2[lab])
            np.testing.assert_array_equal(launch2.lam2[lab], launch1.lam2[lab])
        np.testing.assert_array_equal(launch2.z, launch1.z)

    def test_two_component_scan_with_reallocation(self):
        self._roundtrip(pair=(3, 0), update_z=True)

    def test_single_component_scan(self):
        self._roundtrip(pair=(0,), update_z=False)

    def test_scan_consumes_no_rng_in_eval_mode(self):
        # passing rng=None would raise if eval mode ever drew from it
        self._roundtrip(pair=(3, 0), update_z=True)


class TestFrozenEquivalence:
    def test_frozen_matches_general_draw_for_draw(self):
        state, data, ctx = make_mixture(seed=3, sep=0.3, noise=0.6)
        J = state.n_components
        logW = uniform_logW(state, data.m)
        iso = np.empty((data.m, J))
        for i in range(data.m):
            for j in range(J):
                iso[i, j] = _iso_loglik(state.beta[i], state.theta[j], state.lam2[j])
        logw = logW + iso

        st_gen = state.copy()
        z_lean = state.z.copy()
        r1 = np.random.default_rng(42)
        r2 = np.random.default_rng(42)
        n_acc = 0
        kinds = set()
        for _ in range(300):
            rec = propose_split_merge(
                st_gen, data, ctx, r1, mode="mfrmmx", logW=logW, update_params=False, n_scans=4
            )
            acc = frozen_partition_move(z_lean, logw, r2, n_scans=4)
            assert acc == rec.accepted
            np.testing.assert_array_equal(st_gen.z, z_lean)
            if rec.accepted:
                n_acc += 1
                kinds.add(rec.kind)
        # parameters must never move in frozen mode
        np.testing.assert_array_equal(st_gen.theta, state.theta)
        np.testing.assert_array_equal(st_gen.lam2, state.lam2)
        assert n_acc > 0
        assert kinds == {"split", "merge"}


class TestPriorInvariant:
    """Localized prior + likelihood delta == joint log-prior difference."""

    @pytest.mark.parametrize("covariates", [False, True])
    def test_mixture(self, covariates):
        state, data, ctx = make_mixture(seed=5, phi=1.5, covariates=covariates)
        lp_curr = logprior_state(state, data, ctx, mode="mfrmmx")
        kinds = set()
        for seed in range(40):
            base = state.copy()
            rng = np.random.default_rng(100 + seed)
            rec = propose_split_merge(base, data, ctx, rng, mode="mfrmmx", n_scans=3)
            if rec.kind == "skipped":
                continue
            prop = state.copy()
            apply_move(prop, rec, "mfrmmx")
            lhs = rec.log_prior_delta + rec.log_lik_delta
            rhs = logprior_state(prop, data, ctx, mode="mfrmmx") - lp_curr
            assert lhs == pytest.approx(rhs, abs=1e-8), rec.kind
            kinds.add(rec.kind)
        assert kinds == {"split", "merge"}

    def test_ppmx(self):
        state, data, ctx = make_ppmx(seed=6)
        lp_curr = logprior_state(state, data, ctx, mode="mfppmx")
        kinds = set()
        for seed in range(40):
            base = state.copy()
            rng = np.random.default_rng(300 + seed)
            rec = propose_split_merge(base, data, ctx, rng, mode="mfppmx", n_scans=3)
            if rec.kind == "skipped":
                continue
            prop = state.copy()
            apply_move(prop, rec, "mfppmx")
            lhs = rec.log_prior_delta + rec.log_lik_delta
            rhs = logprior_state(prop, data, ctx, mode="mfppmx") - lp_curr
            assert lhs == pytest.approx(rhs, abs=1e-8), rec.kind
            kinds.add(rec.kind)
        assert kinds == {"split", "merge"}


class TestRepulsionInRatio:
    def test_delta_matches_all_pairs_brute_force(self):
        state0, data, ctx0 = make_mixture(seed=8, phi=0.0)
        state2, _, ctx2 = make_mixture(seed=8, phi=2.0)
        np.testing.assert_array_equal(state0.theta, state2.theta)
        checked = set()
        for seed in range(40):
            b0, b2 = state0.copy(), state2.copy()
            r0 = np.random.default_rng(500 + seed)
            r2 = np.random.default_rng(500 + seed)
            rec0 = propose_split_merge(b0, data, ctx0, r0, mode="mfrmmx", n_scans=3)
            rec2 = propose_split_merge(b2, data, ctx2, r2, mode="mfrmmx", n_scans=3)
            if rec0.kind == "skipped":
                assert rec2.kind == "skipped"
                continue
            # repulsion strength must not change the proposal itself
            assert rec0.kind == rec2.kind
            assert rec0.anchors == rec2.anchors
            np.testing.assert_array_equal(rec0.z_proposed, rec2.z_proposed)
            assert rec0.log_q_forward == pytest.approx(rec2.log_q_forward, abs=1e-12)
            assert rec0.log_q_reverse == pytest.approx(rec2.log_q_reverse, abs=1e-12)
            assert rec0.log_lik_delta == pytest.approx(rec2.log_lik_delta, abs=1e-12)

            dd = rec2.log_prior_delta - rec0.log_prior_delta
            brute = 0.0
            for d in range(2):
                theta_prop = state2.theta[:, d, :].copy()
                for lab in rec2.labels:
                    theta_prop[lab] = rec2.params_proposed[lab][0][d]
                brute += rep.log_repulsion(theta_prop, ctx2.dist_design, 2.0)
                brute -= rep.log_repulsion(state2.theta[:, d, :], ctx2.dist_design, 2.0)
            assert dd == pytest.approx(brute, abs=1e-10)
            checked.add(rec0.kind)
        assert checked == {"split", "merge"}


class TestStateDiscipline:
    def test_rejected_move_leaves_state_bit_identical(self):
        state, data, ctx = make_mixture(seed=11, phi=0.5)
        arrays = ["z", "theta", "tau2", "lam2", "beta", "beta0", "Sigma", "mu", "mu0", "sig0_sq", "pi"]
        found = False
        for seed in range(80):
            base = state.copy()
            snap = {name: getattr(base, name).copy() for name in arrays}
            rng = np.random.default_rng(900 + seed)
            rec = propose_split_merge(base, data, ctx, rng, mode="mfrmmx", n_scans=2)
            if rec.kind != "skipped" and not rec.accepted:
                found = True
                for name in arrays:
                    np.testing.assert_array_equal(getattr(base, name), snap[name], err_msg=name)
                assert base.b_tau == state.b_tau
        assert found

    def test_accepted_move_applies_its_record(self):
        state, data, ctx = make_mixture(seed=12, sep=0.3, noise=0.6)
        base = state.copy()
        rng = np.random.default_rng(1300)
        found = set()
        for _ in range(400):
            rec = propose_split_merge(base, data, ctx, rng, mode="mfrmmx", n_scans=2)
            if not rec.accepted:
                continue
            found.add(rec.kind)
            np.testing.assert_array_equal(base.z, rec.z_proposed)
            for lab, (th, t2, l2) in rec.params_proposed.items():
                np.testing.assert_array_equal(base.theta[lab], th)
                np.testing.assert_array_equal(base.tau2[lab], t2)
                np.testing.assert_array_equal(base.lam2[lab], l2)
        assert found == {"split", "merge"}

    def test_split_uses_lowest_empty_component(self):
        state, data, ctx = make_mixture(seed=13)
        hit = False
        for seed in range(80):
            base = state.copy()
            rng = np.random.default_rng(1700 + seed)
            rec = propose_split_merge(base, data, ctx, rng, mode="mfrmmx", n_scans=2)
            if rec.kind == "split":
                hit = True
                assert rec.labels[0] == 3  # the only empty component
                assert state.z[rec.anchors[0]] == state.z[rec.anchors[1]]
                assert rec.z_proposed[rec.anchors[0]] == 3
                assert rec.z_proposed[rec.anchors[1]] == rec.labels[1]
        assert hit

    def test_same_component_anchors_skip_when_all_occupied(self):
        state, data, ctx = make_mixture(seed=14)
        state.z = np.array([0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 3, 3])
        skipped = False
        for seed in range(80):
            base = state.copy()
            rng = np.random.default_rng(2100 + seed)
            rec = propose_split_merge(base, data, ctx, rng, mode="mfrmmx", n_scans=2)
            if rec.kind == "skipped":
                skipped = True
                assert state.z[rec.anchors[0]] == state.z[rec.anchors[1]]
                np.testing.assert_array_equal(base.z, state.z)
        assert skipped


class TestFrozenKernelStationarity:
    def test_kernel_leaves_enumerated_target_invariant(self):
        rng = np.random.default_rng(0)
        logw = np.log(np.array([[0.7, 0.3], [0.25, 0.75], [0.5, 0.5]]))
        target = {}
        for cfg in itertools.product(range(2), repeat=3):
            target[cfg] = math.exp(sum(logw[i, cfg[i]] for i in range(3)))
        norm = sum(target.values())
        target = {k: v / norm for k, v in target.items()}

        z = np.zeros(3, dtype=int)
        counts = Counter()
        burn, keep = 2000, 250_000
        for t in range(burn + keep):
            frozen_partition_move(z, logw, rng, n_scans=2)
            if t >= burn:
                counts[tuple(z)] += 1
        tv = 0.5 * sum(abs(counts[k] / keep - target[k]) for k in target)
        assert tv < 0.03


class TestPpmxBookkeeping:
    def _walk(self, base, data, ctx, rng, n_moves):
        seen = set()
        for _ in range(n_moves):
            rec = propose_split_merge(base, data, ctx, rng, mode="mfppmx", n_scans=2)
            if rec.accepted:
                seen.add(rec.kind)
            J = base.n_components
            assert base.theta.shape == (J, 2, 4)
            assert base.tau2.shape == (J, 2)
            assert base.lam2.shape == (J, 2)
            np.testing.assert_array_equal(np.unique(base.z), np.arange(J))
            assert np.isfinite(base.theta).all()
            assert (base.tau2 > 0).all() and (base.lam2 > 0).all()
        return seen

    def test_splits_grow_the_component_arrays(self):
        # everyone lumped into one cluster even though the coefficients carry
        # three well-separated groups: splits should be proposed and accepted
        state, data, ctx = make_ppmx(seed=21)
        m, D = data.m, 2
        merged = state.copy()
        merged.z = np.zeros(m, dtype=int)
        merged.theta = state.beta.mean(axis=0)[None]
        merged.tau2 = np.full((1, D), 1.0)
        merged.lam2 = np.full((1, D), 0.5)
        seen = self._walk(merged, data, ctx, np.random.default_rng(78), 200)
        assert "split" in seen

    def test_merges_shrink_the_component_arrays(self):
        # one true group artificially split across two clusters: merges of
        # those clusters are favorable
        state, data, ctx = make_ppmx(seed=21)
        oversplit = state.copy()
        oversplit.z = np.array([0, 0, 1, 1, 2, 2, 2, 3, 3, 3])
        oversplit.theta = state.theta[[0, 0, 1, 2]].copy()
        oversplit.tau2 = state.tau2[[0, 0, 1, 2]].copy()
        oversplit.lam2 = state.lam2[[0, 0, 1, 2]].copy()
        seen = self._walk(oversplit, data, ctx, np.random.default_rng(79), 200)
        assert "merge" in seen

    def test_frozen_mode_rejects_ppmx(self):
        state, data, ctx = make_ppmx(seed=22)
        with pytest.raises(ValueError):
            propose_split_merge(
                state, data, ctx, np.random.default_rng(0), mode="mfppmx", update_params=False
            )
