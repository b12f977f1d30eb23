import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oppbandits.linalg import pd_init, ridge_init, ridge_observe
from oppbandits.policies import (DecisionRound, EmpiricalThresholds, KernelUCB, LinearPolicy,
                                 PolicyConfig, RandomPolicy, ThresholdConfig, adalinucb_index,
                                 argmax_smallest_id, empirical_thresholds, gaussian_kernel,
                                 make_policy, nearest_rank_lower, nearest_rank_upper,
                                 normalize_variation, schur_extend)


def random_round(rng, k=5, d=4, L=None, slot=1):
    X = rng.standard_normal((k, d))
    X /= np.linalg.norm(X, axis=1, keepdims=True)
    return DecisionRound(slot, np.arange(k), X, float(rng.random() if L is None else L))


class TestDecisionRound:
    def test_position(self):
        rnd = DecisionRound(1, [7, 3, 9], np.eye(3), 0.5)
        assert rnd.position(9) == 2
        with pytest.raises(ValueError):
            rnd.position(4)

    @pytest.mark.parametrize("ids,ctx,L", [
        ([], np.empty((0, 2)), 0.5),
        ([1, 1], np.eye(2), 0.5),
        ([1, 2], np.eye(3), 0.5),
        ([1, 2], np.eye(2), -0.1),
    ])
    def test_invalid(self, ids, ctx, L):
        with pytest.raises(ValueError):
            DecisionRound(1, ids, ctx, L)


class TestNormalizeVariation:
    def test_examples(self):
        thr = ThresholdConfig(0.2, 0.8)
        assert normalize_variation(0.5, thr) == pytest.approx(0.5)
        assert normalize_variation(0.1, thr) == 0.0
        assert normalize_variation(0.95, thr) == 1.0

    def test_single_threshold(self):
        thr = ThresholdConfig(0.5, 0.5)
        assert normalize_variation(0.5, thr) == 0.0
        assert normalize_variation(0.5000001, thr) == 1.0

    def test_bad_thresholds(self):
        with pytest.raises(ValueError):
            ThresholdConfig(0.8, 0.2)

    @given(st.floats(0, 5), st.floats(0, 1), st.floats(0, 1))
    def test_range_and_monotone(self, L, a, b):
        thr = ThresholdConfig(min(a, b), max(a, b))
        v = normalize_variation(L, thr)
        assert 0.0 <= v <= 1.0
        assert normalize_variation(L + 0.1, thr) >= v


class TestIndex:
    def setup_method(self):
        rng = np.random.default_rng(5)
        self.pd, self.ridge = pd_init(4), ridge_init(4)
        for _ in range(30):
            x = rng.standard_normal(4)
            ridge_observe(self.pd, self.ridge, x, float(x @ [1, 0, -1, 0.5]))
        self.x = rng.standard_normal(4)

    def test_endpoints(self):
        est = self.ridge.theta_hat @ self.x
        width = math.sqrt(self.x @ self.pd.a_inverse @ self.x)
        assert adalinucb_index(self.pd, self.ridge, self.x, 1.5, 1.0) == pytest.approx(est)
        assert adalinucb_index(self.pd, self.ridge, self.x, 1.5, 0.0) == pytest.approx(est + 1.5 * width)

    def test_fresh_state(self):
        # theta = 0, A = I -> index = alpha * sqrt(1 - l) * ||x||
        x = np.array([3.0, 4.0])
        assert adalinucb_index(pd_init(2), ridge_init(2), x, 2.0, 0.75) == pytest.approx(5.0)

    def test_monotone_in_l_tilde(self):
        vals = [adalinucb_index(self.pd, self.ridge, self.x, 1.5, l) for l in np.linspace(0, 1, 11)]
        assert np.all(np.diff(vals) <= 0)

    @pytest.mark.parametrize("l", [-0.1, 1.1])
    def test_l_out_of_range(self, l):
        with pytest.raises(ValueError):
            adalinucb_index(self.pd, self.ridge, self.x, 1.5, l)


class TestTieBreak:
    def test_smallest_id_wins(self):
        assert argmax_smallest_id(np.array([1.0, 3.0, 3.0]), np.array([5, 9, 2])) == 2

    def test_roundoff_counts_as_tie(self):
        s = np.array([0.3, 0.1 + 0.2])          # differ in the last bit
        assert s[0] != s[1]
        assert argmax_smallest_id(s, np.array([1, 0])) == 0


class TestQuantiles:
    vals = [0.1 * i for i in range(1, 11)]

    def test_nearest_rank(self):
        assert nearest_rank_lower(self.vals, 0.2) == pytest.approx(0.2)
        assert nearest_rank_upper(self.vals, 0.2) == pytest.approx(0.9)
        assert nearest_rank_lower(self.vals, 0.0) == pytest.approx(0.1)
        assert nearest_rank_upper(self.vals, 0.0) == pytest.approx(1.0)

    def test_extremes_are_min_max(self):
        rng = np.random.default_rng(0)
        s = rng.random(57)
        thr = empirical_thresholds(s, 0.0, 0.0)
        assert (thr.lower, thr.upper) == (s.min(), s.max())

    def test_empty_history(self):
        thr = EmpiricalThresholds(0.1, 0.1).thresholds()
        assert (thr.lower, thr.upper) == (0.0, 0.0)

    def test_pending_value_not_stored(self):
        est = EmpiricalThresholds(0.0, 0.0)
        for v in (0.4, 0.6):
            est.observe(v)
        assert est.thresholds(pending=0.9).upper == 0.9
        assert est.thresholds().upper == 0.6
        assert len(est) == 2

    def test_window(self):
        est = EmpiricalThresholds(0.0, 0.0, window=3)
        for v in (0.9, 0.1, 0.5, 0.6, 0.7):
            est.observe(v)
        thr = est.thresholds()
        assert (thr.lower, thr.upper) == (0.5, 0.7)
        # with a pending value the oldest retained sample (0.5) drops out
        thr = est.thresholds(pending=0.65)
        assert (thr.lower, thr.upper) == (0.6, 0.7)

    @settings(max_examples=50)
    @given(st.lists(st.floats(0, 1), min_size=1, max_size=60), st.floats(0, 1), st.floats(0, 1))
    def test_lower_le_upper(self, samples, rl, ru):
        thr = empirical_thresholds(samples, rl, ru)
        assert min(samples) <= thr.lower <= thr.upper <= max(samples)


class TestLinearPolicy:
    def test_adaptive_endpoints_match_extracted_and_greedy(self):
        rng = np.random.default_rng(6)
        ada_lo = LinearPolicy(4, "adaptive", thresholds=ThresholdConfig(0.3, 0.7))
        ext = LinearPolicy(4, "extracted")
        for t in range(300):
            rnd = random_round(rng, L=rng.choice([0.1, 0.5, 0.9]), slot=t)
            a = ada_lo.select_arm(rnd)
            if rnd.variation_factor <= 0.3:
                assert a == ext.select_arm(rnd)
            r = float(rng.standard_normal())
            ada_lo.update(rnd, a, r)
            ext.update(rnd, a, r)

    def test_first_choice_is_smallest_id_for_identical_contexts(self):
        pol = LinearPolicy(3, "extracted")
        rnd = DecisionRound(1, [4, 2, 8], np.tile([1.0, 0, 0], (3, 1)), 1.0)
        assert pol.select_arm(rnd) == 2

    def test_multiply_regresses_actual_reward(self):
        pol = LinearPolicy(2, "multiply")
        rnd = DecisionRound(1, [0], [[1.0, 0.0]], 0.5)
        pol.update(rnd, 0, 2.0)
        pd, ridge = pol.model()
        np.testing.assert_allclose(pd.a_matrix, np.eye(2) + np.diag([0.25, 0]))
        np.testing.assert_allclose(ridge.b_vector, [0.5, 0.0])

    def test_combine_dimension(self):
        pol = LinearPolicy(3, "combine")
        rnd = DecisionRound(1, [0, 1], np.eye(2, 3), 0.25)
        X = pol.effective_contexts(rnd)
        assert X.shape == (2, 4)
        np.testing.assert_array_equal(X[:, 0], 0.25)

    def test_disjoint_models_independent(self):
        pol = LinearPolicy(2, "extracted", disjoint=True)
        rnd = DecisionRound(1, [10, 20], np.eye(2), 1.0)
        pol.update(rnd, 20, 1.0)
        assert set(pol.models) == {20}
        np.testing.assert_array_equal(pol.model(10)[1].theta_hat, [0.0, 0.0])

    def test_unoffered_arm_rejected(self):
        pol = LinearPolicy(2, "extracted")
        rnd = DecisionRound(1, [0, 1], np.eye(2), 1.0)
        with pytest.raises(ValueError):
            pol.update(rnd, 5, 1.0)

    def test_dimension_mismatch(self):
        pol = LinearPolicy(3, "extracted")
        with pytest.raises(ValueError):
            pol.select_arm(DecisionRound(1, [0, 1], np.eye(2), 1.0))

    def test_snapshot_is_json_ready(self):
        import json
        pol = make_policy(PolicyConfig("e_adalinucb", disjoint=True), 2)
        rnd = DecisionRound(1, [0, 1], np.eye(2), 0.4)
        pol.update(rnd, pol.select_arm(rnd), 1.0)
        snap = json.loads(json.dumps(pol.snapshot()))
        assert snap["thresholds"] == [0.4, 0.4]
        assert "0" in snap["arms"]


class TestPolicyConfig:
    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            PolicyConfig("ucb9000")

    def test_adalinucb_needs_thresholds(self):
        with pytest.raises(ValueError):
            PolicyConfig("adalinucb")

    def test_round_trip(self):
        cfg = PolicyConfig("adalinucb", lower=0.1, upper=0.9, alpha=2.0)
        assert PolicyConfig.from_dict(cfg.to_dict()) == cfg

    @pytest.mark.parametrize("kind", ["adalinucb", "e_adalinucb", "linucb_extracted",
                                      "linucb_multiply", "linucb_combine", "kernelucb", "random"])
    def test_every_kind_runs(self, kind):
        cfg = PolicyConfig(kind, lower=0.2, upper=0.8)
        pol = make_policy(cfg, 3, seed=0)
        rng = np.random.default_rng(0)
        for t in range(20):
            rnd = random_round(rng, k=4, d=3, slot=t)
            a = pol.select_arm(rnd)
            assert a in rnd.arm_ids
            pol.update(rnd, a, 0.5)


class TestRandomPolicy:
    def test_uniform(self):
        pol = RandomPolicy(seed=0)
        rnd = DecisionRound(1, np.arange(4), np.eye(4), 1.0)
        counts = np.bincount([pol.select_arm(rnd) for _ in range(4000)], minlength=4)
        assert np.all(np.abs(counts - 1000) < 4 * np.sqrt(4000 * 0.25 * 0.75))


class TestKernel:
    def test_kernel_values(self):
        z = np.array([[0.0, 0.0], [1.0, 0.0]])
        K = gaussian_kernel(z, z, 2.0)
        np.testing.assert_allclose(K, [[1.0, np.exp(-2.0)], [np.exp(-2.0), 1.0]])

    def test_schur_extend_matches_inverse(self):
        rng = np.random.default_rng(7)
        z = rng.standard_normal((8, 3))
        G = gaussian_kernel(z, z, 0.5) + 0.5 * np.eye(8)
        inv = np.linalg.inv(G[:7, :7])
        ext = schur_extend(inv, G[:7, 7], G[7, 7])
        np.testing.assert_allclose(ext, np.linalg.inv(G), atol=1e-10)

    def test_schur_fallback(self):
        G = np.array([[1.0, 1.0], [1.0, 1.0 + 1e-15]])
        with pytest.raises(np.linalg.LinAlgError):
            schur_extend(np.array([[1.0]]), np.array([1.0]), 1.0 + 1e-15)
        out = schur_extend(np.array([[1.0]]), np.array([1.0]), 1.0 + 1e-15,
                           gram=G + 1e-3 * np.eye(2))
        assert out.shape == (2, 2)

    def test_incremental_matches_direct(self):
        rng = np.random.default_rng(8)
        pol = KernelUCB(gamma=2.0, ridge_lambda=0.5)
        z = rng.standard_normal((50, 5))
        for zi in z:
            pol.observe(zi, float(rng.random()))
        direct = np.linalg.inv(gaussian_kernel(z, z, 2.0) + 0.5 * np.eye(50))
        np.testing.assert_allclose(pol.gram_inverse, direct, atol=1e-6)

    def test_first_action_is_first_arm(self):
        pol = KernelUCB()
        rnd = DecisionRound(1, [3, 1, 2], np.eye(3), 0.5)
        assert pol.select_arm(rnd) == 3
        with pytest.raises(ValueError):
            pol.kernel_index(np.zeros(4))

    def test_index_formula(self):
        rng = np.random.default_rng(9)
        pol = KernelUCB(alpha=1.5, gamma=2.0, ridge_lambda=0.5)
        hist = rng.standard_normal((10, 3))
        y = rng.random(10)
        pol.fit_history(hist, y)
        z = rng.standard_normal(3)
        k = gaussian_kernel(z[None], hist, 2.0)[0]
        Ginv = np.linalg.inv(gaussian_kernel(hist, hist, 2.0) + 0.5 * np.eye(10))
        expected = k @ Ginv @ y + 1.5 * np.sqrt(1.0 - k @ Ginv @ k)
        assert pol.kernel_index(z) == pytest.approx(expected, rel=1e-10)

    def test_augment(self):
        rnd = DecisionRound(1, [0, 1], np.eye(2), 0.3)
        np.testing.assert_array_equal(KernelUCB.augment(rnd), [[0.3, 1, 0], [0.3, 0, 1]])
