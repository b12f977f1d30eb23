import csv
import json
import warnings

import numpy as np
import pytest

from oppbandits.batch import run_batch
from oppbandits.environments import (BetaVariation, BinaryVariation, EnvConfig, TraceVariation,
                                     draw_stream, generate_environment)
from oppbandits.evaluation import (ReplayLog, ReplayRecord, RegretTrace, aggregate_runs,
                                   decompose_regret, derive_seed, generate_replay_log,
                                   read_trace_csv, replay_offline, run_episode, run_stream)
from oppbandits.policies import LinearPolicy, Policy, PolicyConfig, make_policy


def small_env(seed=0, **kw):
    return generate_environment(EnvConfig(num_arms=6, num_groups=3, dim=4, **kw), seed=seed)


def fake_trace(cum_values):
    n = len(cum_values)
    inc = np.diff(np.concatenate([[0.0], cum_values]))
    z = np.zeros(n)
    return RegretTrace(np.zeros(n, int), np.ones(n), z, inc, inc, z, z)


class TestSeeds:
    def test_deterministic_and_distinct(self):
        assert derive_seed(1, "env", 0) == derive_seed(1, "env", 0)
        assert len({derive_seed(1, "env", r) for r in range(50)}) == 50
        assert derive_seed(1, "policy", "a", 0) != derive_seed(1, "policy", "b", 0)
        assert derive_seed(1, "env", 0) != derive_seed(2, "env", 0)


class TestRunEpisode:
    def test_trace_completeness(self):
        env = small_env()
        tr = run_episode(PolicyConfig("linucb_extracted"), env, 250, seed=1)
        assert len(tr) == 250
        np.testing.assert_array_equal(tr.t, np.arange(1, 251))
        assert np.all(tr.nominal_regret >= 0)
        np.testing.assert_allclose(tr.actual_regret, tr.variation * tr.nominal_regret)

    def test_reproducible(self):
        env = small_env()
        a = run_episode(PolicyConfig("random"), env, 100, seed=3)
        b = run_episode(PolicyConfig("random"), env, 100, seed=3)
        np.testing.assert_array_equal(a.arm, b.arm)
        np.testing.assert_array_equal(a.cum_actual, b.cum_actual)

    def test_bad_horizon(self):
        with pytest.raises(ValueError):
            run_episode(PolicyConfig("random"), small_env(), 0)

    def test_adalinucb_beats_extracted_on_binary(self):
        env = generate_environment(EnvConfig(variation=BinaryVariation(0, 0, 0.5)), seed=0)
        ada = run_episode(PolicyConfig("adalinucb", lower=0, upper=1, disjoint=True), env, 3000, seed=1)
        ext = run_episode(PolicyConfig("linucb_extracted", disjoint=True), env, 3000, seed=1)
        assert ada.cum_actual[-1] < ext.cum_actual[-1]

    def test_csv(self, tmp_path):
        tr = run_episode(PolicyConfig("random"), small_env(), 250, seed=0)
        tr.write_csv(tmp_path / "a.csv")
        back = read_trace_csv(tmp_path / "a.csv")
        np.testing.assert_array_equal(back["t"], [100, 200, 250])
        np.testing.assert_allclose(back["cum_actual"], tr.cum_actual[[99, 199, 249]], rtol=0)
        tr.write_csv(tmp_path / "b.csv", full=True)
        with open(tmp_path / "b.csv") as fh:
            header = next(csv.reader(fh))
        assert header == ["t", "arm", "L", "l_tilde", "nominal_regret", "actual_regret",
                          "cum_nominal", "cum_actual"]
        assert len(read_trace_csv(tmp_path / "b.csv")["t"]) == 250


class TestRidgeOracle:
    @pytest.mark.parametrize("kind", ["adalinucb", "e_adalinucb", "linucb_extracted",
                                      "linucb_multiply", "linucb_combine"])
    @pytest.mark.parametrize("disjoint", [False, True])
    def test_theta_matches_direct_solve(self, kind, disjoint):
        env = small_env(seed=2, variation=BetaVariation())
        pol = make_policy(PolicyConfig(kind, lower=0.2, upper=0.8, disjoint=disjoint,
                                       refactor_period=97), env.dim)
        history = {}
        stream = draw_stream(env, 1000, np.random.default_rng(0))

        class Recorder(Policy):
            def select_arm(self, rnd):
                return pol.select_arm(rnd)

            def update(self, rnd, chosen, r):
                pos = rnd.position(chosen)
                key = chosen if disjoint else None
                history.setdefault(key, []).append((pol.effective_contexts(rnd)[pos],
                                                    pol.effective_reward(rnd, r)))
                pol.update(rnd, chosen, r)

        run_stream(Recorder(), env, stream)
        for key, rows in history.items():
            X = np.array([x for x, _ in rows])
            y = np.array([r for _, r in rows])
            direct = np.linalg.solve(np.eye(X.shape[1]) + X.T @ X, X.T @ y)
            theta = pol.model(key)[1].theta_hat
            assert np.linalg.norm(theta - direct) <= 1e-8 * max(np.linalg.norm(direct), 1e-300)


class TestBatchEquivalence:
    @pytest.mark.parametrize("cfg", [
        PolicyConfig("adalinucb", lower=0.2, upper=0.8, disjoint=True),
        PolicyConfig("adalinucb", lower=0.5, upper=0.5),
        PolicyConfig("e_adalinucb", rho_lower=0.1, rho_upper=0.1, disjoint=True, window=200),
        PolicyConfig("linucb_extracted", disjoint=True),
        PolicyConfig("linucb_multiply", refactor_period=50),
        PolicyConfig("linucb_combine", disjoint=True, reward="actual"),
    ], ids=lambda c: f"{c.kind}-{c.disjoint}")
    def test_same_choices_as_reference(self, cfg):
        envs = [small_env(seed=s, variation=BetaVariation()) for s in range(3)]
        streams = [draw_stream(e, 600, np.random.default_rng(10 + i)) for i, e in enumerate(envs)]
        batched = run_batch(cfg, envs, streams)
        for env, stream, bt in zip(envs, streams, batched):
            ref = run_stream(make_policy(cfg, env.dim), env, stream)
            np.testing.assert_array_equal(bt.arm, ref.arm)
            np.testing.assert_allclose(bt.cum_actual, ref.cum_actual, rtol=1e-12, atol=1e-12)
            np.testing.assert_allclose(bt.l_tilde, ref.l_tilde, equal_nan=True)

    def test_rejects_kernel(self):
        env = small_env()
        with pytest.raises(ValueError):
            run_batch(PolicyConfig("kernelucb"), [env], [draw_stream(env, 5, np.random.default_rng(0))])


class TestDecompose:
    def test_single_level(self):
        env = generate_environment(EnvConfig(variation=BinaryVariation(0.2, 0.0, 1.0)), seed=0)
        tr = run_episode(PolicyConfig("linucb_extracted"), env, 300, seed=0)
        low, high = decompose_regret(tr, 0.2)
        assert high == 0.0
        assert low == pytest.approx(tr.cum_nominal[-1])

    def test_partition(self):
        env = small_env(variation=BinaryVariation(0, 0, 0.5))
        tr = run_episode(PolicyConfig("linucb_extracted"), env, 2000, seed=5)
        low, high = decompose_regret(tr, 0.0)
        total = float(np.sum(tr.nominal_regret))
        assert low + high == pytest.approx(total, rel=1e-15, abs=1e-15)
        mask = tr.variation <= 0.0
        np.testing.assert_allclose(low, np.sum(tr.nominal_regret[mask]), rtol=1e-13)


class TestAggregate:
    def test_identical_traces(self):
        traces = [fake_trace(np.arange(1.0, 11.0))] * 3
        agg = aggregate_runs(traces, [5, 10])
        np.testing.assert_array_equal(agg.mean_actual, [5.0, 10.0])
        np.testing.assert_array_equal(agg.se_actual, [0.0, 0.0])

    def test_two_point(self):
        agg = aggregate_runs([fake_trace([10.0]), fake_trace([14.0])], [1])
        assert agg.mean_actual[0] == pytest.approx(12.0)
        assert agg.se_actual[0] == pytest.approx(2.0)

    def test_mismatched_horizons(self):
        with pytest.raises(ValueError):
            aggregate_runs([fake_trace([1.0, 2.0]), fake_trace([1.0])], [1])

    def test_checkpoint_past_horizon(self):
        with pytest.raises(ValueError):
            aggregate_runs([fake_trace([1.0, 2.0])], [3])


def uniform_log(n, k=10, seed=0, **kw):
    return generate_replay_log(n, np.random.default_rng(seed), num_articles=2 * k, pool_size=k, **kw)


class TestReplay:
    def test_conservation(self):
        logd, _ = uniform_log(2000)
        # corrupt a few records
        bad = ReplayRecord(0, 999, np.arange(3), np.eye(3), 1.0)
        entries = logd.entries[:1500] + [None, bad] + logd.entries[1500:]
        res = replay_offline(PolicyConfig("linucb_extracted", disjoint=True), ReplayLog(entries))
        assert res.matched + res.discarded + res.invalid == len(entries)
        assert res.invalid == 2

    def test_matched_count_binomial(self):
        logd, _ = uniform_log(20_000, seed=1)
        res = replay_offline(PolicyConfig("random"), logd, seed=0)
        n = len(logd)
        assert abs(res.matched - n / 10) <= 3 * np.sqrt(n * 0.1 * 0.9)

    def test_perfect_match(self):
        logd, _ = uniform_log(500, seed=2)

        class Oracle(Policy):
            name = "logged"

            def __init__(self):
                self.i = 0

            def select_arm(self, rnd):
                return logd.entries[rnd.slot - 1].displayed

            def update(self, rnd, chosen, r):
                pass

        res = replay_offline(Oracle(), logd)
        assert res.matched == len(logd)
        assert res.nominal_per_match == pytest.approx(logd.mean_reward())

    def test_greedy_beats_log_after_burn_in(self):
        logd, model = uniform_log(20_000, seed=3, reward_noise=0.0)
        pol = LinearPolicy(6, "extracted", alpha=1e-6, disjoint=True)
        res = replay_offline(pol, logd)
        burn = 200
        late = (res.cum_nominal_reward[-1] - res.cum_nominal_reward[burn]) / (res.matched - burn)
        assert late >= logd.mean_reward()

    def test_no_state_change_on_discard(self):
        logd, _ = uniform_log(300, seed=4)
        pol = make_policy(PolicyConfig("e_adalinucb", disjoint=True), 6)
        res = replay_offline(pol, logd)
        assert len(pol.empirical) == res.matched
        assert sum(m[0].update_count for m in pol.models.values()) == res.matched

    def test_trace_cycles_with_one_warning(self):
        logd, _ = uniform_log(100, seed=5)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            res = replay_offline(PolicyConfig("random"), logd, trace=TraceVariation((0.0, 1.0)), seed=0)
        assert len(caught) == 1
        assert res.cum_actual_reward[-1] <= res.cum_nominal_reward[-1]

    def test_empty_log(self):
        with pytest.raises(ValueError):
            replay_offline(PolicyConfig("random"), ReplayLog([]))

    def test_jsonl_round_trip(self, tmp_path):
        logd, _ = uniform_log(50, seed=6, variation=TraceVariation((0.5, 1.0)))
        logd.write(tmp_path / "log.jsonl")
        with open(tmp_path / "log.jsonl", "a") as fh:
            fh.write("not json\n")
            fh.write(json.dumps({"ts": 1, "pool": []}) + "\n")
        back = ReplayLog.read(tmp_path / "log.jsonl")
        assert len(back) == 52 and back.malformed == 2
        rec = back.entries[3]
        assert rec.displayed == logd.entries[3].displayed
        np.testing.assert_array_equal(rec.pool_contexts, logd.entries[3].pool_contexts)
        assert rec.variation == 1.0 and back.entries[2].variation == 0.5

    def test_unbiased_for_fixed_policy(self):
        """Reward per match of a fixed policy converges to its true value."""
        logd, model = uniform_log(30_000, seed=7, reward_noise=0.0)

        class Smallest(Policy):
            def select_arm(self, rnd):
                return rnd.arm_ids.min()

            def update(self, rnd, chosen, r):
                pass

        res = replay_offline(Smallest(), logd)
        truth = np.array([model.click_prob(r.pool_contexts[0], r.pool_ids.min()) for r in logd.entries])
        # matched rewards are a uniform 1/K subsample of the per-record truths
        se = truth.std() / np.sqrt(res.matched)
        assert abs(res.nominal_per_match - truth.mean()) <= 3 * se
