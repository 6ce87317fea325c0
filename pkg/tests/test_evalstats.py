import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, special, stats

from colored_ppo import evalstats as es
from colored_ppo.envs import MountainCarContinuous
from colored_ppo.evalstats import EvalCurve, PerformanceRecord
from colored_ppo.neuralnet import GaussianPolicy


def t_pdf(x, df):
    c = math.exp(special.gammaln((df + 1) / 2) - special.gammaln(df / 2)) / math.sqrt(df * math.pi)
    return c * (1 + x * x / df) ** (-(df + 1) / 2)


def two_sided_quadrature(t, df):
    tail, _ = integrate.quad(t_pdf, abs(t), np.inf, args=(df,), epsabs=1e-13, epsrel=1e-12)
    return 2 * tail


def records(env, beta_perf: dict, n_envs=4):
    out = []
    for beta, perfs in beta_perf.items():
        for seed, p in enumerate(perfs):
            out.append(PerformanceRecord(env, beta, n_envs, seed, float(p)))
    return out


class TestCurve:
    def test_performance_examples(self):
        c = EvalCurve()
        for s in range(1, 4):
            c.add(s, [5.0, 5.0])
        assert es.performance(c) == 5.0
        c = EvalCurve()
        c.add(1, [0.0])
        c.add(2, [10.0])
        assert es.performance(c) == 5.0
        c = EvalCurve()
        for i in range(201):
            c.add(i + 1, [float(i)])
        assert es.performance(c) == pytest.approx(100.0)

    def test_errors(self):
        with pytest.raises(ValueError):
            es.performance(EvalCurve())
        c = EvalCurve()
        c.add(5, [1.0, 2.0])
        with pytest.raises(ValueError):
            c.add(5, [1.0, 2.0])
        with pytest.raises(ValueError):
            c.add(6, [1.0])

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.floats(-100, 100), min_size=1, max_size=20), st.randoms())
    def test_reorder_invariant(self, means, rnd):
        a, b = EvalCurve(), EvalCurve()
        perm = list(means)
        rnd.shuffle(perm)
        for i, (x, y) in enumerate(zip(means, perm)):
            a.add(i, [x])
            b.add(i, [y])
        assert es.performance(a) == pytest.approx(es.performance(b), abs=1e-9)


class TestStandardize:
    def test_pair(self):
        sw = es.standardize(records("a", {0.0: [1.0, 3.0]}))
        assert [r.performance for r in sw.records] == [-1.0, 1.0]
        assert sw.standardized["a"] == (2.0, 1.0)

    def test_idempotent(self):
        sw = es.standardize(records("a", {0.0: [1.0, 3.0, 8.0]}))
        again = es.standardize(sw.records)
        assert np.allclose([r.performance for r in sw.records],
                           [r.performance for r in again.records])

    def test_mixed_envs(self):
        recs = records("a", {0.0: [1, 2, 3]}) + records("b", {0.0: [100, 300, 700]})
        sw = es.standardize(recs)
        for env in "ab":
            vals = [r.performance for r in sw.records if r.env == env]
            assert abs(np.mean(vals)) < 1e-12 and np.std(vals) == pytest.approx(1.0)

    def test_scale_invariance(self):
        rng = np.random.default_rng(0)
        base = {b: rng.normal(size=5) for b in (0.0, 1.0)}
        scaled = {b: 20 * v + 3 for b, v in base.items()}
        s1 = es.standardize(records("a", base) + records("b", base))
        s2 = es.standardize(records("a", base) + records("b", scaled))
        assert np.allclose(s1.performances(beta=1.0), s2.performances(beta=1.0))

    def test_degenerate(self):
        with pytest.raises(es.DegenerateGroupError):
            es.standardize(records("a", {0.0: [2.0, 2.0]}))
        with pytest.raises(es.DegenerateGroupError):
            es.standardize(records("a", {0.0: [2.0]}))


class TestBootstrap:
    def test_constant(self):
        assert es.bootstrap_ci_bca(np.full(12, 3.5), rng=np.random.default_rng(0)) == (3.5, 3.5)

    def test_too_few(self):
        with pytest.raises(ValueError):
            es.bootstrap_ci_bca(np.arange(9.0))

    def test_symmetric_close_to_percentile(self):
        x = np.random.default_rng(1).normal(size=400)
        lo, hi = es.bootstrap_ci_bca(x, rng=np.random.default_rng(2))
        plo, phi = es.bootstrap_ci_percentile(x, rng=np.random.default_rng(2))
        assert abs((hi - lo) - (phi - plo)) / (phi - plo) < 0.05

    def test_matches_scipy_bca(self):
        # scipy's BCa on the same data is an independent implementation
        x = np.random.default_rng(3).exponential(size=60)
        lo, hi = es.bootstrap_ci_bca(x, n_resamples=20000, rng=np.random.default_rng(4))
        ref = stats.bootstrap((x,), np.mean, n_resamples=20000, method="BCa",
                              random_state=np.random.default_rng(5)).confidence_interval
        assert lo == pytest.approx(ref.low, rel=0.03) and hi == pytest.approx(ref.high, rel=0.03)

    def test_two_sample_difference(self):
        rng = np.random.default_rng(6)
        a, b = rng.normal(1.0, 1, 40), rng.normal(0.0, 1, 40)
        lo, hi = es.bootstrap_ci_bca((a, b), statistic=lambda x, y: x.mean() - y.mean(),
                                     n_resamples=3000, rng=rng)
        assert lo < a.mean() - b.mean() < hi and lo > 0

    def test_coverage(self):
        rng = np.random.default_rng(7)
        hits = 0
        for _ in range(300):
            lo, hi = es.bootstrap_ci_bca(rng.standard_normal(100), n_resamples=1000, rng=rng)
            hits += lo <= 0 <= hi
        assert hits / 300 >= 0.91


class TestWelch:
    def test_identical(self):
        t, df, p = es.welch_t_test([1, 2, 3], [1, 2, 3])
        assert t == 0 and p == pytest.approx(1.0)

    def test_quadrature_oracle(self):
        t, df, p = es.welch_t_test([1, 2, 3, 4, 5], [2, 3, 4, 5, 6])
        # equal variances 2.5, n = 5 each: t = -1 / sqrt(1), df = 8
        assert t == pytest.approx(-1.0, abs=1e-12) and df == pytest.approx(8.0, abs=1e-12)
        assert p == pytest.approx(two_sided_quadrature(t, df), abs=1e-6)

    @pytest.mark.parametrize("seed", range(5))
    def test_unequal_against_quadrature(self, seed):
        rng = np.random.default_rng(seed)
        a, b = rng.normal(0, 1, 7), rng.normal(0.5, 3, 12)
        t, df, p = es.welch_t_test(a, b)
        assert p == pytest.approx(two_sided_quadrature(t, df), abs=1e-6)

    def test_swap(self):
        a, b = [1.0, 4.0, 2.0, 8.0], [3.0, 3.5, 9.0]
        t1, d1, p1 = es.welch_t_test(a, b)
        t2, d2, p2 = es.welch_t_test(b, a)
        assert t1 == -t2 and p1 == pytest.approx(p2) and d1 == pytest.approx(d2)

    def test_degenerate(self):
        assert es.welch_t_test([2, 2], [2, 2])[2] == 1.0
        with pytest.raises(es.DegenerateVarianceError):
            es.welch_t_test([2, 2], [3, 3])
        with pytest.raises(ValueError):
            es.welch_t_test([1.0], [1.0, 2.0])

    def test_null_uniform(self):
        rng = np.random.default_rng(8)
        p = [es.welch_t_test(rng.normal(size=10), rng.normal(0, 2, size=15))[2] for _ in range(2000)]
        d = stats.kstest(p, "uniform").statistic
        assert d < 1.358 / math.sqrt(2000)


class TestBestBeta:
    def test_all_identical(self):
        sw = es.SweepResult(records("a", {0.0: [1, 1], 0.5: [1, 1], 1.0: [1, 1]}), [], {})
        row = es.best_beta_table(sw)[0]
        assert row.beta_star == 0.0
        assert set(row.marks.values()) == {"comparable"}
        assert all(p == 1.0 for p in row.p_values.values())

    def test_synthetic_peak(self):
        rng = np.random.default_rng(0)
        betas = [0.0, 0.25, 0.5, 0.75, 1.0]
        recs = records("a", {b: -abs(b - 0.5) + 0.02 * rng.normal(size=10) for b in betas})
        row = es.best_beta_table(es.standardize(recs))[0]
        assert row.beta_star == 0.5
        assert row.marks[0.0] == "outperformed" and row.marks[1.0] == "outperformed"
        assert row.marks[0.5] == "comparable"
        csv_row = row.as_csv_row((0.5, 0.0, 1.0))
        assert list(csv_row) == ["env", "beta_star", "mark_0.5", "mark_0", "mark_1",
                                 "p_0.5", "p_0", "p_1"]

    def test_missing_and_insufficient(self):
        sw = es.SweepResult(records("a", {0.0: [1, 2, 3], 0.5: [4.0]}), [], {})
        row = es.best_beta_table(sw)[0]
        assert row.beta_star == 0.0
        assert row.marks[0.5] == "insufficient" and row.marks[1.0] == "missing"
        assert math.isnan(row.p_values[1.0])


class TestRanks:
    def test_single_beta(self):
        recs = records("a", {0.5: [1, 2]}, n_envs=1) + records("a", {0.5: [3, 4]}, n_envs=4)
        rt = es.rank_within_group(es.SweepResult(recs, [], {}))
        assert all(v == 1 for v in rt.ranks.values())

    def test_increasing(self):
        recs = records("a", {0.0: [1.0], 0.5: [2.0], 1.0: [3.0]})
        rt = es.rank_within_group(es.SweepResult(recs, [], {}))
        assert [rt.ranks[(4, b)] for b in (0.0, 0.5, 1.0)] == [3, 2, 1]

    def test_missing(self):
        recs = records("a", {0.0: [1.0], 0.5: [2.0]}, n_envs=1) + records("a", {0.0: [1.0]}, n_envs=2)
        with pytest.raises(es.MissingDataError) as ei:
            es.rank_within_group(es.SweepResult(recs, [], {}))
        assert (2, 0.5) in ei.value.missing

    def test_model_generated_grid(self):
        sigma = {0.0: 0.03, 0.5: 0.1, 1.0: 0.26, 2.0: 0.7}
        ns = [1, 4, 32]
        pred = es.predicted_best_beta(sigma, ns, list(sigma), 0.08)
        recs = []
        for i, b in enumerate(pred.betas):
            for j, n in enumerate(ns):
                recs.append(PerformanceRecord("a", b, n, 0, -pred.errors[i, j]))
        rt = es.rank_within_group(es.SweepResult(recs, [], {}))
        for i, b in enumerate(pred.betas):
            for j, n in enumerate(ns):
                assert rt.ranks[(n, b)] == pred.ranks[i, j]


class TestPredictor:
    def test_constant_sigma_degenerate(self):
        pred = es.predicted_best_beta(lambda b: 0.2, [1, 4], [0.0, 1.0], 0.1)
        assert np.allclose(pred.errors[0], pred.errors[1])
        assert pred.degenerate == [True, True]

    @settings(max_examples=50, deadline=None)
    @given(c=st.floats(0.01, 1.0), d=st.floats(0.001, 0.5), star=st.floats(0.001, 1.0))
    def test_linear_sigma_monotone(self, c, d, star):
        betas = [0.0, 0.25, 0.5, 1.0, 1.5, 2.0]
        pred = es.predicted_best_beta(lambda b: c * b + d, [1, 2, 4, 8, 16, 32], betas, star)
        assert all(x <= y for x, y in zip(pred.best_beta, pred.best_beta[1:]))

    def test_sigma_star(self):
        sigma = {0.0: 0.04, 0.5: 0.1}
        s = es.estimate_sigma_star(sigma, {1: 0.0, 4: 0.5})
        assert s == pytest.approx((0.04 + 0.1 / 2) / 2)
        with pytest.raises(ValueError):
            es.estimate_sigma_star(sigma, {})

    def test_empty(self):
        with pytest.raises(ValueError):
            es.predicted_best_beta(lambda b: 1.0, [], [0.0], 0.1)


class TestEvaluate:
    def test_zero_policy_maze(self):
        pol = GaussianPolicy(2, 2, rng=np.random.default_rng(0))
        pol.mean_net.weights[-1][...] = 0.0
        r = es.evaluate_policy(pol, "sparse-point-maze", 5, seed=0)
        assert np.all(r == 0)

    def test_deterministic(self):
        pol = GaussianPolicy(3, 1, rng=np.random.default_rng(0))
        a = es.evaluate_policy(pol, "pendulum-swingup", 3, mode="stochastic", seed=4)
        b = es.evaluate_policy(pol, "pendulum-swingup", 3, mode="stochastic", seed=4)
        assert np.array_equal(a, b)

    def test_oscillation_controller_mountain_car(self):
        # a linear policy a = k * velocity rocks the car up the hill
        pol = GaussianPolicy(2, 1, hidden=(), params=np.zeros(3 + 1 + 3))
        pol.mean_net.weights[0][...] = [[0.0], [50.0]]
        r = es.evaluate_policy(pol, MountainCarContinuous(), 4, seed=0)
        assert np.all(r > 0)

    def test_trajectory_and_mode(self):
        pol = GaussianPolicy(3, 1, rng=np.random.default_rng(0))
        traj = []
        es.evaluate_policy(pol, "pendulum-swingup", 2, seed=0, trajectory=traj)
        assert len(traj) == 2 * 200 and traj[-1][5]
        with pytest.raises(ValueError):
            es.evaluate_policy(pol, "pendulum-swingup", 1, mode="greedy")

    def test_random_baseline(self):
        r = es.random_policy_returns("pendulum-swingup", 50, seed=0)
        assert r.shape == (50,) and 0 < r.mean() < 200
