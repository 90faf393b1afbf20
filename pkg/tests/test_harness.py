import numpy as np
import pytest

from dmfp.engine import run_dmfp
from dmfp.errors import DegenerateDataError, InvalidArgumentError
from dmfp.harness import (
    FIXED,
    REL_ERROR_FLOOR,
    compare_theory,
    cross_pair_correlation,
    default_retained_pairs,
    default_schedule,
    ks_normality,
    merge_ensembles,
    qq_points,
    run_ensemble,
)
from dmfp.numerics import std_normal_ppf
from dmfp.rng import Xoshiro256
from dmfp.types import MomentField, PriorSpec


def small_prior(**kw):
    args = dict(num_states=6, num_actions=3, discount=0.8, alpha="1/N", reward_mean=0.0, reward_var=0.01)
    args.update(kw)
    return PriorSpec.build(**args)


def stats_equal(a, b):
    assert a.labels == b.labels and a.retained_pairs == b.retained_pairs
    for l in a.labels:
        assert a.snapshots[l].count == b.snapshots[l].count
        assert np.array_equal(a.snapshots[l].mean, b.snapshots[l].mean)
        assert np.array_equal(a.snapshots[l].m2, b.snapshots[l].m2)
    assert np.array_equal(a.retained, b.retained)
    assert np.array_equal(a.iterations, b.iterations)


class TestEnsemble:
    def test_concentrated_prior(self):
        prior = PriorSpec.build(4, 2, 0.9, 1e6, 1.0, 0.0)
        stats = run_ensemble(prior, 2, 5)
        assert np.max(stats.moments(FIXED)[1]) <= 1e-6

    def test_deterministic(self):
        a = run_ensemble(small_prior(), 40, 11)
        b = run_ensemble(small_prior(), 40, 11)
        stats_equal(a, b)

    def test_worker_invariance(self):
        a = run_ensemble(small_prior(), 40, 11, workers=1)
        b = run_ensemble(small_prior(), 40, 11, workers=3)
        stats_equal(a, b)

    def test_worker_env(self, monkeypatch):
        monkeypatch.setenv("DMFP_WORKERS", "2")
        stats_equal(run_ensemble(small_prior(), 20, 3), run_ensemble(small_prior(), 20, 3, workers=1))

    def test_counts(self):
        stats = run_ensemble(small_prior(), 37, 2, snapshot_iters=[1, 5, 300])
        assert stats.labels == [1, 5, 300, FIXED]
        assert all(stats.snapshots[l].count == 37 for l in stats.labels)
        assert stats.retained.shape == (37, 18)
        # past convergence the converged table is reused
        np.testing.assert_array_equal(stats.snapshots[300].mean, stats.snapshots[FIXED].mean)

    def test_merge_ranges(self):
        whole = run_ensemble(small_prior(), 48, 9)
        parts = merge_ensembles(run_ensemble(small_prior(), 16, 9), run_ensemble(small_prior(), 32, 9, first_replicate=16))
        assert parts.replicates == 48
        np.testing.assert_array_equal(parts.retained, whole.retained)
        for l in whole.labels:
            np.testing.assert_allclose(parts.snapshots[l].mean, whole.snapshots[l].mean, rtol=1e-13, atol=1e-15)
            np.testing.assert_allclose(parts.snapshots[l].variance, whole.snapshots[l].variance, rtol=1e-10, atol=1e-16)
        with pytest.raises(InvalidArgumentError):
            merge_ensembles(run_ensemble(small_prior(), 16, 9), run_ensemble(small_prior(), 16, 9))

    def test_single_state_closed_form(self):
        # Q* = rho / (1 - beta) with rho ~ N(0, 1), beta = 1/2: variance 4
        prior = PriorSpec.build(1, 1, 0.5, 1.0, 0.0, 1.0)
        k = 10_000
        stats = run_ensemble(prior, k, 1)
        v = float(stats.moments(FIXED)[1][0, 0])
        se = 4.0 * np.sqrt(2.0 / (k - 1))
        assert abs(v - 4.0) <= 3 * se

    def test_standard_error_scaling(self):
        prior = small_prior(reward_var=1.0)
        full = run_ensemble(prior, 400, 21)
        half = run_ensemble(prior, 200, 21)
        ratio = np.median(half.snapshots[FIXED].std_error / full.snapshots[FIXED].std_error)
        assert ratio == pytest.approx(np.sqrt(2), rel=0.1)

    def test_nonconvergence_recorded(self):
        stats = run_ensemble(small_prior(discount=0.99), 4, 1, max_iters=3)
        assert stats.nonconverged == [0, 1, 2, 3]

    def test_policy_mode(self):
        from dmfp.types import Policy

        stats = run_ensemble(small_prior(), 8, 1, policy=Policy(np.zeros(6, dtype=int), 3))
        assert stats.converged.all()

    def test_preconditions(self):
        with pytest.raises(InvalidArgumentError):
            run_ensemble(small_prior(), 1, 0)
        with pytest.raises(InvalidArgumentError):
            run_ensemble(small_prior(), 4, 0, retain_pairs=[(6, 0)])

    def test_defaults(self):
        sched = default_schedule()
        assert sched[:10] == list(range(1, 11)) and sched[10:13] == [16, 32, 64]
        pairs = default_retained_pairs(500, 20, 32, 7)
        assert len(set(pairs)) == 32 and pairs == default_retained_pairs(500, 20, 32, 7)
        assert pairs != default_retained_pairs(500, 20, 32, 8)


class TestCompare:
    def test_self_comparison_zero(self):
        stats = run_ensemble(small_prior(), 20, 4, snapshot_iters=[1, 2])
        theory = {l: MomentField(*stats.moments(l)) for l in stats.labels}
        rep = compare_theory(stats, theory)
        assert np.nanmax(rep.abs_err_mean) == 0 and np.nanmax(rep.abs_err_var) == 0
        assert np.nanmax(rep.rel_err_var) == 0

    def test_floor(self):
        stats = run_ensemble(small_prior(), 20, 4, snapshot_iters=[1])
        theory = {l: MomentField(np.zeros((6, 3)), np.full((6, 3), REL_ERROR_FLOOR / 2)) for l in stats.labels}
        rep = compare_theory(stats, theory)
        assert np.all(np.isnan(rep.rel_err_mean)) and np.all(np.isnan(rep.rel_err_var))

    def test_zero_discount_clt(self):
        prior = PriorSpec.build(3, 2, 0.0, 1.0, 0.5, 0.25)
        k = 10_000
        stats = run_ensemble(prior, k, 6, snapshot_iters=[1])
        rep = compare_theory(stats, run_dmfp(prior))
        assert rep.abs_err_mean.mean() <= 3 * 0.5 / np.sqrt(k)

    def test_schedule_mismatch(self):
        stats = run_ensemble(small_prior(), 10, 4, snapshot_iters=[1, 2])
        theory = {1: MomentField.zeros(6, 3), FIXED: MomentField.zeros(6, 3)}
        with pytest.raises(InvalidArgumentError):
            compare_theory(stats, theory)

    def test_summary(self):
        stats = run_ensemble(small_prior(), 40, 4, snapshot_iters=[1, 2, 3])
        rep = compare_theory(stats, run_dmfp(small_prior()))
        s = rep.summary()
        assert [p["iteration"] for p in s["pooled"]] == [1, 2, 3, FIXED]
        assert set(s["quantiles"]) == {"1", "2", "3", "fixed"}
        assert s["correlation"] is not None and rep.qq.shape == (40, 2)


class TestKs:
    def test_gaussian_self_consistency(self):
        g = Xoshiro256(123)
        passed = sum(ks_normality(g.normal(10_000))[1] > 0.01 for _ in range(100))
        assert passed >= 95

    def test_uniform_rejected(self):
        g = Xoshiro256(5)
        u = np.array([g.random() for _ in range(10_000)])
        assert ks_normality(u)[1] < 0.001

    def test_constant(self):
        d, p = ks_normality(np.full(50, 3.0))
        assert d == 0.5 and p < 0.01

    def test_too_few(self):
        with pytest.raises(InvalidArgumentError):
            ks_normality(np.arange(7.0))

    def test_matches_reference(self):
        from scipy import stats

        x = Xoshiro256(9).normal(500) * 2 + 1
        z = (x - x.mean()) / x.std(ddof=1)
        assert ks_normality(x)[0] == pytest.approx(stats.kstest(z, "norm").statistic, abs=1e-14)


class TestQq:
    def test_exact_quantiles_on_diagonal(self):
        n = 1000
        q = std_normal_ppf((np.arange(1, n + 1) - 0.5) / n)
        pts = qq_points((q - q.mean()) / q.std(ddof=1))
        s = q.std(ddof=1)
        np.testing.assert_allclose(pts[:, 1] * s + q.mean(), pts[:, 0], atol=1e-6)

    def test_affine_invariance(self):
        x = Xoshiro256(3).normal(100)
        np.testing.assert_allclose(qq_points(x), qq_points(5 * x - 2), atol=1e-13)

    def test_two_points(self):
        pts = qq_points([-1.0, 1.0])
        np.testing.assert_allclose(pts[:, 0], [-std_normal_ppf(0.75), std_normal_ppf(0.75)], atol=1e-15)

    def test_degenerate(self):
        with pytest.raises(DegenerateDataError):
            qq_points([2.0, 2.0, 2.0])
        with pytest.raises(InvalidArgumentError):
            qq_points([1.0])


class TestCorrelation:
    def stats(self, k=60):
        return run_ensemble(small_prior(), k, 2, retain_pairs=[(0, 0), (1, 1), (2, 2)])

    def test_self_pair(self):
        s = self.stats()
        assert cross_pair_correlation(s, [((0, 0), (0, 0))]).correlations[0] == 1.0

    def test_duplicate_stream(self):
        s = self.stats()
        s.retained[:, 1] = s.retained[:, 0]
        c = cross_pair_correlation(s, [((0, 0), (1, 1))]).correlations[0]
        assert abs(c - 1.0) <= 1e-12

    def test_independent_streams(self):
        s = self.stats()
        g = Xoshiro256(77)
        small = 0
        for _ in range(200):
            x = g.normal(1000)
            y = g.normal(1000)
            s2 = type(s)(**{**s.__dict__, "replicates": 1000, "retained": np.column_stack((x, y, x))})
            small += abs(cross_pair_correlation(s2, [((0, 0), (1, 1))]).correlations[0]) <= 0.1
        assert small >= 0.99 * 200

    def test_missing_pair(self):
        with pytest.raises(InvalidArgumentError):
            cross_pair_correlation(self.stats(), [((0, 0), (5, 2))])

    def test_needs_thirty(self):
        with pytest.raises(InvalidArgumentError):
            cross_pair_correlation(self.stats(k=20), [((0, 0), (1, 1))])
