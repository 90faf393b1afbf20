import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dmfp.errors import InvalidPriorError
from dmfp.sampler import sample_mdp
from dmfp.types import (
    MomentField,
    Policy,
    PriorSpec,
    QTable,
    SampledMdp,
    check_prior,
    dirichlet_covariance,
    dirichlet_mean,
    validate_prior,
)

alpha_rows = st.lists(st.floats(min_value=1e-3, max_value=1e3), min_size=1, max_size=12)


class TestDirichletMoments:
    def test_symmetric_pair(self):
        np.testing.assert_array_equal(dirichlet_mean([1, 1]), [0.5, 0.5])

    def test_asymmetric(self):
        np.testing.assert_allclose(dirichlet_mean([2, 1, 1]), [0.5, 0.25, 0.25], rtol=0, atol=1e-15)

    def test_inverse_n(self):
        np.testing.assert_allclose(dirichlet_mean(np.full(4, 0.25)), np.full(4, 0.25), atol=1e-15)

    def test_covariance_n2(self):
        c = dirichlet_covariance([0.5, 0.5])
        np.testing.assert_allclose(c, [[0.125, -0.125], [-0.125, 0.125]], atol=1e-15)

    def test_concentrated(self):
        assert np.all(np.abs(dirichlet_covariance([1e6, 1e6])) < 1e-6)

    @pytest.mark.parametrize("bad", [[1.0, 0.0], [-1.0, 2.0], [np.nan, 1.0]])
    def test_rejects_nonpositive(self, bad):
        with pytest.raises(InvalidPriorError):
            dirichlet_mean(bad)
        with pytest.raises(InvalidPriorError):
            dirichlet_covariance(bad)

    @given(alpha_rows)
    def test_covariance_rows_sum_to_zero(self, alpha):
        c = dirichlet_covariance(alpha)
        assert np.all(np.abs(c.sum(axis=1)) <= 1e-14)
        np.testing.assert_array_equal(c, c.T)

    @given(alpha_rows, st.lists(st.floats(-1e3, 1e3), min_size=12, max_size=12))
    def test_covariance_psd(self, alpha, m):
        c = dirichlet_covariance(alpha)
        v = np.asarray(m[: len(alpha)])
        assert v @ c @ v >= -1e-12 * max(1.0, float(v @ v))

    @pytest.mark.parametrize("n", [2, 5, 10])
    def test_symmetric_inverse_n_formulas(self, n):
        # Var[p_i] = (N-1)/(N^2 (N alpha + 1)), Cov = -1/(N^2 (N alpha + 1)) with alpha = 1/N
        c = dirichlet_covariance(np.full(n, 1.0 / n))
        assert c[0, 0] == pytest.approx((n - 1) / (n * n * 2.0), abs=1e-16)
        assert c[0, 1] == pytest.approx(-1.0 / (n * n * 2.0), abs=1e-16)

    def test_monte_carlo_moments(self):
        # 10^6 rows via one N=4 prior with many actions
        n, reps = 4, 50
        prior = PriorSpec.build(n, 5000, 0.5, "1/N")
        rows = np.concatenate([sample_mdp(prior, 1000 + k).transitions.reshape(-1, n) for k in range(reps)])
        assert rows.shape[0] == 10**6
        k = rows.shape[0]
        exact_mean = dirichlet_mean(np.full(n, 1.0 / n))
        exact_cov = dirichlet_covariance(np.full(n, 1.0 / n))
        se_mean = np.sqrt(np.diag(exact_cov) / k)
        assert np.all(np.abs(rows.mean(0) - exact_mean) <= 3 * se_mean)
        emp_cov = np.cov(rows.T)
        # standard error of a sample covariance: sqrt((E[x^2 y^2] - cov^2)/K), from the sample itself
        xc = rows - rows.mean(0)
        for i, j in [(0, 0), (1, 1), (0, 1), (2, 3)]:
            se = np.sqrt(((xc[:, i] * xc[:, j]) ** 2).mean() - emp_cov[i, j] ** 2) / np.sqrt(k)
            assert abs(emp_cov[i, j] - exact_cov[i, j]) <= 3 * se


class TestPrior:
    def test_well_formed(self):
        assert validate_prior(PriorSpec.build(3, 2, 0.9, "1/N", 0.0, 0.01)) == []

    def test_discount_out_of_range(self):
        v = validate_prior(PriorSpec.build(3, 2, 1.0))
        assert len(v) == 1 and "discount out of range" in str(v[0])

    def test_zero_alpha_entry_named(self):
        alpha = np.ones((3, 2, 3))
        alpha[1, 0, 2] = 0.0
        v = validate_prior(PriorSpec.build(3, 2, 0.5, alpha))
        assert [x.where for x in v] == [(1, 0, 2)]
        assert "alpha[1, 0, 2]" in str(v[0])

    def test_negative_variance(self):
        var = np.zeros((2, 2))
        var[0, 1] = -1.0
        v = validate_prior(PriorSpec.build(2, 2, 0.5, 1.0, 0.0, var))
        assert [(x.field, x.where) for x in v] == [("reward_var", (0, 1))]

    def test_check_raises_with_all_violations(self):
        with pytest.raises(InvalidPriorError) as err:
            check_prior(PriorSpec.build(2, 1, 1.5, -1.0))
        assert len(err.value.violations) == 1 + 4

    @pytest.mark.parametrize(
        "alpha, expected",
        [
            (2.0, np.full((2, 3, 2), 2.0)),
            ("1/N", np.full((2, 3, 2), 0.5)),
            ([1.0, 3.0], np.broadcast_to([1.0, 3.0], (2, 3, 2))),
        ],
    )
    def test_alpha_broadcast(self, alpha, expected):
        np.testing.assert_array_equal(PriorSpec.build(2, 3, 0.5, alpha).alpha, expected)

    def test_per_row_alpha(self):
        table = np.arange(1.0, 7.0).reshape(2, 3)
        p = PriorSpec.build(2, 3, 0.5, table)
        np.testing.assert_array_equal(p.alpha[1, 2], [6.0, 6.0])

    def test_bad_alpha_shape(self):
        with pytest.raises(ValueError):
            PriorSpec.build(2, 3, 0.5, np.ones(5))

    def test_immutable(self):
        p = PriorSpec.build(2, 2, 0.5)
        with pytest.raises(ValueError):
            p.alpha[0, 0, 0] = 3.0

    def test_iid_flag(self):
        assert PriorSpec.build(3, 2, 0.5, "1/N", 1.0, 0.5).is_iid
        assert not PriorSpec.build(2, 2, 0.5, "1/N", [[0.0, 1.0], [0.0, 0.0]]).is_iid


class TestTables:
    def test_simplex_check(self):
        with pytest.raises(ValueError):
            SampledMdp(np.array([[[0.5, 0.6]], [[1.0, 0.0]]]), np.zeros((2, 1)), 0.5)
        with pytest.raises(ValueError):
            SampledMdp(np.array([[[1.1, -0.1]], [[1.0, 0.0]]]), np.zeros((2, 1)), 0.5)

    def test_qtable_finite(self):
        with pytest.raises(ValueError):
            QTable(np.array([[np.inf]]))

    def test_moment_field_nonnegative(self):
        with pytest.raises(ValueError):
            MomentField(np.zeros((1, 1)), -np.ones((1, 1)))
        f = MomentField.zeros(2, 3)
        assert f.mean.shape == f.var.shape == (2, 3)

    def test_policy_range(self):
        with pytest.raises(ValueError):
            Policy([0, 2], num_actions=2)
        with pytest.raises(ValueError):
            Policy([-1])
