from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import softmax

from coldpac.bounds import laplace_objective
from coldpac.errors import EmptyDataError, TaskMismatchError
from coldpac.laplace import (
    CurvatureSummary,
    IsotropicGaussian,
    curvature,
    curvature_classification,
    curvature_regression,
    exact_ggn_trace,
    gradient_variance,
    posterior_variance,
    softmax_ggn_weights,
)
from coldpac.nnet import ArchSpec, Dataset, FlatParams, Sample, forward_raw, nll_loss

from conftest import fd_output_jacobian, random_params


def linear(d: int, head: str = "identity", k: int = 1) -> ArchSpec:
    return ArchSpec((d, k), output_head=head, use_bias=False)


def summary(h, d):
    return CurvatureSummary(h, 1, d, "regression")


class TestIsotropicGaussian:
    @pytest.mark.parametrize("v", [0.0, -1.0, np.inf, np.nan])
    def test_variance_positive_finite(self, v):
        with pytest.raises(ValueError):
            IsotropicGaussian(FlatParams.zeros(linear(2)), v)

    def test_sample_moments(self):
        mean = FlatParams(linear(3), np.array([1.0, -2.0, 0.5]))
        W = IsotropicGaussian(mean, 0.04).sample(np.random.default_rng(0), 200_000)
        np.testing.assert_allclose(W.mean(axis=0), mean.values, atol=3e-3)
        np.testing.assert_allclose(W.var(axis=0), 0.04, rtol=1e-2)


class TestCurvatureRegression:
    def test_single_sample_linear(self):
        p = FlatParams(linear(2), np.array([0.3, -7.0]))
        assert curvature_regression(p, [Sample(np.array([1.0, 2.0]), 0.0)]).h == pytest.approx(5.0)

    def test_two_samples_linear(self):
        p = FlatParams(linear(2), np.array([0.3, -7.0]))
        data = [Sample(np.array([1.0, 2.0]), 0.0), Sample(np.array([0.0, 3.0]), 1.0)]
        assert curvature_regression(p, data).h == pytest.approx(14.0)

    def test_duplication_doubles(self, rng):
        arch = ArchSpec((3, 4, 1))
        p = random_params(arch, rng)
        data = Dataset(rng.standard_normal((10, 3)), rng.standard_normal(10))
        h1 = curvature_regression(p, data).h
        np.testing.assert_allclose(curvature_regression(p, data.concat(data)).h, 2 * h1, rtol=1e-14)

    def test_additive_over_disjoint_sets(self, rng):
        arch = ArchSpec((3, 4, 1))
        p = random_params(arch, rng)
        data = Dataset(rng.standard_normal((12, 3)), rng.standard_normal(12))
        a, b = data.take(range(5)), data.take(range(5, 12))
        total = curvature_regression(p, a) + curvature_regression(p, b)
        assert total.n_samples == 12
        np.testing.assert_allclose(total.h, curvature_regression(p, data).h, rtol=1e-13)

    def test_permutation_invariant(self, rng):
        arch = ArchSpec((3, 5, 1))
        p = random_params(arch, rng)
        data = Dataset(rng.standard_normal((20, 3)), rng.standard_normal(20))
        perm = data.take(rng.permutation(20))
        np.testing.assert_allclose(curvature_regression(p, perm).h, curvature_regression(p, data).h, rtol=1e-13)

    def test_matches_finite_difference_oracle(self, rng):
        arch = ArchSpec((3, 4, 4, 1))
        p = random_params(arch, rng)
        X = rng.standard_normal((6, 3))
        brute = sum(float(np.sum(fd_output_jacobian(arch, p.values.copy(), x) ** 2)) for x in X)
        assert curvature_regression(p, Dataset(X, np.zeros(6))).h == pytest.approx(brute, rel=1e-3)

    def test_empty_rejected(self):
        p = FlatParams.zeros(linear(2))
        with pytest.raises(EmptyDataError):
            curvature_regression(p, [])
        with pytest.raises(EmptyDataError):
            curvature_regression(p, Dataset(np.zeros((0, 2)), np.zeros(0)))

    def test_task_checked(self):
        with pytest.raises(TaskMismatchError):
            curvature_regression(FlatParams.zeros(linear(2, "softmax", 3)), [Sample(np.zeros(2), 0)])

    def test_nonnegative_summary(self):
        with pytest.raises(ValueError):
            CurvatureSummary(-1.0, 1, 1, "regression")


class TestCurvatureClassification:
    def test_uniform_weights(self):
        K = 4
        p = FlatParams.zeros(ArchSpec((3, K), output_head="softmax"))
        g = softmax_ggn_weights(p, np.ones((2, 3)))
        np.testing.assert_allclose(g, (1 / K) * (1 - 1 / K))

    def test_confident_class_contributes_nothing(self):
        arch = linear(1, "softmax", 2)
        p = FlatParams(arch, np.array([0.0, 800.0]))
        g = softmax_ggn_weights(p, np.array([[1.0]]))
        assert g[0, 1] == 0.0 and g[0, 0] == 0.0
        assert curvature_classification(p, [Sample(np.array([1.0]), 1)]).h == 0.0

    @pytest.mark.parametrize("seed", range(5))
    def test_two_class_linear_logits_match_explicit_trace(self, seed):
        rng = np.random.default_rng(seed)
        D = int(rng.integers(1, 6))
        arch = ArchSpec((D, 2), output_head="softmax")
        p = random_params(arch, rng)
        x = rng.standard_normal(D)
        # independent oracle: finite-difference Jacobian and the full softmax Hessian
        J = fd_output_jacobian(arch, p.values.copy(), x)
        q = softmax(forward_raw(arch, p.values, x)[0])
        H = np.diag(q) - np.outer(q, q)
        oracle = float(np.trace(J.T @ H @ J))
        h = curvature_classification(p, [Sample(x, 0)]).h
        assert h == pytest.approx(oracle, rel=1e-6)

    def test_multiclass_linear_logits_exact(self, rng):
        arch = ArchSpec((4, 5), output_head="softmax")
        p = random_params(arch, rng)
        data = Dataset(rng.standard_normal((30, 4)), rng.integers(0, 5, 30))
        assert curvature_classification(p, data).h == pytest.approx(exact_ggn_trace(p, data), rel=1e-12)

    def test_hidden_layer_differs_from_exact_trace(self, rng):
        # the diagonal weighting drops cross-logit terms once parameters are shared
        arch = ArchSpec((3, 6, 3), output_head="softmax")
        p = random_params(arch, rng)
        data = Dataset(rng.standard_normal((25, 3)), rng.integers(0, 3, 25))
        h, exact = curvature_classification(p, data).h, exact_ggn_trace(p, data)
        assert h >= exact > 0

    def test_ggn_trace_equals_hessian_trace_for_linear_logits(self):
        rng = np.random.default_rng(7)
        arch = ArchSpec((2, 3), output_head="softmax", use_bias=False)
        p = random_params(arch, rng)
        s = Sample(rng.standard_normal(2), 1)
        # cross-entropy on linear logits: the GGN is the Hessian
        w0 = p.values.copy()
        hess_diag = np.empty_like(w0)
        for j in range(w0.size):
            e = np.zeros_like(w0)
            e[j] = 1e-4
            f = lambda w: nll_loss(p.with_values(w), s)  # noqa: E731
            hess_diag[j] = (f(w0 + e) - 2 * f(w0) + f(w0 - e)) / 1e-8
        assert curvature_classification(p, [s]).h == pytest.approx(hess_diag.sum(), rel=1e-5)

    def test_dispatch(self, rng):
        p = random_params(ArchSpec((2, 3), output_head="softmax"), rng)
        assert curvature(p, [Sample(np.zeros(2), 0)]).task == "classification"
        with pytest.raises(TaskMismatchError):
            curvature_classification(FlatParams.zeros(linear(2)), [Sample(np.zeros(2), 0.0)])


class TestPosteriorVariance:
    def test_hand_value(self):
        assert posterior_variance(2.0, summary(10.0, 5), 0.5) == pytest.approx(1 / 6)

    def test_unit_case(self):
        assert posterior_variance(1.0, summary(7.0, 7), 1.0) == pytest.approx(0.5)

    def test_small_lambda_limit(self):
        assert posterior_variance(1e-12, summary(100.0, 3), 0.3) == pytest.approx(0.3, rel=1e-9)

    @pytest.mark.parametrize("lam, pv", [(0.0, 1.0), (-1.0, 1.0), (1.0, 0.0)])
    def test_rejects_nonpositive(self, lam, pv):
        with pytest.raises(ValueError):
            posterior_variance(lam, summary(1.0, 1), pv)

    def test_decreasing_on_grid(self):
        lams = np.logspace(-3, 5, 60)
        v = [posterior_variance(l, summary(50.0, 10), 0.01) for l in lams]
        assert np.all(np.diff(v) < 0)

    @settings(max_examples=100, deadline=None)
    @given(lam=st.floats(1e-3, 1e4), h=st.floats(1e-3, 1e5), d=st.integers(1, 5000),
           pv=st.floats(1e-6, 1.0), n=st.integers(1, 5000))
    def test_stationary_point_of_objective(self, lam, h, d, pv, n):
        v = posterior_variance(lam, summary(h, d), pv)
        f0 = laplace_objective(v, lam, n, d, h, pv, 1.0, 0.0, 0.05)
        for factor in (0.99, 1.01):
            assert laplace_objective(v * factor, lam, n, d, h, pv, 1.0, 0.0, 0.05) > f0

    @settings(max_examples=50, deadline=None)
    @given(lam=st.floats(1e-3, 1e3), h1=st.floats(0.0, 1e3), dh=st.floats(1e-3, 1e3))
    def test_decreasing_in_h(self, lam, h1, dh):
        assert posterior_variance(lam, summary(h1 + dh, 5), 0.1) < posterior_variance(lam, summary(h1, 5), 0.1)


class TestGradientVariance:
    def test_hand_value(self):
        p = FlatParams(linear(2), np.array([4.0, 4.0]))
        assert gradient_variance(p, [Sample(np.array([1.0, 2.0]), 0.0)]) == pytest.approx(2.5)

    def test_zero_gradients(self):
        # zero first-layer weights and biases kill every gradient through the dead ReLUs
        arch = ArchSpec((2, 3, 1), use_bias=False)
        p = FlatParams.zeros(arch)
        assert gradient_variance(p, [Sample(np.array([1.0, 1.0]), 0.0)]) == 0.0

    def test_duplication_invariant(self, rng):
        p = random_params(ArchSpec((3, 4, 1)), rng)
        data = Dataset(rng.standard_normal((9, 3)), np.zeros(9))
        np.testing.assert_allclose(gradient_variance(p, data.concat(data)), gradient_variance(p, data),
                                   rtol=1e-14)

    def test_permutation_invariant(self, rng):
        p = random_params(ArchSpec((3, 4, 1)), rng)
        data = Dataset(rng.standard_normal((15, 3)), np.zeros(15))
        np.testing.assert_allclose(gradient_variance(p, data.take(rng.permutation(15))),
                                   gradient_variance(p, data), rtol=1e-13)

    def test_multi_output_sums_heads(self, rng):
        arch = ArchSpec((2, 3), output_head="softmax", use_bias=False)
        p = random_params(arch, rng)
        # each logit's gradient is x in its own block, so the total is K ||x||² / d
        assert gradient_variance(p, [Sample(np.array([1.0, 2.0]), 0)]) == pytest.approx(3 * 5 / 6)

    def test_empty_rejected(self):
        with pytest.raises(EmptyDataError):
            gradient_variance(FlatParams.zeros(linear(2)), [])

    def test_matches_linear_feature_variance(self):
        rng = np.random.default_rng(0)
        X = np.sqrt(2.0) * rng.standard_normal((50_000, 4))
        p = FlatParams(linear(4), rng.standard_normal(4))
        assert gradient_variance(p, Dataset(X, np.zeros(len(X)))) == pytest.approx(2.0, rel=0.02)
