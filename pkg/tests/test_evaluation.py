from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coldpac.errors import EmptyDataError, TaskMismatchError, TrainingDivergedError
from coldpac.evaluation import (
    TrainConfig,
    ece,
    ece_from_probs,
    evaluate,
    gibbs_nll,
    predictive_nll,
    train_map,
    zero_one,
    zero_one_from_probs,
)
from coldpac.laplace import IsotropicGaussian
from coldpac.nnet import HALF_LOG_2PI, ArchSpec, Dataset, FlatParams, init_params, mean_nll, predict


def linear(d: int) -> ArchSpec:
    return ArchSpec((d, 1), use_bias=False)


@pytest.fixture(scope="module")
def blobs():
    rng = np.random.default_rng(0)
    y = rng.integers(0, 3, 120)
    centres = np.array([[2.0, 0.0], [-1.0, 1.7], [-1.0, -1.7]])
    return Dataset(centres[y] + 0.8 * rng.standard_normal((120, 2)), y)


class TestTrainMap:
    def test_linear_least_squares_converges(self):
        rng = np.random.default_rng(1)
        X = rng.standard_normal((200, 3))
        data = Dataset(X, X @ np.array([1.0, -2.0, 0.5]))
        arch = linear(3)
        init = FlatParams.zeros(arch)
        w = train_map(arch, data, TrainConfig(step_size=0.05, epochs=30, batch_size=16), init=init)
        assert mean_nll(w, data) - HALF_LOG_2PI < 1e-3 * (mean_nll(init, data) - HALF_LOG_2PI)

    def test_epochs_zero_returns_init(self):
        arch = ArchSpec((2, 3, 1))
        init = init_params(arch, np.random.default_rng(0))
        w = train_map(arch, Dataset(np.ones((4, 2)), np.ones(4)), TrainConfig(epochs=0), init=init)
        np.testing.assert_array_equal(w.values, init.values)

    def test_zero_step_returns_init(self):
        arch = ArchSpec((2, 3, 1))
        init = init_params(arch, np.random.default_rng(0))
        w = train_map(arch, Dataset(np.ones((4, 2)), np.ones(4)), TrainConfig(step_size=0.0, epochs=3),
                      init=init)
        np.testing.assert_array_equal(w.values, init.values)

    def test_bit_identical_with_same_seed(self, blobs):
        arch = ArchSpec((2, 5, 3), output_head="softmax")
        cfg = TrainConfig(step_size=0.05, epochs=5, seed=3)
        a, b = train_map(arch, blobs, cfg), train_map(arch, blobs, cfg)
        assert a.values.tobytes() == b.values.tobytes()

    def test_loss_decreases(self, blobs):
        arch = ArchSpec((2, 8, 3), output_head="softmax")
        hist: list[float] = []
        train_map(arch, blobs, TrainConfig(step_size=0.05, epochs=20, seed=1), history=hist)
        assert len(hist) == 20
        assert hist[-1] <= hist[0]

    def test_divergence_reports_epoch(self):
        rng = np.random.default_rng(0)
        X = 100 * rng.standard_normal((50, 2))
        with pytest.raises(TrainingDivergedError) as info:
            train_map(linear(2), Dataset(X, X.sum(axis=1)), TrainConfig(step_size=10.0, epochs=20))
        assert info.value.epoch >= 0

    def test_empty_rejected(self):
        with pytest.raises(EmptyDataError):
            train_map(linear(2), Dataset(np.zeros((0, 2)), np.zeros(0)), TrainConfig())

    def test_config_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(batch_size=0)


class TestPredictiveNll:
    def test_degenerate_regression_exact_fit(self):
        w = FlatParams(linear(2), np.array([1.0, -1.0]))
        X = np.random.default_rng(0).standard_normal((10, 2))
        post = IsotropicGaussian(w, 1e-30)
        assert predictive_nll(post, Dataset(X, X @ w.values), 5, 0) == pytest.approx(HALF_LOG_2PI, abs=1e-12)

    def test_degenerate_classification_certain(self):
        arch = ArchSpec((1, 2), output_head="softmax", use_bias=False)
        post = IsotropicGaussian(FlatParams(arch, np.array([-500.0, 500.0])), 1e-30)
        assert predictive_nll(post, Dataset(np.ones((3, 1)), np.ones(3, dtype=int)), 4, 0) == pytest.approx(
            0.0, abs=1e-12)

    def test_single_draw_equals_gibbs(self, blobs):
        arch = ArchSpec((2, 4, 3), output_head="softmax")
        post = IsotropicGaussian(init_params(arch, np.random.default_rng(2)), 0.3)
        assert predictive_nll(post, blobs, 1, 5) == pytest.approx(gibbs_nll(post, blobs, 1, 5), rel=1e-13)

    def test_stable_for_very_unlikely_targets(self):
        w = FlatParams(linear(1), np.array([0.0]))
        post = IsotropicGaussian(w, 1e-30)
        # every per-draw likelihood underflows to 0; the log-domain average must not
        v = predictive_nll(post, Dataset(np.ones((2, 1)), np.array([100.0, -100.0])), 10, 0)
        assert v == pytest.approx(HALF_LOG_2PI + 5000, rel=1e-12)

    def test_variance_to_zero_matches_deterministic(self, blobs):
        arch = ArchSpec((2, 4, 3), output_head="softmax")
        w = init_params(arch, np.random.default_rng(4))
        post = IsotropicGaussian(w, 1e-30)
        rep = evaluate(post, blobs, 10, 0)
        probs = predict(w, blobs.x)
        assert rep.nll == pytest.approx(mean_nll(w, blobs), abs=1e-6)
        assert rep.zero_one == pytest.approx(zero_one_from_probs(probs, blobs.y), abs=1e-6)
        assert rep.ece == pytest.approx(ece_from_probs(probs, blobs.y), abs=1e-6)

    @settings(max_examples=20, deadline=None)
    @given(seed=st.integers(0, 2**31), var=st.floats(1e-3, 1.0), cls=st.booleans())
    def test_jensen_ordering(self, seed, var, cls):
        rng = np.random.default_rng(seed)
        if cls:
            arch = ArchSpec((2, 4, 3), output_head="softmax")
            data = Dataset(rng.standard_normal((40, 2)), rng.integers(0, 3, 40))
        else:
            arch = ArchSpec((2, 4, 1))
            data = Dataset(rng.standard_normal((40, 2)), rng.standard_normal(40))
        post = IsotropicGaussian(init_params(arch, rng), var)
        p = predictive_nll(post, data, 50, seed)
        g, se = gibbs_nll(post, data, 50, seed, return_se=True)
        assert p <= g + 3 * se


class TestEce:
    def test_confident_and_correct(self):
        probs = np.array([[1.0, 0.0], [0.0, 1.0]])
        assert ece_from_probs(probs, np.array([0, 1])) == 0.0

    def test_confident_and_wrong(self):
        probs = np.array([[1.0, 0.0], [0.0, 1.0]])
        assert ece_from_probs(probs, np.array([1, 0])) == 1.0

    def test_single_bin_hand_value(self):
        probs = np.array([[0.8, 0.2], [0.4, 0.6]])
        assert ece_from_probs(probs, np.array([0, 0]), bins=1) == pytest.approx(0.2)

    def test_bin_edges_are_right_closed(self):
        # confidence exactly 0.6 belongs to (0.4, 0.6] with 5 bins, alone there
        probs = np.array([[0.6, 0.4], [0.9, 0.1]])
        assert ece_from_probs(probs, np.array([0, 0]), bins=5) == pytest.approx(0.5 * 0.4 + 0.5 * 0.1)

    def test_regression_rejected(self):
        post = IsotropicGaussian(FlatParams.zeros(linear(2)), 0.1)
        with pytest.raises(TaskMismatchError):
            ece(post, Dataset(np.zeros((2, 2)), np.zeros(2)), 5)
        with pytest.raises(TaskMismatchError):
            zero_one(post, Dataset(np.zeros((2, 2)), np.zeros(2)), 5)

    def test_bins_validated(self):
        with pytest.raises(ValueError):
            ece_from_probs(np.array([[1.0]]), np.array([0]), bins=0)

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 2**31), bins=st.integers(1, 30))
    def test_range_and_permutation_invariance(self, seed, bins):
        rng = np.random.default_rng(seed)
        probs = rng.dirichlet(np.ones(4), size=50)
        labels = rng.integers(0, 4, 50)
        e = ece_from_probs(probs, labels, bins)
        assert 0.0 <= e <= 1.0
        perm = rng.permutation(50)
        assert ece_from_probs(probs[perm], labels[perm], bins) == pytest.approx(e, abs=1e-14)
        z = zero_one_from_probs(probs, labels)
        assert z == zero_one_from_probs(probs[perm], labels[perm])


class TestZeroOne:
    def test_all_correct_and_all_wrong(self):
        probs = np.array([[0.9, 0.1], [0.2, 0.8]])
        assert zero_one_from_probs(probs, np.array([0, 1])) == 0.0
        assert zero_one_from_probs(probs, np.array([1, 0])) == 1.0

    def test_tie_goes_to_lowest_index(self):
        probs = np.full((2, 2), 0.5)
        assert zero_one_from_probs(probs, np.array([0, 0])) == 0.0
        assert zero_one_from_probs(probs, np.array([1, 1])) == 1.0

    def test_uniform_predictive_from_zero_network(self):
        arch = ArchSpec((2, 2), output_head="softmax")
        post = IsotropicGaussian(FlatParams.zeros(arch), 1e-30)
        data = Dataset(np.ones((4, 2)), np.array([0, 1, 1, 1]))
        assert zero_one(post, data, 3) == 0.75

    def test_permutation_invariance_through_posterior(self, blobs):
        arch = ArchSpec((2, 4, 3), output_head="softmax")
        post = IsotropicGaussian(init_params(arch, np.random.default_rng(8)), 0.05)
        perm = np.random.default_rng(1).permutation(len(blobs))
        a = zero_one(post, blobs, 20, rng_seed=3)
        b = zero_one(post, blobs.take(perm), 20, rng_seed=3)
        assert a == b
        assert ece(post, blobs, 20, rng_seed=3) == pytest.approx(ece(post, blobs.take(perm), 20, rng_seed=3),
                                                                 abs=1e-12)


class TestEvaluate:
    def test_regression_report(self):
        post = IsotropicGaussian(FlatParams(linear(2), np.array([0.5, 0.5])), 0.01)
        rep = evaluate(post, Dataset(np.ones((5, 2)), np.ones(5)), 30, 1)
        assert rep.ece is None and rep.zero_one is None
        assert rep.n_eval == 5 and rep.mc_samples == 30
        assert rep.nll <= rep.gibbs_nll + 1e-12

    def test_matches_individual_metrics(self, blobs):
        arch = ArchSpec((2, 4, 3), output_head="softmax")
        post = IsotropicGaussian(init_params(arch, np.random.default_rng(6)), 0.1)
        rep = evaluate(post, blobs, 25, 11)
        assert rep.nll == pytest.approx(predictive_nll(post, blobs, 25, 11), rel=1e-14)
        assert rep.ece == pytest.approx(ece(post, blobs, 25, rng_seed=11), rel=1e-14)
        assert rep.zero_one == zero_one(post, blobs, 25, rng_seed=11)
        assert 0 <= rep.ece <= 1 and 0 <= rep.zero_one <= 1
