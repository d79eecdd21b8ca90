"""Tests for the DCQ estimator, the median and the variance estimators."""

import math
import os
import sys
import unittest

import numpy as np
import pytest

sys.path.insert(0, os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), 'src'))

from robust_qn.aggregation import (
    AggregateInput,
    DcqConfig,
    coord_median,
    dcq_scalar,
    dcq_vector,
    dk_constant,
    gradient_difference_variance,
    gradient_entry_variance,
    h1_entry_variance,
    h3_entry_variance,
    sandwich_variance,
)
from robust_qn.exceptions import ConfigError, DimensionMismatchError
from robust_qn.experiments import efficiency_monte_carlo
from robust_qn.models import Dataset, LogisticModel, QuadraticModel


class TestDcqConfig(unittest.TestCase):

    def test_levels_for_k1(self):
        cfg = DcqConfig.from_k(1)
        np.testing.assert_allclose(cfg.kappas, [0.5])
        np.testing.assert_allclose(cfg.deltas, [0.0], atol=1e-15)
        self.assertAlmostEqual(cfg.denom, 1 / math.sqrt(2 * math.pi))

    def test_levels_symmetric(self):
        cfg = DcqConfig.from_k(10)
        np.testing.assert_allclose(cfg.deltas, -cfg.deltas[::-1], atol=1e-12)

    def test_invalid_k(self):
        with self.assertRaises(ConfigError):
            DcqConfig.from_k(0)


class TestCoordMedian(unittest.TestCase):

    def test_odd_and_even(self):
        np.testing.assert_allclose(coord_median(np.array([[1.0], [3.0], [2.0]])), [2.0])
        np.testing.assert_allclose(coord_median(np.array([[1.0], [2.0], [3.0], [4.0]])), [2.5])

    def test_empty(self):
        with self.assertRaises(DimensionMismatchError):
            coord_median(np.zeros((0, 2)))


class TestDcq(unittest.TestCase):

    def test_three_point_example(self):
        value = dcq_scalar(AggregateInput(values=np.array([-1.0, 0.0, 1.0]), center=0.0,
                                          sigma_hat=1.0), DcqConfig.from_k(1))
        self.assertAlmostEqual(value, -0.41777, places=5)

    def test_constant_values_give_constant(self):
        values = np.full((7, 2), 3.5)
        np.testing.assert_allclose(dcq_vector(values, np.ones(2), 1.0, DcqConfig.from_k(10)),
                                   [3.5, 3.5], atol=1e-12)

    def test_zero_sigma_returns_center(self):
        values = np.array([[0.0], [1.0], [5.0]])
        np.testing.assert_allclose(dcq_vector(values, 0.0, 1.0, DcqConfig.from_k(10)), [1.0])

    def test_translation_equivariance(self):
        rng = np.random.default_rng(4)
        values = rng.standard_normal((101, 3))
        cfg = DcqConfig.from_k(10)
        shift = np.array([1.0, -2.0, 0.5])
        base = dcq_vector(values, np.ones(3), 1.0, cfg)
        np.testing.assert_allclose(dcq_vector(values + shift, np.ones(3), 1.0, cfg), base + shift,
                                   atol=1e-12)

    def test_robust_to_scaled_minority(self):
        rng = np.random.default_rng(5)
        values = rng.standard_normal((200, 1)) * 0.1 + 1.0
        values[:20] *= -3.0
        estimate = dcq_vector(values, np.array([0.1]), 1.0, DcqConfig.from_k(10))
        self.assertLess(abs(estimate[0] - 1.0), 0.1)
        self.assertGreater(abs(values.mean() - 1.0), 0.3)

    def test_sigma_length_checked(self):
        with self.assertRaises(DimensionMismatchError):
            dcq_vector(np.zeros((3, 2)), np.ones(3), 1.0, DcqConfig.from_k(2))

    def test_negative_sigma_rejected(self):
        with self.assertRaises(ValueError):
            dcq_vector(np.zeros((3, 1)), -1.0, 1.0, DcqConfig.from_k(2))


class TestDkConstant(unittest.TestCase):

    def test_k1_is_half_pi(self):
        self.assertAlmostEqual(dk_constant(DcqConfig.from_k(1)), math.pi / 2, places=9)

    def test_large_k_approaches_third_pi(self):
        value = dk_constant(DcqConfig.from_k(200))
        self.assertGreaterEqual(value, 1.045)
        self.assertLessEqual(value, 1.055)

    def test_k10_efficiency(self):
        efficiency = 1 / dk_constant(DcqConfig.from_k(10))
        self.assertGreater(efficiency, 0.92)
        self.assertLess(efficiency, 0.96)


class TestVarianceEstimators(unittest.TestCase):

    def test_quadratic_sandwich_is_sample_variance(self):
        X = np.random.default_rng(2).standard_normal((400, 2)) * np.array([1.0, 2.0])
        theta = X.mean(axis=0)
        result = sandwich_variance(QuadraticModel(2), Dataset(X), theta, n=400, s=0.01)
        np.testing.assert_allclose(result.diag, X.var(axis=0), rtol=1e-10)
        self.assertAlmostEqual(result.noise_add, 400 * 0.01 ** 2)
        np.testing.assert_allclose(result.sigma, np.sqrt(result.diag + result.noise_add))

    def test_gradient_entry_variance_nonnegative(self):
        rng = np.random.default_rng(6)
        X = rng.standard_normal((300, 3))
        y = (rng.random(300) < 0.5).astype(float)
        var = gradient_entry_variance(LogisticModel(3), Dataset(X, y), np.zeros(3), 300, 0.0)
        self.assertTrue(np.all(var >= 0))

    def _logistic_shard(self, seed=8, n=400, p=3):
        rng = np.random.default_rng(seed)
        X = rng.standard_normal((n, p))
        theta = np.array([0.5, -0.4, 0.2])[:p]
        y = (rng.random(n) < 1 / (1 + np.exp(-X @ theta))).astype(float)
        return Dataset(X, y), theta

    def test_h3_with_identity_reduces_to_h1(self):
        data, theta = self._logistic_shard()
        g = np.array([0.03, -0.01, 0.02])
        model = LogisticModel(3)
        np.testing.assert_allclose(
            h3_entry_variance(model, data, theta, np.eye(3), g, 400, 0.002),
            h1_entry_variance(model, data, theta, g, 400, 0.002),
            rtol=1e-12,
        )

    def test_h1_matches_direct_computation(self):
        data, theta = self._logistic_shard()
        g = np.array([0.03, -0.01, 0.02])
        X = data.covariates
        w = np.exp(X @ theta) / (1 + np.exp(X @ theta)) ** 2
        H_inv = np.linalg.inv((X * w[:, None]).T @ X / data.n)
        products = w[:, None] * (X @ H_inv) * (X @ (H_inv @ g))[:, None]
        expected = products.var(axis=0) + 400 * 0.002 ** 2
        result = h1_entry_variance(LogisticModel(3), data, theta, g, 400, 0.002)
        np.testing.assert_allclose(result, expected, rtol=1e-8)

    def test_quadratic_hessian_terms_are_noise_only(self):
        X = np.random.default_rng(3).standard_normal((200, 2))
        model = QuadraticModel(2)
        g = np.array([0.4, -0.2])
        V1 = np.array([[1.0, 0.2], [0.1, 0.9]])
        for variance in (h1_entry_variance(model, Dataset(X), X.mean(axis=0), g, 200, 0.05),
                         h3_entry_variance(model, Dataset(X), X.mean(axis=0), V1, g, 200, 0.05)):
            np.testing.assert_allclose(variance, np.full(2, 200 * 0.05 ** 2), rtol=1e-10)

    def test_gradient_difference_variance_quadratic(self):
        X = np.random.default_rng(4).standard_normal((250, 2))
        model = QuadraticModel(2)
        old, new = np.zeros(2), np.array([0.3, -0.1])
        # per-sample differences all equal new - old
        np.testing.assert_allclose(
            gradient_difference_variance(model, Dataset(X), new, old, 250, 0.01),
            np.full(2, 250 * 0.01 ** 2), atol=1e-14)
        np.testing.assert_allclose(
            gradient_difference_variance(model, Dataset(X), new, old, 250, 0.0), 0.0, atol=1e-14)

    def test_gradient_difference_variance_logistic(self):
        data, theta = self._logistic_shard(seed=12)
        model = LogisticModel(3)
        old = np.zeros(3)
        diff = (model.per_sample_gradient_rows(data, theta)
                - model.per_sample_gradient_rows(data, old))
        result = gradient_difference_variance(model, data, theta, old, 400, 0.003)
        np.testing.assert_allclose(result, diff.var(axis=0) + 400 * 0.003 ** 2, rtol=1e-12)
        self.assertTrue(np.all(result > 400 * 0.003 ** 2))


class TestEfficiency(unittest.TestCase):

    @pytest.mark.slow
    def test_monte_carlo_efficiency(self):
        report = efficiency_monte_carlo(M=2001, K=10, reps=5000, seed=11)
        self.assertGreaterEqual(report.dcq_ratio, 0.90)
        self.assertLessEqual(report.dcq_ratio, 0.99)
        self.assertAlmostEqual(report.median_ratio, 2 / math.pi, delta=0.03)
        self.assertAlmostEqual(report.dcq_ratio, report.asymptotic_ratio, delta=0.02)

    def test_small_run_shapes(self):
        report = efficiency_monte_carlo(M=51, K=5, reps=40, seed=1)
        self.assertEqual(report.reps, 40)
        self.assertGreater(report.var_dcq, 0)
        self.assertIn('dcq_ratio', report.to_dict())


if __name__ == '__main__':
    unittest.main()
