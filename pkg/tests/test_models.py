"""Tests for the loss models and the local Newton solver."""

import os
import sys
import unittest

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), 'src'))

from robust_qn.exceptions import ConfigError, DimensionMismatchError, InvalidDataError
from robust_qn.models import (
    Dataset,
    LogisticModel,
    ModelKind,
    ModelSpec,
    PoissonModel,
    QuadraticModel,
    SolverOpts,
    available_models,
    get_model,
    local_m_estimate,
    regularized_inverse,
    regularized_solve,
)


def _numeric_gradient(model, data, theta, h=1e-6):
    grad = np.zeros_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = h
        grad[i] = (model.loss_value(data, theta + e) - model.loss_value(data, theta - e)) / (2 * h)
    return grad


def _gradient_by_differences(model, data, theta, h=1e-5):
    """Central differences of loss_value, one coordinate at a time."""
    return np.array([
        (model.loss_value(data, theta + h * e) - model.loss_value(data, theta - h * e)) / (2 * h)
        for e in np.eye(theta.size)
    ])


def _hessian_by_differences(model, data, theta, h=1e-5):
    columns = [
        (model.gradient(data, theta + h * e) - model.gradient(data, theta - h * e)) / (2 * h)
        for e in np.eye(theta.size)
    ]
    return np.column_stack(columns)


def _random_instances(seed=11):
    """(model, data, theta) triples for every model family."""
    rng = np.random.default_rng(seed)
    X = rng.uniform(-1, 1, size=(300, 3))
    theta = np.array([0.4, -0.3, 0.2])
    yield (LogisticModel(3), Dataset(X, (rng.random(300) < 1 / (1 + np.exp(-X @ theta))).astype(float)),
           rng.normal(0.0, 0.5, 3))
    yield (PoissonModel(3), Dataset(X, rng.poisson(np.exp(X @ theta)).astype(float)),
           rng.normal(0.0, 0.5, 3))
    yield QuadraticModel(3), Dataset(rng.standard_normal((300, 3)) + 1.0), rng.normal(0.0, 0.5, 3)


class TestDerivatives(unittest.TestCase):
    """Analytic derivatives against finite differences for all three models."""

    def test_gradient_matches_loss_differences(self):
        for seed in range(5):
            for model, data, theta in _random_instances(seed):
                with self.subTest(model=model.kind.value, seed=seed):
                    np.testing.assert_allclose(model.gradient(data, theta),
                                               _gradient_by_differences(model, data, theta),
                                               rtol=1e-5, atol=1e-9)

    def test_hessian_matches_gradient_differences(self):
        for seed in range(5):
            for model, data, theta in _random_instances(seed):
                with self.subTest(model=model.kind.value, seed=seed):
                    np.testing.assert_allclose(model.hessian(data, theta),
                                               _hessian_by_differences(model, data, theta),
                                               rtol=1e-4, atol=1e-8)

    def test_hessians_positive_semidefinite(self):
        for model, data, theta in _random_instances(3):
            H = model.hessian(data, theta)
            np.testing.assert_array_equal(H, H.T)
            self.assertGreaterEqual(np.linalg.eigvalsh(H)[0], -1e-10)


class TestRegistry(unittest.TestCase):
    """Model lookup."""

    def test_get_model_by_name(self):
        model = get_model('logistic', 3)
        self.assertIsInstance(model, LogisticModel)
        self.assertEqual(model.p, 3)
        self.assertEqual(model.kind, ModelKind.LOGISTIC)

    def test_get_model_by_spec(self):
        self.assertIsInstance(get_model(ModelSpec(ModelKind.POISSON, 4)), PoissonModel)

    def test_unknown_model(self):
        with self.assertRaises(ConfigError):
            get_model('probit', 2)

    def test_missing_dimension(self):
        with self.assertRaises(ConfigError):
            get_model('quadratic')

    def test_available_models(self):
        self.assertEqual(sorted(available_models()), ['logistic', 'poisson', 'quadratic'])


class TestDataset(unittest.TestCase):

    def test_length_mismatch(self):
        with self.assertRaises(DimensionMismatchError):
            Dataset(np.zeros((3, 2)), np.zeros(4))

    def test_take(self):
        data = Dataset(np.arange(10.0).reshape(5, 2), np.arange(5.0))
        sub = data.take(np.array([4, 0]))
        np.testing.assert_array_equal(sub.responses, [4.0, 0.0])
        self.assertEqual(len(sub), 2)


class TestLogisticModel(unittest.TestCase):

    def setUp(self):
        rng = np.random.default_rng(0)
        self.X = rng.standard_normal((200, 3))
        self.y = (rng.random(200) < 0.5).astype(float)
        self.data = Dataset(self.X, self.y)
        self.model = LogisticModel(3)

    def test_gradient_matches_finite_differences(self):
        theta = np.array([0.3, -0.2, 0.1])
        np.testing.assert_allclose(self.model.gradient(self.data, theta),
                                   _numeric_gradient(self.model, self.data, theta), atol=1e-6)

    def test_hessian_symmetric_positive_definite(self):
        H = self.model.hessian(self.data, np.zeros(3))
        np.testing.assert_allclose(H, H.T)
        self.assertTrue(np.all(np.linalg.eigvalsh(H) > 0))

    def test_hessian_products_match_hessian(self):
        theta = np.array([0.1, 0.2, -0.3])
        left = np.eye(3)
        right = np.array([1.0, -1.0, 0.5])
        rows = self.model.per_sample_hessian_products(self.data, theta, left, right)
        np.testing.assert_allclose(rows.mean(axis=0), self.model.hessian(self.data, theta) @ right)

    def test_large_linear_predictor_stays_finite(self):
        theta = np.array([500.0, 0.0, 0.0])
        self.assertTrue(np.isfinite(self.model.loss_value(self.data, theta)))

    def test_rejects_non_binary_responses(self):
        with self.assertRaises(InvalidDataError):
            self.model.loss_value(Dataset(self.X, self.y + 2.0), np.zeros(3))

    def test_rejects_wrong_theta_length(self):
        with self.assertRaises(DimensionMismatchError):
            self.model.gradient(self.data, np.zeros(2))


class TestPoissonModel(unittest.TestCase):

    def test_rejects_negative_counts(self):
        data = Dataset(np.ones((2, 1)), np.array([1.0, -1.0]))
        with self.assertRaises(InvalidDataError):
            PoissonModel(1).loss_value(data, np.zeros(1))

    def test_solver_recovers_coefficients(self):
        rng = np.random.default_rng(3)
        X = rng.uniform(-1, 1, size=(20000, 2))
        theta_star = np.array([0.4, -0.3])
        data = Dataset(X, rng.poisson(np.exp(X @ theta_star)).astype(float))
        result = local_m_estimate(PoissonModel(2), data)
        self.assertTrue(result.converged)
        np.testing.assert_allclose(result.theta, theta_star, atol=0.05)


class TestQuadraticModel(unittest.TestCase):

    def test_estimate_is_sample_mean(self):
        X = np.random.default_rng(1).standard_normal((50, 4)) + 2.0
        result = local_m_estimate(QuadraticModel(4), Dataset(X))
        self.assertTrue(result.converged)
        np.testing.assert_allclose(result.theta, X.mean(axis=0), atol=1e-10)

    def test_hessian_is_identity(self):
        np.testing.assert_array_equal(QuadraticModel(3).hessian(Dataset(np.zeros((2, 3))), np.zeros(3)),
                                      np.eye(3))


class TestSolver(unittest.TestCase):

    def test_logistic_solver_converges(self):
        rng = np.random.default_rng(7)
        X = rng.standard_normal((5000, 2))
        theta_star = np.array([1.0, -0.5])
        y = (rng.random(5000) < 1 / (1 + np.exp(-X @ theta_star))).astype(float)
        result = local_m_estimate(LogisticModel(2), Dataset(X, y))
        self.assertTrue(result.converged)
        self.assertLess(result.grad_norm, 1e-8)
        np.testing.assert_allclose(result.theta, theta_star, atol=0.15)

    def test_solver_options_validated(self):
        with self.assertRaises(ConfigError):
            SolverOpts(tol=0.0)
        with self.assertRaises(ConfigError):
            SolverOpts(damping=1.5)
        with self.assertRaises(ConfigError):
            SolverOpts(max_norm=0.0)

    def test_regularized_solve_ridges_singular_matrix(self):
        H = np.array([[1.0, 1.0], [1.0, 1.0]])
        x, ridged = regularized_solve(H, np.array([1.0, 1.0]))
        self.assertTrue(ridged)
        self.assertTrue(np.all(np.isfinite(x)))

    def test_regularized_inverse_symmetric(self):
        A = np.array([[2.0, 0.3], [0.3, 1.0]])
        inv = regularized_inverse(A)
        np.testing.assert_allclose(inv, inv.T)
        np.testing.assert_allclose(inv @ A, np.eye(2), atol=1e-12)

    def test_estimate_invariant_to_sample_order(self):
        for model, data, _ in _random_instances(5):
            order = np.random.default_rng(2).permutation(data.n)
            with self.subTest(model=model.kind.value):
                first = local_m_estimate(model, data)
                shuffled = local_m_estimate(model, data.take(order))
                self.assertTrue(first.converged and shuffled.converged)
                np.testing.assert_allclose(shuffled.theta, first.theta, atol=1e-7)

    def test_separable_data_flagged_as_diverged(self):
        X = np.linspace(-2.0, 2.0, 40).reshape(-1, 1) + 0.05
        data = Dataset(X, (X[:, 0] > 0).astype(float))
        with self.assertLogs('robust_qn.models.base_model', level='WARNING'):
            result = local_m_estimate(LogisticModel(1), data)
        self.assertFalse(result.converged)
        self.assertTrue(result.diverged)
        self.assertTrue(np.all(np.isfinite(result.theta)))
        self.assertGreater(result.theta[0], 0.0)
        self.assertLess(abs(result.theta[0]), SolverOpts().max_norm)

    def test_parameter_norm_cap(self):
        X = np.linspace(-2.0, 2.0, 40).reshape(-1, 1) + 0.05
        data = Dataset(X, (X[:, 0] > 0).astype(float))
        result = local_m_estimate(LogisticModel(1), data, opts=SolverOpts(max_norm=1.0))
        self.assertTrue(result.diverged)
        self.assertLessEqual(np.linalg.norm(result.theta), 1.0)

    def test_converged_fit_is_not_diverged(self):
        rng = np.random.default_rng(9)
        X = rng.standard_normal((2000, 2))
        y = (rng.random(2000) < 1 / (1 + np.exp(-X @ np.array([0.35, 0.35])))).astype(float)
        result = local_m_estimate(LogisticModel(2), Dataset(X, y))
        self.assertTrue(result.converged)
        self.assertFalse(result.diverged)


if __name__ == '__main__':
    unittest.main()
