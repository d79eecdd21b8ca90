"""Tests for the synthetic generators, replication driver and report files."""

import csv
import math
import os
import sys
import tempfile
import unittest
import xml.etree.ElementTree as ET

import numpy as np
import pytest
from scipy import stats

sys.path.insert(0, os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), 'src'))

from robust_qn.exceptions import ConfigError
from robust_qn.experiments import (
    ESTIMATORS,
    ExperimentConfig,
    MrseReport,
    default_grid,
    emit_svg,
    privacy_audit,
    read_csv,
    run_replications,
    run_single,
    write_audit_csv,
    write_csv,
)
from robust_qn.experiments.privacy_audit import AUDIT_COLUMNS
from robust_qn.experiments.reporting import CSV_COLUMNS
from robust_qn.experiments.synthetic import (
    gen_logistic,
    gen_poisson,
    gen_quadratic,
    poisson_acceptance_rate,
    toeplitz_cov,
    true_theta,
)

SVG_NS = '{http://www.w3.org/2000/svg}'
SMALL = dict(model='quadratic', p=2, m=6, n=20, reps=3, alpha_byz=0.0, master_seed=7)


class TestGenerators(unittest.TestCase):

    def test_toeplitz_entries(self):
        cov = toeplitz_cov(5)
        self.assertAlmostEqual(cov[0, 2], 0.36)
        np.testing.assert_allclose(cov, cov.T)

    def test_true_theta_norm(self):
        for p in (1, 4, 10):
            self.assertAlmostEqual(np.linalg.norm(true_theta(p)), 0.5)

    def test_logistic_responses_binary(self):
        data, theta = gen_logistic(3, 500, seed=1)
        self.assertEqual(data.covariates.shape, (500, 3))
        self.assertTrue(set(np.unique(data.responses)) <= {0.0, 1.0})
        np.testing.assert_allclose(theta, true_theta(3))

    def test_poisson_rows_truncated(self):
        data, theta = gen_poisson(4, 2000, seed=2)
        self.assertEqual(data.n, 2000)
        self.assertTrue(np.all(np.abs(data.covariates @ theta) <= 1.0))
        self.assertTrue(np.all(data.responses >= 0))

    def test_poisson_acceptance_matches_normal_probability(self):
        p = 10
        theta = true_theta(p)
        sd = math.sqrt(theta @ toeplitz_cov(p) @ theta)
        expected = 2 * stats.norm.cdf(1 / sd) - 1
        self.assertAlmostEqual(poisson_acceptance_rate(p, 100_000, seed=3), expected, delta=0.01)

    def test_one_dimensional_acceptance_above_ninety_percent(self):
        rate = poisson_acceptance_rate(1, 100_000, seed=3)
        self.assertGreaterEqual(rate, 0.90)
        self.assertLessEqual(rate, 0.99)

    def test_quadratic_centered_on_theta(self):
        data, theta = gen_quadratic(3, 20000, seed=4)
        np.testing.assert_allclose(data.covariates.mean(axis=0), theta, atol=0.03)

    def test_invalid_sizes(self):
        with self.assertRaises(ConfigError):
            gen_logistic(0, 10, seed=0)


class TestExperimentConfig(unittest.TestCase):

    def test_defaults(self):
        cfg = ExperimentConfig()
        self.assertEqual(cfg.model, 'logistic')
        self.assertEqual((cfg.m, cfg.n), (100, 500))
        params = cfg.privacy()
        self.assertAlmostEqual(params.epsilon, 6.0)
        self.assertAlmostEqual(params.delta, 0.01)

    def test_validation(self):
        for bad in ({'alpha_byz': 0.5}, {'n': 1}, {'reps': 0}, {'variant': 'other'},
                    {'epsilon_total': 0.0}, {'workers': 0}):
            with self.assertRaises(ConfigError):
                ExperimentConfig(**bad)

    def test_unknown_model(self):
        with self.assertRaises(ValueError):
            ExperimentConfig(model='probit')

    def test_from_mapping_rejects_unknown_keys(self):
        with self.assertRaises(ConfigError):
            ExperimentConfig.from_mapping({'p': 3, 'colour': 'blue'})

    def test_protocol_carries_settings(self):
        protocol = ExperimentConfig(K=4, dp_enabled=False).protocol()
        self.assertEqual(protocol.K, 4)
        self.assertFalse(protocol.dp_enabled)

    def test_default_grids(self):
        cfg = ExperimentConfig(m=50)
        self.assertEqual(default_grid('m', cfg), [50.0, 200.0])
        self.assertEqual(len(default_grid('epsilon', cfg)), 3)

    def test_unreliable_center_budget_split(self):
        cfg = ExperimentConfig(variant='unreliable-center', epsilon_total=5.0, delta_total=0.05)
        self.assertEqual(cfg.rounds, 6)
        params = cfg.privacy()
        self.assertAlmostEqual(params.epsilon, 5.0 / 6)
        self.assertAlmostEqual(params.delta, 0.05 / 6)
        self.assertEqual(ExperimentConfig().rounds, 5)

    def test_hessian_lower_bound(self):
        self.assertAlmostEqual(ExperimentConfig(model='quadratic', p=3).hessian_lower_bound(), 1.0)
        logistic = ExperimentConfig(model='logistic', p=10).hessian_lower_bound()
        self.assertGreater(logistic, 0.04)
        self.assertLess(logistic, 0.07)
        self.assertEqual(ExperimentConfig(lambda_s=0.25).hessian_lower_bound(), 0.25)
        self.assertAlmostEqual(ExperimentConfig(p=10).privacy().lambda_s, logistic)
        with self.assertRaises(ConfigError):
            ExperimentConfig(lambda_s=0.0)


class TestReplications(unittest.TestCase):

    def test_row_count_and_determinism(self):
        cfg = ExperimentConfig(**SMALL)
        first = run_replications(cfg, [10.0, 30.0])
        second = run_replications(cfg, [10.0, 30.0])
        self.assertEqual(len(first.rows), len(ESTIMATORS) * 2)
        self.assertEqual([r.mrse for r in first.rows], [r.mrse for r in second.rows])
        self.assertEqual(first.failures, {})

    def test_threaded_matches_sequential(self):
        sequential = run_replications(ExperimentConfig(**SMALL), [30.0])
        threaded = run_replications(ExperimentConfig(workers=3, **SMALL), [30.0])
        self.assertEqual([r.mrse for r in sequential.rows], [r.mrse for r in threaded.rows])

    def test_single_replicate_equals_single_run_error(self):
        cfg = ExperimentConfig(dp_enabled=False, **dict(SMALL, reps=1))
        report = run_replications(cfg, [30.0])
        private, _, theta_star = run_single(cfg, report.seeds[0])
        self.assertAlmostEqual(report.lookup('qn', 30.0).mrse,
                               float(np.linalg.norm(private.theta_qn - theta_star)))
        self.assertEqual(report.lookup('qn', 30.0).stderr, 0.0)

    def test_machine_grid(self):
        report = run_replications(ExperimentConfig(**SMALL), [4, 8], grid_kind='m')
        self.assertEqual(report.grid_values(), [4, 8])
        self.assertEqual(report.lookup('cq', 8).m, 8)

    def test_unreliable_center_variant(self):
        cfg = ExperimentConfig(variant='unreliable-center', **SMALL)
        report = run_replications(cfg, [30.0])
        self.assertTrue(all(math.isfinite(r.mrse) for r in report.rows))

    def test_unreliable_center_ledger_spends_total_budget(self):
        cfg = ExperimentConfig(variant='unreliable-center', epsilon_total=5.0, delta_total=0.05,
                               **dict(SMALL, reps=1))
        private, _, _ = run_single(cfg, 3)
        self.assertEqual(len(private.ledger), 6)
        eps, delta = private.ledger.totals
        self.assertAlmostEqual(eps, 5.0)
        self.assertAlmostEqual(delta, 0.05)

    @pytest.mark.slow
    def test_error_decreases_with_budget(self):
        cfg = ExperimentConfig(model='logistic', p=10, m=100, n=500, alpha_byz=0.1,
                               attack_scale=-3.0, delta_total=0.05, reps=100, workers=4)
        grid = [4.0, 12.0, 30.0]
        report = run_replications(cfg, grid)
        self.assertEqual(report.failures, {})
        for row in report.rows:
            self.assertTrue(math.isfinite(row.mrse), row)
        self.assertLess(report.lookup('os', 30.0).mrse, report.lookup('cq', 30.0).mrse)
        qn = [report.lookup('qn', eps).mrse for eps in grid]
        self.assertGreater(qn[0], qn[1])
        self.assertGreater(qn[1], qn[2])
        self.assertLess(qn[1] - qn[2], qn[0] - qn[1])

    def test_empty_grid(self):
        with self.assertRaises(ConfigError):
            run_replications(ExperimentConfig(**SMALL), [])


class TestReporting(unittest.TestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.report = run_replications(ExperimentConfig(**SMALL), [10.0, 30.0])

    def tearDown(self):
        self.tmp.cleanup()

    def test_csv_round_trip(self):
        path = write_csv(self.report, os.path.join(self.tmp.name, 'mrse.csv'))
        loaded = read_csv(path)
        self.assertEqual(loaded.rows, self.report.rows)

    def test_header_only_csv(self):
        path = write_csv(MrseReport(), os.path.join(self.tmp.name, 'empty.csv'))
        with open(path) as f:
            self.assertEqual(f.read().strip(), ','.join(CSV_COLUMNS))
        self.assertEqual(read_csv(path).rows, [])

    def test_bad_header_rejected(self):
        path = os.path.join(self.tmp.name, 'bad.csv')
        with open(path, 'w') as f:
            f.write('a,b\n1,2\n')
        with self.assertRaises(ValueError):
            read_csv(path)

    def test_svg_has_one_line_group_per_estimator(self):
        path = emit_svg(self.report, os.path.join(self.tmp.name, 'mrse.svg'))
        root = ET.parse(path).getroot()
        for estimator in ESTIMATORS:
            group = root.find(f".//{SVG_NS}g[@id='estimator-{estimator}']")
            self.assertIsNotNone(group, estimator)
            style = group.find(f'{SVG_NS}path').get('style')
            if estimator == 'qn_nodp':
                self.assertNotIn('stroke-dasharray', style)
            else:
                self.assertIn('stroke-dasharray', style)

    def test_svg_output_is_byte_stable(self):
        first = emit_svg(self.report, os.path.join(self.tmp.name, 'first.svg'))
        second = emit_svg(self.report, os.path.join(self.tmp.name, 'second.svg'))
        with open(first, 'rb') as a, open(second, 'rb') as b:
            self.assertEqual(a.read(), b.read())


class TestPrivacyAudit(unittest.TestCase):

    def test_audit_sections_and_csv(self):
        cfg = ExperimentConfig(p=5, n=1000)
        audit = privacy_audit(cfg, draws=20_000, seed=1)
        composition = dict(audit.composition)
        self.assertAlmostEqual(composition['epsilon_basic'], 30.0)
        self.assertLessEqual(composition['delta_advanced'], 1.0)
        self.assertEqual(len(audit.noise_scales), 6)
        with tempfile.TemporaryDirectory() as tmp:
            path = write_audit_csv(audit, os.path.join(tmp, 'audit.csv'))
            with open(path) as f:
                rows = list(csv.reader(f))
        self.assertEqual(rows[0], AUDIT_COLUMNS)
        self.assertEqual(len(rows) - 1, len(audit.rows()))

    def test_unreliable_center_audit_counts_six_rounds(self):
        cfg = ExperimentConfig(p=5, n=1000, variant='unreliable-center')
        composition = dict(privacy_audit(cfg, draws=20_000, seed=1).composition)
        self.assertEqual(composition['rounds'], 6.0)
        self.assertAlmostEqual(composition['epsilon_basic'], 30.0)
        self.assertAlmostEqual(composition['variance_fail_bound'], 8 * 5 * 1000 ** -2.0)


if __name__ == '__main__':
    unittest.main()
