"""
Unit tests for second-order checks
"""

import sys
from pathlib import Path
project_root = Path(__file__).parent.parent.parent
sys.path.insert(0, str(project_root))

import unittest
import math

import numpy as np

from src.services.graph_sampler import ClosedFormGraphSampler
from src.services.localized_solver import Localization, SolveConfig
from src.services.problem_registry import problem_from_dict, problem_to_dict, registry_build
from src.services.second_order import (
    SecondOrderSample,
    critical_subspace,
    default_neighborhood_ladder,
    dfnt_estimate,
    lagrangian_hessian,
    restricted_min_eigenvalue,
    strict_second_subdiff_estimate,
    strong_sosc_over_multipliers,
    tilt_crosscheck,
)
from src.services.stability_probes import ProbeConfig, Verdict, classify
from src.utils.errors import ConfigError, UnsupportedOperationError


FAST = ProbeConfig(ladder_levels=4, min_trend=4)
ZERO4 = np.zeros(4)


class TestHessianAndSubspace(unittest.TestCase):
    """Test Lagrangian Hessians and critical subspaces"""

    def setUp(self):
        self.ex33 = registry_build('ex33')

    def test_ex33_hessian(self):
        """Test H44 = 1 - y3 - y4"""
        H = lagrangian_hessian(self.ex33, ZERO4, [0.1, 0.2, 0.3, 0.4])
        expected = np.zeros((4, 4))
        expected[3, 3] = 1.0 - 0.3 - 0.4
        np.testing.assert_allclose(H, expected, atol=1e-12)

    def test_all_active_subspace(self):
        """Test every constraint is active at the anchor and leaves span{e4}"""
        basis = critical_subspace(self.ex33, ZERO4)
        self.assertEqual(basis.shape, (4, 1))
        self.assertAlmostEqual(abs(float(basis[3, 0])), 1.0)

    def test_strict_multiplier_subspace(self):
        """Test the subspace widens when multipliers vanish"""
        basis = critical_subspace(self.ex33, ZERO4, y=[0.5, 0.5, 0.0, 0.0], mode='strict_multipliers')
        self.assertEqual(basis.shape[1], 2)
        with self.assertRaises(ConfigError):
            critical_subspace(self.ex33, ZERO4, mode='strict_multipliers')
        with self.assertRaises(ConfigError):
            critical_subspace(self.ex33, ZERO4, mode='weak')

    def test_inactive_constraints_give_whole_space(self):
        """Test an interior point"""
        basis = critical_subspace(self.ex33, ZERO4, u=-np.ones(4))
        self.assertEqual(basis.shape, (4, 4))

    def test_restricted_eigenvalue(self):
        """Test eigenvalues on a subspace and on {0}"""
        H = np.diag([-1.0, 2.0])
        self.assertAlmostEqual(restricted_min_eigenvalue(H, np.array([[0.0], [1.0]])), 2.0)
        self.assertEqual(restricted_min_eigenvalue(H, np.zeros((2, 0))), math.inf)

    def test_closed_forms_are_not_nlp(self):
        """Test unsupported problems"""
        with self.assertRaises(UnsupportedOperationError):
            lagrangian_hessian(registry_build('ex32'), [0.0], [0.0])


class TestStrongSOSC(unittest.TestCase):
    """Test strong SOSC over the multiplier polytope"""

    def setUp(self):
        self.ex33 = registry_build('ex33')

    def test_ex33_some_but_not_all(self):
        """Test the verdict flips at theta = 1 - pd_tol"""
        report = strong_sosc_over_multipliers(self.ex33, ZERO4, ZERO4, ZERO4, theta_points=11)
        self.assertEqual(len(report.vertices), 2)
        np.testing.assert_allclose(report.vertices[0].y, [0.5, 0.5, 0.0, 0.0], atol=1e-9)
        self.assertTrue(report.vertices[0].passed)
        self.assertAlmostEqual(report.vertices[0].eigenvalue, 1.0, places=9)
        self.assertFalse(report.vertices[1].passed)
        self.assertAlmostEqual(report.vertices[1].eigenvalue, 0.0, places=9)
        self.assertTrue(report.some_multipliers_pass)
        self.assertFalse(report.all_multipliers_pass)
        self.assertEqual(len(report.grid), 11)
        self.assertAlmostEqual(report.crossing, 1.0 - 1e-8, delta=1e-11)

    def test_eigenvalue_linear_in_theta(self):
        """Test lambda(theta) = 1 - theta on the grid"""
        report = strong_sosc_over_multipliers(self.ex33, ZERO4, ZERO4, ZERO4, theta_points=5)
        for check in report.grid:
            self.assertAlmostEqual(check.eigenvalue, 1.0 - check.theta, places=9)

    def test_worker_pool_matches_serial(self):
        """Test the threaded grid"""
        serial = strong_sosc_over_multipliers(self.ex33, ZERO4, ZERO4, ZERO4, theta_points=7)
        pooled = strong_sosc_over_multipliers(self.ex33, ZERO4, ZERO4, ZERO4, theta_points=7, workers=3)
        self.assertEqual(serial.to_dict(), pooled.to_dict())

    def test_constraint_scaling_keeps_verdicts(self):
        """Test scaling f1 by 10 rescales the multipliers but keeps the verdicts"""
        data = problem_to_dict(self.ex33)
        data['F'][0] = [dict(term, coeff=10.0 * term['coeff']) for term in data['F'][0]]
        data.pop('builtin')
        scaled = problem_from_dict(data)
        report = strong_sosc_over_multipliers(scaled, ZERO4, ZERO4, ZERO4, theta_points=5)
        self.assertTrue(report.some_multipliers_pass)
        self.assertFalse(report.all_multipliers_pass)
        ys = sorted(tuple(np.round(c.y, 9)) for c in report.vertices)
        self.assertIn((0.05, 0.5, 0.0, 0.0), ys)

    def test_strict_mode(self):
        """Test strict multiplier subspaces at the vertices"""
        report = strong_sosc_over_multipliers(self.ex33, ZERO4, ZERO4, ZERO4, mode='strict_multipliers')
        self.assertEqual([c.basis_dim for c in report.vertices], [2, 2])
        self.assertFalse(report.all_multipliers_pass)
        self.assertIsNone(report.basis)


class TestDefiniteness(unittest.TestCase):
    """Test the definiteness modulus and the tilt cross-check"""

    def _setup(self, problem_id):
        problem = registry_build(problem_id)
        return problem, Localization(problem.xbar, 0.5), SolveConfig()

    def test_ladder(self):
        """Test the default neighbourhood ladder"""
        loc = Localization((0.0,), 0.5, v_radius=0.01)
        ladder = default_neighborhood_ladder(loc, ProbeConfig())
        np.testing.assert_allclose(ladder, [1e-2, 1e-3, 1e-4])

    def test_quadratic_modulus(self):
        """Test s = 2 for (2/2)x^2"""
        problem, loc, cfg = self._setup('quadratic(2)')
        sample, est = dfnt_estimate(problem, loc, cfg, ProbeConfig())
        self.assertGreater(len(sample), 0)
        self.assertAlmostEqual(est.value, 2.0, places=6)
        self.assertEqual(est.verdict, Verdict.PASS)
        for r in sample.ratios():
            self.assertAlmostEqual(r, 2.0, places=6)

    def test_calibration_on_quadratics(self):
        """Test s within 1e-3 of the curvature for s in {0.5, 1, 2}"""
        for s in (0.5, 1.0, 2.0):
            problem, loc, cfg = self._setup(f'quadratic({s})')
            _, est = dfnt_estimate(problem, loc, cfg, ProbeConfig())
            self.assertAlmostEqual(est.value, s, delta=1e-3, msg=s)
            self.assertEqual(est.verdict, Verdict.PASS)

    def test_crosscheck_flat_quadratic(self):
        """Test measured tilt modulus times s stays in [0.9, 1.1] for s = 1/2"""
        problem, loc, cfg = self._setup('quadratic(0.5)')
        check = tilt_crosscheck(problem, loc, cfg, FAST)
        self.assertAlmostEqual(check.bound, 2.0, delta=1e-2)
        self.assertGreaterEqual(check.ratio, 0.9)
        self.assertLessEqual(check.ratio, 1.1)
        self.assertFalse(check.violation)

    def test_positive_modulus_implies_tilt_stability(self):
        """Test every problem with s > 0 is classified tilt stable"""
        for problem_id in ('quadratic(0.5)', 'quadratic(1)', 'abs1d', 'neg_quadratic'):
            problem, loc, cfg = self._setup(problem_id)
            _, est = dfnt_estimate(problem, loc, cfg, ProbeConfig())
            verdict = classify(problem, loc, cfg, FAST)
            if est.value > 0:
                self.assertEqual(verdict.tilt_stable, Verdict.PASS, msg=problem_id)
            else:
                self.assertEqual(problem_id, 'neg_quadratic')

    def test_local_maximum_negative(self):
        """Test s = -1 for -x^2/2"""
        problem, loc, cfg = self._setup('neg_quadratic')
        _, est = dfnt_estimate(problem, loc, cfg, ProbeConfig())
        self.assertAlmostEqual(est.value, -1.0, places=6)
        self.assertEqual(est.verdict, Verdict.FAIL)

    def test_kink_is_vacuous(self):
        """Test |x| has no admissible quadruple"""
        problem, loc, cfg = self._setup('abs1d')
        _, est = dfnt_estimate(problem, loc, cfg, ProbeConfig())
        self.assertEqual(est.verdict, Verdict.VACUOUS)
        self.assertEqual(est.value, math.inf)

    def test_explicit_ladders(self):
        """Test the estimator with a hand-built sampler"""
        problem = registry_build('quadratic(1)')
        sampler = ClosedFormGraphSampler(problem)
        sample, est = strict_second_subdiff_estimate(sampler, [0.0], [0.0], math.inf, [1e-4], [0.01])
        self.assertEqual(len(est.trend), 1)
        self.assertAlmostEqual(est.value, 1.0, places=6)
        self.assertAlmostEqual(SecondOrderSample.ratio(np.array([2.0]), np.array([1.0])), 0.5)

    def test_crosscheck_consistent(self):
        """Test measured tilt modulus 1/2 against the bound 1/s"""
        problem, loc, cfg = self._setup('quadratic(2)')
        check = tilt_crosscheck(problem, loc, cfg, FAST)
        self.assertAlmostEqual(check.bound, 0.5, places=6)
        self.assertAlmostEqual(check.measured, 0.5, places=5)
        self.assertFalse(check.violation)
        self.assertFalse(check.inconsistent)
        self.assertAlmostEqual(check.ratio, 1.0, places=4)

    def test_crosscheck_vacuous(self):
        """Test a vacuous modulus with a zero tilt modulus"""
        problem, loc, cfg = self._setup('abs1d')
        check = tilt_crosscheck(problem, loc, cfg, FAST)
        self.assertEqual(check.bound, 0.0)
        self.assertFalse(check.violation)
        self.assertIsNone(check.ratio)
        self.assertEqual(check.dfnt_verdict, Verdict.VACUOUS)


if __name__ == '__main__':
    unittest.main()
