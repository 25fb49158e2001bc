"""
Unit tests for stability probes
Tests trend verdicts, Lipschitz moduli, envelope identities, hypo-convexity,
prox-regularity, inner norms and the classification.
"""

import sys
from pathlib import Path
project_root = Path(__file__).parent.parent.parent
sys.path.insert(0, str(project_root))

import unittest
import math

import numpy as np

from src.services.graph_sampler import ClosedFormGraphSampler, GraphSample
from src.services.localized_solver import Localization, SolveConfig, axis_grid, value_surface
from src.services.problem_registry import registry_build
from src.services.stability_probes import (
    ProbeConfig,
    Verdict,
    classify,
    continuity_trend,
    envelope_check_u,
    envelope_check_v,
    estimate_lipschitz,
    graphical_derivative_inner_norm,
    hypo_u_grid,
    hypoconvexity_modulus,
    lipschitz_trend,
    prox_regularity_level,
    sphere_directions,
    trend_surfaces,
    trend_verdict,
    truncation_identity_check,
    value_function_checks,
)
from src.utils.errors import ConfigError, ProbeError


FAST = ProbeConfig(ladder_levels=4, min_trend=4)


def _setup(problem_id):
    problem = registry_build(problem_id)
    return problem, Localization(problem.xbar, 0.5), SolveConfig()


class TestTrendVerdict(unittest.TestCase):
    """Test verdicts read from shrinking-neighbourhood trends"""

    scales = [1e-2, 1e-3, 1e-4, 1e-5]

    def _trend(self, values):
        return list(zip(self.scales, values))

    def test_flat_trend_passes(self):
        """Test a bounded modulus"""
        self.assertEqual(trend_verdict(self._trend([1.0, 1.0, 1.01, 1.0]), FAST), Verdict.PASS)

    def test_noise_floor_passes(self):
        """Test zero moduli with solver noise"""
        self.assertEqual(trend_verdict(self._trend([0.0, 1e-9, 3e-8, 2e-7]), FAST), Verdict.PASS)

    def test_blowup_fails(self):
        """Test growth beyond blowup_factor"""
        self.assertEqual(trend_verdict(self._trend([1.0, 10.0, 100.0, 1e4]), FAST), Verdict.FAIL)

    def test_power_law_growth_fails(self):
        """Test steady growth with a negative log-log slope"""
        self.assertEqual(trend_verdict(self._trend([1.0, 1.5, 2.25, 3.4]), FAST), Verdict.FAIL)

    def test_erratic_or_short_is_inconclusive(self):
        """Test non-monotone, non-finite and short trends"""
        self.assertEqual(trend_verdict(self._trend([1.0, 3.0, 1.5, 2.0]), FAST), Verdict.INCONCLUSIVE)
        self.assertEqual(trend_verdict(self._trend([1.0, 1.0, math.inf, 1.0]), FAST), Verdict.INCONCLUSIVE)
        self.assertEqual(trend_verdict(self._trend([1.0, 1.0])[:2], FAST), Verdict.INCONCLUSIVE)


class TestProbeConfig(unittest.TestCase):
    """Test probe settings"""

    def test_validation(self):
        """Test rejected settings"""
        with self.assertRaises(ConfigError):
            ProbeConfig(blowup_factor=1.0)
        with self.assertRaises(ConfigError):
            ProbeConfig(probe_nodes=4)
        with self.assertRaises(ConfigError):
            ProbeConfig(ladder_ratio=1.5)
        with self.assertRaises(ConfigError):
            ProbeConfig(xi_tol=2.0, xi_max=1.0)

    def test_from_config(self):
        """Test unknown keys are ignored and taus are sorted"""
        cfg = ProbeConfig.from_config({'taus': [1e-7, 1e-5], 'unknown': 1}, {'pd_tol': 1e-6})
        self.assertEqual(cfg.taus, (1e-5, 1e-7))
        self.assertEqual(cfg.pd_tol, 1e-6)


class TestLipschitz(unittest.TestCase):
    """Test Lipschitz moduli of the localized argmin"""

    def test_quadratic_joint_modulus(self):
        """Test the joint modulus 1/s for M = (u + v)/s"""
        problem, loc, cfg = _setup('quadratic(2)')
        grid = [[-0.01], [0.0], [0.01]]
        surface = value_surface(problem, loc, grid, grid, cfg)
        est = estimate_lipschitz(surface, 'joint', [math.inf], FAST)
        self.assertAlmostEqual(est.value, 0.5, places=6)
        self.assertIsNotNone(est.witness_pair)
        est_v = estimate_lipschitz(surface, 'v_only', [math.inf, 0.01], FAST)
        self.assertAlmostEqual(est_v.value, 0.5, places=6)
        self.assertEqual(len(est_v.trend), 2)

    def test_unknown_mode(self):
        """Test mode validation"""
        problem, loc, cfg = _setup('quadratic(1)')
        surface = value_surface(problem, loc, [[0.0], [0.01]], [[0.0]], cfg)
        with self.assertRaises(ConfigError):
            estimate_lipschitz(surface, 'diagonal', [math.inf])

    def test_multivalued_argmin_rejected(self):
        """Test that a set-valued argmin cannot give a modulus"""
        problem, loc, cfg = _setup('neg_quadratic')
        surface = value_surface(problem, loc, [[-0.01], [0.0], [0.01]], [[]], cfg)
        with self.assertRaises(ProbeError):
            estimate_lipschitz(surface, 'v_only', [math.inf])

    def test_quadratic_trend_passes(self):
        """Test a bounded trend for the calibration baseline"""
        problem, loc, cfg = _setup('quadratic(1)')
        est = lipschitz_trend(problem, loc, 'joint', cfg, FAST)
        self.assertAlmostEqual(est.value, 1.0, places=5)
        self.assertEqual(est.verdict, Verdict.PASS)
        self.assertEqual(len(est.trend), 4)

    def test_ex32_u_modulus_blows_up(self):
        """Test M(0, u) ~ |u|^(6/7) gives a growing u-modulus"""
        problem, loc, cfg = _setup('ex32')
        est = lipschitz_trend(problem, loc, 'u_only', cfg, ProbeConfig())
        values = [e for _, e in est.trend]
        self.assertTrue(all(b > a for a, b in zip(values, values[1:])))
        self.assertEqual(est.verdict, Verdict.FAIL)

    def test_ex32_tilt_modulus_bounded(self):
        """Test the v-only modulus of ex32 at u = 0"""
        problem, loc, cfg = _setup('ex32')
        est = lipschitz_trend(problem, loc, 'v_only', cfg, FAST)
        self.assertEqual(est.verdict, Verdict.PASS)
        self.assertEqual(est.boundary_hits, 0)

    def test_estimates_shrink_with_the_neighbourhood(self):
        """Test capped estimates never grow as the distance cap shrinks"""
        for problem_id, mode in (('quadratic(1)', 'joint'), ('ex32', 'u_only')):
            problem, loc, cfg = _setup(problem_id)
            grid = [[t] for t in axis_grid(0.01, 9)]
            v_grid = grid if mode == 'joint' else [[0.0]]
            surface = value_surface(problem, loc, v_grid, grid, cfg)
            est = estimate_lipschitz(surface, mode, [math.inf, 0.01, 0.005, 0.0025], FAST)
            values = [e for _, e in est.trend]
            self.assertEqual(len(values), 4, msg=problem_id)
            for a, b in zip(values, values[1:]):
                self.assertLessEqual(b, a, msg=problem_id)

    def test_continuity_of_quadratic(self):
        """Test (M, m) has no jump in u"""
        problem, loc, cfg = _setup('quadratic(1)')
        surfaces = trend_surfaces(problem, loc, 'u_only', cfg, FAST)
        self.assertEqual(continuity_trend(surfaces, FAST).verdict, Verdict.PASS)

    def test_u_modes_need_a_parameter(self):
        """Test u-perturbations of problems without u"""
        problem, loc, cfg = _setup('abs1d')
        with self.assertRaises(ProbeError):
            trend_surfaces(problem, loc, 'u_only', cfg, FAST)


class TestEnvelopes(unittest.TestCase):
    """Test envelope identities"""

    def test_v_envelope_is_anchored(self):
        """Test grad_v m = -(M - xbar) and not -M or M"""
        problem, loc, cfg = _setup('shifted_quadratic(1)')
        check = envelope_check_v(problem, loc, [[0.0], [0.005]], [0.002], 1e-4, cfg)
        self.assertLess(check.residual, 1e-6)
        self.assertGreater(check.candidates['minus'], 0.9)
        self.assertGreater(check.candidates['plus'], 0.9)
        self.assertEqual(check.nodes, 2)

    def test_u_envelope_singleton(self):
        """Test grad_u m = y for a closed form"""
        problem, loc, cfg = _setup('quadratic(1)')
        check = envelope_check_u(problem, loc, [0.001], [[0.0], [0.004]], 1e-4, cfg)
        self.assertLess(check.residual, 1e-6)

    def test_ex32_v_envelope(self):
        """Test grad_v m = -(M - xbar) on ex32 at u = 0 and u = 1e-3"""
        problem, loc, cfg = _setup('ex32')
        v_grid = [[t] for t in axis_grid(0.01, 5)]
        check = envelope_check_v(problem, loc, v_grid, [0.0], 1e-4, cfg)
        self.assertLessEqual(check.residual, 1e-5)
        self.assertEqual(check.nodes, 5)
        shifted = envelope_check_v(problem, loc, v_grid, [1e-3], 1e-4, cfg)
        self.assertLessEqual(shifted.residual, 1e-4)

    def test_ex32_v_envelope_second_order_in_step(self):
        """Test the central-difference residual drops by about 4 when the step halves"""
        problem, loc, cfg = _setup('ex32')
        # m(v, 0) = -v^4/4 for v > 0, so the residual is v h^2
        coarse = envelope_check_v(problem, loc, [[0.01]], [0.0], 4e-3, cfg).residual
        fine = envelope_check_v(problem, loc, [[0.01]], [0.0], 2e-3, cfg).residual
        self.assertAlmostEqual(coarse, 0.01 * 4e-3 ** 2, delta=1e-8)
        self.assertGreater(coarse / fine, 3.0)
        self.assertLess(coarse / fine, 5.0)

    def test_step_below_tolerance(self):
        """Test finite-difference steps under the solver tolerance"""
        problem, loc, cfg = _setup('quadratic(1)')
        with self.assertRaises(ConfigError):
            envelope_check_v(problem, loc, [[0.0]], [0.0], 1e-10, cfg)

    def test_value_function_concave_in_v(self):
        """Test concavity of m(., u) and its v-Lipschitz bound"""
        problem, loc, cfg = _setup('quadratic(1)')
        surface = value_surface(problem, loc, [[-0.01], [0.0], [0.01]], [[0.0], [0.01]], cfg)
        check = value_function_checks(surface, loc.delta)
        self.assertTrue(check.passed)
        self.assertLessEqual(check.concavity_violation, 1e-10)


class TestTruncationIdentity(unittest.TestCase):
    """Test truncated stationary points against localized minimizers"""

    def _nodes(self, problem, radius=0.01):
        nodes = [([t], [0.0] * problem.m) for t in axis_grid(radius, 5)]
        if problem.m:
            nodes += [([0.0], [t]) for t in axis_grid(radius, 5)]
        return nodes

    def test_quadratic_sweep(self):
        """Test the identity node-wise on the calibration baseline"""
        problem, loc, cfg = _setup('quadratic(1)')
        check = truncation_identity_check(problem, loc, self._nodes(problem), cfg)
        self.assertTrue(check.holds)
        self.assertLessEqual(check.gap, cfg.cluster_tol)
        self.assertEqual(check.nodes, 10)
        self.assertEqual(check.skipped, 0)

    def test_ex32_sweep(self):
        """Test the identity on ex32, including v = 0, u = 1e-3"""
        problem, loc, cfg = _setup('ex32')
        nodes = self._nodes(problem) + [([0.0], [1e-3])]
        check = truncation_identity_check(problem, loc, nodes, cfg)
        self.assertTrue(check.holds)
        self.assertEqual(check.to_dict()['nodes'], 11)

    def test_local_maximum_has_no_interior_node(self):
        """Test -x^2/2 leaves nothing to compare"""
        problem, loc, cfg = _setup('neg_quadratic')
        with self.assertRaises(ProbeError):
            truncation_identity_check(problem, loc, [([0.0], [])], cfg)


class TestHypoconvexity(unittest.TestCase):
    """Test the hypo-convexity modulus of m(v, .)"""

    def _modulus(self, problem_id, elicit=0.0):
        problem, loc, cfg = _setup(problem_id)
        if elicit:
            problem = problem.elicited(elicit)
        u_grid = hypo_u_grid(problem.m, 0.01, 5)
        v_grid = [[0.0], [0.005]]
        surface = value_surface(problem, loc, v_grid, u_grid, cfg)
        return hypoconvexity_modulus(surface, v_grid, u_grid, ProbeConfig())

    def test_grid_shapes(self):
        """Test axes plus diagonal in two dimensions"""
        self.assertEqual(len(hypo_u_grid(1, 0.01, 5)), 5)
        self.assertEqual(len(hypo_u_grid(2, 0.01, 5)), 13)

    def test_quadratic_modulus(self):
        """Test m = -(u + v)^2/2 needs e = 1"""
        est = self._modulus('quadratic(1)')
        self.assertGreaterEqual(est.value, 0.999)
        self.assertLessEqual(est.value, 1.001)
        self.assertEqual(est.verdict, Verdict.PASS)

    def test_elicitation_lowers_modulus(self):
        """Test elicitation by c lowers the modulus to 1 - c"""
        est = self._modulus('quadratic(1)', elicit=0.5)
        self.assertAlmostEqual(est.value, 0.5, delta=2e-3)

    def test_ex32_modulus_is_zero(self):
        """Test ex32 needs no quadratic correction: m(v, .) is convex"""
        est = self._modulus('ex32')
        self.assertLessEqual(est.value, 1e-3)
        self.assertEqual(est.verdict, Verdict.PASS)

    def test_elicitation_sweep(self):
        """Test the modulus max(1 - c, 0) for elicitation c in {0, 1, 2}"""
        for c, expected in ((0.0, 1.0), (1.0, 0.0), (2.0, 0.0)):
            est = self._modulus('quadratic(1)', elicit=c)
            self.assertAlmostEqual(est.value, expected, delta=2e-3, msg=c)

    def test_no_triples(self):
        """Test grids without midpoints"""
        problem, loc, cfg = _setup('quadratic(1)')
        surface = value_surface(problem, loc, [[0.0]], [[0.0], [0.01]], cfg)
        with self.assertRaises(ProbeError):
            hypoconvexity_modulus(surface, [[0.0]], [[0.0], [0.01]])


class TestProxRegularity(unittest.TestCase):
    """Test prox-regularity levels of graph samples"""

    def test_quadratic_levels(self):
        """Test r = -s and s = s for f = (s/2)x^2"""
        problem = registry_build('quadratic(2)')
        sample = ClosedFormGraphSampler(problem).sample(0.1)
        prox = prox_regularity_level(sample, ladder=[0.1, 0.05])
        self.assertAlmostEqual(prox.r.value, -2.0, places=8)
        self.assertAlmostEqual(prox.s.value, 2.0, places=8)
        self.assertEqual(prox.s.verdict, Verdict.PASS)
        self.assertEqual(len(prox.gap_trend), 2)
        self.assertAlmostEqual(prox.gap_trend[-1][1], 0.0, places=8)

    def test_calibration_on_quadratics(self):
        """Test r = -s and s = s within 1e-3 for s in {0.5, 1, 2}"""
        for s in (0.5, 1.0, 2.0):
            sample = ClosedFormGraphSampler(registry_build(f'quadratic({s})')).sample(0.1)
            prox = prox_regularity_level(sample)
            self.assertAlmostEqual(prox.s.value, s, delta=1e-3, msg=s)
            self.assertAlmostEqual(prox.r.value, -s, delta=1e-3, msg=s)

    def test_local_maximum_is_not_monotone(self):
        """Test s < 0 for -x^2/2"""
        sample = ClosedFormGraphSampler(registry_build('neg_quadratic')).sample(0.1)
        prox = prox_regularity_level(sample)
        self.assertAlmostEqual(prox.s.value, -1.0, places=8)
        self.assertEqual(prox.s.verdict, Verdict.FAIL)

    def test_too_few_points(self):
        """Test empty samples"""
        with self.assertRaises(ProbeError):
            prox_regularity_level(GraphSample([]))


class TestInnerNorm(unittest.TestCase):
    """Test the graphical derivative inner norm"""

    def test_sphere_directions(self):
        """Test direction sets per dimension"""
        self.assertEqual(len(sphere_directions(1, 8)), 2)
        dirs = sphere_directions(3, 8, seed=1)
        self.assertEqual(len(dirs), 8)
        for d in dirs:
            self.assertAlmostEqual(float(np.linalg.norm(d)), 1.0)
        self.assertEqual(len(sphere_directions(2, 2)), 4)

    def test_quadratic_inner_norm(self):
        """Test |DM| = 1/s"""
        problem, loc, cfg = _setup('quadratic(2)')
        est = graphical_derivative_inner_norm(problem, loc, [0.0], [0.0], 8, (1e-3, 1e-4), cfg)
        self.assertAlmostEqual(est.value, 0.5, places=5)
        self.assertTrue(est.ladder_monotone)
        self.assertEqual(est.skipped, 0)


class TestClassify(unittest.TestCase):
    """Test the stability classification"""

    def test_quadratic_fully_stable(self):
        """Test the calibration baseline passes everything"""
        problem, loc, cfg = _setup('quadratic(1)')
        verdict = classify(problem, loc, cfg, FAST)
        for name, value in verdict.verdicts().items():
            self.assertEqual(value, 'pass', msg=name)

    def test_local_maximum_not_tilt_stable(self):
        """Test -x^2/2 fails tilt stability"""
        problem, loc, cfg = _setup('neg_quadratic')
        verdict = classify(problem, loc, cfg, FAST)
        self.assertEqual(verdict.tilt_stable, Verdict.FAIL)
        self.assertEqual(verdict.fully_stable, Verdict.FAIL)
        self.assertIsNone(verdict.lipschitz_u)

    def test_kink_tilt_stable(self):
        """Test |x| is tilt stable with a zero modulus"""
        problem, loc, cfg = _setup('abs1d')
        verdict = classify(problem, loc, cfg, FAST)
        self.assertEqual(verdict.tilt_stable, Verdict.PASS)
        self.assertEqual(verdict.stable, Verdict.PASS)
        self.assertLess(verdict.lipschitz_v.value, 1e-6)


if __name__ == '__main__':
    unittest.main()
