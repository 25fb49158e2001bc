"""
Unit tests for the localized tilted solver
Tests grids, argmin/value accuracy on closed forms, boundary detection and value surfaces.
"""

import sys
from pathlib import Path
project_root = Path(__file__).parent.parent.parent
sys.path.insert(0, str(project_root))

import unittest
import tempfile
import os
import csv
import math

import numpy as np
from scipy.optimize import brentq

from src.services.localized_solver import (
    Localization,
    SolveConfig,
    axis_grid,
    box_grid,
    line_grid,
    perturbation_nodes,
    solve_nodes,
    solve_tilted,
    truncated_stationary_map,
    value_surface,
)
from src.services.problem_registry import registry_build
from src.utils.errors import ConfigError, EmptyLocalProblemError, ProblemInputError


def ex32_minimizer(u):
    """Root of the x-gradient of ex32 at v = 0."""
    def slope(x):
        z = math.hypot(x, u)
        return (z ** (1.0 / 3.0) + 1.0) * x / z - 1.0
    return brentq(slope, 1e-300, 1.0, xtol=1e-15)


class TestLocalizationAndConfig(unittest.TestCase):
    """Test localization and solver settings"""

    def test_localization_validation(self):
        """Test positive radii"""
        with self.assertRaises(ConfigError):
            Localization((0.0,), delta=0.0)
        with self.assertRaises(ConfigError):
            Localization((0.0,), delta=0.5, v_radius=-1.0)
        self.assertEqual(Localization((0.0,), 0.5, alpha=None).alpha, math.inf)

    def test_alpha_must_exceed_base_value(self):
        """Test the attentive level check"""
        problem = registry_build('quadratic(1)')
        with self.assertRaises(ConfigError):
            Localization.for_problem(problem, {'delta': 0.5, 'alpha': 0.0})
        loc = Localization.for_problem(problem, {'delta': 0.5, 'alpha': 1.0})
        self.assertEqual(loc.alpha, 1.0)

    def test_shrunk(self):
        """Test scaled perturbation radii"""
        loc = Localization((0.0,), 0.5, v_radius=0.01, u_radius=0.02).shrunk(0.1)
        self.assertAlmostEqual(loc.v_radius, 0.001)
        self.assertAlmostEqual(loc.u_radius, 0.002)
        self.assertEqual(loc.delta, 0.5)

    def test_solve_config(self):
        """Test grid validation and the per-axis budget"""
        with self.assertRaises(ConfigError):
            SolveConfig(grid_points_per_axis=10)
        with self.assertRaises(ConfigError):
            SolveConfig(grid_points_per_axis=9)
        cfg = SolveConfig.from_config({'grid': 41}, {'active_tol': 1e-8})
        self.assertEqual(cfg.active_tol, 1e-8)
        self.assertEqual(cfg.axis_count(1), 41)
        self.assertEqual(cfg.axis_count(4), 13)
        self.assertLessEqual(cfg.axis_count(4) ** 4, cfg.max_grid_points)


class TestGrids(unittest.TestCase):
    """Test node generation"""

    def test_axis_grid_contains_zero(self):
        """Test symmetric odd grids"""
        axis = axis_grid(1.0, 5)
        np.testing.assert_allclose(axis, [-1.0, -0.5, 0.0, 0.5, 1.0])
        np.testing.assert_allclose(axis_grid(1.0, 1), [0.0])

    def test_box_grid_order(self):
        """Test lexicographic tensor order"""
        nodes = box_grid([0.0, 0.0], 1.0, 3)
        self.assertEqual(len(nodes), 9)
        np.testing.assert_allclose(nodes[0], [-1.0, -1.0])
        np.testing.assert_allclose(nodes[1], [-1.0, 0.0])
        self.assertEqual(len(box_grid([], 1.0, 3)), 1)

    def test_perturbation_nodes(self):
        """Test full grids in low dimension and sparse designs above"""
        self.assertEqual(len(perturbation_nodes([0.0], 0.01, 5)), 5)
        nodes = perturbation_nodes(np.zeros(4), 0.01, 5, random_nodes=8, seed=0)
        self.assertEqual(len(nodes), 1 + 4 * 4 + 8)
        self.assertTrue(all(np.max(np.abs(p)) <= 0.01 for p in nodes))
        again = perturbation_nodes(np.zeros(4), 0.01, 5, random_nodes=8, seed=0)
        for a, b in zip(nodes, again):
            np.testing.assert_array_equal(a, b)

    def test_line_grid(self):
        """Test points along a direction"""
        pts = line_grid([1.0, 0.0], [0.0, 1.0], 0.5, 3)
        np.testing.assert_allclose(pts[0], [1.0, -0.5])
        np.testing.assert_allclose(pts[2], [1.0, 0.5])


class TestSolveTilted(unittest.TestCase):
    """Test localized minimization"""

    def setUp(self):
        self.cfg = SolveConfig()

    def test_quadratic_closed_form(self):
        """Test M = (u + v)/s and m = -(u + v)^2/(2s)"""
        problem = registry_build('quadratic(2)')
        loc = Localization(problem.xbar, 0.5)
        result = solve_tilted(problem, loc, [0.01], [0.02], self.cfg)
        self.assertTrue(result.single_valued)
        self.assertFalse(result.boundary_hit)
        self.assertAlmostEqual(float(result.minimizer[0]), 0.015, places=8)
        self.assertAlmostEqual(result.value, -(0.03 ** 2) / 4.0, places=10)
        self.assertGreater(result.evaluations, 0)

    def test_quadratic_in_two_dimensions(self):
        """Test the grid search in R^2"""
        problem = registry_build('quadratic(2, 2)')
        loc = Localization(problem.xbar, 0.5)
        result = solve_tilted(problem, loc, [0.01, 0.0], [0.0, 0.02], self.cfg)
        np.testing.assert_allclose(result.minimizer, [0.005, 0.01], atol=1e-7)

    def test_shifted_anchor(self):
        """Test tilt measured from xbar"""
        problem = registry_build('shifted_quadratic(1)')
        loc = Localization(problem.xbar, 0.5)
        result = solve_tilted(problem, loc, [0.0], [0.1], self.cfg)
        self.assertAlmostEqual(float(result.minimizer[0]), 1.1, places=8)

    def test_ex32_against_root(self):
        """Test the ex32 minimizer against a scalar root solve"""
        problem = registry_build('ex32')
        loc = Localization(problem.xbar, 0.5)
        for u in (1e-2, 1e-4):
            result = solve_tilted(problem, loc, [0.0], [u], self.cfg)
            self.assertAlmostEqual(float(result.minimizer[0]), ex32_minimizer(u), delta=1e-7)

    def test_abs_kink(self):
        """Test the nonsmooth minimum of |x|"""
        problem = registry_build('abs1d')
        loc = Localization(problem.xbar, 0.5)
        for v in (0.0, 0.5, -0.5):
            result = solve_tilted(problem, loc, [v], [], self.cfg)
            self.assertAlmostEqual(float(result.minimizer[0]), 0.0, places=8)
            self.assertAlmostEqual(result.value, 0.0, places=9)

    def test_local_maximum_hits_boundary(self):
        """Test -x^2/2 has two boundary minimizers"""
        problem = registry_build('neg_quadratic')
        loc = Localization(problem.xbar, 0.5)
        result = solve_tilted(problem, loc, [0.0], [], self.cfg)
        self.assertTrue(result.boundary_hit)
        self.assertFalse(result.single_valued)
        self.assertAlmostEqual(result.value, -0.125, places=6)

    def test_pinned_feasibility_restoration(self):
        """Test equality-constrained problems whose feasible point is off-grid"""
        problem = registry_build('neg_quadratic_pinned')
        loc = Localization(problem.xbar, 0.5)
        result = solve_tilted(problem, loc, [0.0], [0.0123], self.cfg)
        self.assertAlmostEqual(float(result.minimizer[0]), -0.0123, places=7)
        self.assertAlmostEqual(result.value, -0.5 * 0.0123 ** 2, places=8)

    def test_empty_local_problem(self):
        """Test that a ball missing the domain raises"""
        problem = registry_build('neg_quadratic_pinned')
        loc = Localization(problem.xbar, 0.5)
        with self.assertRaises(EmptyLocalProblemError):
            solve_tilted(problem, loc, [0.0], [2.0], self.cfg)

    def test_dimension_mismatch(self):
        """Test argument validation"""
        problem = registry_build('quadratic(1)')
        loc = Localization(problem.xbar, 0.5)
        with self.assertRaises(ProblemInputError):
            solve_tilted(problem, loc, [0.0, 0.0], [0.0], self.cfg)


class TestStationaryMap(unittest.TestCase):
    """Test the truncated stationary point map"""

    def setUp(self):
        self.cfg = SolveConfig()

    def test_local_maximum_is_stationary(self):
        """Test stationary points include maximizers"""
        problem = registry_build('neg_quadratic')
        loc = Localization(problem.xbar, 0.5)
        points = truncated_stationary_map(problem, loc, [0.0], [], self.cfg)
        self.assertEqual(len(points), 1)
        self.assertAlmostEqual(float(points[0][0]), 0.0, places=9)
        shifted = truncated_stationary_map(problem, loc, [0.1], [], self.cfg)
        self.assertAlmostEqual(float(shifted[0][0]), -0.1, places=9)

    def test_kink_is_stationary(self):
        """Test subdifferential intervals at kinks"""
        problem = registry_build('abs1d')
        loc = Localization(problem.xbar, 0.5)
        points = truncated_stationary_map(problem, loc, [0.3], [], self.cfg)
        self.assertEqual(len(points), 1)
        self.assertEqual(float(points[0][0]), 0.0)

    def test_alpha_truncation(self):
        """Test the attentive level removes high-value stationary points"""
        problem = registry_build('quadratic(1)')
        loc = Localization(problem.xbar, 0.5, alpha=1e-6)
        self.assertEqual(truncated_stationary_map(problem, loc, [0.3], [0.0], self.cfg), [])


class TestValueSurface(unittest.TestCase):
    """Test value surfaces"""

    def setUp(self):
        self.tmp_dir = tempfile.mkdtemp()
        self.problem = registry_build('quadratic(1)')
        self.loc = Localization(self.problem.xbar, 0.5)

    def tearDown(self):
        import shutil
        if os.path.exists(self.tmp_dir):
            shutil.rmtree(self.tmp_dir)

    def test_worker_count_does_not_change_rows(self):
        """Test ordered results across thread pools"""
        v_grid = [[-0.01], [0.0], [0.01]]
        u_grid = [[-0.01], [0.01]]
        serial = value_surface(self.problem, self.loc, v_grid, u_grid, SolveConfig(workers=1))
        pooled = value_surface(self.problem, self.loc, v_grid, u_grid, SolveConfig(workers=3))
        self.assertEqual(len(serial), 6)
        for a, b in zip(serial, pooled):
            np.testing.assert_array_equal(a.v, b.v)
            np.testing.assert_array_equal(a.u, b.u)
            self.assertEqual(a.result.value, b.result.value)

    def test_lookup_and_errors(self):
        """Test lookup and failed nodes"""
        pinned = registry_build('neg_quadratic_pinned')
        surface = solve_nodes(pinned, Localization(pinned.xbar, 0.5), [([0.0], [0.0]), ([0.0], [2.0])], SolveConfig())
        self.assertTrue(surface.lookup([0.0], [0.0]).ok)
        self.assertEqual(len(surface.errors), 1)
        self.assertIn('EmptyLocalProblemError', surface.errors[0].error)
        self.assertIsNone(surface.lookup([1.0], [0.0]))

    def test_csv_columns(self):
        """Test the CSV layout"""
        surface = value_surface(self.problem, self.loc, [[0.0]], [[0.01]], SolveConfig())
        path = os.path.join(self.tmp_dir, 'surface.csv')
        surface.to_csv(path)
        with open(path, newline='') as f:
            rows = list(csv.reader(f))
        self.assertEqual(rows[0], ['v_1', 'u_1', 'm_delta', 'x_1', 'single_valued', 'boundary_hit'])
        self.assertEqual(rows[1][-2:], ['true', 'false'])
        self.assertAlmostEqual(float(rows[1][3]), 0.01, places=8)


if __name__ == '__main__':
    unittest.main()
