"""
Unit tests for the problem model and the built-in registry.
Tests polynomial calculus, convex pieces, composite evaluation and problem files.
"""

import sys
from pathlib import Path
project_root = Path(__file__).parent.parent.parent
sys.path.insert(0, str(project_root))

import unittest
import tempfile
import os
import json
import math

import numpy as np

from src.services.problem_model import (
    Box,
    CompositeBody,
    EuclideanNorm,
    OrthantNonpos,
    ParametricProblem,
    Polynomial,
    SmoothMap,
    SquaredNorm,
    ZeroIndicator,
    eval_phi,
    grad_f0_and_jac_F,
    partial_u_gradient,
)
from src.services.problem_registry import (
    list_registry,
    load_problem_file,
    problem_fingerprint,
    problem_from_dict,
    problem_to_dict,
    random_points,
    registry_build,
)
from src.utils.errors import ProblemInputError, UnsupportedOperationError


class TestPolynomial(unittest.TestCase):
    """Test sparse polynomial evaluation and differentiation"""

    def setUp(self):
        # p(x, y) = 3x^2 y - y^3 + 2
        self.p = Polynomial(2, ((3.0, (2, 1)), (-1.0, (0, 3)), (2.0, (0, 0))))

    def test_evaluate(self):
        """Test value at a point"""
        self.assertAlmostEqual(self.p.evaluate([1.0, 2.0]), 3 * 2 - 8 + 2)

    def test_gradient_and_hessian(self):
        """Test exact term-wise derivatives"""
        x = np.array([1.5, -0.5])
        np.testing.assert_allclose(self.p.gradient(x), [6 * x[0] * x[1], 3 * x[0] ** 2 - 3 * x[1] ** 2])
        H = self.p.hessian(x)
        np.testing.assert_allclose(H, [[6 * x[1], 6 * x[0]], [6 * x[0], -6 * x[1]]])

    def test_canonical_merge(self):
        """Test that repeated exponent patterns merge and zeros vanish"""
        q = Polynomial(1, ((1.0, (2,)), (2.0, (2,)), (1.0, (1,)), (-1.0, (1,))))
        self.assertEqual(q.terms, ((3.0, (2,)),))
        self.assertEqual(q.degree, 2)

    def test_batch_matches_pointwise(self):
        """Test vectorised evaluation against single evaluations"""
        X = np.random.default_rng(0).normal(size=(7, 2))
        batch = self.p.evaluate_batch(X)
        for row, value in zip(X, batch):
            self.assertAlmostEqual(self.p.evaluate(row), value, places=12)

    def test_bad_exponents_rejected(self):
        """Test exponent validation"""
        with self.assertRaises(ProblemInputError):
            Polynomial(2, ((1.0, (1,)),))
        with self.assertRaises(ProblemInputError):
            Polynomial(1, ((1.0, (-1,)),))

    def test_json_terms(self):
        """Test the problem-file term format"""
        q = Polynomial.from_json([{'coeff': 2.0, 'powers': [1, 0]}], 2)
        self.assertEqual(q.to_json(), [{'coeff': 2.0, 'powers': [1, 0]}])
        with self.assertRaises(ProblemInputError):
            Polynomial.from_json([{'c': 1}], 2)


class TestConvexPieces(unittest.TestCase):
    """Test convex pieces g"""

    def test_orthant_indicator(self):
        """Test R^s_- x R^(m-s) indicator values and constraints"""
        g = OrthantNonpos(1, 2)
        self.assertEqual(g.value([-1.0, 5.0]), 0.0)
        self.assertEqual(g.value([1.0, 0.0]), math.inf)
        ineq, eq = g.linear_constraints()
        self.assertEqual(ineq, [(0, 1.0, 0.0)])
        self.assertEqual(eq, [])

    def test_zero_indicator(self):
        """Test indicator of {0}"""
        g = ZeroIndicator(1)
        self.assertEqual(g.value([0.0]), 0.0)
        self.assertEqual(g.value([1e-3]), math.inf)

    def test_box_with_infinite_bounds(self):
        """Test boxes with null bounds"""
        g = Box((None, 0.0), (1.0, 0.0))
        self.assertEqual(g.value([-100.0, 0.0]), 0.0)
        self.assertEqual(g.value([2.0, 0.0]), math.inf)
        ineq, eq = g.linear_constraints()
        self.assertEqual(eq, [(1, 0.0)])
        self.assertIn((0, 1.0, 1.0), ineq)
        self.assertFalse(g.full_domain)
        self.assertTrue(Box((None,), (None,)).full_domain)

    def test_norms(self):
        """Test Euclidean and squared norm values"""
        self.assertAlmostEqual(EuclideanNorm(2.0, 2).value([3.0, 4.0]), 10.0)
        self.assertAlmostEqual(SquaredNorm(2.0, 2).value([3.0, 4.0]), 25.0)
        self.assertTrue(EuclideanNorm(1.0, 1).is_polyhedral)
        self.assertFalse(EuclideanNorm(1.0, 2).is_polyhedral)

    def test_negative_weight_rejected(self):
        """Test weight validation"""
        with self.assertRaises(ProblemInputError):
            SquaredNorm(-1.0, 1)


class TestRegistry(unittest.TestCase):
    """Test built-in problems"""

    def test_list_registry(self):
        """Test the listing contains the documented ids"""
        signatures = [entry[0] for entry in list_registry()]
        self.assertIn('ex32', signatures)
        self.assertIn('ex33', signatures)
        self.assertIn('quadratic(s[,n])', signatures)
        self.assertEqual(list_registry(), list_registry())

    def test_ex33_values(self):
        """Test ex33 objective and feasibility"""
        p = registry_build('ex33')
        self.assertEqual((p.n, p.m), (4, 4))
        self.assertTrue(p.is_nlp)
        self.assertEqual(eval_phi(p, [0, 0, 0, 0], np.zeros(4)), 0.0)
        # x3 + x4^2/2 on the feasible set
        self.assertAlmostEqual(eval_phi(p, [0.0, 0.0, 1.0, 1.0], np.zeros(4)), 1.5)
        # x1 - x3 <= 0 violated
        self.assertEqual(eval_phi(p, [1.0, 0.0, 0.0, 0.0], np.zeros(4)), math.inf)

    def test_ex33_gradients(self):
        """Test exact gradient of f0 and Jacobian of F at the anchor"""
        g0, J = grad_f0_and_jac_F(registry_build('ex33'), np.zeros(4))
        np.testing.assert_allclose(g0, [0, 0, 1, 0])
        np.testing.assert_allclose(J, [[1, 0, -1, 0], [-1, 0, -1, 0], [0, 1, -1, 0], [0, -1, -1, 0]])

    def test_ex32_values(self):
        """Test the radial power closed form"""
        p = registry_build('ex32')
        self.assertEqual(eval_phi(p, [0.0], [0.0]), 0.0)
        self.assertAlmostEqual(eval_phi(p, [1.0], [0.0]), 0.75)
        self.assertAlmostEqual(eval_phi(p, [-1.0], [0.0]), 2.75)
        self.assertEqual(p.body.subdiff_x_interval(np.zeros(1), np.zeros(1)), (-2.0, 0.0))

    def test_quadratic_variants(self):
        """Test quadratic(s), quadratic(s, n) and shifted_quadratic(c)"""
        p = registry_build('quadratic(2, 3)')
        self.assertEqual((p.n, p.m), (3, 3))
        self.assertAlmostEqual(eval_phi(p, [1.0, 0.0, 0.0], [1.0, 0.0, 0.0]), 1.0 - 1.0)
        q = registry_build('shifted_quadratic(1)')
        self.assertEqual(q.xbar, (1.0,))
        self.assertAlmostEqual(eval_phi(q, [2.0], [0.5]), 0.5 - 0.5)
        np.testing.assert_allclose(partial_u_gradient(q, [2.0], [0.0]), [-1.0])

    def test_unknown_or_malformed_ids(self):
        """Test registry errors"""
        for bad in ('nosuch', 'quadratic(a)', 'ex32(1)', 'quadratic(1, 7)', 'quadratic(-1)', '1abc'):
            with self.assertRaises(ProblemInputError, msg=bad):
                registry_build(bad)

    def test_grad_f0_needs_composite(self):
        """Test unsupported derivative access on closed forms"""
        with self.assertRaises(UnsupportedOperationError):
            grad_f0_and_jac_F(registry_build('ex32'), [0.0])

    def test_elicitation_shifts_u_gradient(self):
        """Test phi + (e/2)|u|^2"""
        p = registry_build('quadratic(1)').elicited(0.5)
        self.assertAlmostEqual(eval_phi(p, [0.0], [2.0]), 1.0)
        np.testing.assert_allclose(partial_u_gradient(p, [0.0], [2.0]), [1.0])

    def test_random_points_seeded(self):
        """Test the seeded point sampler"""
        p = registry_build('ex33')
        X1, U1 = random_points(p, 5, 0.1, seed=3)
        X2, U2 = random_points(p, 5, 0.1, seed=3)
        np.testing.assert_array_equal(X1, X2)
        np.testing.assert_array_equal(U1, U2)
        self.assertEqual(U1.shape, (5, 4))


class TestProblemFiles(unittest.TestCase):
    """Test the JSON problem-file interface"""

    def setUp(self):
        self.tmp_dir = tempfile.mkdtemp()

    def tearDown(self):
        import shutil
        if os.path.exists(self.tmp_dir):
            shutil.rmtree(self.tmp_dir)

    def _write(self, name, content):
        path = os.path.join(self.tmp_dir, name)
        with open(path, 'w') as f:
            f.write(content)
        return path

    def test_composite_file(self):
        """Test loading a composite NLP"""
        data = {
            'name': 'half_line',
            'n': 1, 'm': 1,
            'f0': [{'coeff': 0.5, 'powers': [2]}],
            'F': [[{'coeff': -1.0, 'powers': [1]}]],
            'g': {'type': 'orthant_nonpos', 's': 1},
            'xbar': [0.0],
        }
        path = self._write('p.json', json.dumps(data))
        p = load_problem_file(path)
        self.assertEqual(p.name, 'half_line')
        self.assertTrue(p.is_nlp)
        self.assertEqual(eval_phi(p, [1.0], [0.0]), 0.5)
        self.assertEqual(eval_phi(p, [-1.0], [0.0]), math.inf)

    def test_builtin_file(self):
        """Test builtin kind with a rename"""
        path = self._write('b.json', json.dumps({'kind': 'builtin', 'builtin': 'quadratic(2)', 'name': 'q2'}))
        p = load_problem_file(path)
        self.assertEqual(p.name, 'q2')
        self.assertEqual(p.body.s, 2.0)

    def test_round_trip_fingerprint(self):
        """Test canonical form and fingerprint stability"""
        p = registry_build('ex33')
        q = problem_from_dict(problem_to_dict(p))
        self.assertEqual(problem_fingerprint(p), problem_fingerprint(q))
        self.assertNotEqual(problem_fingerprint(p), problem_fingerprint(registry_build('quadratic(1)')))
        self.assertEqual(len(problem_fingerprint(p)), 64)

    def test_bad_files(self):
        """Test unreadable and malformed problem files"""
        with self.assertRaises(ProblemInputError):
            load_problem_file(os.path.join(self.tmp_dir, 'missing.json'))
        with self.assertRaises(ProblemInputError):
            load_problem_file(self._write('t.json', '{"n": 1, '))
        with self.assertRaises(ProblemInputError):
            problem_from_dict({'n': 1, 'm': 1, 'F': [[]]})
        with self.assertRaises(ProblemInputError):
            problem_from_dict({'n': 9, 'm': 0})
        with self.assertRaises(ProblemInputError):
            problem_from_dict({'n': 1, 'm': 1, 'F': [[]], 'g': {'type': 'simplex'}})

    def test_infeasible_anchor_rejected(self):
        """Test that phi(xbar, 0) must be finite"""
        f0 = Polynomial.zero(1)
        F = SmoothMap(1, (Polynomial(1, ((1.0, (0,)),)),))
        with self.assertRaises(ProblemInputError):
            ParametricProblem('bad', 1, 1, CompositeBody(f0, F, ZeroIndicator(1)), (0.0,))


if __name__ == '__main__':
    unittest.main()
