"""
Subgradients of convex pieces, KKT multiplier sets and constraint qualification.

Multiplier sets are small polytopes {y : A_eq y = b_eq, A_in y <= b_in}; their
vertices are enumerated by active-set basis search when the ambient dimension
is at most MAX_VERTEX_DIM.
"""

import itertools
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import null_space
from scipy.optimize import linprog, nnls

from ..utils.errors import (
    EmptySubdifferentialError,
    NumericalFailureError,
    ProblemInputError,
    UnsupportedOperationError,
)
from ..utils.logger import get_logger
from .problem_model import (
    Box,
    ClosedFormModel,
    ConvexPiece,
    EuclideanNorm,
    OrthantNonpos,
    ParametricProblem,
    SquaredNorm,
    ZeroIndicator,
    grad_f0_and_jac_F,
    partial_u_gradient,
)


logger = get_logger('subdifferential')

MAX_VERTEX_DIM = 6
CONSTRAINT_TOL = 1e-9
DEDUP_TOL = 1e-8


@dataclass
class PolyhedralSet:
    """{y in R^dim : A_eq y = b_eq, A_in y <= b_in}."""
    dim: int
    A_eq: np.ndarray
    b_eq: np.ndarray
    A_in: np.ndarray
    b_in: np.ndarray
    infeasible: bool = False
    _vertices: Optional[List[np.ndarray]] = field(default=None, repr=False, compare=False)

    @classmethod
    def from_rows(cls, dim: int, eq_rows=(), in_rows=()) -> 'PolyhedralSet':
        """Build from lists of (row, rhs) pairs."""
        def stack(rows):
            if not rows:
                return np.zeros((0, dim)), np.zeros(0)
            return np.array([r for r, _ in rows], dtype=float), np.array([b for _, b in rows], dtype=float)
        A_eq, b_eq = stack(list(eq_rows))
        A_in, b_in = stack(list(in_rows))
        return cls(dim, A_eq, b_eq, A_in, b_in)

    @classmethod
    def singleton(cls, y: Sequence[float]) -> 'PolyhedralSet':
        y = np.asarray(y, dtype=float)
        dim = y.size
        pset = cls(dim, np.eye(dim), y.copy(), np.zeros((0, dim)), np.zeros(0))
        pset._vertices = [y.copy()]
        return pset

    @classmethod
    def empty(cls, dim: int) -> 'PolyhedralSet':
        pset = cls(dim, np.zeros((0, dim)), np.zeros(0), np.zeros((0, dim)), np.zeros(0), infeasible=True)
        pset._vertices = []
        return pset

    def with_equalities(self, A: np.ndarray, b: np.ndarray) -> 'PolyhedralSet':
        return PolyhedralSet(
            self.dim,
            np.vstack([self.A_eq, A]), np.concatenate([self.b_eq, b]),
            self.A_in.copy(), self.b_in.copy(),
            infeasible=self.infeasible,
        )

    def translated(self, shift: Sequence[float]) -> 'PolyhedralSet':
        """The set shifted by a vector."""
        shift = np.asarray(shift, dtype=float)
        moved = PolyhedralSet(
            self.dim,
            self.A_eq.copy(), self.b_eq + self.A_eq @ shift,
            self.A_in.copy(), self.b_in + self.A_in @ shift,
            infeasible=self.infeasible,
        )
        if self._vertices is not None:
            moved._vertices = [y + shift for y in self._vertices]
        return moved

    def violation(self, y: Sequence[float]) -> float:
        """Largest constraint violation at y (inf for the empty set)."""
        if self.infeasible:
            return float('inf')
        y = np.asarray(y, dtype=float)
        worst = 0.0
        if self.A_eq.shape[0]:
            worst = max(worst, float(np.max(np.abs(self.A_eq @ y - self.b_eq))))
        if self.A_in.shape[0]:
            worst = max(worst, float(np.max(self.A_in @ y - self.b_in)))
        return worst

    def contains(self, y: Sequence[float], tol: float = CONSTRAINT_TOL) -> bool:
        return self.violation(y) <= tol

    def _lp(self, c: np.ndarray):
        return linprog(
            c=c,
            A_ub=self.A_in if self.A_in.shape[0] else None,
            b_ub=self.b_in if self.A_in.shape[0] else None,
            A_eq=self.A_eq if self.A_eq.shape[0] else None,
            b_eq=self.b_eq if self.A_eq.shape[0] else None,
            bounds=(None, None),
            method='highs',
        )

    def is_empty(self) -> bool:
        """LP feasibility test."""
        if self.infeasible:
            return True
        if self._vertices:
            return False
        result = self._lp(np.zeros(self.dim))
        if result.status in (1, 4):
            raise NumericalFailureError('Feasibility LP failed', {'status': result.status, 'message': result.message})
        return result.status == 2

    def support(self, omega: Sequence[float]) -> Tuple[float, float]:
        """(min, max) of omega . y over the set."""
        omega = np.asarray(omega, dtype=float)
        if self.is_empty():
            raise EmptySubdifferentialError('support of an empty set')
        if self._vertices:
            values = [float(omega @ y) for y in self._vertices]
            if self.is_bounded():
                return min(values), max(values)
        bounds = []
        for sign in (1.0, -1.0):
            result = self._lp(sign * omega)
            if result.status == 3:
                bounds.append(-sign * float('inf'))
            elif result.status != 0:
                raise NumericalFailureError('Support LP failed', {'status': result.status, 'message': result.message})
            else:
                bounds.append(sign * float(result.fun))
        return bounds[0], bounds[1]

    def is_bounded(self) -> bool:
        if self.is_empty():
            return True
        for j in range(self.dim):
            for sign in (1.0, -1.0):
                c = np.zeros(self.dim)
                c[j] = sign
                if self._lp(c).status == 3:
                    return False
        return True

    def vertices(self) -> List[np.ndarray]:
        """
        Vertices sorted in descending lexicographic order.

        Raises:
            UnsupportedOperationError: ambient dimension above MAX_VERTEX_DIM
        """
        if self._vertices is None:
            if self.dim > MAX_VERTEX_DIM:
                raise UnsupportedOperationError(
                    f'Vertex enumeration is limited to dimension {MAX_VERTEX_DIM}, got {self.dim}'
                )
            self._vertices = self._enumerate_vertices()
        return [y.copy() for y in self._vertices]

    def _enumerate_vertices(self) -> List[np.ndarray]:
        # Reduce to the affine hull of the equalities: y = y0 + N t.
        if self.A_eq.shape[0]:
            y0, *_ = np.linalg.lstsq(self.A_eq, self.b_eq, rcond=None)
            if np.max(np.abs(self.A_eq @ y0 - self.b_eq), initial=0.0) > CONSTRAINT_TOL:
                return []
            N = null_space(self.A_eq)
        else:
            y0 = np.zeros(self.dim)
            N = np.eye(self.dim)
        k = N.shape[1]
        G = self.A_in @ N
        h = self.b_in - self.A_in @ y0

        if k == 0:
            return [y0] if self.contains(y0) else []

        found: List[np.ndarray] = []
        for rows in itertools.combinations(range(G.shape[0]), k):
            Gs = G[list(rows)]
            if np.linalg.matrix_rank(Gs) < k:
                continue
            t = np.linalg.solve(Gs, h[list(rows)])
            y = y0 + N @ t
            y[np.abs(y) < 1e-14] = 0.0
            if not self.contains(y):
                continue
            if any(np.max(np.abs(y - other)) <= DEDUP_TOL for other in found):
                continue
            found.append(y)
        found.sort(key=lambda y: tuple(np.round(y, 9)), reverse=True)
        return found

    def affine_dimension(self) -> int:
        """Dimension of the affine hull of the vertices (-1 when empty)."""
        verts = self.vertices()
        if not verts:
            return -1
        if len(verts) == 1:
            return 0
        diffs = np.array([y - verts[0] for y in verts[1:]])
        return int(np.linalg.matrix_rank(diffs, tol=DEDUP_TOL))

    def sample(self, rng: np.random.Generator, k: int) -> List[np.ndarray]:
        """k random convex combinations of the vertices."""
        verts = np.array(self.vertices())
        if verts.size == 0:
            return []
        weights = rng.dirichlet(np.ones(len(verts)), size=k)
        return [w @ verts for w in weights]

    def distance(self, y: Sequence[float]) -> float:
        """Euclidean distance from y to the convex hull of the vertices."""
        verts = np.array(self.vertices())
        if verts.size == 0:
            return float('inf')
        y = np.asarray(y, dtype=float)
        weight = 1e3
        A = np.vstack([verts.T, weight * np.ones((1, len(verts)))])
        b = np.concatenate([y, [weight]])
        lam, _ = nnls(A, b)
        lam = lam / lam.sum()
        return float(np.linalg.norm(verts.T @ lam - y))


@dataclass
class CQReport:
    """Basic constraint qualification verdict with its certificate."""
    holds: bool
    certificate: np.ndarray
    active: List[int] = field(default_factory=list)
    reason: str = ''

    def to_dict(self):
        return {
            'holds': self.holds,
            'certificate': [float(c) for c in self.certificate],
            'active': list(self.active),
            'reason': self.reason,
        }


# ==================== Subdifferential of g ====================

def subdiff_g(piece: ConvexPiece, z: Sequence[float], active_tol: float = CONSTRAINT_TOL) -> PolyhedralSet:
    """
    Subdifferential of the convex piece g at z.

    Raises:
        EmptySubdifferentialError: z outside dom g
        UnsupportedOperationError: Euclidean norm kink in dimension >= 2
    """
    z = np.asarray(z, dtype=float)
    m = piece.dim
    if z.size != m:
        raise ProblemInputError(f'z has dimension {z.size}, expected {m}')
    if not piece.in_domain(z, tol=active_tol):
        raise EmptySubdifferentialError(f'{piece.kind} at z={z.tolist()} is outside the domain')

    def unit(i):
        e = np.zeros(m)
        e[i] = 1.0
        return e

    if isinstance(piece, OrthantNonpos):
        eq, ineq = [], []
        for i in range(m):
            if i < piece.s and abs(z[i]) <= active_tol:
                ineq.append((-unit(i), 0.0))
            else:
                eq.append((unit(i), 0.0))
        return PolyhedralSet.from_rows(m, eq, ineq)

    if isinstance(piece, ZeroIndicator):
        return PolyhedralSet.from_rows(m)

    if isinstance(piece, Box):
        eq, ineq = [], []
        for i, (lo, hi) in enumerate(zip(piece.lo, piece.hi)):
            if lo == hi:
                continue
            at_hi = np.isfinite(hi) and abs(z[i] - hi) <= active_tol
            at_lo = np.isfinite(lo) and abs(z[i] - lo) <= active_tol
            if at_hi:
                ineq.append((-unit(i), 0.0))
            elif at_lo:
                ineq.append((unit(i), 0.0))
            else:
                eq.append((unit(i), 0.0))
        return PolyhedralSet.from_rows(m, eq, ineq)

    if isinstance(piece, SquaredNorm):
        return PolyhedralSet.singleton(piece.weight * z)

    if isinstance(piece, EuclideanNorm):
        r = float(np.linalg.norm(z))
        if r > active_tol or piece.weight == 0.0:
            return PolyhedralSet.singleton(piece.smooth_gradient(z) if r > 0 else np.zeros(m))
        if m == 1:
            return PolyhedralSet.from_rows(1, (), [(np.array([1.0]), piece.weight), (np.array([-1.0]), piece.weight)])
        raise UnsupportedOperationError('Subdifferential of the Euclidean norm at 0 is not polyhedral for m >= 2')

    raise UnsupportedOperationError(f'No subdifferential rule for {type(piece).__name__}')


# ==================== Multiplier sets ====================

def multiplier_set(
    problem: ParametricProblem,
    x: Sequence[float],
    u: Sequence[float],
    v: Sequence[float],
    active_tol: float = CONSTRAINT_TOL,
    stationarity_tol: float = 1e-7,
) -> PolyhedralSet:
    """
    Y(x, u, v) = {y : (v, y) in the subdifferential of phi at (x, u)}.

    Composite: {y in dg(F(x)+u) : grad f0(x) + J(x)^T y = v}. Closed forms: the
    singleton {d phi/du} when x is stationary for v, else the empty set.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    u = np.asarray(u, dtype=float).reshape(-1)
    v = np.asarray(v, dtype=float).reshape(-1)
    if v.size != problem.n:
        raise ProblemInputError(f'v has dimension {v.size}, expected n={problem.n}')

    if not problem.is_composite:
        if stationarity_residual(problem, x, u, v) > stationarity_tol:
            return PolyhedralSet.empty(problem.m)
        return PolyhedralSet.singleton(partial_u_gradient(problem, x, u))

    body = problem.body
    g0, J = grad_f0_and_jac_F(problem, x)
    z = body.F.evaluate(x) + u
    base = subdiff_g(body.g, z, active_tol)
    pset = base.with_equalities(J.T, v - g0)
    if problem.elicitation:
        pset = pset.translated(problem.elicitation * u)
    if pset.dim <= MAX_VERTEX_DIM:
        verts = pset.vertices()
        logger.debug('Multiplier set built', problem=problem.name, vertices=len(verts))
    return pset


def kkt_residual(problem: ParametricProblem, x, u, v, y) -> float:
    """
    Raw membership check of (v, y) in the subdifferential of phi at (x, u).

    Returns the largest of the stationarity residual and the g-subdifferential
    membership violation; inf outside the domain.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    u = np.asarray(u, dtype=float).reshape(-1)
    v = np.asarray(v, dtype=float).reshape(-1)
    y = np.asarray(y, dtype=float).reshape(-1)

    if not problem.is_composite:
        r_x = stationarity_residual(problem, x, u, v)
        r_u = float(np.max(np.abs(partial_u_gradient(problem, x, u) - y), initial=0.0))
        return max(r_x, r_u)

    body = problem.body
    y_g = y - problem.elicitation * u
    z = body.F.evaluate(x) + u
    try:
        member = subdiff_g(body.g, z).violation(y_g)
    except EmptySubdifferentialError:
        return float('inf')
    except UnsupportedOperationError:
        member = max(float(np.linalg.norm(y_g)) - body.g.weight, 0.0)
    g0, J = grad_f0_and_jac_F(problem, x)
    station = float(np.max(np.abs(g0 + J.T @ y_g - v), initial=0.0))
    return max(member, station)


def stationarity_residual(problem: ParametricProblem, x, u, v) -> float:
    """
    Distance (max-norm) from v to the x-subdifferential of phi(., u) at x.

    Composites solve a small LP over the multipliers; inf outside the domain.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    u = np.asarray(u, dtype=float).reshape(-1)
    v = np.asarray(v, dtype=float).reshape(-1)
    body = problem.body

    if isinstance(body, ClosedFormModel):
        if problem.n == 1:
            lo, hi = body.subdiff_x_interval(x, u)
            return float(max(lo - v[0], v[0] - hi, 0.0))
        return float(np.max(np.abs(body.grad_x(x, u) - v)))

    z = body.F.evaluate(x) + u
    try:
        G = subdiff_g(body.g, z)
    except EmptySubdifferentialError:
        return float('inf')
    g0, J = grad_f0_and_jac_F(problem, x)
    m, n = problem.m, problem.n
    if m == 0:
        return float(np.max(np.abs(g0 - v)))

    # min t  s.t.  -t <= g0 + J^T y - v <= t,  y in G
    c = np.zeros(m + 1)
    c[-1] = 1.0
    ones = np.ones((n, 1))
    A_ub = [np.hstack([J.T, -ones]), np.hstack([-J.T, -ones])]
    b_ub = [v - g0, g0 - v]
    if G.A_in.shape[0]:
        A_ub.append(np.hstack([G.A_in, np.zeros((G.A_in.shape[0], 1))]))
        b_ub.append(G.b_in)
    A_eq = np.hstack([G.A_eq, np.zeros((G.A_eq.shape[0], 1))]) if G.A_eq.shape[0] else None
    result = linprog(
        c=c,
        A_ub=np.vstack(A_ub), b_ub=np.concatenate(b_ub),
        A_eq=A_eq, b_eq=G.b_eq if A_eq is not None else None,
        bounds=[(None, None)] * m + [(0, None)],
        method='highs',
    )
    if result.status != 0:
        raise NumericalFailureError(
            'Stationarity LP failed',
            {'status': result.status, 'message': result.message, 'x': x.tolist()},
        )
    return float(result.fun)


# ==================== Constraint qualification ====================

def _active_rows(problem: ParametricProblem, x, u, active_tol):
    body = problem.body
    z = body.F.evaluate(x) + u
    J = body.F.jacobian(x)
    ineq, eq = body.g.linear_constraints()
    inequality = [(i, sign * J[i]) for i, sign, bound in ineq if abs(sign * z[i] - bound) <= active_tol]
    equality = [(i, J[i]) for i, _ in eq]
    return inequality, equality


def check_basic_cq(problem: ParametricProblem, x, u, active_tol: float = CONSTRAINT_TOL) -> CQReport:
    """
    Basic constraint qualification via its NLP form (MFCQ).

    Looks for w with grad f_i(x).w <= -1 on active inequalities and J_eq w = 0,
    minimizing |w|_1; equality rows must be linearly independent. On failure the
    certificate is a nonzero horizon multiplier y with J^T y = 0.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    u = np.asarray(u, dtype=float).reshape(-1)
    n = problem.n

    if not problem.is_composite:
        if problem.body.full_domain:
            return CQReport(True, np.zeros(n), reason='full-dimensional domain')
        raise UnsupportedOperationError(f'No constraint qualification rule for {problem.name}')

    g = problem.body.g
    if not g.in_domain(problem.body.F.evaluate(x) + u, tol=active_tol):
        raise EmptySubdifferentialError('F(x) + u is outside dom g')
    if g.full_domain:
        return CQReport(True, np.zeros(n), reason='g has full domain')
    if not g.is_polyhedral:
        raise UnsupportedOperationError(f'Horizon subgradients of {g.kind} are not supported')

    inequality, equality = _active_rows(problem, x, u, active_tol)
    active = sorted(i for i, _ in inequality + equality)
    m = problem.m

    if equality:
        J_eq = np.array([row for _, row in equality])
        if np.linalg.matrix_rank(J_eq) < len(equality):
            y_eq = null_space(J_eq.T)[:, 0]
            certificate = np.zeros(m)
            for (i, _), c in zip(equality, y_eq):
                certificate[i] = c
            return CQReport(False, certificate, active, 'equality gradients are linearly dependent')
    if not inequality:
        return CQReport(True, np.zeros(n), active, 'no active inequalities')

    A_act = np.array([row for _, row in inequality])
    k = A_act.shape[0]
    # w = p - q with p, q >= 0
    A_ub = np.hstack([A_act, -A_act])
    A_eq = None
    if equality:
        J_eq = np.array([row for _, row in equality])
        A_eq = np.hstack([J_eq, -J_eq])
    result = linprog(
        c=np.ones(2 * n),
        A_ub=A_ub, b_ub=-np.ones(k),
        A_eq=A_eq, b_eq=np.zeros(len(equality)) if equality else None,
        bounds=(0, None),
        method='highs',
    )
    if result.status in (1, 3, 4):
        raise NumericalFailureError('MFCQ LP failed', {'status': result.status, 'message': result.message})
    if result.status == 0:
        w = result.x[:n] - result.x[n:]
        w[np.abs(w) < 1e-14] = 0.0
        return CQReport(True, w, active, 'strictly feasible direction found')

    # Farkas: y_in >= 0, sum y_in = 1, A_act^T y_in + J_eq^T y_eq = 0
    n_eq = len(equality)
    rows = [A_act.T]
    if equality:
        rows.append(np.array([row for _, row in equality]).T)
    A = np.hstack(rows)
    A_eq = np.vstack([A, np.concatenate([np.ones(k), np.zeros(n_eq)])[None, :]])
    b_eq = np.concatenate([np.zeros(n), [1.0]])
    farkas = linprog(
        c=np.zeros(k + n_eq),
        A_eq=A_eq, b_eq=b_eq,
        bounds=[(0, None)] * k + [(None, None)] * n_eq,
        method='highs',
    )
    if farkas.status != 0:
        raise NumericalFailureError('Horizon certificate LP failed', {'status': farkas.status, 'message': farkas.message})
    certificate = np.zeros(m)
    for (i, _), c in zip(inequality + equality, farkas.x):
        certificate[i] = c
    return CQReport(False, certificate, active, 'nonzero horizon multiplier')


def multiplier_set_convexity_test(
    pset: PolyhedralSet,
    samples: int,
    membership: Optional[Callable[[np.ndarray], float]] = None,
    seed: int = 0,
    tol: float = CONSTRAINT_TOL,
) -> bool:
    """
    Random convex combinations of the vertices stay in the set.

    Args:
        pset: multiplier polytope with enumerable vertices
        samples: number of random combinations (pairwise midpoints are added)
        membership: raw residual check y -> residual, e.g. a bound kkt_residual
        seed: RNG seed
        tol: membership tolerance
    """
    verts = pset.vertices()
    if len(verts) <= 1:
        return True
    rng = np.random.default_rng(seed)
    points = pset.sample(rng, samples)
    points += [0.5 * (a + b) for a, b in itertools.combinations(verts, 2)]
    for y in points:
        if not pset.contains(y, tol):
            return False
        if membership is not None and membership(y) > tol:
            logger.warning('Convex combination failed the raw membership check', y=np.round(y, 6).tolist())
            return False
    return True


def multiplier_drift(
    problem: ParametricProblem,
    x, u, v,
    perturbed: Sequence[Tuple[Sequence[float], Sequence[float], Sequence[float]]],
) -> float:
    """
    Outer-semicontinuity probe: largest distance from the vertices of
    Y(x', u', v') to Y(x, u, v) over the perturbed triples (x', u', v').
    """
    base = multiplier_set(problem, x, u, v)
    if base.is_empty():
        raise EmptySubdifferentialError('Base multiplier set is empty')
    drift = 0.0
    for xp, up, vp in perturbed:
        for y in multiplier_set(problem, xp, up, vp).vertices():
            drift = max(drift, base.distance(y))
    return drift
