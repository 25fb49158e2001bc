"""
Parametric problems phi(x, u) anchored at xbar.

A problem is either composite, phi(x, u) = f0(x) + g(F(x) + u) with polynomial
f0, F and a convex piece g, or a closed form from the registry with analytic
value and derivative rules.
"""

from abc import ABC, abstractmethod
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from ..utils.errors import ProblemInputError, UnsupportedOperationError


# Feasibility slack for indicator pieces; refined points sit on constraint
# boundaries up to solver accuracy.
INDICATOR_TOL = 1e-9

Term = Tuple[float, Tuple[int, ...]]


@dataclass(frozen=True)
class Polynomial:
    """Sparse polynomial in num_vars variables, kept in canonical form."""
    num_vars: int
    terms: Tuple[Term, ...] = ()

    def __post_init__(self):
        if int(self.num_vars) < 1:
            raise ProblemInputError(f'Polynomial needs num_vars >= 1, got {self.num_vars}')
        merged: Dict[Tuple[int, ...], float] = {}
        for coeff, powers in self.terms:
            powers = tuple(int(p) for p in powers)
            if len(powers) != self.num_vars:
                raise ProblemInputError(
                    f'Exponent pattern {powers} does not have length {self.num_vars}'
                )
            if any(p < 0 for p in powers):
                raise ProblemInputError(f'Negative exponent in {powers}')
            merged[powers] = merged.get(powers, 0.0) + float(coeff)
        canonical = tuple(
            (c, p) for p, c in sorted(merged.items(), reverse=True) if c != 0.0
        )
        object.__setattr__(self, 'num_vars', int(self.num_vars))
        object.__setattr__(self, 'terms', canonical)

    @classmethod
    def zero(cls, num_vars: int) -> 'Polynomial':
        return cls(num_vars, ())

    @classmethod
    def from_json(cls, data: Sequence[Dict[str, Any]], num_vars: int) -> 'Polynomial':
        """Build from a list of {"coeff": c, "powers": [...]} records."""
        try:
            terms = tuple((float(t['coeff']), tuple(t['powers'])) for t in data)
        except (KeyError, TypeError) as e:
            raise ProblemInputError(f'Malformed polynomial term list: {e}') from e
        return cls(num_vars, terms)

    def to_json(self) -> List[Dict[str, Any]]:
        return [{'coeff': c, 'powers': list(p)} for c, p in self.terms]

    @cached_property
    def _coeffs(self) -> np.ndarray:
        return np.array([c for c, _ in self.terms], dtype=float)

    @cached_property
    def _powers(self) -> np.ndarray:
        if not self.terms:
            return np.zeros((0, self.num_vars), dtype=int)
        return np.array([p for _, p in self.terms], dtype=int)

    @cached_property
    def _partials(self) -> Tuple['Polynomial', ...]:
        partials = []
        for j in range(self.num_vars):
            terms = []
            for c, p in self.terms:
                if p[j] > 0:
                    q = list(p)
                    q[j] -= 1
                    terms.append((c * p[j], tuple(q)))
            partials.append(Polynomial(self.num_vars, tuple(terms)))
        return tuple(partials)

    @property
    def degree(self) -> int:
        return max((sum(p) for _, p in self.terms), default=0)

    def derivative(self, j: int) -> 'Polynomial':
        """Exact partial derivative with respect to variable j."""
        return self._partials[j]

    def scaled(self, factor: float) -> 'Polynomial':
        return Polynomial(self.num_vars, tuple((factor * c, p) for c, p in self.terms))

    def evaluate_batch(self, X: np.ndarray) -> np.ndarray:
        """Evaluate at every row of X (shape k x num_vars)."""
        X = np.asarray(X, dtype=float)
        if not self.terms:
            return np.zeros(X.shape[0])
        monomials = np.prod(X[:, None, :] ** self._powers[None, :, :], axis=2)
        return monomials @ self._coeffs

    def evaluate(self, x: Sequence[float]) -> float:
        return float(self.evaluate_batch(np.asarray(x, dtype=float)[None, :])[0])

    def gradient(self, x: Sequence[float]) -> np.ndarray:
        return np.array([d.evaluate(x) for d in self._partials])

    def hessian(self, x: Sequence[float]) -> np.ndarray:
        n = self.num_vars
        H = np.zeros((n, n))
        for j in range(n):
            dj = self._partials[j]
            for k in range(j, n):
                H[j, k] = H[k, j] = dj.derivative(k).evaluate(x)
        return H


@dataclass(frozen=True)
class SmoothMap:
    """Polynomial map F: R^n -> R^m."""
    domain_dim: int
    components: Tuple[Polynomial, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, 'components', tuple(self.components))
        for i, comp in enumerate(self.components):
            if comp.num_vars != self.domain_dim:
                raise ProblemInputError(
                    f'Component {i} has {comp.num_vars} variables, expected {self.domain_dim}'
                )

    @property
    def range_dim(self) -> int:
        return len(self.components)

    def evaluate(self, x: Sequence[float]) -> np.ndarray:
        return np.array([c.evaluate(x) for c in self.components])

    def evaluate_batch(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if not self.components:
            return np.zeros((X.shape[0], 0))
        return np.column_stack([c.evaluate_batch(X) for c in self.components])

    def jacobian(self, x: Sequence[float]) -> np.ndarray:
        """m x n Jacobian."""
        if not self.components:
            return np.zeros((0, self.domain_dim))
        return np.vstack([c.gradient(x) for c in self.components])

    def component_hessians(self, x: Sequence[float]) -> np.ndarray:
        """m x n x n stack of component Hessians."""
        n = self.domain_dim
        if not self.components:
            return np.zeros((0, n, n))
        return np.stack([c.hessian(x) for c in self.components])


# ==================== Convex pieces ====================

class ConvexPiece(ABC):
    """Closed proper convex g on R^dim."""

    kind: str = ''

    @property
    @abstractmethod
    def dim(self) -> int:
        ...

    @abstractmethod
    def value_batch(self, Z: np.ndarray) -> np.ndarray:
        """Values at the rows of Z, +inf outside the effective domain."""

    def value(self, z: Sequence[float]) -> float:
        return float(self.value_batch(np.asarray(z, dtype=float)[None, :])[0])

    @property
    def is_polyhedral(self) -> bool:
        return False

    @property
    def full_domain(self) -> bool:
        """True when dom g is all of R^dim."""
        return True

    def linear_constraints(self) -> Tuple[List[Tuple[int, float, float]], List[Tuple[int, float]]]:
        """
        Domain description as coordinate constraints.

        Returns:
            (inequalities, equalities): inequality (i, sign, bound) means
            sign * z_i <= bound; equality (i, target) means z_i == target.
        """
        return [], []

    def in_domain(self, z: Sequence[float], tol: float = INDICATOR_TOL) -> bool:
        z = np.asarray(z, dtype=float)
        ineq, eq = self.linear_constraints()
        for i, sign, bound in ineq:
            if sign * z[i] > bound + tol:
                return False
        for i, target in eq:
            if abs(z[i] - target) > tol:
                return False
        return True

    def domain_residuals(self, z: Sequence[float]) -> np.ndarray:
        """Residual vector that vanishes exactly on dom g."""
        z = np.asarray(z, dtype=float)
        ineq, eq = self.linear_constraints()
        res = [max(sign * z[i] - bound, 0.0) for i, sign, bound in ineq]
        res += [z[i] - target for i, target in eq]
        return np.array(res)

    def smooth_gradient(self, z: Sequence[float]) -> Optional[np.ndarray]:
        """Gradient where g is differentiable on its domain interior, else None."""
        return None

    @abstractmethod
    def to_dict(self) -> Dict[str, Any]:
        ...


def _indicator(mask: np.ndarray) -> np.ndarray:
    return np.where(mask, 0.0, np.inf)


@dataclass(frozen=True)
class OrthantNonpos(ConvexPiece):
    """Indicator of K = R^s_- x R^(m-s)."""
    s: int
    m: int
    kind = 'orthant_nonpos'

    def __post_init__(self):
        if not 0 <= self.s <= self.m:
            raise ProblemInputError(f'OrthantNonpos requires 0 <= s <= m, got s={self.s}, m={self.m}')

    @property
    def dim(self) -> int:
        return self.m

    @property
    def is_polyhedral(self) -> bool:
        return True

    @property
    def full_domain(self) -> bool:
        return self.s == 0

    def value_batch(self, Z: np.ndarray) -> np.ndarray:
        Z = np.asarray(Z, dtype=float)
        return _indicator(np.all(Z[:, :self.s] <= INDICATOR_TOL, axis=1))

    def linear_constraints(self):
        return [(i, 1.0, 0.0) for i in range(self.s)], []

    def smooth_gradient(self, z):
        return np.zeros(self.m)

    def to_dict(self):
        return {'type': self.kind, 's': self.s}


@dataclass(frozen=True)
class ZeroIndicator(ConvexPiece):
    """Indicator of {0} in R^m (equality constraints)."""
    m: int
    kind = 'zero'

    @property
    def dim(self) -> int:
        return self.m

    @property
    def is_polyhedral(self) -> bool:
        return True

    @property
    def full_domain(self) -> bool:
        return self.m == 0

    def value_batch(self, Z):
        Z = np.asarray(Z, dtype=float)
        return _indicator(np.all(np.abs(Z) <= INDICATOR_TOL, axis=1))

    def linear_constraints(self):
        return [], [(i, 0.0) for i in range(self.m)]

    def to_dict(self):
        return {'type': self.kind}


@dataclass(frozen=True)
class Box(ConvexPiece):
    """Indicator of the box lo <= z <= hi (infinite bounds allowed)."""
    lo: Tuple[float, ...]
    hi: Tuple[float, ...]
    kind = 'box'

    def __post_init__(self):
        lo = tuple(float('-inf') if b is None else float(b) for b in self.lo)
        hi = tuple(float('inf') if b is None else float(b) for b in self.hi)
        if len(lo) != len(hi):
            raise ProblemInputError('Box bounds have different lengths')
        if any(a > b for a, b in zip(lo, hi)):
            raise ProblemInputError('Box requires lo <= hi componentwise')
        object.__setattr__(self, 'lo', lo)
        object.__setattr__(self, 'hi', hi)

    @property
    def dim(self) -> int:
        return len(self.lo)

    @property
    def is_polyhedral(self) -> bool:
        return True

    @property
    def full_domain(self) -> bool:
        return all(np.isinf(a) and np.isinf(b) for a, b in zip(self.lo, self.hi))

    def value_batch(self, Z):
        Z = np.asarray(Z, dtype=float)
        lo, hi = np.array(self.lo), np.array(self.hi)
        return _indicator(np.all((Z >= lo - INDICATOR_TOL) & (Z <= hi + INDICATOR_TOL), axis=1))

    def linear_constraints(self):
        ineq, eq = [], []
        for i, (a, b) in enumerate(zip(self.lo, self.hi)):
            if a == b:
                eq.append((i, a))
                continue
            if np.isfinite(b):
                ineq.append((i, 1.0, b))
            if np.isfinite(a):
                ineq.append((i, -1.0, -a))
        return ineq, eq

    def smooth_gradient(self, z):
        return np.zeros(self.dim)

    def to_dict(self):
        def enc(b):
            return None if np.isinf(b) else b
        return {'type': self.kind, 'lo': [enc(b) for b in self.lo], 'hi': [enc(b) for b in self.hi]}


@dataclass(frozen=True)
class EuclideanNorm(ConvexPiece):
    """g(z) = weight * |z|."""
    weight: float
    m: int
    kind = 'norm'

    def __post_init__(self):
        if self.weight < 0:
            raise ProblemInputError('EuclideanNorm weight must be >= 0')

    @property
    def dim(self) -> int:
        return self.m

    @property
    def is_polyhedral(self) -> bool:
        return self.m <= 1

    def value_batch(self, Z):
        return self.weight * np.linalg.norm(np.asarray(Z, dtype=float), axis=1)

    def smooth_gradient(self, z):
        z = np.asarray(z, dtype=float)
        r = np.linalg.norm(z)
        if r == 0.0:
            return None if self.weight > 0 else np.zeros(self.m)
        return self.weight * z / r

    def to_dict(self):
        return {'type': self.kind, 'w': self.weight}


@dataclass(frozen=True)
class SquaredNorm(ConvexPiece):
    """g(z) = (weight / 2) * |z|^2."""
    weight: float
    m: int
    kind = 'sqnorm'

    def __post_init__(self):
        if self.weight < 0:
            raise ProblemInputError('SquaredNorm weight must be >= 0')

    @property
    def dim(self) -> int:
        return self.m

    def value_batch(self, Z):
        Z = np.asarray(Z, dtype=float)
        return 0.5 * self.weight * np.sum(Z * Z, axis=1)

    def smooth_gradient(self, z):
        return self.weight * np.asarray(z, dtype=float)

    def to_dict(self):
        return {'type': self.kind, 'w': self.weight}


def convex_piece_from_dict(data: Dict[str, Any], m: int) -> ConvexPiece:
    """Parse the "g" record of a problem file."""
    if not isinstance(data, dict) or 'type' not in data:
        raise ProblemInputError(f'Malformed convex piece: {data!r}')
    kind = data['type']
    if kind == 'orthant_nonpos':
        return OrthantNonpos(int(data.get('s', m)), m)
    if kind == 'zero':
        return ZeroIndicator(m)
    if kind == 'box':
        box = Box(tuple(data.get('lo', [])), tuple(data.get('hi', [])))
        if box.dim != m:
            raise ProblemInputError(f'Box has dimension {box.dim}, expected {m}')
        return box
    if kind == 'norm':
        return EuclideanNorm(float(data.get('w', 1.0)), m)
    if kind == 'sqnorm':
        return SquaredNorm(float(data.get('w', 1.0)), m)
    raise ProblemInputError(f'Unknown convex piece type: {kind}')


# ==================== Problem bodies ====================

@dataclass(frozen=True)
class CompositeBody:
    """phi(x, u) = f0(x) + g(F(x) + u)."""
    f0: Polynomial
    F: SmoothMap
    g: ConvexPiece
    kind = 'composite'


class ClosedFormModel(ABC):
    """Registry problem with analytic value and derivative rules."""

    kind = 'closed_form'
    registry_id: str = ''
    n: int = 1
    m: int = 0
    full_domain: bool = True

    @property
    def params(self) -> Dict[str, Any]:
        return {}

    @abstractmethod
    def value_batch(self, X: np.ndarray, u: np.ndarray) -> np.ndarray:
        ...

    @abstractmethod
    def grad_x(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        """x-gradient; at kinks, the midpoint of the subdifferential interval."""

    @abstractmethod
    def grad_u(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        ...

    def hessian_xx(self, x: np.ndarray, u: np.ndarray) -> Optional[np.ndarray]:
        return None

    def subdiff_x_interval(self, x: np.ndarray, u: np.ndarray) -> Tuple[float, float]:
        """Partial subdifferential in x for n = 1, as an interval."""
        g = float(self.grad_x(x, u)[0])
        return g, g


class QuadraticModel(ClosedFormModel):
    """phi(x, u) = (s/2)|x - c|^2 - u.(x - c), anchored at c."""

    def __init__(self, s: float = 1.0, n: int = 1, center: float = 0.0):
        if s <= 0:
            raise ProblemInputError(f'quadratic requires s > 0, got {s}')
        self.s = float(s)
        self.n = self.m = int(n)
        self.center = float(center)
        self.registry_id = 'quadratic' if center == 0.0 else 'shifted_quadratic'

    @property
    def params(self):
        return {'s': self.s, 'n': self.n, 'center': self.center}

    def value_batch(self, X, u):
        D = np.asarray(X, dtype=float) - self.center
        return 0.5 * self.s * np.sum(D * D, axis=1) - D @ u

    def grad_x(self, x, u):
        return self.s * (x - self.center) - u

    def grad_u(self, x, u):
        return -(x - self.center)

    def hessian_xx(self, x, u):
        return self.s * np.eye(self.n)


class NegQuadraticModel(ClosedFormModel):
    """f(x) = -x^2/2, no parameter."""
    registry_id = 'neg_quadratic'
    n, m = 1, 0

    def value_batch(self, X, u):
        X = np.asarray(X, dtype=float)
        return -0.5 * X[:, 0] ** 2

    def grad_x(self, x, u):
        return -np.asarray(x, dtype=float)

    def grad_u(self, x, u):
        return np.zeros(0)

    def hessian_xx(self, x, u):
        return -np.eye(1)


class AbsModel(ClosedFormModel):
    """f(x) = |x|, no parameter."""
    registry_id = 'abs1d'
    n, m = 1, 0

    def value_batch(self, X, u):
        return np.abs(np.asarray(X, dtype=float)[:, 0])

    def grad_x(self, x, u):
        return np.sign(np.asarray(x, dtype=float))

    def grad_u(self, x, u):
        return np.zeros(0)

    def hessian_xx(self, x, u):
        return np.zeros((1, 1)) if x[0] != 0.0 else None

    def subdiff_x_interval(self, x, u):
        if x[0] == 0.0:
            return -1.0, 1.0
        return super().subdiff_x_interval(x, u)


class RadialPowerModel(ClosedFormModel):
    """
    phi(x, u) = (3/4)|(x,u)|^(4/3) + |(x,u)| - x on R x R.

    Strongly convex near the origin with minimum 0 at (0, 0); the minimizer
    M(0, u) grows like |u|^(6/7), so it is not Lipschitz in u.
    """
    registry_id = 'ex32'
    n, m = 1, 1

    def value_batch(self, X, u):
        X = np.asarray(X, dtype=float)
        z = np.hypot(X[:, 0], u[0])
        return 0.75 * z ** (4.0 / 3.0) + z - X[:, 0]

    def grad_x(self, x, u):
        z = float(np.hypot(x[0], u[0]))
        if z == 0.0:
            return np.array([-1.0])
        return np.array([(np.cbrt(z) + 1.0) * (x[0] / z) - 1.0])

    def grad_u(self, x, u):
        z = float(np.hypot(x[0], u[0]))
        if z == 0.0:
            return np.array([0.0])
        return np.array([(np.cbrt(z) + 1.0) * (u[0] / z)])

    def subdiff_x_interval(self, x, u):
        if x[0] == 0.0 and u[0] == 0.0:
            return -2.0, 0.0
        return super().subdiff_x_interval(x, u)


ProblemBody = Union[CompositeBody, ClosedFormModel]


@dataclass(frozen=True)
class ParametricProblem:
    """Problem phi(x, u) with primal dimension n, parameter dimension m, anchor xbar."""
    name: str
    n: int
    m: int
    body: ProblemBody
    xbar: Tuple[float, ...]
    elicitation: float = 0.0
    description: str = ''
    params: Dict[str, Any] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, 'xbar', tuple(float(t) for t in self.xbar))
        if len(self.xbar) != self.n:
            raise ProblemInputError(f'xbar has length {len(self.xbar)}, expected n={self.n}')
        if self.elicitation < 0:
            raise ProblemInputError('elicitation weight must be >= 0')
        if isinstance(self.body, CompositeBody):
            f0, F, g = self.body.f0, self.body.F, self.body.g
            if f0.num_vars != self.n or F.domain_dim != self.n:
                raise ProblemInputError('Composite pieces do not match primal dimension n')
            if F.range_dim != self.m or g.dim != self.m:
                raise ProblemInputError('Composite pieces do not match parameter dimension m')
        elif isinstance(self.body, ClosedFormModel):
            if self.body.n != self.n or self.body.m != self.m:
                raise ProblemInputError('Closed form dimensions do not match the problem')
        else:
            raise ProblemInputError(f'Unknown problem body {type(self.body).__name__}')
        if not np.isfinite(eval_phi(self, self.xbar, np.zeros(self.m))):
            raise ProblemInputError(f'phi(xbar, 0) is not finite for problem {self.name}')

    @property
    def is_composite(self) -> bool:
        return isinstance(self.body, CompositeBody)

    @property
    def xbar_array(self) -> np.ndarray:
        return np.array(self.xbar, dtype=float)

    @property
    def is_nlp(self) -> bool:
        """Composite with g the indicator of a nonpositive orthant."""
        return self.is_composite and isinstance(self.body.g, OrthantNonpos)

    def elicited(self, e: float) -> 'ParametricProblem':
        """phi_e(x, u) = phi(x, u) + (e/2)|u|^2 with the same anchor."""
        return replace(self, name=f'{self.name}+elicit({e:g})', elicitation=self.elicitation + float(e))


# ==================== Evaluation ====================

def _check_dims(problem: ParametricProblem, x: np.ndarray, u: np.ndarray) -> None:
    if x.shape[-1] != problem.n:
        raise ProblemInputError(f'x has dimension {x.shape[-1]}, expected n={problem.n}')
    if u.shape != (problem.m,):
        raise ProblemInputError(f'u has dimension {u.size}, expected m={problem.m}')


def eval_phi_batch(problem: ParametricProblem, X: np.ndarray, u: Sequence[float]) -> np.ndarray:
    """phi(x, u) at every row of X for a fixed parameter u."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    u = np.asarray(u, dtype=float).reshape(-1)
    _check_dims(problem, X, u)
    body = problem.body
    if isinstance(body, CompositeBody):
        values = body.f0.evaluate_batch(X) + body.g.value_batch(body.F.evaluate_batch(X) + u)
    else:
        values = body.value_batch(X, u)
    if problem.elicitation:
        values = values + 0.5 * problem.elicitation * float(u @ u)
    return values


def eval_phi(problem: ParametricProblem, x: Sequence[float], u: Sequence[float]) -> float:
    """phi(x, u), +inf when an indicator is violated."""
    x = np.asarray(x, dtype=float).reshape(-1)
    return float(eval_phi_batch(problem, x[None, :], u)[0])


def grad_f0_and_jac_F(problem: ParametricProblem, x: Sequence[float]) -> Tuple[np.ndarray, np.ndarray]:
    """Exact gradient of f0 and m x n Jacobian of F at x."""
    if not problem.is_composite:
        raise UnsupportedOperationError(
            f'grad_f0_and_jac_F needs a composite problem, {problem.name} is a closed form'
        )
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size != problem.n:
        raise ProblemInputError(f'x has dimension {x.size}, expected n={problem.n}')
    return problem.body.f0.gradient(x), problem.body.F.jacobian(x)


def partial_u_gradient(problem: ParametricProblem, x: Sequence[float], u: Sequence[float]) -> np.ndarray:
    """d phi / du for closed forms, including the elicitation term."""
    if problem.is_composite:
        raise UnsupportedOperationError('u-gradient of a composite goes through the multiplier set')
    x = np.asarray(x, dtype=float).reshape(-1)
    u = np.asarray(u, dtype=float).reshape(-1)
    return problem.body.grad_u(x, u) + problem.elicitation * u


def partial_x_gradient(problem: ParametricProblem, x: Sequence[float], u: Sequence[float]) -> Optional[np.ndarray]:
    """
    d phi / dx where phi(., u) is differentiable at x.

    Returns None for composites whose g has no gradient at F(x) + u (active
    indicators, norm kinks); those need the multiplier set instead.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    u = np.asarray(u, dtype=float).reshape(-1)
    body = problem.body
    if isinstance(body, ClosedFormModel):
        return body.grad_x(x, u)
    z = body.F.evaluate(x) + u
    if not body.g.in_domain(z):
        return None
    ineq, eq = body.g.linear_constraints()
    if eq or any(abs(sign * z[i] - bound) <= INDICATOR_TOL for i, sign, bound in ineq):
        return None
    gz = body.g.smooth_gradient(z)
    if gz is None:
        return None
    return body.f0.gradient(x) + body.F.jacobian(x).T @ gz
