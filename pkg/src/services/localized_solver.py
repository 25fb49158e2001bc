"""
Localized tilted minimization.

Computes the localized value m_delta(v, u) and argmin M_delta(v, u) of

    minimize phi(x, u) - v . (x - xbar)  over |x - xbar| < delta

by a vectorized grid search, local refinement from every grid basin and
clustering of the refined points. The open ball is represented by the closed
ball of radius delta - refine_tol.
"""

import csv
import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.optimize import brentq, least_squares, minimize, minimize_scalar, root

from ..utils.errors import ConfigError, EmptyLocalProblemError, ProblemInputError, StabilityProbeError
from ..utils.logger import get_logger
from .problem_model import (
    ClosedFormModel,
    CompositeBody,
    EuclideanNorm,
    ParametricProblem,
    SquaredNorm,
    eval_phi,
    eval_phi_batch,
)
from .subdifferential_service import stationarity_residual


logger = get_logger('localized_solver')

MAX_GRID_DIM = 6


@dataclass(frozen=True)
class Localization:
    """Ball |x - xbar| < delta, attentive level alpha and perturbation box radii."""
    xbar: Tuple[float, ...]
    delta: float
    alpha: float = math.inf
    v_radius: float = 0.01
    u_radius: float = 0.01

    def __post_init__(self):
        object.__setattr__(self, 'xbar', tuple(float(t) for t in self.xbar))
        if self.alpha is None:
            object.__setattr__(self, 'alpha', math.inf)
        for name in ('delta', 'v_radius', 'u_radius'):
            if not getattr(self, name) > 0:
                raise ConfigError(f'Localization {name} must be > 0, got {getattr(self, name)}')

    @classmethod
    def for_problem(cls, problem: ParametricProblem, settings: Dict[str, Any]) -> 'Localization':
        """Build from the 'localization' config section and check alpha."""
        loc = cls(
            xbar=problem.xbar,
            delta=float(settings.get('delta', 0.5)),
            alpha=math.inf if settings.get('alpha') is None else float(settings['alpha']),
            v_radius=float(settings.get('v_radius', 0.01)),
            u_radius=float(settings.get('u_radius', 0.01)),
        )
        loc.check_alpha(problem)
        return loc

    def check_alpha(self, problem: ParametricProblem) -> None:
        if math.isfinite(self.alpha):
            base = eval_phi(problem, self.xbar, np.zeros(problem.m))
            if not self.alpha > base:
                raise ConfigError(f'alpha={self.alpha} must exceed phi(xbar, 0)={base}')

    @property
    def xbar_array(self) -> np.ndarray:
        return np.array(self.xbar, dtype=float)

    def shrunk(self, factor: float) -> 'Localization':
        """Same anchor with the perturbation radii scaled by factor."""
        return Localization(self.xbar, self.delta, self.alpha, self.v_radius * factor, self.u_radius * factor)


@dataclass(frozen=True)
class SolveConfig:
    """Grid and refinement settings for solve_tilted."""
    grid_points_per_axis: int = 41
    refine_iters: int = 200
    refine_tol: float = 1e-10
    cluster_tol: float = 1e-6
    seed: int = 0
    max_grid_points: int = 50000
    max_starts: int = 24
    workers: int = 1
    active_tol: float = 1e-9

    def __post_init__(self):
        if self.grid_points_per_axis < 11 or self.grid_points_per_axis % 2 == 0:
            raise ConfigError(f'grid must be odd and >= 11, got {self.grid_points_per_axis}')
        if not self.refine_tol > 0 or not self.cluster_tol > 0:
            raise ConfigError('refine_tol and cluster_tol must be > 0')
        if self.refine_iters < 1 or self.max_starts < 1 or self.workers < 1:
            raise ConfigError('refine_iters, max_starts and workers must be >= 1')

    @classmethod
    def from_config(cls, solver: Dict[str, Any], tolerances: Optional[Dict[str, Any]] = None) -> 'SolveConfig':
        tolerances = tolerances or {}
        try:
            return cls(
                grid_points_per_axis=int(solver.get('grid', 41)),
                refine_iters=int(solver.get('refine_iters', 200)),
                refine_tol=float(solver.get('refine_tol', 1e-10)),
                cluster_tol=float(solver.get('cluster_tol', 1e-6)),
                seed=int(solver.get('seed', 0)),
                max_grid_points=int(solver.get('max_grid_points', 50000)),
                max_starts=int(solver.get('max_starts', 24)),
                workers=int(solver.get('workers', 1)),
                active_tol=float(tolerances.get('active_tol', 1e-9)),
            )
        except (TypeError, ValueError) as e:
            if isinstance(e, ConfigError):
                raise
            raise ConfigError(f'solver settings must be numeric: {e}') from e

    def axis_count(self, n: int) -> int:
        """Largest odd per-axis count <= grid whose n-th power fits max_grid_points."""
        k = self.grid_points_per_axis
        while k > 3 and k ** n > self.max_grid_points:
            k -= 2
        return k


@dataclass
class ArgminResult:
    """Localized minimizers and optimal value at one (v, u)."""
    minimizers: List[np.ndarray]
    value: float
    single_valued: bool
    boundary_hit: bool
    evaluations: int

    @property
    def minimizer(self) -> np.ndarray:
        """Cluster representative with the lowest value."""
        return self.minimizers[0]


# ==================== Grids ====================

def axis_grid(radius: float, count: int) -> np.ndarray:
    """count points symmetric about 0 on [-radius, radius] (0 included for odd count)."""
    if count == 1:
        return np.zeros(1)
    axis = np.linspace(-radius, radius, count)
    if count % 2:
        axis[count // 2] = 0.0
    return axis


def box_grid(center: Sequence[float], radius: float, count: int) -> List[np.ndarray]:
    """Tensor grid on the box center + [-radius, radius]^d, in lexicographic order."""
    center = np.asarray(center, dtype=float)
    if center.size == 0:
        return [center.copy()]
    axis = axis_grid(radius, count)
    return [center + np.array(p) for p in itertools.product(axis, repeat=center.size)]


def perturbation_nodes(center: Sequence[float], radius: float, count: int,
                       random_nodes: int = 8, seed: int = 0) -> List[np.ndarray]:
    """
    Probe nodes in the box center + [-radius, radius]^d.

    The full tensor grid for d <= 2; otherwise the center, +-radius and
    +-radius/2 along each axis, and a seeded batch of random box points.
    """
    center = np.asarray(center, dtype=float)
    d = center.size
    if d <= 2:
        return box_grid(center, radius, count)
    nodes = [center.copy()]
    for i in range(d):
        for t in (-radius, -0.5 * radius, 0.5 * radius, radius):
            node = center.copy()
            node[i] += t
            nodes.append(node)
    rng = np.random.default_rng(seed)
    nodes += [center + p for p in rng.uniform(-radius, radius, size=(random_nodes, d))]
    return nodes


def line_grid(center: Sequence[float], direction: Sequence[float], radius: float, count: int) -> List[np.ndarray]:
    """Points center + t * direction for t on axis_grid(radius, count)."""
    center = np.asarray(center, dtype=float)
    direction = np.asarray(direction, dtype=float)
    return [center + t * direction for t in axis_grid(radius, count)]


# ==================== Solver ====================

class _TiltedObjective:
    """phi(., u) - v.(. - xbar) with derivative rules for refinement."""

    def __init__(self, problem: ParametricProblem, loc: Localization, v: np.ndarray, u: np.ndarray):
        self.problem = problem
        self.xbar = loc.xbar_array
        self.v = v
        self.u = u
        self.nfev = 0

    def values(self, X: np.ndarray) -> np.ndarray:
        self.nfev += X.shape[0]
        return eval_phi_batch(self.problem, X, self.u) - (X - self.xbar) @ self.v

    def value(self, x: np.ndarray) -> float:
        return float(self.values(np.asarray(x, dtype=float)[None, :])[0])

    def smooth_value(self, x: np.ndarray) -> float:
        """Composite objective with indicator pieces dropped (they become constraints)."""
        body: CompositeBody = self.problem.body
        self.nfev += 1
        value = body.f0.evaluate(x) - (x - self.xbar) @ self.v
        if isinstance(body.g, (SquaredNorm, EuclideanNorm)):
            value += body.g.value(body.F.evaluate(x) + self.u)
        return float(value)

    def smooth_gradient(self, x: np.ndarray) -> np.ndarray:
        body: CompositeBody = self.problem.body
        grad = body.f0.gradient(x) - self.v
        if isinstance(body.g, (SquaredNorm, EuclideanNorm)):
            gz = body.g.smooth_gradient(body.F.evaluate(x) + self.u)
            if gz is not None:
                grad = grad + body.F.jacobian(x).T @ gz
        return grad

    def gradient(self, x: np.ndarray) -> np.ndarray:
        """Closed-form x-gradient of the tilted objective."""
        return self.problem.body.grad_x(x, self.u) - self.v


def _grid_points(loc: Localization, radius: float, k: int, n: int) -> Tuple[np.ndarray, np.ndarray]:
    """Grid offsets as an n-dimensional array and the in-ball mask."""
    axis = axis_grid(radius, k)
    mesh = np.stack(np.meshgrid(*([axis] * n), indexing='ij'), axis=-1)
    inside = np.linalg.norm(mesh, axis=-1) <= radius * (1 + 1e-12)
    return mesh, inside


def _basin_starts(values: np.ndarray, mesh: np.ndarray, max_starts: int) -> List[np.ndarray]:
    """Discrete local minima of the grid values (axis neighbours), best first."""
    n = values.ndim
    padded = np.pad(values, 1, mode='constant', constant_values=np.inf)
    is_min = np.isfinite(values)
    for ax in range(n):
        for shift in (-1, 1):
            sl = [slice(1, -1)] * n
            sl[ax] = slice(1 + shift, padded.shape[ax] - 1 + shift)
            is_min &= values <= padded[tuple(sl)]
    idx = np.argwhere(is_min)
    ranked = sorted(
        (float(values[tuple(i)]), tuple(mesh[tuple(i)])) for i in idx
    )
    return [np.array(p) for _, p in ranked[:max_starts]]


def _restore_feasibility(problem: ParametricProblem, u: np.ndarray, seeds: List[np.ndarray],
                         xbar: np.ndarray, radius: float) -> List[np.ndarray]:
    """Least-squares projection of seeds onto dom g(F(.) + u)."""
    body: CompositeBody = problem.body
    restored = []
    for x0 in seeds:
        result = least_squares(
            lambda x: body.g.domain_residuals(body.F.evaluate(x) + u), x0,
            xtol=1e-15, ftol=1e-15, gtol=1e-15,
        )
        x = result.x
        if body.g.in_domain(body.F.evaluate(x) + u) and np.linalg.norm(x - xbar) <= radius:
            restored.append(x - xbar)
    return restored


def _ball_constraint(xbar: np.ndarray, radius: float) -> Dict[str, Any]:
    return {
        'type': 'ineq',
        'fun': lambda x: radius ** 2 - float((x - xbar) @ (x - xbar)),
        'jac': lambda x: -2.0 * (x - xbar),
    }


def _composite_constraints(problem: ParametricProblem, u: np.ndarray) -> List[Dict[str, Any]]:
    body: CompositeBody = problem.body
    ineq, eq = body.g.linear_constraints()
    constraints = []
    for i, sign, bound in ineq:
        constraints.append({
            'type': 'ineq',
            'fun': lambda x, i=i, s=sign, b=bound: b - s * (body.F.components[i].evaluate(x) + u[i]),
            'jac': lambda x, i=i, s=sign: -s * body.F.components[i].gradient(x),
        })
    for i, target in eq:
        constraints.append({
            'type': 'eq',
            'fun': lambda x, i=i, t=target: body.F.components[i].evaluate(x) + u[i] - t,
            'jac': lambda x, i=i: body.F.components[i].gradient(x),
        })
    return constraints


def _active_system(problem: ParametricProblem, x: np.ndarray, u: np.ndarray, tol: float):
    """Residuals c_A(x) and Jacobian rows of the nearly active constraints."""
    body: CompositeBody = problem.body
    z = body.F.evaluate(x) + u
    J = body.F.jacobian(x)
    ineq, eq = body.g.linear_constraints()
    rows, res, signs, index = [], [], [], []
    for i, sign, bound in ineq:
        if sign * z[i] - bound >= -tol:
            rows.append(sign * J[i])
            res.append(sign * z[i] - bound)
            signs.append(sign)
            index.append(i)
    for i, target in eq:
        rows.append(J[i])
        res.append(z[i] - target)
        signs.append(1.0)
        index.append(i)
    n = problem.n
    if not rows:
        return np.zeros((0, n)), np.zeros(0), [], []
    return np.array(rows), np.array(res), signs, index


def _kkt_newton_polish(problem: ParametricProblem, objective: _TiltedObjective, x: np.ndarray,
                       xbar: np.ndarray, radius: float, iters: int = 8) -> np.ndarray:
    """Active-set Newton steps on the KKT system of an indicator composite."""
    body: CompositeBody = problem.body
    u = objective.u
    best = x.copy()
    best_val = objective.value(best)
    for _ in range(iters):
        A, c, signs, index = _active_system(problem, best, u, 1e-6)
        grad = objective.smooth_gradient(best)
        if A.shape[0]:
            y, *_ = np.linalg.lstsq(A.T, -grad, rcond=None)
        else:
            y = np.zeros(0)
        H = body.f0.hessian(best)
        hessians = body.F.component_hessians(best)
        for yi, s, i in zip(y, signs, index):
            H = H + yi * s * hessians[i]
        k = A.shape[0]
        K = np.block([[H, A.T], [A, np.zeros((k, k))]]) if k else H
        rhs = -np.concatenate([grad + A.T @ y, c]) if k else -grad
        step, *_ = np.linalg.lstsq(K, rhs, rcond=None)
        candidate = best + step[:problem.n]
        if np.linalg.norm(candidate - xbar) > radius:
            break
        cand_val = objective.value(candidate)
        if not np.isfinite(cand_val) or cand_val > best_val + 1e-14:
            break
        done = np.linalg.norm(candidate - best) <= 1e-15
        best, best_val = candidate, cand_val
        if done:
            break
    return best


def _refine_1d(objective: _TiltedObjective, x0: float, lo: float, hi: float, cfg: SolveConfig) -> np.ndarray:
    """Bounded Brent search, then a bracketed root polish of the x-gradient."""
    result = minimize_scalar(
        lambda t: objective.value(np.array([t])),
        bounds=(lo, hi), method='bounded',
        options={'xatol': cfg.refine_tol, 'maxiter': cfg.refine_iters},
    )
    best = float(result.x)
    best_val = objective.value(np.array([best]))
    if objective.value(np.array([x0])) < best_val:
        best, best_val = x0, objective.value(np.array([x0]))

    def slope(t):
        return float(objective.gradient(np.array([t]))[0])

    a, b = max(lo, best - 4 * cfg.refine_tol - 1e-6), min(hi, best + 4 * cfg.refine_tol + 1e-6)
    try:
        sa, sb = slope(a), slope(b)
        if sa < 0 < sb:
            root_x = brentq(slope, a, b, xtol=1e-15)
            if objective.value(np.array([root_x])) <= best_val + 1e-14:
                best = root_x
    except (ValueError, ZeroDivisionError, FloatingPointError):
        pass
    return np.array([best])


def _refine(problem: ParametricProblem, objective: _TiltedObjective, start: np.ndarray,
            xbar: np.ndarray, radius: float, step: float, cfg: SolveConfig) -> np.ndarray:
    body = problem.body
    x0 = xbar + start
    if isinstance(body, ClosedFormModel) and problem.n == 1:
        lo = max(x0[0] - step, xbar[0] - radius)
        hi = min(x0[0] + step, xbar[0] + radius)
        return _refine_1d(objective, float(x0[0]), lo, hi, cfg)

    constraints = [_ball_constraint(xbar, radius)]
    if isinstance(body, ClosedFormModel):
        fun, jac = objective.value, objective.gradient
    else:
        fun, jac = objective.smooth_value, objective.smooth_gradient
        constraints += _composite_constraints(problem, objective.u)

    result = minimize(
        fun, x0, jac=jac, method='SLSQP', constraints=constraints,
        options={'maxiter': cfg.refine_iters, 'ftol': cfg.refine_tol * 1e-3},
    )
    x = result.x
    if np.linalg.norm(x - xbar) > radius:
        x = xbar + (x - xbar) * (radius / np.linalg.norm(x - xbar))

    if isinstance(body, ClosedFormModel):
        H = body.hessian_xx(x, objective.u)
        if H is not None:
            candidate = x - np.linalg.lstsq(H, objective.gradient(x), rcond=None)[0]
            if (np.linalg.norm(candidate - xbar) <= radius
                    and objective.value(candidate) <= objective.value(x) + 1e-14):
                x = candidate
    elif any(body.g.linear_constraints()):
        x = _kkt_newton_polish(problem, objective, x, xbar, radius)
    return x


def _cluster(points: List[np.ndarray], values: List[float], cluster_tol: float) -> Tuple[List[np.ndarray], float]:
    order = sorted(range(len(points)), key=lambda i: (values[i], tuple(points[i])))
    best = values[order[0]]
    reps: List[np.ndarray] = []
    for i in order:
        if values[i] > best + cluster_tol:
            break
        if all(np.linalg.norm(points[i] - r) > cluster_tol for r in reps):
            reps.append(points[i])
    return reps, best


def solve_tilted(problem: ParametricProblem, loc: Localization, v: Sequence[float],
                 u: Sequence[float], cfg: SolveConfig) -> ArgminResult:
    """
    Localized tilted minimization at (v, u).

    Raises:
        ProblemInputError: dimension mismatch or n above the grid limit
        EmptyLocalProblemError: no finite objective value in the ball
    """
    v = np.asarray(v, dtype=float).reshape(-1)
    u = np.asarray(u, dtype=float).reshape(-1)
    n = problem.n
    if v.size != n or u.size != problem.m:
        raise ProblemInputError(f'(v, u) has dimensions ({v.size}, {u.size}), expected ({n}, {problem.m})')
    if n > MAX_GRID_DIM:
        raise ProblemInputError(f'Grid search is limited to n <= {MAX_GRID_DIM}, got {n}')

    xbar = loc.xbar_array
    radius = loc.delta - cfg.refine_tol
    objective = _TiltedObjective(problem, loc, v, u)

    k = cfg.axis_count(n)
    mesh, inside = _grid_points(loc, radius, k, n)
    flat = mesh.reshape(-1, n)
    values = np.full(flat.shape[0], np.inf)
    mask = inside.reshape(-1)
    values[mask] = objective.values(xbar + flat[mask])
    values = values.reshape(inside.shape)
    step = 2 * radius / (k - 1)

    if np.isfinite(values).any():
        starts = _basin_starts(values, mesh, cfg.max_starts)
    elif problem.is_composite:
        residual = np.array([
            np.linalg.norm(problem.body.g.domain_residuals(problem.body.F.evaluate(xbar + p) + u))
            for p in flat[mask]
        ])
        seeds = [xbar + flat[mask][i] for i in np.argsort(residual, kind='stable')[:3]]
        starts = _restore_feasibility(problem, u, seeds, xbar, radius)
    else:
        starts = []
    if not starts:
        raise EmptyLocalProblemError(
            f'No feasible point of {problem.name} in the ball of radius {loc.delta} at u={u.tolist()}'
        )

    points, point_values = [], []
    for start in starts:
        x = _refine(problem, objective, start, xbar, radius, step, cfg)
        val = objective.value(x)
        if np.isfinite(val):
            points.append(x)
            point_values.append(val)
    # grid basins themselves keep the search honest when refinement leaves the domain
    for start in starts:
        val = objective.value(xbar + start)
        if np.isfinite(val) and not any(np.linalg.norm(xbar + start - p) <= step for p in points):
            points.append(xbar + start)
            point_values.append(val)
    if not points:
        raise EmptyLocalProblemError(f'Refinement left the domain of {problem.name} at u={u.tolist()}')

    reps, best = _cluster(points, point_values, cfg.cluster_tol)
    boundary_hit = bool(np.linalg.norm(reps[0] - xbar) >= radius - 1e3 * cfg.refine_tol)
    result = ArgminResult(
        minimizers=reps,
        value=float(best),
        single_valued=len(reps) == 1,
        boundary_hit=boundary_hit,
        evaluations=int(objective.nfev),
    )
    if boundary_hit:
        logger.debug('Minimizer on the localization boundary', problem=problem.name,
                     v=v.tolist(), u=u.tolist())
    return result


def truncated_stationary_map(problem: ParametricProblem, loc: Localization, v: Sequence[float],
                             u: Sequence[float], cfg: SolveConfig,
                             stationarity_tol: float = 1e-7) -> List[np.ndarray]:
    """
    Stationary points x with |x - xbar| < delta and phi(x, u) < alpha.

    One-dimensional closed forms are scanned for sign changes of the tilted
    x-gradient (and kinks whose subdifferential interval contains v); other
    closed forms run root finding from the grid basins; composites use the
    refined local minimizers, each verified through the KKT residual.
    """
    v = np.asarray(v, dtype=float).reshape(-1)
    u = np.asarray(u, dtype=float).reshape(-1)
    xbar = loc.xbar_array
    radius = loc.delta - cfg.refine_tol
    objective = _TiltedObjective(problem, loc, v, u)
    body = problem.body
    candidates: List[np.ndarray] = []

    if isinstance(body, ClosedFormModel) and problem.n == 1:
        k = cfg.axis_count(1)
        ts = xbar[0] + axis_grid(radius, k)
        slopes = [float(objective.gradient(np.array([t]))[0]) for t in ts]
        for t, s in zip(ts, slopes):
            if stationarity_residual(problem, [t], u, v) <= stationarity_tol:
                candidates.append(np.array([t]))
        for (a, sa), (b, sb) in zip(zip(ts, slopes), zip(ts[1:], slopes[1:])):
            if sa * sb < 0:
                r = brentq(lambda t: float(objective.gradient(np.array([t]))[0]), a, b, xtol=1e-15)
                candidates.append(np.array([r]))
    elif isinstance(body, ClosedFormModel):
        k = cfg.axis_count(problem.n)
        mesh, inside = _grid_points(loc, radius, k, problem.n)
        flat = mesh.reshape(-1, problem.n)[inside.reshape(-1)]
        norms = np.array([np.linalg.norm(objective.gradient(xbar + p)) for p in flat])
        for i in np.argsort(norms, kind='stable')[:cfg.max_starts]:
            sol = root(objective.gradient, xbar + flat[i], tol=1e-14)
            candidates.append(sol.x)
    else:
        candidates = list(solve_tilted(problem, loc, v, u, cfg).minimizers)

    found: List[np.ndarray] = []
    for x in candidates:
        if np.linalg.norm(x - xbar) > radius:
            continue
        if not eval_phi(problem, x, u) < loc.alpha:
            continue
        if stationarity_residual(problem, x, u, v) > max(stationarity_tol, cfg.refine_tol):
            continue
        if any(np.linalg.norm(x - f) <= cfg.cluster_tol for f in found):
            continue
        found.append(x)
    found.sort(key=tuple)
    return found


# ==================== Value surfaces ====================

@dataclass
class SurfaceRow:
    v: np.ndarray
    u: np.ndarray
    result: Optional[ArgminResult] = None
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.result is not None

    @property
    def usable(self) -> bool:
        """Solved, single-valued and away from the localization boundary."""
        return self.ok and self.result.single_valued and not self.result.boundary_hit


@dataclass
class ValueSurface:
    """One solve per (v, u) node, in v-major node order."""
    problem_name: str
    n: int
    m: int
    rows: List[SurfaceRow] = field(default_factory=list)

    def __iter__(self) -> Iterator[SurfaceRow]:
        return iter(self.rows)

    def __len__(self) -> int:
        return len(self.rows)

    def lookup(self, v: Sequence[float], u: Sequence[float], tol: float = 1e-12) -> Optional[SurfaceRow]:
        v = np.asarray(v, dtype=float)
        u = np.asarray(u, dtype=float)
        for row in self.rows:
            if np.all(np.abs(row.v - v) <= tol) and np.all(np.abs(row.u - u) <= tol):
                return row
        return None

    @property
    def errors(self) -> List[SurfaceRow]:
        return [row for row in self.rows if not row.ok]

    def to_csv(self, path: Union[str, Path]) -> None:
        """Columns v_1..v_n, u_1..u_m, m_delta, x_1..x_n, single_valued, boundary_hit."""
        header = ([f'v_{i + 1}' for i in range(self.n)] + [f'u_{i + 1}' for i in range(self.m)]
                  + ['m_delta'] + [f'x_{i + 1}' for i in range(self.n)]
                  + ['single_valued', 'boundary_hit'])
        with open(path, 'w', newline='') as f:
            writer = csv.writer(f)
            writer.writerow(header)
            for row in self.rows:
                if row.ok:
                    res = row.result
                    tail = ([repr(res.value)] + [repr(float(t)) for t in res.minimizer]
                            + [str(res.single_valued).lower(), str(res.boundary_hit).lower()])
                else:
                    tail = ['nan'] * (1 + self.n) + ['false', 'false']
                writer.writerow([repr(float(t)) for t in row.v] + [repr(float(t)) for t in row.u] + tail)


def _solve_row(problem, loc, v, u, cfg) -> SurfaceRow:
    try:
        return SurfaceRow(v, u, solve_tilted(problem, loc, v, u, cfg))
    except (StabilityProbeError, ArithmeticError, ValueError, np.linalg.LinAlgError) as e:
        logger.warning('Surface node failed', problem=problem.name, v=v.tolist(), u=u.tolist(), error=str(e))
        return SurfaceRow(v, u, None, f'{type(e).__name__}: {e}')


def value_surface(problem: ParametricProblem, loc: Localization, v_grid: Sequence[Sequence[float]],
                  u_grid: Sequence[Sequence[float]], cfg: SolveConfig) -> ValueSurface:
    """Solve at every node of v_grid x u_grid (v-major order)."""
    return solve_nodes(problem, loc, [(v, u) for v in v_grid for u in u_grid], cfg)


def solve_nodes(problem: ParametricProblem, loc: Localization,
                nodes: Sequence[Tuple[Sequence[float], Sequence[float]]], cfg: SolveConfig) -> ValueSurface:
    """
    Solve at every (v, u) node.

    Nodes run on a thread pool of cfg.workers; rows keep submission order so the
    surface does not depend on the worker count. Failed nodes become flagged rows.
    """
    nodes = [(np.asarray(v, dtype=float).reshape(-1), np.asarray(u, dtype=float).reshape(-1))
             for v, u in nodes]
    logger.debug('Value surface sweep', problem=problem.name, nodes=len(nodes), workers=cfg.workers)
    if cfg.workers > 1 and len(nodes) > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            rows = list(pool.map(lambda node: _solve_row(problem, loc, node[0], node[1], cfg), nodes))
    else:
        rows = [_solve_row(problem, loc, v, u, cfg) for v, u in nodes]
    surface = ValueSurface(problem.name, problem.n, problem.m, rows)
    if surface.errors:
        logger.warning('Value surface has failed nodes', problem=problem.name, failed=len(surface.errors))
    return surface
