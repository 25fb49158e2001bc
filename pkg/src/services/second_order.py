"""
Second-order checks: Lagrangian Hessians, the strong second-order sufficient
condition over the whole multiplier polytope, difference-quotient sampling of
the strict second-order subdifferential and the tilt cross-check.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import null_space
from scipy.optimize import brentq

from ..utils.errors import ConfigError, ProbeError, ProblemInputError, UnsupportedOperationError
from ..utils.logger import get_logger
from .graph_sampler import GraphSampler, graph_sampler_for
from .localized_solver import Localization, SolveConfig
from .problem_model import ParametricProblem, grad_f0_and_jac_F
from .stability_probes import NOISE_FLOOR, ModulusEstimate, ProbeConfig, Verdict, lipschitz_trend
from .subdifferential_service import CONSTRAINT_TOL, multiplier_set


logger = get_logger('second_order')

SUBSPACE_MODES = ('all_active', 'strict_multipliers')


@dataclass
class SOSCCheck:
    """Restricted-Hessian test at one multiplier."""
    y: np.ndarray
    eigenvalue: float
    passed: bool
    basis_dim: int
    theta: Optional[float] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            'y': [round(float(t), 12) for t in self.y],
            'eigenvalue': round(float(self.eigenvalue), 9) if math.isfinite(self.eigenvalue) else self.eigenvalue,
            'passed': self.passed,
            'basis_dim': self.basis_dim,
            'theta': self.theta,
        }


@dataclass
class SOSCReport:
    """Strong second-order sufficient condition over the multiplier polytope."""
    mode: str
    vertices: List[SOSCCheck]
    grid: List[SOSCCheck] = field(default_factory=list)
    basis: Optional[np.ndarray] = None
    crossing: Optional[float] = None
    pd_tol: float = 1e-8

    @property
    def checks(self) -> List[SOSCCheck]:
        return self.vertices + self.grid

    @property
    def all_multipliers_pass(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def some_multipliers_pass(self) -> bool:
        return any(c.passed for c in self.checks)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'mode': self.mode,
            'pd_tol': self.pd_tol,
            'all_multipliers_pass': self.all_multipliers_pass,
            'some_multipliers_pass': self.some_multipliers_pass,
            'crossing': self.crossing,
            'basis': None if self.basis is None else np.round(self.basis, 12).tolist(),
            'vertices': [c.to_dict() for c in self.vertices],
            'grid': [c.to_dict() for c in self.grid],
        }


@dataclass
class SecondOrderSample:
    """Difference quotients (xi, mu, tau, base point) harvested from graph pairs."""
    quadruples: List[Tuple[np.ndarray, np.ndarray, float, Tuple[np.ndarray, np.ndarray]]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.quadruples)

    @staticmethod
    def ratio(xi: np.ndarray, mu: np.ndarray) -> float:
        return float(mu @ xi) / float(xi @ xi)

    def ratios(self) -> List[float]:
        return [self.ratio(xi, mu) for xi, mu, _, _ in self.quadruples]


@dataclass
class TiltCrosscheck:
    """Measured tilt modulus against the bound 1/s from the definiteness modulus."""
    measured: float
    s_hat: float
    bound: float
    ratio: Optional[float]
    violation: bool
    inconsistent: bool
    tilt_verdict: Verdict
    dfnt_verdict: Verdict

    def to_dict(self) -> Dict[str, Any]:
        return {
            'measured': self.measured,
            's_hat': self.s_hat,
            'bound': self.bound,
            'ratio': self.ratio,
            'violation': self.violation,
            'inconsistent': self.inconsistent,
            'tilt_verdict': self.tilt_verdict.value,
            'dfnt_verdict': self.dfnt_verdict.value,
        }


# ==================== Hessians and subspaces ====================

def _require_nlp(problem: ParametricProblem) -> None:
    if not problem.is_nlp:
        raise UnsupportedOperationError(f'{problem.name} is not an NLP composite')


def lagrangian_hessian(problem: ParametricProblem, x: Sequence[float], y: Sequence[float]) -> np.ndarray:
    """Hessian of f0 + sum y_i F_i at x, exact from the polynomial data."""
    _require_nlp(problem)
    x = np.asarray(x, dtype=float).reshape(-1)
    y = np.asarray(y, dtype=float).reshape(-1)
    if y.size != problem.m:
        raise ProblemInputError(f'y has dimension {y.size}, expected m={problem.m}')
    body = problem.body
    H = body.f0.hessian(x)
    if problem.m:
        H = H + np.tensordot(y, body.F.component_hessians(x), axes=1)
    return 0.5 * (H + H.T)


def critical_subspace(problem: ParametricProblem, x: Sequence[float], u: Optional[Sequence[float]] = None,
                      y: Optional[Sequence[float]] = None, mode: str = 'all_active',
                      active_tol: float = CONSTRAINT_TOL) -> np.ndarray:
    """
    Orthonormal basis (columns) of the complement of the constraining gradients.

    all_active uses every active constraint; strict_multipliers keeps the
    equality rows and the inequalities with y_i > active_tol.
    """
    _require_nlp(problem)
    if mode not in SUBSPACE_MODES:
        raise ConfigError(f'Unknown subspace mode {mode!r}')
    x = np.asarray(x, dtype=float).reshape(-1)
    u = np.zeros(problem.m) if u is None else np.asarray(u, dtype=float).reshape(-1)
    _, J = grad_f0_and_jac_F(problem, x)
    z = problem.body.F.evaluate(x) + u
    ineq, eq = problem.body.g.linear_constraints()

    rows = [J[i] for i, _ in eq]
    for i, sign, bound in ineq:
        if abs(sign * z[i] - bound) > active_tol:
            continue
        if mode == 'strict_multipliers':
            if y is None:
                raise ConfigError('strict_multipliers mode needs a multiplier y')
            if abs(float(y[i])) <= active_tol:
                continue
        rows.append(J[i])
    if not rows:
        return np.eye(problem.n)
    return null_space(np.array(rows))


def restricted_min_eigenvalue(H: np.ndarray, basis: np.ndarray) -> float:
    """Smallest eigenvalue of B^T H B; +inf on the zero subspace."""
    if basis.shape[1] == 0:
        return math.inf
    R = basis.T @ H @ basis
    return float(np.linalg.eigvalsh(0.5 * (R + R.T))[0])


# ==================== Strong SOSC ====================

def _check(problem, x, u, y, mode, pd_tol, active_tol, theta=None) -> SOSCCheck:
    basis = critical_subspace(problem, x, u, y, mode, active_tol)
    eig = restricted_min_eigenvalue(lagrangian_hessian(problem, x, y), basis)
    return SOSCCheck(np.asarray(y, dtype=float), eig, eig > pd_tol, basis.shape[1], theta)


def strong_sosc_over_multipliers(problem: ParametricProblem, x: Sequence[float], v: Sequence[float],
                                 u: Sequence[float], theta_points: int = 11, mode: str = 'all_active',
                                 pd_tol: float = 1e-8, seed: int = 0, workers: int = 1,
                                 active_tol: float = CONSTRAINT_TOL) -> SOSCReport:
    """
    Strong SOSC at every vertex of Y(x, u, v) and along the polytope.

    A segment is swept on a theta grid y(theta) = (1-theta) y0 + theta y1 and the
    verdict flip is bracketed and refined to 1e-12; higher-dimensional polytopes
    use random convex combinations of the vertices.

    Raises:
        ProbeError: empty multiplier set
    """
    _require_nlp(problem)
    x = np.asarray(x, dtype=float).reshape(-1)
    u = np.asarray(u, dtype=float).reshape(-1)
    Y = multiplier_set(problem, x, u, v, active_tol)
    if Y.is_empty():
        raise ProbeError('Multiplier set is empty: x is not a KKT point',
                         node={'x': x.tolist(), 'u': u.tolist()})
    vertices = Y.vertices()

    def run(args):
        y, theta = args
        return _check(problem, x, u, y, mode, pd_tol, active_tol, theta)

    vertex_checks = [run((y, None)) for y in vertices]
    segment = len(vertices) == 2 and Y.affine_dimension() == 1
    if segment:
        y0, y1 = vertices
        thetas = np.linspace(0.0, 1.0, max(theta_points, 2))
        jobs = [((1 - t) * y0 + t * y1, float(t)) for t in thetas]
    elif len(vertices) > 1:
        jobs = [(y, None) for y in Y.sample(np.random.default_rng(seed), theta_points)]
    else:
        jobs = []
    if workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            grid = list(pool.map(run, jobs))
    else:
        grid = [run(job) for job in jobs]

    crossing = None
    if segment:
        crossing = _theta_crossing(problem, x, u, vertices, grid, mode, pd_tol, active_tol)

    basis = critical_subspace(problem, x, u, None, mode, active_tol) if mode == 'all_active' else None
    report = SOSCReport(mode, vertex_checks, grid, basis, crossing, pd_tol)
    logger.info('Strong SOSC over multipliers', problem=problem.name, vertices=len(vertices),
                all_pass=report.all_multipliers_pass, some_pass=report.some_multipliers_pass,
                crossing=crossing)
    return report


def _theta_crossing(problem, x, u, vertices, grid, mode, pd_tol, active_tol) -> Optional[float]:
    y0, y1 = vertices

    def margin(theta):
        y = (1 - theta) * y0 + theta * y1
        return _check(problem, x, u, y, mode, pd_tol, active_tol).eigenvalue - pd_tol

    for a, b in zip(grid, grid[1:]):
        if a.passed != b.passed:
            return float(brentq(margin, a.theta, b.theta, xtol=1e-12))
    return None


# ==================== Strict second-order subdifferential ====================

def default_neighborhood_ladder(loc: Localization, probe_cfg: ProbeConfig, levels: int = 3) -> List[float]:
    return [loc.v_radius * probe_cfg.ladder_ratio ** k for k in range(levels)]


def strict_second_subdiff_estimate(sampler: GraphSampler, xbar: Sequence[float], vbar: Sequence[float],
                                   alpha: float, tau_ladder: Sequence[float],
                                   neighborhood_ladder: Sequence[float],
                                   probe_cfg: Optional[ProbeConfig] = None) -> Tuple[SecondOrderSample, ModulusEstimate]:
    """
    Definiteness modulus of the strict second-order subdifferential.

    Harvests (xi, mu) with (x + tau xi, v + tau mu) on the graph for every base
    point of each neighbourhood and every tau, keeping |xi| >= xi_tol and
    |mu| <= mu_max. The estimate is the infimum of mu.xi/|xi|^2; with no
    admissible quadruple the result is vacuous (+inf).

    Raises:
        ProbeError: empty base sample
    """
    probe_cfg = probe_cfg or ProbeConfig()
    xbar = np.asarray(xbar, dtype=float)
    vbar = np.asarray(vbar, dtype=float)
    sample = SecondOrderSample()
    trend: List[Tuple[float, float]] = []
    bases = 0
    for rho in sorted(neighborhood_ladder, reverse=True):
        points = [p for p in sampler.sample(rho).points if p[2] < alpha]
        bases += len(points)
        level = math.inf
        for point in points:
            x, v, _ = point
            for tau in sorted(tau_ladder, reverse=True):
                for xi, mu in sampler.offsets(point, tau, probe_cfg.xi_tol, probe_cfg.xi_max):
                    if np.linalg.norm(xi) < probe_cfg.xi_tol or np.linalg.norm(mu) > probe_cfg.mu_max:
                        continue
                    if not sampler.f(x + tau * xi) < alpha:
                        continue
                    sample.quadruples.append((xi, mu, float(tau), (x, v)))
                    level = min(level, SecondOrderSample.ratio(xi, mu))
        trend.append((float(rho), level))
    if bases == 0:
        raise ProbeError('Graph sample is empty on every neighbourhood',
                         node={'x': xbar.tolist(), 'v': vbar.tolist()})

    value = trend[-1][1]
    if not sample.quadruples or not math.isfinite(value):
        estimate = ModulusEstimate(math.inf, trend=trend, verdict=Verdict.VACUOUS,
                                   notes=['no admissible quadruple with |xi| >= xi_tol'])
    else:
        estimate = ModulusEstimate(value, trend=trend, verdict=Verdict.PASS if value > 0 else Verdict.FAIL)
    logger.info('Definiteness modulus', problem=sampler.problem.name, value=estimate.value,
                quadruples=len(sample), verdict=estimate.verdict.value)
    return sample, estimate


def dfnt_estimate(problem: ParametricProblem, loc: Localization, cfg: SolveConfig,
                  probe_cfg: ProbeConfig) -> Tuple[SecondOrderSample, ModulusEstimate]:
    """Definiteness modulus of phi(., 0) at (xbar, 0) with the default ladders."""
    sampler = graph_sampler_for(problem, loc, cfg)
    return strict_second_subdiff_estimate(
        sampler, loc.xbar_array, np.zeros(problem.n), loc.alpha, probe_cfg.taus,
        default_neighborhood_ladder(loc, probe_cfg), probe_cfg,
    )


def tilt_crosscheck(problem: ParametricProblem, loc: Localization, cfg: SolveConfig, probe_cfg: ProbeConfig,
                    tilt: Optional[ModulusEstimate] = None,
                    dfnt: Optional[ModulusEstimate] = None) -> TiltCrosscheck:
    """
    Compare the measured tilt modulus with 1/s for s the definiteness modulus.

    A vacuous modulus allows no tilt motion at all (bound 0). s <= 0 alongside a
    passing tilt verdict is flagged as a probe disagreement.
    """
    if tilt is None:
        tilt = lipschitz_trend(problem, loc, 'v_only', cfg, probe_cfg)
    if dfnt is None:
        _, dfnt = dfnt_estimate(problem, loc, cfg, probe_cfg)
    s_hat, measured = dfnt.value, tilt.value
    if dfnt.verdict == Verdict.VACUOUS:
        bound = 0.0
    elif s_hat > 0:
        bound = 1.0 / s_hat
    else:
        bound = math.inf
    violation = math.isfinite(bound) and measured > bound * (1 + probe_cfg.slack) + NOISE_FLOOR
    ratio = measured * s_hat if math.isfinite(s_hat) else None
    inconsistent = s_hat <= 0 and tilt.verdict == Verdict.PASS
    if inconsistent:
        logger.warning('Tilt verdict passes with a nonpositive definiteness modulus',
                       problem=problem.name, s_hat=s_hat)
    if violation:
        logger.warning('Tilt modulus exceeds 1/s', problem=problem.name, measured=measured, bound=bound)
    return TiltCrosscheck(measured, s_hat, bound, ratio, violation, inconsistent, tilt.verdict, dfnt.verdict)
