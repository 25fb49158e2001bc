"""
Samplers for the subgradient graph of f = phi(., u) near (xbar, vbar).

ClosedFormGraphSampler walks the exact graph of a registry closed form;
PointCloudGraphSampler harvests stationary points of tilted problems, which
is the only graph access a composite offers.
"""

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ..utils.errors import ProblemInputError, StabilityProbeError
from ..utils.logger import get_logger
from .localized_solver import (
    Localization,
    SolveConfig,
    box_grid,
    perturbation_nodes,
    truncated_stationary_map,
)
from .problem_model import ClosedFormModel, ParametricProblem, eval_phi


logger = get_logger('graph_sampler')

GraphPoint = Tuple[np.ndarray, np.ndarray, float]


@dataclass
class GraphSample:
    """Points (x, v, f(x)) with v a subgradient of f at x, filtered by f < alpha."""
    points: List[GraphPoint]
    attentive_filter: float = math.inf
    center: Optional[Tuple[np.ndarray, np.ndarray]] = None

    def __len__(self) -> int:
        return len(self.points)

    def within(self, radius: float) -> 'GraphSample':
        """Points with |x - xbar| <= radius and |v - vbar| <= radius."""
        if self.center is None:
            return self
        xbar, vbar = self.center
        kept = [p for p in self.points
                if np.linalg.norm(p[0] - xbar) <= radius * (1 + 1e-12)
                and np.linalg.norm(p[1] - vbar) <= radius * (1 + 1e-12)]
        return GraphSample(kept, self.attentive_filter, self.center)


def _offset_vectors(n: int, xi_tol: float, xi_max: float) -> List[np.ndarray]:
    """Primal offsets xi with |xi| in [xi_tol, xi_max] along +-e_i."""
    offsets = []
    for i in range(n):
        for scale in (xi_tol, 0.5 * (xi_tol + xi_max), xi_max):
            for sign in (1.0, -1.0):
                xi = np.zeros(n)
                xi[i] = sign * scale
                offsets.append(xi)
    return offsets


class GraphSampler(ABC):
    """Access to gph of the subdifferential of f = phi(., u) around (xbar, vbar)."""

    def __init__(self, problem: ParametricProblem, u: Optional[Sequence[float]] = None,
                 alpha: float = math.inf):
        self.problem = problem
        self.u = np.zeros(problem.m) if u is None else np.asarray(u, dtype=float).reshape(-1)
        if self.u.size != problem.m:
            raise ProblemInputError(f'u has dimension {self.u.size}, expected m={problem.m}')
        self.alpha = alpha
        self.xbar = problem.xbar_array
        self.vbar = np.zeros(problem.n)

    def f(self, x: np.ndarray) -> float:
        return eval_phi(self.problem, x, self.u)

    @abstractmethod
    def sample(self, radius: float, count: int = 21) -> GraphSample:
        """Graph points in the (x, v) neighbourhood of the given radius."""

    @abstractmethod
    def offsets(self, point: GraphPoint, tau: float, xi_tol: float, xi_max: float) -> List[Tuple[np.ndarray, np.ndarray]]:
        """(xi, mu) with (x + tau xi, v + tau mu) on the graph."""


class ClosedFormGraphSampler(GraphSampler):
    """Exact graph of a closed form: gradients, plus the subgradient interval at 1-d kinks."""

    def __init__(self, problem: ParametricProblem, u=None, alpha: float = math.inf, kink_points: int = 41):
        if not isinstance(problem.body, ClosedFormModel):
            raise ProblemInputError(f'{problem.name} is not a closed form')
        super().__init__(problem, u, alpha)
        self.kink_points = kink_points

    def subgradients(self, x: np.ndarray) -> List[np.ndarray]:
        body: ClosedFormModel = self.problem.body
        if self.problem.n == 1:
            lo, hi = body.subdiff_x_interval(x, self.u)
            if hi > lo:
                return [np.array([t]) for t in np.linspace(lo, hi, self.kink_points)]
        return [body.grad_x(x, self.u) + 0.0]

    def sample(self, radius: float, count: int = 21) -> GraphSample:
        points: List[GraphPoint] = []
        for x in box_grid(self.xbar, radius, count):
            fx = self.f(x)
            if not fx < self.alpha:
                continue
            for v in self.subgradients(x):
                points.append((x, v, fx))
        return GraphSample(points, self.alpha, (self.xbar, self.vbar)).within(radius)

    def offsets(self, point, tau, xi_tol, xi_max):
        x, v, _ = point
        pairs = []
        for xi in _offset_vectors(self.problem.n, xi_tol, xi_max):
            x2 = x + tau * xi
            if not self.f(x2) < self.alpha:
                continue
            for v2 in self.subgradients(x2):
                pairs.append((xi, (v2 - v) / tau))
        return pairs


class PointCloudGraphSampler(GraphSampler):
    """Graph points (x, v) with x in the truncated stationary map at tilt v."""

    def __init__(self, problem: ParametricProblem, loc: Localization, cfg: SolveConfig,
                 u=None, grid_count: int = 5):
        super().__init__(problem, u, loc.alpha)
        self.loc = loc
        self.cfg = cfg
        self.grid_count = grid_count

    def _stationary(self, v: np.ndarray) -> List[np.ndarray]:
        try:
            return truncated_stationary_map(self.problem, self.loc, v, self.u, self.cfg)
        except StabilityProbeError as e:
            logger.debug('Stationary map failed', v=v.tolist(), error=str(e))
            return []

    def sample(self, radius: float, count: Optional[int] = None) -> GraphSample:
        count = count or self.grid_count
        points: List[GraphPoint] = []
        for v in perturbation_nodes(self.vbar, radius, count, seed=self.cfg.seed):
            for x in self._stationary(v):
                points.append((x, v, self.f(x)))
        return GraphSample(points, self.alpha, (self.xbar, self.vbar)).within(radius)

    def offsets(self, point, tau, xi_tol, xi_max):
        # tilt the base point and follow the stationary map
        x, v, _ = point
        pairs = []
        for i in range(self.problem.n):
            for sign in (1.0, -1.0):
                mu = np.zeros(self.problem.n)
                mu[i] = sign
                for x2 in self._stationary(v + tau * mu):
                    pairs.append(((x2 - x) / tau, mu))
        return pairs


def graph_sampler_for(problem: ParametricProblem, loc: Localization, cfg: SolveConfig,
                      u=None) -> GraphSampler:
    """Exact sampler for closed forms, stationary-point cloud otherwise."""
    if isinstance(problem.body, ClosedFormModel):
        return ClosedFormGraphSampler(problem, u, loc.alpha)
    return PointCloudGraphSampler(problem, loc, cfg, u)


__all__ = [
    'GraphPoint', 'GraphSample', 'GraphSampler', 'ClosedFormGraphSampler',
    'PointCloudGraphSampler', 'graph_sampler_for',
]
