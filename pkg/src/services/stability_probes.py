"""
Stability probes: Lipschitz moduli, envelope identities, hypo-convexity,
prox-regularity, graphical-derivative norms and the stability classification.

Every verdict is empirical (pass / fail / inconclusive / vacuous) and comes
with the trend it was read from.
"""

import itertools
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..utils.errors import ConfigError, ProbeError, StabilityProbeError
from ..utils.logger import get_logger
from .graph_sampler import GraphSample, graph_sampler_for
from .localized_solver import (
    Localization,
    SolveConfig,
    ValueSurface,
    axis_grid,
    perturbation_nodes,
    solve_nodes,
    solve_tilted,
    truncated_stationary_map,
)
from .problem_model import ParametricProblem, eval_phi
from .subdifferential_service import multiplier_set


logger = get_logger('stability_probes')

MODES = ('v_only', 'u_only', 'joint')

# moduli below this are solver noise
NOISE_FLOOR = 1e-6


class Verdict(str, Enum):
    """Empirical verdict of a probe."""
    PASS = 'pass'
    FAIL = 'fail'
    INCONCLUSIVE = 'inconclusive'
    VACUOUS = 'vacuous'


@dataclass(frozen=True)
class ProbeConfig:
    """Settings of the 'probes' config section."""
    blowup_factor: float = 100.0
    growth_tol: float = 0.05
    growth_margin: float = 0.05
    min_trend: int = 4
    ladder_levels: int = 5
    ladder_ratio: float = 0.1
    probe_nodes: int = 5
    random_nodes: int = 8
    envelope_step: float = 1e-4
    e_max: float = 1e4
    directions: int = 8
    taus: Tuple[float, ...] = (1e-5, 1e-6, 1e-7)
    xi_tol: float = 0.1
    xi_max: float = 1.0
    mu_max: float = 10.0
    slack: float = 0.1
    theta_points: int = 11
    pd_tol: float = 1e-8

    def __post_init__(self):
        object.__setattr__(self, 'taus', tuple(sorted((float(t) for t in self.taus), reverse=True)))
        if self.blowup_factor <= 1:
            raise ConfigError('blowup_factor must be > 1')
        if not 0 < self.ladder_ratio < 1:
            raise ConfigError('ladder_ratio must lie in (0, 1)')
        if self.ladder_levels < 2 or self.min_trend < 2:
            raise ConfigError('ladder_levels and min_trend must be >= 2')
        if self.probe_nodes < 3 or self.probe_nodes % 2 == 0:
            raise ConfigError('probe_nodes must be odd and >= 3')
        if not self.taus or min(self.taus) <= 0:
            raise ConfigError('taus must be a non-empty list of positive steps')
        for name in ('envelope_step', 'e_max', 'xi_tol', 'xi_max', 'mu_max', 'slack', 'pd_tol'):
            if not getattr(self, name) > 0:
                raise ConfigError(f'{name} must be > 0')
        if self.xi_tol > self.xi_max:
            raise ConfigError('xi_tol must not exceed xi_max')

    @classmethod
    def from_config(cls, probes: Dict[str, Any], tolerances: Optional[Dict[str, Any]] = None) -> 'ProbeConfig':
        fields = cls.__dataclass_fields__
        settings: Dict[str, Any] = {}
        for key, value in (probes or {}).items():
            if key not in fields:
                continue
            default = fields[key].default
            try:
                if key == 'taus':
                    settings[key] = tuple(float(t) for t in value)
                elif isinstance(default, int):
                    settings[key] = int(value)
                else:
                    settings[key] = float(value)
            except (TypeError, ValueError) as e:
                raise ConfigError(f'probes.{key}: expected a number, got {value!r}') from e
        if tolerances and 'pd_tol' in tolerances:
            settings['pd_tol'] = float(tolerances['pd_tol'])
        return cls(**settings)


@dataclass
class ModulusEstimate:
    """Estimated modulus with the shrinking-neighbourhood trend it came from."""
    value: float
    witness_pair: Optional[Tuple[Any, Any]] = None
    trend: List[Tuple[float, float]] = field(default_factory=list)
    verdict: Verdict = Verdict.INCONCLUSIVE
    notes: List[str] = field(default_factory=list)
    boundary_hits: int = 0

    def to_dict(self) -> Dict[str, Any]:
        def enc(p):
            return None if p is None else [np.asarray(t, dtype=float).tolist() for t in p]
        return {
            'value': float(self.value),
            'verdict': self.verdict.value,
            'trend': [[float(s), float(e)] for s, e in self.trend],
            'witness_pair': enc(self.witness_pair),
            'boundary_hits': self.boundary_hits,
            'notes': list(self.notes),
        }


@dataclass
class StabilityVerdict:
    """Classification of the localized argmin and value maps."""
    tilt_stable: Verdict
    stable: Verdict
    substable: Verdict
    full_substable: Verdict
    fully_stable: Verdict
    lipschitz_v: Optional[ModulusEstimate] = None
    lipschitz_u: Optional[ModulusEstimate] = None
    lipschitz_joint: Optional[ModulusEstimate] = None
    notes: List[str] = field(default_factory=list)

    def verdicts(self) -> Dict[str, str]:
        return {
            'tilt_stable': self.tilt_stable.value,
            'stable': self.stable.value,
            'substable': self.substable.value,
            'full_substable': self.full_substable.value,
            'fully_stable': self.fully_stable.value,
        }

    def to_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = dict(self.verdicts())
        for name in ('lipschitz_v', 'lipschitz_u', 'lipschitz_joint'):
            est = getattr(self, name)
            data[name] = est.to_dict() if est is not None else None
        data['notes'] = list(self.notes)
        return data


@dataclass
class EnvelopeCheck:
    """Largest residual of an envelope identity over a grid."""
    residual: float
    candidates: Dict[str, float] = field(default_factory=dict)
    worst_node: Optional[List[float]] = None
    nodes: int = 0
    step: float = 0.0

    def to_dict(self) -> Dict[str, Any]:
        return {
            'residual': self.residual,
            'candidates': dict(self.candidates),
            'worst_node': self.worst_node,
            'nodes': self.nodes,
            'step': self.step,
        }


@dataclass
class TruncationCheck:
    """Worst node gap between truncated stationary points and localized minimizers."""
    gap: float
    holds: bool
    tol: float
    nodes: int = 0
    skipped: int = 0
    worst_node: Optional[Dict[str, List[float]]] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            'gap': self.gap,
            'holds': self.holds,
            'tol': self.tol,
            'nodes': self.nodes,
            'skipped': self.skipped,
            'worst_node': self.worst_node,
        }


@dataclass
class ProxRegularity:
    """Prox-regularity level r and monotonicity level s, with their consistency gap."""
    r: ModulusEstimate
    s: ModulusEstimate
    gap_trend: List[Tuple[float, float]] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'r': self.r.to_dict(),
            's': self.s.to_dict(),
            'gap_trend': [[float(a), float(b)] for a, b in self.gap_trend],
        }


@dataclass
class InnerNormEstimate:
    """Inner norm of the graphical derivative of M in u."""
    value: float
    per_direction: List[Tuple[List[float], float]] = field(default_factory=list)
    ladder_monotone: bool = True
    skipped: int = 0

    def to_dict(self) -> Dict[str, Any]:
        return {
            'value': self.value,
            'per_direction': [[d, q] for d, q in self.per_direction],
            'ladder_monotone': self.ladder_monotone,
            'skipped': self.skipped,
        }


@dataclass
class ValueFunctionCheck:
    """Concavity and Lipschitz behaviour of m(., u) on a v-grid."""
    concavity_violation: float
    lipschitz_v: float
    bound: float

    @property
    def passed(self) -> bool:
        return self.concavity_violation <= 1e-7 and self.lipschitz_v <= self.bound + 1e-6

    def to_dict(self) -> Dict[str, Any]:
        return {
            'concavity_violation': self.concavity_violation,
            'lipschitz_v': self.lipschitz_v,
            'bound': self.bound,
            'passed': self.passed,
        }


# ==================== Trends ====================

def trend_verdict(trend: Sequence[Tuple[float, float]], probe_cfg: ProbeConfig, floor: float = 1e-12) -> Verdict:
    """
    Read a verdict from estimates on shrinking neighbourhoods.

    pass: the last estimate does not exceed the first beyond growth_margin, or
    stays below NOISE_FLOOR.
    fail: growth beyond blowup_factor, or steady power-law growth (log-log
    slope <= -growth_tol with a non-decreasing trend).
    """
    if len(trend) < probe_cfg.min_trend:
        return Verdict.INCONCLUSIVE
    scales = np.array([s for s, _ in trend], dtype=float)
    values = np.array([e for _, e in trend], dtype=float)
    if not np.all(np.isfinite(values)):
        return Verdict.INCONCLUSIVE
    first, last = values[0], values[-1]
    base = max(first, floor)
    if last <= max(base * (1 + probe_cfg.growth_margin), NOISE_FLOOR):
        return Verdict.PASS
    if last / base > probe_cfg.blowup_factor:
        return Verdict.FAIL
    non_decreasing = bool(np.all(np.diff(values) >= -1e-9 * np.abs(values[:-1])))
    if non_decreasing and np.all(values > floor):
        slope = np.polyfit(np.log(scales), np.log(values), 1)[0]
        if slope <= -probe_cfg.growth_tol:
            return Verdict.FAIL
    return Verdict.INCONCLUSIVE


def _node_arrays(surface: ValueSurface):
    rows = [r for r in surface.rows if r.ok]
    for r in rows:
        if not r.result.single_valued:
            raise ProbeError(
                f'Argmin is not single-valued at v={r.v.tolist()}, u={r.u.tolist()}',
                node={'v': r.v.tolist(), 'u': r.u.tolist()},
            )
    if not rows:
        return rows, None, None, None, None
    V = np.array([r.v for r in rows])
    U = np.array([r.u for r in rows]).reshape(len(rows), -1)
    X = np.array([r.result.minimizer for r in rows])
    m = np.array([r.result.value for r in rows])
    return rows, V, U, X, m


def _pair_distances(V: np.ndarray, U: np.ndarray, mode: str) -> np.ndarray:
    dV = np.linalg.norm(V[:, None, :] - V[None, :, :], axis=-1)
    dU = np.linalg.norm(U[:, None, :] - U[None, :, :], axis=-1)
    if mode == 'v_only':
        return np.where(dU == 0.0, dV, np.inf)
    if mode == 'u_only':
        return np.where(dV == 0.0, dU, np.inf)
    return dV + dU


def estimate_lipschitz(surface: ValueSurface, mode: str, scales: Sequence[float],
                       probe_cfg: Optional[ProbeConfig] = None) -> ModulusEstimate:
    """
    Lipschitz modulus of M over node pairs, one estimate per distance cap.

    Perturbation distance is |dv| + |du|; v_only pairs share u, u_only pairs
    share v.

    Raises:
        ProbeError: a row with a multi-valued argmin, or no usable pair
    """
    if mode not in MODES:
        raise ConfigError(f'Unknown Lipschitz mode {mode!r}')
    probe_cfg = probe_cfg or ProbeConfig()
    rows, V, U, X, _ = _node_arrays(surface)
    if len(rows) < 2:
        raise ProbeError('Fewer than two solved nodes on the surface')
    D = _pair_distances(V, U, mode)
    dX = np.linalg.norm(X[:, None, :] - X[None, :, :], axis=-1)
    valid = np.isfinite(D) & (D > 0)
    if not valid.any():
        raise ProbeError(f'No node pairs for mode {mode}')
    ratio = np.where(valid, dX / np.where(valid, D, 1.0), -np.inf)

    trend: List[Tuple[float, float]] = []
    witness = None
    for rho in sorted(scales, reverse=True):
        capped = np.where(D <= rho * (1 + 1e-12), ratio, -np.inf)
        if not np.isfinite(capped).any():
            continue
        i, j = np.unravel_index(int(np.argmax(capped)), capped.shape)
        trend.append((float(rho), float(capped[i, j])))
        witness = ((rows[i].v, rows[i].u), (rows[j].v, rows[j].u))
    if not trend:
        raise ProbeError(f'No node pairs within the requested scales for mode {mode}')

    hits = sum(1 for r in rows if r.result.boundary_hit)
    return ModulusEstimate(
        value=trend[-1][1],
        witness_pair=witness,
        trend=trend,
        verdict=trend_verdict(trend, probe_cfg),
        boundary_hits=hits,
    )


def _mode_nodes(problem: ParametricProblem, loc: Localization, mode: str, factor: float,
                probe_cfg: ProbeConfig, cfg: SolveConfig, v_fixed=None, u_fixed=None):
    n, m = problem.n, problem.m
    v0 = np.zeros(n) if v_fixed is None else np.asarray(v_fixed, dtype=float)
    u0 = np.zeros(m) if u_fixed is None else np.asarray(u_fixed, dtype=float)
    count, extra, seed = probe_cfg.probe_nodes, probe_cfg.random_nodes, cfg.seed
    if mode == 'v_only':
        return [(v, u0) for v in perturbation_nodes(v0, loc.v_radius * factor, count, extra, seed)]
    if mode == 'u_only':
        return [(v0, u) for u in perturbation_nodes(u0, loc.u_radius * factor, count, extra, seed)]
    scale = np.concatenate([np.full(n, loc.v_radius), np.full(m, loc.u_radius)]) * factor
    unit = perturbation_nodes(np.zeros(n + m), 1.0, count, extra, seed)
    return [(v0 + (p * scale)[:n], u0 + (p * scale)[n:]) for p in unit]


def trend_surfaces(problem: ParametricProblem, loc: Localization, mode: str, cfg: SolveConfig,
                   probe_cfg: ProbeConfig, v_fixed=None, u_fixed=None) -> List[Tuple[float, ValueSurface]]:
    """One surface per neighbourhood radius * ladder_ratio^k, largest first."""
    if mode not in MODES:
        raise ConfigError(f'Unknown Lipschitz mode {mode!r}')
    if mode != 'v_only' and problem.m == 0:
        raise ProbeError(f'{problem.name} has no parameter u')
    base = {'v_only': loc.v_radius, 'u_only': loc.u_radius}.get(mode, max(loc.v_radius, loc.u_radius))
    out = []
    for k in range(probe_cfg.ladder_levels):
        factor = probe_cfg.ladder_ratio ** k
        nodes = _mode_nodes(problem, loc, mode, factor, probe_cfg, cfg, v_fixed, u_fixed)
        out.append((base * factor, solve_nodes(problem, loc, nodes, cfg)))
    return out


def lipschitz_trend(problem: ParametricProblem, loc: Localization, mode: str, cfg: SolveConfig,
                    probe_cfg: ProbeConfig, v_fixed=None, u_fixed=None,
                    surfaces: Optional[List[Tuple[float, ValueSurface]]] = None) -> ModulusEstimate:
    """
    Lipschitz modulus of M on shrinking neighbourhoods of (vbar, ubar).

    Each level solves a fresh node set; the trend holds the sup ratio per level.

    Raises:
        ProbeError: multi-valued argmin at some node
    """
    surfaces = surfaces or trend_surfaces(problem, loc, mode, cfg, probe_cfg, v_fixed, u_fixed)
    trend, witness, hits, failed = [], None, 0, 0
    for scale, surface in surfaces:
        est = estimate_lipschitz(surface, mode, [math.inf], probe_cfg)
        trend.append((scale, est.value))
        witness = est.witness_pair
        hits += est.boundary_hits
        failed += len(surface.errors)
    result = ModulusEstimate(
        value=trend[-1][1], witness_pair=witness, trend=trend,
        verdict=trend_verdict(trend, probe_cfg), boundary_hits=hits,
    )
    if failed:
        result.notes.append(f'{failed} nodes failed to solve')
    logger.info('Lipschitz trend', problem=problem.name, mode=mode,
                value=result.value, verdict=result.verdict.value)
    return result


def continuity_trend(surfaces: List[Tuple[float, ValueSurface]], probe_cfg: ProbeConfig) -> ModulusEstimate:
    """
    Modulus of continuity of (M, m) per level: max |dM| + |dm| over node pairs.

    A jump shows as a modulus that does not decay under refinement.
    """
    trend = []
    for scale, surface in surfaces:
        rows, _, _, X, m = _node_arrays(surface)
        if len(rows) < 2:
            continue
        dX = np.linalg.norm(X[:, None, :] - X[None, :, :], axis=-1)
        dm = np.abs(m[:, None] - m[None, :])
        trend.append((scale, float(np.max(dX + dm))))
    if len(trend) < probe_cfg.min_trend:
        return ModulusEstimate(math.inf, trend=trend, verdict=Verdict.INCONCLUSIVE)
    first, last = trend[0][1], trend[-1][1]
    if first > 1e-8 and last >= (1 - probe_cfg.growth_margin) * first:
        verdict = Verdict.FAIL
    else:
        verdict = Verdict.PASS
    return ModulusEstimate(last, trend=trend, verdict=verdict)


# ==================== Envelope identities ====================

def _solve_value(problem, loc, v, u, cfg) -> float:
    return solve_tilted(problem, loc, v, u, cfg).value


def _single(problem, loc, v, u, cfg):
    result = solve_tilted(problem, loc, v, u, cfg)
    if not result.single_valued:
        raise ProbeError(f'Argmin is not single-valued at v={list(v)}, u={list(u)}',
                         node={'v': list(map(float, v)), 'u': list(map(float, u))})
    return result


def _check_step(h: float, cfg: SolveConfig) -> None:
    if not h > 10 * cfg.refine_tol:
        raise ConfigError(f'Finite-difference step {h} is below the solver tolerance {cfg.refine_tol}')


def envelope_check_v(problem: ParametricProblem, loc: Localization, v_grid: Sequence[Sequence[float]],
                     u: Sequence[float], h: float, cfg: SolveConfig) -> EnvelopeCheck:
    """
    Residual of grad_v m(v, u) = -(M(v, u) - xbar) by central differences.

    The candidate forms grad_v m = -M and grad_v m = M are reported alongside.
    """
    _check_step(h, cfg)
    u = np.asarray(u, dtype=float)
    xbar = loc.xbar_array
    residuals = {'anchored': 0.0, 'minus': 0.0, 'plus': 0.0}
    worst_node = None
    for v in v_grid:
        v = np.asarray(v, dtype=float)
        M = _single(problem, loc, v, u, cfg).minimizer
        fd = np.empty(problem.n)
        for j in range(problem.n):
            e = np.zeros(problem.n)
            e[j] = h
            fd[j] = (_solve_value(problem, loc, v + e, u, cfg) - _solve_value(problem, loc, v - e, u, cfg)) / (2 * h)
        node = {
            'anchored': float(np.max(np.abs(fd + (M - xbar)))),
            'minus': float(np.max(np.abs(fd + M))),
            'plus': float(np.max(np.abs(fd - M))),
        }
        if node['anchored'] >= residuals['anchored']:
            worst_node = v.tolist()
        for key, value in node.items():
            residuals[key] = max(residuals[key], value)
    return EnvelopeCheck(residuals['anchored'], residuals, worst_node, len(v_grid), h)


def envelope_check_u(problem: ParametricProblem, loc: Localization, v: Sequence[float],
                     u_grid: Sequence[Sequence[float]], h: float, cfg: SolveConfig,
                     tol: float = 1e-9) -> EnvelopeCheck:
    """
    Residual of the u-envelope identity: the u-derivative of m is the multiplier set.

    Singleton multiplier sets are compared with central differences; polytopes
    with one-sided directional quotients along +-e_j against the support
    interval [min, max] of y_j.

    Raises:
        ProbeError: empty multiplier set at a node
    """
    _check_step(h, cfg)
    v = np.asarray(v, dtype=float)
    worst, worst_node = 0.0, None
    for u in u_grid:
        u = np.asarray(u, dtype=float)
        base = _single(problem, loc, v, u, cfg)
        Y = multiplier_set(problem, base.minimizer, u, v, stationarity_tol=max(1e-7, 100 * cfg.refine_tol))
        if Y.is_empty():
            raise ProbeError(f'Empty multiplier set at u={u.tolist()}: stationarity lost',
                             node={'v': v.tolist(), 'u': u.tolist()})
        vertices = Y.vertices()
        residual = 0.0
        for j in range(problem.m):
            e = np.zeros(problem.m)
            e[j] = h
            if len(vertices) == 1:
                fd = (_solve_value(problem, loc, v, u + e, cfg) - _solve_value(problem, loc, v, u - e, cfg)) / (2 * h)
                residual = max(residual, abs(fd - vertices[0][j]))
                continue
            lo, hi = Y.support(e / h)
            forward = (_solve_value(problem, loc, v, u + e, cfg) - base.value) / h
            backward = (_solve_value(problem, loc, v, u - e, cfg) - base.value) / h
            residual = max(residual, lo - forward - tol, forward - hi - tol, 0.0)
            residual = max(residual, -hi - backward - tol, backward + lo - tol, 0.0)
        if residual >= worst:
            worst, worst_node = residual, u.tolist()
    return EnvelopeCheck(worst, {'multiplier': worst}, worst_node, len(u_grid), h)


def _set_gap(a: Sequence[np.ndarray], b: Sequence[np.ndarray]) -> float:
    """Hausdorff distance between two finite point sets; inf when exactly one is empty."""
    if not a and not b:
        return 0.0
    if not a or not b:
        return math.inf
    d = np.linalg.norm(np.asarray(a)[:, None, :] - np.asarray(b)[None, :, :], axis=-1)
    return float(max(d.min(axis=1).max(), d.min(axis=0).max()))


def truncation_identity_check(problem: ParametricProblem, loc: Localization,
                              nodes: Sequence[Tuple[Sequence[float], Sequence[float]]],
                              cfg: SolveConfig) -> TruncationCheck:
    """
    Compare the truncated stationary-point map with the localized argmin node by node.

    Under variational sufficiency the stationary points x with |x - xbar| < delta
    and phi(x, u) < alpha are exactly the localized minimizers. Nodes whose
    minimizer sits on the localization boundary are skipped.
    """
    worst, worst_node, checked, skipped = 0.0, None, 0, 0
    for v, u in nodes:
        v = np.asarray(v, dtype=float).reshape(-1)
        u = np.asarray(u, dtype=float).reshape(-1)
        try:
            result = solve_tilted(problem, loc, v, u, cfg)
        except StabilityProbeError as e:
            logger.debug('Truncation node skipped', v=v.tolist(), u=u.tolist(), error=str(e))
            skipped += 1
            continue
        if result.boundary_hit:
            skipped += 1
            continue
        minimizers = [m for m in result.minimizers if eval_phi(problem, m, u) < loc.alpha]
        stationary = truncated_stationary_map(problem, loc, v, u, cfg)
        gap = _set_gap(minimizers, stationary)
        checked += 1
        if worst_node is None or gap > worst:
            worst, worst_node = gap, {'v': v.tolist(), 'u': u.tolist()}
    if not checked:
        raise ProbeError('No interior node for the truncation identity')
    check = TruncationCheck(worst, worst <= cfg.cluster_tol, cfg.cluster_tol, checked, skipped, worst_node)
    logger.debug('Truncation identity', problem=problem.name, gap=worst, nodes=checked)
    return check


def value_function_checks(surface: ValueSurface, delta: float) -> ValueFunctionCheck:
    """Midpoint concavity of m(., u) and its Lipschitz ratio in v over pairs sharing u."""
    rows = [r for r in surface.rows if r.ok]
    by_u: Dict[Tuple[float, ...], List] = {}
    for r in rows:
        by_u.setdefault(tuple(np.round(r.u, 12)), []).append(r)
    violation, lip = 0.0, 0.0
    for group in by_u.values():
        index = {tuple(np.round(r.v, 12)): r.result.value for r in group}
        for a, b in itertools.combinations(group, 2):
            dv = float(np.linalg.norm(a.v - b.v))
            if dv > 0:
                lip = max(lip, abs(a.result.value - b.result.value) / dv)
            mid = index.get(tuple(np.round(0.5 * (a.v + b.v), 12)))
            if mid is not None:
                violation = max(violation, 0.5 * (a.result.value + b.result.value) - mid)
    return ValueFunctionCheck(violation, lip, delta)


# ==================== Hypo-convexity ====================

def hypo_u_grid(m: int, radius: float, count: int) -> List[np.ndarray]:
    """u-grid along every axis and the diagonal, so midpoint triples exist in any dimension."""
    if m == 1:
        return [np.array([t]) for t in axis_grid(radius, count)]
    lines = [np.eye(m)[i] for i in range(m)] + [np.ones(m) / math.sqrt(m)]
    grid: List[np.ndarray] = []
    for direction in lines:
        for t in axis_grid(radius, count):
            p = t * direction
            if not any(np.allclose(p, q, atol=1e-14) for q in grid):
                grid.append(p)
    return grid


def hypoconvexity_modulus(surface: ValueSurface, v_grid: Sequence[Sequence[float]],
                          u_grid: Sequence[Sequence[float]], probe_cfg: Optional[ProbeConfig] = None,
                          slack: float = 1e-8) -> ModulusEstimate:
    """
    Smallest e >= 0 making m(v, .) + (e/2)|.|^2 midpoint convex on the u-grid for every v.

    Bisection on [0, e_max] to 1e-3; +inf when e_max does not suffice.
    """
    probe_cfg = probe_cfg or ProbeConfig()
    triples = []
    for v in v_grid:
        v = np.asarray(v, dtype=float)
        values = {}
        for u in u_grid:
            row = surface.lookup(v, u)
            if row is not None and row.ok:
                values[tuple(np.round(np.asarray(u, dtype=float), 12))] = (np.asarray(u, dtype=float), row.result.value)
        for (ka, (a, ma)), (kb, (b, mb)) in itertools.combinations(values.items(), 2):
            mid = values.get(tuple(np.round(0.5 * (a + b), 12)))
            if mid is not None:
                triples.append((a, ma, b, mb, mid[0], mid[1]))
    if not triples:
        raise ProbeError('The u-grid has no midpoint triples')

    def gap(e):
        return min(
            0.5 * (ma + 0.5 * e * a @ a) + 0.5 * (mb + 0.5 * e * b @ b) - (mc + 0.5 * e * c @ c)
            for a, ma, b, mb, c, mc in triples
        )

    def passes(e):
        return gap(e) >= -slack

    worst = min(triples, key=lambda t: 0.5 * (t[1] + t[3]) - t[5])
    witness = (worst[0], worst[2])
    radius = max(float(np.max(np.abs(np.asarray(u, dtype=float)), initial=0.0)) for u in u_grid)
    if passes(0.0):
        e_hat = 0.0
    elif not passes(probe_cfg.e_max):
        return ModulusEstimate(math.inf, witness, [(radius, math.inf)], Verdict.FAIL,
                               ['hypo-convexity not detected up to e_max'])
    else:
        lo, hi = 0.0, probe_cfg.e_max
        while hi - lo > 1e-3:
            mid = 0.5 * (lo + hi)
            if passes(mid):
                hi = mid
            else:
                lo = mid
        e_hat = hi
    return ModulusEstimate(e_hat, witness, [(radius, e_hat)], Verdict.PASS)


# ==================== Prox-regularity ====================

def _prox_levels(sample: GraphSample, probes: Optional[Sequence[Tuple[np.ndarray, float]]]) -> Tuple[float, float]:
    X = np.array([p[0] for p in sample.points], dtype=float)
    V = np.array([p[1] for p in sample.points], dtype=float)
    F = np.array([p[2] for p in sample.points], dtype=float)
    if probes is None:
        P, FP = X, F
    else:
        P = np.array([p[0] for p in probes], dtype=float)
        FP = np.array([p[1] for p in probes], dtype=float)

    # r: f(x') >= f(x) + v.(x'-x) - (r/2)|x'-x|^2 for all sample (x, v) and probes x'
    D = P[None, :, :] - X[:, None, :]
    sq = np.sum(D * D, axis=-1)
    lin = FP[None, :] - F[:, None] - np.einsum('kj,kpj->kp', V, D)
    mask = sq > 1e-24
    r_hat = float(np.max(-2.0 * lin[mask] / sq[mask])) if mask.any() else math.nan

    # s: (v'-v).(x'-x) >= s|x'-x|^2 over sample pairs
    DX = X[None, :, :] - X[:, None, :]
    DV = V[None, :, :] - V[:, None, :]
    sqx = np.sum(DX * DX, axis=-1)
    maskx = sqx > 1e-24
    s_hat = float(np.min(np.sum(DV * DX, axis=-1)[maskx] / sqx[maskx])) if maskx.any() else math.nan
    return r_hat, s_hat


def prox_regularity_level(sample: GraphSample, x_probe_grid: Optional[Sequence[Tuple[np.ndarray, float]]] = None,
                          ladder: Optional[Sequence[float]] = None) -> ProxRegularity:
    """
    Prox-regularity level r and monotonicity level s of a graph sample.

    r is the smallest level for which the quadratic subgradient inequality holds
    for all sampled (x, v) and probe points x'. It is the maximum of
    -2 (f(x') - f(x) - v.(x' - x)) / |x' - x|^2 over the pairs, so the value is
    exact for the sample and carries no bisection tolerance. s is the largest s
    with (v'-v).(x'-x) >= s|x'-x|^2, again an exact minimum over sample pairs.
    With a ladder of radii the sample is restricted to each neighbourhood in turn.

    Raises:
        ProbeError: fewer than two sample points
    """
    if len(sample) < 2:
        raise ProbeError('Graph sample needs at least 2 points')
    radii = sorted(ladder, reverse=True) if ladder else [None]
    r_trend, s_trend, gap = [], [], []
    for rho in radii:
        sub = sample.within(rho) if rho is not None else sample
        if len(sub) < 2:
            continue
        r_hat, s_hat = _prox_levels(sub, x_probe_grid)
        if math.isnan(r_hat) or math.isnan(s_hat):
            continue
        scale = float(rho) if rho is not None else math.inf
        r_trend.append((scale, r_hat))
        s_trend.append((scale, s_hat))
        gap.append((scale, abs(r_hat + s_hat)))
    if not r_trend:
        raise ProbeError('Graph sample has no pairs with distinct x')
    r_val, s_val = r_trend[-1][1], s_trend[-1][1]
    r = ModulusEstimate(r_val, trend=r_trend, verdict=Verdict.PASS)
    s = ModulusEstimate(s_val, trend=s_trend, verdict=Verdict.PASS if s_val > 0 else Verdict.FAIL)
    return ProxRegularity(r, s, gap)


def uniform_prox_regularity(problem: ParametricProblem, loc: Localization, u_grid: Sequence[Sequence[float]],
                            radius: float, cfg: SolveConfig) -> ModulusEstimate:
    """Prox-regularity level of phi(., u) near xbar, uniformly (max) over a u-grid."""
    worst, witness, trend = -math.inf, None, []
    for u in u_grid:
        u = np.asarray(u, dtype=float)
        sampler = graph_sampler_for(problem, loc, cfg, u)
        sample = sampler.sample(radius)
        # restrict in x only; the graph at u != 0 sits away from vbar
        sample.center = None
        sample.points = [p for p in sample.points if np.linalg.norm(p[0] - loc.xbar_array) <= radius]
        if len(sample) < 2:
            continue
        r_hat, _ = _prox_levels(sample, None)
        trend.append((float(np.linalg.norm(u)), r_hat))
        if r_hat > worst:
            worst, witness = r_hat, (u, u)
    if not trend:
        raise ProbeError('No u-node produced a usable graph sample')
    return ModulusEstimate(worst, witness, sorted(trend, reverse=True), Verdict.PASS)


# ==================== Graphical derivative ====================

def sphere_directions(m: int, count: int, seed: int = 0) -> List[np.ndarray]:
    """Unit directions in R^m: +-1 for m = 1, an angle grid for m = 2, axes plus random otherwise."""
    if m == 1:
        return [np.array([1.0]), np.array([-1.0])]
    if m == 2:
        count = max(count, 4)
        return [np.array([math.cos(t), math.sin(t)]) for t in 2 * math.pi * np.arange(count) / count]
    dirs = [s * np.eye(m)[i] for i in range(m) for s in (1.0, -1.0)]
    rng = np.random.default_rng(seed)
    while len(dirs) < count:
        d = rng.normal(size=m)
        dirs.append(d / np.linalg.norm(d))
    return dirs


def graphical_derivative_inner_norm(problem: ParametricProblem, loc: Localization, v: Sequence[float],
                                    u: Sequence[float], directions: int, taus: Sequence[float],
                                    cfg: SolveConfig) -> InnerNormEstimate:
    """
    max over unit directions w of |M(v, u + tau w) - M(v, u)| / tau at the smallest tau.

    Directions whose solves fail are skipped and counted.
    """
    v = np.asarray(v, dtype=float)
    u = np.asarray(u, dtype=float)
    base = _single(problem, loc, v, u, cfg).minimizer
    taus = sorted(taus, reverse=True)
    best, per_direction, skipped, monotone = 0.0, [], 0, True
    for w in sphere_directions(problem.m, directions, cfg.seed):
        try:
            quotients = [
                float(np.linalg.norm(solve_tilted(problem, loc, v, u + t * w, cfg).minimizer - base)) / t
                for t in taus
            ]
        except StabilityProbeError as e:
            skipped += 1
            logger.warning('Inner-norm direction skipped', direction=w.tolist(), error=str(e))
            continue
        diffs = np.diff(quotients)
        if not (np.all(diffs >= -1e-9 * max(quotients)) or np.all(diffs <= 1e-9 * max(quotients))):
            monotone = False
        per_direction.append((w.tolist(), quotients[-1]))
        best = max(best, quotients[-1])
    if not per_direction:
        raise ProbeError('Every inner-norm direction failed', node={'v': v.tolist(), 'u': u.tolist()})
    return InnerNormEstimate(best, per_direction, monotone, skipped)


def inner_norm_trend(problem: ParametricProblem, loc: Localization, u_points: Sequence[Sequence[float]],
                     cfg: SolveConfig, probe_cfg: ProbeConfig, v: Optional[Sequence[float]] = None) -> ModulusEstimate:
    """Inner-norm estimates as u -> ubar; a bounded trend is the full-stability criterion."""
    v = np.zeros(problem.n) if v is None else np.asarray(v, dtype=float)
    points = sorted((np.asarray(u, dtype=float) for u in u_points), key=lambda p: -np.linalg.norm(p))
    trend = []
    for u in points:
        est = graphical_derivative_inner_norm(problem, loc, v, u, probe_cfg.directions, probe_cfg.taus, cfg)
        trend.append((float(np.linalg.norm(u)), est.value))
    return ModulusEstimate(trend[-1][1], None, trend, trend_verdict(trend, probe_cfg))


# ==================== Classification ====================

def _guarded(fn, *args, **kwargs) -> ModulusEstimate:
    """Run a trend probe; a multi-valued argmin counts as failure."""
    try:
        return fn(*args, **kwargs)
    except ProbeError as e:
        return ModulusEstimate(math.inf, verdict=Verdict.FAIL, notes=[str(e)])


def _tilt_verdict(est: ModulusEstimate) -> Verdict:
    if est.boundary_hits:
        return Verdict.FAIL
    return est.verdict


def classify(problem: ParametricProblem, loc: Localization, cfg: SolveConfig,
             probe_cfg: ProbeConfig) -> StabilityVerdict:
    """
    Empirical stability classification at (xbar, vbar, ubar).

    tilt: bounded v-only modulus with a single-valued interior argmin at u = 0.
    stable: bounded u-only modulus at v = 0. substable: no jump of (M, m) in u
    under refinement. full_substable: tilt uniformly over u-nodes plus
    substability. fully_stable: bounded joint modulus.
    """
    notes: List[str] = []
    lip_v = _guarded(lipschitz_trend, problem, loc, 'v_only', cfg, probe_cfg)
    tilt = _tilt_verdict(lip_v)
    if lip_v.boundary_hits:
        notes.append(f'tilt: {lip_v.boundary_hits} minimizers on the localization boundary')
    notes += [f'tilt: {n}' for n in lip_v.notes]

    if problem.m == 0:
        try:
            base = solve_tilted(problem, loc, np.zeros(problem.n), np.zeros(0), cfg)
            single = Verdict.PASS if base.single_valued and not base.boundary_hit else Verdict.FAIL
        except StabilityProbeError as e:
            notes.append(f'base solve failed: {e}')
            single = Verdict.FAIL
        notes.append('no parameter u: stability reduces to tilt stability')
        verdict = StabilityVerdict(tilt, single, single, tilt, tilt, lip_v, None, None, notes)
        logger.info('Classification', problem=problem.name, **verdict.verdicts())
        return verdict

    try:
        u_surfaces = trend_surfaces(problem, loc, 'u_only', cfg, probe_cfg)
        lip_u = lipschitz_trend(problem, loc, 'u_only', cfg, probe_cfg, surfaces=u_surfaces)
        substable = continuity_trend(u_surfaces, probe_cfg).verdict
    except ProbeError as e:
        lip_u = ModulusEstimate(math.inf, verdict=Verdict.FAIL, notes=[str(e)])
        substable = Verdict.FAIL
    stable = lip_u.verdict

    u_nodes = [np.zeros(problem.m)]
    for i in range(min(problem.m, 2)):
        for sign in (1.0, -1.0):
            u = np.zeros(problem.m)
            u[i] = sign * loc.u_radius
            u_nodes.append(u)
    uniform = [tilt]
    for u in u_nodes[1:]:
        est = _guarded(lipschitz_trend, problem, loc, 'v_only', cfg, probe_cfg, u_fixed=u)
        uniform.append(_tilt_verdict(est))
    if Verdict.FAIL in uniform or substable == Verdict.FAIL:
        full_substable = Verdict.FAIL
    elif all(v == Verdict.PASS for v in uniform) and substable == Verdict.PASS:
        full_substable = Verdict.PASS
    else:
        full_substable = Verdict.INCONCLUSIVE

    lip_joint = _guarded(lipschitz_trend, problem, loc, 'joint', cfg, probe_cfg)
    fully = lip_joint.verdict
    if lip_joint.boundary_hits:
        fully = Verdict.FAIL
    if fully == Verdict.PASS and (tilt != Verdict.PASS or full_substable != Verdict.PASS):
        fully = Verdict.INCONCLUSIVE
        notes.append('joint modulus bounded but tilt or full substability not confirmed')

    verdict = StabilityVerdict(tilt, stable, substable, full_substable, fully, lip_v, lip_u, lip_joint, notes)
    logger.info('Classification', problem=problem.name, **verdict.verdicts())
    return verdict
