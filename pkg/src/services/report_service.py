"""
Run configuration, probe orchestration and the machine-readable report.
"""

import csv
import json
import math
import time
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from tabulate import tabulate

from ..utils.errors import (
    ConfigError,
    ProbeError,
    ProblemInputError,
    StabilityProbeError,
    UnsupportedOperationError,
)
from ..utils.logger import get_logger
from .graph_sampler import GraphSample, graph_sampler_for
from .localized_solver import (
    Localization,
    SolveConfig,
    ValueSurface,
    axis_grid,
    perturbation_nodes,
    value_surface,
)
from .problem_model import ParametricProblem
from .problem_registry import load_problem_file, problem_fingerprint, registry_build
from .second_order import (
    default_neighborhood_ladder,
    dfnt_estimate,
    strong_sosc_over_multipliers,
    tilt_crosscheck,
)
from .stability_probes import (
    ModulusEstimate,
    ProbeConfig,
    Verdict,
    classify,
    envelope_check_u,
    envelope_check_v,
    hypo_u_grid,
    hypoconvexity_modulus,
    inner_norm_trend,
    lipschitz_trend,
    prox_regularity_level,
    uniform_prox_regularity,
    truncation_identity_check,
    value_function_checks,
)
from .subdifferential_service import check_basic_cq


logger = get_logger('report_service')

PROBE_IDS = ('classify', 'cq', 'dfnt', 'envelope', 'hypo', 'inner-norm', 'lipschitz', 'prox', 'sosc')

ANCHORS = {
    'classify': 'tilt stability, stability, substability, full substability and full stability of the localized argmin',
    'cq': 'basic constraint qualification (no nonzero horizon multiplier)',
    'dfnt': 'definiteness modulus of the strict second-order subdifferential and the 1/s tilt bound',
    'envelope': 'envelope identities: grad_v m = -(M - xbar) and d_u m = Y',
    'hypo': 'hypo-convexity of the optimal value in u; concavity and Lipschitz bound of m in v',
    'inner-norm': 'bounded inner norm of the graphical derivative of M in u near the anchor',
    'lipschitz': 'Lipschitz moduli of the localized argmin in v, u and (v, u)',
    'prox': 'prox-regularity level r and monotonicity level s of the subgradient graph',
    'sosc': 'strong second-order sufficient condition for all or some KKT multipliers',
}

# probe id -> literature reference the verdict is checked against
PAPER_REFS = {
    'classify': 'Section 1 definitions, Eq. (1.2)',
    'cq': 'Eq. (1.5)',
    'dfnt': 'Eq. (2.12), Theorem 2.4',
    'envelope': 'Eq. (1.9), Eq. (1.8), Theorem 2.3(a)',
    'hypo': 'Theorem 1.1',
    'inner-norm': 'Eq. (1.12), Theorem 1.2',
    'lipschitz': 'Section 1 definitions',
    'prox': 'Eqs. (2.2), (2.4), (2.18)',
    'sosc': 'Eq. (1.7), Example 3.3',
}

VERDICT_LABELS = (
    ('tilt_stable', 'tilt stable'),
    ('stable', 'stable'),
    ('substable', 'substable'),
    ('full_substable', 'full substable'),
    ('fully_stable', 'fully stable'),
)


@dataclass
class RunConfig:
    """One probe run: problem source, localization, solver settings, probes and outputs."""
    problem: Optional[str] = None
    problem_file: Optional[str] = None
    delta: float = 0.5
    alpha: Optional[float] = None
    v_radius: float = 0.01
    u_radius: float = 0.01
    grid: int = 41
    seed: int = 0
    refine_tol: float = 1e-10
    cluster_tol: float = 1e-6
    active_tol: float = 1e-9
    pd_tol: float = 1e-8
    workers: int = 1
    probes: Tuple[str, ...] = ('classify',)
    out: Optional[str] = None
    csv_dir: Optional[str] = None
    solver_settings: Dict[str, Any] = field(default_factory=dict)
    probe_settings: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if isinstance(self.probes, str):
            self.probes = tuple(p.strip() for p in self.probes.split(',') if p.strip())
        self.probes = tuple(dict.fromkeys(self.probes))
        self.validate()

    def validate(self) -> None:
        if (self.problem is None) == (self.problem_file is None):
            raise ConfigError('Give exactly one of --problem and --problem-file')
        for name in ('delta', 'v_radius', 'u_radius', 'refine_tol', 'cluster_tol', 'active_tol', 'pd_tol'):
            value = getattr(self, name)
            if not (isinstance(value, (int, float)) and value > 0):
                raise ConfigError(f'{name} must be > 0, got {value}')
        if self.grid < 11 or self.grid % 2 == 0:
            raise ConfigError(f'grid must be odd and >= 11, got {self.grid}')
        if self.workers < 1:
            raise ConfigError('workers must be >= 1')
        unknown = [p for p in self.probes if p not in PROBE_IDS]
        if unknown:
            raise ConfigError(f'Unknown probes: {", ".join(unknown)} (choose from {", ".join(PROBE_IDS)})')
        if not self.probes:
            raise ConfigError('No probes selected')
        self.solve_config()
        self.probe_config()

    @classmethod
    def from_sources(cls, config: Dict[str, Any], **overrides) -> 'RunConfig':
        """YAML defaults first, then every override that is not None."""
        loc = config.get('localization', {}) or {}
        solver = config.get('solver', {}) or {}
        tol = config.get('tolerances', {}) or {}
        settings: Dict[str, Any] = {
            'delta': loc.get('delta', 0.5),
            'alpha': loc.get('alpha'),
            'v_radius': loc.get('v_radius', 0.01),
            'u_radius': loc.get('u_radius', 0.01),
            'grid': solver.get('grid', 41),
            'seed': solver.get('seed', 0),
            'refine_tol': solver.get('refine_tol', 1e-10),
            'cluster_tol': solver.get('cluster_tol', 1e-6),
            'workers': solver.get('workers', 1),
            'active_tol': tol.get('active_tol', 1e-9),
            'pd_tol': tol.get('pd_tol', 1e-8),
            'solver_settings': dict(solver),
            'probe_settings': dict(config.get('probes', {}) or {}),
        }
        settings.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**settings)

    def solve_config(self) -> SolveConfig:
        solver = dict(self.solver_settings)
        solver.update(grid=self.grid, seed=self.seed, refine_tol=self.refine_tol,
                      cluster_tol=self.cluster_tol, workers=self.workers)
        return SolveConfig.from_config(solver, {'active_tol': self.active_tol})

    def probe_config(self) -> ProbeConfig:
        return ProbeConfig.from_config(self.probe_settings, {'pd_tol': self.pd_tol})

    def build_problem(self) -> ParametricProblem:
        if self.problem_file is not None:
            return load_problem_file(self.problem_file)
        return registry_build(self.problem)

    def localization(self, problem: ParametricProblem) -> Localization:
        return Localization.for_problem(problem, {
            'delta': self.delta, 'alpha': self.alpha,
            'v_radius': self.v_radius, 'u_radius': self.u_radius,
        })

    def to_dict(self) -> Dict[str, Any]:
        """Config echo; output paths and the worker count do not change results and are left out."""
        skip = {'out', 'csv_dir', 'workers', 'solver_settings', 'probe_settings'}
        data = {f.name: getattr(self, f.name) for f in fields(self) if f.name not in skip}
        data['probes'] = [p for p in PROBE_IDS if p in self.probes]
        data['probe_settings'] = {f.name: getattr(self.probe_config(), f.name)
                                  for f in fields(ProbeConfig)}
        data['probe_settings']['taus'] = list(data['probe_settings']['taus'])
        return data


def to_jsonable(value: Any) -> Any:
    """Plain JSON types; non-finite floats become 'inf', '-inf' or 'nan'."""
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [to_jsonable(v) for v in value.tolist()]
    if isinstance(value, Verdict):
        return value.value
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isnan(value):
            return 'nan'
        if math.isinf(value):
            return 'inf' if value > 0 else '-inf'
        return value
    return value


@dataclass
class Report:
    """Per-probe results with config echo, problem fingerprint, warnings and timing."""
    config: Dict[str, Any]
    problem: Dict[str, Any]
    probes: Dict[str, Dict[str, Any]] = field(default_factory=dict)
    warnings: List[str] = field(default_factory=list)
    timing: Dict[str, float] = field(default_factory=dict)
    tables: Dict[str, Tuple[List[str], List[List[Any]]]] = field(default_factory=dict)
    surfaces: Dict[str, ValueSurface] = field(default_factory=dict)

    @property
    def failed(self) -> List[str]:
        return [pid for pid, entry in self.probes.items() if entry.get('status') == 'error']

    def as_dict(self, include_timing: bool = True) -> Dict[str, Any]:
        data = {
            'config': self.config,
            'problem': self.problem,
            'probes': self.probes,
            'warnings': self.warnings,
        }
        if include_timing:
            data['timing'] = self.timing
        return to_jsonable(data)

    def to_json(self, include_timing: bool = True) -> str:
        return json.dumps(self.as_dict(include_timing), sort_keys=True, indent=2)

    def write(self, path: Union[str, Path]) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_json() + '\n')
        logger.info('Report written', path=str(path), probes=len(self.probes))

    def write_csvs(self, directory: Union[str, Path]) -> List[Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        written = []
        for name, (header, rows) in sorted(self.tables.items()):
            path = directory / f'{name}.csv'
            with open(path, 'w', newline='') as f:
                writer = csv.writer(f)
                writer.writerow(header)
                for row in rows:
                    writer.writerow([repr(float(c)) if isinstance(c, (float, np.floating)) else c for c in row])
            written.append(path)
        for name, surface in sorted(self.surfaces.items()):
            path = directory / f'{name}.csv'
            surface.to_csv(path)
            written.append(path)
        return written


def load_report(path: Union[str, Path]) -> Dict[str, Any]:
    """Read a report JSON written by Report.write."""
    try:
        with open(path, 'r') as f:
            data = json.load(f)
    except OSError as e:
        raise ProblemInputError(f'Cannot read report {path}: {e}') from e
    except json.JSONDecodeError as e:
        raise ProblemInputError(f'Report {path} is not valid JSON: {e}') from e
    if not isinstance(data, dict) or not isinstance(data.get('probes'), dict):
        raise ProblemInputError(f'{path} is not a probe report')
    return data


# ==================== Probe runners ====================

@dataclass
class _Context:
    problem: ParametricProblem
    loc: Localization
    cfg: SolveConfig
    probe_cfg: ProbeConfig
    run: RunConfig
    report: Report
    tilt: Optional[ModulusEstimate] = None

    def trend_table(self, name: str, estimate: ModulusEstimate) -> None:
        self.report.tables[f'{name}_trend'] = (['scale', 'estimate'], [list(t) for t in estimate.trend])

    def warn(self, message: str) -> None:
        self.report.warnings.append(message)
        logger.warning(message, problem=self.problem.name)


def _v_nodes(ctx: _Context) -> List[np.ndarray]:
    return perturbation_nodes(np.zeros(ctx.problem.n), ctx.loc.v_radius, ctx.probe_cfg.probe_nodes,
                              ctx.probe_cfg.random_nodes, ctx.cfg.seed)


def _u_nodes(ctx: _Context) -> List[np.ndarray]:
    return perturbation_nodes(np.zeros(ctx.problem.m), ctx.loc.u_radius, ctx.probe_cfg.probe_nodes,
                              ctx.probe_cfg.random_nodes, ctx.cfg.seed)


def _run_lipschitz(ctx: _Context) -> Dict[str, Any]:
    modes = ['v_only'] + (['u_only', 'joint'] if ctx.problem.m else [])
    out = {}
    for mode in modes:
        try:
            est = lipschitz_trend(ctx.problem, ctx.loc, mode, ctx.cfg, ctx.probe_cfg)
        except ProbeError as e:
            ctx.warn(f'lipschitz {mode}: {e}')
            out[mode] = {'verdict': Verdict.FAIL.value, 'reason': str(e)}
            continue
        if mode == 'v_only':
            ctx.tilt = est
        ctx.trend_table(f'lipschitz_{mode}', est)
        out[mode] = est.to_dict()
    return out


def _nodewise(check: Callable, nodes: Sequence[np.ndarray]):
    """Run a one-node envelope check per node; nodes without a unique minimizer are skipped."""
    results, skipped = [], 0
    for node in nodes:
        try:
            results.append(check(node))
        except ProbeError:
            skipped += 1
    return results, skipped


def _run_envelope(ctx: _Context) -> Dict[str, Any]:
    p, loc, cfg, h = ctx.problem, ctx.loc, ctx.cfg, ctx.probe_cfg.envelope_step
    out: Dict[str, Any] = {}
    results, skipped = _nodewise(
        lambda v: envelope_check_v(p, loc, [v], np.zeros(p.m), h, cfg), _v_nodes(ctx))
    out['v'] = _merge_envelope(results, skipped)
    if p.m:
        results, skipped = _nodewise(
            lambda u: envelope_check_u(p, loc, np.zeros(p.n), [u], h, cfg), _u_nodes(ctx))
        out['u'] = _merge_envelope(results, skipped)
    for key, entry in out.items():
        if entry['skipped']:
            ctx.warn(f'envelope {key}: {entry["skipped"]} nodes without a unique minimizer skipped')
    nodes = [(v, np.zeros(p.m)) for v in _v_nodes(ctx)]
    if p.m:
        nodes += [(np.zeros(p.n), u) for u in _u_nodes(ctx)]
    try:
        out['truncation'] = truncation_identity_check(p, loc, nodes, cfg).to_dict()
    except ProbeError as e:
        ctx.warn(f'envelope truncation: {e}')
    else:
        if not out['truncation']['holds']:
            ctx.warn(f'envelope truncation: stationary points differ from minimizers by {out["truncation"]["gap"]:.3g}')
    return out


def _merge_envelope(results, skipped) -> Dict[str, Any]:
    if not results:
        return {'residual': math.nan, 'candidates': {}, 'nodes': 0, 'skipped': skipped}
    worst = max(results, key=lambda r: r.residual)
    candidates: Dict[str, float] = {}
    for r in results:
        for key, value in r.candidates.items():
            candidates[key] = max(candidates.get(key, 0.0), value)
    return {
        'residual': worst.residual,
        'candidates': candidates,
        'worst_node': worst.worst_node,
        'nodes': len(results),
        'skipped': skipped,
        'step': worst.step,
    }


def _run_hypo(ctx: _Context) -> Dict[str, Any]:
    p = ctx.problem
    e1 = np.eye(p.n)[0]
    v_grid = [t * e1 for t in axis_grid(ctx.loc.v_radius, ctx.probe_cfg.probe_nodes)]
    out: Dict[str, Any] = {}
    u_grid = hypo_u_grid(p.m, ctx.loc.u_radius, ctx.probe_cfg.probe_nodes) if p.m else [np.zeros(0)]
    surface = value_surface(p, ctx.loc, v_grid, u_grid, ctx.cfg)
    if p.m:
        out['modulus'] = hypoconvexity_modulus(surface, v_grid, u_grid, ctx.probe_cfg).to_dict()
    out['value_function'] = value_function_checks(surface, ctx.loc.delta).to_dict()
    ctx.report.surfaces['surface'] = surface
    return out


def _run_prox(ctx: _Context) -> Dict[str, Any]:
    sampler = graph_sampler_for(ctx.problem, ctx.loc, ctx.cfg)
    ladder = default_neighborhood_ladder(ctx.loc, ctx.probe_cfg)
    points = []
    for rho in ladder:
        points.extend(sampler.sample(rho).points)
    sample = GraphSample(points, ctx.loc.alpha, (ctx.loc.xbar_array, np.zeros(ctx.problem.n)))
    levels = prox_regularity_level(sample, None, ladder)
    out: Dict[str, Any] = levels.to_dict()
    ctx.report.tables['prox_gap_trend'] = (['scale', 'estimate'], [list(t) for t in levels.gap_trend])
    if ctx.problem.m:
        u_grid = [np.zeros(ctx.problem.m)] + [s * ctx.loc.u_radius * e for e in np.eye(ctx.problem.m) for s in (1.0, -1.0)]
        out['uniform_r'] = uniform_prox_regularity(ctx.problem, ctx.loc, u_grid, ctx.loc.v_radius, ctx.cfg).to_dict()
    return out


def _run_inner_norm(ctx: _Context) -> Dict[str, Any]:
    if not ctx.problem.m:
        raise ProbeError(f'{ctx.problem.name} has no parameter u')
    e1 = np.eye(ctx.problem.m)[0]
    u_points = [ctx.loc.u_radius * ctx.probe_cfg.ladder_ratio ** k * e1 for k in range(ctx.probe_cfg.ladder_levels)]
    est = inner_norm_trend(ctx.problem, ctx.loc, u_points, ctx.cfg, ctx.probe_cfg)
    ctx.trend_table('inner_norm', est)
    return est.to_dict()


def _run_sosc(ctx: _Context) -> Dict[str, Any]:
    if not ctx.problem.is_nlp:
        raise ProbeError(f'{ctx.problem.name} is not an NLP composite')
    p = ctx.problem
    out = {}
    for mode in ('all_active', 'strict_multipliers'):
        report = strong_sosc_over_multipliers(
            p, p.xbar_array, np.zeros(p.n), np.zeros(p.m), ctx.probe_cfg.theta_points, mode,
            ctx.probe_cfg.pd_tol, ctx.cfg.seed, ctx.cfg.workers, ctx.cfg.active_tol,
        )
        out[mode] = report.to_dict()
        if mode == 'all_active':
            out['all_multipliers_pass'] = report.all_multipliers_pass
            out['some_multipliers_pass'] = report.some_multipliers_pass
            ctx.report.tables['sosc_theta'] = (
                ['theta', 'eigenvalue'], [[c.theta, c.eigenvalue] for c in report.grid if c.theta is not None])
    return out


def _run_dfnt(ctx: _Context) -> Dict[str, Any]:
    sample, est = dfnt_estimate(ctx.problem, ctx.loc, ctx.cfg, ctx.probe_cfg)
    ctx.trend_table('dfnt', est)
    check = tilt_crosscheck(ctx.problem, ctx.loc, ctx.cfg, ctx.probe_cfg, tilt=ctx.tilt, dfnt=est)
    if check.violation:
        ctx.warn('measured tilt modulus exceeds 1/s')
    if check.inconsistent:
        ctx.warn('tilt passes although the definiteness modulus is not positive')
    return {'estimate': est.to_dict(), 'quadruples': len(sample), 'crosscheck': check.to_dict()}


def _run_classify(ctx: _Context) -> Dict[str, Any]:
    verdict = classify(ctx.problem, ctx.loc, ctx.cfg, ctx.probe_cfg)
    if ctx.tilt is None:
        ctx.tilt = verdict.lipschitz_v
    return verdict.to_dict()


def _run_cq(ctx: _Context) -> Dict[str, Any]:
    p = ctx.problem
    return check_basic_cq(p, p.xbar_array, np.zeros(p.m), ctx.cfg.active_tol).to_dict()


RUNNERS: Dict[str, Callable[[_Context], Dict[str, Any]]] = {
    'classify': _run_classify,
    'cq': _run_cq,
    'dfnt': _run_dfnt,
    'envelope': _run_envelope,
    'hypo': _run_hypo,
    'inner-norm': _run_inner_norm,
    'lipschitz': _run_lipschitz,
    'prox': _run_prox,
    'sosc': _run_sosc,
}

# lipschitz feeds its v-trend to the dfnt cross-check
_RUN_ORDER = ('lipschitz', 'classify', 'cq', 'envelope', 'hypo', 'inner-norm', 'prox', 'sosc', 'dfnt')


def run_probes(run: RunConfig, problem: Optional[ParametricProblem] = None) -> Report:
    """
    Run the selected probes. Unmet probe preconditions are recorded as skipped
    with a warning; any other failure is recorded as an error.

    Raises:
        ProblemInputError, ConfigError: invalid problem or configuration
    """
    problem = problem or run.build_problem()
    loc = run.localization(problem)
    report = Report(
        config=run.to_dict(),
        problem={
            'name': problem.name,
            'fingerprint': problem_fingerprint(problem),
            'n': problem.n,
            'm': problem.m,
            'xbar': list(problem.xbar),
            'description': problem.description,
        },
    )
    ctx = _Context(problem, loc, run.solve_config(), run.probe_config(), run, report)
    logger.info('Probe run started', problem=problem.name, probes=','.join(run.probes))
    for pid in (p for p in _RUN_ORDER if p in run.probes):
        entry: Dict[str, Any] = {'anchor': ANCHORS[pid], 'paper_ref': PAPER_REFS[pid]}
        start = time.perf_counter()
        try:
            entry['result'] = RUNNERS[pid](ctx)
            entry['status'] = 'completed'
        except (ProbeError, UnsupportedOperationError) as e:
            entry['status'] = 'skipped'
            entry['reason'] = str(e)
            ctx.warn(f'{pid} skipped: {e}')
        except (ProblemInputError, ConfigError):
            raise
        except (StabilityProbeError, ArithmeticError, ValueError, np.linalg.LinAlgError) as e:
            entry['status'] = 'error'
            entry['reason'] = f'{type(e).__name__}: {e}'
            logger.error('Probe failed', probe=pid, error=str(e), exc_info=True)
            report.warnings.append(f'{pid} failed: {e}')
        report.timing[pid] = time.perf_counter() - start
        report.probes[pid] = entry
    report.probes = {pid: report.probes[pid] for pid in PROBE_IDS if pid in report.probes}
    logger.info('Probe run finished', problem=problem.name, failed=len(report.failed))
    return report


# ==================== Human-readable summary ====================

def verdict_rows(data: Dict[str, Any]) -> List[str]:
    """'<property>: <verdict>' lines read from a report dict."""
    rows = []
    probes = data.get('probes', {})
    classify_entry = probes.get('classify', {}).get('result')
    if classify_entry:
        for key, label in VERDICT_LABELS:
            rows.append(f'{label}: {classify_entry[key]}')
    sosc = probes.get('sosc', {}).get('result')
    if sosc:
        rows.append(f'strong SOSC for all multipliers: {"pass" if sosc["all_multipliers_pass"] else "fail"}')
        rows.append(f'strong SOSC for some multiplier: {"pass" if sosc["some_multipliers_pass"] else "fail"}')
    dfnt = probes.get('dfnt', {}).get('result')
    if dfnt:
        rows.append(f'definiteness modulus: {dfnt["estimate"]["verdict"]}')
    truncation = (probes.get('envelope', {}).get('result') or {}).get('truncation')
    if truncation:
        rows.append(f'truncation identity: {"pass" if truncation["holds"] else "fail"}')
    cq = probes.get('cq', {}).get('result')
    if cq:
        rows.append(f'basic constraint qualification: {"pass" if cq["holds"] else "fail"}')
    return rows


def moduli_rows(data: Dict[str, Any]) -> List[List[Any]]:
    rows = []
    probes = data.get('probes', {})
    for pid in PROBE_IDS:
        result = probes.get(pid, {}).get('result')
        if not result:
            continue
        if pid == 'classify':
            for key in ('lipschitz_v', 'lipschitz_u', 'lipschitz_joint'):
                if result.get(key):
                    rows.append([pid, key, result[key]['value'], result[key]['verdict']])
        elif pid == 'lipschitz':
            for mode, est in result.items():
                rows.append([pid, mode, est.get('value'), est.get('verdict')])
        elif pid == 'inner-norm':
            rows.append([pid, 'inner norm', result['value'], result['verdict']])
        elif pid == 'hypo' and 'modulus' in result:
            rows.append([pid, 'e', result['modulus']['value'], result['modulus']['verdict']])
        elif pid == 'prox':
            rows.append([pid, 'r', result['r']['value'], result['r']['verdict']])
            rows.append([pid, 's', result['s']['value'], result['s']['verdict']])
        elif pid == 'dfnt':
            rows.append([pid, 's', result['estimate']['value'], result['estimate']['verdict']])
            rows.append([pid, 'tilt ratio', result['crosscheck']['ratio'], ''])
        elif pid == 'envelope':
            for key, entry in result.items():
                if key == 'truncation':
                    rows.append([pid, 'truncation gap', entry['gap'], 'pass' if entry['holds'] else 'fail'])
                else:
                    rows.append([pid, f'residual {key}', entry['residual'], ''])
    return rows


def render_summary(data: Dict[str, Any], max_warnings: int = 5) -> str:
    problem = data.get('problem', {})
    lines = [f"Problem: {problem.get('name', '?')} (n={problem.get('n')}, m={problem.get('m')})", '']
    lines += verdict_rows(data)
    moduli = moduli_rows(data)
    if moduli:
        lines += ['', tabulate(moduli, headers=['probe', 'quantity', 'value', 'verdict'], floatfmt='.6g')]
    refs = [f'  {pid}: {e["paper_ref"]}' for pid, e in data.get('probes', {}).items() if e.get('paper_ref')]
    if refs:
        lines += ['', 'References:'] + refs
    skipped = [f'{pid}: {e.get("status")}' for pid, e in data.get('probes', {}).items()
               if e.get('status') != 'completed']
    if skipped:
        lines += [''] + skipped
    warnings = data.get('warnings', [])
    if warnings:
        lines += ['', 'Warnings:'] + [f'  - {w}' for w in warnings[:max_warnings]]
        if len(warnings) > max_warnings:
            lines.append(f'  ... {len(warnings) - max_warnings} more')
    return '\n'.join(lines)
