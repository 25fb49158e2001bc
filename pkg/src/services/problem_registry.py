"""Built-in problems, problem files and problem fingerprints."""

import hashlib
import json
import re
from dataclasses import replace
from pathlib import Path
from typing import Any, Dict, List, Tuple, Union

import numpy as np

from ..utils.errors import ProblemInputError
from ..utils.logger import get_logger
from .problem_model import (
    AbsModel,
    Box,
    ClosedFormModel,
    CompositeBody,
    NegQuadraticModel,
    OrthantNonpos,
    ParametricProblem,
    Polynomial,
    QuadraticModel,
    RadialPowerModel,
    SmoothMap,
    ZeroIndicator,
    convex_piece_from_dict,
)


logger = get_logger('problem_registry')

_ID_PATTERN = re.compile(r'^\s*([a-z_][a-z0-9_]*)\s*(?:\((.*)\))?\s*$')

# id -> (signature, description, property the entry exhibits, paper_ref)
REGISTRY: Dict[str, Tuple[str, str, str, str]] = {
    'abs1d': (
        'abs1d',
        'f(x) = |x| on R, no parameter',
        'nonsmooth minimum; vacuous definiteness modulus, tilt Lipschitz constant 0',
        'Eq. (2.12), Theorem 2.4',
    ),
    'ex32': (
        'ex32',
        'phi(x,u) = (3/4)|(x,u)|^(4/3) + |(x,u)| - x on R x R',
        'tilt stable and fully substable but not fully stable: M(0,u)/u unbounded',
        'Example 3.2',
    ),
    'ex33': (
        'ex33',
        'min x3 + x4^2/2 s.t. x1-x3, -x1-x3, x2-x3-x4^2/2, -x2-x3-x4^2/2 <= -u',
        'strong second-order sufficiency for some multipliers but not all',
        'Example 3.3',
    ),
    'neg_quadratic': (
        'neg_quadratic',
        'f(x) = -x^2/2 on R, no parameter',
        'local maximum: minimizer jumps to the localization boundary',
        'Eq. (1.1)',
    ),
    'neg_quadratic_pinned': (
        'neg_quadratic_pinned',
        'phi(x,u) = -x^2/2 + indicator{x + u = 0}',
        'optimal value -u^2/2: hypo-convex in u with modulus 1',
        'Theorem 1.1',
    ),
    'quadratic': (
        'quadratic(s[,n])',
        'phi(x,u) = (s/2)|x|^2 - u.x with s > 0 (default n = 1)',
        'fully stable calibration baseline with M = (u+v)/s',
        'Section 1 definitions',
    ),
    'shifted_quadratic': (
        'shifted_quadratic(c[,s])',
        'phi(x,u) = (s/2)(x-c)^2 - u(x-c) anchored at xbar = c',
        'envelope identity offset by the anchor',
        'Eq. (1.9), Theorem 2.3(a)',
    ),
}


def list_registry() -> List[Tuple[str, str, str, str]]:
    """(signature, description, property, paper_ref) for every registry entry, sorted by id."""
    return [REGISTRY[key] for key in sorted(REGISTRY)]


def _parse_id(problem_id: str) -> Tuple[str, List[float]]:
    match = _ID_PATTERN.match(problem_id or '')
    if not match:
        raise ProblemInputError(f'Malformed problem id: {problem_id!r}')
    base, raw_args = match.group(1), match.group(2)
    args: List[float] = []
    if raw_args is not None and raw_args.strip():
        try:
            args = [float(a) for a in raw_args.split(',')]
        except ValueError as e:
            raise ProblemInputError(f'Non-numeric argument in problem id {problem_id!r}') from e
    return base, args


def _ex33() -> ParametricProblem:
    n = 4

    def poly(*terms):
        return Polynomial(n, tuple(terms))

    f0 = poly((1.0, (0, 0, 1, 0)), (0.5, (0, 0, 0, 2)))
    F = SmoothMap(n, (
        poly((1.0, (1, 0, 0, 0)), (-1.0, (0, 0, 1, 0))),
        poly((-1.0, (1, 0, 0, 0)), (-1.0, (0, 0, 1, 0))),
        poly((1.0, (0, 1, 0, 0)), (-1.0, (0, 0, 1, 0)), (-0.5, (0, 0, 0, 2))),
        poly((-1.0, (0, 1, 0, 0)), (-1.0, (0, 0, 1, 0)), (-0.5, (0, 0, 0, 2))),
    ))
    return ParametricProblem(
        name='ex33', n=n, m=4,
        body=CompositeBody(f0, F, OrthantNonpos(4, 4)),
        xbar=(0.0,) * n,
        description=REGISTRY['ex33'][1],
        params={'id': 'ex33'},
    )


def _neg_quadratic_pinned() -> ParametricProblem:
    f0 = Polynomial(1, ((-0.5, (2,)),))
    F = SmoothMap(1, (Polynomial(1, ((1.0, (1,)),)),))
    return ParametricProblem(
        name='neg_quadratic_pinned', n=1, m=1,
        body=CompositeBody(f0, F, ZeroIndicator(1)),
        xbar=(0.0,),
        description=REGISTRY['neg_quadratic_pinned'][1],
        params={'id': 'neg_quadratic_pinned'},
    )


def _closed_form(name: str, model: ClosedFormModel, xbar, problem_id: str) -> ParametricProblem:
    return ParametricProblem(
        name=name, n=model.n, m=model.m, body=model,
        xbar=tuple(xbar),
        description=REGISTRY[model.registry_id][1],
        params={'id': problem_id, **model.params},
    )


def registry_build(problem_id: str) -> ParametricProblem:
    """
    Build a registry problem from its id.

    Args:
        problem_id: e.g. 'ex32', 'ex33', 'quadratic(2)', 'quadratic(1,3)',
            'shifted_quadratic(1)', 'neg_quadratic', 'abs1d'

    Returns:
        The problem anchored at its xbar

    Raises:
        ProblemInputError: unknown id or bad arguments
    """
    base, args = _parse_id(problem_id)
    canonical = problem_id.replace(' ', '')

    if base in ('ex32', 'ex33', 'neg_quadratic', 'neg_quadratic_pinned', 'abs1d') and args:
        raise ProblemInputError(f'{base} takes no arguments')

    if base == 'ex32':
        return _closed_form('ex32', RadialPowerModel(), (0.0,), canonical)
    if base == 'ex33':
        return _ex33()
    if base == 'neg_quadratic':
        return _closed_form('neg_quadratic', NegQuadraticModel(), (0.0,), canonical)
    if base == 'neg_quadratic_pinned':
        return _neg_quadratic_pinned()
    if base == 'abs1d':
        return _closed_form('abs1d', AbsModel(), (0.0,), canonical)
    if base == 'quadratic':
        if len(args) > 2:
            raise ProblemInputError('quadratic takes (s) or (s, n)')
        s = args[0] if args else 1.0
        n = args[1] if len(args) > 1 else 1.0
        if n != int(n) or not 1 <= n <= 6:
            raise ProblemInputError(f'quadratic dimension must be an integer in [1, 6], got {n}')
        model = QuadraticModel(s=s, n=int(n))
        return _closed_form(canonical, model, (0.0,) * int(n), canonical)
    if base == 'shifted_quadratic':
        if not 1 <= len(args) <= 2:
            raise ProblemInputError('shifted_quadratic takes (c) or (c, s)')
        c = args[0]
        s = args[1] if len(args) > 1 else 1.0
        model = QuadraticModel(s=s, n=1, center=c)
        return _closed_form(canonical, model, (c,), canonical)

    raise ProblemInputError(
        f'Unknown problem id {problem_id!r}; known: {", ".join(sorted(REGISTRY))}'
    )


# ==================== Problem files ====================

def problem_from_dict(data: Dict[str, Any]) -> ParametricProblem:
    """Build a problem from the JSON problem-file structure."""
    if not isinstance(data, dict):
        raise ProblemInputError('Problem file must contain a JSON object')

    kind = data.get('kind', 'composite')
    if kind == 'builtin':
        if 'builtin' not in data:
            raise ProblemInputError('builtin problem needs a "builtin" registry id')
        problem = registry_build(str(data['builtin']))
        if data.get('name'):
            problem = _renamed(problem, str(data['name']))
        return problem
    if kind != 'composite':
        raise ProblemInputError(f'Unknown problem kind: {kind!r}')

    try:
        n = int(data['n'])
        m = int(data['m'])
    except (KeyError, TypeError, ValueError) as e:
        raise ProblemInputError('Composite problem needs integer "n" and "m"') from e
    if not 1 <= n <= 6:
        raise ProblemInputError(f'n must be in [1, 6], got {n}')
    if m < 0:
        raise ProblemInputError(f'm must be >= 0, got {m}')

    f0 = Polynomial.from_json(data.get('f0', []), n)
    components = data.get('F', [])
    if not isinstance(components, list) or len(components) != m:
        raise ProblemInputError(f'"F" must be a list of {m} polynomials')
    F = SmoothMap(n, tuple(Polynomial.from_json(c, n) for c in components))
    if 'g' in data:
        g = convex_piece_from_dict(data['g'], m)
    elif m == 0:
        g = Box((), ())
    else:
        raise ProblemInputError('Composite problem with m > 0 needs a "g" record')

    xbar = data.get('xbar', [0.0] * n)
    return ParametricProblem(
        name=str(data.get('name', 'composite')),
        n=n, m=m,
        body=CompositeBody(f0, F, g),
        xbar=tuple(xbar),
        elicitation=float(data.get('elicitation', 0.0)),
        description=str(data.get('description', '')),
        params={'id': str(data['builtin'])} if 'builtin' in data else {},
    )


def load_problem_file(path: Union[str, Path]) -> ParametricProblem:
    """Read a JSON problem file."""
    path = Path(path)
    try:
        with open(path, 'r') as f:
            data = json.load(f)
    except OSError as e:
        raise ProblemInputError(f'Cannot read problem file {path}: {e}') from e
    except json.JSONDecodeError as e:
        raise ProblemInputError(f'Problem file {path} is not valid JSON: {e}') from e
    problem = problem_from_dict(data)
    logger.info('Problem file loaded', path=str(path), name=problem.name, n=problem.n, m=problem.m)
    return problem


def _renamed(problem: ParametricProblem, name: str) -> ParametricProblem:
    return replace(problem, name=name)


def problem_to_dict(problem: ParametricProblem) -> Dict[str, Any]:
    """Canonical JSON structure of a problem (inverse of problem_from_dict)."""
    data: Dict[str, Any] = {
        'name': problem.name,
        'n': problem.n,
        'm': problem.m,
        'xbar': list(problem.xbar),
        'elicitation': problem.elicitation,
    }
    if problem.is_composite:
        body = problem.body
        data.update({
            'kind': 'composite',
            'f0': body.f0.to_json(),
            'F': [c.to_json() for c in body.F.components],
            'g': body.g.to_dict(),
        })
        if 'id' in problem.params:
            data['builtin'] = problem.params['id']
    else:
        data.update({'kind': 'builtin', 'builtin': problem.params.get('id', problem.body.registry_id)})
    return data


def problem_fingerprint(problem: ParametricProblem) -> str:
    """SHA-256 of the canonical JSON form."""
    canonical = json.dumps(problem_to_dict(problem), sort_keys=True, separators=(',', ':'))
    return hashlib.sha256(canonical.encode('utf-8')).hexdigest()


def random_points(problem: ParametricProblem, count: int, radius: float, seed: int = 0) -> Tuple[np.ndarray, np.ndarray]:
    """Seeded sample of (x, u) pairs in a box around (xbar, 0)."""
    rng = np.random.default_rng(seed)
    X = problem.xbar_array + rng.uniform(-radius, radius, size=(count, problem.n))
    U = rng.uniform(-radius, radius, size=(count, problem.m))
    return X, U
