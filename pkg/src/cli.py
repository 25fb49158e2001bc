"""
Stability probe CLI.

Exit codes: 0 when every selected probe completed (whatever its verdict),
1 on an internal probe failure, 2 on invalid input.
"""

import sys
from typing import Optional

import click
import yaml

from .services.problem_registry import list_registry
from .services.report_service import PROBE_IDS, RunConfig, load_report, render_summary, run_probes
from .utils.config import load_config
from .utils.errors import ConfigError, ProblemInputError
from .utils.logger import get_logger, setup_logging


EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_INVALID = 2

logger = get_logger('cli')


def _fail(message: str, code: int) -> None:
    click.echo(click.style(f'✗ {message}', fg='red'), err=True)
    sys.exit(code)


@click.group()
def cli():
    """Parametric optimization stability probe"""
    pass


@cli.command('list-problems')
def list_problems():
    """List built-in problems"""
    for signature, description, prop, ref in list_registry():
        click.echo(f'{signature:<26} {description}')
        click.echo(f'{"":<26} exhibits: {prop}')
        click.echo(f'{"":<26} ref: {ref}')


@cli.command()
@click.option('--problem', help='Built-in problem id, e.g. ex32 or quadratic(2)')
@click.option('--problem-file', type=click.Path(), help='JSON problem file')
@click.option('--delta', type=float, help='Localization radius')
@click.option('--alpha', type=float, help='Attentive level (default: none)')
@click.option('--v-radius', type=float, help='Tilt perturbation radius')
@click.option('--u-radius', type=float, help='Parameter perturbation radius')
@click.option('--grid', type=int, help='Grid points per axis (odd, >= 11)')
@click.option('--seed', type=int, help='Random seed')
@click.option('--tol-refine', type=float, help='Refinement tolerance')
@click.option('--tol-cluster', type=float, help='Minimizer clustering tolerance')
@click.option('--tol-active', type=float, help='Active-set tolerance')
@click.option('--tol-pd', type=float, help='Positive definiteness tolerance')
@click.option('--probes', help=f'Comma list from: {",".join(PROBE_IDS)}')
@click.option('--out', type=click.Path(), help='Report JSON path (default: stdout)')
@click.option('--csv-dir', type=click.Path(), help='Directory for CSV tables')
@click.option('--workers', type=int, help='Worker threads for sweeps')
@click.option('--config', 'config_path', type=click.Path(), help='Path to config file')
@click.option('--log-level', type=click.Choice(['DEBUG', 'INFO', 'WARNING', 'ERROR'], case_sensitive=False),
              help='Log level')
def probe(problem, problem_file, delta, alpha, v_radius, u_radius, grid, seed, tol_refine, tol_cluster,
          tol_active, tol_pd, probes, out, csv_dir, workers, config_path, log_level):
    """Run stability probes and write a report"""
    try:
        config = load_config(config_path)
        log_cfg = config.get('logging', {}) or {}
        setup_logging(
            log_level or log_cfg.get('level', 'INFO'),
            log_cfg.get('log_dir'),
            bool(log_cfg.get('json', False)),
        )
    except (OSError, ValueError, yaml.YAMLError) as e:
        _fail(f'Cannot load config: {e}', EXIT_INVALID)

    try:
        run = RunConfig.from_sources(
            config,
            problem=problem, problem_file=problem_file, delta=delta, alpha=alpha,
            v_radius=v_radius, u_radius=u_radius, grid=grid, seed=seed,
            refine_tol=tol_refine, cluster_tol=tol_cluster, active_tol=tol_active, pd_tol=tol_pd,
            probes=probes, out=out, csv_dir=csv_dir, workers=workers,
        )
        report = run_probes(run)
    except (ProblemInputError, ConfigError) as e:
        _fail(str(e), EXIT_INVALID)
    except Exception as e:
        logger.exception('Probe run failed')
        _fail(f'Error: {e}', EXIT_FAILURE)

    if run.out:
        report.write(run.out)
        click.echo(click.style(f'✓ Report written to {run.out}', fg='green'), err=True)
    else:
        click.echo(report.to_json())
    if run.csv_dir:
        for path in report.write_csvs(run.csv_dir):
            click.echo(f'  {path}', err=True)

    if report.failed:
        _fail(f'Probes failed: {", ".join(report.failed)}', EXIT_FAILURE)


@cli.command()
@click.argument('path', type=click.Path())
@click.option('--warnings', 'max_warnings', default=5, help='Number of warnings to show')
def report(path: str, max_warnings: Optional[int]):
    """Summarize a report JSON"""
    try:
        data = load_report(path)
        click.echo(render_summary(data, max_warnings))
    except ProblemInputError as e:
        _fail(str(e), EXIT_INVALID)
    except (KeyError, TypeError) as e:
        _fail(f'Malformed report {path}: {e}', EXIT_INVALID)


def main():
    cli()


if __name__ == '__main__':
    main()
