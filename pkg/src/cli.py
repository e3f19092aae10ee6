"""
Command-line entry point: solve | distance | pointwise | attain | chain | verify.

Every subcommand reads a JSON run config (--config) and accepts a few
targeted overrides. Exit codes: 0 success, 1 failed checks, 2 configuration
or usage error, 3 numerical error.
"""
import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from config.config import LOG_LEVEL
from src.domain_grid import GridDomain, ScalarField
from src.errors import ConfigError, SupnormError
from src.field_io import read_boundary_csv, read_field, write_field, write_heatmap, write_json, write_node_list, \
    write_scalar
from src.finsler_dist import EdgeWeights, boundary_transform, dijkstra
from src.pointwise_attain import ascent_chain, pointwise_h, verify_inclusion
from src.run_config import RunConfig, build_boundary, build_domain_from_config, build_hamiltonian, load_config
from src.run_store import RunStore
from src.solver import absolutize, local_optimality_residual, solve_mu
from src.verify import run_verify

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_FAILED, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


def setup_logger():
    """Set up and configure the package logger"""
    package_logger = logging.getLogger('src')
    if not package_logger.handlers:
        handler = logging.StreamHandler()
        handler.setFormatter(logging.Formatter('%(asctime)s - %(name)s - %(levelname)s - %(message)s'))
        package_logger.addHandler(handler)
    package_logger.setLevel(getattr(logging, str(LOG_LEVEL).upper(), logging.INFO))
    return package_logger


class UsageError(ConfigError):
    """Bad command-line override"""


def _node_arg(text: str, dom: GridDomain, flag: str) -> int:
    try:
        i, j = (int(p) for p in text.split(','))
    except ValueError:
        raise UsageError(f"{flag} expects 'i,j', got {text!r}")
    if not (0 <= i < dom.nx and 0 <= j < dom.ny):
        raise UsageError(f"{flag} {i},{j} is outside the {dom.nx}x{dom.ny} grid")
    node = dom.node_index(i, j)
    if not dom.inside[node]:
        raise UsageError(f"{flag} {i},{j} is not an inside node")
    return node


def _prefix(args, cfg: RunConfig) -> str:
    return args.out_prefix or cfg.output['prefix']


def _output(prefix: str, name: str) -> Path:
    return Path(f"{prefix}_{name}")


class Problem:
    """Domain, Hamiltonian and edge weights built from one config."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.dom = build_domain_from_config(cfg)
        self.spec = build_hamiltonian(cfg, self.dom)
        self.ew = EdgeWeights(self.spec, self.dom, n_quad=cfg.distance['n_quad'], n_dirs=cfg.hamiltonian['n_dirs'])

    def boundary(self) -> ScalarField:
        return build_boundary(self.cfg, self.dom)

    def solve(self):
        s = self.cfg.solver
        return solve_mu(self.spec, self.dom, self.boundary(), tol_lambda=s['tol_lambda'], edge_weights=self.ew,
                        initial_lambda=s['initial_lambda'], lambda_cap=s['lambda_cap'], tol_feas=s['tol_feas'])

    def local_residual(self, v: ScalarField) -> float:
        return local_optimality_residual(self.spec, self.dom, v, patch_radius=self.cfg.patch_radius,
                                         edge_weights=self.ew, patch_stride=self.cfg.solver['patch_stride'])

    def radii(self) -> List[float]:
        return self.cfg.radii

    def field(self, path, name: str, flag: str = '--field') -> ScalarField:
        try:
            return read_field(path, self.dom, name)
        except (FileNotFoundError, ValueError) as e:
            raise UsageError(str(e), key_path=flag)

    def pointwise(self, u: ScalarField, workers: Optional[int]):
        return pointwise_h(self.spec, self.dom, u, self.radii(), tol_lambda=self.cfg.solver['tol_lambda'],
                           edge_weights=self.ew, workers=workers)


def cmd_solve(args, cfg: RunConfig) -> Tuple[int, Dict]:
    prob = Problem(cfg)
    s = cfg.solver
    g = prob.boundary()
    result = prob.solve()
    history: List[Dict] = []
    u_abs = absolutize(prob.spec, prob.dom, g, result.midpoint(), patch_radius=cfg.patch_radius,
                       n_sweeps=s['n_sweeps'], edge_weights=prob.ew, rng_seed=s['rng_seed'], tol_fix=s['tol_fix'],
                       patch_stride=s['patch_stride'], history=history)
    start_residual = prob.local_residual(result.s_minus)
    prefix = _prefix(args, cfg)
    write_scalar(result.mu, _output(prefix, 'mu.txt'))
    fields = (result.s_minus, result.s_plus, u_abs)
    for f in fields:
        write_field(f, prob.dom, _output(prefix, f'{f.name}.csv'))
        if cfg.output['emit_heatmaps']:
            write_heatmap(f, prob.dom, _output(prefix, f'{f.name}.pgm'))
    trace = {
        'mu': result.mu,
        'bracket': list(result.bracket),
        'residual': result.residual,
        'probes': [{'lambda': lam, 'feasible': ok, 'residual': res} for lam, ok, res in result.bisection_trace],
        'sweeps': history,
        'local_optimality_residual': {'s_minus': start_residual, 'u_abs': history[-1]['residual']},
        'h': prob.dom.h,
        'n_nodes': int(prob.dom.inside.sum()),
        'hamiltonian': prob.spec.describe(),
    }
    write_json(trace, _output(prefix, 'trace.json'))
    logger.info(f"solve: mu={result.mu:.10g}, outputs under {prefix}_*")
    return EXIT_OK, {'mu': result.mu, 'trace': trace}


def cmd_distance(args, cfg: RunConfig) -> Tuple[int, Dict]:
    prob = Problem(cfg)
    if args.lam < 0:
        raise UsageError(f"--lambda must be non-negative, got {args.lam}")
    if (args.source is None) == (args.from_boundary is None):
        raise UsageError("distance needs exactly one of --source i,j and --from-boundary g.csv")
    direction = 'reverse' if args.reverse else 'forward'
    if args.source is not None:
        node = _node_arg(args.source, prob.dom, '--source')
        df = dijkstra(prob.dom, prob.ew.weight_list(args.lam), [(node, 0.0)], direction, lam=args.lam,
                      source_kind='node')
    else:
        try:
            labels = read_boundary_csv(args.from_boundary, prob.dom).values
        except (FileNotFoundError, ValueError) as e:
            raise UsageError(str(e), key_path='--from-boundary')
        # forward: min_b g(b) + d(b, x); reverse: min_b g(b) + d(x, b)
        df = boundary_transform(prob.ew, args.lam, labels, direction)
    out = Path(args.out) if args.out else _output(_prefix(args, cfg), 'distance.csv')
    write_field(ScalarField(np.where(np.isfinite(df.dist), df.dist, np.nan), 'distance'), prob.dom, out)
    return EXIT_OK, {'lambda': args.lam, 'direction': direction}


def cmd_pointwise(args, cfg: RunConfig) -> Tuple[int, Dict]:
    prob = Problem(cfg)
    u = prob.field(args.field, 'field')
    pw = prob.pointwise(u, args.workers)
    prefix = _prefix(args, cfg)
    out = Path(args.out) if args.out else _output(prefix, 'h_du.csv')
    write_field(pw.as_field(), prob.dom, out)
    if cfg.output['emit_heatmaps']:
        write_heatmap(pw.as_field(), prob.dom, out.with_suffix('.pgm'))
    summary = {'sup_value': pw.sup_value(), 'radii': pw.radii.tolist(),
               'monotonicity_violations': pw.monotonicity_violations}
    write_json(summary, _output(prefix, 'pointwise.json'))
    return EXIT_OK, summary


def cmd_attain(args, cfg: RunConfig) -> Tuple[int, Dict]:
    prob = Problem(cfg)
    u = prob.field(args.field, 'field')
    others = {Path(p).stem: prob.field(p, Path(p).stem, '--compare') for p in args.compare or []}
    pw_cfg = cfg.pointwise
    report = verify_inclusion(prob.spec, prob.dom, u, others, tau=pw_cfg['tau'], tau_fat=pw_cfg['tau_fat'],
                              radii=prob.radii(), mu=args.lam, edge_weights=prob.ew,
                              n_chain_seeds=pw_cfg['n_chain_seeds'], workers=args.workers)
    prefix = _prefix(args, cfg)
    write_node_list(report.set, prob.dom, _output(prefix, 'attain_set.csv'))
    doc = report.to_dict(prob.dom)
    doc['local_optimality_residual'] = prob.local_residual(u)
    write_json({'chains': doc['chains']}, _output(prefix, 'chains.json'))
    write_json(doc, _output(prefix, 'report.json'))
    return EXIT_OK, doc


def cmd_chain(args, cfg: RunConfig) -> Tuple[int, Dict]:
    prob = Problem(cfg)
    u = prob.field(args.field, 'field')
    if args.x0 is None:
        raise UsageError("chain needs --x0 i,j")
    x0 = _node_arg(args.x0, prob.dom, '--x0')
    if args.lam is not None:
        mu = args.lam
    else:
        pw = prob.pointwise(u, args.workers)
        mu = pw.sup_value()
        logger.info(f"chain: using sup of the pointwise field, mu={mu:.8g}")
    chain = ascent_chain(prob.spec, prob.dom, u, x0, mu, args.direction, prob.ew,
                         chain_rel_tol=cfg.pointwise['chain_rel_tol'])
    doc = {
        'x0': x0,
        'direction': chain.direction,
        'mu': chain.mu,
        'nodes': chain.nodes,
        'polyline': prob.dom.coords(chain.nodes).tolist(),
        'steps': [{'increment': inc, 'distance': d} for inc, d in chain.steps],
        'radii': chain.radii,
        'length': chain.length(),
    }
    out = Path(args.out) if args.out else _output(_prefix(args, cfg), 'chain.json')
    write_json(doc, out)
    return EXIT_OK, doc


def cmd_verify(args, cfg: RunConfig) -> Tuple[int, Dict]:
    return run_verify(cfg, _prefix(args, cfg), workers=args.workers)


COMMANDS = {
    'solve': cmd_solve,
    'distance': cmd_distance,
    'pointwise': cmd_pointwise,
    'attain': cmd_attain,
    'chain': cmd_chain,
    'verify': cmd_verify,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='supnorm', description="L-infinity variational problems on grids.")
    sub = parser.add_subparsers(dest='command', required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument('--config', required=True, help="JSON run configuration")
        p.add_argument('--out-prefix', dest='out_prefix', help="output prefix (overrides output.prefix)")
        p.add_argument('--h', type=float, help="grid spacing (overrides domain.h)")
        p.add_argument('--workers', type=int, help="worker processes, capped by SUPNORM_THREADS")
        p.add_argument('--record', action='store_true', help="archive the run in the run store")
        if name == 'distance':
            p.add_argument('--lambda', dest='lam', type=float, required=True)
            p.add_argument('--source', help="source node as i,j")
            p.add_argument('--from-boundary', dest='from_boundary', help="boundary CSV seeding the transform")
            p.add_argument('--reverse', action='store_true', help="distances to the source(s)")
            p.add_argument('--out')
        if name in ('pointwise', 'attain', 'chain'):
            p.add_argument('--field', required=True, help="field CSV (i,j,x,y,value)")
        if name in ('pointwise', 'chain'):
            p.add_argument('--out')
        if name in ('attain', 'chain'):
            p.add_argument('--lambda', dest='lam', type=float, help="level used by the chains")
        if name == 'attain':
            p.add_argument('--compare', action='append', help="other minimizer CSV (repeatable)")
        if name == 'chain':
            p.add_argument('--x0', help="start node as i,j")
            p.add_argument('--direction', choices=('up', 'down'), default='up')
    return parser


def _record(command: str, cfg: RunConfig, status: str, summary: Optional[Dict]):
    store = RunStore()
    try:
        mu = summary.get('mu') if summary else None
        store.save_run(command, cfg.raw, status, mu=mu, report=summary)
    finally:
        store.close()


def main(argv: Optional[Sequence[str]] = None) -> int:
    setup_logger()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_CONFIG if e.code else EXIT_OK

    try:
        cfg = load_config(args.config)
        if args.h is not None:
            if args.h <= 0:
                raise UsageError(f"must be positive, got {args.h}", key_path='--h')
            cfg = replace(cfg, domain=dict(cfg.domain, h=args.h))
        code, summary = COMMANDS[args.command](args, cfg)
    except ConfigError as e:
        logger.error(f"{args.command}: {str(e)}", exc_info=True)
        return EXIT_CONFIG
    except SupnormError as e:
        logger.error(f"{args.command} failed: {str(e)}", exc_info=True)
        return EXIT_NUMERIC
    except ValueError as e:
        logger.error(f"{args.command}: invalid input: {str(e)}", exc_info=True)
        return EXIT_CONFIG

    if args.record or cfg.output['record']:
        try:
            _record(args.command, cfg, 'passed' if code == EXIT_OK else 'failed', summary)
        except Exception as e:
            logger.error(f"Could not archive the run: {str(e)}")
    return code


if __name__ == '__main__':
    sys.exit(main())
