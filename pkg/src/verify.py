"""
Named verification fixtures: each builds a small problem, runs the pipeline
and records pass/fail checks with the measured value and its tolerance.
"""
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from config.config import SOLVER_SETTINGS, VERIFY_SETTINGS
from src.domain_grid import Box, GridDomain, ScalarField, SlitAnnulus, build_domain, intrinsic_distances_from
from src.errors import ChainStallError
from src.field_io import field_frame, write_json
from src.finsler_dist import EdgeWeights, distance_from
from src.hamiltonian import (AffineWeight, AnisotropicNorm, IsotropicPower, PlateauRadial, WeightedIsotropic,
                             conjugate_l, unit_directions)
from src.parallel import worker_count
from src.pointwise_attain import ascent_chain, chain_checks, mu_local, plateau_control, pointwise_h, verify_inclusion
from src.run_config import RunConfig, two_arc_values
from src.solver import absolutize, comparison_with_cones, lipschitz_certificate, local_optimality_residual, solve_mu

logger = logging.getLogger(__name__)


@dataclass
class Check:
    name: str
    fixture: str
    passed: bool
    value: float
    tolerance: Optional[float]
    detail: Dict = field(default_factory=dict)


class CheckRecorder:
    """Collects one fixture's checks; a toleranced check passes iff value <= tolerance * scale."""

    def __init__(self, fixture: str, scale: float = 1.0):
        self.fixture = fixture
        self.scale = scale
        self.checks: List[Check] = []

    def at_most(self, name: str, value: float, tolerance: float, **detail) -> bool:
        value = float(value)
        limit = tolerance * self.scale
        passed = self.scale > 0 and math.isfinite(value) and value <= limit
        self.checks.append(Check(name, self.fixture, bool(passed), value, limit, detail))
        if not passed:
            logger.warning(f"[{self.fixture}] {name} failed: {value:.6g} > {limit:.6g}")
        return passed

    def holds(self, name: str, condition: bool, value: float = float('nan'), **detail) -> bool:
        self.checks.append(Check(name, self.fixture, bool(condition), float(value), None, detail))
        if not condition:
            logger.warning(f"[{self.fixture}] {name} failed")
        return bool(condition)


@dataclass
class VerifyContext:
    h_scale: float = 1.0
    tol_field: float = SOLVER_SETTINGS['tol_field']
    rng_seed: int = SOLVER_SETTINGS['rng_seed']
    workers: Optional[int] = None
    cache: Dict = field(default_factory=dict)

    def h(self, key: str) -> float:
        return VERIFY_SETTINGS[key] * self.h_scale


def _linear_boundary(dom: GridDomain, a: float = 1.0, b: float = 0.0) -> ScalarField:
    g = np.full(dom.n_nodes, np.nan)
    pts = dom.coords(dom.boundary_nodes)
    g[dom.boundary_nodes] = a * pts[:, 0] + b * pts[:, 1]
    return ScalarField(g, 'g')


def _two_arc_boundary(dom: GridDomain) -> ScalarField:
    g = np.full(dom.n_nodes, np.nan)
    b = dom.boundary_nodes
    g[b] = two_arc_values(dom, dom.coords(b), 0.4, 0.6, 1.2, 1.0)
    return ScalarField(g, 'g')


def _problem(ctx: VerifyContext, key: str):
    """Solved and absolutized problem shared between fixtures, built once per run."""
    if key in ctx.cache:
        return ctx.cache[key]
    if key == 'eikonal-1d':
        dom = build_domain(Box(0.0, 0.0, 1.0, 0.0), ctx.h('h_fine'))
        g, n_sweeps = _linear_boundary(dom), SOLVER_SETTINGS['n_sweeps']
    elif key == 'eikonal-2d':
        dom = build_domain(Box(), ctx.h('h_fine'))
        g, n_sweeps = _linear_boundary(dom), VERIFY_SETTINGS['n_sweeps_2d']
    else:
        # two-arc-h_fine / two-arc-h_coarse
        dom = build_domain(Box(), ctx.h(key.rsplit('-', 1)[1]))
        g, n_sweeps = _two_arc_boundary(dom), VERIFY_SETTINGS['n_sweeps_2d']
    spec = IsotropicPower(1.0)
    ew = EdgeWeights(spec, dom)
    result = solve_mu(spec, dom, g, edge_weights=ew)
    u_abs = absolutize(spec, dom, g, result.midpoint(), n_sweeps=n_sweeps, edge_weights=ew, rng_seed=ctx.rng_seed)
    ctx.cache[key] = (spec, dom, ew, result, u_abs)
    return ctx.cache[key]


def _bracket_rel(result) -> float:
    lo, hi = result.bracket
    return 2.0 * (hi - lo) / hi if hi > 0 else 0.0


def _interior_error(dom: GridDomain, values: np.ndarray, exact: np.ndarray) -> float:
    nodes = np.flatnonzero(dom.inside)
    return float(np.max(np.abs(values[nodes] - exact[nodes])))


def fixture_eikonal_1d(ctx: VerifyContext, rec: CheckRecorder):
    spec, dom, ew, result, u_abs = _problem(ctx, 'eikonal-1d')
    x = dom.coords()[:, 0]
    rec.at_most('mu_error', abs(result.mu - 1.0), 1e-3, mu=result.mu)
    rec.at_most('s_minus_error', _interior_error(dom, result.s_minus.values, x), dom.h)
    rec.at_most('s_plus_error', _interior_error(dom, result.s_plus.values, x), dom.h)

    report = verify_inclusion(spec, dom, u_abs, {'s_minus': result.s_minus, 's_plus': result.s_plus},
                              mu=result.mu, edge_weights=ew, n_chain_seeds=0, workers=ctx.workers)
    for name, verdict in report.inclusion_verdicts.items():
        rec.at_most(f'inclusion_deficit[{name}]', 1.0 - verdict['inclusion_fraction'], 1e-12)

    x0 = dom.nearest_node((0.5, 0.0))
    up = ascent_chain(spec, dom, u_abs, x0, result.mu, 'up', ew)
    down = ascent_chain(spec, dom, u_abs, x0, result.mu, 'down', ew)
    checks = chain_checks(ew, u_abs, up, down, bracket_rel=_bracket_rel(result))
    ends = sorted({dom.ij(checks['x_minus'])[0], dom.ij(checks['x_plus'])[0]})
    rec.holds('chain_reaches_both_endpoints', ends == [0, dom.nx - 1], ends=ends)
    rec.at_most('chain_additivity', checks['additivity_error'], 1e-6)


def fixture_eikonal_2d(ctx: VerifyContext, rec: CheckRecorder):
    spec, dom, ew, result, _ = _problem(ctx, 'eikonal-2d')
    x = dom.coords()[:, 0]
    rec.at_most('mu_error', abs(result.mu - 1.0), 0.03, mu=result.mu)
    rec.at_most('s_minus_error', _interior_error(dom, result.s_minus.values, x), 0.03)
    rec.at_most('s_plus_error', _interior_error(dom, result.s_plus.values, x), 0.03)

    pw = pointwise_h(spec, dom, result.s_minus, edge_weights=ew, workers=ctx.workers)
    deep = np.flatnonzero(dom.inside & (dom.boundary_distance_field() >= 3 * dom.h))
    rec.at_most('h_du_rel_error', float(np.max(np.abs(pw.h_du[deep] - 1.0))), 0.05, n_nodes=len(deep))


def fixture_envelope(ctx: VerifyContext, rec: CheckRecorder):
    n_sources = max(1, VERIFY_SETTINGS['n_pairs_certificate'] // 20)
    for key in ('eikonal-1d', 'eikonal-2d', 'two-arc-h_coarse'):
        spec, dom, ew, result, u_abs = _problem(ctx, key)
        slack = ctx.tol_field + 2 * dom.h * max(result.mu, 1.0)
        nodes = np.flatnonzero(dom.inside)
        below = float(np.max(result.s_minus.values[nodes] - u_abs.values[nodes]))
        above = float(np.max(u_abs.values[nodes] - result.s_plus.values[nodes]))
        rec.at_most(f'below_s_minus[{key}]', below, slack)
        rec.at_most(f'above_s_plus[{key}]', above, slack)
        for v, tol in ((result.s_minus, ctx.tol_field), (result.s_plus, ctx.tol_field), (u_abs, slack)):
            worst, pair = lipschitz_certificate(spec, dom, v, result.mu, n_sources=n_sources,
                                                rng_seed=ctx.rng_seed, edge_weights=ew)
            rec.at_most(f'certificate_{v.name}[{key}]', worst, tol, pair=list(pair), lam=result.mu)


def _random_pairs(dom: GridDomain, rng, n_pairs: int, per_source: int):
    interior = dom.interior_nodes
    n_sources = max(1, n_pairs // per_source)
    sources = rng.choice(interior, size=min(n_sources, len(interior)), replace=False)
    return [(int(s), rng.choice(interior, size=min(per_source, len(interior)), replace=False)) for s in sources]


def _metric_cases(ctx: VerifyContext):
    h = ctx.h('h_coarse')
    box = build_domain(Box(), h)
    slit = build_domain(SlitAnnulus(), 4 * h)
    return [
        ('isotropic-box', IsotropicPower(1.0), box),
        ('quadratic-box', IsotropicPower(2.0), box),
        ('anisotropic-box', AnisotropicNorm([[4.0, 0.0], [0.0, 1.0]]), box),
        ('weighted-box', WeightedIsotropic(AffineWeight(1.0, 1.0, 0.0, (0.0, 0.0, 1.0, 1.0))), box),
        ('plateau-box', PlateauRadial(), box),
        ('isotropic-slit-annulus', IsotropicPower(1.0), slit),
    ]


def fixture_metric_equivalence(ctx: VerifyContext, rec: CheckRecorder):
    rng = np.random.default_rng(ctx.rng_seed)
    for label, spec, dom in _metric_cases(ctx):
        ew = EdgeWeights(spec, dom)
        pairs = _random_pairs(dom, rng, VERIFY_SETTINGS['n_pairs_metric'], per_source=10)
        violations, worst = 0, -math.inf
        for lam in VERIFY_SETTINGS['lambdas_metric']:
            alpha, big_m, slack = spec.alpha(lam), spec.big_m(lam), ew.quadrature_slack(lam)
            for s, targets in pairs:
                d = distance_from(ew, lam, s).dist[targets]
                unit = intrinsic_distances_from(dom, s)[targets]
                eps = slack * unit / dom.h + 1e-9 * (1 + d)
                excess = np.maximum(alpha * unit - eps - d, d - big_m * unit - eps)
                violations += int(np.sum(excess > 0))
                worst = max(worst, float(np.max(excess)))
        rec.at_most(f'equivalence_violations[{label}]', violations, 0.0, worst_excess=worst)


def fixture_monotonicity(ctx: VerifyContext, rec: CheckRecorder):
    rng = np.random.default_rng(ctx.rng_seed + 1)
    delta = VERIFY_SETTINGS['left_delta']
    lams = VERIFY_SETTINGS['lambdas_monotone']
    for label, spec, dom in _metric_cases(ctx):
        ew = EdgeWeights(spec, dom)
        pairs = _random_pairs(dom, rng, VERIFY_SETTINGS['n_pairs_monotone'], per_source=5)
        decreases, worst_gap = 0, -math.inf
        for s, targets in pairs:
            rows = np.array([distance_from(ew, lam, s).dist[targets] for lam in lams])
            decreases += int(np.sum(np.diff(rows, axis=0) < -1e-12 * (1 + np.abs(rows[1:]))))
            if not spec.flags.e:
                continue
            unit = intrinsic_distances_from(dom, s)[targets]
            for lam, d in zip(lams, rows):
                below = distance_from(ew, lam - delta, s).dist[targets]
                bound = (spec.left_gap(lam, delta) + 2 * ew.quadrature_slack(lam) / dom.h) * unit
                worst_gap = max(worst_gap, float(np.max(d - below - bound - 1e-9 * (1 + d))))
        rec.at_most(f'monotonicity_violations[{label}]', decreases, 0.0)
        if spec.flags.e:
            rec.at_most(f'left_continuity_excess[{label}]', max(worst_gap, 0.0), 1e-12, delta=delta)


def fixture_pointwise_consistency(ctx: VerifyContext, rec: CheckRecorder):
    dom = build_domain(Box(), ctx.h('h_coarse'))
    h, xy = dom.h, dom.coords()
    apex = dom.nearest_node((0.5, 0.5))
    off_apex = np.linalg.norm(xy - xy[apex], axis=1) > 3 * h
    radial = xy - xy[apex]
    r = np.linalg.norm(radial, axis=1)
    with np.errstate(invalid='ignore', divide='ignore'):
        cone_grad = radial / r[:, None]
    # (label, H, u, closed-form Du, nodes kept)
    cases = [
        ('linear', IsotropicPower(1.0), 0.6 * xy[:, 0] + 0.8 * xy[:, 1], np.tile([0.6, 0.8], (len(xy), 1)), None),
        ('cone', IsotropicPower(1.0), r, cone_grad, off_apex),
        ('weighted-linear', WeightedIsotropic(AffineWeight(1.0, 1.0, 0.0, (0.0, 0.0, 1.0, 1.0))), xy[:, 0],
         np.tile([1.0, 0.0], (len(xy), 1)), None),
    ]
    deep = dom.inside & (dom.boundary_distance_field() >= 3 * h)
    for label, spec, values, du, keep in cases:
        ew = EdgeWeights(spec, dom)
        u = ScalarField(np.where(dom.inside, values, np.nan), label)
        pw = pointwise_h(spec, dom, u, edge_weights=ew, workers=ctx.workers)
        nodes = np.flatnonzero(deep if keep is None else deep & keep)
        exact = spec.h(dom.coords(nodes), du[nodes])
        rec.at_most(f'consistency_constant[{label}]', float(np.max(np.abs(pw.h_du[nodes] - exact))) / h, 5.0)
        if keep is None:
            interior = dom.interior_nodes
            gap = abs(pw.sup_value() - float(np.max(spec.h(xy[interior], du[interior])))) / h
            rec.at_most(f'sup_match_constant[{label}]', gap, 5.0)
        else:
            # at the kink the one-sided slopes are all 1
            at_apex = mu_local(spec, dom, u, apex, pw.radii[-1], edge_weights=ew)
            rec.at_most(f'apex_constant[{label}]', abs(at_apex - 1.0) / h, 5.0, mu_local=at_apex)


def fixture_plateau(ctx: VerifyContext, rec: CheckRecorder):
    dom = build_domain(Box(-1.5, -1.5, 1.5, 1.5), ctx.h('h_plateau'))
    spec = PlateauRadial()
    ew = EdgeWeights(spec, dom)
    lam, slope = spec.a, 0.6
    for e in unit_directions(8):
        value = conjugate_l(spec, (0.0, 0.0), e, lam)
        rec.at_most(f'conjugate_error[{e[0]:+.3f},{e[1]:+.3f}]', abs(value - 0.75), 1e-3, value=value)

    u = ScalarField(np.where(dom.inside, slope * dom.coords()[:, 0], np.nan), 'u')
    x0 = dom.nearest_node((0.0, 0.0))
    value, node = plateau_control(spec, dom, u, x0, lam, 1.0, edge_weights=ew)
    r = float(np.linalg.norm(dom.coords([node])[0] - dom.coords([x0])[0]))
    expected = (slope - 0.75) * r
    rec.at_most('negative_control_error', abs(value - expected), 0.02 * abs(expected), value=value, node=node)
    rec.holds('negative_control_sign', value < 0, value)
    local = mu_local(spec, dom, u, x0, 3 * dom.h, edge_weights=ew)
    rec.at_most('mu_local_error', abs(local - lam), 1e-3, mu_local=local)
    try:
        ascent_chain(spec, dom, u, x0, lam, 'up', ew)
        stalled, gap = False, float('nan')
    except ChainStallError as e:
        stalled, gap = True, e.gap
    rec.holds('chain_stall_detected', stalled, gap)


def fixture_local_optimality(ctx: VerifyContext, rec: CheckRecorder):
    dom = build_domain(Box(), ctx.h('h_plateau'))
    spec = IsotropicPower(1.0)
    ew = EdgeWeights(spec, dom)
    g = _two_arc_boundary(dom)
    result = solve_mu(spec, dom, g, edge_weights=ew)
    history: List[Dict] = []
    u_abs = absolutize(spec, dom, g, result.s_minus, n_sweeps=VERIFY_SETTINGS['n_sweeps_residual'], edge_weights=ew,
                       rng_seed=ctx.rng_seed, tol_fix=0.0, history=history)
    residuals = [entry['residual'] for entry in history]
    start = local_optimality_residual(spec, dom, result.s_minus, edge_weights=ew)
    final = local_optimality_residual(spec, dom, u_abs, edge_weights=ew)
    increases = sum(later > earlier for earlier, later in zip(residuals, residuals[1:]))
    rec.at_most('residual_increases', increases, 0.0, residuals=residuals)
    rec.holds('residual_decreased', final < start, final, s_minus=start)

    # cones with vertices outside sampled patches, at the global level mu
    rng = np.random.default_rng(ctx.rng_seed + 2)
    radius = SOLVER_SETTINGS['patch_radius_h'] * dom.h
    deep = np.flatnonzero(dom.inside & (dom.boundary_distance_field() >= radius))
    centres = rng.choice(deep, size=min(VERIFY_SETTINGS['n_cone_patches'], len(deep)), replace=False)
    worst = 0.0
    for c in centres:
        region = dom.restrict(dom.ball(int(c), radius)[0])
        outside = np.flatnonzero(dom.inside & ~region.inside)
        for x0 in rng.choice(outside, size=min(VERIFY_SETTINGS['n_cone_vertices'], len(outside)), replace=False):
            worst = max(worst, comparison_with_cones(spec, dom, u_abs, int(x0), result.mu, region, ew))
    slack = ctx.tol_field + 2 * dom.h * max(result.mu, 1.0)
    rec.at_most('cone_comparison_excess', worst, slack, n_patches=len(centres))


def fixture_two_arc(ctx: VerifyContext, rec: CheckRecorder):
    fractions = {}
    for key in ('h_coarse', 'h_fine'):
        spec, dom, ew, result, u_abs = _problem(ctx, f'two-arc-{key}')
        report = verify_inclusion(spec, dom, u_abs, {'s_minus': result.s_minus, 's_plus': result.s_plus},
                                  mu=result.mu, edge_weights=ew, n_chain_seeds=0, workers=ctx.workers)
        fractions[key] = report.inclusion_verdicts
    result = _problem(ctx, 'two-arc-h_fine')[3]
    rec.at_most('mu_error', abs(result.mu - 2.0), 0.06, mu=result.mu)
    for name, verdict in fractions['h_fine'].items():
        inside, reverse = verdict['inclusion_fraction'], verdict['reverse_inclusion_fraction']
        rec.at_most(f'inclusion_deficit[{name}]', 1.0 - inside, 0.05, fraction=inside)
        rec.holds(f'reverse_inclusion_fails[{name}]', reverse < 0.5, reverse)
        coarse = fractions['h_coarse'][name]['inclusion_fraction']
        rec.at_most(f'refinement_drop[{name}]', coarse - inside, 0.0, coarse=coarse, fine=inside)


def fixture_chains(ctx: VerifyContext, rec: CheckRecorder):
    spec, dom, ew, result, _ = _problem(ctx, 'eikonal-2d')
    bracket = _bracket_rel(result)
    slack = ew.quadrature_slack(result.mu)
    for point in ((0.5, 0.5), (0.3, 0.6), (0.7, 0.25)):
        x0 = dom.nearest_node(point)
        up = ascent_chain(spec, dom, result.s_minus, x0, result.mu, 'up', ew)
        down = ascent_chain(spec, dom, result.s_minus, x0, result.mu, 'down', ew)
        c = chain_checks(ew, result.s_minus, up, down, bracket_rel=bracket)
        tag = '{},{}'.format(*dom.ij(x0))
        rec.at_most(f'slope_excess[{tag}]', c['max_step_excess'], 0.0, defect=c['max_step_defect'])
        rec.holds(f'endpoints_on_boundary[{tag}]', c['endpoints_on_boundary'])
        rec.at_most(f'length_rel_error[{tag}]', c['length_rel_error'], 0.01)
        rec.at_most(f'additivity_error[{tag}]', c['additivity_error'],
                    1e-6 + 2 * slack + bracket * c['pair_distance'])


def _fingerprint(ctx: VerifyContext, workers: int) -> Tuple[str, str]:
    dom = build_domain(Box(), ctx.h('h_plateau'))
    spec = IsotropicPower(1.0)
    g = _linear_boundary(dom, 1.0, 0.5)
    ew = EdgeWeights(spec, dom)
    result = solve_mu(spec, dom, g, edge_weights=ew)
    u_abs = absolutize(spec, dom, g, result.midpoint(), n_sweeps=1, edge_weights=ew, rng_seed=ctx.rng_seed)
    pw = pointwise_h(spec, dom, u_abs, edge_weights=ew, workers=workers)

    def text(f: ScalarField) -> str:
        return field_frame(f, dom).to_csv(index=False, float_format='%.17g', na_rep='NaN')

    return text(u_abs) + repr(result.mu), text(pw.as_field())


def fixture_determinism(ctx: VerifyContext, rec: CheckRecorder):
    many = worker_count(ctx.workers or 8)
    first = _fingerprint(ctx, 1)
    second = _fingerprint(ctx, many)
    rec.holds('identical_minimizer', first[0] == second[0], workers=[1, many])
    rec.holds('identical_pointwise_field', first[1] == second[1], workers=[1, many])


FIXTURES: Dict[str, Callable[[VerifyContext, CheckRecorder], None]] = {
    'eikonal-1d': fixture_eikonal_1d,
    'eikonal-2d': fixture_eikonal_2d,
    'metric-equivalence': fixture_metric_equivalence,
    'monotonicity': fixture_monotonicity,
    'envelope': fixture_envelope,
    'pointwise-consistency': fixture_pointwise_consistency,
    'plateau': fixture_plateau,
    'two-arc': fixture_two_arc,
    'local-optimality': fixture_local_optimality,
    'chains': fixture_chains,
    'determinism': fixture_determinism,
}


def run_fixture(name: str, ctx: VerifyContext, scale: float = 1.0) -> List[Check]:
    """Run one fixture; an exception becomes a failed 'completed' check carrying its message."""
    rec = CheckRecorder(name, scale)
    try:
        FIXTURES[name](ctx, rec)
    except Exception as e:
        logger.error(f"Fixture {name} raised: {str(e)}", exc_info=True)
        rec.holds('completed', False, error=f"{type(e).__name__}: {e}")
    passed = sum(c.passed for c in rec.checks)
    logger.info(f"Fixture {name}: {passed}/{len(rec.checks)} checks passed")
    return rec.checks


def run_verify(cfg: RunConfig, prefix, workers: Optional[int] = None) -> Tuple[int, Dict]:
    """Run the configured fixtures and write <prefix>_report.json; exit code 0 iff every check passed."""
    ver = cfg.verify
    ctx = VerifyContext(h_scale=float(ver['h_scale']), tol_field=cfg.solver['tol_field'],
                        rng_seed=cfg.solver['rng_seed'], workers=workers)
    checks: List[Check] = []
    for name in ver['fixtures']:
        checks.extend(run_fixture(name, ctx, float(ver['check_tolerance_scale'])))
    n_failed = sum(not c.passed for c in checks)
    report = {
        'schema_version': VERIFY_SETTINGS['schema_version'],
        'fixtures': list(ver['fixtures']),
        'h_scale': ver['h_scale'],
        'check_tolerance_scale': ver['check_tolerance_scale'],
        'checks': [asdict(c) for c in checks],
        'n_checks': len(checks),
        'n_failed': n_failed,
        'passed': n_failed == 0,
    }
    path = Path(f"{prefix}_report.json")
    write_json(report, path)
    logger.info(f"verify: {len(checks) - n_failed}/{len(checks)} checks passed, report at {path}")
    return (0 if n_failed == 0 else 1), report
