"""
Optimal value mu, extremal minimizers S^- / S^+ and the patch re-solve
iteration that drives a minimizer towards an absolute one.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from config.config import SOLVER_SETTINGS
from src.domain_grid import GridDomain, ScalarField
from src.errors import UnboundedProblemError
from src.finsler_dist import EdgeWeights, boundary_transform, distance_from, distance_to
from src.hamiltonian import HamiltonianSpec

logger = logging.getLogger(__name__)


@dataclass
class SolveResult:
    mu: float
    s_minus: ScalarField
    s_plus: ScalarField
    residual: float
    bisection_trace: List[Tuple[float, bool, float]] = field(default_factory=list)
    bracket: Tuple[float, float] = (0.0, 0.0)

    def midpoint(self) -> ScalarField:
        return ScalarField(0.5 * (self.s_minus.values + self.s_plus.values), 'u_mid')


def _values(g) -> np.ndarray:
    return g.values if isinstance(g, ScalarField) else np.asarray(g, dtype=float)


def _check_boundary_data(dom: GridDomain, g: np.ndarray):
    if len(g) != dom.n_nodes:
        raise ValueError(f"Boundary field has {len(g)} values for {dom.n_nodes} nodes")
    bad = dom.boundary_nodes[~np.isfinite(g[dom.boundary_nodes])]
    if len(bad):
        raise ValueError(f"Boundary data is not finite at nodes {bad[:5].tolist()}")


def feasible(spec: HamiltonianSpec, dom: GridDomain, g, lam: float,
             edge_weights: Optional[EdgeWeights] = None,
             tol_feas: Optional[float] = None) -> Tuple[bool, float]:
    """Is g(y) - g(x) <= d_lam(x, y) for all boundary x, y? Returns (verdict, residual)."""
    if lam < 0:
        raise ValueError(f"Lambda must be non-negative, got {lam}")
    ew = edge_weights or EdgeWeights(spec, dom)
    g = _values(g)
    tol = SOLVER_SETTINGS['tol_feas'] if tol_feas is None else tol_feas
    tol += 2.0 * ew.quadrature_slack(lam)
    labels = np.full(dom.n_nodes, np.nan)
    labels[dom.boundary_nodes] = -g[dom.boundary_nodes]
    transform = boundary_transform(ew, lam, labels, 'reverse')
    b = dom.boundary_nodes
    residual = float(np.max(-transform.dist[b] - g[b]))
    logger.debug(f"Feasibility probe lambda={lam:.8g}: residual={residual:.3e} (tol {tol:.3e})")
    return residual <= tol, residual


def extremal_fields(ew: EdgeWeights, g, lam: float) -> Tuple[ScalarField, ScalarField]:
    """S^-_lam(g) = sup_y g(y) - d(x, y) and S^+_lam(g) = inf_y g(y) + d(y, x)."""
    dom = ew.dom
    g = _values(g)
    labels = np.full(dom.n_nodes, np.nan)
    b = dom.boundary_nodes
    labels[b] = -g[b]
    lower = -boundary_transform(ew, lam, labels, 'reverse').dist
    labels[b] = g[b]
    upper = boundary_transform(ew, lam, labels, 'forward').dist
    for values in (lower, upper):
        unreached = dom.inside & ~np.isfinite(values)
        if unreached.any():
            logger.warning(f"{int(unreached.sum())} inside nodes cannot reach the boundary")
        values[~dom.inside | unreached] = np.nan
    return ScalarField(lower, 's_minus'), ScalarField(upper, 's_plus')


def solve_mu(spec: HamiltonianSpec, dom: GridDomain, g, tol_lambda: Optional[float] = None,
             edge_weights: Optional[EdgeWeights] = None, initial_lambda: Optional[float] = None,
             lambda_cap: Optional[float] = None, tol_feas: Optional[float] = None) -> SolveResult:
    """Smallest feasible lambda by exponential search and bisection, plus S^-/S^+ at mu."""
    ew = edge_weights or EdgeWeights(spec, dom)
    g = _values(g)
    _check_boundary_data(dom, g)
    if tol_lambda is not None and tol_lambda <= 0:
        raise ValueError(f"tol_lambda must be positive, got {tol_lambda}")
    cap = lambda_cap or SOLVER_SETTINGS['lambda_cap']
    trace: List[Tuple[float, bool, float]] = []

    def probe(lam: float) -> bool:
        ok, res = feasible(spec, dom, g, lam, ew, tol_feas)
        trace.append((lam, ok, res))
        return ok

    if probe(0.0):
        lo = hi = 0.0
    else:
        lo = 0.0
        hi = max(1e-8, initial_lambda or SOLVER_SETTINGS['initial_lambda'])
        while not probe(hi):
            lo = hi
            hi *= 2.0
            if hi > cap:
                raise UnboundedProblemError(f"No feasible lambda below lambda_cap={cap:g}")
        width = tol_lambda if tol_lambda is not None else SOLVER_SETTINGS['tol_lambda_rel'] * hi
        while hi - lo > width:
            mid = 0.5 * (lo + hi)
            if probe(mid):
                hi = mid
            else:
                lo = mid

    mu = hi
    residual = next(res for lam, ok, res in reversed(trace) if lam == mu)
    s_minus, s_plus = extremal_fields(ew, g, mu)
    logger.info(f"mu={mu:.8g} in [{lo:.8g}, {hi:.8g}] after {len(trace)} probes")
    return SolveResult(mu=mu, s_minus=s_minus, s_plus=s_plus, residual=residual,
                       bisection_trace=trace, bracket=(lo, hi))


def gradient_field(dom: GridDomain, v) -> np.ndarray:
    """Least-squares gradient over each node's outgoing stencil edges; NaN where undefined."""
    v = _values(v)
    d = dom.edge_vectors
    dv = v[dom.edge_dst] - v[dom.edge_src]
    ok = np.isfinite(dv)
    src, d, dv = dom.edge_src[ok], d[ok], dv[ok]
    a = np.zeros((dom.n_nodes, 2, 2))
    b = np.zeros((dom.n_nodes, 2))
    np.add.at(a, src, d[:, :, None] * d[:, None, :])
    np.add.at(b, src, d * dv[:, None])
    grad = np.einsum('nij,nj->ni', np.linalg.pinv(a), b)
    counts = np.bincount(src, minlength=dom.n_nodes)
    grad[(counts == 0) | ~dom.inside | ~np.isfinite(v)] = np.nan
    return grad


def sup_h_of_field(spec: HamiltonianSpec, dom: GridDomain, v) -> Tuple[float, int]:
    """max over interior nodes of H(x, G_h v(x)) and the node attaining it."""
    nodes = dom.interior_nodes
    if not len(nodes):
        return 0.0, -1
    grad = gradient_field(dom, v)[nodes]
    usable = np.isfinite(grad).all(axis=1)
    if not usable.any():
        return 0.0, -1
    nodes, grad = nodes[usable], grad[usable]
    values = spec.h(dom.coords(nodes), grad)
    k = int(np.argmax(values))
    return float(values[k]), int(nodes[k])


def patch_centres(dom: GridDomain, patch_radius: float, patch_stride: Optional[int] = None) -> np.ndarray:
    stride = patch_stride or max(1, int(round(patch_radius / (2 * dom.h))))
    nodes = dom.interior_nodes
    i, j = nodes % dom.nx, nodes // dom.nx
    return nodes[(i % stride == 0) & (j % stride == 0)]


def _patch(dom: GridDomain, centre: int, patch_radius: float) -> Optional[GridDomain]:
    nodes, _ = dom.ball(centre, patch_radius)
    sub = dom.restrict(nodes)
    if not len(sub.interior_nodes):
        return None
    return sub


def _patches(dom: GridDomain, patch_radius: float, patch_stride: Optional[int]) -> Dict[int, GridDomain]:
    patches = {}
    for c in patch_centres(dom, patch_radius, patch_stride):
        sub = _patch(dom, int(c), patch_radius)
        if sub is not None:
            patches[int(c)] = sub
    return patches


def _worst_patch_gap(spec: HamiltonianSpec, v: np.ndarray, patches: Iterable[GridDomain],
                     ew: EdgeWeights) -> float:
    worst = -math.inf
    for sub in patches:
        local_sup, _ = sup_h_of_field(spec, sub, v)
        local = solve_mu(spec, sub, v, edge_weights=ew.restricted(sub))
        worst = max(worst, local_sup - local.mu)
    return 0.0 if worst == -math.inf else float(worst)


def _midpoint_sweep(spec: HamiltonianSpec, v: np.ndarray, patches: Dict[int, GridDomain], order,
                    ew: EdgeWeights) -> np.ndarray:
    """One Gauss-Seidel pass: each patch interior becomes its local (S^- + S^+) / 2."""
    v = v.copy()
    for c in order:
        sub = patches.get(int(c))
        if sub is None:
            continue
        local = solve_mu(spec, sub, v, edge_weights=ew.restricted(sub))
        inner = sub.interior_nodes
        v[inner] = 0.5 * (local.s_minus.values[inner] + local.s_plus.values[inner])
    return v


def absolutize(spec: HamiltonianSpec, dom: GridDomain, g, v0, patch_radius: Optional[float] = None,
               n_sweeps: Optional[int] = None, edge_weights: Optional[EdgeWeights] = None,
               rng_seed: Optional[int] = None, tol_fix: Optional[float] = None,
               patch_stride: Optional[int] = None, history: Optional[list] = None) -> ScalarField:
    """Sweep patch re-solves: v on each patch becomes the local (S^- + S^+) / 2.

    A sweep is kept only if the worst patch gap sup_h - mu_V does not grow;
    otherwise the step towards it is halved up to max_step_halvings times and
    the iteration stops when no step is acceptable. g fixes the values on dom's
    boundary nodes. When history is given it receives one record per sweep
    (sweep 0 is the starting field) with the residual, max update and step.
    """
    ew = edge_weights or EdgeWeights(spec, dom)
    patch_radius = patch_radius or SOLVER_SETTINGS['patch_radius_h'] * dom.h
    n_sweeps = SOLVER_SETTINGS['n_sweeps'] if n_sweeps is None else n_sweeps
    tol_fix = SOLVER_SETTINGS['tol_fix'] if tol_fix is None else tol_fix
    rng = np.random.default_rng(SOLVER_SETTINGS['rng_seed'] if rng_seed is None else rng_seed)

    v = _values(v0).copy()
    g = _values(g)
    v[dom.boundary_nodes] = g[dom.boundary_nodes]
    centres = patch_centres(dom, patch_radius, patch_stride)
    patches = _patches(dom, patch_radius, patch_stride)
    inside = dom.inside & np.isfinite(v)
    residual = _worst_patch_gap(spec, v, patches.values(), ew)
    if history is not None:
        history.append({'sweep': 0, 'residual': residual, 'update': 0.0, 'step': 0.0})

    for sweep in range(1, n_sweeps + 1):
        target = _midpoint_sweep(spec, v, patches, rng.permutation(centres), ew)
        step, accepted = 1.0, None
        for _ in range(SOLVER_SETTINGS['max_step_halvings'] + 1):
            candidate = v + step * (target - v)
            candidate_residual = _worst_patch_gap(spec, candidate, patches.values(), ew)
            if candidate_residual <= residual:
                accepted = candidate
                break
            step *= 0.5
        if accepted is None:
            logger.warning(f"absolutize sweep {sweep}: no step keeps the residual at {residual:.3e}; stopping")
            break
        update = float(np.max(np.abs(accepted[inside] - v[inside]), initial=0.0))
        v, residual = accepted, candidate_residual
        if history is not None:
            history.append({'sweep': sweep, 'residual': residual, 'update': update, 'step': step})
        logger.info(f"absolutize sweep {sweep}/{n_sweeps}: {len(patches)} patches, step {step:g}, "
                    f"max update {update:.3e}, residual {residual:.3e}")
        if update < tol_fix:
            break
    else:
        if n_sweeps:
            logger.warning(f"absolutize stopped after {n_sweeps} sweeps with residual {residual:.3e}")
    v[~dom.inside] = np.nan
    return ScalarField(v, 'u_abs')


def local_optimality_residual(spec: HamiltonianSpec, dom: GridDomain, v,
                              patch_radius: Optional[float] = None,
                              edge_weights: Optional[EdgeWeights] = None,
                              patch_stride: Optional[int] = None) -> float:
    """max over patches V of sup_h(v on V) - mu_V(v restricted to the patch boundary)."""
    ew = edge_weights or EdgeWeights(spec, dom)
    patch_radius = patch_radius or SOLVER_SETTINGS['patch_radius_h'] * dom.h
    patches = _patches(dom, patch_radius, patch_stride)
    return _worst_patch_gap(spec, _values(v), patches.values(), ew)


def lipschitz_certificate(spec: HamiltonianSpec, dom: GridDomain, v, lam: float,
                          sources: Optional[Sequence[int]] = None, n_sources: int = 25,
                          rng_seed: Optional[int] = None,
                          edge_weights: Optional[EdgeWeights] = None) -> Tuple[float, Tuple[int, int]]:
    """Worst v(y) - v(x) - d_lam(x, y) over sampled sources x and all inside y."""
    ew = edge_weights or EdgeWeights(spec, dom)
    v = _values(v)
    if sources is None:
        rng = np.random.default_rng(SOLVER_SETTINGS['rng_seed'] if rng_seed is None else rng_seed)
        pool = np.flatnonzero(dom.inside)
        sources = rng.choice(pool, size=min(n_sources, len(pool)), replace=False)
    inside = np.flatnonzero(dom.inside & np.isfinite(v))
    worst, pair = -math.inf, (-1, -1)
    for x in sources:
        dist = distance_from(ew, lam, int(x)).dist
        reach = inside[np.isfinite(dist[inside])]
        gap = v[reach] - v[int(x)] - dist[reach]
        k = int(np.argmax(gap))
        if gap[k] > worst:
            worst, pair = float(gap[k]), (int(x), int(reach[k]))
    return worst, pair


def comparison_with_cones(spec: HamiltonianSpec, dom: GridDomain, u, x0: int, lam: float,
                          region: GridDomain, edge_weights: Optional[EdgeWeights] = None) -> float:
    """Violation of the cone comparison on a patch not containing x0.

    Upper cones a + d_lam(x0, .) and lower cones b - d_lam(., x0) that bound u
    on the patch boundary must bound it inside; returns the larger overshoot.
    """
    if region.inside[x0]:
        raise ValueError(f"Cone vertex {x0} must lie outside the comparison region")
    ew = edge_weights or EdgeWeights(spec, dom)
    u = _values(u)
    edge, inner = region.boundary_nodes, region.interior_nodes
    if not len(inner):
        return 0.0
    there = distance_from(ew, lam, x0).dist
    back = there if spec.is_even else distance_to(ew, lam, x0).dist
    up = u - there
    down = u + back
    over = float(np.max(up[inner]) - np.max(up[edge]))
    under = float(np.min(down[edge]) - np.min(down[inner]))
    return max(over, under, 0.0)
