"""
Pointwise representative H(x, Du)(x), attainment sets, ascent chains and the
attainment-set inclusion report.

mu(x, r) is the smallest lambda with u(x') - u(x) <= d_lambda(x, x') on the
intrinsic ball of radius r around x; H(x, Du)(x) is its value at the
smallest radius.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from config.config import POINTWISE_SETTINGS, SOLVER_SETTINGS
from src.domain_grid import GridDomain, ScalarField
from src.errors import ChainStallError, ReportError, UnboundedProblemError
from src.finsler_dist import EdgeWeights, distance_from, distance_to
from src.hamiltonian import HamiltonianSpec
from src.parallel import map_chunks, split_chunks, worker_count

logger = logging.getLogger(__name__)


def _values(u) -> np.ndarray:
    return u.values if isinstance(u, ScalarField) else np.asarray(u, dtype=float)


def _invert_scale(spec: HamiltonianSpec, target: float) -> float:
    """inf{lam : phi(lam) >= target} for the non-decreasing scale phi."""
    if target <= 0 or spec.metric_scale(0.0) >= target:
        return 0.0
    lo, hi = 0.0, 1.0
    while spec.metric_scale(hi) < target:
        lo, hi = hi, 2.0 * hi
        if hi > SOLVER_SETTINGS['lambda_cap']:
            raise UnboundedProblemError(f"Scale never reaches {target:g} below lambda_cap")
    while hi - lo > 1e-13 * hi:
        mid = 0.5 * (lo + hi)
        if spec.metric_scale(mid) >= target:
            hi = mid
        else:
            lo = mid
    return hi


def _scaled_mu(ew: EdgeWeights, u: np.ndarray, x: int, nodes: np.ndarray, ball_dist: np.ndarray,
               radii: Sequence[float]) -> Optional[List[float]]:
    """mu per radius from one reference transform; None when a zero-cost rise blocks inversion."""
    spec = ew.spec
    ref = ew.reference_lambda
    reach = spec.big_m(ref) * max(radii) * (1 + 1e-9) + 1e-12
    d_ref = distance_from(ew, ref, x, cutoff=reach).dist[nodes]
    rise = u[nodes] - u[x]
    phi_ref = spec.metric_scale(ref)
    out = []
    for r in radii:
        sel = (ball_dist <= r * (1 + 1e-12)) & (rise > 0)
        if not sel.any():
            out.append(0.0)
            continue
        if np.any(d_ref[sel] <= 0):
            return None
        out.append(_invert_scale(spec, float(np.max(rise[sel] / d_ref[sel])) * phi_ref))
    return out


def _bisected_mu(ew: EdgeWeights, u: np.ndarray, x: int, nodes: np.ndarray, r: float,
                 tol_lambda: Optional[float]) -> float:
    spec = ew.spec
    rise = u[nodes] - u[x]
    tol_feas = SOLVER_SETTINGS['tol_feas']

    def admissible(lam: float) -> bool:
        cutoff = spec.big_m(lam) * r * (1 + 1e-9) + 1e-12
        dist = distance_from(ew, lam, x, cutoff=cutoff).dist[nodes]
        return bool(np.all(rise <= dist + tol_feas + 2 * ew.quadrature_slack(lam)))

    if admissible(0.0):
        return 0.0
    lo, hi = 0.0, SOLVER_SETTINGS['initial_lambda']
    while not admissible(hi):
        lo, hi = hi, 2.0 * hi
        if hi > SOLVER_SETTINGS['lambda_cap']:
            raise UnboundedProblemError(f"No local lambda below lambda_cap at node {x}")
    width = tol_lambda if tol_lambda is not None else SOLVER_SETTINGS['tol_lambda_rel'] * hi
    while hi - lo > width:
        mid = 0.5 * (lo + hi)
        if admissible(mid):
            hi = mid
        else:
            lo = mid
    return hi


def _mu_for_radii(ew: EdgeWeights, u: np.ndarray, x: int, radii: Sequence[float],
                  tol_lambda: Optional[float] = None) -> List[float]:
    dom = ew.dom
    nodes, ball_dist = dom.ball(x, max(radii))
    keep = (nodes != x) & np.isfinite(u[nodes])
    nodes, ball_dist = nodes[keep], ball_dist[keep]
    if not len(nodes):
        return [0.0] * len(radii)
    if ew.scales:
        scaled = _scaled_mu(ew, u, x, nodes, ball_dist, radii)
        if scaled is not None:
            return scaled
    return [_bisected_mu(ew, u, x, nodes[ball_dist <= r * (1 + 1e-12)], r, tol_lambda) for r in radii]


def mu_local(spec: HamiltonianSpec, dom: GridDomain, u, x: int, r: float,
             tol_lambda: Optional[float] = None, edge_weights: Optional[EdgeWeights] = None) -> float:
    """mu(x, r) = inf{lam : u(x') - u(x) <= d_lam(x, x') for x' within intrinsic distance r}."""
    if not dom.inside[x]:
        raise ValueError(f"Node {x} lies outside the domain")
    if r < 2 * dom.h * (1 - 1e-9):
        raise ValueError(f"Radius {r:g} is below 2h = {2 * dom.h:g}")
    ew = edge_weights or EdgeWeights(spec, dom)
    return _mu_for_radii(ew, _values(u), int(x), [float(r)], tol_lambda)[0]


@dataclass
class PointwiseField:
    radii: np.ndarray
    mu_of_r: np.ndarray
    h_du: np.ndarray
    interior: np.ndarray
    monotonicity_violations: int = 0

    def sup_value(self) -> float:
        values = self.h_du[self.interior & np.isfinite(self.h_du)]
        return float(values.max()) if len(values) else 0.0

    def as_field(self) -> ScalarField:
        return ScalarField(self.h_du.copy(), 'h_du')


def _pointwise_task(shared, chunk: np.ndarray) -> np.ndarray:
    ew, u, radii, tol_lambda = shared
    return np.array([_mu_for_radii(ew, u, int(x), radii, tol_lambda) for x in chunk]).reshape(len(chunk), len(radii))


def pointwise_h(spec: HamiltonianSpec, dom: GridDomain, u, radii: Optional[Sequence[float]] = None,
                tol_lambda: Optional[float] = None, edge_weights: Optional[EdgeWeights] = None,
                workers: Optional[int] = None) -> PointwiseField:
    """mu(x, r) at every inside node for every radius; h_du is the smallest-radius column."""
    if radii is None:
        radii = [k * dom.h for k in POINTWISE_SETTINGS['radii_h']]
    radii = [float(r) for r in radii]
    if any(b >= a for a, b in zip(radii[:-1], radii[1:])):
        raise ValueError(f"Radii must be strictly decreasing, got {radii}")
    if radii[-1] < POINTWISE_SETTINGS['min_radius_h'] * dom.h * (1 - 1e-9):
        raise ValueError(f"Smallest radius {radii[-1]:g} is below {POINTWISE_SETTINGS['min_radius_h']}h")
    ew = edge_weights or EdgeWeights(spec, dom)
    u = _values(u)
    nodes = np.flatnonzero(dom.inside & np.isfinite(u))
    n_workers = worker_count(workers)
    chunks = split_chunks(nodes, 4 * n_workers)
    parts = map_chunks(_pointwise_task, (ew, u, radii, tol_lambda), chunks, n_workers)

    mu_of_r = np.full((dom.n_nodes, len(radii)), np.nan)
    if parts:
        mu_of_r[nodes] = np.vstack(parts)
    # columns run from the largest radius to the smallest
    tol = SOLVER_SETTINGS['tol_lambda_rel'] * np.nanmax(np.abs(mu_of_r), initial=0.0) + 1e-12
    violations = int(np.sum(np.diff(mu_of_r[nodes], axis=1) > tol)) if len(nodes) else 0
    if violations:
        logger.warning(f"mu(x, r) increased as r shrank at {violations} (node, radius) pairs")
    interior = np.zeros(dom.n_nodes, dtype=bool)
    interior[dom.interior_nodes] = True
    logger.info(f"Pointwise field on {len(nodes)} nodes, radii {[round(r / dom.h, 3) for r in radii]}h")
    return PointwiseField(radii=np.array(radii), mu_of_r=mu_of_r, h_du=mu_of_r[:, -1].copy(),
                          interior=interior, monotonicity_violations=violations)


def attainment_set(pw: PointwiseField, tau: Optional[float] = None) -> np.ndarray:
    """Interior nodes with h_du >= sup - tau."""
    sup = pw.sup_value()
    tau = POINTWISE_SETTINGS['tau_rel'] * sup if tau is None else tau
    if tau < 0:
        raise ValueError(f"tau must be non-negative, got {tau}")
    level = sup - tau - 1e-12 * max(1.0, abs(sup))
    return np.flatnonzero(pw.interior & np.isfinite(pw.h_du) & (pw.h_du >= level))


@dataclass
class AscentChain:
    """Node sequence from x0 towards the boundary; steps[k] = (u increment, d_mu length)."""
    nodes: List[int]
    direction: str
    mu: float
    steps: List[Tuple[float, float]] = field(default_factory=list)
    radii: List[float] = field(default_factory=list)

    @property
    def end(self) -> int:
        return self.nodes[-1]

    def length(self) -> float:
        return float(sum(d for _, d in self.steps))


def _next_point(ew: EdgeWeights, u: np.ndarray, y: int, mu: float, direction: str,
                lo: float, hi: float, candidates: Optional[np.ndarray] = None):
    """Best candidate z with d in [lo, hi]: objective, node, d."""
    dom = ew.dom
    transform = distance_from if direction == 'up' else distance_to
    dist = transform(ew, mu, y, cutoff=hi).dist
    if candidates is None:
        candidates = np.flatnonzero(dom.inside & (dist >= lo) & (dist <= hi) & np.isfinite(u))
    else:
        candidates = candidates[np.isfinite(dist[candidates]) & (dist[candidates] <= hi)]
    candidates = candidates[candidates != y]
    if not len(candidates):
        return None
    if direction == 'up':
        objective = u[candidates] - dist[candidates]
    else:
        objective = -(u[candidates] + dist[candidates])
    k = int(np.argmax(objective))
    return float(objective[k]), int(candidates[k]), float(dist[candidates[k]])


def ascent_chain(spec: HamiltonianSpec, dom: GridDomain, u, x0: int, mu: float, direction: str = 'up',
                 edge_weights: Optional[EdgeWeights] = None, chain_rel_tol: Optional[float] = None,
                 max_steps: Optional[int] = None) -> AscentChain:
    """Iterate y -> argmax u(z) - d_mu(y, z) on the shell around d_mu = R(y) until the boundary.

    direction='down' minimizes u(z) + d_mu(z, y) instead. Raises ChainStallError
    when no candidate keeps the slope within tolerance.
    """
    if direction not in ('up', 'down'):
        raise ValueError(f"direction must be 'up' or 'down', got {direction!r}")
    if not dom.inside[x0]:
        raise ValueError(f"Node {x0} lies outside the domain")
    if mu <= 0:
        raise ValueError(f"Chains need mu > 0, got {mu}")
    ew = edge_weights or EdgeWeights(spec, dom)
    u = _values(u)
    rel_tol = POINTWISE_SETTINGS['chain_rel_tol'] if chain_rel_tol is None else chain_rel_tol
    max_steps = max_steps or POINTWISE_SETTINGS['max_chain_steps']
    h = dom.h
    alpha, big_m = spec.alpha(mu), spec.big_m(mu)
    depth = dom.boundary_distance_field()
    slack = ew.quadrature_slack(mu)
    sign = 1.0 if direction == 'up' else -1.0

    chain = AscentChain(nodes=[int(x0)], direction=direction, mu=float(mu))
    y = int(x0)
    for _ in range(max_steps):
        if dom.boundary_mask[y]:
            return chain
        if depth[y] <= 2 * h:
            near, _ = dom.ball(y, 3 * h)
            near = near[dom.boundary_mask[near]]
            reach = big_m * 3 * h * (1 + 1e-9) + 1e-12
            if not len(near):
                near, reach = dom.boundary_nodes, math.inf
            best = _next_point(ew, u, y, mu, direction, 0.0, reach, candidates=near)
            if best is None:
                raise ChainStallError(f"No boundary node reachable from node {y}", node=y, gap=-math.inf)
            _, z, d = best
            chain.nodes.append(z)
            chain.steps.append((sign * (u[z] - u[y]), d))
            chain.radii.append(d)
            return chain
        radius = max(alpha * alpha / (2 * big_m) * depth[y], 2 * h * big_m)
        best = _next_point(ew, u, y, mu, direction, radius - h * big_m, radius + h * big_m)
        tol = POINTWISE_SETTINGS['chain_abs_tol'] + slack + rel_tol * radius
        if best is None:
            raise ChainStallError(f"Empty candidate shell around node {y}", node=y, gap=-math.inf)
        objective, z, d = best
        gap = objective - sign * u[y]
        if gap < -tol:
            raise ChainStallError(f"Ascent chain stalled at node {y}: best slope gap {gap:.3e} "
                                  f"exceeds tolerance {tol:.3e}", node=y, gap=gap)
        chain.nodes.append(z)
        chain.steps.append((sign * (u[z] - u[y]), d))
        chain.radii.append(radius)
        y = z
    raise ChainStallError(f"Chain from node {x0} did not reach the boundary in {max_steps} steps",
                          node=y, gap=0.0)


def chain_checks(ew: EdgeWeights, u, up: AscentChain, down: AscentChain,
                 attain_fat: Optional[np.ndarray] = None, bracket_rel: float = 0.0) -> Dict:
    """Slope, endpoint, additivity and geodesic-length checks for one up/down pair through x0."""
    dom = ew.dom
    u = _values(u)
    mu = up.mu
    slack = ew.quadrature_slack(mu)
    abs_tol = POINTWISE_SETTINGS['chain_abs_tol']
    steps = up.steps + down.steps
    defects = [abs(inc - d) for inc, d in steps]
    excess = [abs(inc - d) - (abs_tol + slack + bracket_rel * d) for inc, d in steps]
    x0, x_minus, x_plus = up.nodes[0], down.end, up.end

    from_minus = distance_from(ew, mu, x_minus).dist
    from_x0 = distance_from(ew, mu, x0).dist
    pair = float(from_minus[x_plus])
    additivity = abs(float(from_minus[x0]) + float(from_x0[x_plus]) - pair)
    chain_length = up.length() + down.length()
    interior = [n for n in down.nodes[::-1] + up.nodes[1:] if not dom.boundary_mask[n]]
    if attain_fat is not None and interior:
        inside_fraction = float(np.isin(interior, attain_fat).mean())
    else:
        inside_fraction = 1.0
    return {
        'x0': int(x0),
        'x_minus': int(x_minus),
        'x_plus': int(x_plus),
        'n_steps': len(steps),
        'max_step_defect': max(defects, default=0.0),
        'max_step_excess': max(excess, default=0.0),
        'endpoints_on_boundary': bool(dom.boundary_mask[x_minus] and dom.boundary_mask[x_plus]),
        'additivity_error': additivity,
        'chain_length': chain_length,
        'pair_distance': pair,
        'length_rel_error': abs(chain_length - pair) / max(pair, 1e-300),
        'slope_gap': float(u[x_plus] - u[x_minus]) - pair,
        'inside_fraction': inside_fraction,
    }


@dataclass
class AttainmentReport:
    sup_value: float
    tau: float
    tau_fat: float
    set: np.ndarray
    chains: List[Dict] = field(default_factory=list)
    inclusion_verdicts: Dict[str, Dict] = field(default_factory=dict)
    pointwise: Optional[PointwiseField] = None
    mu: float = 0.0

    def to_dict(self, dom: GridDomain) -> Dict:
        return {
            'sup_value': self.sup_value,
            'tau': self.tau,
            'tau_fat': self.tau_fat,
            'mu': self.mu,
            'set_size': int(len(self.set)),
            'chains': [dict(c, polyline=dom.coords(c['nodes']).tolist()) if 'nodes' in c else c
                       for c in self.chains],
            'inclusion_verdicts': self.inclusion_verdicts,
        }


def _chain_seeds(nodes: np.ndarray, n_seeds: int) -> np.ndarray:
    if not len(nodes) or n_seeds <= 0:
        return nodes[:0]
    picks = np.unique(np.round(np.linspace(0, len(nodes) - 1, n_seeds)).astype(int))
    return nodes[picks]


def verify_inclusion(spec: HamiltonianSpec, dom: GridDomain, u_abs,
                     others: Union[Dict[str, ScalarField], Sequence[ScalarField]],
                     tau: Optional[float] = None, tau_fat: Optional[float] = None,
                     radii: Optional[Sequence[float]] = None, mu: Optional[float] = None,
                     edge_weights: Optional[EdgeWeights] = None, n_chain_seeds: Optional[int] = None,
                     workers: Optional[int] = None, bracket_rel: float = 0.0) -> AttainmentReport:
    """Compare A_tau(u_abs) with the fattened attainment sets of other minimizers and check its chains."""
    ew = edge_weights or EdgeWeights(spec, dom)
    if not isinstance(others, dict):
        others = {getattr(v, 'name', f'other_{k}') or f'other_{k}': v for k, v in enumerate(others)}
    pw = pointwise_h(spec, dom, u_abs, radii, edge_weights=ew, workers=workers)
    sup = pw.sup_value()
    tau = POINTWISE_SETTINGS['tau_rel'] * sup if tau is None else tau
    tau_fat = POINTWISE_SETTINGS['tau_fat_factor'] * tau if tau_fat is None else tau_fat
    a_u = attainment_set(pw, tau)
    if not len(a_u):
        raise ReportError("Attainment set of the absolute minimizer is empty")
    a_u_fat = attainment_set(pw, tau_fat)

    verdicts = {}
    for name, v in others.items():
        pw_v = pointwise_h(spec, dom, v, radii, edge_weights=ew, workers=workers)
        a_v = attainment_set(pw_v, tau)
        a_v_fat = attainment_set(pw_v, tau_fat)
        inside = float(np.isin(a_u, a_v_fat).mean())
        reverse = float(np.isin(a_v, a_u_fat).mean()) if len(a_v) else 1.0
        verdicts[name] = {
            'inclusion_fraction': inside,
            'outside_fraction': 1.0 - inside,
            'reverse_inclusion_fraction': reverse,
            'set_size': int(len(a_v)),
            'sup_value': pw_v.sup_value(),
        }
        logger.info(f"A(u_abs) inside A_fat({name}): {inside:.3f}; reverse {reverse:.3f}")

    mu = sup if mu is None else mu
    chains = []
    if mu > 0:
        n_seeds = POINTWISE_SETTINGS['n_chain_seeds'] if n_chain_seeds is None else n_chain_seeds
        for x0 in _chain_seeds(a_u, n_seeds):
            try:
                up = ascent_chain(spec, dom, u_abs, int(x0), mu, 'up', ew)
                down = ascent_chain(spec, dom, u_abs, int(x0), mu, 'down', ew)
            except ChainStallError as e:
                logger.warning(f"Chain from node {int(x0)} stalled: {e}")
                chains.append({'seed': int(x0), 'stalled': True, 'node': e.node, 'gap': e.gap})
                continue
            checks = chain_checks(ew, u_abs, up, down, a_u_fat, bracket_rel)
            checks.update(seed=int(x0), stalled=False, nodes=down.nodes[::-1] + up.nodes[1:])
            chains.append(checks)
    return AttainmentReport(sup_value=sup, tau=tau, tau_fat=tau_fat, set=a_u, chains=chains,
                            inclusion_verdicts=verdicts, pointwise=pw, mu=mu)


def plateau_control(spec: HamiltonianSpec, dom: GridDomain, u, x0: int, lam: float, radius: float,
                    edge_weights: Optional[EdgeWeights] = None) -> Tuple[float, int]:
    """max over the discrete sphere |y - x0| = radius of u(y) - u(x0) - d_lam(x0, y)."""
    ew = edge_weights or EdgeWeights(spec, dom)
    u = _values(u)
    r = np.linalg.norm(dom.coords() - dom.coords([x0])[0], axis=1)
    sphere = np.flatnonzero(dom.inside & (np.abs(r - radius) <= dom.h / 2))
    if not len(sphere):
        raise ValueError(f"No grid nodes at distance {radius:g} from node {x0}")
    dist = distance_from(ew, lam, x0).dist
    values = u[sphere] - u[x0] - dist[sphere]
    k = int(np.argmax(values))
    return float(values[k]), int(sphere[k])
