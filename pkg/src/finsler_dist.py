"""
Finsler pseudo-distances d_lambda on a GridDomain.

Edge a -> b costs the trapezoid rule of t -> L_lambda(a + t(b - a), b - a)
over [0, 1]; distances are shortest directed paths over those costs.
"""
import logging
import math
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from config.config import DISTANCE_SETTINGS, HAMILTONIAN_SETTINGS
from src.domain_grid import GridDomain
from src.errors import UnreachableTargetError
from src.graph_search import shortest_paths
from src.hamiltonian import HamiltonianKind, HamiltonianSpec, support_values

logger = logging.getLogger(__name__)

MEMO_SIZE = 64


def trapezoid_coefficients(n_quad: int) -> Tuple[np.ndarray, np.ndarray]:
    """Sample positions and weights of the composite trapezoid rule on [0, 1]."""
    if n_quad < 2:
        raise ValueError(f"n_quad must be at least 2, got {n_quad}")
    ts = np.linspace(0.0, 1.0, n_quad)
    cs = np.full(n_quad, 1.0 / (n_quad - 1))
    cs[0] = cs[-1] = 0.5 / (n_quad - 1)
    return ts, cs


def _segment_costs(spec: HamiltonianSpec, starts: np.ndarray, q: np.ndarray, lam: float,
                   n_quad: int, n_dirs: int) -> np.ndarray:
    """Quadrature cost for segments starts -> starts + q sharing one displacement q."""
    ts, cs = trapezoid_coefficients(n_quad)
    total = np.zeros(len(starts))
    for t, c in zip(ts, cs):
        total += c * support_values(spec, starts + t * q, q[None, :], lam, n_dirs)[:, 0]
    return total


def edge_weight(spec: HamiltonianSpec, dom: GridDomain, a: int, b: int, lam: float,
                n_quad: Optional[int] = None, n_dirs: Optional[int] = None) -> float:
    """Cost of the single stencil edge a -> b at level lam."""
    n_quad = n_quad or DISTANCE_SETTINGS['n_quad']
    n_dirs = n_dirs or HAMILTONIAN_SETTINGS['n_dirs']
    if lam < 0:
        raise ValueError(f"Lambda must be non-negative, got {lam}")
    if dom.edge_between(a, b) < 0:
        raise ValueError(f"({a} -> {b}) is not a stencil edge of the domain")
    pa, pb = dom.coords([a, b])
    return float(_segment_costs(spec, pa[None, :], pb - pa, lam, n_quad, n_dirs)[0])


class EdgeWeights:
    """Per-edge costs of one (Hamiltonian, domain) pair, memoized per lambda.

    When the family scales (L_lambda = phi(lambda) L_ref) the costs at any
    lambda are the reference costs times phi(lambda) / phi(lambda_ref).
    WeightedIsotropic edges touching the 2h boundary layer use the refined
    rule with 2 n_quad - 1 samples.
    """

    def __init__(self, spec: HamiltonianSpec, dom: GridDomain, n_quad: Optional[int] = None,
                 n_dirs: Optional[int] = None):
        self.spec = spec
        self.dom = dom
        self.n_quad = n_quad or DISTANCE_SETTINGS['n_quad']
        self.n_dirs = n_dirs or HAMILTONIAN_SETTINGS['n_dirs']
        if self.n_quad < 2:
            raise ValueError(f"n_quad must be at least 2, got {self.n_quad}")
        self.reference_lambda = DISTANCE_SETTINGS['reference_lambda']
        self._memo: OrderedDict = OrderedDict()
        self._slack: OrderedDict = OrderedDict()
        self._parent: Optional['EdgeWeights'] = None
        self._index: Optional[np.ndarray] = None
        self._refine = self._near_boundary_edges()

    def _near_boundary_edges(self) -> np.ndarray:
        dom = self.dom
        if self.spec.kind is not HamiltonianKind.WEIGHTED_ISOTROPIC or dom.n_edges == 0:
            return np.zeros(dom.n_edges, dtype=bool)
        depth = dom.shape.boundary_distance(dom.coords())
        return np.minimum(depth[dom.edge_src], depth[dom.edge_dst]) <= 2 * dom.h

    @property
    def scales(self) -> bool:
        phi_ref = self.spec.metric_scale(self.reference_lambda)
        return phi_ref is not None and phi_ref > 0

    def restricted(self, sub: GridDomain) -> 'EdgeWeights':
        """View on a patch built by dom.restrict, sharing this memo's costs."""
        if self.dom.parent_edges is not None:
            raise ValueError("Patch views must be taken from the root domain's weights")
        if sub.parent_edges is None:
            raise ValueError("Sub-domain carries no parent edge map")
        view = EdgeWeights.__new__(EdgeWeights)
        view.spec, view.dom = self.spec, sub
        view.n_quad, view.n_dirs = self.n_quad, self.n_dirs
        view.reference_lambda = self.reference_lambda
        view._memo, view._slack = OrderedDict(), OrderedDict()
        view._parent, view._index = self, sub.parent_edges
        view._refine = self._refine[sub.parent_edges]
        return view

    def _remember(self, memo: OrderedDict, key: float, value):
        memo[key] = value
        if len(memo) > MEMO_SIZE:
            memo.popitem(last=False)
        return value

    def _compute(self, lam: float, n_quad: int, refine: bool = True) -> np.ndarray:
        dom = self.dom
        out = np.zeros(dom.n_edges)
        if lam <= 0 and self.spec.big_m(0.0) <= 0:
            return out
        starts = dom.coords(dom.edge_src)
        for k in np.unique(dom.edge_offset):
            group = np.flatnonzero(dom.edge_offset == k)
            q = dom.stencil[k] * dom.h
            if self.spec.spatially_uniform:
                out[group] = _segment_costs(self.spec, starts[group[:1]], q, lam, n_quad, self.n_dirs)[0]
                continue
            fine = group[self._refine[group]] if refine else group[:0]
            coarse = np.setdiff1d(group, fine, assume_unique=True)
            if len(coarse):
                out[coarse] = _segment_costs(self.spec, starts[coarse], q, lam, n_quad, self.n_dirs)
            if len(fine):
                out[fine] = _segment_costs(self.spec, starts[fine], q, lam, 2 * n_quad - 1, self.n_dirs)
        return out

    def weights(self, lam: float) -> np.ndarray:
        """Edge costs at lam (read-only array aligned with dom.edge_src)."""
        if lam < 0:
            raise ValueError(f"Lambda must be non-negative, got {lam}")
        key = float(lam)
        if key in self._memo:
            self._memo.move_to_end(key)
            return self._memo[key][0]
        if self._parent is not None:
            values = self._parent.weights(key)[self._index]
        elif self.scales and key != self.reference_lambda:
            ratio = self.spec.metric_scale(key) / self.spec.metric_scale(self.reference_lambda)
            values = self.weights(self.reference_lambda) * ratio
        else:
            values = self._compute(key, self.n_quad)
            logger.debug(f"Computed {len(values)} edge weights at lambda={key:.6g}")
        values.setflags(write=False)
        self._remember(self._memo, key, (values, values.tolist()))
        return values

    def weight_list(self, lam: float) -> List[float]:
        self.weights(lam)
        return self._memo[float(lam)][1]

    def quadrature_slack(self, lam: float) -> float:
        """max over edges of |w(n_quad) - w(2 n_quad - 1)|."""
        key = float(lam)
        if key in self._slack:
            return self._slack[key]
        if self._parent is not None:
            return self._remember(self._slack, key, self._parent.quadrature_slack(key))
        if self.scales and key != self.reference_lambda:
            ratio = self.spec.metric_scale(key) / self.spec.metric_scale(self.reference_lambda)
            return self._remember(self._slack, key, self.quadrature_slack(self.reference_lambda) * ratio)
        # constant integrand along every edge
        if self.dom.n_edges == 0 or self.spec.spatially_uniform:
            return self._remember(self._slack, key, 0.0)
        coarse = self._compute(key, self.n_quad, refine=False)
        fine = self._compute(key, 2 * self.n_quad - 1, refine=False)
        return self._remember(self._slack, key, float(np.max(np.abs(coarse - fine))))


@dataclass
class DistanceField:
    """Directed d_lambda values from (forward) or to (reverse) a seed set."""
    lam: float
    source_kind: str
    direction: str
    dist: np.ndarray
    pred: np.ndarray
    pred_edge: np.ndarray
    seeds: List[Tuple[int, float]] = field(default_factory=list)

    def is_seed(self, node: int) -> bool:
        return any(s == node for s, _ in self.seeds)


def dijkstra(dom: GridDomain, weights: Sequence[float], seeds: Sequence[Tuple[int, float]],
             direction: str = 'forward', cutoff: float = math.inf, lam: float = float('nan'),
             source_kind: Optional[str] = None) -> DistanceField:
    """Multi-seed shortest paths.

    forward: dist(x) = min_s c_s + d(s, x); reverse: dist(x) = min_s c_s + d(x, s).
    """
    if direction not in ('forward', 'reverse'):
        raise ValueError(f"direction must be 'forward' or 'reverse', got {direction!r}")
    seeds = [(int(s), float(c)) for s, c in seeds]
    if not seeds:
        raise ValueError("At least one seed is required")
    for s, _ in seeds:
        if not dom.inside[s]:
            raise ValueError(f"Seed node {s} lies outside the domain")
    if not isinstance(weights, list):
        weights = np.asarray(weights, dtype=float).tolist()
    ptr, order, nbr = dom.adjacency(reverse=direction == 'reverse')
    dist, pred, pred_edge = shortest_paths(dom.n_nodes, ptr, order, nbr, weights, seeds, cutoff)
    kind = source_kind or ('node' if len(seeds) == 1 else 'boundary-seeded')
    return DistanceField(lam=lam, source_kind=kind, direction=direction, dist=dist, pred=pred,
                         pred_edge=pred_edge, seeds=seeds)


def distance_from(ew: EdgeWeights, lam: float, node: int, cutoff: float = math.inf) -> DistanceField:
    return dijkstra(ew.dom, ew.weight_list(lam), [(node, 0.0)], 'forward', cutoff, lam, 'node')


def distance_to(ew: EdgeWeights, lam: float, node: int, cutoff: float = math.inf) -> DistanceField:
    return dijkstra(ew.dom, ew.weight_list(lam), [(node, 0.0)], 'reverse', cutoff, lam, 'node')


def boundary_transform(ew: EdgeWeights, lam: float, labels: np.ndarray, direction: str) -> DistanceField:
    """Transform seeded at every boundary node b with initial label labels[b]."""
    seeds = [(int(b), float(labels[b])) for b in ew.dom.boundary_nodes]
    return dijkstra(ew.dom, ew.weight_list(lam), seeds, direction, math.inf, lam, 'boundary-seeded')


def pairwise_distance(spec: HamiltonianSpec, dom: GridDomain, lam: float, x: int, y: int,
                      edge_weights: Optional[EdgeWeights] = None) -> float:
    """d_lambda(x, y); +inf across components."""
    if x == y:
        return 0.0
    ew = edge_weights or EdgeWeights(spec, dom)
    return float(distance_from(ew, lam, x).dist[y])


def extract_geodesic(df: DistanceField, target: int) -> List[int]:
    """Node path realizing df.dist[target], in travel order.

    Forward fields give seed -> target; reverse fields give target -> seed.
    """
    if not np.isfinite(df.dist[target]):
        raise UnreachableTargetError(f"Node {target} is at infinite distance (lambda={df.lam})")
    path = [int(target)]
    seen = {int(target)}
    while df.pred[path[-1]] >= 0:
        nxt = int(df.pred[path[-1]])
        if nxt in seen:
            raise UnreachableTargetError(f"Predecessor cycle at node {nxt}")
        seen.add(nxt)
        path.append(nxt)
    if df.direction == 'forward':
        path.reverse()
    return path


def path_cost(weights: Sequence[float], dom: GridDomain, nodes: Sequence[int]) -> float:
    """Replay the cost of a node path in travel order."""
    total = 0.0
    for a, b in zip(nodes[:-1], nodes[1:]):
        e = dom.edge_between(a, b)
        if e < 0:
            raise ValueError(f"Path step {a} -> {b} is not a stencil edge")
        total += weights[e]
    return total
