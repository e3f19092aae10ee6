"""
Hamiltonian families H(x, p), radial extents of their sublevel sets and the
quasi-convex conjugate L_lambda(x, q) = sup{p.q : H(x, p) <= lambda}.

Every sublevel {H(x, .) <= lambda} is convex and contains 0, so it is fully
described by its radial extent rho(x, e, lambda) along unit directions e.
"""
import logging
from dataclasses import asdict, dataclass
from enum import Enum
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from config.config import HAMILTONIAN_SETTINGS
from src.errors import HamiltonianDomainError

logger = logging.getLogger(__name__)


class HamiltonianKind(Enum):
    ISOTROPIC_POWER = 'isotropic-power'
    WEIGHTED_ISOTROPIC = 'weighted-isotropic'
    ANISOTROPIC_NORM = 'anisotropic-norm'
    PLATEAU_RADIAL = 'plateau-radial'
    TABULATED_RADIAL = 'tabulated-radial'


@dataclass(frozen=True)
class AssumptionFlags:
    """Structural assumptions (A)-(E); d is 'global', 'local' or 'none'."""
    a: bool = True
    b: bool = True
    c: bool = True
    d: str = 'global'
    e: bool = True


def unit_directions(n_dirs: int) -> np.ndarray:
    """Uniform unit directions on the circle, starting at angle 0."""
    theta = 2.0 * np.pi * np.arange(n_dirs) / n_dirs
    return np.column_stack([np.cos(theta), np.sin(theta)])


def _as_points(x) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(x, dtype=float))
    if pts.shape[-1] == 1:
        pts = np.column_stack([pts[:, 0], np.zeros(len(pts))])
    return pts


class HamiltonianSpec:
    """Base class for the Hamiltonian families.

    Subclasses provide vectorized evaluation, closed-form radial extents and
    the coercivity bounds alpha(lambda) <= rho <= M(lambda).
    """
    kind: HamiltonianKind
    flags: AssumptionFlags = AssumptionFlags()
    spatially_uniform = True
    radially_symmetric = True
    is_even = True

    def h(self, points: np.ndarray, p: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def extents(self, points: np.ndarray, dirs: np.ndarray, lam: float) -> np.ndarray:
        """Radial extents, shape (len(points), len(dirs))."""
        raise NotImplementedError

    def alpha(self, lam: float) -> float:
        raise NotImplementedError

    def big_m(self, lam: float) -> float:
        raise NotImplementedError

    def metric_scale(self, lam: float) -> Optional[float]:
        """phi(lambda) with L_lambda = phi(lambda) * L_ref when the family scales."""
        return None

    def left_gap(self, lam: float, delta: float) -> float:
        """sup over x, e of rho(x, e, lam) - rho(x, e, lam - delta)."""
        dirs = unit_directions(HAMILTONIAN_SETTINGS['n_dirs'])
        origin = np.zeros((1, 2))
        lower = max(lam - delta, 0.0)
        return float(np.max(self.extents(origin, dirs, lam) - self.extents(origin, dirs, lower)))

    def describe(self) -> dict:
        return {'kind': self.kind.value, 'flags': asdict(self.flags)}


class IsotropicPower(HamiltonianSpec):
    """H(p) = |p|^s / s (s = 1 is the Euclidean norm)."""
    kind = HamiltonianKind.ISOTROPIC_POWER

    def __init__(self, exponent: float = 1.0):
        if exponent <= 0:
            raise ValueError(f"Exponent must be positive, got {exponent}")
        self.exponent = float(exponent)

    def h(self, points, p):
        r = np.linalg.norm(np.atleast_2d(p), axis=-1)
        return r ** self.exponent / self.exponent

    def _rho(self, lam: float) -> float:
        if lam <= 0:
            return 0.0
        return float((self.exponent * lam) ** (1.0 / self.exponent))

    def extents(self, points, dirs, lam):
        return np.full((len(points), len(dirs)), self._rho(lam))

    def alpha(self, lam):
        return self._rho(lam)

    def big_m(self, lam):
        return self._rho(lam)

    def metric_scale(self, lam):
        return self._rho(lam)

    def left_gap(self, lam, delta):
        return self._rho(lam) - self._rho(max(lam - delta, 0.0))


class ConstantWeight:
    def __init__(self, value: float):
        if value <= 0:
            raise ValueError(f"Weight must be positive, got {value}")
        self.value = float(value)

    def __call__(self, points: np.ndarray) -> np.ndarray:
        return np.full(len(points), self.value)

    def lower_bound(self) -> float:
        return self.value

    def upper_bound(self) -> float:
        return self.value


class AffineWeight:
    """w(x, y) = c0 + cx * x + cy * y, bounded over a box [lo, hi]."""

    def __init__(self, c0: float, cx: float, cy: float, box: Sequence[float]):
        self.c0, self.cx, self.cy = float(c0), float(cx), float(cy)
        self.box = tuple(float(v) for v in box)

    def __call__(self, points):
        pts = _as_points(points)
        return self.c0 + self.cx * pts[:, 0] + self.cy * pts[:, 1]

    def _corner_values(self):
        x0, y0, x1, y1 = self.box
        corners = np.array([[x0, y0], [x1, y0], [x0, y1], [x1, y1]])
        return self(corners)

    def lower_bound(self):
        return float(self._corner_values().min())

    def upper_bound(self):
        return float(self._corner_values().max())


class BoundaryDistanceWeight:
    """w(x) = dist(x, boundary of the shape); only locally bounded below."""

    def __init__(self, shape):
        self.shape = shape

    def __call__(self, points):
        return self.shape.boundary_distance(_as_points(points))

    def lower_bound(self):
        return 0.0

    def upper_bound(self):
        return float(self.shape.inradius())


class WeightedIsotropic(HamiltonianSpec):
    """H(x, p) = |p| / w(x)."""
    kind = HamiltonianKind.WEIGHTED_ISOTROPIC
    spatially_uniform = False

    def __init__(self, weight, alpha_floor: float = 0.0):
        self.weight = weight
        self.alpha_floor = float(alpha_floor)
        lower = max(weight.lower_bound(), self.alpha_floor)
        self.flags = AssumptionFlags(d='global' if weight.lower_bound() > 0 else 'local')
        if lower <= 0:
            logger.warning("Weighted Hamiltonian satisfies (D) only on compact subsets; "
                           "alpha(lambda) is 0 on the full domain")

    def h(self, points, p):
        w = self.weight(_as_points(points))
        if np.any(w <= 0):
            raise HamiltonianDomainError("Weight w(x) must be positive where H is evaluated")
        return np.linalg.norm(np.atleast_2d(p), axis=-1) / w

    def extents(self, points, dirs, lam):
        w = np.maximum(self.weight(_as_points(points)), 0.0)
        return np.repeat((lam * w)[:, None], len(dirs), axis=1)

    def alpha(self, lam):
        return lam * max(self.weight.lower_bound(), self.alpha_floor)

    def big_m(self, lam):
        return lam * self.weight.upper_bound()

    def metric_scale(self, lam):
        return float(lam)

    def left_gap(self, lam, delta):
        return min(delta, lam) * self.weight.upper_bound()


class AnisotropicNorm(HamiltonianSpec):
    """H(p) = sqrt(p . A p) for a symmetric positive-definite A."""
    kind = HamiltonianKind.ANISOTROPIC_NORM
    radially_symmetric = False

    def __init__(self, matrix):
        a = np.asarray(matrix, dtype=float)
        if a.shape != (2, 2) or not np.allclose(a, a.T):
            raise ValueError("Anisotropic matrix must be a symmetric 2x2 array")
        eig = np.linalg.eigvalsh(a)
        if eig.min() <= 0:
            raise ValueError(f"Anisotropic matrix must be positive definite, eigenvalues {eig}")
        self.matrix = a
        self.inverse = np.linalg.inv(a)
        self._eig = eig

    def h(self, points, p):
        p = np.atleast_2d(p)
        return np.sqrt(np.einsum('ni,ij,nj->n', p, self.matrix, p))

    def extents(self, points, dirs, lam):
        quad = np.einsum('di,ij,dj->d', dirs, self.matrix, dirs)
        return np.repeat((lam / np.sqrt(quad))[None, :], len(points), axis=0)

    def alpha(self, lam):
        return lam / np.sqrt(self._eig.max())

    def big_m(self, lam):
        return lam / np.sqrt(self._eig.min())

    def metric_scale(self, lam):
        return float(lam)

    def exact_support(self, q, lam: float) -> float:
        q = np.asarray(q, dtype=float)
        return float(lam * np.sqrt(q @ self.inverse @ q))


class PlateauRadial(HamiltonianSpec):
    """Radial H with a flat level: |p| below a, a on [a, b], |p| - (b - a) beyond b.

    The level {H = a} has nonempty interior, so assumption (E) fails.
    """
    kind = HamiltonianKind.PLATEAU_RADIAL
    flags = AssumptionFlags(e=False)

    def __init__(self, a: float = 0.5, b: float = 0.75):
        if not 0 < a < b:
            raise ValueError(f"Plateau breakpoints need 0 < a < b, got a={a}, b={b}")
        self.a, self.b = float(a), float(b)

    def h(self, points, p):
        r = np.linalg.norm(np.atleast_2d(p), axis=-1)
        return np.where(r < self.a, r, np.where(r <= self.b, self.a, r - (self.b - self.a)))

    def _rho(self, lam: float) -> float:
        if lam + HAMILTONIAN_SETTINGS['membership_slack'] < self.a:
            return max(float(lam), 0.0)
        return float(lam) + (self.b - self.a)

    def extents(self, points, dirs, lam):
        return np.full((len(points), len(dirs)), self._rho(lam))

    def alpha(self, lam):
        return self._rho(lam)

    def big_m(self, lam):
        return self._rho(lam)

    def metric_scale(self, lam):
        return self._rho(lam)

    def left_gap(self, lam, delta):
        return self._rho(lam) - self._rho(max(lam - delta, 0.0))


class TabulatedRadial(HamiltonianSpec):
    """Per-node tables rho[node, direction, lambda_index] on a uniform grid.

    Extents are linear in lambda and periodic-linear in the direction angle;
    points map to their nearest grid node.
    """
    kind = HamiltonianKind.TABULATED_RADIAL
    spatially_uniform = False
    radially_symmetric = False
    is_even = False

    def __init__(self, table: np.ndarray, lambdas: Sequence[float], origin: Sequence[float],
                 h: float, nx: int, ny: int, assume_e: bool = True):
        table = np.asarray(table, dtype=float)
        lambdas = np.asarray(lambdas, dtype=float)
        if table.ndim != 3 or table.shape[0] != nx * ny or table.shape[2] != len(lambdas):
            raise ValueError(f"Table shape {table.shape} does not match grid {nx}x{ny} "
                             f"and {len(lambdas)} lambda values")
        if lambdas[0] != 0 or np.any(np.diff(lambdas) <= 0):
            raise ValueError("Tabulated lambdas must start at 0 and increase strictly")
        if np.any(np.diff(table, axis=2) < 0):
            raise ValueError("Tabulated radial extents must be non-decreasing in lambda")
        self.table = table
        self.lambdas = lambdas
        self.origin = np.asarray(origin, dtype=float)
        self.h_grid = float(h)
        self.nx, self.ny = int(nx), int(ny)
        self.n_table_dirs = table.shape[1]
        self.flags = AssumptionFlags(e=assume_e)

    def _nodes(self, points):
        pts = _as_points(points)
        i = np.clip(np.rint((pts[:, 0] - self.origin[0]) / self.h_grid), 0, self.nx - 1)
        j = np.clip(np.rint((pts[:, 1] - self.origin[1]) / self.h_grid), 0, self.ny - 1)
        return (j * self.nx + i).astype(int)

    def _at_lambda(self, lam: float) -> np.ndarray:
        k = int(np.clip(np.searchsorted(self.lambdas, lam, side='right') - 1, 0, len(self.lambdas) - 2))
        frac = (lam - self.lambdas[k]) / (self.lambdas[k + 1] - self.lambdas[k])
        return np.maximum(self.table[:, :, k] * (1 - frac) + self.table[:, :, k + 1] * frac, 0.0)

    def _dir_weights(self, dirs):
        theta = np.mod(np.arctan2(dirs[:, 1], dirs[:, 0]), 2 * np.pi)
        pos = theta / (2 * np.pi) * self.n_table_dirs
        k0 = np.floor(pos).astype(int) % self.n_table_dirs
        k1 = (k0 + 1) % self.n_table_dirs
        return k0, k1, pos - np.floor(pos)

    def extents(self, points, dirs, lam):
        layer = self._at_lambda(lam)[self._nodes(points)]
        k0, k1, frac = self._dir_weights(np.atleast_2d(dirs))
        return layer[:, k0] * (1 - frac) + layer[:, k1] * frac

    def h(self, points, p):
        p = np.atleast_2d(p)
        pts = _as_points(points)
        if len(pts) == 1 and len(p) > 1:
            pts = np.repeat(pts, len(p), axis=0)
        r = np.linalg.norm(p, axis=-1)
        safe = np.where(r[:, None] > 0, p / np.maximum(r, 1e-300)[:, None], [[1.0, 0.0]])
        k0, k1, frac = self._dir_weights(safe)
        rows = self.table[self._nodes(pts)]
        profiles = rows[np.arange(len(pts)), k0] * (1 - frac)[:, None] + \
            rows[np.arange(len(pts)), k1] * frac[:, None]
        out = np.empty(len(pts))
        for n, (radius, prof) in enumerate(zip(r, profiles)):
            if radius <= prof[-1]:
                out[n] = np.interp(radius, prof, self.lambdas)
            else:
                slope = (self.lambdas[-1] - self.lambdas[-2]) / max(prof[-1] - prof[-2], 1e-300)
                out[n] = self.lambdas[-1] + slope * (radius - prof[-1])
        return out

    def alpha(self, lam):
        return float(self._at_lambda(lam).min())

    def big_m(self, lam):
        return float(self._at_lambda(lam).max())

    def left_gap(self, lam, delta):
        return float(np.max(self._at_lambda(lam) - self._at_lambda(max(lam - delta, 0.0))))


def load_tabulated_radial(path, lambdas: Sequence[float], n_table_dirs: int, origin, h: float,
                          nx: int, ny: int, assume_e: bool = True) -> TabulatedRadial:
    """Load a TabulatedRadial from a CSV of node_index,direction_index,lambda_index,rho."""
    frame = pd.read_csv(path)
    missing = {'node_index', 'direction_index', 'lambda_index', 'rho'} - set(frame.columns)
    if missing:
        raise ValueError(f"Tabulated CSV {path} is missing columns {sorted(missing)}")
    table = np.full((nx * ny, n_table_dirs, len(lambdas)), np.nan)
    table[frame['node_index'].to_numpy(int), frame['direction_index'].to_numpy(int),
          frame['lambda_index'].to_numpy(int)] = frame['rho'].to_numpy(float)
    if np.isnan(table).any():
        # nodes absent from the file (outside the domain) get the table-wide mean profile
        fill = np.nanmean(table, axis=0)
        rows = np.isnan(table).any(axis=(1, 2))
        table[rows] = fill
    logger.info(f"Loaded tabulated Hamiltonian from {path} ({len(frame)} rows)")
    return TabulatedRadial(table, lambdas, origin, h, nx, ny, assume_e=assume_e)


def eval_h(spec: HamiltonianSpec, x, p) -> float:
    """H(x, p) at a single point."""
    p = np.asarray(p, dtype=float)
    if not np.all(np.isfinite(p)):
        raise ValueError(f"Momentum must be finite, got {p}")
    return float(spec.h(_as_points(x), _as_points(p))[0])


def bisect_extents(spec: HamiltonianSpec, points, dirs, lam: float,
                   tol_rho: Optional[float] = None) -> np.ndarray:
    """Radial extents by exponential search and membership bisection.

    Returns an array of shape (len(points), len(dirs)).
    """
    pts = _as_points(points)
    dirs = np.atleast_2d(np.asarray(dirs, dtype=float))
    m = spec.big_m(lam)
    if m <= 0:
        return np.zeros((len(pts), len(dirs)))
    slack = HAMILTONIAN_SETTINGS['membership_slack']
    tol = tol_rho if tol_rho is not None else HAMILTONIAN_SETTINGS['tol_rho_rel'] * m

    xs = np.repeat(pts, len(dirs), axis=0)
    es = np.tile(dirs, (len(pts), 1))

    def inside(t):
        return spec.h(xs, t[:, None] * es) <= lam + slack

    cap = m * (1 + 1e-9) + tol
    lo = np.zeros(len(xs))
    hi = np.full(len(xs), min(max(spec.alpha(lam), m * 1e-3), cap))
    for _ in range(200):
        grow = inside(hi) & (hi < cap)
        if not grow.any():
            break
        lo[grow] = hi[grow]
        hi[grow] = np.minimum(hi[grow] * 2, cap)
    # bound M(lambda) reached without leaving the sublevel
    lo = np.where(inside(hi), hi, lo)
    while np.max(hi - lo) > tol:
        mid = 0.5 * (lo + hi)
        ok = inside(mid)
        lo = np.where(ok, mid, lo)
        hi = np.where(ok, hi, mid)
    return lo.reshape(len(pts), len(dirs))


def radial_extent(spec: HamiltonianSpec, x, e, lam: float) -> float:
    """rho = sup{t >= 0 : H(x, t e) <= lam}."""
    e = np.asarray(e, dtype=float)
    if abs(np.linalg.norm(e) - 1.0) > 1e-12:
        raise ValueError(f"Direction must be a unit vector, got {e}")
    if lam < 0:
        raise ValueError(f"Lambda must be non-negative, got {lam}")
    return float(bisect_extents(spec, _as_points(x), e[None, :], lam)[0, 0])


def support_values(spec: HamiltonianSpec, points, q, lam: float,
                   n_dirs: Optional[int] = None) -> np.ndarray:
    """L_lambda(x, q) for every point and every q, shape (len(points), len(q)).

    The maximization runs over n_dirs uniform directions plus q/|q| itself.
    """
    n_dirs = n_dirs or HAMILTONIAN_SETTINGS['n_dirs']
    pts = _as_points(points)
    q = np.atleast_2d(np.asarray(q, dtype=float))
    norms = np.linalg.norm(q, axis=1)
    qhat = np.where(norms[:, None] > 0, q / np.maximum(norms, 1e-300)[:, None], [[1.0, 0.0]])
    own = spec.extents(pts, qhat, lam) * norms[None, :]
    if spec.radially_symmetric:
        return np.maximum(own, 0.0)
    dirs = unit_directions(n_dirs)
    ext = spec.extents(pts, dirs, lam)
    proj = dirs @ q.T
    best = np.max(ext[:, :, None] * proj[None, :, :], axis=1)
    return np.maximum(np.maximum(best, own), 0.0)


def conjugate_l(spec: HamiltonianSpec, x, q, lam: float, n_dirs: Optional[int] = None) -> float:
    """Quasi-convex conjugate L_lambda(x, q)."""
    n_dirs = n_dirs or HAMILTONIAN_SETTINGS['n_dirs']
    if n_dirs < 8:
        raise ValueError(f"n_dirs must be at least 8, got {n_dirs}")
    if lam < 0:
        raise ValueError(f"Lambda must be non-negative, got {lam}")
    return float(support_values(spec, _as_points(x), np.asarray(q, dtype=float)[None, :],
                                lam, n_dirs)[0, 0])


def polar_value(spec: HamiltonianSpec, x, p, lam: float, n_dirs: Optional[int] = None) -> float:
    """sup{p.q : L_lambda(x, q) <= 1} over sampled q; at most 1 when H(x, p) <= lambda."""
    n_dirs = n_dirs or HAMILTONIAN_SETTINGS['n_dirs']
    dirs = unit_directions(4 * n_dirs)
    lengths = support_values(spec, _as_points(x), dirs, lam, n_dirs)[0]
    usable = lengths > 0
    if not usable.any():
        return float('inf') if np.linalg.norm(p) > 0 else 0.0
    values = (dirs[usable] @ np.asarray(p, dtype=float)) / lengths[usable]
    return float(max(values.max(), 0.0))
