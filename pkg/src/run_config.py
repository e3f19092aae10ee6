"""
Run configuration: strict JSON documents with defaults from config/config.py,
plus factories for the domain, Hamiltonian and boundary data they describe.
"""
import copy
import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np

from config.config import (DISTANCE_SETTINGS, GRID_SETTINGS, HAMILTONIAN_SETTINGS, OUTPUT_SETTINGS,
                           POINTWISE_SETTINGS, SOLVER_SETTINGS, VERIFY_SETTINGS)
from src.domain_grid import Annulus, Box, Disc, GridDomain, MaskShape, ScalarField, Shape, SlitAnnulus, build_domain
from src.errors import ConfigError, DomainConstructionError
from src.field_io import read_boundary_csv, read_pgm
from src.hamiltonian import (AffineWeight, AnisotropicNorm, BoundaryDistanceWeight, ConstantWeight, HamiltonianSpec,
                             IsotropicPower, PlateauRadial, WeightedIsotropic, load_tabulated_radial)

logger = logging.getLogger(__name__)

_LENGTH = re.compile(r'^\s*([0-9]*\.?[0-9]+(?:[eE][-+]?[0-9]+)?)\s*h\s*$')

SHAPE_PARAMS = {
    'box': {'x0': 0.0, 'y0': 0.0, 'x1': 1.0, 'y1': 1.0},
    'interval': {'x0': 0.0, 'x1': 1.0},
    'disc': {'cx': 0.0, 'cy': 0.0, 'radius': 1.0},
    'annulus': {'cx': 0.0, 'cy': 0.0, 'r_in': 1.0, 'r_out': 2.0},
    'slit-annulus': {'cx': 0.0, 'cy': 0.0, 'r_in': 1.0, 'r_out': 2.0},
    'mask': {'path': None, 'origin': [0.0, 0.0]},
}

HAMILTONIAN_PARAMS = {
    'isotropic-power': {'exponent': 1.0},
    'weighted-isotropic': {'weight': {'kind': 'boundary-distance'}, 'alpha_floor': 0.0},
    'anisotropic-norm': {'matrix': [[1.0, 0.0], [0.0, 1.0]]},
    'plateau-radial': {'a': HAMILTONIAN_SETTINGS['plateau_breakpoints'][0],
                       'b': HAMILTONIAN_SETTINGS['plateau_breakpoints'][1]},
    'tabulated-radial': {'path': None, 'lambdas': None, 'n_table_dirs': None, 'assume_e': True},
}

WEIGHT_PARAMS = {
    'boundary-distance': {},
    'constant': {'value': 1.0},
    'affine': {'c0': 1.0, 'cx': 0.0, 'cy': 0.0},
}

BOUNDARY_PARAMS = {
    'linear': {'a': 1.0, 'b': 0.0, 'c': 0.0},
    'two-arc': {'arc_lo': 0.4, 'arc_hi': 0.6, 'slope': 1.2, 'value': 1.0},
    'constant': {'value': 0.0},
    'cone': {'x0': [0.0, 0.0], 'scale': 1.0},
    'custom-csv': {'path': None},
}

BLOCK_DEFAULTS = {
    'domain': {'shape': {'kind': 'box'}, 'h': None, 'stencil_k': GRID_SETTINGS['stencil_k']},
    'hamiltonian': {'kind': 'isotropic-power', 'n_dirs': HAMILTONIAN_SETTINGS['n_dirs']},
    'boundary': {'kind': 'linear'},
    'distance': {'n_quad': DISTANCE_SETTINGS['n_quad']},
    'solver': {
        'tol_lambda': None,
        'lambda_cap': SOLVER_SETTINGS['lambda_cap'],
        'patch_radius': f"{SOLVER_SETTINGS['patch_radius_h']}h",
        'n_sweeps': SOLVER_SETTINGS['n_sweeps'],
        'rng_seed': SOLVER_SETTINGS['rng_seed'],
        'tol_feas': SOLVER_SETTINGS['tol_feas'],
        'initial_lambda': SOLVER_SETTINGS['initial_lambda'],
        'tol_fix': SOLVER_SETTINGS['tol_fix'],
        'patch_stride': None,
        'tol_field': SOLVER_SETTINGS['tol_field'],
    },
    'pointwise': {
        'radii': [f"{k}h" for k in POINTWISE_SETTINGS['radii_h']],
        'tau': None,
        'tau_fat': None,
        'chain_rel_tol': POINTWISE_SETTINGS['chain_rel_tol'],
        'n_chain_seeds': POINTWISE_SETTINGS['n_chain_seeds'],
    },
    'output': {
        'prefix': OUTPUT_SETTINGS['prefix'],
        'emit_heatmaps': OUTPUT_SETTINGS['emit_heatmaps'],
        'record': OUTPUT_SETTINGS['record'],
    },
    'verify': {
        'fixtures': list(VERIFY_SETTINGS['fixtures']),
        'h_scale': VERIFY_SETTINGS['h_scale'],
        'check_tolerance_scale': VERIFY_SETTINGS['check_tolerance_scale'],
    },
}

# blocks whose parameters depend on their 'kind'
KIND_BLOCKS = ('hamiltonian', 'boundary')


@dataclass
class RunConfig:
    domain: Dict[str, Any]
    hamiltonian: Dict[str, Any]
    boundary: Dict[str, Any]
    distance: Dict[str, Any]
    solver: Dict[str, Any]
    pointwise: Dict[str, Any]
    output: Dict[str, Any]
    verify: Dict[str, Any]
    raw: Dict[str, Any] = field(default_factory=dict)
    base_dir: Path = field(default_factory=Path.cwd)

    @property
    def h(self) -> float:
        return float(self.domain['h'])

    def length(self, value, key_path: str) -> float:
        """Absolute length from a number or a '<k>h' string."""
        return resolve_length(value, self.h, key_path)

    @property
    def patch_radius(self) -> float:
        return self.length(self.solver['patch_radius'], 'solver.patch_radius')

    @property
    def radii(self):
        return [self.length(r, f'pointwise.radii[{k}]') for k, r in enumerate(self.pointwise['radii'])]


def resolve_length(value, h: float, key_path: str) -> float:
    if isinstance(value, bool):
        raise ConfigError(f"expected a length, got {value!r}", key_path=key_path)
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, str):
        match = _LENGTH.match(value)
        if match:
            return float(match.group(1)) * h
    raise ConfigError(f"expected a number or '<k>h', got {value!r}", key_path=key_path)


def _merge(user: Any, defaults: Dict[str, Any], key_path: str) -> Dict[str, Any]:
    if not isinstance(user, dict):
        raise ConfigError(f"expected an object, got {type(user).__name__}", key_path=key_path)
    unknown = sorted(set(user) - set(defaults))
    if unknown:
        raise ConfigError(f"unknown key '{unknown[0]}' (allowed: {sorted(defaults)})",
                          key_path=f"{key_path}.{unknown[0]}" if key_path else unknown[0])
    merged = copy.deepcopy(defaults)
    merged.update(copy.deepcopy(user))
    return merged


def _merge_kind(user: Any, table: Dict[str, Dict], key_path: str, default_kind: str,
                extra: Optional[Dict] = None) -> Dict[str, Any]:
    """Merge a {'kind': ..., params} block against the parameter table of its kind."""
    if not isinstance(user, dict):
        raise ConfigError(f"expected an object, got {type(user).__name__}", key_path=key_path)
    kind = user.get('kind', default_kind)
    if kind not in table:
        raise ConfigError(f"unknown kind {kind!r} (allowed: {sorted(table)})", key_path=f"{key_path}.kind")
    defaults = dict(table[kind], kind=kind, **(extra or {}))
    return _merge(user, defaults, key_path)


def _require(value, predicate, message: str, key_path: str):
    if value is None or isinstance(value, bool) or not predicate(value):
        raise ConfigError(message.format(value=value), key_path=key_path)


def _validate(cfg: RunConfig):
    _require(cfg.domain['h'], lambda v: isinstance(v, (int, float)) and v > 0,
             "h must be a positive number, got {value!r}", 'domain.h')
    allowed = GRID_SETTINGS['allowed_stencils']
    if cfg.domain['stencil_k'] not in allowed:
        raise ConfigError(f"stencil_k must be one of {{{', '.join(str(k) for k in allowed)}}}, "
                          f"got {cfg.domain['stencil_k']!r}", key_path='domain.stencil_k')
    _require(cfg.hamiltonian['n_dirs'], lambda v: isinstance(v, int) and v >= 8,
             "n_dirs must be an integer >= 8, got {value!r}", 'hamiltonian.n_dirs')
    _require(cfg.distance['n_quad'], lambda v: isinstance(v, int) and v >= 2,
             "n_quad must be an integer >= 2, got {value!r}", 'distance.n_quad')

    solver = cfg.solver
    for key in ('lambda_cap', 'tol_feas', 'initial_lambda', 'tol_fix', 'tol_field'):
        _require(solver[key], lambda v: isinstance(v, (int, float)) and v > 0,
                 key + " must be positive, got {value!r}", f'solver.{key}')
    if solver['tol_lambda'] is not None:
        _require(solver['tol_lambda'], lambda v: isinstance(v, (int, float)) and v > 0,
                 "tol_lambda must be positive, got {value!r}", 'solver.tol_lambda')
    _require(solver['n_sweeps'], lambda v: isinstance(v, int) and v >= 0,
             "n_sweeps must be a non-negative integer, got {value!r}", 'solver.n_sweeps')
    _require(solver['rng_seed'], lambda v: isinstance(v, int),
             "rng_seed must be an integer, got {value!r}", 'solver.rng_seed')
    if solver['patch_stride'] is not None:
        _require(solver['patch_stride'], lambda v: isinstance(v, int) and v >= 1,
                 "patch_stride must be a positive integer, got {value!r}", 'solver.patch_stride')
    if cfg.patch_radius < 2 * cfg.h:
        raise ConfigError(f"patch_radius must be at least 2h, got {cfg.patch_radius:g}", key_path='solver.patch_radius')

    pw = cfg.pointwise
    if not isinstance(pw['radii'], list) or not pw['radii']:
        raise ConfigError("radii must be a non-empty list", key_path='pointwise.radii')
    radii = cfg.radii
    if any(b >= a for a, b in zip(radii[:-1], radii[1:])):
        raise ConfigError(f"radii must be strictly decreasing, got {radii}", key_path='pointwise.radii')
    if radii[-1] < POINTWISE_SETTINGS['min_radius_h'] * cfg.h * (1 - 1e-9):
        raise ConfigError(f"smallest radius must be at least {POINTWISE_SETTINGS['min_radius_h']}h",
                          key_path='pointwise.radii')
    for key in ('tau', 'tau_fat'):
        if pw[key] is not None:
            _require(pw[key], lambda v: isinstance(v, (int, float)) and v >= 0,
                     key + " must be non-negative, got {value!r}", f'pointwise.{key}')
    _require(pw['chain_rel_tol'], lambda v: isinstance(v, (int, float)) and v > 0,
             "chain_rel_tol must be positive, got {value!r}", 'pointwise.chain_rel_tol')
    _require(pw['n_chain_seeds'], lambda v: isinstance(v, int) and v >= 0,
             "n_chain_seeds must be a non-negative integer, got {value!r}", 'pointwise.n_chain_seeds')

    ver = cfg.verify
    unknown = sorted(set(ver['fixtures']) - set(VERIFY_SETTINGS['fixtures']))
    if unknown:
        raise ConfigError(f"unknown fixture {unknown[0]!r} (allowed: {list(VERIFY_SETTINGS['fixtures'])})",
                          key_path='verify.fixtures')
    _require(ver['h_scale'], lambda v: isinstance(v, (int, float)) and v > 0,
             "h_scale must be positive, got {value!r}", 'verify.h_scale')
    _require(ver['check_tolerance_scale'], lambda v: isinstance(v, (int, float)) and v >= 0,
             "check_tolerance_scale must be non-negative, got {value!r}", 'verify.check_tolerance_scale')

    for block, key_path in ((cfg.domain['shape'], 'domain.shape'), (cfg.hamiltonian, 'hamiltonian'),
                            (cfg.boundary, 'boundary')):
        if 'path' in block:
            _check_file(cfg, block['path'], f'{key_path}.path')


def _check_file(cfg: RunConfig, path, key_path: str) -> Path:
    if not isinstance(path, str) or not path:
        raise ConfigError(f"a file path is required, got {path!r}", key_path=key_path)
    resolved = (cfg.base_dir / path) if not Path(path).is_absolute() else Path(path)
    if not resolved.exists():
        raise ConfigError(f"file not found: {resolved}", key_path=key_path)
    return resolved


def config_from_dict(doc: Dict[str, Any], base_dir: Optional[Path] = None) -> RunConfig:
    """Validate a parsed document and fill defaults."""
    if not isinstance(doc, dict):
        raise ConfigError("top level must be an object", key_path='$')
    unknown = sorted(set(doc) - set(BLOCK_DEFAULTS))
    if unknown:
        raise ConfigError(f"unknown block (allowed: {sorted(BLOCK_DEFAULTS)})", key_path=unknown[0])
    if 'domain' not in doc:
        raise ConfigError("missing required block", key_path='domain')
    blocks = {name: _merge(doc.get(name, {}), defaults, name)
              for name, defaults in BLOCK_DEFAULTS.items() if name not in KIND_BLOCKS}
    blocks['domain']['shape'] = _merge_kind(blocks['domain']['shape'], SHAPE_PARAMS, 'domain.shape', 'box')
    hamiltonian = _merge_kind(doc.get('hamiltonian', {}), HAMILTONIAN_PARAMS, 'hamiltonian',
                              BLOCK_DEFAULTS['hamiltonian']['kind'],
                              extra={'n_dirs': BLOCK_DEFAULTS['hamiltonian']['n_dirs']})
    if hamiltonian['kind'] == 'weighted-isotropic':
        hamiltonian['weight'] = _merge_kind(hamiltonian['weight'], WEIGHT_PARAMS, 'hamiltonian.weight',
                                            'boundary-distance')
    blocks['hamiltonian'] = hamiltonian
    blocks['boundary'] = _merge_kind(doc.get('boundary', {}), BOUNDARY_PARAMS, 'boundary',
                                     BLOCK_DEFAULTS['boundary']['kind'])
    cfg = RunConfig(**blocks, raw=copy.deepcopy(doc), base_dir=base_dir or Path.cwd())
    _validate(cfg)
    return cfg


def load_config(path) -> RunConfig:
    """Parse and validate a JSON run configuration."""
    path = Path(path)
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise ConfigError(f"file not found: {path}")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(e.msg, line=e.lineno, column=e.colno)
    cfg = config_from_dict(doc, base_dir=path.resolve().parent)
    logger.info(f"Loaded run config {path}")
    return cfg


def build_shape(cfg: RunConfig) -> Shape:
    params = dict(cfg.domain['shape'])
    kind = params.pop('kind')
    try:
        if kind == 'box':
            return Box(**params)
        if kind == 'interval':
            return Box(x0=params['x0'], y0=0.0, x1=params['x1'], y1=0.0)
        if kind == 'disc':
            return Disc(**params)
        if kind == 'annulus':
            return Annulus(**params)
        if kind == 'slit-annulus':
            return SlitAnnulus(**params)
        raster = read_pgm(_check_file(cfg, params['path'], 'domain.shape.path'))
        return MaskShape(mask=raster[::-1] != 0, origin=tuple(params['origin']), h=cfg.h)
    except (DomainConstructionError, TypeError, ValueError) as e:
        raise ConfigError(str(e), key_path='domain.shape')


def build_domain_from_config(cfg: RunConfig, h: Optional[float] = None) -> GridDomain:
    return build_domain(build_shape(cfg), h or cfg.h, cfg.domain['stencil_k'])


def build_hamiltonian(cfg: RunConfig, dom: GridDomain) -> HamiltonianSpec:
    params = cfg.hamiltonian
    kind = params['kind']
    try:
        if kind == 'isotropic-power':
            return IsotropicPower(params['exponent'])
        if kind == 'weighted-isotropic':
            weight = params['weight']
            if weight['kind'] == 'constant':
                w = ConstantWeight(weight['value'])
            elif weight['kind'] == 'affine':
                w = AffineWeight(weight['c0'], weight['cx'], weight['cy'], dom.shape.bounding_box())
            else:
                w = BoundaryDistanceWeight(dom.shape)
            return WeightedIsotropic(w, params['alpha_floor'])
        if kind == 'anisotropic-norm':
            return AnisotropicNorm(params['matrix'])
        if kind == 'plateau-radial':
            return PlateauRadial(params['a'], params['b'])
        if params['lambdas'] is None or params['n_table_dirs'] is None:
            raise ConfigError("tabulated-radial needs 'lambdas' and 'n_table_dirs'", key_path='hamiltonian')
        return load_tabulated_radial(_check_file(cfg, params['path'], 'hamiltonian.path'), params['lambdas'],
                                     params['n_table_dirs'], dom.origin, dom.h, dom.nx, dom.ny, params['assume_e'])
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e), key_path='hamiltonian')


def two_arc_values(dom: GridDomain, points: np.ndarray, arc_lo: float, arc_hi: float, slope: float,
                   value: float) -> np.ndarray:
    """+value on the left arc, -value on the right arc, ramps of the given slope along the perimeter."""
    x0, y0, x1, y1 = dom.shape.bounding_box()
    width, height = x1 - x0, y1 - y0
    perimeter = 2 * (width + height)
    x, y = points[:, 0], points[:, 1]
    gaps = np.column_stack([y - y0, x1 - x, y1 - y, x - x0])
    side = np.argmin(gaps, axis=1)
    t = np.choose(side, [x - x0, width + (y - y0), width + height + (x1 - x), 2 * width + height + (y1 - y)])

    def arc_distance(lo, hi):
        inside = (t >= lo) & (t <= hi)
        gap = np.minimum(np.abs(t - lo), np.abs(t - hi))
        gap = np.minimum(gap, perimeter - np.maximum(np.abs(t - lo), np.abs(t - hi)))
        return np.where(inside, 0.0, gap)

    a_lo, a_hi = y0 + arc_lo * height, y0 + arc_hi * height
    right = arc_distance(width + (a_lo - y0), width + (a_hi - y0))
    left = arc_distance(2 * width + height + (y1 - a_hi), 2 * width + height + (y1 - a_lo))
    return np.maximum(value - slope * left, 0.0) - np.maximum(value - slope * right, 0.0)


def build_boundary(cfg: RunConfig, dom: GridDomain) -> ScalarField:
    """Boundary data g on dom's boundary nodes (NaN elsewhere)."""
    params = cfg.boundary
    kind = params['kind']
    if kind == 'custom-csv':
        try:
            return read_boundary_csv(_check_file(cfg, params['path'], 'boundary.path'), dom)
        except ValueError as e:
            raise ConfigError(str(e), key_path='boundary.path')
    b = dom.boundary_nodes
    pts = dom.coords(b)
    if kind == 'linear':
        values = params['a'] * pts[:, 0] + params['b'] * pts[:, 1] + params['c']
    elif kind == 'constant':
        values = np.full(len(b), float(params['value']))
    elif kind == 'cone':
        centre = np.asarray(params['x0'], dtype=float)[:2]
        values = params['scale'] * np.linalg.norm(pts - centre[None, :], axis=1)
    else:
        if not isinstance(dom.shape, Box) or dom.is_interval:
            raise ConfigError("two-arc boundary data needs a 2-D box domain", key_path='boundary.kind')
        values = two_arc_values(dom, pts, params['arc_lo'], params['arc_hi'], params['slope'], params['value'])
    g = np.full(dom.n_nodes, np.nan)
    g[b] = values
    return ScalarField(g, 'g')
