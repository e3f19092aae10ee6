"""
Field, node-list, heatmap and JSON serialization.
"""
import json
import logging
import math
from pathlib import Path
from typing import Iterable, Optional

import imageio.v3 as iio
import numpy as np
import pandas as pd

from config.config import OUTPUT_SETTINGS
from src.domain_grid import GridDomain, ScalarField

logger = logging.getLogger(__name__)

FIELD_COLUMNS = ['i', 'j', 'x', 'y', 'value']


def _ensure_parent(path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def field_frame(field: ScalarField, dom: GridDomain) -> pd.DataFrame:
    nodes = np.arange(dom.n_nodes)
    xy = dom.coords(nodes)
    return pd.DataFrame({
        'i': nodes % dom.nx,
        'j': nodes // dom.nx,
        'x': xy[:, 0],
        'y': xy[:, 1],
        'value': np.where(dom.inside, field.values, np.nan),
    }, columns=FIELD_COLUMNS)


def write_field(field: ScalarField, dom: GridDomain, path) -> None:
    """CSV with header i,j,x,y,value in row-major node order; NaN outside the domain."""
    if len(field.values) != dom.n_nodes:
        raise ValueError(f"Field {field.name} has {len(field.values)} values for {dom.n_nodes} nodes")
    path = _ensure_parent(path)
    field_frame(field, dom).to_csv(path, index=False, float_format=OUTPUT_SETTINGS['float_format'],
                                   na_rep='NaN')
    logger.info(f"Wrote field {field.name} to {path}")


def _read_frame(path) -> pd.DataFrame:
    frame = pd.read_csv(path, float_precision='round_trip')
    missing = set(FIELD_COLUMNS) - set(frame.columns)
    if missing:
        raise ValueError(f"Field CSV {path} is missing columns {sorted(missing)}")
    return frame


def read_field(path, dom: Optional[GridDomain] = None, name: Optional[str] = None) -> ScalarField:
    """Inverse of write_field; with dom, rows are placed by (i, j) and checked against the grid."""
    frame = _read_frame(path)
    name = name or Path(path).stem
    if dom is None:
        return ScalarField(frame['value'].to_numpy(dtype=float), name)
    i = frame['i'].to_numpy(dtype=int)
    j = frame['j'].to_numpy(dtype=int)
    if np.any((i < 0) | (i >= dom.nx) | (j < 0) | (j >= dom.ny)):
        raise ValueError(f"Field CSV {path} has nodes outside the {dom.nx}x{dom.ny} grid")
    values = np.full(dom.n_nodes, np.nan)
    values[j * dom.nx + i] = frame['value'].to_numpy(dtype=float)
    values[~dom.inside] = np.nan
    return ScalarField(values, name)


def read_boundary_csv(path, dom: GridDomain) -> ScalarField:
    """Boundary data in the field CSV layout; only boundary rows are used, all must be present."""
    field = read_field(path, dom, name='g')
    values = np.full(dom.n_nodes, np.nan)
    b = dom.boundary_nodes
    values[b] = field.values[b]
    missing = b[~np.isfinite(values[b])]
    if len(missing):
        raise ValueError(f"Boundary CSV {path} has no finite value for {len(missing)} boundary nodes "
                         f"(first: {[dom.ij(n) for n in missing[:3]]})")
    return ScalarField(values, 'g')


def write_node_list(nodes: Iterable[int], dom: GridDomain, path) -> None:
    nodes = np.asarray(list(nodes), dtype=int)
    xy = dom.coords(nodes)
    frame = pd.DataFrame({'node': nodes, 'i': nodes % dom.nx, 'j': nodes // dom.nx,
                          'x': xy[:, 0], 'y': xy[:, 1]})
    path = _ensure_parent(path)
    frame.to_csv(path, index=False, float_format=OUTPUT_SETTINGS['float_format'])
    logger.info(f"Wrote {len(nodes)} nodes to {path}")


def read_pgm(path) -> np.ndarray:
    """Read a P2 (ASCII) or P5 (binary) PGM; rows are returned top row first.

    Pixel values come back scaled to the 8-bit range when maxval is below 255.
    """
    try:
        raster = iio.imread(path, plugin='pillow')
    except (OSError, ValueError, SyntaxError) as e:
        raise ValueError(f"Could not read PGM {path}: {e}") from e
    if raster.ndim != 2:
        raise ValueError(f"{path} is not a grayscale PGM (array shape {raster.shape})")
    return raster.astype(int)


def write_heatmap(field: ScalarField, dom: GridDomain, path) -> None:
    """8-bit P5 heatmap (min -> 0, max -> 255, NaN -> 0) plus a <name>.scale.json sidecar."""
    values = np.where(dom.inside, field.values, np.nan).reshape(dom.ny, dom.nx)[::-1]
    finite = np.isfinite(values)
    lo = float(values[finite].min()) if finite.any() else 0.0
    hi = float(values[finite].max()) if finite.any() else 0.0
    span = hi - lo
    scaled = np.zeros(values.shape)
    if span > 0:
        scaled[finite] = (values[finite] - lo) / span * 255.0
    pixels = np.where(finite, np.rint(scaled), 0).astype(np.uint8)
    path = _ensure_parent(path)
    iio.imwrite(path, pixels, plugin='pillow', extension='.pgm')
    write_json({'field': field.name, 'min': lo, 'max': hi}, path.with_suffix('.scale.json'))
    logger.info(f"Wrote heatmap of {field.name} to {path}")


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        value = float(obj)
        return value if math.isfinite(value) else None
    return obj


def write_json(obj, path) -> None:
    """Sorted-key JSON; non-finite floats become null."""
    path = _ensure_parent(path)
    with open(path, 'w') as fh:
        json.dump(_plain(obj), fh, sort_keys=True, indent=2)
        fh.write('\n')


def write_scalar(value: float, path) -> None:
    path = _ensure_parent(path)
    path.write_text(OUTPUT_SETTINGS['float_format'] % value + '\n')
