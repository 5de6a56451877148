"""
Plain-text output formats: CSV tables, field dumps and PGM (P2) images.

PGM images store 16-bit gray levels; the header comment records the affine
map back to field values: value = offset + scale * level.
"""

import csv
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence, Union

import numpy as np

from growthlab.grid_core import ScalarField
from growthlab.logger import Logger

logger = Logger()

PGM_MAX = 65535
PathLike = Union[str, Path]


def write_rows(path: PathLike, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    """CSV with a header row; floats are written with repr precision."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open('w', newline='') as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        count = 0
        for row in rows:
            writer.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
            count += 1
    logger.debug(f"wrote {count} rows to {path}")
    return path


def write_records(path: PathLike, records: Sequence[Mapping]) -> Path:
    """CSV from a list of dicts sharing the same keys."""
    if not records:
        return write_rows(path, [], [])
    header = list(records[0].keys())
    return write_rows(path, header, ([r[k] for k in header] for r in records))


def read_rows(path: PathLike) -> list:
    with Path(path).open(newline='') as fh:
        return list(csv.DictReader(fh))


def write_field_csv(path: PathLike, f: ScalarField, mask: Optional[np.ndarray] = None) -> Path:
    """One row per node: x, y, value (restricted to mask when given)."""
    X, Y = f.spec.nodes()
    keep = np.ones(f.spec.shape, dtype=bool) if mask is None else mask
    return write_rows(path, ['x', 'y', 'value'],
                      zip(X[keep].tolist(), Y[keep].tolist(), f.values[keep].tolist()))


def write_pgm(path: PathLike, values: np.ndarray) -> Path:
    """
    Write a 2-D array as an ASCII PGM with max value 65535.

    Row 0 of the image is the top of the grid (largest y).
    """
    values = np.asarray(values, dtype=float)
    lo, hi = float(values.min()), float(values.max())
    scale = (hi - lo) / PGM_MAX if hi > lo else 1.0
    levels = np.rint((values - lo) / scale).astype(np.int64) if hi > lo else np.zeros(values.shape, np.int64)
    levels = np.flipud(np.clip(levels, 0, PGM_MAX))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    ny, nx = levels.shape
    with path.open('w') as fh:
        fh.write('P2\n')
        fh.write(f'# value = {lo!r} + {scale!r} * level\n')
        fh.write(f'{nx} {ny}\n{PGM_MAX}\n')
        for row in levels:
            fh.write(' '.join(str(v) for v in row))
            fh.write('\n')
    return path


def read_pgm(path: PathLike) -> np.ndarray:
    """Read a file written by write_pgm back into field values (grid orientation)."""
    tokens, offset, scale = [], 0.0, 1.0
    with Path(path).open() as fh:
        for line in fh:
            if line.startswith('#'):
                parts = line[1:].replace('=', ' ').replace('+', ' ').replace('*', ' ').split()
                offset, scale = float(parts[1]), float(parts[2])
                continue
            tokens.extend(line.split())
    if tokens[0] != 'P2':
        raise ValueError(f"{path} is not an ASCII PGM file")
    nx, ny = int(tokens[1]), int(tokens[2])
    levels = np.array(tokens[4:4 + nx * ny], dtype=float).reshape(ny, nx)
    return offset + scale * np.flipud(levels)
