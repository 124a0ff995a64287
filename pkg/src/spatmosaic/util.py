# -*- coding: utf-8 -*-
"""
    spatmosaic.util
    ~~~~~~~~~~~~~~~

    Miscellaneous helpers shared by the pipeline stages.

    :license: BSD, see LICENSE for more details.
"""
from __future__ import annotations

import logging
import time
from contextlib import contextmanager
from logging import NullHandler

import numpy as np

logger = logging.getLogger('spatmosaic')
logger.addHandler(NullHandler())


def matrix_to_string(matrix, row_headers=None, col_headers=None,
                     fmtfun=lambda x: '{:.4g}'.format(x)):
    """Takes a 2D matrix (as nested list) and returns a tab separated string.
    """
    ret = []
    if col_headers:
        ret.append(('\t' if row_headers else '') + '\t'.join(col_headers))
    if row_headers:
        ret += [rh + '\t' + '\t'.join(fmtfun(f) for f in row)
                for rh, row in zip(row_headers, matrix)]
    else:
        ret += ['\t'.join(fmtfun(f) for f in row)
                for row in matrix]

    return '\n'.join(ret)


def chunks(n, items):
    """Split ``items`` (anything sliceable) into consecutive pieces of size ``n``.

    Args:
        n (int): Size of each piece; the last one may be shorter.
        items (sequence): Sequence or array to split.

    Returns:
        list: Slices of ``items``.

    """
    if n < 1:
        raise ValueError('chunk size must be positive')
    return [items[i:i + n] for i in range(0, len(items), n)]


def derive_seed(master_seed, *keys):
    """Deterministic 32-bit seed for a sub-task of a seeded run.

    The same ``(master_seed, keys)`` always yields the same seed, and
    distinct keys yield statistically independent streams.
    """
    ss = np.random.SeedSequence([int(master_seed)] + [int(k) for k in keys])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def as_coords(points):
    """Coerce locations to a float ``(n, 2)`` array.

    Accepts an array, a list of ``(x, y)`` pairs or of ``Location`` tuples.
    """
    arr = np.asarray(points, dtype=float)
    if arr.ndim == 1 and arr.size == 2:
        arr = arr.reshape(1, 2)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError('locations must have shape (n, 2), got {}'.format(
            arr.shape))
    return arr


def bounding_box(coords):
    """Return ``(xmin, ymin, xmax, ymax)`` of a coordinate array."""
    lo = coords.min(axis=0)
    hi = coords.max(axis=0)
    return float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1])


def regular_grid(nx, ny, bbox, centers=False):
    """Regular ``nx`` by ``ny`` grid over a bounding box.

    With ``centers`` the points sit at cell centres, otherwise the grid
    includes the box edges. Points are ordered row by row (y outer, x inner).
    """
    xmin, ymin, xmax, ymax = bbox
    if centers:
        xs = xmin + (np.arange(nx) + 0.5) * (xmax - xmin) / nx
        ys = ymin + (np.arange(ny) + 0.5) * (ymax - ymin) / ny
    else:
        xs = np.linspace(xmin, xmax, nx) if nx > 1 else np.array([(xmin + xmax) / 2.])
        ys = np.linspace(ymin, ymax, ny) if ny > 1 else np.array([(ymin + ymax) / 2.])
    gx, gy = np.meshgrid(xs, ys)
    return np.column_stack([gx.ravel(), gy.ravel()])


class Stopwatch(object):
    """Accumulates wall-clock seconds per named stage."""

    def __init__(self):
        self.seconds = {}

    @contextmanager
    def stage(self, name):
        start = time.perf_counter()
        try:
            yield
        finally:
            elapsed = time.perf_counter() - start
            self.seconds[name] = self.seconds.get(name, 0.0) + elapsed
            logger.info('[timing] %s took %.2f s', name, elapsed)

    def add(self, name, seconds):
        self.seconds[name] = self.seconds.get(name, 0.0) + seconds
