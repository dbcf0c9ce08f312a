"""
Depth grids and the depth-aware matching cost.

A ``DepthGrid`` is a coarse raster of metric depth; cell ``(row, col)`` covers
pixels ``[col*stride, (col+1)*stride) x [row*stride, (row+1)*stride)`` and row 0
is the top of the image. The matching cost between two boxes adds the Manhattan
distance of their centres (D) to the smallest accumulated depth change along
a monotone 4-connected cell path between the centres (Z).
"""

import itertools
import math
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np
from numba import njit

from apps.core.exceptions import DataError, OracleLimitError, OutOfExtentError, ValidationError
from .config import CostWeights
from .geometry import BBox, Point2, center, manhattan_center_distance

# Exhaustive path enumeration is limited to rectangles of at most this many cells per side
ORACLE_MAX_CELLS = 7

Cell = Tuple[int, int]


@dataclass(frozen=True, eq=False)
class DepthGrid:
    values: np.ndarray
    stride: float = 4.0

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64, copy=True)
        if values.ndim != 2 or values.size == 0:
            raise DataError(f"Depth grid must be a non-empty 2-D array, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise DataError("Depth grid contains non-finite values")
        if np.any(values <= 0):
            raise DataError("Depth grid values must be positive")
        if not (math.isfinite(self.stride) and self.stride > 0):
            raise ValidationError(f"Grid stride must be positive, got {self.stride}",
                                  field_errors={'stride': ['must be > 0']})
        values.setflags(write=False)
        object.__setattr__(self, 'values', values)
        object.__setattr__(self, 'stride', float(self.stride))

    def __eq__(self, other):
        if not isinstance(other, DepthGrid):
            return NotImplemented
        return self.stride == other.stride and np.array_equal(self.values, other.values)

    __hash__ = None

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]

    @property
    def extent(self) -> Tuple[float, float]:
        """Pixel width and height covered by the grid."""
        return self.cols * self.stride, self.rows * self.stride

    @property
    def diagonal_px(self) -> float:
        width, height = self.extent
        return math.hypot(width, height)

    @property
    def diagonal_cells(self) -> float:
        return math.hypot(self.cols, self.rows)

    @property
    def depth_range(self) -> float:
        return float(self.values.max() - self.values.min())

    def contains(self, x: float, y: float) -> bool:
        width, height = self.extent
        return 0.0 <= x <= width and 0.0 <= y <= height

    def cell_of(self, x: float, y: float) -> Cell:
        """Cell containing a pixel; points on the far edge belong to the last cell."""
        if not (math.isfinite(x) and math.isfinite(y)) or not self.contains(x, y):
            raise OutOfExtentError(x, y)
        col = min(int(math.floor(x / self.stride)), self.cols - 1)
        row = min(int(math.floor(y / self.stride)), self.rows - 1)
        return row, col


def sample_depth(grid: DepthGrid, p: Point2) -> float:
    row, col = grid.cell_of(*p)
    return float(grid.values[row, col])


@dataclass(frozen=True)
class PathCost:
    d: float
    z: float
    total: float

    def to_dict(self) -> dict:
        return {'d_cost': self.d, 'z_cost': self.z, 'total_cost': self.total}


def _canonical_pair(a: Cell, b: Cell) -> Tuple[Cell, Cell]:
    return (a, b) if a <= b else (b, a)


def _oriented_window(values: np.ndarray, start: Cell, end: Cell) -> np.ndarray:
    """Sub-rectangle spanned by two cells, flipped so ``start`` sits at [0, 0]."""
    (r0, c0), (r1, c1) = start, end
    row_step = 1 if r1 >= r0 else -1
    col_step = 1 if c1 >= c0 else -1
    rows = np.arange(r0, r1 + row_step, row_step)
    cols = np.arange(c0, c1 + col_step, col_step)
    return np.ascontiguousarray(values[np.ix_(rows, cols)])


@njit(cache=False)
def _monotone_path_min_variation(window):
    rows, cols = window.shape
    acc = np.empty((rows, cols), dtype=np.float64)
    acc[0, 0] = 0.0
    for j in range(1, cols):
        acc[0, j] = acc[0, j - 1] + abs(window[0, j] - window[0, j - 1])
    for i in range(1, rows):
        acc[i, 0] = acc[i - 1, 0] + abs(window[i, 0] - window[i - 1, 0])
        for j in range(1, cols):
            down = acc[i - 1, j] + abs(window[i, j] - window[i - 1, j])
            right = acc[i, j - 1] + abs(window[i, j] - window[i, j - 1])
            acc[i, j] = down if down <= right else right
    return acc[rows - 1, cols - 1]


def min_variance_path_cost_cells(grid: DepthGrid, a: Cell, b: Cell) -> float:
    start, end = _canonical_pair(a, b)
    if start == end:
        return 0.0
    window = _oriented_window(grid.values, start, end)
    return float(_monotone_path_min_variation(window))


def min_variance_path_cost(grid: DepthGrid, start: Point2, end: Point2) -> float:
    """Smallest total |depth change| over monotone cell paths between two pixels."""
    return min_variance_path_cost_cells(grid, grid.cell_of(*start), grid.cell_of(*end))


def brute_force_path_cost(grid: DepthGrid, start: Point2, end: Point2,
                          max_cells: int = ORACLE_MAX_CELLS) -> float:
    """
    Enumerates every monotone path explicitly; reference for small rectangles only.
    """
    first, last = _canonical_pair(grid.cell_of(*start), grid.cell_of(*end))
    window = _oriented_window(grid.values, first, last)
    rows, cols = window.shape
    if rows > max_cells or cols > max_cells:
        raise OracleLimitError(
            f"Rectangle of {rows}x{cols} cells exceeds the {max_cells}x{max_cells} enumeration limit",
            extra_data={'rows': rows, 'cols': cols},
        )

    downs, rights = rows - 1, cols - 1
    best = math.inf
    for down_positions in itertools.combinations(range(downs + rights), downs):
        down_set = set(down_positions)
        i = j = 0
        total = 0.0
        for step in range(downs + rights):
            if step in down_set:
                ni, nj = i + 1, j
            else:
                ni, nj = i, j + 1
            total = total + abs(float(window[ni, nj]) - float(window[i, j]))
            i, j = ni, nj
        if total < best:
            best = total
    return 0.0 if math.isinf(best) else best


def matching_cost(gt: BBox, proposal: BBox, grid: DepthGrid,
                  weights: CostWeights = CostWeights()) -> PathCost:
    gt_center = center(gt)
    proposal_center = center(proposal)
    gt_cell = grid.cell_of(*gt_center)
    proposal_cell = grid.cell_of(*proposal_center)

    d = manhattan_center_distance(gt, proposal)
    z = min_variance_path_cost_cells(grid, gt_cell, proposal_cell)

    if weights.normalize:
        d = d / grid.diagonal_px
        depth_range = grid.depth_range
        z = z / depth_range if depth_range > 0 else 0.0

    return PathCost(d=d, z=z, total=weights.lambda_d * d + weights.lambda_z * z)


def matching_cost_table(gt_boxes: Sequence[BBox], proposal_boxes: Sequence[BBox], grid: DepthGrid,
                        weights: CostWeights = CostWeights()) -> List[List[PathCost]]:
    """Costs for every (gt, proposal) pair, indexed ``[gt][proposal]``."""
    return [
        [matching_cost(gt, proposal, grid, weights) for proposal in proposal_boxes]
        for gt in gt_boxes
    ]
