"""Occupancy-grid data model and per-cell Bayesian updates.

The map is a factorized Bernoulli field: each cell carries an independent
occupancy probability, and the joint probability of a full binary map is
the product of its per-cell terms.  All operations here are pure functions
over value-semantic data; updates return new grids.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from .errors import SpecMismatchError

if TYPE_CHECKING:  # pragma: no cover - typing only
    from .behavior import LikelihoodTable

#: Guard for divisions; denominators below this are treated as degenerate.
DIVISION_EPS = 1e-12

#: Default decision threshold for converting probabilities to a binary map.
DEFAULT_THRESHOLD = 0.6

#: Occupancy probability of a cell nobody has observed yet.
UNIFORM_PRIOR = 0.5


@dataclass(frozen=True)
class GridSpec:
    """Geometry of a fixed 2D occupancy grid.

    Cells are addressed as ``(col, row)`` and stored row-major, so the flat
    index of a cell is ``row * width_cells + col``.  The layout follows the
    vehicle-ahead convention: when the grid is anchored to a vehicle facing
    +x, rows advance toward the vehicle (the highest row sits directly in
    front of the bumper) and columns advance to the vehicle's right (the -y
    direction).  ``origin`` is the position of the center of cell (0, 0) in
    the coordinate frame named by ``frame``.

    Attributes:
        width_cells: number of columns (lateral extent).
        height_cells: number of rows (longitudinal extent).
        resolution: cell edge length in meters.
        origin: world position of the center of cell (0, 0).
        frame: identifier of the anchoring frame ("world", "occluder", "ego").
    """

    width_cells: int
    height_cells: int
    resolution: float = 1.0
    origin: tuple[float, float] = (0.0, 0.0)
    frame: str = "world"

    def __post_init__(self) -> None:
        if self.width_cells < 1 or self.height_cells < 1:
            raise ValueError(
                f"grid must contain at least one cell, got {self.width_cells}x{self.height_cells}"
            )
        if not (self.resolution > 0.0):
            raise ValueError(f"resolution must be positive, got {self.resolution}")

    @property
    def n_cells(self) -> int:
        return self.width_cells * self.height_cells

    def index(self, col: int, row: int) -> int:
        """Flat index of cell (col, row)."""
        if not (0 <= col < self.width_cells and 0 <= row < self.height_cells):
            raise IndexError(f"cell ({col}, {row}) outside {self.width_cells}x{self.height_cells} grid")
        return row * self.width_cells + col

    def col_row(self, index: int) -> tuple[int, int]:
        """Inverse of :meth:`index`."""
        if not (0 <= index < self.n_cells):
            raise IndexError(f"index {index} outside grid with {self.n_cells} cells")
        return index % self.width_cells, index // self.width_cells

    def cell_center(self, col: int, row: int) -> tuple[float, float]:
        """World position of a cell center (rows step along -x, columns along -y)."""
        ox, oy = self.origin
        return ox - row * self.resolution, oy - col * self.resolution

    def cell_centers(self) -> np.ndarray:
        """(n_cells, 2) array of cell-center positions in flat-index order."""
        cols = np.arange(self.n_cells) % self.width_cells
        rows = np.arange(self.n_cells) // self.width_cells
        ox, oy = self.origin
        return np.column_stack((ox - rows * self.resolution, oy - cols * self.resolution))

    def cell_coords(self) -> np.ndarray:
        """(n_cells, 2) integer (col, row) coordinates in flat-index order."""
        cols = np.arange(self.n_cells) % self.width_cells
        rows = np.arange(self.n_cells) // self.width_cells
        return np.column_stack((cols, rows))

    def layout_matches(self, other: "GridSpec") -> bool:
        """True when two specs index the same abstract cell layout.

        Origins may differ: a vehicle-anchored layout is re-anchored every
        frame, which moves the origin without changing what cell i means.
        """
        return (
            self.width_cells == other.width_cells
            and self.height_cells == other.height_cells
            and abs(self.resolution - other.resolution) < 1e-12
            and self.frame == other.frame
        )

    def to_dict(self) -> dict:
        return {
            "width_cells": self.width_cells,
            "height_cells": self.height_cells,
            "resolution": self.resolution,
            "origin": [self.origin[0], self.origin[1]],
            "frame": self.frame,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GridSpec":
        return cls(
            width_cells=int(d["width_cells"]),
            height_cells=int(d["height_cells"]),
            resolution=float(d["resolution"]),
            origin=(float(d["origin"][0]), float(d["origin"][1])),
            frame=str(d["frame"]),
        )


@dataclass
class OccupancyGrid:
    """Per-cell occupancy probabilities over a :class:`GridSpec`."""

    spec: GridSpec
    probs: np.ndarray

    def __post_init__(self) -> None:
        self.probs = np.asarray(self.probs, dtype=float)
        if self.probs.shape != (self.spec.n_cells,):
            raise ValueError(
                f"expected {self.spec.n_cells} probabilities, got shape {self.probs.shape}"
            )
        if not np.all(np.isfinite(self.probs)):
            raise ValueError("occupancy probabilities must be finite")
        if np.any(self.probs < 0.0) or np.any(self.probs > 1.0):
            raise ValueError("occupancy probabilities must lie in [0, 1]")

    def copy(self) -> "OccupancyGrid":
        return OccupancyGrid(self.spec, self.probs.copy())


@dataclass
class BinaryMap:
    """A hard {0, 1} occupancy assignment over a :class:`GridSpec`."""

    spec: GridSpec
    cells: np.ndarray

    def __post_init__(self) -> None:
        self.cells = np.asarray(self.cells, dtype=np.int64)
        if self.cells.shape != (self.spec.n_cells,):
            raise ValueError(f"expected {self.spec.n_cells} cells, got shape {self.cells.shape}")
        if not np.all((self.cells == 0) | (self.cells == 1)):
            raise ValueError("binary map cells must be 0 or 1")


def new_uniform_grid(spec: GridSpec) -> OccupancyGrid:
    """Grid with every cell at the uninformed prior of 0.5."""
    return OccupancyGrid(spec, np.full(spec.n_cells, UNIFORM_PRIOR))


def bayes_cell_update(prior: float, lik_occupied: float, lik_free: float) -> float:
    """Single-cell Bayes update from an observation likelihood pair.

    Args:
        prior: current occupancy probability of the cell, in [0, 1].
        lik_occupied: likelihood of the observation given the cell occupied.
        lik_free: likelihood of the observation given the cell free.

    Returns:
        The posterior ``lik_occupied * prior / (lik_occupied * prior +
        lik_free * (1 - prior))``.

    Raises:
        ValueError: on out-of-range inputs, or when both weighted
            likelihoods vanish and the posterior is undefined.
    """
    if not (0.0 <= prior <= 1.0):
        raise ValueError(f"prior must lie in [0, 1], got {prior}")
    if lik_occupied < 0.0 or lik_free < 0.0:
        raise ValueError("likelihoods must be nonnegative")
    denom = lik_occupied * prior + lik_free * (1.0 - prior)
    if denom < DIVISION_EPS:
        raise ValueError(
            "degenerate update: both weighted likelihoods are zero "
            f"(prior={prior}, lik_occupied={lik_occupied}, lik_free={lik_free})"
        )
    return lik_occupied * prior / denom

def fuse_action(grid: OccupancyGrid, table: "LikelihoodTable", action: int) -> OccupancyGrid:
    """Fuse one observed driver action into every cell of the grid.

    Each cell is updated independently with the action-likelihood pair the
    table holds for it, using the same quotient as
    :func:`bayes_cell_update`.  The input grid is left untouched.
    """
    if not grid.spec.layout_matches(table.spec):
        raise SpecMismatchError(
            f"grid layout {grid.spec} does not match table layout {table.spec}"
        )
    lik_occ, lik_free = table.action_likelihood_arrays(action)
    p = grid.probs
    denom = lik_occ * p + lik_free * (1.0 - p)
    if np.any(denom < DIVISION_EPS):
        bad = int(np.argmin(denom))
        raise ValueError(f"degenerate action update at cell {bad}: zero total likelihood")
    return OccupancyGrid(grid.spec, lik_occ * p / denom)


def threshold(grid: OccupancyGrid, tau: float = DEFAULT_THRESHOLD) -> BinaryMap:
    """Binarize a grid: cells with probability >= tau become occupied."""
    if not (0.0 < tau < 1.0):
        raise ValueError(f"threshold must lie strictly inside (0, 1), got {tau}")
    return BinaryMap(grid.spec, (grid.probs >= tau).astype(np.int64))


def joint_map_probability(grid: OccupancyGrid, cells: BinaryMap) -> float:
    """Probability of one full binary realization under the factorized map.

    The map posterior factorizes over cells, so this is the product of
    ``p_i`` where the realization marks cell i occupied and ``1 - p_i``
    where it marks it free.
    """
    if not grid.spec.layout_matches(cells.spec):
        raise SpecMismatchError("grid and realization layouts differ")
    terms = np.where(cells.cells == 1, grid.probs, 1.0 - grid.probs)
    return float(np.prod(terms))


# ---------------------------------------------------------------------------
# Serialization: CSV for exact round-trips, PGM for quick visual checks.
# ---------------------------------------------------------------------------

def grid_to_csv(grid: OccupancyGrid, path: str) -> None:
    """Write probabilities as CSV, one line per grid row (row 0 first)."""
    w = grid.spec.width_cells
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in range(grid.spec.height_cells):
            writer.writerow([repr(float(v)) for v in grid.probs[row * w : (row + 1) * w]])


def grid_from_csv(
    path: str,
    resolution: float = 1.0,
    origin: tuple[float, float] = (0.0, 0.0),
    frame: str = "world",
) -> OccupancyGrid:
    """Read a probability grid written by :func:`grid_to_csv`.

    The CSV stores only cell values, so grid geometry is supplied by the
    caller (defaults give a unit-resolution world-frame grid).
    """
    rows = _read_csv_rows(path)
    spec = GridSpec(len(rows[0]), len(rows), resolution, origin, frame)
    return OccupancyGrid(spec, np.array(rows, dtype=float).reshape(-1))


def binary_map_to_csv(bmap: BinaryMap, path: str) -> None:
    """Write a binary map as CSV of 0/1 integers, one line per grid row."""
    w = bmap.spec.width_cells
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in range(bmap.spec.height_cells):
            writer.writerow([int(v) for v in bmap.cells[row * w : (row + 1) * w]])


def binary_map_from_csv(
    path: str,
    resolution: float = 1.0,
    origin: tuple[float, float] = (0.0, 0.0),
    frame: str = "world",
) -> BinaryMap:
    rows = _read_csv_rows(path)
    spec = GridSpec(len(rows[0]), len(rows), resolution, origin, frame)
    return BinaryMap(spec, np.array(rows, dtype=float).astype(np.int64).reshape(-1))


def grid_to_pgm(grid: OccupancyGrid, path: str) -> None:
    """Write an 8-bit ASCII PGM image of the grid (probability * 255, rounded)."""
    w, h = grid.spec.width_cells, grid.spec.height_cells
    levels = np.rint(grid.probs * 255.0).astype(int)
    lines = ["P2", f"{w} {h}", "255"]
    for row in range(h):
        lines.append(" ".join(str(v) for v in levels[row * w : (row + 1) * w]))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _read_csv_rows(path: str) -> list[list[float]]:
    with open(path, newline="") as fh:
        rows = [[float(v) for v in line] for line in csv.reader(fh) if line]
    if not rows:
        raise ValueError(f"{path}: empty grid file")
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise ValueError(f"{path}: ragged rows in grid file")
    return rows
