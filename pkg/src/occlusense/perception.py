"""Simulated range sensing and the standard occupancy baseline.

A planar lidar is ray-cast against oriented rectangular obstacles.  Grid
cells are then classified visible or occluded by comparing each cell
center's range against the beam nearest to it in bearing, and visible
cells are updated with a fixed inverse sensor model.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .grid import GridSpec, OccupancyGrid

#: Inverse sensor model: posterior assigned from a 0.5 prior for a cell the
#: beam terminates in, and for a cell the beam passes through.
P_OCC_UPDATE = 0.9
P_FREE_UPDATE = 0.2

DEFAULT_N_BEAMS = 360
DEFAULT_MAX_RANGE = 50.0

TWO_PI = 2.0 * math.pi


def wrap_angle(theta: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    wrapped = math.fmod(theta + math.pi, TWO_PI)
    if wrapped <= 0.0:
        wrapped += TWO_PI
    return wrapped - math.pi


@dataclass(frozen=True)
class Pose2D:
    """Planar pose; heading is normalized to (-pi, pi] on construction."""

    x: float
    y: float
    heading: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "heading", wrap_angle(self.heading))

    @property
    def xy(self) -> np.ndarray:
        return np.array([self.x, self.y])


@dataclass(frozen=True)
class Obstacle:
    """Oriented rectangle: center, half extents along its own axes, heading."""

    center: tuple[float, float]
    half_extents: tuple[float, float]
    heading: float = 0.0
    tag: str = ""

    def __post_init__(self) -> None:
        if self.half_extents[0] <= 0.0 or self.half_extents[1] <= 0.0:
            raise ValueError(f"half extents must be positive, got {self.half_extents}")

    def corners(self) -> np.ndarray:
        """(4, 2) world-frame corner positions, counter-clockwise."""
        hx, hy = self.half_extents
        local = np.array([[hx, hy], [-hx, hy], [-hx, -hy], [hx, -hy]])
        c, s = math.cos(self.heading), math.sin(self.heading)
        rot = np.array([[c, -s], [s, c]])
        return local @ rot.T + np.asarray(self.center)


@dataclass(frozen=True)
class SceneGeometry:
    """Static obstacle set for one instant."""

    obstacles: tuple[Obstacle, ...] = ()

    def __init__(self, obstacles=()):
        object.__setattr__(self, "obstacles", tuple(obstacles))


@dataclass
class Scan:
    """One sweep of range measurements.

    Bearings are measured in the sensor frame (relative to ``origin``'s
    heading), must be strictly increasing and lie in [0, 2*pi).  A beam
    with ``hit`` False traveled to ``max_range`` without striking anything.
    """

    origin: Pose2D
    bearings: np.ndarray
    ranges: np.ndarray
    hits: np.ndarray
    max_range: float

    def __post_init__(self) -> None:
        self.bearings = np.asarray(self.bearings, dtype=float)
        self.ranges = np.asarray(self.ranges, dtype=float)
        self.hits = np.asarray(self.hits, dtype=bool)
        n = len(self.bearings)
        if n == 0:
            raise ValueError("scan must contain at least one beam")
        if self.ranges.shape != (n,) or self.hits.shape != (n,):
            raise ValueError("bearing/range/hit arrays must share one length")
        if np.any(self.bearings < 0.0) or np.any(self.bearings >= TWO_PI):
            raise ValueError("bearings must lie in [0, 2*pi)")
        if np.any(np.diff(self.bearings) <= 0.0):
            raise ValueError("bearings must be strictly increasing")
        if not (self.max_range > 0.0):
            raise ValueError("max_range must be positive")
        if np.any(self.ranges < 0.0) or np.any(self.ranges > self.max_range + 1e-9):
            raise ValueError("ranges must lie in [0, max_range]")

    @property
    def beams(self) -> list[tuple[float, float, bool]]:
        """Beam tuples (bearing, range, hit) for iteration and dumps."""
        return [
            (float(b), float(r), bool(h))
            for b, r, h in zip(self.bearings, self.ranges, self.hits)
        ]


def _ray_rectangle_t(origin: np.ndarray, directions: np.ndarray, rect: Obstacle) -> np.ndarray:
    """Smallest nonnegative ray parameter hitting the rectangle, inf on miss.

    Works on a batch of unit directions, shape (n, 2).  Uses the slab test
    in the rectangle's own frame.
    """
    c, s = math.cos(rect.heading), math.sin(rect.heading)
    rot = np.array([[c, s], [-s, c]])  # world -> rectangle frame
    o = rot @ (origin - np.asarray(rect.center))
    d = directions @ rot.T

    t = np.full(len(directions), np.inf)
    hx, hy = rect.half_extents
    with np.errstate(divide="ignore", invalid="ignore"):
        tx1 = (-hx - o[0]) / d[:, 0]
        tx2 = (hx - o[0]) / d[:, 0]
        ty1 = (-hy - o[1]) / d[:, 1]
        ty2 = (hy - o[1]) / d[:, 1]
    # Beams parallel to a slab axis: inside the slab -> (-inf, inf), else miss.
    tx_lo, tx_hi = np.minimum(tx1, tx2), np.maximum(tx1, tx2)
    ty_lo, ty_hi = np.minimum(ty1, ty2), np.maximum(ty1, ty2)
    par_x = d[:, 0] == 0.0
    inside_x = np.abs(o[0]) <= hx
    tx_lo[par_x] = -np.inf if inside_x else np.inf
    tx_hi[par_x] = np.inf if inside_x else -np.inf
    par_y = d[:, 1] == 0.0
    inside_y = np.abs(o[1]) <= hy
    ty_lo[par_y] = -np.inf if inside_y else np.inf
    ty_hi[par_y] = np.inf if inside_y else -np.inf

    t_enter = np.maximum(tx_lo, ty_lo)
    t_exit = np.minimum(tx_hi, ty_hi)
    valid = (t_exit >= t_enter) & (t_exit >= 0.0)
    t[valid] = np.maximum(t_enter[valid], 0.0)
    return t


def raycast_scan(
    scene: SceneGeometry,
    ego: Pose2D,
    n_beams: int = DEFAULT_N_BEAMS,
    max_range: float = DEFAULT_MAX_RANGE,
) -> Scan:
    """Cast evenly spaced beams over [0, 2*pi) from the ego pose.

    Each beam reports the nearest rectangle intersection, capped at
    ``max_range``; beams that strike nothing report ``max_range`` with
    ``hit`` False.
    """
    if n_beams < 1:
        raise ValueError("need at least one beam")
    bearings = TWO_PI * np.arange(n_beams) / n_beams
    world_angles = ego.heading + bearings
    directions = np.column_stack((np.cos(world_angles), np.sin(world_angles)))
    t_min = np.full(n_beams, np.inf)
    for rect in scene.obstacles:
        t_min = np.minimum(t_min, _ray_rectangle_t(ego.xy, directions, rect))
    hits = t_min <= max_range
    ranges = np.where(hits, t_min, max_range)
    return Scan(ego, bearings, ranges, hits, max_range)


def _cell_beam_geometry(scan: Scan, spec: GridSpec):
    """Per-cell range/bearing and the scan beam nearest each cell.

    Returns (cell_range, beam_range, beam_hit, outside) where ``outside``
    marks cells whose bearing is farther from every beam than one typical
    beam spacing, i.e. cells the scan does not cover.
    """
    centers = spec.cell_centers()
    dx = centers[:, 0] - scan.origin.x
    dy = centers[:, 1] - scan.origin.y
    cell_range = np.hypot(dx, dy)
    cell_bearing = np.mod(np.arctan2(dy, dx) - scan.origin.heading, TWO_PI)

    bearings = scan.bearings
    idx = np.searchsorted(bearings, cell_bearing)
    cand_hi = np.clip(idx, 0, len(bearings) - 1)
    cand_lo = np.clip(idx - 1, 0, len(bearings) - 1)
    first, last = 0, len(bearings) - 1

    def circ_dist(i):
        d = np.abs(cell_bearing - bearings[i])
        return np.minimum(d, TWO_PI - d)

    d_hi, d_lo = circ_dist(cand_hi), circ_dist(cand_lo)
    d_first, d_last = circ_dist(np.full_like(cand_hi, first)), circ_dist(np.full_like(cand_hi, last))
    stack = np.stack([d_hi, d_lo, d_first, d_last])
    choices = np.stack([cand_hi, cand_lo, np.full_like(cand_hi, first), np.full_like(cand_hi, last)])
    best = np.argmin(stack, axis=0)
    nearest = choices[best, np.arange(len(cell_bearing))]
    nearest_dist = stack[best, np.arange(len(cell_bearing))]

    if len(bearings) > 1:
        gaps = np.diff(bearings)
        spacing = float(np.median(np.append(gaps, TWO_PI - (bearings[-1] - bearings[0]))))
    else:
        spacing = TWO_PI
    outside = nearest_dist > spacing

    return cell_range, scan.ranges[nearest], scan.hits[nearest], outside


def visibility_mask(scan: Scan, spec: GridSpec) -> np.ndarray:
    """Boolean occluded-mask over flat cell indices (True = occluded).

    A cell is occluded when the beam nearest its bearing terminated on an
    obstacle more than half a cell nearer than the cell center (the cell
    holding the struck surface itself counts as observed), when it lies
    beyond the sensor's maximum range, or when no beam covers its bearing.
    """
    cell_range, beam_range, beam_hit, outside = _cell_beam_geometry(scan, spec)
    half = spec.resolution / 2.0
    behind_hit = beam_hit & (cell_range > beam_range + half)
    beyond_range = ~beam_hit & (cell_range > scan.max_range)
    return behind_hit | beyond_range | outside


def standard_inverse_update(
    grid: OccupancyGrid,
    scan: Scan,
    p_occ: float = P_OCC_UPDATE,
    p_free: float = P_FREE_UPDATE,
) -> OccupancyGrid:
    """Classical inverse-sensor update of every directly observed cell.

    Cells a beam passes through get the free update, the cell the beam
    terminates in gets the occupied update, and occluded cells (exactly
    those flagged by :func:`visibility_mask`) keep their prior untouched.
    The update constants are the posterior a 0.5-prior cell would take,
    i.e. the cell is updated with likelihood pair (p, 1 - p).
    """
    cell_range, beam_range, beam_hit, outside = _cell_beam_geometry(scan, spec := grid.spec)
    half = spec.resolution / 2.0
    occluded = (beam_hit & (cell_range > beam_range + half)) | (~beam_hit & (cell_range > scan.max_range)) | outside
    hit_cell = beam_hit & (np.abs(cell_range - beam_range) <= half)
    free_cell = ~occluded & ~hit_cell

    p = grid.probs.copy()
    for mask, lik in ((free_cell, p_free), (hit_cell, p_occ)):
        prior = p[mask]
        denom = lik * prior + (1.0 - lik) * (1.0 - prior)
        p[mask] = lik * prior / denom
    return OccupancyGrid(spec, p)


def scan_to_csv(scan: Scan, path: str) -> None:
    """Dump beams as CSV rows (bearing, range, hit) for debugging."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bearing", "range", "hit"])
        for bearing, rng, hit in scan.beams:
            writer.writerow([repr(bearing), repr(rng), int(hit)])
