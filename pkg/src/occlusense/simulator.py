"""Synthetic crosswalk episodes.

A straight two-lane road runs along +x with a crosswalk at a fixed x.  The
occluding vehicle drives in the lane at y = 0 and reacts to pedestrians at
the crosswalk; the ego vehicle follows at constant speed in the adjacent
lane (y = +lane_offset) and its view of the crosswalk is blocked by the
occluder's body.  Pedestrians appear at the curb on the far side of the
occluder's lane (negative y) and, depending on the sampled behavior, cross
immediately, wait for the occluder to slow down first, stand, or never
appear at all.

States integrate with forward Euler at the log rate.  The occluder policy
cruises at its sampled speed; when a pedestrian is waiting at or crossing
the walk within ``reaction_distance``, it brakes to stop ``stop_margin``
meters before the crosswalk, starting at the last point where the needed
deceleration stays comfortable (``brake_trigger_decel``, bounded by
``a_max_brake``) the way an unhurried human driver would.  Once the
pedestrian has cleared its lane's corridor it accelerates back toward
cruise speed (bounded by ``a_max_accel``).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict
from enum import Enum

import numpy as np

from .errors import ConfigError, DataError
from .grid import BinaryMap, GridSpec
from .perception import Obstacle, Pose2D, SceneGeometry
from .seeds import named_seed_sequence

SCHEMA_VERSION = 1


class PedestrianBehavior(Enum):
    BOLD_CROSS = "bold_cross"
    WAIT_THEN_CROSS = "wait_then_cross"
    STAND = "stand"
    ABSENT = "absent"


#: Sampling order of the behavior weights in :class:`ScenarioConfig`.
BEHAVIOR_ORDER = (
    PedestrianBehavior.BOLD_CROSS,
    PedestrianBehavior.WAIT_THEN_CROSS,
    PedestrianBehavior.STAND,
    PedestrianBehavior.ABSENT,
)

#: Slowest log rate the integrator accepts.
MIN_FEASIBLE_RATE = 10.0


@dataclass(frozen=True)
class ScenarioConfig:
    """Distributions and physical constants for episode sampling.

    Ranges are inclusive (low, high) pairs sampled uniformly.  Behavior
    weights follow :data:`BEHAVIOR_ORDER`; by default the pedestrian is
    absent in half of all episodes and the three present behaviors split
    the rest evenly.
    """

    d0_range: tuple[float, float] = (25.0, 45.0)
    v0_range: tuple[float, float] = (4.5, 6.7)
    behavior_weights: tuple[float, float, float, float] = (1 / 6, 1 / 6, 1 / 6, 0.5)
    ped_speed_range: tuple[float, float] = (0.8, 1.6)
    duration_range: tuple[float, float] = (5.0, 10.0)
    log_rate: float = 30.0
    accel_noise_sigma: float = 0.2

    # Occluder policy.
    reaction_distance: float = 20.0
    a_max_brake: float = 3.0
    a_max_accel: float = 1.5
    brake_trigger_decel: float = 2.0
    stop_margin: float = 2.0
    wait_trigger_speed: float = 1.0

    # Road layout and body geometry.
    crosswalk_x: float = 0.0
    lane_offset: float = 3.5
    ego_gap: float = 10.0
    ego_speed_factor: float = 0.75
    occluder_length: float = 4.5
    occluder_width: float = 2.0
    ped_size: float = 0.5
    ped_side_y: float = -2.0
    ped_far_y: float = 5.5
    corridor_halfwidth: float = 1.75

    def __post_init__(self) -> None:
        for name in ("d0_range", "v0_range", "ped_speed_range", "duration_range"):
            lo, hi = getattr(self, name)
            if not (0.0 < lo <= hi):
                raise ConfigError(f"{name} must satisfy 0 < low <= high, got ({lo}, {hi})")
        w = self.behavior_weights
        if len(w) != len(BEHAVIOR_ORDER) or any(x < 0.0 for x in w):
            raise ConfigError("behavior weights must be four nonnegative numbers")
        if abs(sum(w) - 1.0) > 1e-9:
            raise ConfigError(f"behavior weights must sum to 1, got {sum(w)}")
        if self.log_rate < MIN_FEASIBLE_RATE:
            raise ConfigError(f"log rate must be at least {MIN_FEASIBLE_RATE} Hz")
        if self.a_max_brake <= 0.0 or self.a_max_accel <= 0.0:
            raise ConfigError("acceleration bounds must be positive")
        if not (0.0 < self.brake_trigger_decel <= self.a_max_brake):
            raise ConfigError("brake_trigger_decel must lie in (0, a_max_brake]")
        # Worst-case stopping feasibility: even the fastest occluder, braking
        # from the moment the earliest pedestrian can appear, must be able to
        # stop before the crosswalk.
        v_hi = self.v0_range[1]
        needed = v_hi**2 / (2.0 * self.a_max_brake) + self.stop_margin + self.occluder_length / 2.0
        if self.d0_range[0] <= needed:
            raise ConfigError(
                f"infeasible scenario ranges: min d0 {self.d0_range[0]} m cannot absorb "
                f"worst-case stopping distance {needed:.2f} m"
            )


@dataclass(frozen=True)
class Scenario:
    """One sampled episode setup."""

    d0: float
    v0: float
    behavior: PedestrianBehavior
    ped_speed: float
    t_appear: float
    duration: float
    ego_speed: float
    noise_seed: int
    config: ScenarioConfig

    def to_dict(self) -> dict:
        return {
            "d0": self.d0,
            "v0": self.v0,
            "behavior": self.behavior.value,
            "ped_speed": self.ped_speed,
            "t_appear": self.t_appear,
            "duration": self.duration,
            "ego_speed": self.ego_speed,
            "noise_seed": self.noise_seed,
        }


def sample_scenario(config: ScenarioConfig, rng: np.random.Generator) -> Scenario:
    """Draw one scenario; every draw happens regardless of behavior so the
    random stream advances identically across behaviors."""
    d0 = float(rng.uniform(*config.d0_range))
    v0 = float(rng.uniform(*config.v0_range))
    behavior = BEHAVIOR_ORDER[int(rng.choice(len(BEHAVIOR_ORDER), p=config.behavior_weights))]
    ped_speed = float(rng.uniform(*config.ped_speed_range))
    duration = float(rng.uniform(*config.duration_range))

    # Latest appearance that still lets the occluder stop with margin.
    brake_dist = v0**2 / (2.0 * config.a_max_brake)
    slack = d0 - config.occluder_length / 2.0 - brake_dist - config.stop_margin - 0.5
    t_latest = max(0.0, slack / v0)
    t_appear = float(rng.uniform(0.0, min(t_latest, duration / 2.0))) if t_latest > 0.0 else 0.0
    noise_seed = int(rng.integers(0, 2**63 - 1))
    return Scenario(d0, v0, behavior, ped_speed, t_appear, duration,
                    config.ego_speed_factor * v0, noise_seed, config)


@dataclass
class EpisodeLog:
    """Time series of one episode at the configured log rate.

    Positions are centers; the occluder's front bumper is available as
    ``occ_front_x``.  Pedestrian columns are NaN wherever ``ped_present``
    is False.  Scene geometry is derived on demand from the stored states
    rather than persisted per frame.
    """

    t: np.ndarray
    ego_x: np.ndarray
    ego_speed: np.ndarray
    occ_x: np.ndarray
    occ_speed: np.ndarray
    occ_accel: np.ndarray
    ped_present: np.ndarray
    ped_y: np.ndarray
    ped_speed: np.ndarray
    behavior: PedestrianBehavior
    crosswalk_x: float
    scenario: Scenario

    @property
    def n_frames(self) -> int:
        return len(self.t)

    @property
    def config(self) -> ScenarioConfig:
        return self.scenario.config

    @property
    def occ_front_x(self) -> np.ndarray:
        return self.occ_x + self.config.occluder_length / 2.0

    @property
    def ego_y(self) -> float:
        return self.config.lane_offset

    def frame_at(self, t: float) -> int:
        """Index of the frame nearest ``t``; errors outside the episode."""
        if t < self.t[0] - 1e-9 or t > self.t[-1] + 1e-9:
            raise ValueError(f"time {t} outside episode [{self.t[0]}, {self.t[-1]}]")
        return int(np.argmin(np.abs(self.t - t)))

    def ego_pose(self, frame: int) -> Pose2D:
        return Pose2D(float(self.ego_x[frame]), self.ego_y, 0.0)

    def occ_pose(self, frame: int) -> Pose2D:
        return Pose2D(float(self.occ_x[frame]), 0.0, 0.0)

    def scene_at(self, frame: int) -> SceneGeometry:
        """Obstacles visible to the ego at one frame (occluder, pedestrian)."""
        cfg = self.config
        obstacles = [
            Obstacle(
                center=(float(self.occ_x[frame]), 0.0),
                half_extents=(cfg.occluder_length / 2.0, cfg.occluder_width / 2.0),
                tag="vehicle",
            )
        ]
        if self.ped_present[frame]:
            obstacles.append(
                Obstacle(
                    center=(self.crosswalk_x, float(self.ped_y[frame])),
                    half_extents=(cfg.ped_size / 2.0, cfg.ped_size / 2.0),
                    tag="pedestrian",
                )
            )
        return SceneGeometry(obstacles)


def run_episode(scenario: Scenario) -> EpisodeLog:
    """Integrate one episode deterministically from its noise seed."""
    cfg = scenario.config
    dt = 1.0 / cfg.log_rate
    n = int(round(scenario.duration * cfg.log_rate)) + 1
    rng = np.random.default_rng(scenario.noise_seed)

    half_len = cfg.occluder_length / 2.0
    occ_x = np.empty(n)
    occ_speed = np.empty(n)
    occ_accel = np.zeros(n)
    ped_present = np.zeros(n, dtype=bool)
    ped_y = np.full(n, np.nan)
    ped_speed_arr = np.zeros(n)

    x = cfg.crosswalk_x - scenario.d0 - half_len  # center position
    v = scenario.v0
    ped_exists = scenario.behavior is not PedestrianBehavior.ABSENT
    walking = False
    braking = False
    y_ped = cfg.ped_side_y

    for i in range(n):
        t = i * dt
        present = ped_exists and t >= scenario.t_appear
        arrived = y_ped >= cfg.ped_far_y - 1e-9
        if present and not walking:
            if scenario.behavior is PedestrianBehavior.BOLD_CROSS:
                walking = True
            elif scenario.behavior is PedestrianBehavior.WAIT_THEN_CROSS and v < cfg.wait_trigger_speed:
                walking = True

        occ_x[i] = x
        occ_speed[i] = v
        ped_present[i] = present
        if present:
            ped_y[i] = y_ped
            ped_speed_arr[i] = scenario.ped_speed if (walking and not arrived) else 0.0

        if i == n - 1:
            break

        # Occluder policy: brake for a pedestrian engaged with the crosswalk,
        # otherwise steer speed back to cruise.  Braking starts at the last
        # comfortable point (required deceleration reaching the trigger
        # level) rather than the instant the pedestrian is noticed, and
        # latches until the pedestrian disengages.
        front = x + half_len
        gap = (cfg.crosswalk_x - cfg.stop_margin) - front
        engaged = present and (not walking or y_ped <= cfg.corridor_halfwidth)
        aware = (
            engaged
            and front < cfg.crosswalk_x
            and (cfg.crosswalk_x - front) <= cfg.reaction_distance
        )
        if not aware:
            braking = False
        elif not braking and gap > 0.0 and v**2 / (2.0 * gap) >= cfg.brake_trigger_decel:
            braking = True
        elif gap <= 0.0:
            braking = True
        if aware and braking:
            if gap <= 0.0:
                a_cmd = -cfg.a_max_brake
            elif v > 0.0:
                a_cmd = -(v**2) / (2.0 * gap)
            else:
                a_cmd = 0.0
        else:
            a_cmd = (scenario.v0 - v) / dt
        if cfg.accel_noise_sigma > 0.0:
            a_cmd += cfg.accel_noise_sigma * rng.standard_normal()
        a_cmd = float(np.clip(a_cmd, -cfg.a_max_brake, cfg.a_max_accel))

        v_next = max(0.0, v + a_cmd * dt)
        occ_accel[i] = (v_next - v) / dt  # realized, after clipping at rest
        x = x + v * dt
        v = v_next

        if walking and not arrived:
            y_ped = min(cfg.ped_far_y, y_ped + scenario.ped_speed * dt)

    if n > 1:
        occ_accel[n - 1] = occ_accel[n - 2]

    t_arr = np.arange(n) * dt
    ego_x = (cfg.crosswalk_x - scenario.d0 - half_len) - cfg.ego_gap + scenario.ego_speed * t_arr
    ego_speed = np.full(n, scenario.ego_speed)
    return EpisodeLog(
        t=t_arr,
        ego_x=ego_x,
        ego_speed=ego_speed,
        occ_x=occ_x,
        occ_speed=occ_speed,
        occ_accel=occ_accel,
        ped_present=ped_present,
        ped_y=ped_y,
        ped_speed=ped_speed_arr,
        behavior=scenario.behavior,
        crosswalk_x=cfg.crosswalk_x,
        scenario=scenario,
    )


def simulate_batch(config: ScenarioConfig, n_episodes: int, seed: int):
    """Yield (scenario, log) pairs, each from its own child random stream."""
    if n_episodes < 1:
        raise ConfigError("need at least one episode")
    root = named_seed_sequence(seed, "simulate")
    for child in root.spawn(n_episodes):
        scenario = sample_scenario(config, np.random.default_rng(child))
        yield scenario, run_episode(scenario)


# ---------------------------------------------------------------------------
# Vehicle-anchored grids and ground truth.
# ---------------------------------------------------------------------------

def anchored_spec(template: GridSpec, front_x: float, center_y: float) -> GridSpec:
    """Anchor a grid template ahead of a +x-facing vehicle.

    The grid's near row sits half a cell beyond ``front_x`` and the
    vehicle's centerline falls on the center of column ``(width - 1) // 2``
    (column 2 of the default 6-wide layout), with higher columns to the
    vehicle's right.
    """
    res = template.resolution
    center_col = (template.width_cells - 1) // 2
    origin = (front_x + (template.height_cells - 0.5) * res, center_y + center_col * res)
    return GridSpec(template.width_cells, template.height_cells, res, origin, template.frame)


def _anchor_for_frame(log: EpisodeLog, frame: int, frame_id: str) -> tuple[float, float]:
    if frame_id == "occluder":
        return float(log.occ_front_x[frame]), 0.0
    if frame_id == "ego":
        return float(log.ego_x[frame]), log.ego_y
    raise ValueError(f"cannot anchor grid frame {frame_id!r}; use 'occluder', 'ego' or 'world'")


def anchored_spec_at(template: GridSpec, log: EpisodeLog, frame: int) -> GridSpec:
    """Concrete world-anchored spec for one log frame, per the template frame."""
    if template.frame == "world":
        return template
    fx, cy = _anchor_for_frame(log, frame, template.frame)
    return anchored_spec(template, fx, cy)


def ground_truth_grid(log: EpisodeLog, t: float, spec: GridSpec) -> BinaryMap:
    """True occupancy of the grid at time ``t``.

    Cells whose area overlaps the pedestrian footprint are 1, every other
    cell 0; with no pedestrian in the scene the map is all zeros.  The grid
    is anchored according to ``spec.frame`` ("occluder" anchors it ahead of
    the occluding vehicle, which is the frame the behavior tables use).
    """
    frame = log.frame_at(t)
    spec_t = anchored_spec_at(spec, log, frame)
    cells = np.zeros(spec_t.n_cells, dtype=np.int64)
    if log.ped_present[frame]:
        half_ped = log.config.ped_size / 2.0
        px, py = log.crosswalk_x, float(log.ped_y[frame])
        centers = spec_t.cell_centers()
        half_res = spec_t.resolution / 2.0
        overlap_x = (np.abs(centers[:, 0] - px) < half_res + half_ped)
        overlap_y = (np.abs(centers[:, 1] - py) < half_res + half_ped)
        cells[overlap_x & overlap_y] = 1
    return BinaryMap(spec_t, cells)


# ---------------------------------------------------------------------------
# JSON-lines dataset serialization.
# ---------------------------------------------------------------------------

def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def write_episodes(path: str, episodes, config: ScenarioConfig, seed: int, n_episodes: int) -> int:
    """Write a JSONL dataset: one file header, then per-episode header and
    frame records.  Returns the number of episodes written."""
    count = 0
    with open(path, "w") as fh:
        fh.write(_dump({
            "type": "header",
            "schema_version": SCHEMA_VERSION,
            "seed": seed,
            "n_episodes": n_episodes,
            "config": asdict(config),
        }) + "\n")
        for index, (scenario, log) in enumerate(episodes):
            fh.write(_dump({
                "type": "episode",
                "index": index,
                "behavior": scenario.behavior.value,
                "scenario": scenario.to_dict(),
            }) + "\n")
            for i in range(log.n_frames):
                ped = None
                if log.ped_present[i]:
                    ped = [log.crosswalk_x, float(log.ped_y[i]), float(log.ped_speed[i])]
                fh.write(_dump({
                    "type": "frame",
                    "t": float(log.t[i]),
                    "ego": [float(log.ego_x[i]), log.ego_y, 0.0, float(log.ego_speed[i])],
                    "occ": [float(log.occ_x[i]), 0.0, 0.0, float(log.occ_speed[i]), float(log.occ_accel[i])],
                    "ped": ped,
                }) + "\n")
            count += 1
    return count


def read_episodes(path: str) -> tuple[ScenarioConfig, list[EpisodeLog]]:
    """Read a dataset written by :func:`write_episodes`."""
    try:
        with open(path) as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise DataError(f"cannot read dataset {path}: {exc}") from exc
    if not lines:
        raise DataError(f"{path}: empty dataset")

    header = _parse_record(path, 1, lines[0])
    if header.get("type") != "header":
        raise DataError(f"{path}: first record must be the dataset header")
    try:
        config = ScenarioConfig(**_config_kwargs(header["config"]))
    except (KeyError, TypeError, ConfigError) as exc:
        raise DataError(f"{path}: bad config in header: {exc}") from exc

    episodes: list[EpisodeLog] = []
    current: dict | None = None
    frames: list[dict] = []

    def flush() -> None:
        if current is not None:
            if not frames:
                raise DataError(f"{path}: episode {current['index']} has no frames")
            episodes.append(_log_from_records(config, current, frames))

    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        rec = _parse_record(path, lineno, line)
        kind = rec.get("type")
        if kind == "episode":
            flush()
            current = rec
            frames = []
        elif kind == "frame":
            if current is None:
                raise DataError(f"{path}:{lineno}: frame record before any episode header")
            frames.append(rec)
        else:
            raise DataError(f"{path}:{lineno}: unknown record type {kind!r}")
    flush()
    return config, episodes


def _parse_record(path: str, lineno: int, line: str) -> dict:
    try:
        rec = json.loads(line)
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
    if not isinstance(rec, dict):
        raise DataError(f"{path}:{lineno}: record must be a JSON object")
    return rec


def _config_kwargs(d: dict) -> dict:
    kwargs = dict(d)
    for key in ("d0_range", "v0_range", "behavior_weights", "ped_speed_range", "duration_range"):
        if key in kwargs:
            kwargs[key] = tuple(kwargs[key])
    return kwargs


def _log_from_records(config: ScenarioConfig, episode: dict, frames: list[dict]) -> EpisodeLog:
    try:
        sc = episode["scenario"]
        scenario = Scenario(
            d0=float(sc["d0"]),
            v0=float(sc["v0"]),
            behavior=PedestrianBehavior(episode["behavior"]),
            ped_speed=float(sc["ped_speed"]),
            t_appear=float(sc["t_appear"]),
            duration=float(sc["duration"]),
            ego_speed=float(sc["ego_speed"]),
            noise_seed=int(sc["noise_seed"]),
            config=config,
        )
        n = len(frames)
        t = np.array([f["t"] for f in frames], dtype=float)
        ego = np.array([f["ego"] for f in frames], dtype=float)
        occ = np.array([f["occ"] for f in frames], dtype=float)
        ped_present = np.array([f["ped"] is not None for f in frames], dtype=bool)
        ped_y = np.full(n, np.nan)
        ped_speed = np.zeros(n)
        for i, f in enumerate(frames):
            if f["ped"] is not None:
                ped_y[i] = float(f["ped"][1])
                ped_speed[i] = float(f["ped"][2])
    except (KeyError, ValueError, TypeError, IndexError) as exc:
        raise DataError(f"malformed episode record: {exc}") from exc
    return EpisodeLog(
        t=t,
        ego_x=ego[:, 0],
        ego_speed=ego[:, 3],
        occ_x=occ[:, 0],
        occ_speed=occ[:, 3],
        occ_accel=occ[:, 4],
        ped_present=ped_present,
        ped_y=ped_y,
        ped_speed=ped_speed,
        behavior=scenario.behavior,
        crosswalk_x=config.crosswalk_x,
        scenario=scenario,
    )
