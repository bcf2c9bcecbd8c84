"""Driver behavior as a sensor: actionlets and per-cell action likelihoods.

Observed driver kinematics are summarized into 21-dimensional feature
windows (distance to the crosswalk plus ten velocity and ten acceleration
samples over the last half second), clustered into a discrete vocabulary
of actionlets with k-means, and paired with ground-truth occupancy to
estimate how likely each actionlet is given each cell's state.  Those
likelihood tables are what the map-level fusion consumes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import SpecMismatchError
from .grid import BinaryMap, GridSpec

FEATURE_DIM = 21
WINDOW_SECONDS = 0.5
SAMPLES_PER_SIGNAL = 10
#: Slowest admissible log rate for feature extraction (samples per second).
MIN_LOG_RATE = 20.0

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class FeatureWindow:
    """One behavior observation: crosswalk distance plus recent kinematics.

    ``vel_samples`` and ``acc_samples`` each hold ten values taken at evenly
    spaced times spanning the last half second, oldest first.
    """

    dist_to_crosswalk: float
    vel_samples: np.ndarray
    acc_samples: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "vel_samples", np.asarray(self.vel_samples, dtype=float))
        object.__setattr__(self, "acc_samples", np.asarray(self.acc_samples, dtype=float))
        if self.vel_samples.shape != (SAMPLES_PER_SIGNAL,) or self.acc_samples.shape != (SAMPLES_PER_SIGNAL,):
            raise ValueError(f"feature window needs {SAMPLES_PER_SIGNAL} velocity and acceleration samples")

    def as_vector(self) -> np.ndarray:
        return np.concatenate(([self.dist_to_crosswalk], self.vel_samples, self.acc_samples))


def extract_features(log, t: float, crosswalk_position: float | None = None) -> FeatureWindow:
    """Summarize the occluder's trajectory around time ``t``.

    ``log`` is any episode-log-like object exposing ``t`` (timestamps),
    ``occ_speed``, ``occ_accel``, ``occ_front_x`` arrays and a
    ``crosswalk_x`` scalar.  Velocity and acceleration are linearly
    interpolated at ten evenly spaced times over [t - 0.5, t].

    Raises:
        ValueError: if the log does not cover the half-second window ending
            at ``t`` or is sampled slower than 20 Hz.
    """
    times = np.asarray(log.t, dtype=float)
    if len(times) < 2:
        raise ValueError("log too short for feature extraction")
    dt = np.median(np.diff(times))
    if dt > 1.0 / MIN_LOG_RATE + 1e-9:
        raise ValueError(f"log rate {1.0 / dt:.1f} Hz too slow; need >= {MIN_LOG_RATE} Hz")
    if t - WINDOW_SECONDS < times[0] - 1e-9 or t > times[-1] + 1e-9:
        raise ValueError(
            f"window [{t - WINDOW_SECONDS:.3f}, {t:.3f}] not covered by log "
            f"[{times[0]:.3f}, {times[-1]:.3f}]"
        )
    sample_times = np.linspace(t - WINDOW_SECONDS, t, SAMPLES_PER_SIGNAL)
    vel = np.interp(sample_times, times, np.asarray(log.occ_speed, dtype=float))
    acc = np.interp(sample_times, times, np.asarray(log.occ_accel, dtype=float))
    crosswalk = log.crosswalk_x if crosswalk_position is None else crosswalk_position
    front = float(np.interp(t, times, np.asarray(log.occ_front_x, dtype=float)))
    return FeatureWindow(crosswalk - front, vel, acc)


@dataclass
class ActionletModel:
    """k-means vocabulary over standardized feature windows.

    Centroids live in standardized feature space; ``feature_mean`` and
    ``feature_scale`` map raw features into it.  ``sse_history`` records
    the within-cluster sum of squares at the start of each training
    iteration (a training artifact, not persisted).
    """

    k: int
    centroids: np.ndarray
    feature_mean: np.ndarray
    feature_scale: np.ndarray
    sse_history: list[float] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.centroids = np.asarray(self.centroids, dtype=float)
        self.feature_mean = np.asarray(self.feature_mean, dtype=float)
        self.feature_scale = np.asarray(self.feature_scale, dtype=float)
        if self.centroids.shape != (self.k, FEATURE_DIM):
            raise ValueError(f"expected centroids of shape ({self.k}, {FEATURE_DIM})")
        if self.feature_mean.shape != (FEATURE_DIM,) or self.feature_scale.shape != (FEATURE_DIM,):
            raise ValueError("scaler shape mismatch")
        if np.any(self.feature_scale <= 0.0):
            raise ValueError("feature scales must be strictly positive")

    def scale(self, raw: np.ndarray) -> np.ndarray:
        return (raw - self.feature_mean) / self.feature_scale

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": "actionlet_model",
            "k": self.k,
            "feature_mean": self.feature_mean.tolist(),
            "feature_scale": self.feature_scale.tolist(),
            "centroids": self.centroids.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ActionletModel":
        if d.get("kind") != "actionlet_model":
            raise ValueError("not an actionlet model document")
        return cls(
            k=int(d["k"]),
            centroids=np.array(d["centroids"], dtype=float),
            feature_mean=np.array(d["feature_mean"], dtype=float),
            feature_scale=np.array(d["feature_scale"], dtype=float),
        )


def _as_matrix(features) -> np.ndarray:
    rows = [f.as_vector() if isinstance(f, FeatureWindow) else np.asarray(f, dtype=float) for f in features]
    X = np.array(rows, dtype=float)
    if X.ndim != 2 or X.shape[1] != FEATURE_DIM:
        raise ValueError(f"expected feature rows of length {FEATURE_DIM}")
    return X


def _pairwise_sq_dists(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    d = X[:, None, :] - C[None, :, :]
    return np.einsum("mkd,mkd->mk", d, d)


def kmeans_fit(features, k: int = 10, max_iters: int = 100, seed: int = 0) -> ActionletModel:
    """Cluster feature windows into k actionlets.

    Features are standardized per component (constant components get unit
    scale), seeded with the k-means++ rule from a deterministic generator,
    and refined by Lloyd iterations.  Clusters that empty out are re-seeded
    at the point farthest from its assigned centroid.  The within-cluster
    sum of squares is recorded every iteration and asserted non-increasing.
    """
    X = _as_matrix(features)
    m = len(X)
    if k < 1:
        raise ValueError("k must be at least 1")
    if m < k:
        raise ValueError(f"need at least k={k} samples, got {m}")

    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale == 0.0] = 1.0
    Xs = (X - mean) / scale

    rng = np.random.default_rng(seed)
    centroids = _kmeans_pp_init(Xs, k, rng)

    history: list[float] = []
    prev_assign = None
    for _ in range(max_iters):
        sq = _pairwise_sq_dists(Xs, centroids)
        assign = np.argmin(sq, axis=1)  # ties resolve to the lowest index
        min_sq = sq[np.arange(m), assign]
        sse = float(min_sq.sum())
        if history and sse > history[-1] + 1e-9 * max(1.0, history[-1]):
            raise AssertionError(f"k-means SSE increased: {history[-1]} -> {sse}")
        history.append(sse)
        if prev_assign is not None and np.array_equal(assign, prev_assign):
            break
        prev_assign = assign

        counts = np.bincount(assign, minlength=k)
        sums = np.zeros((k, Xs.shape[1]))
        np.add.at(sums, assign, Xs)
        nonempty = counts > 0
        centroids = centroids.copy()
        centroids[nonempty] = sums[nonempty] / counts[nonempty, None]
        if not np.all(nonempty):
            # Re-seed each empty cluster at the point currently worst served.
            taken = min_sq.copy()
            for j in np.flatnonzero(~nonempty):
                far = int(np.argmax(taken))
                centroids[j] = Xs[far]
                taken[far] = -1.0
    return ActionletModel(k, centroids, mean, scale, history)


def _kmeans_pp_init(Xs: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    m = len(Xs)
    centroids = np.empty((k, Xs.shape[1]))
    centroids[0] = Xs[rng.integers(m)]
    closest = ((Xs - centroids[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = closest.sum()
        if total <= 0.0:
            idx = int(rng.integers(m))
        else:
            idx = int(rng.choice(m, p=closest / total))
        centroids[j] = Xs[idx]
        closest = np.minimum(closest, ((Xs - centroids[j]) ** 2).sum(axis=1))
    return centroids


def assign_actionlet(model: ActionletModel, feature) -> int:
    """Index of the nearest centroid in scaled space (ties -> lowest index)."""
    vec = feature.as_vector() if isinstance(feature, FeatureWindow) else np.asarray(feature, dtype=float)
    if vec.shape != (FEATURE_DIM,):
        raise ValueError(f"expected a feature vector of length {FEATURE_DIM}")
    sq = ((model.centroids - model.scale(vec)) ** 2).sum(axis=1)
    return int(np.argmin(sq))


@dataclass
class LikelihoodTable:
    """Empirical actionlet likelihoods conditioned on each cell's state.

    ``entries[i, a, c]`` estimates p(action a | cell i has occupancy c); for
    every (cell, occupancy) pair the distribution over actions sums to one.
    ``sample_counts[i, c]`` is the number of training maps with cell i in
    state c.
    """

    spec: GridSpec
    entries: np.ndarray
    sample_counts: np.ndarray
    alpha: float = 1.0

    def __post_init__(self) -> None:
        self.entries = np.asarray(self.entries, dtype=float)
        self.sample_counts = np.asarray(self.sample_counts, dtype=np.int64)
        n = self.spec.n_cells
        if self.entries.ndim != 3 or self.entries.shape[0] != n or self.entries.shape[2] != 2:
            raise ValueError(f"entries must have shape (n_cells, n_actions, 2), got {self.entries.shape}")
        if self.sample_counts.shape != (n, 2):
            raise ValueError("sample_counts must have shape (n_cells, 2)")

    @property
    def n_actions(self) -> int:
        return self.entries.shape[1]

    def validate(self) -> None:
        sums = self.entries.sum(axis=1)
        if not np.all(np.abs(sums - 1.0) <= 1e-9):
            raise ValueError("action likelihoods must sum to 1 for every (cell, occupancy)")
        if np.any(self.entries <= 0.0):
            raise ValueError("smoothed likelihood entries must be strictly positive")

    def action_likelihood_arrays(self, action: int) -> tuple[np.ndarray, np.ndarray]:
        """(lik_occupied, lik_free) arrays over cells for one action."""
        if not (0 <= action < self.n_actions):
            raise ValueError(f"action {action} outside table with {self.n_actions} actions")
        return self.entries[:, action, 1].copy(), self.entries[:, action, 0].copy()

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": "likelihood_table",
            "spec": self.spec.to_dict(),
            "alpha": self.alpha,
            "entries": self.entries.tolist(),
            "sample_counts": self.sample_counts.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LikelihoodTable":
        if d.get("kind") != "likelihood_table":
            raise ValueError("not a likelihood table document")
        return cls(
            spec=GridSpec.from_dict(d["spec"]),
            entries=np.array(d["entries"], dtype=float),
            sample_counts=np.array(d["sample_counts"], dtype=np.int64),
            alpha=float(d["alpha"]),
        )


def estimate_likelihoods(labeled, spec: GridSpec, n_actions: int, alpha: float = 1.0) -> LikelihoodTable:
    """Count-based estimate of p(action | cell state) with Laplace smoothing.

    Args:
        labeled: iterable of (actionlet index, ground-truth BinaryMap) pairs.
        spec: layout the maps must match.
        n_actions: vocabulary size (must exceed every label).
        alpha: Laplace smoothing strength; each (cell, state) distribution is
            ``(count(a, i, c) + alpha) / (count(i, c) + alpha * n_actions)``.
            With ``alpha = 0``, states never observed fall back to uniform.
    """
    if n_actions < 1:
        raise ValueError("need at least one action")
    if alpha < 0.0:
        raise ValueError("smoothing strength must be nonnegative")
    pairs = list(labeled)
    labels = np.empty(len(pairs), dtype=np.int64)
    maps = np.empty((len(pairs), spec.n_cells), dtype=np.int64)
    for s, (action, bmap) in enumerate(pairs):
        if not (0 <= action < n_actions):
            raise ValueError(f"label {action} outside action vocabulary of size {n_actions}")
        if not bmap.spec.layout_matches(spec):
            raise SpecMismatchError("training map layout does not match table spec")
        labels[s] = action
        maps[s] = bmap.cells

    entries = np.empty((spec.n_cells, n_actions, 2))
    sample_counts = np.empty((spec.n_cells, 2), dtype=np.int64)
    for c in (0, 1):
        in_state = (maps == c).astype(np.int64)  # (samples, cells)
        per_action = np.zeros((n_actions, spec.n_cells), dtype=np.int64)
        np.add.at(per_action, labels, in_state)
        state_counts = in_state.sum(axis=0)
        sample_counts[:, c] = state_counts
        denom = state_counts + alpha * n_actions
        with np.errstate(invalid="ignore", divide="ignore"):
            probs = (per_action + alpha) / denom
        probs = np.where(denom > 0.0, probs, 1.0 / n_actions)
        entries[:, :, c] = probs.T
    return LikelihoodTable(spec, entries, sample_counts, alpha)


def action_likelihood(table: LikelihoodTable, cell: int, occupied: int, action: int) -> float:
    """Table lookup p(action | cell state), with bounds checking."""
    if not (0 <= cell < table.spec.n_cells):
        raise ValueError(f"cell {cell} outside grid with {table.spec.n_cells} cells")
    if occupied not in (0, 1):
        raise ValueError("occupancy state must be 0 or 1")
    if not (0 <= action < table.n_actions):
        raise ValueError(f"action {action} outside table with {table.n_actions} actions")
    return float(table.entries[cell, action, occupied])


def save_model_json(obj, path: str) -> None:
    """Write an ActionletModel or LikelihoodTable to a JSON file."""
    with open(path, "w") as fh:
        json.dump(obj.to_dict(), fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def load_actionlet_model(path: str) -> ActionletModel:
    with open(path) as fh:
        return ActionletModel.from_dict(json.load(fh))


def load_likelihood_table(path: str) -> LikelihoodTable:
    with open(path) as fh:
        return LikelihoodTable.from_dict(json.load(fh))
