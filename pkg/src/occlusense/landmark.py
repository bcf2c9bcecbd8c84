"""Landmark mode: semantic pedestrian actions and position imputation.

Instead of a grid, the unknown is a single pedestrian position.  A
multinomial logit model maps a candidate position to a distribution over
five semantic actions; Bayes' rule over a uniform prior on the occluded
candidate set then turns one observed action into a posterior over where
the pedestrian is.  The logit is fit by gradient ascent on the
L2-regularized log-likelihood, which is concave, so the fit is checked
against independent convex optimizers rather than any latent-variable
scheme.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .grid import GridSpec

SCHEMA_VERSION = 1
FEATURE_MAP_ID = "bias_x_y_range"
N_FEATURES = 4


class SemanticAction(Enum):
    """Discrete pedestrian behaviors distinguishable from tracking output."""

    MOVING_FAST = 0
    MOVING_SLOW = 1
    ACCELERATING = 2
    DECELERATING = 3
    STOPPED = 4


N_ACTIONS = len(SemanticAction)

ACTION_LABELS = {
    SemanticAction.MOVING_FAST: "moving_fast",
    SemanticAction.MOVING_SLOW: "moving_slow",
    SemanticAction.ACCELERATING: "accelerating",
    SemanticAction.DECELERATING: "decelerating",
    SemanticAction.STOPPED: "stopped",
}
_LABEL_TO_ACTION = {v: k for k, v in ACTION_LABELS.items()}


def action_from_label(label: str) -> SemanticAction:
    """Parse an action label, tolerant of case and spaces."""
    key = label.strip().lower().replace(" ", "_").replace("-", "_")
    if key not in _LABEL_TO_ACTION:
        raise ValueError(f"unknown action label {label!r}")
    return _LABEL_TO_ACTION[key]


@dataclass(frozen=True)
class LandmarkState:
    """Pedestrian position: x lateral (right positive), y forward, meters."""

    x: float
    y: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y])


@dataclass(frozen=True)
class ClassifierThresholds:
    """Speed/acceleration cutoffs for rule-based action labeling."""

    stopped_speed: float = 0.2
    accel: float = 0.5
    fast_speed: float = 4.0


def classify_action(times, speeds, window: float = 1.0,
                    thresholds: ClassifierThresholds = ClassifierThresholds()) -> SemanticAction:
    """Label a speed profile with a semantic action.

    Rules are applied in priority order on the trailing ``window`` seconds:
    Stopped when the mean speed is below the stopped threshold, otherwise
    Accelerating/Decelerating when the mean signed acceleration exceeds the
    accel threshold in magnitude, otherwise MovingFast/MovingSlow by the
    fast-speed cutoff.

    Args:
        times: sample timestamps, strictly increasing, seconds.
        speeds: speed samples, m/s, same length as times.
        window: trailing window length; must be at least 0.5 s and covered
            by the profile.
    """
    times = np.asarray(times, dtype=float)
    speeds = np.asarray(speeds, dtype=float)
    if times.shape != speeds.shape or times.ndim != 1 or len(times) < 2:
        raise ValueError("need matching 1D times and speeds with at least two samples")
    if window < 0.5:
        raise ValueError(f"window must be at least 0.5 s, got {window}")
    if times[-1] - times[0] < window - 1e-9:
        raise ValueError("profile shorter than the requested window")
    sel = times >= times[-1] - window - 1e-9
    t_sel, v_sel = times[sel], speeds[sel]
    mean_speed = float(v_sel.mean())
    mean_accel = float((v_sel[-1] - v_sel[0]) / (t_sel[-1] - t_sel[0]))

    if mean_speed < thresholds.stopped_speed:
        return SemanticAction.STOPPED
    if mean_accel > thresholds.accel:
        return SemanticAction.ACCELERATING
    if mean_accel < -thresholds.accel:
        return SemanticAction.DECELERATING
    if mean_speed >= thresholds.fast_speed:
        return SemanticAction.MOVING_FAST
    return SemanticAction.MOVING_SLOW


def position_features(xy: np.ndarray) -> np.ndarray:
    """Feature map [1, x, y, ||(x, y)||] applied row-wise to (m, 2) input."""
    xy = np.atleast_2d(np.asarray(xy, dtype=float))
    norm = np.hypot(xy[:, 0], xy[:, 1])
    return np.column_stack((np.ones(len(xy)), xy[:, 0], xy[:, 1], norm))


@dataclass
class LogitModel:
    """Multinomial logit p(action | position) = softmax(W phi(position))."""

    weights: np.ndarray
    reg: float
    thresholds: ClassifierThresholds = field(default_factory=ClassifierThresholds)
    loglik_history: list[float] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.weights = np.asarray(self.weights, dtype=float)
        if self.weights.shape != (N_ACTIONS, N_FEATURES):
            raise ValueError(f"weights must have shape ({N_ACTIONS}, {N_FEATURES})")

    def predict_proba(self, xy: np.ndarray) -> np.ndarray:
        """(m, 5) action distributions for (m, 2) positions."""
        scores = position_features(xy) @ self.weights.T
        scores -= scores.max(axis=1, keepdims=True)
        e = np.exp(scores)
        return e / e.sum(axis=1, keepdims=True)

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": "logit_model",
            "feature_map": FEATURE_MAP_ID,
            "weights": self.weights.tolist(),
            "reg": self.reg,
            "thresholds": {
                "stopped_speed": self.thresholds.stopped_speed,
                "accel": self.thresholds.accel,
                "fast_speed": self.thresholds.fast_speed,
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LogitModel":
        if d.get("kind") != "logit_model":
            raise ValueError("not a logit model document")
        if d.get("feature_map") != FEATURE_MAP_ID:
            raise ValueError(f"unsupported feature map {d.get('feature_map')!r}")
        th = d.get("thresholds", {})
        return cls(
            weights=np.array(d["weights"], dtype=float),
            reg=float(d["reg"]),
            thresholds=ClassifierThresholds(
                stopped_speed=float(th.get("stopped_speed", 0.2)),
                accel=float(th.get("accel", 0.5)),
                fast_speed=float(th.get("fast_speed", 4.0)),
            ),
        )


def save_logit_model(model: LogitModel, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(model.to_dict(), fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def load_logit_model(path: str) -> LogitModel:
    with open(path) as fh:
        return LogitModel.from_dict(json.load(fh))


def _coerce_samples(samples) -> tuple[np.ndarray, np.ndarray]:
    xs, labels = [], []
    for state, action in samples:
        if isinstance(state, LandmarkState):
            xs.append([state.x, state.y])
        else:
            arr = np.asarray(state, dtype=float)
            if arr.shape != (2,):
                raise ValueError("positions must be 2D")
            xs.append(arr.tolist())
        labels.append(action.value if isinstance(action, SemanticAction) else int(action))
    X = np.array(xs, dtype=float)
    y = np.array(labels, dtype=np.int64)
    if len(X) == 0:
        raise ValueError("no training samples")
    if np.any(y < 0) or np.any(y >= N_ACTIONS):
        raise ValueError("action labels outside the vocabulary")
    return X, y


def regularized_loglik(weights: np.ndarray, xy: np.ndarray, labels: np.ndarray, reg: float) -> float:
    """Sum log-likelihood of the labels minus (reg/2) ||W||^2."""
    phi = position_features(xy)
    scores = phi @ np.asarray(weights, dtype=float).T
    scores -= scores.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(scores).sum(axis=1))
    picked = scores[np.arange(len(labels)), labels]
    return float((picked - log_norm).sum() - 0.5 * reg * np.sum(np.asarray(weights) ** 2))


def loglik_gradient(weights: np.ndarray, xy: np.ndarray, labels: np.ndarray, reg: float) -> np.ndarray:
    """Analytic gradient of :func:`regularized_loglik` in ``weights``."""
    weights = np.asarray(weights, dtype=float)
    phi = position_features(xy)
    scores = phi @ weights.T
    scores -= scores.max(axis=1, keepdims=True)
    e = np.exp(scores)
    probs = e / e.sum(axis=1, keepdims=True)
    onehot = np.zeros_like(probs)
    onehot[np.arange(len(labels)), labels] = 1.0
    return (onehot - probs).T @ phi - reg * weights


def fit_logit(samples, reg: float = 0.01, max_iters: int = 2000, tol: float = 1e-9,
              thresholds: ClassifierThresholds = ClassifierThresholds()) -> LogitModel:
    """Fit the action model by gradient ascent with backtracking line search.

    The objective is concave; with ``reg > 0`` it is strictly concave and
    the optimum is unique, so the deterministic zero initialization always
    reaches it.  Trial steps follow the Barzilai-Borwein rule (position
    features are far from isotropic, and a fixed step crawls), backtracked
    until the Armijo condition holds.  The log-likelihood is recorded per
    iteration and asserted non-decreasing.

    Raises:
        ValueError: when ``reg`` is negative, or zero while every sample
            carries the same label (the unregularized optimum diverges).
    """
    X, y = _coerce_samples(samples)
    if reg < 0.0:
        raise ValueError("regularization strength must be nonnegative")
    if reg == 0.0 and len(np.unique(y)) == 1:
        raise ValueError("all samples share one action: use reg > 0 to keep the fit bounded")

    W = np.zeros((N_ACTIONS, N_FEATURES))
    history = [regularized_loglik(W, X, y, reg)]
    grad = loglik_gradient(W, X, y, reg)
    step = 1.0 / max(1.0, float(np.abs(position_features(X)).sum()))
    for _ in range(max_iters):
        g2 = float(np.sum(grad**2))
        if g2 <= 1e-18:
            break
        # Armijo backtracking on the ascent direction.
        while step > 1e-16:
            cand = W + step * grad
            val = regularized_loglik(cand, X, y, reg)
            if val >= history[-1] + 1e-4 * step * g2:
                break
            step *= 0.5
        else:
            break
        cand_grad = loglik_gradient(cand, X, y, reg)
        # Barzilai-Borwein trial step for the next iteration.
        s = cand - W
        delta = grad - cand_grad
        s_delta = float(np.sum(s * delta))
        step = float(np.sum(s * s)) / s_delta if s_delta > 0.0 else step * 2.0
        step = min(max(step, 1e-12), 1e6)
        W, grad = cand, cand_grad
        if val < history[-1] - 1e-9 * max(1.0, abs(history[-1])):
            raise AssertionError(f"log-likelihood decreased: {history[-1]} -> {val}")
        gain = val - history[-1]
        history.append(val)
        if gain < tol * max(1.0, abs(val)):
            break
    return LogitModel(W, reg, thresholds, history)


def action_probability(model: LogitModel, state: LandmarkState | np.ndarray) -> np.ndarray:
    """Distribution over the five actions at one position."""
    xy = state.as_array() if isinstance(state, LandmarkState) else np.asarray(state, dtype=float)
    return model.predict_proba(xy.reshape(1, 2))[0]


@dataclass(frozen=True)
class OccludedRegion:
    """Discrete candidate positions the pedestrian could occupy."""

    candidates: np.ndarray

    def __post_init__(self) -> None:
        cand = np.asarray(self.candidates, dtype=float)
        if cand.ndim != 2 or cand.shape[1] != 2 or len(cand) == 0:
            raise ValueError("region needs at least one (x, y) candidate")
        object.__setattr__(self, "candidates", cand)

    @property
    def n(self) -> int:
        return len(self.candidates)

    @classmethod
    def from_grid(cls, x_min: float, x_max: float, y_min: float, y_max: float, step: float) -> "OccludedRegion":
        """Regular lattice of candidates covering a rectangle."""
        if step <= 0.0 or x_max < x_min or y_max < y_min:
            raise ValueError("invalid region bounds")
        xs = np.arange(x_min, x_max + step / 2, step)
        ys = np.arange(y_min, y_max + step / 2, step)
        gx, gy = np.meshgrid(xs, ys)
        return cls(np.column_stack((gx.ravel(), gy.ravel())))

    @classmethod
    def from_occluded_cells(cls, spec: GridSpec, occluded: np.ndarray) -> "OccludedRegion":
        """Candidates at the centers of a visibility mask's occluded cells."""
        occluded = np.asarray(occluded, dtype=bool)
        if occluded.shape != (spec.n_cells,):
            raise ValueError("mask shape does not match grid")
        if not occluded.any():
            raise ValueError("no occluded cells to build a region from")
        return cls(spec.cell_centers()[occluded])

    def locate(self, xy, tol: float) -> int | None:
        """Index of the candidate within ``tol`` of a point, else None."""
        xy = np.asarray(xy, dtype=float)
        d = np.abs(self.candidates - xy).max(axis=1)
        idx = int(np.argmin(d))
        return idx if d[idx] <= tol else None


def posterior_over_region(model: LogitModel, region: OccludedRegion,
                          observed: SemanticAction | int) -> np.ndarray:
    """Posterior over candidates after observing one action.

    The prior over candidates is uniform, so the posterior is the observed
    action's likelihood at each candidate, normalized.  A model whose
    likelihood is constant over the region returns the uniform prior
    exactly.
    """
    a = observed.value if isinstance(observed, SemanticAction) else int(observed)
    if not (0 <= a < N_ACTIONS):
        raise ValueError(f"action index {a} outside vocabulary")
    lik = model.predict_proba(region.candidates)[:, a]
    if np.all(lik == lik[0]):
        return np.full(region.n, 1.0 / region.n)
    total = lik.sum()
    if not (total > 0.0):
        raise ArithmeticError("posterior normalization failed: zero total likelihood")
    return lik / total


@dataclass(frozen=True)
class CameraModel:
    """Pinhole intrinsics plus mounting height above a flat ground plane."""

    fx: float
    fy: float
    cx: float
    cy: float
    height_m: float

    def __post_init__(self) -> None:
        if self.fx <= 0.0 or self.fy <= 0.0 or self.height_m <= 0.0:
            raise ValueError("focal lengths and camera height must be positive")


@dataclass(frozen=True)
class LandmarkObservation:
    """Back-projected pedestrian position with Gaussian uncertainty."""

    state: LandmarkState
    covariance: np.ndarray


def bbox_to_landmark(bbox, camera: CameraModel, pixel_sigma: float = 2.0) -> LandmarkObservation:
    """Back-project a detection box to a ground-plane position.

    The box's bottom-center pixel is assumed to touch the ground.  With a
    level camera at ``height_m``, a pixel ``dv`` rows below the principal
    point corresponds to depth ``fy * height_m / dv``; lateral offset
    follows from the pinhole model.  The returned covariance propagates an
    isotropic ``pixel_sigma`` through the back-projection Jacobian, so
    positional uncertainty grows quadratically with depth.

    Args:
        bbox: (x, y, w, h) box in pixels, top-left origin.
        camera: intrinsics and mounting height.
        pixel_sigma: detection noise in pixels.

    Raises:
        ValueError: when the box bottom is at or above the horizon row, or
            the box has nonpositive size.
    """
    x, y, w, h = (float(v) for v in bbox)
    if w <= 0.0 or h <= 0.0:
        raise ValueError(f"bounding box must have positive size, got w={w}, h={h}")
    u = x + w / 2.0
    v = y + h
    dv = v - camera.cy
    if dv <= 0.0:
        raise ValueError("box bottom at or above the horizon: cannot intersect the ground plane")
    depth = camera.fy * camera.height_m / dv
    lateral = (u - camera.cx) * depth / camera.fx

    ddepth_dv = -depth / dv  # = -depth^2 / (fy * height)
    jac = np.array([
        [depth / camera.fx, (u - camera.cx) / camera.fx * ddepth_dv],
        [0.0, ddepth_dv],
    ])
    cov = (pixel_sigma**2) * (jac @ jac.T)
    return LandmarkObservation(LandmarkState(lateral, depth), cov)
