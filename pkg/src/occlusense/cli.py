"""Command-line pipeline: simulate, train, eval, ingest.

Runs are configured by a flat ``key = value`` text file (see the README
for the key reference) plus a few overriding flags.  Every command writes
a JSON manifest next to its outputs recording the effective config, seed,
input/output digests and timings; manifests are written even when a
command fails partway, so partial runs stay auditable.

Exit codes: 0 success, 1 usage or configuration error, 2 malformed input
data, 3 internal error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .behavior import (
    ActionletModel,
    LikelihoodTable,
    assign_actionlet,
    estimate_likelihoods,
    extract_features,
    kmeans_fit,
    load_actionlet_model,
    load_likelihood_table,
    save_model_json,
)
from .errors import ConfigError, DataError
from .grid import GridSpec, fuse_action, new_uniform_grid, threshold
from .landmark import (
    CameraModel,
    ClassifierThresholds,
    OccludedRegion,
    SemanticAction,
    action_from_label,
    bbox_to_landmark,
    fit_logit,
    load_logit_model,
    posterior_over_region,
    save_logit_model,
)
from .metrics import aggregate_similarity, improvement_ratio, mean_and_se, posterior_mass_at_truth, score_pair
from .perception import raycast_scan, standard_inverse_update, visibility_mask
from .seeds import named_rng
from .simulator import ScenarioConfig, anchored_spec_at, ground_truth_grid, read_episodes, simulate_batch, write_episodes

#: Feature windows need this much history before the first evaluable frame.
WARMUP_SECONDS = 0.5

EVAL_METHODS = ("standard", "fused", "truth")


# ---------------------------------------------------------------------------
# Configuration.
# ---------------------------------------------------------------------------

def parse_flat_config(text: str, source: str = "<config>") -> dict[str, str]:
    """Parse ``key = value`` lines; '#' starts a comment, blanks ignored."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key, value = key.strip(), value.strip()
        if not key or not value:
            raise ConfigError(f"{source}:{lineno}: empty key or value")
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = value
    return out


@dataclass
class PipelineConfig:
    """Effective settings for one pipeline run."""

    mode: str = "grid"
    seed: int = 0
    out_dir: str = "out"

    # Grid template (anchored per frame during simulation-based runs).
    grid_width: int = 6
    grid_height: int = 7
    grid_resolution: float = 1.0
    grid_frame: str = "occluder"

    # Simulation.
    n_episodes: int = 1440
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)

    # Behavior-sensor training.
    train_split: float = 0.2
    k_actionlets: int = 10
    smoothing_alpha: float = 1.0
    train_stride: int = 1

    # Evaluation.
    eval_stride: int = 3
    eval_methods: tuple[str, ...] = ("standard", "fused")
    eval_region: str = "full"
    psi_threshold: float = 0.6
    n_beams: int = 360
    max_range: float = 50.0

    # Landmark mode.
    logit_reg: float = 0.01
    logit_max_iters: int = 2000
    logit_tol: float = 1e-9
    thresholds: ClassifierThresholds = field(default_factory=ClassifierThresholds)
    region_x: tuple[float, float] = (-8.0, 8.0)
    region_y: tuple[float, float] = (1.0, 25.0)
    region_step: float = 2.0
    camera_fallback: CameraModel | None = None

    def grid_template(self) -> GridSpec:
        return GridSpec(self.grid_width, self.grid_height, self.grid_resolution, (0.0, 0.0), self.grid_frame)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["scenario"] = dataclasses.asdict(self.scenario)
        d["thresholds"] = dataclasses.asdict(self.thresholds)
        d["camera_fallback"] = None if self.camera_fallback is None else dataclasses.asdict(self.camera_fallback)
        return d


_SCENARIO_KEYS = {f.name for f in dataclasses.fields(ScenarioConfig)}
_RANGE_KEYS = {"d0_range", "v0_range", "ped_speed_range", "duration_range"}


def config_from_mapping(mapping: dict[str, str]) -> PipelineConfig:
    """Build a :class:`PipelineConfig` from flat config keys.

    Unknown keys are rejected so typos fail loudly instead of silently
    running with defaults.
    """
    cfg = PipelineConfig()
    scenario_kwargs: dict = {}
    camera: dict[str, float] = {}
    for key, value in mapping.items():
        try:
            _apply_key(cfg, scenario_kwargs, camera, key, value)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"config key {key!r}: {exc}") from exc
    if scenario_kwargs:
        base = dataclasses.asdict(cfg.scenario)
        base.update(scenario_kwargs)
        cfg.scenario = ScenarioConfig(**base)
    if camera:
        missing = {"fx", "fy", "cx", "cy", "height_m"} - set(camera)
        if missing:
            raise ConfigError(f"camera config incomplete: missing {sorted(missing)}")
        cfg.camera_fallback = CameraModel(**camera)
    return cfg


def _apply_key(cfg: PipelineConfig, scenario_kwargs: dict, camera: dict, key: str, value: str) -> None:
    if key == "mode":
        if value not in ("grid", "landmark"):
            raise ValueError(f"mode must be 'grid' or 'landmark', got {value!r}")
        cfg.mode = value
    elif key == "seed":
        cfg.seed = int(value)
    elif key == "out_dir":
        cfg.out_dir = value
    elif key in ("grid.width", "grid.height"):
        setattr(cfg, "grid_width" if key.endswith("width") else "grid_height", int(value))
    elif key == "grid.resolution":
        cfg.grid_resolution = float(value)
    elif key == "grid.frame":
        cfg.grid_frame = value
    elif key == "sim.n_episodes":
        cfg.n_episodes = int(value)
    elif key.startswith("sim."):
        name = key[4:]
        if name not in _SCENARIO_KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        if name in _RANGE_KEYS or name == "behavior_weights":
            scenario_kwargs[name] = tuple(float(v) for v in value.split(","))
        else:
            scenario_kwargs[name] = float(value)
    elif key == "train.split":
        cfg.train_split = float(value)
    elif key == "train.k":
        cfg.k_actionlets = int(value)
    elif key == "train.alpha":
        cfg.smoothing_alpha = float(value)
    elif key == "train.stride":
        cfg.train_stride = int(value)
    elif key == "eval.stride":
        cfg.eval_stride = int(value)
    elif key == "eval.methods":
        methods = tuple(m.strip() for m in value.split(","))
        bad = [m for m in methods if m not in EVAL_METHODS]
        if bad:
            raise ValueError(f"unknown eval methods {bad}; choose from {EVAL_METHODS}")
        cfg.eval_methods = methods
    elif key == "eval.region":
        if value not in ("full", "occluded"):
            raise ValueError("eval.region must be 'full' or 'occluded'")
        cfg.eval_region = value
    elif key == "eval.threshold":
        cfg.psi_threshold = float(value)
    elif key == "eval.n_beams":
        cfg.n_beams = int(value)
    elif key == "eval.max_range":
        cfg.max_range = float(value)
    elif key == "logit.reg":
        cfg.logit_reg = float(value)
    elif key == "logit.max_iters":
        cfg.logit_max_iters = int(value)
    elif key == "logit.tol":
        cfg.logit_tol = float(value)
    elif key == "logit.stopped_speed":
        cfg.thresholds = dataclasses.replace(cfg.thresholds, stopped_speed=float(value))
    elif key == "logit.accel":
        cfg.thresholds = dataclasses.replace(cfg.thresholds, accel=float(value))
    elif key == "logit.fast_speed":
        cfg.thresholds = dataclasses.replace(cfg.thresholds, fast_speed=float(value))
    elif key in ("region.x_min", "region.x_max"):
        lo, hi = cfg.region_x
        cfg.region_x = (float(value), hi) if key.endswith("x_min") else (lo, float(value))
    elif key in ("region.y_min", "region.y_max"):
        lo, hi = cfg.region_y
        cfg.region_y = (float(value), hi) if key.endswith("y_min") else (lo, float(value))
    elif key == "region.step":
        cfg.region_step = float(value)
    elif key.startswith("camera."):
        name = key[7:]
        if name not in ("fx", "fy", "cx", "cy", "height_m"):
            raise ConfigError(f"unknown config key {key!r}")
        camera[name] = float(value)
    else:
        raise ConfigError(f"unknown config key {key!r}")


def load_config(path: str | None, overrides: dict) -> PipelineConfig:
    mapping: dict[str, str] = {}
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        mapping = parse_flat_config(text, source=path)
    cfg = config_from_mapping(mapping)
    for key, value in overrides.items():
        if value is not None:
            setattr(cfg, key, value)
    return cfg


# ---------------------------------------------------------------------------
# Manifests.
# ---------------------------------------------------------------------------

def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


class ManifestWriter:
    """Collects run metadata and writes it out, success or not."""

    def __init__(self, command: str, cfg: PipelineConfig, out_dir: Path):
        self.command = command
        self.cfg = cfg
        self.out_dir = out_dir
        self.inputs: dict[str, str] = {}
        self.outputs: dict[str, str] = {}
        self.counters: dict[str, float] = {}
        self.started = time.time()

    def add_input(self, path: str | Path) -> None:
        p = Path(path)
        if p.exists():
            self.inputs[str(p)] = _sha256(p)

    def add_output(self, path: str | Path) -> None:
        p = Path(path)
        if p.exists():
            self.outputs[p.name] = _sha256(p)

    def write(self, status: str, error: str | None = None) -> Path:
        doc = {
            "tool": "occlusense",
            "version": __version__,
            "command": self.command,
            "status": status,
            "error": error,
            "seed": self.cfg.seed,
            "mode": self.cfg.mode,
            "config": self.cfg.to_dict(),
            "inputs": self.inputs,
            "outputs": self.outputs,
            "counters": self.counters,
            "wall_time_s": round(time.time() - self.started, 3),
        }
        self.out_dir.mkdir(parents=True, exist_ok=True)
        path = self.out_dir / f"manifest_{self.command}.json"
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")
        return path


# ---------------------------------------------------------------------------
# Shared pipeline pieces.
# ---------------------------------------------------------------------------

def split_episodes(n_episodes: int, split: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic episode-level train/eval split.

    Returns (train_indices, eval_indices).  The split is derived from the
    root seed's "train" stream, so train and eval commands agree on it
    without sharing state.
    """
    if not (0.0 < split < 1.0):
        raise ConfigError(f"train split must lie in (0, 1), got {split}")
    if n_episodes < 2:
        raise ConfigError("need at least two episodes to split")
    rng = named_rng(seed, "train")
    perm = rng.permutation(n_episodes)
    n_train = int(round(n_episodes * split))
    n_train = min(max(n_train, 1), n_episodes - 1)
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


def _eval_frame_indices(log, stride: int) -> list[int]:
    """Frames with enough history for a feature window, at the given stride."""
    rate = log.config.log_rate
    first = int(np.ceil(WARMUP_SECONDS * rate - 1e-9))
    return list(range(first, log.n_frames, stride))


def _training_pairs(logs, template: GridSpec, stride: int):
    """(FeatureWindow, BinaryMap) pairs over the training episodes."""
    features, maps = [], []
    for log in logs:
        for i in _eval_frame_indices(log, stride):
            t = float(log.t[i])
            features.append(extract_features(log, t))
            maps.append(ground_truth_grid(log, t, template))
    return features, maps


# ---------------------------------------------------------------------------
# Commands.
# ---------------------------------------------------------------------------

def cmd_simulate(cfg: PipelineConfig, manifest: ManifestWriter) -> None:
    if cfg.n_episodes < 1:
        raise ConfigError("sim.n_episodes must be at least 1")
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dataset = out / "dataset.jsonl"
    count = write_episodes(
        str(dataset),
        simulate_batch(cfg.scenario, cfg.n_episodes, cfg.seed),
        cfg.scenario,
        cfg.seed,
        cfg.n_episodes,
    )
    manifest.counters["episodes"] = count
    manifest.add_output(dataset)
    print(f"simulate: wrote {count} episodes to {dataset}")


def cmd_train(cfg: PipelineConfig, manifest: ManifestWriter, dataset: str) -> None:
    if cfg.mode == "grid":
        _train_grid(cfg, manifest, dataset)
    else:
        _train_landmark(cfg, manifest, dataset)


def _train_grid(cfg: PipelineConfig, manifest: ManifestWriter, dataset: str) -> None:
    manifest.add_input(dataset)
    _, logs = read_episodes(dataset)
    train_idx, eval_idx = split_episodes(len(logs), cfg.train_split, cfg.seed)
    manifest.counters["episodes_total"] = len(logs)
    manifest.counters["episodes_train"] = len(train_idx)
    manifest.counters["episodes_eval"] = len(eval_idx)

    template = cfg.grid_template()
    features, maps = _training_pairs((logs[i] for i in train_idx), template, cfg.train_stride)
    manifest.counters["training_samples"] = len(features)
    if len(features) < cfg.k_actionlets:
        raise DataError(
            f"only {len(features)} training samples for k={cfg.k_actionlets} actionlets; "
            "need more episodes or a smaller stride"
        )

    kmeans_seed = int(named_rng(cfg.seed, "train.kmeans").integers(2**31))
    model = kmeans_fit(features, k=cfg.k_actionlets, seed=kmeans_seed)
    labels = [assign_actionlet(model, f) for f in features]
    table = estimate_likelihoods(zip(labels, maps), template, cfg.k_actionlets, cfg.smoothing_alpha)
    table.validate()

    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    actionlet_path = out / "actionlets.json"
    table_path = out / "likelihoods.json"
    save_model_json(model, str(actionlet_path))
    save_model_json(table, str(table_path))
    manifest.add_output(actionlet_path)
    manifest.add_output(table_path)
    manifest.counters["kmeans_iterations"] = len(model.sse_history)
    print(f"train: {len(features)} samples -> {cfg.k_actionlets} actionlets; models in {out}")


def _train_landmark(cfg: PipelineConfig, manifest: ManifestWriter, dataset: str) -> None:
    manifest.add_input(dataset)
    records = _read_landmark_records(dataset)
    clips = sorted({r["clip_id"] for r in records})
    if len(clips) < 2:
        raise DataError("landmark training needs at least two clips to split")
    train_idx, _ = split_episodes(len(clips), cfg.train_split, cfg.seed)
    train_clips = {clips[i] for i in train_idx}
    # Train on directly observed pedestrians; occluded samples are the
    # evaluation targets.
    samples = [
        ((r["x"], r["y"]), r["action"])
        for r in records
        if r["clip_id"] in train_clips and not r["occluded"]
    ]
    manifest.counters["clips_total"] = len(clips)
    manifest.counters["clips_train"] = len(train_clips)
    manifest.counters["training_samples"] = len(samples)
    if not samples:
        raise DataError("no visible training samples in the training clips")

    model = fit_logit(samples, reg=cfg.logit_reg, max_iters=cfg.logit_max_iters,
                      tol=cfg.logit_tol, thresholds=cfg.thresholds)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model_path = out / "logit.json"
    save_logit_model(model, str(model_path))
    manifest.add_output(model_path)
    manifest.counters["logit_iterations"] = len(model.loglik_history)
    print(f"train: fit action model on {len(samples)} samples; model in {out}")


def cmd_eval(cfg: PipelineConfig, manifest: ManifestWriter, dataset: str, models_dir: str | None) -> None:
    if cfg.mode == "grid":
        _eval_grid(cfg, manifest, dataset, models_dir)
    else:
        _eval_landmark(cfg, manifest, dataset, models_dir)


def _eval_grid(cfg: PipelineConfig, manifest: ManifestWriter, dataset: str, models_dir: str | None) -> None:
    manifest.add_input(dataset)
    _, logs = read_episodes(dataset)
    _, eval_idx = split_episodes(len(logs), cfg.train_split, cfg.seed)
    manifest.counters["episodes_eval"] = len(eval_idx)

    model = table = None
    if "fused" in cfg.eval_methods:
        if models_dir is None:
            raise ConfigError("--models is required when evaluating the fused method")
        mdir = Path(models_dir)
        manifest.add_input(mdir / "actionlets.json")
        manifest.add_input(mdir / "likelihoods.json")
        try:
            model = load_actionlet_model(str(mdir / "actionlets.json"))
            table = load_likelihood_table(str(mdir / "likelihoods.json"))
        except (OSError, ValueError, KeyError) as exc:
            raise DataError(f"cannot load behavior models from {models_dir}: {exc}") from exc
        if not table.spec.layout_matches(cfg.grid_template()):
            raise DataError("likelihood table layout does not match the configured grid")

    template = cfg.grid_template()
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    frames_path = out / "eval_frames.csv"
    series: dict[str, list[list[tuple[float, float]]]] = {m: [] for m in cfg.eval_methods}

    with open(frames_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["episode", "t", "method", "psi", "d_ab_free", "d_ab_occ", "d_ba_free", "d_ba_occ"])
        for ep in eval_idx:
            log = logs[ep]
            ep_series: dict[str, list[tuple[float, float]]] = {m: [] for m in cfg.eval_methods}
            for i in _eval_frame_indices(log, cfg.eval_stride):
                t = float(log.t[i])
                spec_t = anchored_spec_at(template, log, i)
                truth = ground_truth_grid(log, t, template)
                scan = raycast_scan(log.scene_at(i), log.ego_pose(i), cfg.n_beams, cfg.max_range)
                occluded = visibility_mask(scan, spec_t)
                mask = occluded if cfg.eval_region == "occluded" else None
                if mask is not None and not mask.any():
                    continue
                base = standard_inverse_update(new_uniform_grid(spec_t), scan)

                predictions = {}
                if "standard" in cfg.eval_methods:
                    predictions["standard"] = threshold(base, cfg.psi_threshold)
                if "fused" in cfg.eval_methods:
                    window = extract_features(log, t)
                    fused = fuse_action(base, table, assign_actionlet(model, window))
                    predictions["fused"] = threshold(fused, cfg.psi_threshold)
                if "truth" in cfg.eval_methods:
                    predictions["truth"] = truth

                for method, predicted in predictions.items():
                    s = score_pair(predicted, truth, mask)
                    writer.writerow([int(ep), repr(t), method, repr(s.psi), repr(s.d_ab_free),
                                     repr(s.d_ab_occ), repr(s.d_ba_free), repr(s.d_ba_occ)])
                    ep_series[method].append((t, s.psi))
            for method, ser in ep_series.items():
                if ser:
                    series[method].append(ser)

    summary = {
        "mode": "grid",
        "threshold": cfg.psi_threshold,
        "region": cfg.eval_region,
        "methods": {m: aggregate_similarity(s).to_dict() for m, s in series.items() if s},
    }
    summary_path = out / "eval_summary.json"
    with open(summary_path, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    manifest.add_output(frames_path)
    manifest.add_output(summary_path)
    for method, stats in summary["methods"].items():
        manifest.counters[f"psi_mean_{method}"] = stats["psi_mean"]
        print(f"eval[{method}]: mean psi {stats['psi_mean']:.3f} over {stats['n_frames']} frames")


def _eval_landmark(cfg: PipelineConfig, manifest: ManifestWriter, dataset: str, models_dir: str | None) -> None:
    if models_dir is None:
        raise ConfigError("--models is required for landmark evaluation")
    manifest.add_input(dataset)
    model_path = Path(models_dir) / "logit.json"
    manifest.add_input(model_path)
    try:
        model = load_logit_model(str(model_path))
    except (OSError, ValueError, KeyError) as exc:
        raise DataError(f"cannot load logit model: {exc}") from exc

    records = _read_landmark_records(dataset)
    clips = sorted({r["clip_id"] for r in records})
    if len(clips) < 2:
        raise DataError("landmark evaluation needs at least two clips")
    _, eval_idx = split_episodes(len(clips), cfg.train_split, cfg.seed)
    eval_clips = {clips[i] for i in eval_idx}
    region = OccludedRegion.from_grid(cfg.region_x[0], cfg.region_x[1],
                                      cfg.region_y[0], cfg.region_y[1], cfg.region_step)
    prior = 1.0 / region.n

    masses: dict[int, list[float]] = {a.value: [] for a in SemanticAction}
    skipped_outside = 0
    evaluated = 0
    for r in records:
        if r["clip_id"] not in eval_clips or not r["occluded"]:
            continue
        truth_idx = region.locate((r["x"], r["y"]), tol=cfg.region_step / 2.0)
        if truth_idx is None:
            skipped_outside += 1
            continue
        posterior = posterior_over_region(model, region, r["action"])
        masses[r["action"].value].append(posterior_mass_at_truth(posterior, truth_idx))
        evaluated += 1
    if evaluated == 0:
        raise DataError("no occluded samples inside the candidate region to evaluate")

    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    table_path = out / "eval_actions.csv"
    rows = []
    for action in SemanticAction:
        vals = masses[action.value]
        if not vals:
            continue
        mean, se = mean_and_se(vals)
        rows.append({
            "action": action.name.lower(),
            "n": len(vals),
            "p_prior": prior,
            "p_ours_mean": mean,
            "p_ours_se": se,
            "improvement_ratio": improvement_ratio(mean, prior),
        })
    with open(table_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["action", "n", "p_prior", "p_ours_mean",
                                                "p_ours_se", "improvement_ratio"])
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})

    summary = {
        "mode": "landmark",
        "region_candidates": region.n,
        "p_prior": prior,
        "evaluated_samples": evaluated,
        "skipped_outside_region": skipped_outside,
        "actions": {row["action"]: {k: v for k, v in row.items() if k != "action"} for row in rows},
    }
    summary_path = out / "eval_summary.json"
    with open(summary_path, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    manifest.add_output(table_path)
    manifest.add_output(summary_path)
    manifest.counters["evaluated_samples"] = evaluated
    manifest.counters["skipped_outside_region"] = skipped_outside
    for row in rows:
        print(f"eval[{row['action']}]: p_ours {row['p_ours_mean']:.4f} vs prior {prior:.4f} "
              f"(ratio {row['improvement_ratio']:+.3f}, n={row['n']})")


def cmd_ingest(cfg: PipelineConfig, manifest: ManifestWriter, annotations: list[str]) -> None:
    """Convert detection annotations to a landmark dataset.

    Input records are JSON lines with clip_id, frame, bbox [x, y, w, h],
    action_label, optional camera intrinsics (falling back to the config's
    camera) and an occluded flag.  Records missing required fields or whose
    box cannot intersect the ground plane are counted and skipped.
    """
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    out_path = out / "landmark_dataset.jsonl"
    accepted = 0
    rejected: dict[str, int] = {"missing_field": 0, "bad_action": 0, "horizon": 0, "bad_bbox": 0}

    with open(out_path, "w") as fh:
        for src in annotations:
            manifest.add_input(src)
            try:
                lines = Path(src).read_text().splitlines()
            except OSError as exc:
                raise DataError(f"cannot read annotations {src}: {exc}") from exc
            for lineno, line in enumerate(lines, start=1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise DataError(f"{src}:{lineno}: invalid JSON: {exc}") from exc
                result = _ingest_record(rec, cfg.camera_fallback)
                if isinstance(result, str):
                    rejected[result] += 1
                    continue
                fh.write(json.dumps(result, sort_keys=True, separators=(",", ":")) + "\n")
                accepted += 1

    manifest.add_output(out_path)
    manifest.counters["accepted"] = accepted
    for reason, count in rejected.items():
        manifest.counters[f"rejected_{reason}"] = count
    total_rejected = sum(rejected.values())
    print(f"ingest: accepted {accepted} records, rejected {total_rejected} -> {out_path}")


def _ingest_record(rec: dict, camera_fallback: CameraModel | None):
    """One landmark record from one annotation record, or a rejection reason."""
    try:
        clip_id = str(rec["clip_id"])
        frame = int(rec["frame"])
        bbox = [float(v) for v in rec["bbox"]]
        label = rec["action_label"]
        occluded = bool(rec["occluded"])
    except (KeyError, TypeError, ValueError):
        return "missing_field"
    if len(bbox) != 4:
        return "bad_bbox"
    if "camera" in rec:
        try:
            cam = rec["camera"]
            camera = CameraModel(float(cam["fx"]), float(cam["fy"]), float(cam["cx"]),
                                 float(cam["cy"]), float(cam["height_m"]))
        except (KeyError, TypeError, ValueError):
            return "missing_field"
    elif camera_fallback is not None:
        camera = camera_fallback
    else:
        return "missing_field"
    try:
        action = action_from_label(str(label))
    except ValueError:
        return "bad_action"
    try:
        obs = bbox_to_landmark(bbox, camera)
    except ValueError as exc:
        return "horizon" if "horizon" in str(exc) else "bad_bbox"
    return {
        "clip_id": clip_id,
        "frame": frame,
        "x": obs.state.x,
        "y": obs.state.y,
        "cov": obs.covariance.tolist(),
        "action": action.name.lower(),
        "occluded": occluded,
    }


def _read_landmark_records(path: str) -> list[dict]:
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise DataError(f"cannot read landmark dataset {path}: {exc}") from exc
    records = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            records.append({
                "clip_id": str(rec["clip_id"]),
                "x": float(rec["x"]),
                "y": float(rec["y"]),
                "action": action_from_label(str(rec["action"])),
                "occluded": bool(rec["occluded"]),
            })
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise DataError(f"{path}:{lineno}: bad landmark record: {exc}") from exc
    if not records:
        raise DataError(f"{path}: no landmark records")
    return records


# ---------------------------------------------------------------------------
# Entry point.
# ---------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):  # exit 1 on usage errors, not argparse's 2
        self.print_usage(sys.stderr)
        raise SystemExit(self._usage_exit(message))

    def _usage_exit(self, message: str) -> int:
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        return 1


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="occlusense", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add_common(p):
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--seed", type=int, help="root random seed (overrides config)")
        p.add_argument("--out", help="output directory (overrides config)")
        p.add_argument("--mode", choices=("grid", "landmark"), help="pipeline mode (overrides config)")

    p_sim = sub.add_parser("simulate", help="generate a synthetic episode dataset")
    add_common(p_sim)
    p_sim.add_argument("--episodes", type=int, help="episode count (overrides config)")

    p_train = sub.add_parser("train", help="fit behavior models from a dataset")
    add_common(p_train)
    p_train.add_argument("--dataset", required=True, help="episode JSONL (grid) or landmark JSONL (landmark)")

    p_eval = sub.add_parser("eval", help="score map/landmark estimates against ground truth")
    add_common(p_eval)
    p_eval.add_argument("--dataset", required=True)
    p_eval.add_argument("--models", help="directory holding trained models")

    p_ing = sub.add_parser("ingest", help="convert detection annotations to landmark samples")
    add_common(p_ing)
    p_ing.add_argument("annotations", nargs="*", help="annotation JSONL files")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    try:
        cfg = load_config(args.config, {
            "seed": args.seed,
            "out_dir": args.out,
            "mode": args.mode,
            "n_episodes": getattr(args, "episodes", None),
        })
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    manifest = ManifestWriter(args.command, cfg, Path(cfg.out_dir))
    try:
        if args.command == "simulate":
            cmd_simulate(cfg, manifest)
        elif args.command == "train":
            cmd_train(cfg, manifest, args.dataset)
        elif args.command == "eval":
            cmd_eval(cfg, manifest, args.dataset, args.models)
        elif args.command == "ingest":
            cmd_ingest(cfg, manifest, args.annotations)
        manifest.write("ok")
        return 0
    except ConfigError as exc:
        manifest.write("failed", str(exc))
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        manifest.write("failed", str(exc))
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - translated to exit code 3
        manifest.write("failed", f"{type(exc).__name__}: {exc}")
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
