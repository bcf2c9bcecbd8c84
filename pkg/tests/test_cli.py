"""End-to-end tests of the command-line pipeline.

Commands are driven through ``main(argv)`` so exit codes and manifests are
exercised exactly as a shell user would see them, without subprocess overhead.
"""

import csv
import hashlib
import json
import math
from pathlib import Path

import numpy as np
import pytest

from occlusense.cli import config_from_mapping, main, parse_flat_config, split_episodes
from occlusense.errors import ConfigError
from occlusense.landmark import LogitModel, save_logit_model

CAMERA = {"fx": 500.0, "fy": 500.0, "cx": 320.0, "cy": 240.0, "height_m": 1.5}


def sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def manifest(out: Path, command: str) -> dict:
    return json.loads((out / f"manifest_{command}.json").read_text())


def write_jsonl(path: Path, records) -> Path:
    path.write_text("".join(json.dumps(r) + "\n" for r in records))
    return path


# ---------------------------------------------------------------------------
# flat config parsing
# ---------------------------------------------------------------------------

def test_parse_flat_config_skips_comments_and_blanks():
    text = "\n# full-line comment\nseed = 4   # trailing comment\n\nmode = grid\n"
    assert parse_flat_config(text) == {"seed": "4", "mode": "grid"}


@pytest.mark.parametrize("bad", ["seed 4", "= 4", "seed =", "seed = 1\nseed = 2"])
def test_parse_flat_config_rejects_malformed(bad):
    with pytest.raises(ConfigError):
        parse_flat_config(bad)


def test_config_mapping_applies_values():
    cfg = config_from_mapping({
        "mode": "landmark",
        "seed": "17",
        "grid.width": "4",
        "sim.d0_range": "30, 40",
        "eval.methods": "standard, truth",
        "eval.region": "occluded",
        "logit.stopped_speed": "0.3",
        "region.step": "1.0",
    })
    assert cfg.mode == "landmark"
    assert cfg.seed == 17
    assert cfg.grid_width == 4
    assert cfg.scenario.d0_range == (30.0, 40.0)
    assert cfg.eval_methods == ("standard", "truth")
    assert cfg.eval_region == "occluded"
    assert cfg.thresholds.stopped_speed == 0.3
    assert cfg.region_step == 1.0


@pytest.mark.parametrize("mapping", [
    {"nope": "1"},
    {"sim.nope": "1"},
    {"camera.zoom": "2"},
    {"mode": "sideways"},
    {"eval.methods": "standard, psychic"},
])
def test_config_mapping_rejects_unknown(mapping):
    with pytest.raises(ConfigError):
        config_from_mapping(mapping)


def test_config_camera_must_be_complete():
    with pytest.raises(ConfigError, match="camera"):
        config_from_mapping({"camera.fx": "500"})
    cfg = config_from_mapping({f"camera.{k}": str(v) for k, v in CAMERA.items()})
    assert cfg.camera_fallback is not None
    assert cfg.camera_fallback.fx == 500.0


# ---------------------------------------------------------------------------
# train/eval split
# ---------------------------------------------------------------------------

def test_split_sizes_and_partition():
    train, eval_ = split_episodes(1000, 0.2, seed=7)
    assert len(train) == 200 and len(eval_) == 800
    assert set(train).isdisjoint(eval_)
    assert sorted(np.concatenate([train, eval_])) == list(range(1000))
    assert list(train) == sorted(train) and list(eval_) == sorted(eval_)


def test_split_is_deterministic_per_seed():
    a = split_episodes(50, 0.2, seed=3)
    b = split_episodes(50, 0.2, seed=3)
    c = split_episodes(50, 0.2, seed=4)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
    assert not np.array_equal(a[0], c[0])


def test_split_clamps_to_leave_both_sides_nonempty():
    train, eval_ = split_episodes(10, 0.001, seed=0)
    assert len(train) == 1 and len(eval_) == 9
    train, eval_ = split_episodes(10, 0.999, seed=0)
    assert len(train) == 9 and len(eval_) == 1


@pytest.mark.parametrize("n,split", [(10, 0.0), (10, 1.0), (1, 0.2)])
def test_split_validation(n, split):
    with pytest.raises(ConfigError):
        split_episodes(n, split, seed=0)


# ---------------------------------------------------------------------------
# usage and config errors
# ---------------------------------------------------------------------------

def test_usage_errors_exit_1():
    assert main([]) == 1
    assert main(["frobnicate"]) == 1
    assert main(["train"]) == 1  # --dataset is required


def test_unknown_config_key_exits_1_without_manifest(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("definitely_not_a_key = 1\n")
    out = tmp_path / "out"
    assert main(["simulate", "--config", str(cfg), "--out", str(out), "--episodes", "1"]) == 1
    assert not (out / "manifest_simulate.json").exists()


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

def test_simulate_writes_dataset_and_manifest(tmp_path):
    out = tmp_path / "run"
    assert main(["simulate", "--episodes", "4", "--seed", "3", "--out", str(out)]) == 0
    doc = manifest(out, "simulate")
    assert doc["status"] == "ok"
    assert doc["error"] is None
    assert doc["command"] == "simulate"
    assert doc["seed"] == 3
    assert doc["counters"]["episodes"] == 4
    assert doc["outputs"]["dataset.jsonl"] == sha256(out / "dataset.jsonl")


def test_simulate_reruns_are_byte_identical(tmp_path):
    args = ["simulate", "--episodes", "6", "--seed", "21"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    assert main(["simulate", "--episodes", "6", "--seed", "22", "--out", str(tmp_path / "c")]) == 0
    assert sha256(tmp_path / "a" / "dataset.jsonl") == sha256(tmp_path / "b" / "dataset.jsonl")
    assert sha256(tmp_path / "a" / "dataset.jsonl") != sha256(tmp_path / "c" / "dataset.jsonl")


def test_simulate_zero_episodes_fails_but_writes_manifest(tmp_path):
    out = tmp_path / "run"
    assert main(["simulate", "--episodes", "0", "--out", str(out)]) == 1
    doc = manifest(out, "simulate")
    assert doc["status"] == "failed"
    assert "at least 1" in doc["error"]


def test_flag_overrides_beat_config_file(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(f"seed = 5\nout_dir = {tmp_path / 'ignored'}\nsim.n_episodes = 9\n")
    out = tmp_path / "flagged"
    assert main(["simulate", "--config", str(cfg), "--seed", "9", "--out", str(out),
                 "--episodes", "2"]) == 0
    doc = manifest(out, "simulate")
    assert doc["seed"] == 9
    assert doc["counters"]["episodes"] == 2
    assert not (tmp_path / "ignored").exists()
    # The override changes the generated data, not just the metadata.
    plain = tmp_path / "plain"
    assert main(["simulate", "--seed", "9", "--episodes", "2", "--out", str(plain)]) == 0
    assert sha256(out / "dataset.jsonl") == sha256(plain / "dataset.jsonl")


# ---------------------------------------------------------------------------
# grid pipeline: simulate -> train -> eval
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def grid_run(tmp_path_factory):
    """A small simulated dataset with trained behavior models alongside it."""
    out = tmp_path_factory.mktemp("grid_run")
    assert main(["simulate", "--episodes", "10", "--seed", "11", "--out", str(out)]) == 0
    assert main(["train", "--dataset", str(out / "dataset.jsonl"),
                 "--seed", "11", "--out", str(out)]) == 0
    return out


def test_train_grid_outputs(grid_run):
    doc = manifest(grid_run, "train")
    assert doc["status"] == "ok"
    assert doc["counters"]["episodes_total"] == 10
    assert doc["counters"]["episodes_train"] == 2
    assert doc["counters"]["episodes_eval"] == 8
    assert doc["counters"]["training_samples"] >= 10
    assert str(grid_run / "dataset.jsonl") in doc["inputs"]
    for name in ("actionlets.json", "likelihoods.json"):
        assert (grid_run / name).exists()
        assert doc["outputs"][name] == sha256(grid_run / name)


def test_train_missing_dataset_exits_2(tmp_path):
    out = tmp_path / "out"
    assert main(["train", "--dataset", str(tmp_path / "nope.jsonl"), "--out", str(out)]) == 2
    assert manifest(out, "train")["status"] == "failed"


def test_eval_grid_scores_all_methods(grid_run, tmp_path):
    cfg = tmp_path / "eval.cfg"
    cfg.write_text("eval.methods = standard, fused, truth\neval.stride = 6\neval.n_beams = 120\n")
    out = tmp_path / "eval"
    assert main(["eval", "--dataset", str(grid_run / "dataset.jsonl"), "--models", str(grid_run),
                 "--config", str(cfg), "--seed", "11", "--out", str(out)]) == 0

    with open(out / "eval_frames.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["episode", "t", "method", "psi",
                       "d_ab_free", "d_ab_occ", "d_ba_free", "d_ba_occ"]
    methods_seen = {r[2] for r in rows[1:]}
    assert methods_seen == {"standard", "fused", "truth"}
    for r in rows[1:]:
        psi, parts = float(r[3]), [float(v) for v in r[4:8]]
        assert psi == math.fsum(parts)  # repr round-trips, so this is exact
        assert psi >= 0.0
        if r[2] == "truth":
            assert psi == 0.0  # the truth map scored against itself

    summary = json.loads((out / "eval_summary.json").read_text())
    assert set(summary["methods"]) == {"standard", "fused", "truth"}
    assert summary["methods"]["truth"]["psi_mean"] == 0.0
    assert summary["region"] == "full"
    doc = manifest(out, "eval")
    assert doc["status"] == "ok"
    assert doc["counters"]["psi_mean_truth"] == 0.0
    assert doc["counters"]["psi_mean_standard"] == summary["methods"]["standard"]["psi_mean"]


def test_eval_standard_only_needs_no_models(grid_run, tmp_path):
    cfg = tmp_path / "eval.cfg"
    cfg.write_text("eval.methods = standard\neval.region = occluded\n"
                   "eval.stride = 12\neval.n_beams = 120\n")
    out = tmp_path / "eval"
    assert main(["eval", "--dataset", str(grid_run / "dataset.jsonl"),
                 "--config", str(cfg), "--seed", "11", "--out", str(out)]) == 0
    with open(out / "eval_frames.csv", newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    assert rows and all(r[2] == "standard" for r in rows)
    assert json.loads((out / "eval_summary.json").read_text())["region"] == "occluded"


def test_eval_fused_without_models_exits_1(grid_run, tmp_path):
    out = tmp_path / "eval"
    code = main(["eval", "--dataset", str(grid_run / "dataset.jsonl"),
                 "--seed", "11", "--out", str(out)])
    assert code == 1
    assert manifest(out, "eval")["status"] == "failed"


def test_eval_unreadable_models_exit_2(grid_run, tmp_path):
    empty = tmp_path / "models"
    empty.mkdir()
    out = tmp_path / "eval"
    assert main(["eval", "--dataset", str(grid_run / "dataset.jsonl"), "--models", str(empty),
                 "--seed", "11", "--out", str(out)]) == 2


def test_eval_internal_error_exits_3(grid_run, tmp_path):
    cfg = tmp_path / "eval.cfg"
    cfg.write_text("grid.frame = map\neval.methods = standard\n")
    out = tmp_path / "eval"
    assert main(["eval", "--dataset", str(grid_run / "dataset.jsonl"),
                 "--config", str(cfg), "--seed", "11", "--out", str(out)]) == 3
    doc = manifest(out, "eval")
    assert doc["status"] == "failed"
    assert doc["error"].startswith("ValueError")


# ---------------------------------------------------------------------------
# ingest
# ---------------------------------------------------------------------------

def annotation(**overrides) -> dict:
    rec = {"clip_id": "a", "frame": 0, "bbox": [295.0, 202.5, 50.0, 100.0],
           "action_label": "Stopped", "occluded": False, "camera": CAMERA}
    rec.update(overrides)
    return rec


def test_ingest_converts_boxes_to_ground_positions(tmp_path):
    src = write_jsonl(tmp_path / "ann.jsonl", [annotation()])
    out = tmp_path / "out"
    assert main(["ingest", str(src), "--out", str(out)]) == 0
    recs = [json.loads(l) for l in (out / "landmark_dataset.jsonl").read_text().splitlines()]
    assert len(recs) == 1
    # Box centered on the principal point, bottom edge 62.5 px below it:
    # depth = fy * height / dv = 500 * 1.5 / 62.5, zero lateral offset.
    assert recs[0]["x"] == 0.0
    assert recs[0]["y"] == 12.0
    assert recs[0]["action"] == "stopped"
    assert recs[0]["occluded"] is False
    assert np.asarray(recs[0]["cov"]).shape == (2, 2)
    doc = manifest(out, "ingest")
    assert doc["counters"]["accepted"] == 1
    assert all(v == 0 for k, v in doc["counters"].items() if k.startswith("rejected_"))


def test_ingest_counts_rejections_by_reason(tmp_path):
    bad = [
        {k: v for k, v in annotation().items() if k != "action_label"},
        annotation(action_label="moonwalk"),
        annotation(bbox=[300.0, 100.0, 50.0, 100.0]),  # bottom above the horizon line
        annotation(bbox=[1.0, 2.0, 3.0]),
        {k: v for k, v in annotation().items() if k != "camera"},  # no fallback configured
    ]
    src = write_jsonl(tmp_path / "ann.jsonl", bad)
    out = tmp_path / "out"
    assert main(["ingest", str(src), "--out", str(out)]) == 0
    counters = manifest(out, "ingest")["counters"]
    assert counters["accepted"] == 0
    assert counters["rejected_missing_field"] == 2
    assert counters["rejected_bad_action"] == 1
    assert counters["rejected_horizon"] == 1
    assert counters["rejected_bad_bbox"] == 1
    assert (out / "landmark_dataset.jsonl").read_text() == ""


def test_ingest_uses_camera_fallback_from_config(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("".join(f"camera.{k} = {v}\n" for k, v in CAMERA.items()))
    rec = {k: v for k, v in annotation().items() if k != "camera"}
    src = write_jsonl(tmp_path / "ann.jsonl", [rec])
    out = tmp_path / "out"
    assert main(["ingest", str(src), "--config", str(cfg), "--out", str(out)]) == 0
    recs = [json.loads(l) for l in (out / "landmark_dataset.jsonl").read_text().splitlines()]
    assert recs[0]["y"] == 12.0


def test_ingest_invalid_json_exits_2(tmp_path):
    src = tmp_path / "ann.jsonl"
    src.write_text("this is not json\n")
    out = tmp_path / "out"
    assert main(["ingest", str(src), "--out", str(out)]) == 2
    assert manifest(out, "ingest")["status"] == "failed"


# ---------------------------------------------------------------------------
# landmark train/eval
# ---------------------------------------------------------------------------

def landmark_record(clip, x, y, action, occluded):
    return {"clip_id": clip, "frame": 0, "x": x, "y": y,
            "cov": [[1.0, 0.0], [0.0, 1.0]], "action": action, "occluded": occluded}


def landmark_dataset(tmp_path) -> Path:
    """Two clips with identical contents, so either side of the split works."""
    records = []
    for clip in ("a", "b"):
        records += [
            # Directly observed pedestrians (training material).
            landmark_record(clip, 0.0, 2.0, "stopped", False),
            landmark_record(clip, 0.5, 2.5, "stopped", False),
            landmark_record(clip, 0.0, 20.0, "moving_fast", False),
            landmark_record(clip, 1.0, 22.0, "moving_fast", False),
            # Occluded pedestrians on the candidate lattice (evaluation targets).
            landmark_record(clip, 0.0, 1.0, "stopped", True),
            landmark_record(clip, 1.0, 2.0, "stopped", True),
            landmark_record(clip, 2.0, 3.0, "stopped", True),
            landmark_record(clip, 3.0, 4.0, "decelerating", True),
            landmark_record(clip, 0.0, 2.0, "decelerating", True),
            # Occluded but far outside the candidate region.
            landmark_record(clip, 50.0, 50.0, "stopped", True),
        ]
    return write_jsonl(tmp_path / "landmarks.jsonl", records)


def test_train_landmark_writes_model(tmp_path):
    ds = landmark_dataset(tmp_path)
    out = tmp_path / "out"
    assert main(["train", "--dataset", str(ds), "--mode", "landmark",
                 "--seed", "0", "--out", str(out)]) == 0
    doc = manifest(out, "train")
    assert doc["status"] == "ok"
    assert doc["counters"]["clips_total"] == 2
    assert doc["counters"]["clips_train"] == 1
    assert doc["counters"]["training_samples"] == 4  # the non-occluded records of one clip
    assert json.loads((out / "logit.json").read_text())["kind"] == "logit_model"


def test_train_landmark_single_clip_exits_2(tmp_path):
    ds = write_jsonl(tmp_path / "one.jsonl",
                     [landmark_record("only", 0.0, 2.0, "stopped", False)])
    out = tmp_path / "out"
    assert main(["train", "--dataset", str(ds), "--mode", "landmark", "--out", str(out)]) == 2


def test_eval_landmark_uniform_model_matches_prior_exactly(tmp_path):
    """A zero-weight model is uninformative, so posterior mass equals the prior.

    The 4x4 candidate lattice makes the prior 1/16, which is exactly
    representable, so the improvement ratios must come out exactly 0.0.
    """
    ds = landmark_dataset(tmp_path)
    models = tmp_path / "models"
    models.mkdir()
    save_logit_model(LogitModel(np.zeros((5, 4)), reg=0.01), str(models / "logit.json"))
    cfg = tmp_path / "eval.cfg"
    cfg.write_text("region.x_min = 0\nregion.x_max = 3\n"
                   "region.y_min = 1\nregion.y_max = 4\nregion.step = 1\n")
    out = tmp_path / "out"
    assert main(["eval", "--dataset", str(ds), "--mode", "landmark", "--models", str(models),
                 "--config", str(cfg), "--seed", "4", "--out", str(out)]) == 0

    summary = json.loads((out / "eval_summary.json").read_text())
    assert summary["region_candidates"] == 16
    assert summary["p_prior"] == 0.0625
    assert summary["evaluated_samples"] == 5
    assert summary["skipped_outside_region"] == 1
    assert summary["actions"]["stopped"]["n"] == 3
    assert summary["actions"]["decelerating"]["n"] == 2
    for stats in summary["actions"].values():
        assert stats["p_ours_mean"] == 0.0625
        assert stats["improvement_ratio"] == 0.0

    with open(out / "eval_actions.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert {r["action"] for r in rows} == {"stopped", "decelerating"}
    for r in rows:
        assert float(r["improvement_ratio"]) == 0.0
        assert float(r["p_ours_se"]) == 0.0


def test_eval_landmark_without_models_exits_1(tmp_path):
    ds = landmark_dataset(tmp_path)
    out = tmp_path / "out"
    assert main(["eval", "--dataset", str(ds), "--mode", "landmark", "--out", str(out)]) == 1
