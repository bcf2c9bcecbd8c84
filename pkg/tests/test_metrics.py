import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from occlusense.grid import BinaryMap, GridSpec
from occlusense.metrics import (
    aggregate_similarity,
    directed_distance,
    image_similarity,
    improvement_ratio,
    mean_and_se,
    posterior_mass_at_truth,
    score_pair,
)
from oracles import brute_force_directed, brute_force_psi


def bmap(spec, bits):
    return BinaryMap(spec, np.array(bits, dtype=np.int8))


# ---------------------------------------------------------------------------
# directed_distance
# ---------------------------------------------------------------------------

def test_identity_is_zero():
    spec = GridSpec(3, 3)
    a = bmap(spec, np.random.default_rng(0).integers(0, 2, 9))
    for c in (0, 1):
        assert directed_distance(a, a, c) == 0.0


def test_single_cell_distance():
    spec = GridSpec(2, 1)
    a = bmap(spec, [1, 0])
    b = bmap(spec, [0, 1])
    assert directed_distance(a, b, 1) == 1.0
    assert directed_distance(a, b, 0) == 1.0


def test_empty_class_conventions():
    spec = GridSpec(3, 3)
    allfree = bmap(spec, [0] * 9)
    someocc = bmap(spec, [1, 0, 0, 0, 1, 0, 0, 0, 0])
    # no source cells of class 1 -> 0
    assert directed_distance(allfree, someocc, 1) == 0.0
    # destination lacks class 1 -> every source cell pays the diameter
    assert directed_distance(someocc, allfree, 1) == 6.0


def test_rejects_bad_class_and_layout():
    spec = GridSpec(2, 2)
    a = bmap(spec, [0, 1, 0, 1])
    with pytest.raises(ValueError):
        directed_distance(a, a, 2)
    b = bmap(GridSpec(4, 1), [0, 1, 0, 1])
    with pytest.raises(Exception):
        directed_distance(a, b, 1)


def test_matches_brute_force_oracle():
    rng = np.random.default_rng(1)
    for _ in range(60):
        w, h = int(rng.integers(1, 9)), int(rng.integers(1, 9))
        spec = GridSpec(w, h)
        a = bmap(spec, rng.integers(0, 2, spec.n_cells))
        b = bmap(spec, rng.integers(0, 2, spec.n_cells))
        for c in (0, 1):
            assert directed_distance(a, b, c) == brute_force_directed(a, b, c)


# ---------------------------------------------------------------------------
# image_similarity
# ---------------------------------------------------------------------------

def test_psi_1x2_hand_case():
    spec = GridSpec(2, 1)
    a = bmap(spec, [1, 0])
    b = bmap(spec, [0, 1])
    # all four directed terms are 1.0
    assert image_similarity(a, b) == 4.0


def test_psi_symmetry_and_identity_random():
    rng = np.random.default_rng(2)
    for _ in range(40):
        spec = GridSpec(int(rng.integers(1, 7)), int(rng.integers(1, 7)))
        a = bmap(spec, rng.integers(0, 2, spec.n_cells))
        b = bmap(spec, rng.integers(0, 2, spec.n_cells))
        assert image_similarity(a, b) == image_similarity(b, a)
        assert image_similarity(a, a) == 0.0
        assert image_similarity(a, b) == brute_force_psi(a, b)


@settings(max_examples=40)
@given(st.lists(st.integers(0, 1), min_size=6, max_size=6),
       st.lists(st.integers(0, 1), min_size=6, max_size=6))
def test_psi_nonnegative_symmetric(abits, bbits):
    spec = GridSpec(3, 2)
    a, b = bmap(spec, abits), bmap(spec, bbits)
    psi = image_similarity(a, b)
    assert psi >= 0.0
    assert psi == image_similarity(b, a)


def test_score_pair_components_sum():
    spec = GridSpec(3, 2)
    rng = np.random.default_rng(3)
    a = bmap(spec, rng.integers(0, 2, 6))
    b = bmap(spec, rng.integers(0, 2, 6))
    s = score_pair(a, b)
    assert s.psi == math.fsum((s.d_ab_free, s.d_ab_occ, s.d_ba_free, s.d_ba_occ))
    assert s.psi == image_similarity(a, b)


def test_masked_scoring_restricts_cells():
    spec = GridSpec(3, 1)
    a = bmap(spec, [1, 0, 0])
    b = bmap(spec, [0, 0, 1])
    mask = np.array([True, True, False])
    # with cell 2 masked out, b has no occupied cells inside the mask
    assert directed_distance(a, b, 1, mask) == 4.0  # diameter = 3 + 1
    assert directed_distance(a, b, 1) == 2.0


# ---------------------------------------------------------------------------
# posterior mass / improvement ratio
# ---------------------------------------------------------------------------

def test_uniform_mass_16():
    posterior = np.full(16, 1.0 / 16.0)
    assert posterior_mass_at_truth(posterior, 5) == 0.0625


def test_mass_index_bounds():
    with pytest.raises(ValueError):
        posterior_mass_at_truth(np.array([0.5, 0.5]), 2)
    with pytest.raises(ValueError):
        posterior_mass_at_truth(np.array([0.5, 0.5]), -1)


def test_improvement_ratio_cases():
    assert improvement_ratio(0.257, 0.064) == pytest.approx(3.016, abs=5e-4)
    assert improvement_ratio(0.2, 0.2) == 0.0
    with pytest.raises(ValueError):
        improvement_ratio(0.5, 0.0)


def test_mean_and_se():
    mean, se = mean_and_se([1.0, 2.0, 3.0])
    assert mean == 2.0
    assert se == pytest.approx(math.sqrt(1.0 / 3.0))
    mean, se = mean_and_se([4.2])
    assert (mean, se) == (4.2, 0.0)


# ---------------------------------------------------------------------------
# aggregation
# ---------------------------------------------------------------------------

def test_aggregate_probes_start_mid_end():
    # two episodes with known psi time series
    ep1 = [(0.0, 4.0), (1.0, 2.0), (2.0, 0.0)]
    ep2 = [(0.0, 6.0), (0.5, 5.0), (1.0, 4.0), (1.5, 3.0)]
    report = aggregate_similarity([ep1, ep2])
    values = [p for _, p in ep1 + ep2]
    assert report.n_frames == 7
    assert report.psi_mean == pytest.approx(np.mean(values))
    t0_mean, _, t0_n = report.probes["t0"]
    assert t0_mean == pytest.approx((4.0 + 6.0) / 2)
    assert t0_n == 2
    end_mean, _, _ = report.probes["end"]
    assert end_mean == pytest.approx((0.0 + 3.0) / 2)
    # ep1 mid target t=1.0 -> psi 2.0; ep2 mid target 0.75 -> nearest frame
    mid_mean, _, _ = report.probes["mid"]
    assert mid_mean in (pytest.approx((2.0 + 5.0) / 2), pytest.approx((2.0 + 4.0) / 2))
    d = report.to_dict()
    assert set(d) == {"psi_mean", "psi_se", "n_frames", "probes"}
    assert set(d["probes"]) == {"end", "mid", "t0"}
