import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import scalar
from oracles import extract_literal, lesion_size_pairwise, lin
from voxdet.candidates import (
    DUPLICATE,
    FP,
    TP,
    CandidateLesion,
    candidates_from_json,
    candidates_to_json,
    dice,
    extract_candidates,
    lesion_size_axial,
    match_candidates,
    rle_decode,
    rle_encode,
)
from voxdet.config import PipelineConfig
from voxdet.morphology import connected_components
from voxdet.voxgrid import BinaryMask, Geometry


def blob_map(rng, shape=(16, 16, 16), n_blobs=4):
    """Sum of random gaussian bumps, float32 in [0, 1]."""
    grid = np.indices(shape).transpose(1, 2, 3, 0).astype(float)
    out = np.zeros(shape)
    for _ in range(n_blobs):
        c = rng.uniform(0, shape[0], 3)
        s = rng.uniform(0.8, 2.5)
        out += rng.uniform(0.1, 1.0) * np.exp(-((grid - c) ** 2).sum(-1) / (2 * s * s))
    out[rng.random(shape) < 0.3] *= rng.uniform(0.5, 1.0)
    return (np.clip(out, 0, 1)).astype(np.float32)


def as_sets(cands):
    return [(c.confidence, frozenset(c.voxels.tolist())) for c in cands]


def test_all_zero_map():
    assert extract_candidates(scalar(np.zeros((5, 5, 5), dtype=np.float32))) == []


def test_two_blobs():
    d = np.zeros((16, 16, 16), dtype=np.float32)
    d[2:5, 2:5, 2:5] = 0.4
    d[3, 3, 3] = 0.9
    d[10:13, 10:13, 10:14] = 0.25
    d[10:13, 10:13, 13] = 0.2  # float32(0.2) sits just above 0.4 * 0.5, inclusive threshold keeps it
    d[11, 11, 11] = 0.5
    cands = extract_candidates(scalar(d))
    assert [c.confidence for c in cands] == pytest.approx([0.9, 0.5])
    assert [c.rank for c in cands] == [1, 2]
    assert cands[0].voxel_count == 27
    assert cands[1].voxel_count == 36
    assert as_sets(cands) == extract_literal(d.astype(np.float64))


def test_region_excludes_below_threshold():
    d = np.zeros((6, 6, 6), dtype=np.float32)
    d[1:4, 1:4, 1:4] = 0.5
    d[2, 2, 2] = 1.0
    d[1, 1, 1] = 0.39
    cands = extract_candidates(scalar(d), PipelineConfig(max_lesions=1))
    assert cands[0].voxel_count == 26
    assert lin(1, 1, 1, d.shape) not in cands[0].voxels


def test_seven_peaks_capped():
    d = np.zeros((16, 16, 16), dtype=np.float32)
    peaks = [0.2, 0.9, 0.4, 0.7, 0.3, 0.8, 0.6]
    for k, v in enumerate(peaks):
        d[2 * k + 1, 2 * k + 1, 8] = v
    cands = extract_candidates(scalar(d))
    assert len(cands) == 5
    assert [c.confidence for c in cands] == pytest.approx([0.9, 0.8, 0.7, 0.6, 0.4])
    assert all(c.voxel_count == 1 for c in cands)


def test_tie_breaks_by_smallest_linear_index():
    d = np.zeros((4, 4, 4), dtype=np.float32)
    d[3, 0, 0] = d[0, 1, 0] = d[0, 0, 2] = 0.5  # linear 3, 4, 32
    cands = extract_candidates(scalar(d), PipelineConfig(max_lesions=3))
    assert [int(c.voxels[0]) for c in cands] == [3, 4, 32]


def test_peak_floor_stops():
    d = np.zeros((4, 4, 4), dtype=np.float32)
    d[0, 0, 0], d[3, 3, 3] = 0.5, 0.0009
    assert len(extract_candidates(scalar(d))) == 1
    assert len(extract_candidates(scalar(d), PipelineConfig(peak_floor=0.0))) == 2


@pytest.mark.parametrize("connectivity", [6, 26])
def test_matches_literal_loop(connectivity):
    r = np.random.default_rng(100 + connectivity)
    cfg = PipelineConfig(connectivity=connectivity)
    for _ in range(10):
        d = blob_map(r)
        got = as_sets(extract_candidates(scalar(d), cfg))
        assert got == extract_literal(d.astype(np.float64), connectivity=connectivity)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_candidate_invariants(seed):
    r = np.random.default_rng(seed)
    d = blob_map(r, (10, 10, 10))
    vol = scalar(d)
    cands = extract_candidates(vol)
    flat = d.ravel(order="F")
    seen = set()
    for c in cands:
        assert np.all(flat[c.voxels] >= 0.4 * c.confidence)
        m = np.zeros(flat.size, dtype=bool)
        m[c.voxels] = True
        mask = BinaryMask(vol.geometry, m.reshape(d.shape, order="F"))
        assert connected_components(mask, 26).count == 1
        assert seen.isdisjoint(c.voxels.tolist())
        seen.update(c.voxels.tolist())
    conf = [c.confidence for c in cands]
    assert conf == sorted(conf, reverse=True)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10**6), k=st.integers(1, 4))
def test_prefix_property(seed, k):
    d = blob_map(np.random.default_rng(seed), (10, 10, 10), n_blobs=6)
    full = extract_candidates(scalar(d))
    head = extract_candidates(scalar(d), PipelineConfig(max_lesions=k))
    assert as_sets(head) == as_sets(full[:k])
    residual = d.ravel(order="F").copy()
    for c in head:
        residual[c.voxels] = 0
    tail = extract_candidates(scalar(residual.reshape(d.shape, order="F")), PipelineConfig(max_lesions=5 - k))
    assert as_sets(tail) == as_sets(full[k:])


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10**6), e=st.integers(0, 3))
def test_scaling_invariance(seed, e):
    # power-of-two scaling is exact in float32, so every comparison is preserved
    c = 2.0**-e
    d = blob_map(np.random.default_rng(seed), (10, 10, 10))
    d[d < 0.01] = 0  # keep all scaled peaks above the floor
    a = extract_candidates(scalar(d))
    b = extract_candidates(scalar(d * np.float32(c)))
    assert [x.voxels.tolist() for x in a] == [x.voxels.tolist() for x in b]
    assert [x.rank for x in a] == [x.rank for x in b]
    assert [x.confidence * c for x in a] == [x.confidence for x in b]


def test_dice_examples():
    assert dice({1, 2, 3}, {1, 2, 3}) == 1.0
    assert dice({1, 2}, {3, 4}) == 0.0
    assert dice({1, 2}, {2, 3}) == 0.5
    with pytest.raises(ValueError):
        dice(set(), set())


@settings(max_examples=50, deadline=None)
@given(a=st.sets(st.integers(0, 40), min_size=1), b=st.sets(st.integers(0, 40)))
def test_dice_properties(a, b):
    assert dice(a, b) == dice(b, a)
    assert dice(a, a) == 1.0
    assert dice(a, b) == 2 * len(a & b) / (len(a) + len(b))


def cand(conf, voxels, rank):
    return CandidateLesion(conf, np.array(sorted(voxels)), rank, (0.0, 0.0, 0.0))


def test_match_exact_and_disjoint():
    res = match_candidates([cand(0.9, {1, 2, 3}, 1)], [{1, 2, 3}])
    assert res.status == (TP,) and res.dice == (1.0,) and res.lesion_match == (0,)
    res = match_candidates([cand(0.9, {7, 8}, 1)], [{1, 2, 3}])
    assert res.status == (FP,) and res.lesion_match == (None,)


def test_match_duplicate():
    lesion = set(range(10))
    hi = cand(0.8, set(range(6)), 1)  # 2*6/16 = 0.75
    lo = cand(0.5, set(range(2)) | {20, 21}, 2)  # 2*2/14
    assert dice(hi, lesion) == 0.75
    res = match_candidates([hi, lo], [lesion])
    assert res.status == (TP, DUPLICATE)
    res = match_candidates([hi, lo], [lesion], duplicate_policy="count-fp")
    assert res.status == (TP, FP)


def test_match_dice_06_03():
    lesion = set(range(10))
    a = cand(0.9, set(range(6)) | {100, 101}, 1)  # 2*6/18 = 0.667
    b = cand(0.6, set(range(2)) | {200, 201, 202}, 2)  # 2*2/15 = 0.267
    res = match_candidates([b, a], [lesion])
    assert res.status == (DUPLICATE, TP)
    assert res.lesion_match == (1,)


def test_match_threshold_inclusive():
    lesion = set(range(19))
    c = cand(0.5, {0}, 1)  # 2/20 = 0.1
    assert match_candidates([c], [lesion]).status == (TP,)
    assert match_candidates([c], [lesion], dice_min=0.11).status == (FP,)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_match_order_invariant(seed):
    r = np.random.default_rng(seed)
    lesions = [set(r.choice(60, r.integers(3, 15), replace=False).tolist()) for _ in range(3)]
    cands = [cand(float(r.choice([0.3, 0.5, 0.9])), set(r.choice(60, r.integers(2, 15), replace=False).tolist()), k + 1) for k in range(5)]
    base = match_candidates(cands, lesions)
    perm = r.permutation(5)
    res = match_candidates([cands[i] for i in perm], lesions)
    assert [res.status[list(perm).index(i)] for i in range(5)] == list(base.status)
    owners = [m for m in base.lesion_match if m is not None]
    assert len(owners) == len(set(owners))
    for i, s in enumerate(base.status):
        if s == TP:
            assert base.dice[i] >= 0.1


def test_lesion_size_examples():
    g = Geometry((8, 8, 2), (1.0, 1.0, 1.0))
    assert lesion_size_axial([lin(0, 0, 0, g.dims), lin(3, 4, 0, g.dims)], g) == 5.0
    g2 = Geometry((4, 4, 4), (0.8, 0.8, 3.0))
    assert lesion_size_axial([5], g2) == 0.8
    with pytest.raises(ValueError):
        lesion_size_axial([], g)


def test_lesion_size_ignores_cross_slice():
    g = Geometry((8, 8, 8), (1.0, 1.0, 1.0))
    # far apart but on different slices
    assert lesion_size_axial(np.array([[0, 0, 0], [7, 7, 7]]), g) == 1.0


def test_lesion_size_pairwise_oracle():
    r = np.random.default_rng(3)
    for spacing in [(1.0, 1.0, 1.0), (0.7, 0.9, 2.5), (1.5, 1.5, 3.0)]:
        g = Geometry((20, 20, 6), spacing)
        for _ in range(8):
            d = np.zeros(g.dims, dtype=bool)
            c = r.integers(4, 16, 2)
            for _ in range(200):
                c = np.clip(c + r.integers(-1, 2, 2), 0, 19)
                d[c[0], c[1], r.integers(0, 6)] = True
            pts = np.argwhere(d)
            assert lesion_size_axial(pts, g) == lesion_size_pairwise(pts, spacing)


@settings(max_examples=50, deadline=None)
@given(runs=st.sets(st.integers(0, 500)))
def test_rle_roundtrip(runs):
    v = np.array(sorted(runs), dtype=np.int64)
    assert rle_decode(rle_encode(v)).tolist() == v.tolist()


def test_candidates_json_roundtrip(rng):
    d = blob_map(rng)
    cands = extract_candidates(scalar(d))
    back = candidates_from_json(candidates_to_json(cands))
    assert as_sets(back) == as_sets(cands)
    assert [c.centroid_mm for c in back] == [c.centroid_mm for c in cands]
    bad = candidates_to_json(cands)
    bad[0]["voxel_count"] += 1
    with pytest.raises(ValueError):
        candidates_from_json(bad)
