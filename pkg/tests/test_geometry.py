import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from emo_mllm.errors import DataError, GeometryError
from emo_mllm.geometry import (N_MESH_LANDMARKS, FaceRegion, Landmark, PatchGrid, RegionMask,
                               canonical_face_regions, compile_region_mask, expand_to_attention_mask,
                               load_landmarks, load_regions, polygon_is_simple, save_landmarks,
                               save_regions, validate_region)
from emo_mllm.synthetic import canonical_face

from oracles import pairwise_attention, raster_mask, star_polygon

QUADRANT = np.array([[0.0, 0.0], [0.5, 0.0], [0.5, 0.5], [0.0, 0.5]])


def random_case(rng):
    grid = PatchGrid(*[int(rng.choice([16, 32, 48]))] * 2, patch=int(rng.choice([4, 8, 16])))
    n_regions = int(rng.integers(0, 5))
    points, regions = [], []
    for r in range(n_regions):
        poly = star_polygon(rng, int(rng.integers(3, 10)), center=rng.uniform(0.2, 0.8, 2))
        regions.append(FaceRegion(f"r{r}", tuple(range(len(points), len(points) + len(poly)))))
        points.extend(poly)
    points.extend(rng.uniform(0, 1, (5, 2)))  # landmarks outside any region
    return np.array(points), regions, grid, float(rng.uniform(0.05, 1.0))


def test_quadrant_square_matches_raster_oracle():
    grid = PatchGrid(64, 64, 16)
    mask = compile_region_mask(QUADRANT, [FaceRegion("tl", (0, 1, 2, 3))], grid, 0.5)
    expected = np.zeros(16, dtype=bool)
    expected[[0, 1, 4, 5]] = True
    assert np.array_equal(mask.membership[:, 0], expected)
    assert np.array_equal(mask.membership, raster_mask(QUADRANT, mask_regions(), 64, 64, 16, 0.5))


def mask_regions():
    return [FaceRegion("tl", (0, 1, 2, 3))]


def test_empty_region_list_gives_zero_columns():
    pts = np.random.default_rng(1).uniform(0, 1, (10, 2))
    mask = compile_region_mask(pts, [], PatchGrid(32, 32, 8))
    assert mask.membership.shape == (16, 0)


def test_tiny_polygon_never_fully_covers_a_patch():
    tri = np.array([[0.30, 0.30], [0.33, 0.30], [0.31, 0.33]])
    grid = PatchGrid(64, 64, 16)
    mask = compile_region_mask(tri, [FaceRegion("t", (0, 1, 2))], grid, 1.0)
    assert not mask.membership.any()
    assert not raster_mask(tri, [FaceRegion("t", (0, 1, 2))], 64, 64, 16, 1.0).any()


def test_landmark_objects_accepted():
    lms = [Landmark(float(x), float(y)) for x, y in QUADRANT]
    mask = compile_region_mask(lms, mask_regions(), PatchGrid(64, 64, 16), 0.5)
    assert mask.membership[:, 0].sum() == 4


def test_matches_shapely_oracle_on_random_cases():
    rng = np.random.default_rng(2024)
    for _ in range(100):
        pts, regions, grid, thr = random_case(rng)
        got = compile_region_mask(pts, regions, grid, thr).membership
        want = raster_mask(pts, regions, grid.image_h, grid.image_w, grid.patch, thr)
        assert np.array_equal(got, want)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_membership_monotone_in_threshold(seed):
    rng = np.random.default_rng(seed)
    pts, regions, grid, _ = random_case(rng)
    lo, hi = sorted(rng.uniform(0.01, 1.0, 2))
    m_lo = compile_region_mask(pts, regions, grid, lo).membership
    m_hi = compile_region_mask(pts, regions, grid, hi).membership
    assert not (m_hi & ~m_lo).any()


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_region_order_permutes_columns(seed):
    rng = np.random.default_rng(seed)
    pts, regions, grid, thr = random_case(rng)
    perm = rng.permutation(len(regions))
    a = compile_region_mask(pts, regions, grid, thr).membership
    b = compile_region_mask(pts, [regions[i] for i in perm], grid, thr).membership
    assert np.array_equal(a[:, perm], b)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_attention_mask_matches_pairwise_oracle(seed):
    rng = np.random.default_rng(seed)
    pts, regions, grid, thr = random_case(rng)
    mask = compile_region_mask(pts, regions, grid, thr)
    allowed = expand_to_attention_mask(mask).allowed
    assert np.array_equal(allowed, pairwise_attention(mask.membership))
    assert allowed.any(axis=1).all()
    assert allowed.diagonal().all()


def test_attention_mask_forced_example():
    membership = np.array([[1, 0], [1, 0], [0, 1], [0, 0]], dtype=bool)
    allowed = expand_to_attention_mask(RegionMask(membership, PatchGrid(2, 2, 1), 0.5)).allowed
    assert allowed[0].tolist() == [True, True, False, False]
    assert allowed[2].tolist() == [False, False, True, False]
    assert allowed[3].all()


@pytest.mark.parametrize("membership", [np.ones((9, 1), dtype=bool), np.zeros((9, 0), dtype=bool)])
def test_attention_mask_all_true_cases(membership):
    allowed = expand_to_attention_mask(RegionMask(membership, PatchGrid(3, 3, 1), 0.5)).allowed
    assert allowed.all()


def test_bad_inputs():
    grid = PatchGrid(32, 32, 8)
    with pytest.raises(IndexError):
        compile_region_mask(QUADRANT, [FaceRegion("x", (0, 1, 7))], grid)
    with pytest.raises(GeometryError):
        compile_region_mask(QUADRANT, [FaceRegion("x", (0, 0, 1))], grid)
    with pytest.raises(DataError):
        compile_region_mask(QUADRANT, mask_regions(), grid, 0.0)
    with pytest.raises(DataError):
        Landmark(1.5, 0.2)
    with pytest.raises(GeometryError):
        PatchGrid(30, 30, 8)


def test_simplicity_checker():
    assert polygon_is_simple(QUADRANT)
    bowtie = np.array([[0, 0], [1, 1], [1, 0], [0, 1]], dtype=float)
    assert not polygon_is_simple(bowtie)
    with pytest.raises(GeometryError):
        validate_region(FaceRegion("bow", (0, 1, 2, 3)), bowtie)


def test_canonical_regions_structure():
    regions = canonical_face_regions()
    assert len(regions) == 7
    assert len({r.name for r in regions}) == 7
    for r in regions:
        assert len(r.indices) >= 3
        assert all(0 <= i < N_MESH_LANDMARKS for i in r.indices)
    assert canonical_face_regions() == regions


def test_canonical_regions_valid_on_synthetic_face():
    face = canonical_face()
    assert face.shape == (N_MESH_LANDMARKS, 2)
    for r in canonical_face_regions():
        validate_region(r, face)


def test_landmark_and_region_files_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    frames = [rng.uniform(0, 1, (N_MESH_LANDMARKS, 2)) for _ in range(3)]
    save_landmarks(tmp_path / "lm.json", frames)
    back = load_landmarks(tmp_path / "lm.json")
    assert all(np.array_equal(a, b) for a, b in zip(frames, back))
    save_regions(tmp_path / "regions.json", canonical_face_regions())
    assert load_regions(tmp_path / "regions.json") == canonical_face_regions()
