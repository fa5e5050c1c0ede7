"""Facial region masks over a ViT patch grid.

Landmarks are normalized ``(x, y)`` points in ``[0, 1]``. A region is a simple
polygon through a subset of landmark indices. A patch belongs to a region when
at least ``threshold`` of its pixel centers fall inside the polygon (even-odd
rule, boundary inclusive).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataError, GeometryError

N_MESH_LANDMARKS = 468
DEFAULT_THRESHOLD = 0.25


@dataclass(frozen=True)
class Landmark:
    x: float
    y: float

    def __post_init__(self):
        if not (0.0 <= self.x <= 1.0 and 0.0 <= self.y <= 1.0):
            raise DataError(f"landmark ({self.x}, {self.y}) outside the unit square")


@dataclass(frozen=True)
class FaceRegion:
    name: str
    indices: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "indices", tuple(int(i) for i in self.indices))


@dataclass(frozen=True)
class PatchGrid:
    image_h: int
    image_w: int
    patch: int

    def __post_init__(self):
        if self.patch < 1 or self.image_h < 1 or self.image_w < 1:
            raise GeometryError(f"non-positive grid dimensions: {self}")
        if self.image_h % self.patch or self.image_w % self.patch:
            raise GeometryError(f"patch {self.patch} does not divide {self.image_h}x{self.image_w}")

    @property
    def n_rows(self) -> int:
        return self.image_h // self.patch

    @property
    def n_cols(self) -> int:
        return self.image_w // self.patch

    @property
    def n_patches(self) -> int:
        return self.n_rows * self.n_cols

    def pixel_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Normalized pixel-center coordinates, each of shape [image_h, image_w]."""
        ys = (np.arange(self.image_h) + 0.5) / self.image_h
        xs = (np.arange(self.image_w) + 0.5) / self.image_w
        return np.meshgrid(xs, ys)


@dataclass(frozen=True)
class RegionMask:
    membership: np.ndarray  # bool [n_patches, n_regions]
    grid: PatchGrid
    threshold: float
    region_names: tuple[str, ...] = ()

    @property
    def n_regions(self) -> int:
        return self.membership.shape[1]


@dataclass(frozen=True)
class AttentionMask:
    allowed: np.ndarray  # bool [n_patches, n_patches]


def as_points(landmarks) -> np.ndarray:
    """Accept a list of Landmark or an ``[n, 2]`` array; return float64 ``[n, 2]``."""
    if isinstance(landmarks, np.ndarray):
        pts = np.asarray(landmarks, dtype=np.float64)
    else:
        pts = np.array([(lm.x, lm.y) for lm in landmarks], dtype=np.float64).reshape(-1, 2)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise DataError(f"landmarks must have shape [n, 2], got {pts.shape}")
    return pts


def points_in_polygon(px: np.ndarray, py: np.ndarray, poly: np.ndarray) -> np.ndarray:
    """Even-odd membership of points in a polygon; points on an edge count as inside."""
    inside = np.zeros(px.shape, dtype=bool)
    on_edge = np.zeros(px.shape, dtype=bool)
    n = len(poly)
    for k in range(n):
        x1, y1 = poly[k]
        x2, y2 = poly[(k + 1) % n]
        straddle = (y1 > py) != (y2 > py)
        if straddle.any():
            with np.errstate(divide="ignore", invalid="ignore"):
                x_cross = (x2 - x1) * (py - y1) / (y2 - y1) + x1
            inside ^= straddle & (px < x_cross)
        cross = (x2 - x1) * (py - y1) - (y2 - y1) * (px - x1)
        on_edge |= (
            (cross == 0)
            & (px >= min(x1, x2)) & (px <= max(x1, x2))
            & (py >= min(y1, y2)) & (py <= max(y1, y2))
        )
    return inside | on_edge


def region_polygon(points: np.ndarray, region: FaceRegion) -> np.ndarray:
    n = len(points)
    for i in region.indices:
        if not 0 <= i < n:
            raise IndexError(f"region {region.name!r}: landmark index {i} out of range for {n} landmarks")
    poly = points[list(region.indices)]
    if len(np.unique(poly, axis=0)) < 3:
        raise GeometryError(f"region {region.name!r} has fewer than 3 distinct vertices")
    return poly


def patch_coverage(poly: np.ndarray, grid: PatchGrid) -> np.ndarray:
    """Fraction of each patch's pixel centers inside ``poly``, shape [n_patches]."""
    xs, ys = grid.pixel_centers()
    hit = points_in_polygon(xs, ys, poly)
    p = grid.patch
    counts = hit.reshape(grid.n_rows, p, grid.n_cols, p).sum(axis=(1, 3))
    return counts.reshape(-1) / float(p * p)


def compile_region_mask(
    landmarks,
    regions: Sequence[FaceRegion],
    grid: PatchGrid,
    threshold: float = DEFAULT_THRESHOLD,
) -> RegionMask:
    points = as_points(landmarks)
    if len(points) == 0:
        raise DataError("landmark set is empty")
    if not 0.0 < threshold <= 1.0:
        raise DataError(f"threshold must lie in (0, 1], got {threshold}")
    membership = np.zeros((grid.n_patches, len(regions)), dtype=bool)
    for r, region in enumerate(regions):
        membership[:, r] = patch_coverage(region_polygon(points, region), grid) >= threshold
    return RegionMask(membership, grid, float(threshold), tuple(r.name for r in regions))


def expand_to_attention_mask(mask: RegionMask) -> AttentionMask:
    m = mask.membership.astype(np.int64)
    allowed = (m @ m.T) > 0
    unassigned = ~mask.membership.any(axis=1)
    allowed[unassigned, :] = True
    np.fill_diagonal(allowed, True)
    return AttentionMask(allowed)


def _orient(a, b, c) -> float:
    return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])


def _on_segment(a, b, c) -> bool:
    return min(a[0], b[0]) <= c[0] <= max(a[0], b[0]) and min(a[1], b[1]) <= c[1] <= max(a[1], b[1])


def _segments_intersect(p1, p2, q1, q2) -> bool:
    d1, d2 = _orient(q1, q2, p1), _orient(q1, q2, p2)
    d3, d4 = _orient(p1, p2, q1), _orient(p1, p2, q2)
    if ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0)) and d1 and d2 and d3 and d4:
        return True
    return (
        (d1 == 0 and _on_segment(q1, q2, p1))
        or (d2 == 0 and _on_segment(q1, q2, p2))
        or (d3 == 0 and _on_segment(p1, p2, q1))
        or (d4 == 0 and _on_segment(p1, p2, q2))
    )


def polygon_is_simple(poly: np.ndarray) -> bool:
    n = len(poly)
    if n < 3 or len(np.unique(poly, axis=0)) != n:
        return False
    edges = [(poly[k], poly[(k + 1) % n]) for k in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            adjacent = j == i + 1 or (i == 0 and j == n - 1)
            a1, a2 = edges[i]
            b1, b2 = edges[j]
            if adjacent:
                # shared vertex only; a collinear fold-back is an overlap
                shared = a2 if j == i + 1 else a1
                other_a = a1 if j == i + 1 else a2
                other_b = b2 if j == i + 1 else b1
                if _orient(other_a, shared, other_b) == 0 and _on_segment(shared, other_b, other_a):
                    return False
                if _orient(other_a, shared, other_b) == 0 and _on_segment(other_a, shared, other_b):
                    return False
                continue
            if _segments_intersect(a1, a2, b1, b2):
                return False
    return True


def validate_region(region: FaceRegion, landmarks) -> None:
    """Raise unless ``region`` is a valid simple polygon over ``landmarks``."""
    points = as_points(landmarks)
    if len(region.indices) < 3:
        raise GeometryError(f"region {region.name!r} has {len(region.indices)} vertices")
    poly = region_polygon(points, region)
    if not polygon_is_simple(poly):
        raise GeometryError(f"region {region.name!r} is not a simple polygon")


# Face-mesh outlines (468-point topology). Eye and lip loops follow the mesh's
# contour connections; brows close the upper and lower brow lines into a ring;
# jaw is the lower face oval from ear to ear; nose is a hand-picked outline.
_CANONICAL = (
    ("left_eye", (263, 249, 390, 373, 374, 380, 381, 382, 362, 398, 384, 385, 386, 387, 388, 466)),
    ("right_eye", (33, 7, 163, 144, 145, 153, 154, 155, 133, 173, 157, 158, 159, 160, 161, 246)),
    ("left_brow", (300, 293, 334, 296, 336, 285, 295, 282, 283, 276)),
    ("right_brow", (70, 63, 105, 66, 107, 55, 65, 52, 53, 46)),
    ("nose", (168, 417, 465, 357, 343, 437, 420, 279, 358, 327, 326, 2, 97, 98, 129, 49, 198, 217, 114, 128, 245, 193)),
    ("mouth", (61, 146, 91, 181, 84, 17, 314, 405, 321, 375, 291, 409, 270, 269, 267, 0, 37, 39, 40, 185)),
    ("jaw", (234, 93, 132, 58, 172, 136, 150, 149, 176, 148, 152, 377, 400, 378, 379, 365, 397, 288, 361, 323, 454)),
)


def canonical_face_regions() -> list[FaceRegion]:
    return [FaceRegion(name, idx) for name, idx in _CANONICAL]


# -- file formats ------------------------------------------------------------
# Landmark file (JSON): {"n_landmarks": 468, "frames": [[{"x": .., "y": ..}, ...], ...]}
# Region file (JSON):   {"regions": [{"name": "mouth", "indices": [61, 146, ...]}, ...]}


def save_landmarks(path, frames: Sequence[np.ndarray]) -> None:
    frames = [as_points(f) for f in frames]
    n = len(frames[0]) if frames else 0
    doc = {
        "n_landmarks": n,
        "frames": [[{"x": float(x), "y": float(y)} for x, y in f] for f in frames],
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def load_landmarks(path) -> list[np.ndarray]:
    try:
        doc = json.loads(Path(path).read_text())
        frames = [np.array([(r["x"], r["y"]) for r in face], dtype=np.float64).reshape(-1, 2) for face in doc["frames"]]
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: malformed landmark file ({exc})") from exc
    for k, f in enumerate(frames):
        if len(f) != doc.get("n_landmarks", len(f)):
            raise DataError(f"{path}: frame {k} has {len(f)} landmarks, header says {doc['n_landmarks']}")
        if ((f < 0) | (f > 1)).any():
            raise DataError(f"{path}: frame {k} has landmarks outside [0, 1]")
    return frames


def save_regions(path, regions: Sequence[FaceRegion]) -> None:
    doc = {"regions": [{"name": r.name, "indices": list(r.indices)} for r in regions]}
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def load_regions(path) -> list[FaceRegion]:
    try:
        doc = json.loads(Path(path).read_text())
        return [FaceRegion(r["name"], tuple(r["indices"])) for r in doc["regions"]]
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: malformed region file ({exc})") from exc
