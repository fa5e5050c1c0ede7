"""Independent reference implementations used only by the tests."""

import numpy as np
import shapely
from shapely.geometry import Polygon


def raster_coverage(poly: np.ndarray, image_h: int, image_w: int, patch: int) -> np.ndarray:
    """Per-patch fraction of pixel centers covered by ``poly`` (shapely ``covers``)."""
    ys, xs = np.mgrid[0:image_h, 0:image_w]
    pts = shapely.points((xs + 0.5) / image_w, (ys + 0.5) / image_h)
    hit = shapely.covers(Polygon(poly), pts)
    rows, cols = image_h // patch, image_w // patch
    return hit.reshape(rows, patch, cols, patch).mean(axis=(1, 3)).reshape(-1)


def raster_mask(points, regions, image_h, image_w, patch, threshold) -> np.ndarray:
    cols = [raster_coverage(points[list(r.indices)], image_h, image_w, patch) >= threshold for r in regions]
    n = (image_h // patch) * (image_w // patch)
    return np.stack(cols, axis=1) if cols else np.zeros((n, 0), dtype=bool)


def pairwise_attention(membership: np.ndarray) -> np.ndarray:
    n, k = membership.shape
    out = np.zeros((n, n), dtype=bool)
    for i in range(n):
        if not membership[i].any():
            out[i] = True
            continue
        for j in range(n):
            out[i, j] = i == j or any(membership[i, r] and membership[j, r] for r in range(k))
    return out


def star_polygon(rng, n_vertices, center=(0.5, 0.5), r_lo=0.05, r_hi=0.45) -> np.ndarray:
    ang = np.sort(rng.uniform(0, 2 * np.pi, n_vertices))
    rad = rng.uniform(r_lo, r_hi, n_vertices)
    pts = np.stack([center[0] + rad * np.cos(ang), center[1] + rad * np.sin(ang)], axis=1)
    return np.clip(pts, 0.0, 1.0)


def dense_masked_attention(q, k, v, allowed):
    """Explicit softmax with -inf fill on float64 numpy arrays."""
    logits = q @ k.T / np.sqrt(q.shape[-1])
    logits = np.where(allowed, logits, -np.inf)
    logits = logits - logits.max(axis=-1, keepdims=True)
    w = np.exp(logits)
    w /= w.sum(axis=-1, keepdims=True)
    return w @ v


def logsumexp_nll(logits: np.ndarray, rows, ids) -> float:
    total = 0.0
    for r, t in zip(rows, ids):
        row = logits[r]
        m = row.max()
        lse = m + np.log(np.sum(np.exp(row - m)))
        total += lse - row[t]
    return total / len(ids)
