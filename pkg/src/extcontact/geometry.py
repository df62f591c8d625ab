"""Point-set primitives: nearest distances, Chamfer distance, crop, downsample.

Clouds are ``(M, 3)`` float arrays in meters. Functions never mutate inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError

# pairwise blocks above this many entries are evaluated in row chunks
_BLOCK = 1 << 20


@dataclass(frozen=True)
class CropBox:
    lo: tuple[float, float, float]
    hi: tuple[float, float, float]

    def __post_init__(self):
        if any(a > b for a, b in zip(self.lo, self.hi)):
            raise ValueError(f"crop box min {self.lo} exceeds max {self.hi}")

    def contains(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points)
        return np.all((pts >= np.asarray(self.lo)) & (pts <= np.asarray(self.hi)), axis=-1)


def as_cloud(points, name: str = "cloud") -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1 and pts.size == 3:
        pts = pts.reshape(1, 3)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise DataError(f"{name} must have shape (M, 3), got {pts.shape}")
    if not np.all(np.isfinite(pts)):
        raise DataError(f"{name} contains non-finite coordinates")
    return pts


def nearest_distances(queries: np.ndarray, ref: np.ndarray) -> np.ndarray:
    """Distance from every query point to its nearest neighbour in ``ref``.

    Exhaustive search: the difference vectors are formed explicitly (no
    ``|a|^2 + |b|^2 - 2ab`` expansion) so results agree with a scalar loop to
    rounding.
    """
    q = np.asarray(queries, dtype=float)
    r = np.asarray(ref, dtype=float)
    if len(r) == 0:
        raise DataError("empty annotation set")
    out = np.empty(len(q))
    step = max(1, _BLOCK // max(1, len(r)))
    for start in range(0, len(q), step):
        diff = q[start:start + step, None, :] - r[None, :, :]
        out[start:start + step] = np.sqrt(np.min(np.einsum("ijk,ijk->ij", diff, diff), axis=1))
    return out


def min_distance_to_set(p, points) -> float:
    """Minimum Euclidean distance from ``p`` to a nonempty point set."""
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(pts) == 0:
        raise DataError("empty annotation set")
    return float(nearest_distances(np.asarray(p, dtype=float).reshape(1, 3), pts)[0])


def chamfer_distance(a, b) -> float:
    """Symmetric Chamfer distance in the input units.

    Mean of the two directed average nearest-neighbour distances, using
    unsquared Euclidean distance.
    """
    a = np.asarray(a, dtype=float).reshape(-1, 3)
    b = np.asarray(b, dtype=float).reshape(-1, 3)
    if len(a) == 0 or len(b) == 0:
        raise DataError("chamfer distance needs two nonempty point sets")
    ab = nearest_distances(a, b).mean()
    ba = nearest_distances(b, a).mean()
    return 0.5 * float(ab + ba)


def crop(cloud, box: CropBox) -> np.ndarray:
    """Keep the points inside the closed box, preserving order."""
    pts = np.asarray(cloud).reshape(-1, 3)
    kept = pts[box.contains(pts)]
    if len(kept) == 0:
        raise DataError("crop produced empty cloud")
    return kept


def downsample(cloud, target: int, seed) -> np.ndarray:
    """Seeded uniform subsample to exactly ``target`` points.

    Without replacement when the cloud is large enough, with replacement
    otherwise. ``seed`` may be an int or a ``numpy.random.Generator``.
    """
    if target < 1:
        raise ValueError("target must be >= 1")
    pts = np.asarray(cloud).reshape(-1, 3)
    if len(pts) == 0:
        raise DataError("cannot downsample an empty cloud")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if len(pts) >= target:
        idx = rng.choice(len(pts), size=target, replace=False)
    else:
        idx = rng.integers(0, len(pts), size=target)
    return pts[idx]


def centroid(cloud) -> np.ndarray:
    pts = np.asarray(cloud, dtype=float).reshape(-1, 3)
    if len(pts) == 0:
        raise DataError("centroid of an empty cloud")
    return pts.mean(axis=0)


def bbox_diagonal(cloud) -> float:
    pts = np.asarray(cloud, dtype=float).reshape(-1, 3)
    return float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0)))


def quat_to_matrix(q) -> np.ndarray:
    """Rotation matrix of a unit quaternion ``(w, x, y, z)``."""
    w, x, y, z = np.asarray(q, dtype=float) / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def matrix_to_quat(R) -> np.ndarray:
    """Unit quaternion ``(w, x, y, z)`` with ``w >= 0``."""
    R = np.asarray(R, dtype=float)
    tr = np.trace(R)
    if tr > 0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = np.array([0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s,
                      (R[1, 0] - R[0, 1]) / s])
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = np.array([(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s,
                      (R[0, 2] + R[2, 0]) / s])
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = np.array([(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s,
                      (R[1, 2] + R[2, 1]) / s])
    else:
        s = 2.0 * np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = np.array([(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s,
                      (R[1, 2] + R[2, 1]) / s, 0.25 * s])
    q /= np.linalg.norm(q)
    return canonical_quat(q)


def canonical_quat(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q)
    if n == 0 or not np.isfinite(n):
        raise DataError("zero quaternion")
    q = q / n
    return -q if q[0] < 0 else q


def axis_angle(axis, angle: float) -> np.ndarray:
    """Rotation matrix for ``angle`` radians about ``axis`` (Rodrigues)."""
    k = np.asarray(axis, dtype=float)
    k = k / np.linalg.norm(k)
    K = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + np.sin(angle) * K + (1 - np.cos(angle)) * (K @ K)
