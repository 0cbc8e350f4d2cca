"""Core 3D types and point-cloud operations.

Conventions used throughout the package:
  * positions are float64 arrays of shape (3,), in meters
  * quaternions are float64 arrays of shape (4,), ordered (w, x, y, z),
    unit norm
  * point clouds are float64 arrays of shape (N, 3) with an optional
    integer part-label array of shape (N,)
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

__all__ = [
    "Pose",
    "PointCloud",
    "quat_normalize",
    "quat_multiply",
    "quat_conjugate",
    "quat_rotate",
    "quat_from_axis_angle",
    "quat_slerp",
    "farthest_point_sample",
    "min_distance",
    "transform_cloud",
    "load_cloud",
    "save_cloud",
]


class GeometryError(ValueError):
    """Bad geometric input (empty cloud, out-of-range index, ...)."""


# ---------------------------------------------------------------------------
# quaternions


def quat_normalize(q) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q)
    if n == 0.0 or not np.isfinite(n):
        raise GeometryError("cannot normalize zero/non-finite quaternion")
    return q / n


def quat_multiply(a, b) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        dtype=np.float64,
    )


def quat_conjugate(q) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_rotate(q, points: np.ndarray) -> np.ndarray:
    """Rotate one point (3,) or many points (N, 3) by unit quaternion q."""
    q = np.asarray(q, dtype=np.float64)
    p = np.asarray(points, dtype=np.float64)
    w, x, y, z = q
    # rotation matrix form; cheaper than per-point quaternion products
    R = np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )
    return p @ R.T


def quat_from_axis_angle(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    n = np.linalg.norm(axis)
    if n == 0.0:
        return np.array([1.0, 0.0, 0.0, 0.0])
    axis = axis / n
    h = 0.5 * angle
    return np.concatenate(([np.cos(h)], np.sin(h) * axis))


def quat_slerp(a, b, t: float) -> np.ndarray:
    """Spherical interpolation between unit quaternions, shortest arc."""
    a = quat_normalize(a)
    b = quat_normalize(b)
    dot = float(np.dot(a, b))
    if dot < 0.0:
        b = -b
        dot = -dot
    if dot > 1.0 - 1e-12:
        return quat_normalize(a + t * (b - a))
    theta = np.arccos(np.clip(dot, -1.0, 1.0))
    s = np.sin(theta)
    return (np.sin((1.0 - t) * theta) / s) * a + (np.sin(t * theta) / s) * b


# ---------------------------------------------------------------------------
# poses


@dataclass(frozen=True)
class Pose:
    """Rigid transform: rotate by ``quat`` then translate by ``position``."""

    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    quat: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=np.float64))
        q = np.asarray(self.quat, dtype=np.float64)
        if abs(np.linalg.norm(q) - 1.0) > 1e-9:
            raise GeometryError(f"quaternion norm {np.linalg.norm(q)!r} not within 1e-9 of 1")
        object.__setattr__(self, "quat", q)
        if not np.all(np.isfinite(self.position)):
            raise GeometryError("non-finite position")

    @staticmethod
    def identity() -> "Pose":
        return Pose()

    def apply(self, points: np.ndarray) -> np.ndarray:
        return quat_rotate(self.quat, points) + self.position

    def compose(self, other: "Pose") -> "Pose":
        """self ∘ other: apply ``other`` first, then ``self``."""
        return Pose(
            position=self.apply(other.position),
            quat=quat_normalize(quat_multiply(self.quat, other.quat)),
        )

    def inverse(self) -> "Pose":
        qi = quat_conjugate(self.quat)
        return Pose(position=-quat_rotate(qi, self.position), quat=qi)


# ---------------------------------------------------------------------------
# point clouds


@dataclass
class PointCloud:
    points: np.ndarray
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
            if len(self.labels) != len(self.points):
                raise GeometryError("labels length differs from point count")

    def __len__(self) -> int:
        return len(self.points)

    def take(self, indices) -> "PointCloud":
        idx = np.asarray(indices, dtype=np.int64)
        return PointCloud(
            self.points[idx],
            None if self.labels is None else self.labels[idx],
        )


# beyond this size the n x n distance matrix is not worth its memory
_FPS_MATRIX_CUTOFF = 2048


def farthest_point_sample(cloud: PointCloud, k: int, seed_index: int = 0) -> PointCloud:
    """Greedy max-min subset of size k, starting from cloud[seed_index].

    Deterministic; ties in the max-min step break toward the lower index.
    """
    n = len(cloud)
    if n == 0:
        raise GeometryError("farthest_point_sample on empty cloud")
    if not (1 <= k <= n):
        raise GeometryError(f"k={k} out of range [1, {n}]")
    if not (0 <= seed_index < n):
        raise GeometryError(f"seed_index={seed_index} out of range")

    pts = cloud.points
    chosen = np.empty(k, dtype=np.int64)
    chosen[0] = seed_index
    if n <= _FPS_MATRIX_CUTOFF:
        # Precomputing all pairwise distances turns every greedy pick into
        # two O(n) array passes; the environment resizes observation clouds
        # through here every step, where the row-at-a-time loop dominated
        # episode cost. Same arithmetic per entry (sqrt of the ordered
        # 3-term square sum), so the selection is unchanged.
        x, y, z = pts[:, 0], pts[:, 1], pts[:, 2]
        d = x[:, None] - x[None, :]
        s2 = d * d
        d = y[:, None] - y[None, :]
        s2 += d * d
        d = z[:, None] - z[None, :]
        s2 += d * d
        D = np.sqrt(s2)
        dist = D[seed_index].copy()
        for i in range(1, k):
            nxt = int(np.argmax(dist))  # first (lowest-index) maximum
            chosen[i] = nxt
            np.minimum(dist, D[nxt], out=dist)
        return cloud.take(chosen)
    dist = np.linalg.norm(pts - pts[seed_index], axis=1)
    for i in range(1, k):
        nxt = int(np.argmax(dist))  # argmax returns first (lowest-index) maximum
        chosen[i] = nxt
        dist = np.minimum(dist, np.linalg.norm(pts - pts[nxt], axis=1))
    return cloud.take(chosen)


def min_distance(point: np.ndarray, cloud: PointCloud) -> float:
    """Exact Euclidean distance from ``point`` to its nearest cloud point."""
    if len(cloud) == 0:
        raise GeometryError("min_distance over empty cloud")
    p = np.asarray(point, dtype=np.float64)
    return float(np.min(np.linalg.norm(cloud.points - p, axis=1)))


def transform_cloud(cloud: PointCloud, pose: Pose) -> PointCloud:
    return PointCloud(pose.apply(cloud.points), cloud.labels)


# ---------------------------------------------------------------------------
# file format: one point per line `x y z [label]`, '#' comments ignored


def load_cloud(path) -> PointCloud:
    pts = []
    labels = []
    has_labels = None
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        fields = line.split()
        if len(fields) not in (3, 4):
            raise GeometryError(f"{path}:{lineno}: expected 3 or 4 fields, got {len(fields)}")
        if has_labels is None:
            has_labels = len(fields) == 4
        elif has_labels != (len(fields) == 4):
            raise GeometryError(f"{path}:{lineno}: inconsistent label column")
        pts.append([float(v) for v in fields[:3]])
        if has_labels:
            labels.append(int(fields[3]))
    if not pts:
        raise GeometryError(f"{path}: no points")
    return PointCloud(np.array(pts), np.array(labels) if has_labels else None)


def save_cloud(cloud: PointCloud, path) -> None:
    lines = []
    for i, p in enumerate(cloud.points):
        rec = f"{p[0]:.9g} {p[1]:.9g} {p[2]:.9g}"
        if cloud.labels is not None:
            rec += f" {int(cloud.labels[i])}"
        lines.append(rec)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
