"""Synthetic labeled object corpus for the segmentation pipeline.

Each object is a surface-sampled point cloud whose integer labels are
ground-truth part ids, plus a metadata record naming the parts and the
part that should not be touched (if any).  Objects are generated
deterministically so the bundled files can be regenerated bit-exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from .geometry import GeometryError, PointCloud, load_cloud, save_cloud

__all__ = [
    "ObjectModel",
    "make_knife",
    "make_hammer",
    "make_ball",
    "default_corpus",
    "save_object",
    "load_object",
    "load_corpus",
    "bundled_corpus_dir",
]

_DATA_DIR = Path(__file__).parent / "data" / "objects"


@dataclass
class ObjectModel:
    name: str
    cloud: PointCloud                      # labeled, roughly centered
    parts: Dict[int, str]                  # label -> part name
    negative_part: Optional[str] = None    # part that must not be touched
    field_notes: str = ""

    def __post_init__(self):
        if self.cloud.labels is None:
            raise GeometryError(f"{self.name}: corpus objects must be labeled")
        used = set(int(v) for v in np.unique(self.cloud.labels))
        declared = set(self.parts)
        if not used <= declared:
            raise GeometryError(f"{self.name}: labels {used - declared} lack part names")
        if self.negative_part is not None and self.negative_part not in self.parts.values():
            raise GeometryError(f"{self.name}: negative part {self.negative_part!r} unknown")

    def part_label(self, part_name: str) -> int:
        for label, name in self.parts.items():
            if name == part_name:
                return label
        raise KeyError(part_name)


def _cylinder_surface(rng, n, radius, x0, x1):
    """Points on the side surface of a cylinder along the x axis."""
    x = rng.uniform(x0, x1, size=n)
    theta = rng.uniform(0.0, 2 * np.pi, size=n)
    return np.column_stack([x, radius * np.cos(theta), radius * np.sin(theta)])


def _box_surface(rng, n, lo, hi):
    """Points on the surface of an axis-aligned box, faces weighted by area."""
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    ext = hi - lo
    areas = np.array([ext[1] * ext[2], ext[0] * ext[2], ext[0] * ext[1]])
    areas = np.repeat(areas, 2)  # -face, +face per axis
    probs = areas / areas.sum()
    face = rng.choice(6, size=n, p=probs)
    pts = lo + rng.uniform(size=(n, 3)) * ext
    axis = face // 2
    side = face % 2
    pts[np.arange(n), axis] = np.where(side == 0, lo[axis], hi[axis])
    return pts


def make_knife(n: int = 1024, seed: int = 0) -> ObjectModel:
    """Cylindrical handle (label 0) plus a thin blade slab (label 1)."""
    rng = np.random.default_rng(seed)
    n_handle = n // 2
    handle = _cylinder_surface(rng, n_handle, radius=0.012, x0=-0.12, x1=0.0)
    # the blade drops below the handle axis so every one of the six
    # cardinal views shows a promptable blade footprint
    blade = _box_surface(
        rng, n - n_handle, lo=(0.0, -0.008, -0.04), hi=(0.14, 0.008, 0.008)
    )
    pts = np.vstack([handle, blade])
    labels = np.concatenate([np.zeros(n_handle, dtype=np.int64),
                             np.ones(n - n_handle, dtype=np.int64)])
    return ObjectModel(
        name="knife",
        cloud=PointCloud(pts, labels),
        parts={0: "handle", 1: "blade"},
        negative_part="blade",
    )


def make_hammer(n: int = 1024, seed: int = 1) -> ObjectModel:
    """Vertical handle (label 0) with a box head on top (label 1)."""
    rng = np.random.default_rng(seed)
    n_handle = n // 2
    # handle along z: reuse the x-axis cylinder and swap coordinates
    raw = _cylinder_surface(rng, n_handle, radius=0.012, x0=-0.10, x1=0.02)
    handle = raw[:, [1, 2, 0]]  # cylinder axis becomes z
    head = _box_surface(
        rng, n - n_handle, lo=(-0.05, -0.015, 0.02), hi=(0.05, 0.015, 0.055)
    )
    pts = np.vstack([handle, head])
    labels = np.concatenate([np.zeros(n_handle, dtype=np.int64),
                             np.ones(n - n_handle, dtype=np.int64)])
    return ObjectModel(
        name="hammer",
        cloud=PointCloud(pts, labels),
        parts={0: "handle", 1: "head"},
        negative_part="head",
    )


def make_ball(n: int = 512, seed: int = 2) -> ObjectModel:
    """A single-part sphere: nothing on it is off-limits."""
    # Fibonacci sphere: near-uniform spacing, deterministic without an rng
    i = np.arange(n)
    phi = np.arccos(1.0 - 2.0 * (i + 0.5) / n)
    theta = np.pi * (1.0 + np.sqrt(5.0)) * i
    radius = 0.04
    pts = radius * np.column_stack(
        [np.sin(phi) * np.cos(theta), np.sin(phi) * np.sin(theta), np.cos(phi)]
    )
    return ObjectModel(
        name="ball",
        cloud=PointCloud(pts, np.zeros(n, dtype=np.int64)),
        parts={0: "body"},
        negative_part=None,
    )


def default_corpus() -> List[ObjectModel]:
    return [make_knife(), make_hammer(), make_ball()]


# ---------------------------------------------------------------------------
# persistence: <name>.cloud (geometry file format) + <name>.json sidecar


def save_object(obj: ObjectModel, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_cloud(obj.cloud, directory / f"{obj.name}.cloud")
    meta = {
        "name": obj.name,
        "parts": {str(k): v for k, v in obj.parts.items()},
        "negative_part": obj.negative_part,
    }
    meta_path = directory / f"{obj.name}.json"
    meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n",
                         encoding="utf-8")
    return meta_path


def load_object(meta_path) -> ObjectModel:
    meta_path = Path(meta_path)
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    cloud = load_cloud(meta_path.with_suffix(".cloud"))
    return ObjectModel(
        name=meta["name"],
        cloud=cloud,
        parts={int(k): v for k, v in meta["parts"].items()},
        negative_part=meta.get("negative_part"),
    )


def load_corpus(directory) -> List[ObjectModel]:
    directory = Path(directory)
    metas = sorted(directory.glob("*.json"))
    if not metas:
        raise GeometryError(f"{directory}: no object metadata files")
    return [load_object(m) for m in metas]


def bundled_corpus_dir() -> Path:
    return _DATA_DIR
