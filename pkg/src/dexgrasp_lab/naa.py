"""Negative-affordance segmentation pipeline.

Renders an object cloud from the six cardinal directions, prompts a
mask-proposal provider on a regular pixel grid, de-duplicates the
proposals with bounding-box NMS, classifies each surviving mask by
blurring everything outside it and ranking embedder similarity against
the text query, and back-projects the winning masks into a point index
set — the object's negative (do-not-touch) region.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.ndimage import convolve1d

from .geometry import PointCloud, farthest_point_sample, save_cloud, load_cloud
from .policy import config_hash

__all__ = [
    "NaaError",
    "NaaConfig",
    "ViewRender",
    "GridPrompt",
    "MaskProposal",
    "NegativeAffordance",
    "VIEW_IDS",
    "render_views",
    "grid_points",
    "propose_masks",
    "nms",
    "bbox_iou",
    "visual_prompt",
    "gaussian_blur",
    "select_mask",
    "backproject",
    "parse_negative_query",
    "compute_negative_affordance",
    "save_negative_affordance",
    "load_negative_affordance",
]


class NaaError(ValueError):
    pass


# (u axis, v axis, depth axis): depth grows toward the camera, pixel x
# grows along u and pixel y along v.
_VIEW_AXES = {
    "+x": ((0, 1, 0), (0, 0, 1), (1, 0, 0)),
    "-x": ((0, -1, 0), (0, 0, 1), (-1, 0, 0)),
    "+y": ((-1, 0, 0), (0, 0, 1), (0, 1, 0)),
    "-y": ((1, 0, 0), (0, 0, 1), (0, -1, 0)),
    "+z": ((1, 0, 0), (0, 1, 0), (0, 0, 1)),
    "-z": ((1, 0, 0), (0, -1, 0), (0, 0, -1)),
}
VIEW_IDS = tuple(_VIEW_AXES)


@dataclass(frozen=True)
class NaaConfig:
    resolution: Tuple[int, int] = (224, 224)   # (W, H)
    splat_radius: int = 3                      # pixels, so surfaces render solid
    grid_size: int = 16
    iou_threshold: float = 0.7
    blur_sigma: float = 10.0
    sample_size: int = 100
    fusion: str = "union"                       # or "majority"

    def __post_init__(self):
        W, H = self.resolution
        if W <= 0 or H <= 0:
            raise NaaError("resolution must be positive")
        if self.grid_size < 1:
            raise NaaError("grid_size must be >= 1")
        if not (0.0 < self.iou_threshold <= 1.0):
            raise NaaError("iou_threshold must be in (0, 1]")
        if self.blur_sigma <= 0:
            raise NaaError("blur_sigma must be positive")
        if self.splat_radius < 0:
            raise NaaError("splat_radius must be >= 0")
        if self.sample_size < 1:
            raise NaaError("sample_size must be >= 1")
        if self.fusion not in ("union", "majority"):
            raise NaaError(f"unknown fusion mode {self.fusion!r}")


@dataclass
class ViewRender:
    view_id: str
    image: np.ndarray            # (H, W) float64 shades in [0, 1], 0 = background
    pixel_index_map: np.ndarray  # (H, W) int64 cloud index, -1 = background
    label_map: np.ndarray        # (H, W) int64 part label, -1 = background
    origin: np.ndarray           # cloud centroid (projection center)
    scale: float                 # pixels per meter

    def __post_init__(self):
        H, W = self.image.shape
        if W <= 0 or H <= 0:
            raise NaaError("empty render")
        if self.pixel_index_map.shape != (H, W) or self.label_map.shape != (H, W):
            raise NaaError("map shape differs from image shape")

    @property
    def size(self) -> Tuple[int, int]:
        H, W = self.image.shape
        return (W, H)

    def project(self, points: np.ndarray) -> np.ndarray:
        """World points -> integer pixel coordinates (x, y), same rounding
        as the renderer."""
        u_ax, v_ax, _ = (np.array(a, dtype=np.float64) for a in _VIEW_AXES[self.view_id])
        rel = np.atleast_2d(np.asarray(points, dtype=np.float64)) - self.origin
        H, W = self.image.shape
        return _to_pixels(rel @ u_ax, rel @ v_ax, self.scale, W, H)


def _to_pixels(u, v, scale, W, H):
    px = np.rint((W - 1) / 2.0 + scale * u).astype(np.int64)
    py = np.rint((H - 1) / 2.0 + scale * v).astype(np.int64)
    return np.column_stack([px, py])


def render_views(cloud: PointCloud, resolution: Tuple[int, int] = (224, 224),
                 splat_radius: int = 0) -> List[ViewRender]:
    """Orthographic point-splat renders along the six cardinal directions,
    nearest point winning each pixel.

    With splat_radius > 0 every point covers a pixel disk, so sampled
    surfaces render as solid regions; ownership of a contested pixel goes
    to the nearest point (ties: the more centered splat, then the lower
    cloud index).
    """
    if len(cloud) == 0:
        raise NaaError("cannot render an empty cloud")
    W, H = resolution
    if W <= 0 or H <= 0:
        raise NaaError("resolution must be positive")
    if splat_radius < 0:
        raise NaaError("splat_radius must be >= 0")
    pts = cloud.points
    centroid = pts.mean(axis=0)
    rel = pts - centroid
    radius = float(np.max(np.linalg.norm(rel, axis=1)))
    if len(cloud) > 1 and radius == 0.0:
        raise NaaError("degenerate cloud: all points identical")
    scale = (min(W, H) / 2.0 - 1.0) / radius if radius > 0 else 1.0

    offsets = [
        (dx, dy)
        for dx in range(-splat_radius, splat_radius + 1)
        for dy in range(-splat_radius, splat_radius + 1)
        if dx * dx + dy * dy <= splat_radius * splat_radius
    ]
    off = np.array(offsets, dtype=np.int64)
    off_norm = np.sum(off**2, axis=1)

    labels = cloud.labels if cloud.labels is not None else np.zeros(len(cloud), dtype=np.int64)
    n = len(pts)
    views = []
    for view_id, axes in _VIEW_AXES.items():
        u_ax, v_ax, d_ax = (np.array(a, dtype=np.float64) for a in axes)
        pix = _to_pixels(rel @ u_ax, rel @ v_ax, scale, W, H)
        depth = rel @ d_ax
        # one candidate per (point, splat offset); paint in ascending
        # priority so the last write wins: nearest depth, then the more
        # centered splat, then the lowest cloud index
        cand_x = (pix[:, 0][:, None] + off[:, 0]).ravel()
        cand_y = (pix[:, 1][:, None] + off[:, 1]).ravel()
        cand_idx = np.repeat(np.arange(n), len(off))
        cand_off = np.tile(off_norm, n)
        cand_depth = np.repeat(depth, len(off))
        ok = (cand_x >= 0) & (cand_x < W) & (cand_y >= 0) & (cand_y < H)
        cand_x, cand_y = cand_x[ok], cand_y[ok]
        cand_idx, cand_off, cand_depth = cand_idx[ok], cand_off[ok], cand_depth[ok]
        order = np.lexsort((-cand_idx, -cand_off, cand_depth))
        index_map = np.full((H, W), -1, dtype=np.int64)
        index_map[cand_y[order], cand_x[order]] = cand_idx[order]
        lit = index_map >= 0
        image = np.zeros((H, W))
        if depth.max() > depth.min():
            t = (depth - depth.min()) / (depth.max() - depth.min())
        else:
            t = np.ones(len(pts))
        image[lit] = 0.3 + 0.7 * t[index_map[lit]]
        label_map = np.full((H, W), -1, dtype=np.int64)
        label_map[lit] = labels[index_map[lit]]
        views.append(
            ViewRender(view_id, image, index_map, label_map, centroid, scale)
        )
    return views


# ---------------------------------------------------------------------------
# grid prompting


@dataclass
class GridPrompt:
    points: np.ndarray  # (g*g, 2) pixel coordinates
    g: int

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 2)
        if len(self.points) != self.g * self.g:
            raise NaaError("grid point count != g^2")


def grid_points(W: int, H: int, g: int = 16) -> GridPrompt:
    """Regular g x g prompt lattice: x_i = i/(g+1) * W, i = 1..g (same for y)."""
    if g < 1:
        raise NaaError("g must be >= 1")
    if W < g + 1 or H < g + 1:
        raise NaaError(f"image {W}x{H} too small for g={g}")
    # multiply before dividing: exact whenever (g+1) divides i*W
    i = np.arange(1, g + 1)
    xs = i * W / (g + 1)
    ys = i * H / (g + 1)
    gx, gy = np.meshgrid(xs, ys)  # row-major: y varies slowly
    return GridPrompt(np.column_stack([gx.ravel(), gy.ravel()]), g)


# ---------------------------------------------------------------------------
# proposals and NMS


@dataclass
class MaskProposal:
    mask: np.ndarray                      # (H, W) bool
    bbox: Tuple[int, int, int, int]       # inclusive (x0, y0, x1, y1)
    provider_score: float

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=bool)
        if not self.mask.any():
            raise NaaError("empty mask proposal")
        if tuple(self.bbox) != _tight_bbox(self.mask):
            raise NaaError("bbox is not the tight bounding box of the mask")

    @classmethod
    def from_mask(cls, mask: np.ndarray, score: float) -> "MaskProposal":
        mask = np.asarray(mask, dtype=bool)
        if not mask.any():
            raise NaaError("empty mask proposal")
        return cls(mask, _tight_bbox(mask), float(score))

    @property
    def area(self) -> int:
        return int(np.count_nonzero(self.mask))


def _tight_bbox(mask: np.ndarray) -> Tuple[int, int, int, int]:
    ys, xs = np.nonzero(mask)
    return (int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max()))


def bbox_iou(a: Tuple[int, int, int, int], b: Tuple[int, int, int, int]) -> float:
    """IoU of two inclusive pixel bounding boxes."""
    ix0, iy0 = max(a[0], b[0]), max(a[1], b[1])
    ix1, iy1 = min(a[2], b[2]), min(a[3], b[3])
    iw, ih = ix1 - ix0 + 1, iy1 - iy0 + 1
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    area_a = (a[2] - a[0] + 1) * (a[3] - a[1] + 1)
    area_b = (b[2] - b[0] + 1) * (b[3] - b[1] + 1)
    return inter / (area_a + area_b - inter)


def propose_masks(view: ViewRender, grid: GridPrompt, suite) -> Tuple[List[MaskProposal], int]:
    """Prompt the segmenter at every grid point; returns (proposals,
    number of prompts skipped due to provider failures)."""
    from .providers import ProviderError, ProviderTransportError

    W, H = view.size
    failures = 0
    proposals: List[MaskProposal] = []
    for x, y in grid.points:
        px, py = int(x), int(y)
        if not (0 <= px < W and 0 <= py < H):
            raise NaaError(f"grid point ({x}, {y}) outside the view")
        try:
            results = suite.segmenter.segment(view, (px, py))
        except ProviderTransportError:
            raise
        except ProviderError:
            failures += 1
            continue
        for mask, score in results:
            proposals.append(MaskProposal.from_mask(mask, score))
    return proposals, failures


def nms(proposals: Sequence[MaskProposal], iou_threshold: float = 0.7) -> List[MaskProposal]:
    """Greedy NMS over bounding boxes.

    Candidates are visited by provider score descending, ties broken by
    larger mask area and then lower original index; a candidate is kept
    iff its bbox IoU with every already-kept proposal is <= threshold.
    """
    if not (0.0 < iou_threshold <= 1.0):
        raise NaaError("iou_threshold must be in (0, 1]")
    order = sorted(
        range(len(proposals)),
        key=lambda i: (-proposals[i].provider_score, -proposals[i].area, i),
    )
    kept: List[MaskProposal] = []
    for i in order:
        cand = proposals[i]
        if all(bbox_iou(cand.bbox, k.bbox) <= iou_threshold for k in kept):
            kept.append(cand)
    return kept


# ---------------------------------------------------------------------------
# visual prompting


def _gauss_kernel(sigma: float) -> np.ndarray:
    radius = math.ceil(3.0 * sigma)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_blur(image: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur, kernel truncated at radius ceil(3*sigma).

    Border pixels renormalize over the in-image kernel support, so a
    constant image blurs to itself.
    """
    if sigma <= 0:
        raise NaaError("sigma must be positive")
    k = _gauss_kernel(sigma)
    num = convolve1d(image, k, axis=0, mode="constant", cval=0.0)
    num = convolve1d(num, k, axis=1, mode="constant", cval=0.0)
    den = convolve1d(np.ones_like(image), k, axis=0, mode="constant", cval=0.0)
    den = convolve1d(den, k, axis=1, mode="constant", cval=0.0)
    return num / den


def visual_prompt(image: np.ndarray, mask: np.ndarray, blur_sigma: float = 10.0) -> np.ndarray:
    """Keep in-mask pixels bit-exact; blur everything outside the mask."""
    image = np.asarray(image, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != image.shape:
        raise NaaError("mask shape differs from image shape")
    out = gaussian_blur(image, blur_sigma)
    out[mask] = image[mask]
    return out


# ---------------------------------------------------------------------------
# selection and back-projection


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def select_mask(prompted_images: Sequence[np.ndarray], query_text: str, suite,
                contexts: Optional[Sequence] = None) -> int:
    """Index of the prompted image whose embedding is most similar to the
    query text (cosine); ties break toward the lowest index."""
    if len(prompted_images) == 0:
        raise NaaError("select_mask needs at least one candidate")
    q = np.asarray(suite.embedder.embed_text(query_text), dtype=np.float64)
    best, best_sim = 0, -np.inf
    for i, img in enumerate(prompted_images):
        ctx = contexts[i] if contexts is not None else None
        v = np.asarray(suite.embedder.embed_image(img, ctx), dtype=np.float64)
        sim = _cosine(v, q)
        if sim > best_sim:
            best, best_sim = i, sim
    return best


def backproject(view: ViewRender, mask: np.ndarray, cloud: PointCloud) -> np.ndarray:
    """Sorted cloud indices whose owning pixel lies inside the mask."""
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != view.image.shape:
        raise NaaError("mask dims do not match the view")
    idx = view.pixel_index_map[mask]
    idx = idx[idx >= 0]
    if idx.size and idx.max() >= len(cloud):
        raise NaaError("index map references points outside the cloud")
    return np.unique(idx)


# ---------------------------------------------------------------------------
# end-to-end


@dataclass
class NegativeAffordance:
    indices: np.ndarray          # sorted indices into the object cloud
    points: PointCloud           # cloud subset at those indices
    sampled: PointCloud          # FPS subset of size min(sample_size, |points|)
    source_views: List[str]
    query: str
    empty: bool = False

    def __post_init__(self):
        if len(self.points) != len(self.indices):
            raise NaaError("points/indices length mismatch")
        self.empty = len(self.points) == 0


def parse_negative_query(text: str) -> Optional[str]:
    """Extract the part query from a describer sentence of the form
    'This is a X. Y of X should not be touched.'; None means no
    negative part was identified."""
    stripped = text.strip().rstrip(".")
    if not stripped or stripped.lower() == "none":
        return None
    for sentence in text.split("."):
        words = sentence.strip().split()
        if len(words) >= 6 and words[-3:] == ["not", "be", "touched"] and "of" in words:
            part = " ".join(words[: words.index("of")])
            if part:
                return part.lower() + " part"
    return text.strip()


def compute_negative_affordance(cloud: PointCloud, query: str, suite,
                                cfg: NaaConfig = NaaConfig()) -> NegativeAffordance:
    """Full pipeline: render -> (describe) -> grid -> propose -> nms ->
    visual prompt -> select per view -> fuse back-projections -> FPS."""
    if len(cloud) == 0:
        raise NaaError("empty object cloud")
    W, H = cfg.resolution
    views = render_views(cloud, cfg.resolution, cfg.splat_radius)

    if query == "auto":
        text = suite.describer.describe([v.image for v in views])
        parsed = parse_negative_query(text)
        if parsed is None:
            return _empty_result(cloud, "", cfg)
        query = parsed

    grid = grid_points(W, H, cfg.grid_size)
    per_view: Dict[str, np.ndarray] = {}
    for view in views:
        proposals, _ = propose_masks(view, grid, suite)
        kept = nms(proposals, cfg.iou_threshold)
        if not kept:
            continue
        prompted = [visual_prompt(view.image, p.mask, cfg.blur_sigma) for p in kept]
        contexts = [(view, p.mask) for p in kept]
        winner = kept[select_mask(prompted, query, suite, contexts)]
        idx = backproject(view, winner.mask, cloud)
        if idx.size:
            per_view[view.view_id] = idx

    if not per_view:
        return _empty_result(cloud, query, cfg)

    if cfg.fusion == "union":
        indices = np.unique(np.concatenate(list(per_view.values())))
    else:  # majority vote over contributing views
        counts = np.zeros(len(cloud), dtype=np.int64)
        for idx in per_view.values():
            counts[idx] += 1
        indices = np.nonzero(counts * 2 > len(per_view))[0]
        if indices.size == 0:
            return _empty_result(cloud, query, cfg)

    points = cloud.take(indices)
    sampled = farthest_point_sample(points, min(cfg.sample_size, len(points)))
    return NegativeAffordance(
        indices=indices,
        points=points,
        sampled=sampled,
        source_views=sorted(per_view),
        query=query,
    )


def _empty_result(cloud: PointCloud, query: str, cfg: NaaConfig) -> NegativeAffordance:
    empty = PointCloud(np.zeros((0, 3)),
                       None if cloud.labels is None else np.zeros(0, dtype=np.int64))
    return NegativeAffordance(
        indices=np.zeros(0, dtype=np.int64),
        points=empty,
        sampled=empty,
        source_views=[],
        query=query,
        empty=True,
    )


# ---------------------------------------------------------------------------
# export: cloud file + JSON sidecar


def save_negative_affordance(na: NegativeAffordance, path, cfg: NaaConfig) -> Path:
    path = Path(path)
    if na.empty:
        path.write_text("# empty negative affordance\n", encoding="utf-8")
    else:
        save_cloud(na.points, path)
    sidecar = path.with_suffix(path.suffix + ".meta.json")
    meta = {
        "query": na.query,
        "source_views": na.source_views,
        "config_hash": config_hash(
            {k: getattr(cfg, k) for k in cfg.__dataclass_fields__}
        ),
        "indices": [int(i) for i in na.indices],
        "empty": na.empty,
        "num_points": len(na.points),
        "sample_size": cfg.sample_size,
    }
    sidecar.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n",
                       encoding="utf-8")
    return sidecar


def load_negative_affordance(path, object_cloud: PointCloud) -> NegativeAffordance:
    path = Path(path)
    sidecar = path.with_suffix(path.suffix + ".meta.json")
    meta = json.loads(sidecar.read_text(encoding="utf-8"))
    indices = np.asarray(meta["indices"], dtype=np.int64)
    if meta["empty"]:
        return _empty_result(object_cloud, meta["query"], NaaConfig())
    points = object_cloud.take(indices)
    stored = load_cloud(path)
    if not np.allclose(stored.points, points.points, atol=1e-7):
        raise NaaError(f"{path}: stored points disagree with the object cloud")
    sampled = farthest_point_sample(points, min(int(meta["sample_size"]), len(points)))
    return NegativeAffordance(
        indices=indices,
        points=points,
        sampled=sampled,
        source_views=list(meta["source_views"]),
        query=meta["query"],
    )
