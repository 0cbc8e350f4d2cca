"""Pluggable vision providers for the segmentation pipeline.

Three roles: a describer (images -> do-not-touch sentence), a segmenter
(view + pixel prompt -> mask proposals), and an embedder (image or text
-> vector).  The built-in implementations here are deterministic and
oracle-friendly: the segmenter returns the connected ground-truth-label
region under the prompt pixel, the embedder hashes text and scores
images from a scripted (part, query) similarity table, and the
describer looks the answer up in object metadata.  Real models attach
through the wire protocol instead (see the wire module).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.ndimage import label as _connected_label

from .objects import ObjectModel

__all__ = [
    "ProviderError",
    "ProviderTransportError",
    "ProviderSuite",
    "BuiltinSegmenter",
    "BuiltinEmbedder",
    "BuiltinDescriber",
    "builtin_suite",
    "default_similarity_table",
    "hash_embedding",
    "describe_prompt_text",
    "judge_prompt_text",
]

_PROMPT_DIR = Path(__file__).parent / "data" / "prompts"


class ProviderError(RuntimeError):
    """A provider failed to answer a single request."""


class ProviderTransportError(ProviderError):
    """The provider endpoint is unreachable or the connection broke."""


def describe_prompt_text() -> str:
    return (_PROMPT_DIR / "describe_negative.txt").read_text(encoding="utf-8")


def judge_prompt_text() -> str:
    return (_PROMPT_DIR / "judge_grasp.txt").read_text(encoding="utf-8")


@dataclass
class ProviderSuite:
    """Bundle of the three provider roles.

    ``embed_dim`` is fixed per suite; ``serialized`` declares whether
    callers must serialize provider access (the built-in providers are
    pure functions of their inputs and safe to call concurrently; wire
    clients hold one in-flight request per client and set this flag).
    """

    describer: object
    segmenter: object
    embedder: object
    embed_dim: int
    serialized: bool = False


# ---------------------------------------------------------------------------
# built-in segmenter


class BuiltinSegmenter:
    """Returns the connected region of the part label under the prompt
    pixel (4-connectivity on the view's ground-truth label map).
    Background prompts yield no proposal."""

    def __init__(self):
        self._cache: Dict[int, Tuple[object, Dict[int, np.ndarray]]] = {}

    def _components(self, view) -> Dict[int, np.ndarray]:
        cached = self._cache.get(id(view))
        if cached is not None and cached[0] is view:
            return cached[1]
        comps: Dict[int, np.ndarray] = {}
        for lbl in np.unique(view.label_map):
            if lbl < 0:
                continue
            comps[int(lbl)], _ = _connected_label(view.label_map == lbl)
        self._cache = {id(view): (view, comps)}
        return comps

    def segment(self, view, point) -> List[Tuple[np.ndarray, float]]:
        px, py = point
        H, W = view.label_map.shape
        if not (0 <= px < W and 0 <= py < H):
            raise ProviderError(f"prompt ({px}, {py}) outside the image")
        lbl = int(view.label_map[py, px])
        if lbl < 0:
            return []
        comps = self._components(view)[lbl]
        mask = comps == comps[py, px]
        score = float(np.count_nonzero(mask)) / (W * H)
        return [(mask, score)]


# ---------------------------------------------------------------------------
# built-in embedder


def hash_embedding(text: str, dim: int = 64) -> np.ndarray:
    """Deterministic unit vector from a SHA-256 seed of the text."""
    seed = int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "big")
    v = np.random.default_rng(seed).standard_normal(dim)
    return v / np.linalg.norm(v)


def default_similarity_table(obj: ObjectModel) -> Dict[Tuple[str, str], float]:
    """Scripted similarities: each part answers its own '<part> part'
    query strongly and every other part's query weakly."""
    table: Dict[Tuple[str, str], float] = {}
    names = list(obj.parts.values())
    for part in names:
        for other in names:
            query = f"{other} part"
            table[(part, query)] = 0.9 if part == other else 0.1
    return table


class BuiltinEmbedder:
    """Hash-based text embeddings plus image embeddings driven by a
    scripted (part name, query) similarity table.

    Image calls must carry a ``(view, mask)`` context; the embedder reads
    the dominant ground-truth part under the mask and emits a vector whose
    cosine against each scripted query's text embedding tracks the table.
    """

    def __init__(self, parts: Dict[int, str],
                 table: Dict[Tuple[str, str], float], dim: int = 64):
        self.parts = dict(parts)
        self.table = dict(table)
        self.dim = dim

    def embed_text(self, text: str) -> np.ndarray:
        return hash_embedding(text, self.dim)

    def embed_image(self, image: np.ndarray, context=None) -> np.ndarray:
        if context is None:
            # fall back to hashing the raw pixels (still deterministic)
            data = np.ascontiguousarray(np.asarray(image, dtype=np.float64))
            return hash_embedding(data.tobytes().hex(), self.dim)
        view, mask = context
        labels = view.label_map[np.asarray(mask, dtype=bool)]
        labels = labels[labels >= 0]
        if labels.size == 0:
            return np.zeros(self.dim)
        counts = np.bincount(labels)
        part = self.parts.get(int(np.argmax(counts)))
        if part is None:
            return np.zeros(self.dim)
        v = np.zeros(self.dim)
        for (p, query), sim in sorted(self.table.items()):
            if p == part:
                v += sim * hash_embedding(query, self.dim)
        if not v.any():
            v = 0.05 * hash_embedding(f"part:{part}", self.dim)
        return v


# ---------------------------------------------------------------------------
# built-in describer


class BuiltinDescriber:
    """Metadata lookup standing in for a multimodal describer: emits the
    documented one-sentence format, or 'none' when the object has no
    off-limits part."""

    def __init__(self, obj: ObjectModel):
        self.obj = obj

    def describe(self, images: Sequence[np.ndarray]) -> str:
        if len(images) == 0:
            raise ProviderError("describe needs at least one image")
        if self.obj.negative_part is None:
            return "none"
        part = self.obj.negative_part.capitalize()
        return (f"This is a {self.obj.name}. "
                f"{part} of {self.obj.name} should not be touched.")


def builtin_suite(obj: ObjectModel,
                  table: Optional[Dict[Tuple[str, str], float]] = None,
                  dim: int = 64) -> ProviderSuite:
    if table is None:
        table = default_similarity_table(obj)
    return ProviderSuite(
        describer=BuiltinDescriber(obj),
        segmenter=BuiltinSegmenter(),
        embedder=BuiltinEmbedder(obj.parts, table, dim),
        embed_dim=dim,
        serialized=False,
    )
