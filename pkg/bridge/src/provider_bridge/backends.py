"""Model backends behind the bridge.

Each role (segmenter, embedder, describer) is addressed by a model
identifier. The identifiers shipped here are deterministic CPU stand-ins
that run the full protocol path; adapters for real checkpoints register
the same way (see ``register``).
"""

from __future__ import annotations

import hashlib
from pathlib import Path
from typing import Callable, Dict

import numpy as np
from scipy import ndimage

__all__ = [
    "ModelLoadError",
    "InferenceError",
    "load_backend",
    "register",
    "available_models",
    "describe_prompt_text",
]


class ModelLoadError(RuntimeError):
    """The configured model identifier cannot be instantiated."""


class InferenceError(RuntimeError):
    """A single request failed inside the model."""


def describe_prompt_text() -> str:
    """The verbatim describer prompt, shared with the primary artifact."""
    path = Path(__file__).parent / "data" / "describe_negative.txt"
    return path.read_text(encoding="utf-8")


# ---------------------------------------------------------------------------
# deterministic stand-in models


class ShadeRegionSegmenter:
    """Promptable segmenter over grayscale renders: proposes the connected
    region whose shade matches the prompt pixel (within one 8-bit step).
    Background (shade 0) yields no proposals."""

    tolerance = 2.5 / 255.0

    def segment(self, image: np.ndarray, point):
        x, y = int(point[0]), int(point[1])
        H, W = image.shape
        if not (0 <= x < W and 0 <= y < H):
            raise InferenceError(f"prompt ({x}, {y}) outside {W}x{H} image")
        shade = image[y, x]
        if shade == 0.0:
            return []
        close = np.abs(image - shade) <= self.tolerance
        labels, _ = ndimage.label(close)
        mask = labels == labels[y, x]
        return [(mask, float(mask.sum()) / (H * W))]


class HashEmbedder:
    """Embeds text or images as unit vectors seeded from a content hash;
    deterministic across processes and platforms."""

    def __init__(self, dim: int = 64):
        self.dim = dim

    def _vector(self, blob: bytes) -> np.ndarray:
        seed = int.from_bytes(hashlib.sha256(blob).digest()[:8], "big")
        v = np.random.default_rng(seed).standard_normal(self.dim)
        return v / np.linalg.norm(v)

    def embed_text(self, text: str) -> np.ndarray:
        return self._vector(text.encode("utf-8"))

    def embed_image(self, image: np.ndarray) -> np.ndarray:
        quantized = np.rint(np.asarray(image) * 255.0).astype(np.uint8)
        return self._vector(quantized.tobytes())


class TemplateDescriber:
    """Answers the verbatim negative-part prompt with a fixed response.

    The stand-in has no vision model, so it reports that nothing is
    off-limits; a real adapter would feed the prompt and images to a
    multimodal model and return its sentence.
    """

    def __init__(self, answer: str = "none"):
        self.prompt = describe_prompt_text()
        self.answer = answer

    def describe(self, images) -> str:
        if not images:
            raise InferenceError("describe with no images")
        return self.answer


# ---------------------------------------------------------------------------
# registry

_REGISTRY: Dict[str, Dict[str, Callable[[], object]]] = {
    "segmenter": {"shade-region-v1": ShadeRegionSegmenter},
    "embedder": {"hash-v1": HashEmbedder},
    "describer": {"template-v1": TemplateDescriber},
}


def register(role: str, model_id: str, factory: Callable[[], object]) -> None:
    _REGISTRY.setdefault(role, {})[model_id] = factory


def available_models(role: str):
    return sorted(_REGISTRY.get(role, {}))


def load_backend(role: str, model_id: str):
    try:
        factory = _REGISTRY[role][model_id]
    except KeyError:
        raise ModelLoadError(
            f"{role}: unknown model {model_id!r} "
            f"(available: {available_models(role)})"
        ) from None
    try:
        return factory()
    except Exception as exc:
        raise ModelLoadError(f"{role}: {model_id!r} failed to load: {exc}") from exc
