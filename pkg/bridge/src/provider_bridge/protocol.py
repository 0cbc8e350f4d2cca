"""Wire protocol pieces: canonical JSON, request validation, mask RLE,
and PNG image decoding.

The protocol is line-delimited JSON over TCP, version 1. Requests carry
``{"v": 1, "op": ...}`` with op-specific payloads; responses either the
op's result or ``{"v": 1, "error": {"code", "message"}}``. Masks travel
as row-major run-length counts alternating off/on runs, starting with an
off run.
"""

from __future__ import annotations

import base64
import io
import json
from typing import Dict, List

import numpy as np
from PIL import Image

PROTOCOL_VERSION = 1
OPS = ("segment", "embed_image", "embed_text", "describe")

# refuse anything above this many pixels; big enough for any sane view
# render, small enough to bound memory per request
MAX_PIXELS = 2048 * 2048


class ProtocolError(ValueError):
    """Request is malformed at the protocol level."""

    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


def canonical_json(doc) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def error_response(code: str, message: str) -> dict:
    return {"v": PROTOCOL_VERSION, "error": {"code": code, "message": message}}


def rle_encode(mask: np.ndarray) -> Dict:
    mask = np.asarray(mask, dtype=bool)
    flat = mask.reshape(-1)
    counts: List[int] = []
    value = False
    run = 0
    for bit in flat:
        if bit == value:
            run += 1
        else:
            counts.append(run)
            value = not value
            run = 1
    counts.append(run)
    return {"size": [int(mask.shape[0]), int(mask.shape[1])], "counts": counts}


def png_decode(payload: str) -> np.ndarray:
    """Base64 PNG -> float image in [0, 1]. Enforces the size cap."""
    try:
        raw = base64.b64decode(payload, validate=True)
        img = Image.open(io.BytesIO(raw))
        img.load()
    except Exception as exc:
        raise ProtocolError("bad-image", f"cannot decode PNG: {exc}") from exc
    if img.width * img.height > MAX_PIXELS:
        raise ProtocolError(
            "image-too-large",
            f"{img.width}x{img.height} exceeds {MAX_PIXELS} pixels",
        )
    arr = np.asarray(img.convert("L"), dtype=np.float64) / 255.0
    return arr


def validate_request(doc) -> dict:
    if not isinstance(doc, dict):
        raise ProtocolError("bad-request", "request is not an object")
    if doc.get("v") != PROTOCOL_VERSION:
        raise ProtocolError("bad-request", f"unsupported version {doc.get('v')!r}")
    op = doc.get("op")
    if op not in OPS:
        raise ProtocolError("bad-request", f"unknown op {op!r}")
    if op == "segment":
        if not isinstance(doc.get("image"), str):
            raise ProtocolError("bad-request", "segment needs a base64 image")
        point = doc.get("point")
        if (not isinstance(point, list) or len(point) != 2
                or not all(isinstance(v, (int, float)) for v in point)):
            raise ProtocolError("bad-request", "segment needs point [x, y]")
    elif op == "embed_image":
        if not isinstance(doc.get("image"), str):
            raise ProtocolError("bad-request", "embed_image needs a base64 image")
    elif op == "embed_text":
        if not isinstance(doc.get("text"), str) or not doc["text"]:
            raise ProtocolError("bad-request", "embed_text needs non-empty text")
    elif op == "describe":
        images = doc.get("images")
        if (not isinstance(images, list) or not images
                or not all(isinstance(i, str) for i in images)):
            raise ProtocolError("bad-request", "describe needs base64 images")
    return doc
