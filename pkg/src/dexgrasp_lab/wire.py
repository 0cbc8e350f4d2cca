"""Line-delimited JSON wire protocol for external vision providers.

One request per line, one response line per request, over a TCP socket.
Requests are versioned objects:

    {"v": 1, "op": "segment", "image": <base64 PNG>, "point": [x, y]}
        -> {"v": 1, "masks": [{"rle": {...}, "score": <real>}]}
    {"v": 1, "op": "embed_image", "image": <base64 PNG>}
    {"v": 1, "op": "embed_text", "text": <str>}
        -> {"v": 1, "vector": [<real>...]}
    {"v": 1, "op": "describe", "images": [<base64 PNG>...]}
        -> {"v": 1, "text": <str>}

Failures come back as `{"v": 1, "error": {"code": ..., "message": ...}}`
on the same line — the connection never drops mid-request.  The plain
line `GET /health` answers `{"v": 1, "roles": {...}}`.  Masks travel as
row-major run-length counts alternating off/on runs, starting with the
off run.  Responses are canonical JSON (sorted keys, no spaces) so
golden fixtures can assert byte equality.
"""

from __future__ import annotations

import base64
import io
import json
import socket
import socketserver
import threading
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image

from .providers import ProviderError, ProviderSuite, ProviderTransportError, hash_embedding

__all__ = [
    "PROTOCOL_VERSION",
    "WireProtocolError",
    "rle_encode",
    "rle_decode",
    "png_encode",
    "png_decode",
    "canonical_json",
    "validate_request",
    "validate_response",
    "WireClient",
    "external_suite",
    "WireServer",
    "reference_handlers",
]

PROTOCOL_VERSION = 1
_OPS = ("segment", "embed_image", "embed_text", "describe")


class WireProtocolError(ProviderError):
    """Request or response violates the wire protocol schema."""


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


# ---------------------------------------------------------------------------
# codecs


def rle_encode(mask: np.ndarray) -> dict:
    """Row-major run-length encoding: counts alternate runs of False and
    True pixels, starting with the False run (possibly zero-length)."""
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 2:
        raise WireProtocolError("mask must be 2-D")
    flat = mask.ravel()
    if flat.size == 0:
        raise WireProtocolError("empty mask")
    changes = np.nonzero(np.diff(flat))[0] + 1
    bounds = np.concatenate([[0], changes, [flat.size]])
    counts = np.diff(bounds).tolist()
    if flat[0]:
        counts = [0] + counts
    H, W = mask.shape
    return {"size": [int(H), int(W)], "counts": [int(c) for c in counts]}


def rle_decode(obj: dict) -> np.ndarray:
    try:
        H, W = (int(v) for v in obj["size"])
        counts = [int(c) for c in obj["counts"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise WireProtocolError(f"malformed RLE object: {exc}") from exc
    if H <= 0 or W <= 0 or any(c < 0 for c in counts):
        raise WireProtocolError("malformed RLE object: bad size or counts")
    if sum(counts) != H * W:
        raise WireProtocolError("RLE counts do not cover the mask")
    flat = np.zeros(H * W, dtype=bool)
    pos, value = 0, False
    for c in counts:
        if value:
            flat[pos:pos + c] = True
        pos += c
        value = not value
    return flat.reshape(H, W)


def png_encode(image: np.ndarray) -> str:
    """Grayscale float image in [0, 1] -> base64 PNG string."""
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim != 2:
        raise WireProtocolError("image must be 2-D")
    u8 = np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(u8, mode="L").save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def png_decode(data: str) -> np.ndarray:
    try:
        raw = base64.b64decode(data, validate=True)
        img = Image.open(io.BytesIO(raw))
        img.load()
    except Exception as exc:
        raise WireProtocolError(f"bad PNG payload: {exc}") from exc
    return np.asarray(img.convert("L"), dtype=np.float64) / 255.0


# ---------------------------------------------------------------------------
# schema validation


def _require(cond: bool, message: str):
    if not cond:
        raise WireProtocolError(message)


def validate_request(obj) -> dict:
    _require(isinstance(obj, dict), "request must be a JSON object")
    _require(obj.get("v") == PROTOCOL_VERSION, f"unsupported protocol version {obj.get('v')!r}")
    op = obj.get("op")
    _require(op in _OPS, f"unknown op {op!r}")
    if op == "segment":
        _require(isinstance(obj.get("image"), str), "segment needs an image string")
        pt = obj.get("point")
        _require(isinstance(pt, list) and len(pt) == 2
                 and all(isinstance(c, (int, float)) for c in pt),
                 "segment needs point [x, y]")
    elif op == "embed_image":
        _require(isinstance(obj.get("image"), str), "embed_image needs an image string")
    elif op == "embed_text":
        _require(isinstance(obj.get("text"), str), "embed_text needs a text string")
    else:  # describe
        imgs = obj.get("images")
        _require(isinstance(imgs, list) and imgs
                 and all(isinstance(i, str) for i in imgs),
                 "describe needs a non-empty image list")
    return obj


def validate_response(op: str, obj) -> dict:
    _require(isinstance(obj, dict), "response must be a JSON object")
    _require(obj.get("v") == PROTOCOL_VERSION, "bad protocol version in response")
    if "error" in obj:
        err = obj["error"]
        _require(isinstance(err, dict) and isinstance(err.get("code"), str)
                 and isinstance(err.get("message"), str),
                 "malformed error object")
        return obj
    if op == "segment":
        masks = obj.get("masks")
        _require(isinstance(masks, list), "segment response needs a mask list")
        for m in masks:
            _require(isinstance(m, dict) and isinstance(m.get("score"), (int, float)),
                     "malformed mask entry")
            rle_decode(m.get("rle"))
    elif op in ("embed_image", "embed_text"):
        vec = obj.get("vector")
        _require(isinstance(vec, list) and vec
                 and all(isinstance(x, (int, float)) for x in vec),
                 "embedding response needs a numeric vector")
    else:  # describe
        _require(isinstance(obj.get("text"), str), "describe response needs text")
    return obj


# ---------------------------------------------------------------------------
# client


class WireClient:
    """Blocking request/response client; one in-flight request at a time.

    A fresh connection is opened per request — crash isolation over
    throughput at this scale.
    """

    def __init__(self, endpoint: str, timeout: float = 10.0):
        host, _, port = endpoint.rpartition(":")
        if not host or not port.isdigit():
            raise WireProtocolError(f"bad endpoint {endpoint!r}, want host:port")
        self.host, self.port = host, int(port)
        self.timeout = timeout
        self._lock = threading.Lock()

    def _roundtrip(self, line: str) -> str:
        try:
            with socket.create_connection((self.host, self.port), self.timeout) as sock:
                sock.sendall(line.encode("utf-8") + b"\n")
                buf = b""
                while not buf.endswith(b"\n"):
                    chunk = sock.recv(65536)
                    if not chunk:
                        raise ProviderTransportError("connection closed mid-response")
                    buf += chunk
        except OSError as exc:
            raise ProviderTransportError(f"{self.host}:{self.port}: {exc}") from exc
        return buf.decode("utf-8").rstrip("\n")

    def request(self, obj: dict) -> dict:
        validate_request(obj)
        with self._lock:
            raw = self._roundtrip(canonical_json(obj))
        try:
            resp = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise WireProtocolError(f"non-JSON response: {exc}") from exc
        validate_response(obj["op"], resp)
        if "error" in resp:
            err = resp["error"]
            raise ProviderError(f"{err['code']}: {err['message']}")
        return resp

    def health(self) -> dict:
        raw = self._roundtrip("GET /health")
        try:
            return json.loads(raw)
        except json.JSONDecodeError as exc:
            raise WireProtocolError(f"non-JSON health response: {exc}") from exc


class _WireSegmenter:
    def __init__(self, client: WireClient):
        self.client = client

    def segment(self, view, point) -> List[Tuple[np.ndarray, float]]:
        resp = self.client.request({
            "v": PROTOCOL_VERSION,
            "op": "segment",
            "image": png_encode(view.image),
            "point": [int(point[0]), int(point[1])],
        })
        return [(rle_decode(m["rle"]), float(m["score"])) for m in resp["masks"]]


class _WireEmbedder:
    def __init__(self, client: WireClient):
        self.client = client

    def embed_text(self, text: str) -> np.ndarray:
        resp = self.client.request({"v": PROTOCOL_VERSION, "op": "embed_text", "text": text})
        return np.asarray(resp["vector"], dtype=np.float64)

    def embed_image(self, image: np.ndarray, context=None) -> np.ndarray:
        resp = self.client.request({
            "v": PROTOCOL_VERSION, "op": "embed_image", "image": png_encode(image),
        })
        return np.asarray(resp["vector"], dtype=np.float64)


class _WireDescriber:
    def __init__(self, client: WireClient):
        self.client = client

    def describe(self, images: Sequence[np.ndarray]) -> str:
        resp = self.client.request({
            "v": PROTOCOL_VERSION,
            "op": "describe",
            "images": [png_encode(img) for img in images],
        })
        return resp["text"]


def external_suite(endpoint: str, embed_dim: int = 64, timeout: float = 10.0) -> ProviderSuite:
    """Provider suite backed by a wire-protocol service."""
    client = WireClient(endpoint, timeout)
    return ProviderSuite(
        describer=_WireDescriber(client),
        segmenter=_WireSegmenter(client),
        embedder=_WireEmbedder(client),
        embed_dim=embed_dim,
        serialized=True,
    )


# ---------------------------------------------------------------------------
# server


class WireServer:
    """Reference wire-protocol server around a handler table.

    Handlers receive the decoded request object and return the response
    payload (without the version field).  Any handler exception becomes a
    structured error response; the service itself never dies on a bad
    request.  Each connection is served one request at a time; multiple
    connections are allowed.
    """

    def __init__(self, handlers: Dict[str, Callable[[dict], dict]],
                 host: str = "127.0.0.1", port: int = 0):
        self.handlers = handlers
        outer = self

        class Handler(socketserver.StreamRequestHandler):
            def handle(self):
                for raw in self.rfile:
                    line = raw.decode("utf-8", errors="replace").strip()
                    if not line:
                        continue
                    if line.startswith("GET /health"):
                        roles = {op: (op in outer.handlers) for op in _OPS}
                        out = canonical_json({"v": PROTOCOL_VERSION, "roles": roles})
                    else:
                        out = canonical_json(outer._dispatch(line))
                    self.wfile.write(out.encode("utf-8") + b"\n")
                    self.wfile.flush()

        class Server(socketserver.ThreadingTCPServer):
            allow_reuse_address = True
            daemon_threads = True

        self._server = Server((host, port), Handler)
        self._thread: Optional[threading.Thread] = None

    def _dispatch(self, line: str) -> dict:
        def error(code, message):
            return {"v": PROTOCOL_VERSION,
                    "error": {"code": code, "message": str(message)}}

        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            return error("bad-request", f"not JSON: {exc}")
        try:
            validate_request(obj)
        except WireProtocolError as exc:
            return error("bad-request", exc)
        handler = self.handlers.get(obj["op"])
        if handler is None:
            return error("unsupported", f"no handler for {obj['op']}")
        try:
            payload = handler(obj)
        except WireProtocolError as exc:
            return error("bad-request", exc)
        except Exception as exc:  # crash isolation: report, keep serving
            return error("inference-failure", exc)
        return {"v": PROTOCOL_VERSION, **payload}

    @property
    def endpoint(self) -> str:
        host, port = self._server.server_address[:2]
        return f"{host}:{port}"

    def start(self):
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self):
        self._server.shutdown()
        self._server.server_close()
        if self._thread is not None:
            self._thread.join()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()


def reference_handlers(embed_dim: int = 64) -> Dict[str, Callable[[dict], dict]]:
    """Deterministic image-space backends for serving the protocol
    without any real models: shade-region segmentation, hash embeddings,
    and a fixed 'none' description."""

    def segment(req: dict) -> dict:
        img = png_decode(req["image"])
        H, W = img.shape
        x, y = int(req["point"][0]), int(req["point"][1])
        if not (0 <= x < W and 0 <= y < H):
            raise WireProtocolError(f"point ({x}, {y}) outside {W}x{H} image")
        if img[y, x] == 0.0:
            return {"masks": []}
        from scipy.ndimage import label as _connected_label

        same = np.abs(img - img[y, x]) <= (2.5 / 255.0)
        comp, _ = _connected_label(same)
        mask = comp == comp[y, x]
        score = float(np.count_nonzero(mask)) / (W * H)
        return {"masks": [{"rle": rle_encode(mask), "score": score}]}

    def embed_image(req: dict) -> dict:
        img = png_decode(req["image"])
        vec = hash_embedding(img.tobytes().hex(), embed_dim)
        return {"vector": [float(v) for v in vec]}

    def embed_text(req: dict) -> dict:
        vec = hash_embedding(req["text"], embed_dim)
        return {"vector": [float(v) for v in vec]}

    def describe(req: dict) -> dict:
        for data in req["images"]:
            png_decode(data)  # validate payloads even though unused
        return {"text": "none"}

    return {"segment": segment, "embed_image": embed_image,
            "embed_text": embed_text, "describe": describe}
