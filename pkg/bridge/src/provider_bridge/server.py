"""The bridge service: a line-JSON TCP server answering the vision
provider protocol (segment / embed_image / embed_text / describe) plus
``GET /health``.

Every request gets exactly one response line; failures come back as
structured protocol errors, never dropped connections. Connections are
handled one request at a time, multiple connections may be open, and
all model access is serialized behind a single inference lock so the
service never reorders or batches work.
"""

from __future__ import annotations

import json
import socketserver
import threading
from dataclasses import dataclass, field
from typing import Dict, Optional

from .backends import InferenceError, load_backend
from .protocol import (
    OPS,
    PROTOCOL_VERSION,
    ProtocolError,
    canonical_json,
    error_response,
    png_decode,
    rle_encode,
    validate_request,
)

__all__ = ["BridgeConfig", "BridgeServer", "serve"]

DEFAULT_MODELS = {
    "segmenter": "shade-region-v1",
    "embedder": "hash-v1",
    "describer": "template-v1",
}


@dataclass(frozen=True)
class BridgeConfig:
    listen: str = "127.0.0.1:0"
    models: Dict[str, str] = field(default_factory=lambda: dict(DEFAULT_MODELS))
    device: str = "cpu"
    timeout: float = 10.0

    def __post_init__(self):
        host, _, port = self.listen.rpartition(":")
        if not host or not port.isdigit():
            raise ValueError(f"bad listen endpoint {self.listen!r}, want host:port")
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")
        unknown = set(self.models) - set(DEFAULT_MODELS)
        if unknown:
            raise ValueError(f"unknown model roles: {sorted(unknown)}")

    @property
    def host(self) -> str:
        return self.listen.rpartition(":")[0]

    @property
    def port(self) -> int:
        return int(self.listen.rpartition(":")[2])


class BridgeServer:
    """Loads the configured model per role and serves the protocol.

    Raises ModelLoadError (naming the role) before binding the socket if
    any configured model cannot be instantiated.
    """

    def __init__(self, config: BridgeConfig):
        self.config = config
        models = dict(DEFAULT_MODELS)
        models.update(config.models)
        self.backends = {
            role: load_backend(role, model_id) for role, model_id in models.items()
        }
        self._inference_lock = threading.Lock()
        outer = self

        class Handler(socketserver.StreamRequestHandler):
            timeout = config.timeout

            def handle(self):
                for raw in self.rfile:
                    line = raw.decode("utf-8", errors="replace").strip()
                    if not line:
                        continue
                    if line.startswith("GET /health"):
                        out = canonical_json(outer.health())
                    else:
                        out = canonical_json(outer.dispatch(line))
                    self.wfile.write(out.encode("utf-8") + b"\n")
                    self.wfile.flush()

        class Server(socketserver.ThreadingTCPServer):
            allow_reuse_address = True
            daemon_threads = True

        self._server = Server((config.host, config.port), Handler)
        self._thread: Optional[threading.Thread] = None

    # ------------------------------------------------------------------

    _ROLE_FOR_OP = {
        "segment": "segmenter",
        "embed_image": "embedder",
        "embed_text": "embedder",
        "describe": "describer",
    }

    def health(self) -> dict:
        roles = {
            op: self.backends.get(self._ROLE_FOR_OP[op]) is not None for op in OPS
        }
        return {"v": PROTOCOL_VERSION, "roles": roles}

    def dispatch(self, line: str) -> dict:
        try:
            doc = json.loads(line)
        except json.JSONDecodeError as exc:
            return error_response("bad-request", f"not JSON: {exc}")
        try:
            validate_request(doc)
            with self._inference_lock:
                payload = self._infer(doc)
        except ProtocolError as exc:
            return error_response(exc.code, str(exc))
        except InferenceError as exc:
            return error_response("inference-failure", str(exc))
        except Exception as exc:  # crash isolation: report and keep serving
            return error_response("inference-failure", f"{type(exc).__name__}: {exc}")
        return {"v": PROTOCOL_VERSION, **payload}

    def _infer(self, doc: dict) -> dict:
        op = doc["op"]
        if op == "segment":
            image = png_decode(doc["image"])
            proposals = self.backends["segmenter"].segment(image, doc["point"])
            return {
                "masks": [
                    {"rle": rle_encode(mask), "score": float(score)}
                    for mask, score in proposals
                ]
            }
        if op == "embed_image":
            vec = self.backends["embedder"].embed_image(png_decode(doc["image"]))
            return {"vector": [float(v) for v in vec]}
        if op == "embed_text":
            vec = self.backends["embedder"].embed_text(doc["text"])
            return {"vector": [float(v) for v in vec]}
        images = [png_decode(data) for data in doc["images"]]
        return {"text": self.backends["describer"].describe(images)}

    # ------------------------------------------------------------------

    @property
    def endpoint(self) -> str:
        host, port = self._server.server_address[:2]
        return f"{host}:{port}"

    def start(self) -> "BridgeServer":
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        return self

    def serve_forever(self):
        self._server.serve_forever()

    def stop(self):
        self._server.shutdown()
        self._server.server_close()
        if self._thread is not None:
            self._thread.join()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()


def serve(config: BridgeConfig) -> None:
    """Load models, bind, and serve until interrupted."""
    server = BridgeServer(config)
    print(f"provider-bridge listening on {server.endpoint}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server._server.server_close()
