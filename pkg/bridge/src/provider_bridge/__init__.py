"""Standalone service exposing vision models (promptable segmenter,
image/text embedder, multimodal describer) behind the line-JSON wire
protocol used by the grasping pipeline's provider client. Ships
deterministic CPU stand-in models; real checkpoints plug in through
``backends.register``.
"""

from .backends import (
    InferenceError,
    ModelLoadError,
    available_models,
    describe_prompt_text,
    load_backend,
    register,
)
from .protocol import PROTOCOL_VERSION, ProtocolError
from .server import BridgeConfig, BridgeServer, serve

__all__ = [
    "PROTOCOL_VERSION",
    "ProtocolError",
    "InferenceError",
    "ModelLoadError",
    "available_models",
    "describe_prompt_text",
    "load_backend",
    "register",
    "BridgeConfig",
    "BridgeServer",
    "serve",
]
