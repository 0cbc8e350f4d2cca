"""Diagonal-Gaussian MLP policies, observation encoding, residual
composition and the checkpoint container.

A policy is an MLP producing the pre-squash action mean plus a learned
per-dimension log-std vector appended to the flat parameter array. Means
pass through tanh, so they always respect the (-1, 1) action bounds;
sampled actions are clipped before execution.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional

import numpy as np

from . import mlp
from .env import Observation
from .geometry import min_distance
from .mlp import AdamState, MlpSpec

__all__ = [
    "LOG_STD_MIN",
    "LOG_STD_MAX",
    "POLICY_ROLES",
    "PolicyError",
    "CheckpointError",
    "PolicyParams",
    "policy_forward",
    "policy_backward",
    "sample_action",
    "gaussian_log_prob",
    "compose_residual",
    "encode_observation",
    "encoded_dim",
    "summarize_cloud",
    "save_checkpoint",
    "load_checkpoint",
]

LOG_STD_MIN, LOG_STD_MAX = -5.0, 2.0
POLICY_ROLES = ("base", "teacher_residual", "student", "value")

HIST_BINS = 32
HIST_RANGE = 0.5  # m, radial histogram support around the cloud centroid
NEG_DIST_CAP = 1.0  # m, reported fingertip-to-negative distance ceiling


class PolicyError(ValueError):
    pass


class CheckpointError(RuntimeError):
    pass


@dataclass
class PolicyParams:
    """Flat parameter vector with its layout descriptor and role tag.

    Non-value roles carry ``output_dim`` extra trailing entries: the
    learned log-std vector.
    """

    role: str
    spec: MlpSpec
    params: np.ndarray

    def __post_init__(self):
        if self.role not in POLICY_ROLES:
            raise PolicyError(f"unknown role {self.role!r}")
        self.params = np.asarray(self.params, dtype=np.float64)
        if len(self.params) != self.expected_len:
            raise PolicyError(
                f"parameter length {len(self.params)} != layout {self.expected_len}"
            )
        if not np.all(np.isfinite(self.params)):
            raise PolicyError("non-finite parameters")

    @property
    def has_log_std(self) -> bool:
        return self.role != "value"

    @property
    def expected_len(self) -> int:
        n = mlp.num_params(self.spec)
        return n + (self.spec.output_dim if self.has_log_std else 0)

    @property
    def mlp_params(self) -> np.ndarray:
        return self.params[: mlp.num_params(self.spec)]

    @property
    def log_std_raw(self) -> np.ndarray:
        if not self.has_log_std:
            raise PolicyError("value function carries no log-std")
        return self.params[mlp.num_params(self.spec):]

    @staticmethod
    def init(role: str, spec: MlpSpec, seed: int, final_scale: float = 0.01,
             log_std_init: float = -1.0) -> "PolicyParams":
        p = mlp.init_params(spec, seed, final_scale=final_scale)
        if role != "value":
            p = np.concatenate([p, np.full(spec.output_dim, log_std_init)])
        return PolicyParams(role, spec, p)

    def copy(self) -> "PolicyParams":
        return PolicyParams(self.role, self.spec, self.params.copy())


def policy_forward(pp: PolicyParams, x: np.ndarray):
    """(mean, log_std, cache): tanh-squashed mean, clamped log-std."""
    if not pp.has_log_std:
        raise PolicyError("policy_forward on a value function")
    raw, cache = mlp.forward(pp.spec, pp.mlp_params, x)
    mean = np.tanh(raw)
    log_std = np.clip(pp.log_std_raw, LOG_STD_MIN, LOG_STD_MAX)
    return mean, log_std, (cache, mean)


def policy_backward(pp: PolicyParams, cache, dmean: np.ndarray,
                    dlog_std: np.ndarray) -> np.ndarray:
    """Flat gradient for sum(dmean*mean) + sum(dlog_std*log_std)."""
    mlp_cache, mean = cache
    draw = np.asarray(dmean) * (1.0 - mean ** 2)  # through tanh
    dmlp, _ = mlp.backward(pp.spec, pp.mlp_params, mlp_cache, draw)
    raw = pp.log_std_raw
    inside = (raw > LOG_STD_MIN) & (raw < LOG_STD_MAX)  # clamp subgradient
    return np.concatenate([dmlp, np.asarray(dlog_std, dtype=np.float64) * inside])


def value_forward(pp: PolicyParams, x: np.ndarray):
    if pp.has_log_std:
        raise PolicyError("value_forward on a policy")
    y, cache = mlp.forward(pp.spec, pp.params, x)
    return y[..., 0], cache


def value_backward(pp: PolicyParams, cache, dv: np.ndarray) -> np.ndarray:
    dv = np.asarray(dv, dtype=np.float64)
    dy = dv[..., None] if dv.ndim else dv.reshape(1)
    grads, _ = mlp.backward(pp.spec, pp.params, cache, dy)
    return grads


def gaussian_log_prob(mean, log_std, actions) -> np.ndarray:
    """Diagonal-Gaussian log density, summed over action dimensions."""
    mean = np.asarray(mean, dtype=np.float64)
    actions = np.asarray(actions, dtype=np.float64)
    var = np.exp(2.0 * log_std)
    per_dim = -0.5 * (actions - mean) ** 2 / var - log_std - 0.5 * np.log(2.0 * np.pi)
    return per_dim.sum(axis=-1)


def sample_action(pp: PolicyParams, obs_vec: np.ndarray, rng: np.random.Generator):
    """(executable action, raw sample, log-prob). The raw sample keeps the
    exact density used for PPO ratios; execution clips to [-1, 1]."""
    mean, log_std, _ = policy_forward(pp, obs_vec)
    raw = mean + np.exp(log_std) * rng.standard_normal(mean.shape)
    logp = gaussian_log_prob(mean, log_std, raw)
    return np.clip(raw, -1.0, 1.0), raw, float(logp)


def compose_residual(base_action: np.ndarray, residual_action: np.ndarray) -> np.ndarray:
    """Element-wise sum clamped to [-1, 1]."""
    base_action = np.asarray(base_action, dtype=np.float64)
    residual_action = np.asarray(residual_action, dtype=np.float64)
    if base_action.shape != residual_action.shape:
        raise PolicyError("action shapes differ")
    return np.clip(base_action + residual_action, -1.0, 1.0)


# ---------------------------------------------------------------------------
# observation encoding: deterministic permutation-invariant summary


def summarize_cloud(points: np.ndarray) -> np.ndarray:
    """Per-axis mean/min/max plus a radial histogram around the centroid.
    Permutation-invariant by construction; empty clouds map to zeros."""
    out = np.zeros(9 + HIST_BINS)
    if len(points) == 0:
        return out
    centroid = points.mean(axis=0)
    out[0:3] = centroid
    out[3:6] = points.min(axis=0)
    out[6:9] = points.max(axis=0)
    radii = np.linalg.norm(points - centroid, axis=1)
    hist, _ = np.histogram(radii, bins=HIST_BINS, range=(0.0, HIST_RANGE))
    out[9:] = hist / len(points)
    return out


def encoded_dim(variant: str) -> int:
    robot = 3 + 4 + 24 + 24 + 15
    cloud = 9 + HIST_BINS
    negative = 9 + HIST_BINS
    tips = 5
    obj = 11 if variant == "teacher" else 0
    return robot + obj + cloud + negative + tips


def encode_observation(obs: Observation, variant: str) -> np.ndarray:
    """Fixed-length feature vector: robot state, object state (teacher
    only), cloud summary, negative-cloud summary, and the five minimum
    fingertip-to-negative distances."""
    if obs.variant != variant:
        raise PolicyError(f"observation variant {obs.variant!r} != {variant!r}")
    robot = obs.robot
    blocks = [
        robot.wrist.position,
        robot.wrist.quat,
        robot.joints.positions,
        robot.joints.velocities,
        np.concatenate(robot.fingertips),
    ]
    if variant == "teacher":
        o = obs.object
        blocks.append(o.pose.position)
        blocks.append(o.pose.quat)
        blocks.append(o.linear_velocity)
        blocks.append(np.array([1.0 if o.attached else 0.0]))
    blocks.append(summarize_cloud(obs.cloud.points))
    blocks.append(summarize_cloud(obs.negative.points))
    if len(obs.negative) == 0:
        blocks.append(np.full(5, NEG_DIST_CAP))
    else:
        blocks.append(
            np.array(
                [min(min_distance(t, obs.negative), NEG_DIST_CAP) for t in robot.fingertips]
            )
        )
    return np.concatenate(blocks)


# ---------------------------------------------------------------------------
# checkpoints: one JSON header line + raw little-endian float64 sections


_MAGIC = "policy-checkpoint"
_VERSION = 1


def save_checkpoint(
    path,
    pp: PolicyParams,
    adam: Optional[AdamState] = None,
    rng: Optional[np.random.Generator] = None,
    config_hash: str = "",
    extra: Optional[Dict] = None,
) -> None:
    header = {
        "format": _MAGIC,
        "version": _VERSION,
        "role": pp.role,
        "spec": {
            "input_dim": pp.spec.input_dim,
            "hidden_dims": list(pp.spec.hidden_dims),
            "output_dim": pp.spec.output_dim,
        },
        "config_hash": config_hash,
        "n_params": len(pp.params),
        "adam_t": None if adam is None else adam.t,
        "rng_state": None if rng is None else rng.bit_generator.state,
        "extra": extra or {},
    }
    sections = [pp.params]
    if adam is not None:
        sections += [adam.m, adam.v]
    with open(path, "wb") as fh:
        fh.write((json.dumps(header, sort_keys=True) + "\n").encode("utf-8"))
        for arr in sections:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path, expected_spec: Optional[MlpSpec] = None):
    """Returns (PolicyParams, AdamState | None, rng | None, header dict).
    Fails loudly on container or spec mismatch."""
    blob = Path(path).read_bytes()
    nl = blob.find(b"\n")
    if nl < 0:
        raise CheckpointError(f"{path}: missing header line")
    try:
        header = json.loads(blob[:nl].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: bad header: {exc}") from exc
    if header.get("format") != _MAGIC or header.get("version") != _VERSION:
        raise CheckpointError(f"{path}: unsupported container {header.get('format')!r}")
    spec = MlpSpec(
        input_dim=header["spec"]["input_dim"],
        output_dim=header["spec"]["output_dim"],
        hidden_dims=tuple(header["spec"]["hidden_dims"]),
    )
    if expected_spec is not None and spec != expected_spec:
        raise CheckpointError(f"{path}: checkpoint spec {spec} != expected {expected_spec}")
    n = header["n_params"]
    body = np.frombuffer(blob[nl + 1:], dtype="<f8")
    expected_sections = 1 + (2 if header["adam_t"] is not None else 0)
    if len(body) != expected_sections * n:
        raise CheckpointError(
            f"{path}: body holds {len(body)} floats, expected {expected_sections * n}"
        )
    pp = PolicyParams(header["role"], spec, body[:n].copy())
    adam = None
    if header["adam_t"] is not None:
        adam = AdamState(body[n : 2 * n].copy(), body[2 * n : 3 * n].copy(), header["adam_t"])
    rng = None
    if header["rng_state"] is not None:
        rng = np.random.default_rng(0)
        rng.bit_generator.state = header["rng_state"]
    return pp, adam, rng, header


def config_hash(obj) -> str:
    """Stable short hash of any JSON-serializable configuration object."""
    blob = json.dumps(obj, sort_keys=True, default=str).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]
