"""Evaluation metrics: grasp success rate, the fingertip/negative-region
affordance score, an external motion-quality judge client with a canned
offline mode, and the JSON evaluation report."""

from __future__ import annotations

import hashlib
import json
import socket
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional, Sequence

import numpy as np

from .env import EpisodeTrace
from .geometry import PointCloud
from .policy import config_hash
from .providers import judge_prompt_text

__all__ = [
    "MetricError",
    "JudgeProtocolError",
    "JudgeTransportError",
    "GraspOutcome",
    "MetricConfig",
    "success_rate",
    "affordance_score",
    "trace_hash",
    "trace_summary",
    "CannedJudge",
    "RemoteJudge",
    "judge_hls",
    "build_report",
]


class MetricError(ValueError):
    pass


class JudgeProtocolError(RuntimeError):
    """The judge answered, but not with a valid score document."""


class JudgeTransportError(RuntimeError):
    """The judge endpoint is unreachable."""


@dataclass
class GraspOutcome:
    success: bool
    steps_used: int
    fingertips: np.ndarray        # (5, 3) final fingertip positions
    negative_sample: PointCloud   # the sampled negative points (may be empty)
    object_name: str = ""

    def __post_init__(self):
        self.fingertips = np.asarray(self.fingertips, dtype=np.float64).reshape(-1, 3)
        if len(self.fingertips) != 5:
            raise MetricError("outcome needs exactly 5 fingertip positions")
        if not (0 <= self.steps_used <= 200):
            raise MetricError(f"steps_used {self.steps_used} outside [0, 200]")


@dataclass(frozen=True)
class MetricConfig:
    as_threshold: float = 0.02   # m
    as_sample_size: int = 100
    as_lower_is_better: bool = True  # violation count (default) vs safety count

    def __post_init__(self):
        if self.as_threshold <= 0:
            raise MetricError("as_threshold must be positive")
        if self.as_sample_size < 1:
            raise MetricError("as_sample_size must be >= 1")


def success_rate(outcomes: Sequence[GraspOutcome]) -> float:
    if len(outcomes) == 0:
        raise MetricError("success_rate over an empty outcome list")
    return sum(1 for o in outcomes if o.success) / len(outcomes)


def affordance_score(outcome: GraspOutcome, cfg: MetricConfig = MetricConfig()) -> int:
    """Count of fingertips within the threshold of any negative point.

    Lower is better in the default reading; flip ``as_lower_is_better``
    to count the fingertips that keep clear instead.
    """
    neg = outcome.negative_sample
    if len(neg) == 0:
        return 0
    dists = np.linalg.norm(
        outcome.fingertips[:, None, :] - neg.points[None, :, :], axis=2
    )
    violations = int(np.count_nonzero(dists.min(axis=1) <= cfg.as_threshold))
    return violations if cfg.as_lower_is_better else 5 - violations


# ---------------------------------------------------------------------------
# external human-likeness judge


def trace_summary(trace: EpisodeTrace) -> dict:
    """Compact per-episode digest sent to the judge."""
    if not trace.records:
        raise MetricError("cannot summarize an empty trace")
    return {
        "steps": len(trace.records),
        "success": bool(trace.records[-1].success),
        "actions": [rec.action for rec in trace.records],
        "object_path": [rec.object_pose[:3] for rec in trace.records],
    }


def trace_hash(trace: EpisodeTrace) -> str:
    blob = "\n".join(
        json.dumps(rec.__dict__, sort_keys=True) for rec in trace.records
    )
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def _parse_score(raw: str) -> int:
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise JudgeProtocolError(f"judge returned non-JSON: {exc}") from exc
    if not isinstance(doc, dict) or "score" not in doc:
        raise JudgeProtocolError(f"judge response missing score: {doc!r}")
    score = doc["score"]
    if not isinstance(score, int) or isinstance(score, bool) or not (1 <= score <= 10):
        raise JudgeProtocolError(f"score {score!r} outside 1..10")
    return score


class CannedJudge:
    """Replays recorded scores keyed by trace hash.

    The fixture file is JSON: {"<trace hash>": <score 1-10>, ...}.
    """

    def __init__(self, fixtures: Dict[str, int]):
        self.fixtures = dict(fixtures)

    @classmethod
    def from_file(cls, path) -> "CannedJudge":
        return cls(json.loads(Path(path).read_text(encoding="utf-8")))

    def score(self, prompt: str, summary: dict, key: str) -> str:
        if key not in self.fixtures:
            raise JudgeProtocolError(f"no canned response for trace {key}")
        return json.dumps({"score": self.fixtures[key]})


class RemoteJudge:
    """Blocking JSON-over-TCP judge client, one in-flight request."""

    def __init__(self, endpoint: str, timeout: float = 30.0):
        host, _, port = endpoint.rpartition(":")
        if not host or not port.isdigit():
            raise MetricError(f"bad judge endpoint {endpoint!r}")
        self.host, self.port = host, int(port)
        self.timeout = timeout

    def score(self, prompt: str, summary: dict, key: str) -> str:
        request = json.dumps({"prompt": prompt, "frames": summary},
                             sort_keys=True)
        try:
            with socket.create_connection((self.host, self.port), self.timeout) as sock:
                sock.sendall(request.encode("utf-8") + b"\n")
                buf = b""
                while not buf.endswith(b"\n"):
                    chunk = sock.recv(65536)
                    if not chunk:
                        break
                    buf += chunk
        except OSError as exc:
            raise JudgeTransportError(f"{self.host}:{self.port}: {exc}") from exc
        return buf.decode("utf-8").strip()


def judge_hls(trace: EpisodeTrace, client) -> int:
    """Score a grasp trace 1..10 through a judge provider."""
    summary = trace_summary(trace)
    raw = client.score(judge_prompt_text(), summary, trace_hash(trace))
    return _parse_score(raw)


# ---------------------------------------------------------------------------
# report


def build_report(outcomes: Sequence[GraspOutcome], cfg: MetricConfig = MetricConfig(),
                 hls_scores: Optional[Sequence[int]] = None,
                 extra_config: Optional[dict] = None) -> dict:
    """JSON-ready evaluation report: overall and per-object success rate
    and affordance-score statistics."""
    if len(outcomes) == 0:
        raise MetricError("cannot report on zero outcomes")
    scores = [affordance_score(o, cfg) for o in outcomes]
    hist = [0] * 6
    for s in scores:
        hist[s] += 1

    per_object: Dict[str, dict] = {}
    for name in sorted({o.object_name for o in outcomes}):
        subset = [(o, s) for o, s in zip(outcomes, scores) if o.object_name == name]
        per_object[name] = {
            "episodes": len(subset),
            "success_rate": success_rate([o for o, _ in subset]),
            "affordance_score_mean": float(np.mean([s for _, s in subset])),
        }

    report = {
        "episodes": len(outcomes),
        "success_rate": success_rate(outcomes),
        "affordance_score_mean": float(np.mean(scores)),
        "affordance_score_histogram": hist,
        "affordance_scores": scores,
        "per_object": per_object,
        "metric_config": {
            "as_threshold": cfg.as_threshold,
            "as_sample_size": cfg.as_sample_size,
            "as_lower_is_better": cfg.as_lower_is_better,
        },
    }
    if hls_scores is not None:
        report["hls_mean"] = float(np.mean(list(hls_scores)))
        report["hls_scores"] = list(hls_scores)
    payload = dict(report)
    if extra_config:
        payload["run_config"] = extra_config
    payload["config_hash"] = config_hash(
        {"metrics": report["metric_config"], "extra": extra_config or {}}
    )
    return payload
