"""Reward kernels for both training stages.

Stage 1 (imitation):
    finger term   sum_f w_f * exp(-lambda_f * ||j_dex_f - j_ref_f||^2)
    smooth term   -w_smooth * sum_i |tau_i * qdot_i|
    total         0.05 * smooth + 0.8 * finger   (default combination)

Stage 2 (residual teacher), with default weights
lambda_d = lambda_g = -1, lambda_s = 1, lambda_n = -10, alpha_s = 0.05 m,
alpha_n = 0.03 m:
    grasp     lambda_d * ||p_hand - p_obj||
    goal      lambda_g * ||p_obj - p_goal||
    success   lambda_s * [||p_obj - p_goal|| < alpha_s]
    negative  lambda_n * #{fingertips within alpha_n of the negative set}
    total     grasp + goal + success + negative

The per-term lambda weights carry their signs; the total is the plain sum
of the four signed components, so it strictly decreases as the hand-object
distance grows.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional, Sequence

import numpy as np

from .geometry import PointCloud, min_distance
from .hand import HandKeypoints, JointState

__all__ = [
    "ImitationWeights",
    "TeacherWeights",
    "RewardBreakdown",
    "finger_imitation_reward",
    "smoothness_reward",
    "imitation_total",
    "teacher_reward",
    "load_weight_presets",
    "preset_names",
    "imitation_weights_from_preset",
    "teacher_weights_from_preset",
]

LEVEL_DECAY = {1: 50.0, 2: 40.0}  # 1/m^2, per keypoint level


class RewardError(ValueError):
    pass


@dataclass(frozen=True)
class ImitationWeights:
    """Per-keypoint weights and decay rates plus the stage-1 combination
    coefficients. Defaults follow the published configuration."""

    w: np.ndarray                 # per-keypoint, sums to 1 by default
    decay: np.ndarray             # per-keypoint lambda_f
    lambda_smooth: float = 0.05
    lambda_finger: float = 0.8
    w_smooth: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "w", np.asarray(self.w, dtype=np.float64))
        object.__setattr__(self, "decay", np.asarray(self.decay, dtype=np.float64))
        if np.any(self.w < 0):
            raise RewardError("keypoint weights must be >= 0")
        if np.any(self.decay <= 0):
            raise RewardError("decay rates must be > 0")
        if len(self.w) != len(self.decay):
            raise RewardError("w / decay length mismatch")

    @staticmethod
    def for_levels(
        levels: Sequence[int],
        level1_share: float = 0.6,
        lambda_smooth: float = 0.05,
        lambda_finger: float = 0.8,
        w_smooth: float = 1.0,
    ) -> "ImitationWeights":
        """Uniform weights within each level; levels share 0.6/0.4 of the
        total mass, renormalized to sum 1."""
        levels = np.asarray(levels, dtype=np.int64)
        n1 = int(np.sum(levels == 1))
        n2 = int(np.sum(levels == 2))
        w = np.empty(len(levels))
        if n1:
            w[levels == 1] = level1_share / n1
        if n2:
            w[levels == 2] = (1.0 - level1_share) / n2
        w = w / np.sum(w)
        decay = np.array([LEVEL_DECAY[int(lv)] for lv in levels])
        return ImitationWeights(w, decay, lambda_smooth, lambda_finger, w_smooth)


@dataclass(frozen=True)
class TeacherWeights:
    lambda_d: float = -1.0
    lambda_g: float = -1.0
    lambda_s: float = 1.0
    lambda_n: float = -10.0
    alpha_s: float = 0.05  # m
    alpha_n: float = 0.03  # m

    def __post_init__(self):
        if self.alpha_s <= 0 or self.alpha_n <= 0:
            raise RewardError("alpha thresholds must be > 0")


@dataclass
class RewardBreakdown:
    finger: float = 0.0
    smooth: float = 0.0
    total_imitation: float = 0.0
    grasp: float = 0.0
    goal: float = 0.0
    success: float = 0.0
    negative: float = 0.0
    total_teacher: float = 0.0

    def as_dict(self) -> Dict[str, float]:
        return dict(self.__dict__)


def finger_imitation_reward(
    dex: HandKeypoints, ref: HandKeypoints, w: ImitationWeights
) -> float:
    """Keypoint-tracking reward: weighted exponentials of squared distances."""
    if len(dex.positions) != len(ref.positions):
        raise RewardError(
            f"keypoint correspondence mismatch: {len(dex.positions)} vs {len(ref.positions)}"
        )
    if not np.array_equal(dex.levels, ref.levels):
        raise RewardError("keypoint level tags do not match")
    if len(w.w) != len(dex.positions):
        raise RewardError("weights sized for a different keypoint set")
    sq = np.sum((dex.positions - ref.positions) ** 2, axis=1)
    return float(np.sum(w.w * np.exp(-w.decay * sq)))


def smoothness_reward(joints: JointState, w_smooth: float = 1.0) -> float:
    """Negated total joint power: -w_smooth * sum |tau_i * qdot_i|."""
    if w_smooth < 0:
        raise RewardError("w_smooth must be >= 0")
    return float(-w_smooth * np.sum(np.abs(joints.torques * joints.velocities)))


def imitation_total(finger: float, smooth: float, w: ImitationWeights) -> float:
    return w.lambda_smooth * smooth + w.lambda_finger * finger


def teacher_reward(
    hand_pos: np.ndarray,
    obj_pos: np.ndarray,
    goal_pos: np.ndarray,
    fingertips: Sequence[np.ndarray],
    negative: Optional[PointCloud],
    w: TeacherWeights,
) -> RewardBreakdown:
    """Stage-2 residual-learning reward with per-term breakdown.

    An empty (or None) negative set contributes 0: an object with no
    negative affordance imposes no constraint.
    """
    if len(fingertips) != 5:
        raise RewardError(f"expected 5 fingertips, got {len(fingertips)}")
    hand_pos = np.asarray(hand_pos, dtype=np.float64)
    obj_pos = np.asarray(obj_pos, dtype=np.float64)
    goal_pos = np.asarray(goal_pos, dtype=np.float64)

    grasp = w.lambda_d * float(np.linalg.norm(hand_pos - obj_pos))
    goal_dist = float(np.linalg.norm(obj_pos - goal_pos))
    goal = w.lambda_g * goal_dist
    success = w.lambda_s * (1.0 if goal_dist < w.alpha_s else 0.0)
    if negative is None or len(negative) == 0:
        violations = 0
    else:
        violations = sum(
            1 for tip in fingertips if min_distance(tip, negative) < w.alpha_n
        )
    neg = w.lambda_n * violations
    return RewardBreakdown(
        grasp=grasp,
        goal=goal,
        success=success,
        negative=neg,
        total_teacher=grasp + goal + success + neg,
    )


# ---------------------------------------------------------------------------
# presets mirroring the published hyperparameter ablation rows


def _presets_path() -> Path:
    return Path(__file__).parent / "data" / "reward_presets.txt"


def load_weight_presets(path=None) -> Dict[str, Dict[str, float]]:
    """Named weight presets, one `name key=value ...` record per line."""
    presets: Dict[str, Dict[str, float]] = {}
    text = Path(path or _presets_path()).read_text(encoding="utf-8")
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        name, *tokens = line.split()
        entry = {}
        for tok in tokens:
            key, _, val = tok.partition("=")
            entry[key] = float(val)
        presets[name] = entry
    return presets


def preset_names(path=None) -> Sequence[str]:
    return sorted(load_weight_presets(path))


def imitation_weights_from_preset(
    name: str, levels: Sequence[int], path=None
) -> ImitationWeights:
    entry = load_weight_presets(path)[name]
    return ImitationWeights.for_levels(
        levels,
        lambda_smooth=entry.get("lambda_smooth", 0.05),
        lambda_finger=entry.get("lambda_finger", 0.8),
    )


def teacher_weights_from_preset(name: str, path=None) -> TeacherWeights:
    entry = load_weight_presets(path)[name]
    return TeacherWeights(
        lambda_d=entry.get("lambda_d", -1.0),
        lambda_g=entry.get("lambda_g", -1.0),
        lambda_s=entry.get("lambda_s", 1.0),
        lambda_n=entry.get("lambda_n", -10.0),
        alpha_s=entry.get("alpha_s", 0.05),
        alpha_n=entry.get("alpha_n", 0.03),
    )
