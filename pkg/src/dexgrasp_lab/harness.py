"""Experiment harness: config files, run directories, manifests, and the
implementations behind the command-line stages.

Config files are plain ``key = value`` text with ``#`` comments and
``include <path>`` lines (relative to the including file). Later keys
override earlier ones, so presets layer naturally::

    include base.cfg
    seed = 7
    teacher.iterations = 40

Every stage writes into a fresh timestamped directory under the chosen
output root and finishes by writing ``manifest.json``; the artifacts
themselves are made read-only. Re-running never touches an existing run.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field, fields, replace
from datetime import datetime
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from .env import EnvConfig, EpisodeTrace, GraspEnv
from .geometry import PointCloud, Pose
from .hand import NUM_DOF, default_hand_spec
from .metrics import (
    GraspOutcome,
    MetricConfig,
    affordance_score,
    build_report,
    success_rate,
)
from .mlp import MlpSpec
from .naa import (
    NaaConfig,
    compute_negative_affordance,
    load_negative_affordance,
    save_negative_affordance,
)
from .objects import ObjectModel, bundled_corpus_dir, load_corpus
from .policy import (
    PolicyParams,
    config_hash,
    encoded_dim,
    load_checkpoint,
    save_checkpoint,
)
from .providers import ProviderTransportError, builtin_suite
from .rewards import (
    ImitationWeights,
    imitation_weights_from_preset,
    load_weight_presets,
    teacher_weights_from_preset,
)
from .trajectory import plan_reach_grasp
from .training import (
    BaseActor,
    DaggerConfig,
    DistillDataset,
    PpoConfig,
    ScriptedActor,
    dagger_round,
    evaluate_imitation,
    grasp_plan_tasks,
    imitation_obs_dim,
    run_grasp_episode,
    run_student_episode,
    train_imitation,
    train_residual,
)
from .wire import PROTOCOL_VERSION, external_suite

__all__ = [
    "ConfigError",
    "HarnessError",
    "ExperimentConfig",
    "parse_config_file",
    "new_run_dir",
    "RunManifest",
    "validate_manifest",
    "cmd_pretrain",
    "cmd_naa",
    "cmd_train_teacher",
    "cmd_distill",
    "cmd_eval",
    "cmd_report",
    "COMMANDS",
]

ARTIFACT_VERSIONS = {"checkpoint": 1, "wire_protocol": PROTOCOL_VERSION,
                     "manifest": 1}


class ConfigError(ValueError):
    pass


class HarnessError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# config files


def parse_config_file(path) -> Dict[str, str]:
    """Flat key -> value string map with include support."""
    out: Dict[str, str] = {}
    _parse_into(Path(path), out, seen=set())
    return out


def _parse_into(path: Path, out: Dict[str, str], seen) -> None:
    path = path.resolve()
    if path in seen:
        raise ConfigError(f"{path}: include cycle")
    seen.add(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("include "):
            target = line[len("include "):].strip()
            _parse_into(path.parent / target, out, seen)
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        out[key.strip()] = value.strip()
    seen.discard(path)


def _floats(value: str, n: int, key: str) -> Tuple[float, ...]:
    parts = value.replace(",", " ").split()
    if len(parts) != n:
        raise ConfigError(f"{key}: expected {n} numbers, got {value!r}")
    return tuple(float(p) for p in parts)


def _bool(value: str, key: str) -> bool:
    low = value.lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ConfigError(f"{key}: expected a boolean, got {value!r}")


@dataclass(frozen=True)
class PretrainConfig:
    iterations: int = 400
    target: float = 0.85
    hidden: Tuple[int, ...] = (64, 64)
    train_tasks: int = 8
    eval_tasks: int = 2
    final_scale: float = 0.01
    log_std_init: float = -1.5


@dataclass(frozen=True)
class TeacherRunConfig:
    iterations: int = 30
    episodes_per_iter: int = 4
    object: str = "ball"
    base_checkpoint: str = ""
    negative: str = "none"            # "none" | "auto" | path to a .naa file
    hidden: Tuple[int, ...] = (64, 64)
    final_scale: float = 0.0          # zero-initialized residual head
    log_std_init: float = -1.5
    eval_episodes: int = 100
    select_episodes: int = 16         # keep-best selection set; 0 disables


@dataclass(frozen=True)
class DistillRunConfig:
    rounds: int = 6
    base_checkpoint: str = ""
    teacher_checkpoint: str = ""
    object: str = "ball"
    negative: str = "none"
    hidden: Tuple[int, ...] = (64, 64)
    final_scale: float = 0.0          # zero-initialized student residual
    log_std_init: float = -1.5
    eval_episodes: int = 50


@dataclass(frozen=True)
class EvalRunConfig:
    episodes: int = 100
    mode: str = "scripted"            # scripted | still | base | teacher | student
    object: str = "ball"
    negative: str = "none"
    checkpoint: str = ""              # residual / student checkpoint
    base_checkpoint: str = ""


_SECTIONS = {
    "env": EnvConfig,
    "ppo": PpoConfig,
    "naa": NaaConfig,
    "pretrain": PretrainConfig,
    "teacher": TeacherRunConfig,
    "distill": DistillRunConfig,
    "dagger": DaggerConfig,
    "eval": EvalRunConfig,
    "metrics": MetricConfig,
}

_TOP_KEYS = ("seed", "provider", "reward_preset", "objects_dir", "out")


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a stage needs, assembled from a flat key/value map."""

    seed: int = 0
    provider: str = "builtin"         # "builtin" or host:port
    reward_preset: str = "default"
    objects_dir: str = "bundled"
    out: str = "runs"
    env: EnvConfig = field(default_factory=EnvConfig)
    ppo: PpoConfig = field(default_factory=PpoConfig)
    naa: NaaConfig = field(default_factory=NaaConfig)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    teacher: TeacherRunConfig = field(default_factory=TeacherRunConfig)
    distill: DistillRunConfig = field(default_factory=DistillRunConfig)
    dagger: DaggerConfig = field(default_factory=DaggerConfig)
    eval: EvalRunConfig = field(default_factory=EvalRunConfig)
    metrics: MetricConfig = field(default_factory=MetricConfig)

    @classmethod
    def from_file(cls, path, overrides: Optional[Dict[str, str]] = None
                  ) -> "ExperimentConfig":
        flat = parse_config_file(path)
        if overrides:
            flat.update(overrides)
        return cls.from_flat(flat)

    @classmethod
    def from_flat(cls, flat: Dict[str, str]) -> "ExperimentConfig":
        per_section: Dict[str, Dict[str, object]] = {k: {} for k in _SECTIONS}
        top: Dict[str, object] = {}
        for key, value in flat.items():
            section, sep, name = key.partition(".")
            if not sep:
                if key not in _TOP_KEYS:
                    raise ConfigError(f"unknown config key {key!r}")
                top[key] = int(value) if key == "seed" else value
                continue
            if section not in _SECTIONS:
                raise ConfigError(f"unknown config section {section!r}")
            per_section[section][name] = _convert(_SECTIONS[section], name, value)
        kwargs = dict(top)
        for section, cls_ in _SECTIONS.items():
            kwargs[section] = cls_(**per_section[section])
        try:
            return cls(**kwargs)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict:
        """Nested plain-data view; the basis of the config hash."""
        out: Dict[str, object] = {k: getattr(self, k) for k in _TOP_KEYS
                                  if k != "out"}
        for section in _SECTIONS:
            cfg = getattr(self, section)
            out[section] = {
                f.name: _plain(getattr(cfg, f.name)) for f in fields(cfg)
            }
        return out

    def hash(self) -> str:
        return config_hash(self.to_dict())

    def weights(self, levels) -> ImitationWeights:
        w = imitation_weights_from_preset(self.reward_preset, levels)
        # the tracking stage trains with the smoothness term disabled; see
        # the preset table for the ablations that turn it back on
        entry = load_weight_presets()[self.reward_preset]
        return replace(w, w_smooth=entry.get("w_smooth", 0.0))

    def corpus_dir(self) -> Path:
        if self.objects_dir == "bundled":
            return bundled_corpus_dir()
        return Path(self.objects_dir)


def _convert(cls, name: str, value: str):
    hints = {f.name: f.type for f in fields(cls)}
    if name not in hints:
        raise ConfigError(f"{cls.__name__} has no field {name!r}")
    hint = str(hints[name])
    if "Tuple[int" in hint or name in ("hidden", "resolution"):
        return tuple(int(float(v)) for v in value.replace(",", " ").split())
    if "Tuple[float" in hint or name in ("goal_offset", "hand_start"):
        return _floats(value, 3, name)
    if hint == "bool":
        return _bool(value, name)
    if hint == "int":
        return int(value)
    if hint == "float":
        return float(value)
    return value


def _plain(v):
    if isinstance(v, tuple):
        return list(v)
    return v


# ---------------------------------------------------------------------------
# run directories and manifests


def new_run_dir(out_root, command: str) -> Path:
    """Fresh timestamped directory; existing runs are never reused."""
    root = Path(out_root)
    root.mkdir(parents=True, exist_ok=True)
    for attempt in range(1000):
        stamp = datetime.now().strftime("%Y%m%dT%H%M%S.%f")
        suffix = "" if attempt == 0 else f"-{attempt}"
        candidate = root / f"{command}-{stamp}{suffix}"
        try:
            candidate.mkdir()
            return candidate
        except FileExistsError:
            continue
    raise HarnessError(f"could not allocate a run directory under {root}")


@dataclass
class RunManifest:
    command: str
    config_hash: str
    config: dict
    artifact_versions: Dict[str, int]
    artifacts: List[str]
    metrics: dict
    timings: Dict[str, float]

    def write(self, run_dir: Path) -> Path:
        for rel in self.artifacts:
            if not (run_dir / rel).exists():
                raise HarnessError(f"manifest references missing file {rel!r}")
        path = run_dir / "manifest.json"
        path.write_text(json.dumps(self.__dict__, indent=2, sort_keys=True) + "\n",
                        encoding="utf-8")
        return path


def validate_manifest(run_dir, cfg: Optional[ExperimentConfig] = None) -> dict:
    run_dir = Path(run_dir)
    doc = json.loads((run_dir / "manifest.json").read_text(encoding="utf-8"))
    for rel in doc["artifacts"]:
        if not (run_dir / rel).exists():
            raise HarnessError(f"{run_dir}: missing artifact {rel!r}")
    if doc["config_hash"] != config_hash(doc["config"]):
        raise HarnessError(f"{run_dir}: config hash mismatch")
    if cfg is not None and doc["config_hash"] != cfg.hash():
        raise HarnessError(f"{run_dir}: manifest built from a different config")
    return doc


def _finish(run_dir: Path, command: str, cfg: ExperimentConfig,
            artifacts: List[str], metrics: dict, timings: Dict[str, float]) -> dict:
    manifest = RunManifest(
        command=command,
        config_hash=cfg.hash(),
        config=cfg.to_dict(),
        artifact_versions=ARTIFACT_VERSIONS,
        artifacts=sorted(artifacts),
        metrics=metrics,
        timings={k: round(v, 6) for k, v in timings.items()},
    )
    manifest.write(run_dir)
    for rel in artifacts:
        os.chmod(run_dir / rel, 0o444)
    return manifest.__dict__


def _write_json(run_dir: Path, rel: str, doc) -> str:
    (run_dir / rel).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n",
                               encoding="utf-8")
    return rel


# ---------------------------------------------------------------------------
# shared pieces


def _load_object(cfg: ExperimentConfig, name: str) -> ObjectModel:
    corpus = {o.name: o for o in load_corpus(cfg.corpus_dir())}
    if name not in corpus:
        raise HarnessError(f"object {name!r} not in corpus {sorted(corpus)}")
    return corpus[name]


def _suite_for(cfg: ExperimentConfig, obj: ObjectModel):
    if cfg.provider == "builtin":
        return builtin_suite(obj)
    return external_suite(cfg.provider)


def _negative_for(cfg: ExperimentConfig, spec_value: str,
                  obj: ObjectModel) -> Optional[PointCloud]:
    """Resolve a stage's negative-region setting: none, a stored file, or
    a fresh pipeline run."""
    if spec_value == "none":
        return None
    if spec_value == "auto":
        na = compute_negative_affordance(obj.cloud, "auto",
                                         _suite_for(cfg, obj), cfg.naa)
        return None if na.empty else na.sampled
    na = load_negative_affordance(spec_value, obj.cloud)
    return None if na.empty else na.sampled


def _base_actor(cfg: ExperimentConfig, path: str) -> BaseActor:
    if not path:
        raise HarnessError("a base checkpoint path is required")
    pp, _, _, _ = load_checkpoint(path)
    if pp.role != "base":
        raise HarnessError(f"{path}: role {pp.role!r}, expected 'base'")
    return BaseActor(pp, default_hand_spec())


def _levels():
    spec = default_hand_spec()
    traj, _ = plan_reach_grasp(spec, Pose.identity(), [0.1, 0, 0])
    return traj.frames[0].levels


def _make_env(cfg: ExperimentConfig, obj: ObjectModel,
              negative: Optional[PointCloud]) -> GraspEnv:
    return GraspEnv(cfg.env, obj.cloud, negative_cloud=negative,
                    weights=teacher_weights_from_preset(cfg.reward_preset))


def _episode_outcome(env: GraspEnv, result: dict, obj: ObjectModel,
                     negative: Optional[PointCloud]) -> GraspOutcome:
    neg = negative if negative is not None else PointCloud(np.zeros((0, 3)))
    tips = np.asarray(result["fingertips"])
    return GraspOutcome(result["success"], min(result["steps"], 200), tips,
                        neg, obj.name)


# ---------------------------------------------------------------------------
# commands


def cmd_pretrain(cfg: ExperimentConfig, run_dir: Path) -> dict:
    """Stage 1: PPO imitation of planned reach-grasp references."""
    t0 = time.perf_counter()
    spec = default_hand_spec()
    levels = _levels()
    weights = cfg.weights(levels)
    p = cfg.pretrain
    train = grasp_plan_tasks(spec, range(p.train_tasks), weights, dt=cfg.env.dt,
                             hand_start=cfg.env.hand_start)
    evals = grasp_plan_tasks(spec, range(100, 100 + p.eval_tasks), weights,
                             dt=cfg.env.dt, hand_start=cfg.env.hand_start)
    obs_dim = imitation_obs_dim()
    policy = PolicyParams.init("base", MlpSpec(obs_dim, NUM_DOF, p.hidden),
                               seed=cfg.seed, final_scale=p.final_scale,
                               log_std_init=p.log_std_init)
    value = PolicyParams.init("value", MlpSpec(obs_dim, 1, p.hidden),
                              seed=cfg.seed + 1)
    t_setup = time.perf_counter()
    policy, value, history = train_imitation(
        train, evals, policy, value, cfg.ppo, iterations=p.iterations,
        seed=cfg.seed, target=p.target,
    )
    t_train = time.perf_counter()
    final = evaluate_imitation(policy, evals)
    save_checkpoint(run_dir / "base.ckpt", policy, config_hash=cfg.hash())
    artifacts = ["base.ckpt"]
    artifacts.append(_write_json(run_dir, "history.json", {
        "eval_finger_reward": [[int(i), s] for i, s in history],
        "final_held_out": final,
    }))
    metrics = {"held_out_finger_reward": final,
               "iterations_run": len(history)}
    return _finish(run_dir, "pretrain", cfg, artifacts, metrics, {
        "setup_s": t_setup - t0, "train_s": t_train - t_setup,
        "total_s": time.perf_counter() - t0,
    })


def cmd_naa(cfg: ExperimentConfig, run_dir: Path) -> dict:
    """Negative-affordance extraction over the whole object corpus."""
    t0 = time.perf_counter()
    corpus = load_corpus(cfg.corpus_dir())
    artifacts: List[str] = []
    rows = []
    per_object = {}
    for obj in corpus:
        entry = {"object": obj.name}
        try:
            suite = _suite_for(cfg, obj)
            na = compute_negative_affordance(obj.cloud, "auto", suite, cfg.naa)
        except ProviderTransportError as exc:
            entry.update(status="transport-error", error=str(exc))
            rows.append(entry)
            per_object[obj.name] = entry
            continue
        rel = f"{obj.name}.naa"
        save_negative_affordance(na, run_dir / rel, cfg.naa)
        artifacts += [rel, rel + ".meta.json"]
        entry.update(status="ok", empty=na.empty, query=na.query,
                     num_points=len(na.points), num_sampled=len(na.sampled))
        rows.append(entry)
        per_object[obj.name] = entry
    artifacts.append(_write_json(run_dir, "summary.json", rows))
    _print_naa_table(rows)
    metrics = {"objects": len(corpus),
               "failures": sum(1 for r in rows if r["status"] != "ok"),
               "per_object": per_object}
    return _finish(run_dir, "naa", cfg, artifacts, metrics,
                   {"total_s": time.perf_counter() - t0})


def _print_naa_table(rows) -> None:
    print(f"{'object':<12} {'status':<16} {'points':>7} {'sampled':>8}  query")
    for r in rows:
        if r["status"] == "ok":
            print(f"{r['object']:<12} {r['status']:<16} {r['num_points']:>7} "
                  f"{r['num_sampled']:>8}  {r['query'] or '-'}")
        else:
            print(f"{r['object']:<12} {r['status']:<16} {'-':>7} {'-':>8}  -")


def cmd_train_teacher(cfg: ExperimentConfig, run_dir: Path) -> dict:
    """Stage 2: residual PPO on top of the frozen base actor."""
    t0 = time.perf_counter()
    t = cfg.teacher
    obj = _load_object(cfg, t.object)
    negative = _negative_for(cfg, t.negative, obj)
    base = _base_actor(cfg, t.base_checkpoint)
    obs_dim = encoded_dim("teacher")
    residual = PolicyParams.init("teacher_residual",
                                 MlpSpec(obs_dim, NUM_DOF, t.hidden),
                                 seed=cfg.seed, final_scale=t.final_scale,
                                 log_std_init=t.log_std_init)
    value = PolicyParams.init("value", MlpSpec(obs_dim, 1, t.hidden),
                              seed=cfg.seed + 1)

    def make_env(_counter: int) -> GraspEnv:
        return _make_env(cfg, obj, negative)

    t_setup = time.perf_counter()
    residual, value, history = train_residual(
        make_env, base, residual, value, cfg.ppo,
        iterations=t.iterations, episodes_per_iter=t.episodes_per_iter,
        seed=cfg.seed,
        eval_seeds=(range(10_000, 10_000 + t.select_episodes)
                    if t.select_episodes > 0 else None),
    )
    t_train = time.perf_counter()

    outcomes = []
    for ep in range(t.eval_episodes):
        env = _make_env(cfg, obj, negative)
        result = run_grasp_episode(env, base, residual, seed=ep)
        outcomes.append(_episode_outcome(env, result, obj, negative))
    metrics = {
        "success_rate": success_rate(outcomes),
        "affordance_score_mean": float(np.mean(
            [affordance_score(o, cfg.metrics) for o in outcomes])),
        "iterations_run": len(history),
        "eval_episodes": t.eval_episodes,
    }
    save_checkpoint(run_dir / "teacher.ckpt", residual, config_hash=cfg.hash())
    artifacts = ["teacher.ckpt"]
    artifacts.append(_write_json(run_dir, "history.json", {
        "mean_return": [[int(i), r] for i, r in history],
    }))
    return _finish(run_dir, "train-teacher", cfg, artifacts, metrics, {
        "setup_s": t_setup - t0, "train_s": t_train - t_setup,
        "total_s": time.perf_counter() - t0,
    })


def cmd_distill(cfg: ExperimentConfig, run_dir: Path) -> dict:
    """Teacher -> student distillation with DAgger aggregation."""
    t0 = time.perf_counter()
    d = cfg.distill
    obj = _load_object(cfg, d.object)
    negative = _negative_for(cfg, d.negative, obj)
    base = _base_actor(cfg, d.base_checkpoint)
    if not d.teacher_checkpoint:
        raise HarnessError("distill.teacher_checkpoint is required")
    teacher, _, _, _ = load_checkpoint(d.teacher_checkpoint)
    student = PolicyParams.init("student",
                                MlpSpec(encoded_dim("student"), NUM_DOF, d.hidden),
                                seed=cfg.seed, final_scale=d.final_scale,
                                log_std_init=d.log_std_init)

    def make_env(_counter: int) -> GraspEnv:
        return _make_env(cfg, obj, negative)

    aggregate = DistillDataset()
    losses = []
    for rnd in range(d.rounds):
        student, aggregate, loss = dagger_round(
            teacher, base, student, make_env, aggregate, cfg.dagger,
            seed=cfg.seed + rnd,
        )
        losses.append(loss)
    t_train = time.perf_counter()

    outcomes = []
    for ep in range(d.eval_episodes):
        env = _make_env(cfg, obj, negative)
        result = run_student_episode(env, base, student, seed=ep)
        outcomes.append(_episode_outcome(env, result, obj, negative))
    metrics = {
        "success_rate": success_rate(outcomes),
        "rounds": d.rounds,
        "dagger_losses": losses,
        "dataset_size": len(aggregate),
    }
    save_checkpoint(run_dir / "student.ckpt", student, config_hash=cfg.hash())
    artifacts = ["student.ckpt",
                 _write_json(run_dir, "losses.json", {"dagger_losses": losses})]
    return _finish(run_dir, "distill", cfg, artifacts, metrics, {
        "train_s": t_train - t0, "total_s": time.perf_counter() - t0,
    })


class _StillActor:
    """Policy that never moves; evaluation floor."""

    def reset(self, env) -> None:
        pass

    def action(self, env) -> np.ndarray:
        return np.zeros(NUM_DOF)


def cmd_eval(cfg: ExperimentConfig, run_dir: Path) -> dict:
    """Seeded evaluation episodes with stored traces and a JSON report."""
    t0 = time.perf_counter()
    e = cfg.eval
    obj = _load_object(cfg, e.object)
    negative = _negative_for(cfg, e.negative, obj)
    spec = default_hand_spec()

    residual = None
    student = None
    if e.mode == "scripted":
        actor = ScriptedActor(spec)
    elif e.mode == "still":
        actor = _StillActor()
    elif e.mode == "base":
        actor = _base_actor(cfg, e.base_checkpoint)
    elif e.mode == "teacher":
        actor = _base_actor(cfg, e.base_checkpoint)
        residual, _, _, _ = load_checkpoint(e.checkpoint)
    elif e.mode == "student":
        actor = _base_actor(cfg, e.base_checkpoint)
        student, _, _, _ = load_checkpoint(e.checkpoint)
    else:
        raise HarnessError(f"unknown eval mode {e.mode!r}")

    outcomes = []
    trace_lines = []
    for ep in range(e.episodes):
        env = _make_env(cfg, obj, negative)
        trace = EpisodeTrace()

        def record(step, action, result, trace=trace):
            trace.append(step, action, result.reward_breakdown,
                         result.teacher.object.pose, result.success)

        if e.mode == "student":
            result = run_student_episode(env, actor, student, seed=ep,
                                         record=record)
        else:
            result = run_grasp_episode(env, actor, residual, seed=ep,
                                       record=record)
        outcomes.append(_episode_outcome(env, result, obj, negative))
        trace_lines.append(json.dumps({
            "episode": ep,
            "success": bool(result["success"]),
            "steps": int(result["steps"]),
            "fingertips": np.asarray(result["fingertips"]).round(9).tolist(),
            "records": [rec.__dict__ for rec in trace.records],
        }, sort_keys=True))

    report = build_report(outcomes, cfg.metrics,
                          extra_config={"mode": e.mode, "object": e.object,
                                        "episodes": e.episodes})
    artifacts = [_write_json(run_dir, "report.json", report)]
    (run_dir / "traces.jsonl").write_text("\n".join(trace_lines) + "\n",
                                          encoding="utf-8")
    artifacts.append("traces.jsonl")
    metrics = {"success_rate": report["success_rate"],
               "affordance_score_mean": report["affordance_score_mean"]}
    return _finish(run_dir, "eval", cfg, artifacts, metrics,
                   {"total_s": time.perf_counter() - t0})


def cmd_report(cfg: ExperimentConfig, run_dir: Path, eval_dir) -> dict:
    """Recompute the evaluation report from stored traces and check it
    against the one written at evaluation time."""
    t0 = time.perf_counter()
    eval_dir = Path(eval_dir)
    stored = json.loads((eval_dir / "report.json").read_text(encoding="utf-8"))
    obj_name = stored["run_config"]["object"]
    obj = _load_object(cfg, obj_name)
    negative = _negative_for(cfg, cfg.eval.negative, obj)
    outcomes = []
    for line in (eval_dir / "traces.jsonl").read_text(encoding="utf-8").splitlines():
        doc = json.loads(line)
        outcomes.append(GraspOutcome(
            doc["success"], min(doc["steps"], 200),
            np.asarray(doc["fingertips"]),
            negative if negative is not None else PointCloud(np.zeros((0, 3))),
            obj_name,
        ))
    recomputed = build_report(outcomes, cfg.metrics,
                              extra_config=stored["run_config"])
    match = (recomputed["success_rate"] == stored["success_rate"]
             and recomputed["affordance_scores"] == stored["affordance_scores"])
    if not match:
        raise HarnessError(f"{eval_dir}: stored report disagrees with traces")
    artifacts = [_write_json(run_dir, "report.json", recomputed)]
    print(f"{'object':<12} {'episodes':>8} {'Succ':>7} {'AS mean':>8}")
    for name, row in recomputed["per_object"].items():
        print(f"{name:<12} {row['episodes']:>8} {row['success_rate']:>7.3f} "
              f"{row['affordance_score_mean']:>8.3f}")
    metrics = {"recomputed_match": match,
               "success_rate": recomputed["success_rate"]}
    return _finish(run_dir, "report", cfg, artifacts, metrics,
                   {"total_s": time.perf_counter() - t0})


COMMANDS = {
    "pretrain": cmd_pretrain,
    "naa": cmd_naa,
    "train-teacher": cmd_train_teacher,
    "distill": cmd_distill,
    "eval": cmd_eval,
    "report": cmd_report,
}
