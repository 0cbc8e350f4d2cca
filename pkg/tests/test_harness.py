import json
import socket

import numpy as np
import pytest

from dexgrasp_lab.harness import (
    ConfigError,
    ExperimentConfig,
    HarnessError,
    RunManifest,
    cmd_distill,
    cmd_eval,
    cmd_naa,
    cmd_pretrain,
    cmd_report,
    cmd_train_teacher,
    new_run_dir,
    parse_config_file,
    validate_manifest,
)
from dexgrasp_lab.cli import main
from dexgrasp_lab.env import EnvConfig, GraspEnv
from dexgrasp_lab.hand import default_hand_spec
from dexgrasp_lab.mlp import MlpSpec
from dexgrasp_lab.objects import make_ball
from dexgrasp_lab.policy import PolicyParams, load_checkpoint
from dexgrasp_lab.rewards import preset_names
from dexgrasp_lab.training import BaseActor, imitation_obs_dim, run_grasp_episode

from pathlib import Path

CONFIGS = Path(__file__).resolve().parents[1] / "src/dexgrasp_lab/data/configs"


def write_cfg(tmp_path, text, name="exp.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return path


class TestConfigParsing:
    def test_key_value_and_comments(self, tmp_path):
        path = write_cfg(tmp_path, "a = 1  # trailing\n\n# full line\nb.c = x y\n")
        assert parse_config_file(path) == {"a": "1", "b.c": "x y"}

    def test_include_layering(self, tmp_path):
        write_cfg(tmp_path, "seed = 1\nppo.epochs = 2\n", "base.cfg")
        top = write_cfg(tmp_path, "include base.cfg\nseed = 9\n")
        flat = parse_config_file(top)
        assert flat == {"seed": "9", "ppo.epochs": "2"}

    def test_include_cycle_rejected(self, tmp_path):
        write_cfg(tmp_path, "include b.cfg\n", "a.cfg")
        write_cfg(tmp_path, "include a.cfg\n", "b.cfg")
        with pytest.raises(ConfigError):
            parse_config_file(tmp_path / "a.cfg")

    def test_missing_equals_rejected(self, tmp_path):
        with pytest.raises(ConfigError):
            parse_config_file(write_cfg(tmp_path, "just words\n"))

    def test_typed_sections(self, tmp_path):
        cfg = ExperimentConfig.from_file(write_cfg(tmp_path, "\n".join([
            "seed = 3",
            "env.goal_offset = 0 0 0.3",
            "ppo.learning_rate = 1e-3",
            "naa.resolution = 128 128",
            "metrics.as_lower_is_better = false",
            "pretrain.hidden = 32,32",
        ])))
        assert cfg.seed == 3
        assert cfg.env.goal_offset == (0.0, 0.0, 0.3)
        assert cfg.ppo.learning_rate == 1e-3
        assert cfg.naa.resolution == (128, 128)
        assert cfg.metrics.as_lower_is_better is False
        assert cfg.pretrain.hidden == (32, 32)

    def test_unknown_keys_rejected(self, tmp_path):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_file(write_cfg(tmp_path, "bogus = 1\n"))
        with pytest.raises(ConfigError):
            ExperimentConfig.from_file(write_cfg(tmp_path, "ppo.bogus = 1\n"))
        with pytest.raises(ConfigError):
            ExperimentConfig.from_file(write_cfg(tmp_path, "nosect.x = 1\n"))

    def test_cli_overrides_change_values_not_layout(self, tmp_path):
        path = write_cfg(tmp_path, "seed = 1\n")
        a = ExperimentConfig.from_file(path)
        b = ExperimentConfig.from_file(path, {"seed": "2"})
        assert a.seed == 1 and b.seed == 2
        assert a.hash() != b.hash()

    def test_out_dir_not_hashed(self, tmp_path):
        path = write_cfg(tmp_path, "seed = 1\n")
        a = ExperimentConfig.from_file(path, {"out": "x"})
        b = ExperimentConfig.from_file(path, {"out": "y"})
        assert a.hash() == b.hash()


class TestShippedPresets:
    def test_base_preset_loads(self):
        cfg = ExperimentConfig.from_file(CONFIGS / "base.cfg")
        assert cfg.reward_preset == "default"
        assert cfg.provider == "builtin"

    def test_every_ablation_row_has_a_preset(self):
        for name in preset_names():
            if name == "default":
                continue
            cfg = ExperimentConfig.from_file(CONFIGS / f"{name}.cfg")
            assert cfg.reward_preset == name


class TestRunDirsAndManifest:
    def test_run_dirs_never_collide(self, tmp_path):
        dirs = {new_run_dir(tmp_path, "eval") for _ in range(5)}
        assert len(dirs) == 5
        for d in dirs:
            assert d.is_dir()

    def test_manifest_requires_existing_artifacts(self, tmp_path):
        run = new_run_dir(tmp_path, "eval")
        m = RunManifest("eval", "h", {}, {}, ["missing.json"], {}, {})
        with pytest.raises(HarnessError):
            m.write(run)

    def test_validate_manifest_checks_hash(self, tmp_path):
        cfg = ExperimentConfig()
        run = new_run_dir(tmp_path, "eval")
        (run / "a.json").write_text("{}")
        RunManifest("eval", cfg.hash(), cfg.to_dict(), {}, ["a.json"],
                    {}, {"total_s": 0.1}).write(run)
        doc = validate_manifest(run, cfg)
        assert doc["command"] == "eval"
        bad = json.loads((run / "manifest.json").read_text())
        bad["config"]["seed"] = 99
        (run / "manifest.json").write_text(json.dumps(bad))
        with pytest.raises(HarnessError):
            validate_manifest(run)


def tiny_pretrain_cfg(tmp_path, iterations=1, seed=5):
    return ExperimentConfig.from_flat({
        "seed": str(seed),
        "out": str(tmp_path / "runs"),
        "pretrain.iterations": str(iterations),
        "pretrain.target": "10.0",  # unreachable: run every iteration
        "pretrain.hidden": "16",
        "pretrain.train_tasks": "1",
        "pretrain.eval_tasks": "1",
        "ppo.minibatch_size": "32",
        "ppo.epochs": "1",
    })


class TestPretrainCommand:
    def test_zero_iterations_equals_init(self, tmp_path):
        cfg = tiny_pretrain_cfg(tmp_path, iterations=0)
        # dataclass validation forbids iterations=0 nowhere; run directly
        run = new_run_dir(cfg.out, "pretrain")
        manifest = cmd_pretrain(cfg, run)
        pp, _, _, header = load_checkpoint(run / "base.ckpt")
        init = PolicyParams.init("base", MlpSpec(imitation_obs_dim(), 24, (16,)),
                                 seed=cfg.seed, final_scale=cfg.pretrain.final_scale,
                                 log_std_init=cfg.pretrain.log_std_init)
        assert np.array_equal(pp.params, init.params)
        assert header["config_hash"] == cfg.hash()
        assert manifest["metrics"]["iterations_run"] == 0

    def test_repeat_run_is_byte_identical(self, tmp_path):
        cfg = tiny_pretrain_cfg(tmp_path)
        run1 = new_run_dir(cfg.out, "pretrain")
        cmd_pretrain(cfg, run1)
        run2 = new_run_dir(cfg.out, "pretrain")
        cmd_pretrain(cfg, run2)
        assert run1 != run2
        assert (run1 / "base.ckpt").read_bytes() == (run2 / "base.ckpt").read_bytes()
        assert (run1 / "history.json").read_bytes() == (run2 / "history.json").read_bytes()
        m1 = validate_manifest(run1, cfg)
        m2 = validate_manifest(run2, cfg)
        m1.pop("timings"), m2.pop("timings")
        assert m1 == m2

    def test_artifacts_read_only(self, tmp_path):
        cfg = tiny_pretrain_cfg(tmp_path)
        run = new_run_dir(cfg.out, "pretrain")
        cmd_pretrain(cfg, run)
        mode = (run / "base.ckpt").stat().st_mode & 0o777
        assert mode == 0o444


class TestNaaCommand:
    def test_one_file_per_object(self, tmp_path):
        cfg = ExperimentConfig.from_flat({
            "out": str(tmp_path), "naa.grid_size": "8"})
        run = new_run_dir(cfg.out, "naa")
        manifest = cmd_naa(cfg, run)
        for name in ("knife", "hammer", "ball"):
            assert (run / f"{name}.naa").exists()
            assert (run / f"{name}.naa.meta.json").exists()
        assert manifest["metrics"]["objects"] == 3
        assert manifest["metrics"]["failures"] == 0
        rows = json.loads((run / "summary.json").read_text())
        assert {r["object"] for r in rows} == {"knife", "hammer", "ball"}

    def test_builtin_rerun_byte_identical(self, tmp_path):
        cfg = ExperimentConfig.from_flat({
            "out": str(tmp_path), "naa.grid_size": "8"})
        runs = [new_run_dir(cfg.out, "naa") for _ in range(2)]
        for run in runs:
            cmd_naa(cfg, run)
        for name in ("knife", "hammer", "ball"):
            assert ((runs[0] / f"{name}.naa").read_bytes()
                    == (runs[1] / f"{name}.naa").read_bytes())
            assert ((runs[0] / f"{name}.naa.meta.json").read_bytes()
                    == (runs[1] / f"{name}.naa.meta.json").read_bytes())

    def test_transport_failures_reported_per_object(self, tmp_path):
        probe = socket.socket()
        probe.bind(("127.0.0.1", 0))
        port = probe.getsockname()[1]
        probe.close()
        cfg = ExperimentConfig.from_flat({
            "out": str(tmp_path), "provider": f"127.0.0.1:{port}"})
        run = new_run_dir(cfg.out, "naa")
        manifest = cmd_naa(cfg, run)  # must not raise
        assert manifest["metrics"]["failures"] == 3
        rows = json.loads((run / "summary.json").read_text())
        assert all(r["status"] == "transport-error" for r in rows)


@pytest.fixture(scope="module")
def base_ckpt(tmp_path_factory):
    """A cheap (untrained) base checkpoint for wiring tests."""
    path = tmp_path_factory.mktemp("base") / "base.ckpt"
    pp = PolicyParams.init("base", MlpSpec(imitation_obs_dim(), 24, (16,)), seed=0)
    from dexgrasp_lab.policy import save_checkpoint
    save_checkpoint(path, pp, config_hash="test")
    return path


def teacher_cfg(tmp_path, base_ckpt, **extra):
    flat = {
        "out": str(tmp_path / "runs"),
        "env.max_steps": "30",
        "teacher.base_checkpoint": str(base_ckpt),
        "teacher.iterations": "1",
        "teacher.episodes_per_iter": "1",
        "teacher.hidden": "16",
        "teacher.eval_episodes": "2",
        "ppo.minibatch_size": "16",
        "ppo.epochs": "1",
    }
    flat.update(extra)
    return ExperimentConfig.from_flat(flat)


class TestTeacherCommand:
    def test_zero_iterations_composed_equals_base(self, tmp_path, base_ckpt):
        cfg = teacher_cfg(tmp_path, base_ckpt, **{"teacher.iterations": "0"})
        run = new_run_dir(cfg.out, "train-teacher")
        cmd_train_teacher(cfg, run)
        residual, _, _, _ = load_checkpoint(run / "teacher.ckpt")
        pp, _, _, _ = load_checkpoint(base_ckpt)
        spec = default_hand_spec()
        ball = make_ball()
        for seed in range(3):
            ref = run_grasp_episode(
                GraspEnv(EnvConfig(max_steps=30), ball.cloud),
                BaseActor(pp, spec), None, seed)
            got = run_grasp_episode(
                GraspEnv(EnvConfig(max_steps=30), ball.cloud),
                BaseActor(pp, spec), residual, seed)
            assert got["steps"] == ref["steps"]
            assert np.array_equal(np.asarray(got["fingertips"]),
                                  np.asarray(ref["fingertips"]))

    def test_trains_and_reports_metrics(self, tmp_path, base_ckpt):
        cfg = teacher_cfg(tmp_path, base_ckpt)
        run = new_run_dir(cfg.out, "train-teacher")
        manifest = cmd_train_teacher(cfg, run)
        assert "success_rate" in manifest["metrics"]
        assert manifest["metrics"]["iterations_run"] == 1
        validate_manifest(run, cfg)


class TestDistillCommand:
    def test_zero_rounds_keeps_init(self, tmp_path, base_ckpt):
        teacher_path = tmp_path / "teacher.ckpt"
        from dexgrasp_lab.policy import encoded_dim, save_checkpoint
        t = PolicyParams.init("teacher_residual",
                              MlpSpec(encoded_dim("teacher"), 24, (16,)), seed=1)
        save_checkpoint(teacher_path, t, config_hash="test")
        cfg = ExperimentConfig.from_flat({
            "out": str(tmp_path / "runs"),
            "env.max_steps": "10",
            "distill.rounds": "0",
            "distill.base_checkpoint": str(base_ckpt),
            "distill.teacher_checkpoint": str(teacher_path),
            "distill.hidden": "16",
            "distill.eval_episodes": "1",
        })
        run = new_run_dir(cfg.out, "distill")
        manifest = cmd_distill(cfg, run)
        student, _, _, _ = load_checkpoint(run / "student.ckpt")
        init = PolicyParams.init("student",
                                 MlpSpec(encoded_dim("student"), 24, (16,)),
                                 seed=cfg.seed,
                                 final_scale=cfg.distill.final_scale,
                                 log_std_init=cfg.distill.log_std_init)
        assert np.array_equal(student.params, init.params)
        assert manifest["metrics"]["dagger_losses"] == []

    def test_one_round_produces_losses(self, tmp_path, base_ckpt):
        from dexgrasp_lab.policy import encoded_dim, save_checkpoint
        teacher_path = tmp_path / "teacher.ckpt"
        t = PolicyParams.init("teacher_residual",
                              MlpSpec(encoded_dim("teacher"), 24, (16,)), seed=1)
        save_checkpoint(teacher_path, t, config_hash="test")
        cfg = ExperimentConfig.from_flat({
            "out": str(tmp_path / "runs"),
            "env.max_steps": "10",
            "distill.rounds": "1",
            "distill.base_checkpoint": str(base_ckpt),
            "distill.teacher_checkpoint": str(teacher_path),
            "distill.hidden": "16",
            "distill.eval_episodes": "1",
            "dagger.episodes_per_round": "1",
            "dagger.epochs": "2",
        })
        run = new_run_dir(cfg.out, "distill")
        manifest = cmd_distill(cfg, run)
        assert len(manifest["metrics"]["dagger_losses"]) == 1
        assert manifest["metrics"]["dataset_size"] == 10


def eval_cfg(tmp_path, mode, episodes=4, **extra):
    flat = {
        "out": str(tmp_path / "runs"),
        "eval.mode": mode,
        "eval.episodes": str(episodes),
    }
    flat.update(extra)
    return ExperimentConfig.from_flat(flat)


class TestEvalCommand:
    def test_scripted_policy_full_success(self, tmp_path):
        cfg = eval_cfg(tmp_path, "scripted")
        run = new_run_dir(cfg.out, "eval")
        manifest = cmd_eval(cfg, run)
        assert manifest["metrics"]["success_rate"] == 1.0

    def test_still_policy_never_succeeds(self, tmp_path):
        cfg = eval_cfg(tmp_path, "still", episodes=2,
                       **{"env.max_steps": "20"})
        run = new_run_dir(cfg.out, "eval")
        manifest = cmd_eval(cfg, run)
        assert manifest["metrics"]["success_rate"] == 0.0

    def test_repeat_eval_byte_identical(self, tmp_path):
        cfg = eval_cfg(tmp_path, "scripted", episodes=2)
        runs = [new_run_dir(cfg.out, "eval") for _ in range(2)]
        for run in runs:
            cmd_eval(cfg, run)
        assert ((runs[0] / "report.json").read_bytes()
                == (runs[1] / "report.json").read_bytes())
        assert ((runs[0] / "traces.jsonl").read_bytes()
                == (runs[1] / "traces.jsonl").read_bytes())

    def test_report_recomputes_from_traces(self, tmp_path):
        cfg = eval_cfg(tmp_path, "scripted", episodes=2)
        eval_run = new_run_dir(cfg.out, "eval")
        cmd_eval(cfg, eval_run)
        report_run = new_run_dir(cfg.out, "report")
        manifest = cmd_report(cfg, report_run, eval_run)
        assert manifest["metrics"]["recomputed_match"] is True
        stored = json.loads((eval_run / "report.json").read_text())
        redone = json.loads((report_run / "report.json").read_text())
        assert redone["success_rate"] == stored["success_rate"]
        assert redone["affordance_scores"] == stored["affordance_scores"]

    def test_tampered_traces_detected(self, tmp_path):
        cfg = eval_cfg(tmp_path, "scripted", episodes=2)
        eval_run = new_run_dir(cfg.out, "eval")
        cmd_eval(cfg, eval_run)
        path = eval_run / "traces.jsonl"
        path.chmod(0o644)
        lines = path.read_text().splitlines()
        doc = json.loads(lines[0])
        doc["success"] = not doc["success"]
        lines[0] = json.dumps(doc, sort_keys=True)
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(HarnessError):
            cmd_report(cfg, new_run_dir(cfg.out, "report"), eval_run)


class TestCli:
    def test_eval_round_trip(self, tmp_path, capsys):
        cfg_path = write_cfg(tmp_path, "\n".join([
            "eval.mode = scripted",
            "eval.episodes = 2",
        ]))
        rc = main(["eval", "--config", str(cfg_path),
                   "--out", str(tmp_path / "runs"), "--seed", "3"])
        assert rc == 0
        out = capsys.readouterr().out
        assert "run directory:" in out
        assert '"success_rate": 1.0' in out

    def test_bad_config_is_json_error_on_stderr(self, tmp_path, capsys):
        cfg_path = write_cfg(tmp_path, "bogus = 1\n")
        rc = main(["eval", "--config", str(cfg_path)])
        assert rc == 1
        err = json.loads(capsys.readouterr().err)
        assert err["error"]["type"] == "ConfigError"

    def test_missing_config_file(self, tmp_path, capsys):
        rc = main(["naa", "--config", str(tmp_path / "nope.cfg")])
        assert rc == 1
        assert "error" in json.loads(capsys.readouterr().err)

    def test_provider_flag_overrides(self, tmp_path, capsys):
        probe = socket.socket()
        probe.bind(("127.0.0.1", 0))
        port = probe.getsockname()[1]
        probe.close()
        cfg_path = write_cfg(tmp_path, "seed = 0\n")
        rc = main(["naa", "--config", str(cfg_path),
                   "--out", str(tmp_path / "runs"),
                   "--provider", f"127.0.0.1:{port}"])
        assert rc == 0  # per-object failures do not abort the run
        out = capsys.readouterr().out
        assert "transport-error" in out
