import math

import numpy as np
import pytest

from dexgrasp_lab.env import Observation, ObjectState, RobotState
from dexgrasp_lab.geometry import PointCloud, Pose
from dexgrasp_lab.hand import JointState
from dexgrasp_lab.mlp import AdamState, MlpSpec
from dexgrasp_lab.policy import (
    LOG_STD_MAX,
    LOG_STD_MIN,
    CheckpointError,
    PolicyError,
    PolicyParams,
    compose_residual,
    config_hash,
    encode_observation,
    encoded_dim,
    gaussian_log_prob,
    load_checkpoint,
    policy_backward,
    policy_forward,
    sample_action,
    save_checkpoint,
    summarize_cloud,
)

SPEC = MlpSpec(input_dim=6, output_dim=4, hidden_dims=(8, 5))


def make_policy(seed=0, role="teacher_residual"):
    return PolicyParams.init(role, SPEC, seed=seed, final_scale=1.0)


class TestPolicyParams:
    def test_length_checked(self):
        with pytest.raises(PolicyError):
            PolicyParams("base", SPEC, np.zeros(3))

    def test_unknown_role(self):
        with pytest.raises(PolicyError):
            PolicyParams.init("critic", SPEC, 0)

    def test_nonfinite_rejected(self):
        pp = make_policy()
        bad = pp.params.copy()
        bad[0] = np.nan
        with pytest.raises(PolicyError):
            PolicyParams(pp.role, pp.spec, bad)

    def test_value_role_has_no_log_std(self):
        vp = PolicyParams.init("value", MlpSpec(6, 1, (8,)), 0)
        with pytest.raises(PolicyError):
            vp.log_std_raw


class TestForward:
    def test_zero_weights_zero_mean(self):
        pp = PolicyParams("base", SPEC, np.zeros(PolicyParams.init("base", SPEC, 0).expected_len))
        mean, log_std, _ = policy_forward(pp, np.ones(6))
        assert np.array_equal(mean, np.zeros(4))
        assert np.array_equal(log_std, np.zeros(4))

    def test_means_inside_unit_interval(self):
        rng = np.random.default_rng(0)
        for seed in range(10):
            pp = make_policy(seed)
            mean, _, _ = policy_forward(pp, 10.0 * rng.normal(size=6))
            assert np.all(mean > -1.0) and np.all(mean < 1.0)

    def test_log_std_clamped(self):
        pp = make_policy()
        pp.params[-4:] = [-100.0, 100.0, 0.0, 1.0]
        _, log_std, _ = policy_forward(pp, np.zeros(6))
        assert list(log_std) == [LOG_STD_MIN, LOG_STD_MAX, 0.0, 1.0]

    def test_deterministic(self):
        pp = make_policy(3)
        x = np.random.default_rng(1).normal(size=6)
        a = policy_forward(pp, x)[0]
        b = policy_forward(pp, x)[0]
        assert np.array_equal(a, b)


class TestBackward:
    def test_matches_finite_differences(self):
        rng = np.random.default_rng(7)
        pp = make_policy(5)
        X = rng.normal(size=(3, 6))
        cm = rng.normal(size=(3, 4))
        cl = rng.normal(size=4)

        def loss(flat):
            q = PolicyParams(pp.role, pp.spec, flat)
            mean, log_std, _ = policy_forward(q, X)
            return float(np.sum(cm * mean) + np.sum(cl * log_std))

        mean, log_std, cache = policy_forward(pp, X)
        grads = policy_backward(pp, cache, cm, cl)
        idx = rng.choice(len(pp.params), size=15, replace=False)
        h = 1e-5
        for i in idx:
            p = pp.params.copy()
            p[i] += h
            hi = loss(p)
            p[i] -= 2 * h
            lo = loss(p)
            assert grads[i] == pytest.approx((hi - lo) / (2 * h), rel=1e-4, abs=1e-8)


class TestGaussianLogProb:
    def test_scalar_oracle(self):
        # manual 1-d density: N(0.5, e^{-1})
        mean, log_std, a = 0.5, -1.0, 0.2
        sd = math.exp(log_std)
        want = -0.5 * ((a - mean) / sd) ** 2 - log_std - 0.5 * math.log(2 * math.pi)
        got = gaussian_log_prob(np.array([mean]), np.array([log_std]), np.array([a]))
        assert got == pytest.approx(want, abs=1e-12)

    def test_sums_over_dims(self):
        rng = np.random.default_rng(0)
        mean = rng.normal(size=5)
        log_std = rng.normal(size=5) * 0.3
        a = rng.normal(size=5)
        total = gaussian_log_prob(mean, log_std, a)
        parts = sum(
            float(gaussian_log_prob(mean[i : i + 1], log_std[i : i + 1], a[i : i + 1]))
            for i in range(5)
        )
        assert total == pytest.approx(parts, abs=1e-12)


class TestSample:
    def test_clipped_and_reproducible(self):
        pp = make_policy(1)
        x = np.zeros(6)
        a1, raw1, lp1 = sample_action(pp, x, np.random.default_rng(9))
        a2, raw2, lp2 = sample_action(pp, x, np.random.default_rng(9))
        assert np.array_equal(raw1, raw2) and lp1 == lp2
        assert np.all(np.abs(a1) <= 1.0)
        assert np.array_equal(a1, np.clip(raw1, -1, 1))


class TestComposeResidual:
    def test_zero_residual_identity(self):
        a = np.array([0.1, -0.9, 0.5])
        out = compose_residual(a, np.zeros(3))
        assert np.array_equal(out, a)

    def test_elementwise_sum(self):
        out = compose_residual(np.array([0.1, 0.2]), np.array([0.05, -0.1]))
        assert np.allclose(out, [0.15, 0.1])

    def test_saturation(self):
        assert compose_residual(np.array([0.9]), np.array([0.3]))[0] == 1.0
        assert compose_residual(np.array([-0.9]), np.array([-0.3]))[0] == -1.0

    def test_commutative(self):
        rng = np.random.default_rng(2)
        a, b = rng.uniform(-1, 1, size=(2, 24))
        assert np.array_equal(compose_residual(a, b), compose_residual(b, a))

    def test_shape_mismatch(self):
        with pytest.raises(PolicyError):
            compose_residual(np.zeros(3), np.zeros(4))


def make_observation(variant, cloud_pts, neg_pts, shift=(0.0, 0.0, 0.0)):
    shift = np.asarray(shift, dtype=float)
    robot = RobotState(
        wrist=Pose(position=np.array([0.0, -0.1, 0.1]) + shift),
        joints=JointState(),
        fingertips=[np.array([0.01 * i, 0.1, 0.1]) + shift for i in range(5)],
    )
    obj = None
    if variant == "teacher":
        obj = ObjectState(pose=Pose(position=np.array([0.0, 0.0, 0.05]) + shift))
    return Observation(
        robot=robot,
        object=obj,
        cloud=PointCloud(np.asarray(cloud_pts) + shift),
        negative=PointCloud(np.asarray(neg_pts) + shift) if len(neg_pts) else PointCloud(np.zeros((0, 3))),
        variant=variant,
    )


CLOUD = [[0.0, 0.0, 0.0], [0.1, 0.0, 0.0], [0.0, 0.2, 0.1]]
NEG = [[0.05, 0.05, 0.05]]


class TestEncodeObservation:
    def test_lengths(self):
        t = encode_observation(make_observation("teacher", CLOUD, NEG), "teacher")
        s = encode_observation(make_observation("student", CLOUD, NEG), "student")
        assert len(t) == encoded_dim("teacher")
        assert len(s) == encoded_dim("student")
        assert len(t) - len(s) == 11

    def test_variant_mismatch(self):
        obs = make_observation("teacher", CLOUD, NEG)
        with pytest.raises(PolicyError):
            encode_observation(obs, "student")

    def test_permutation_invariance(self):
        a = encode_observation(make_observation("student", CLOUD, NEG), "student")
        b = encode_observation(
            make_observation("student", [CLOUD[2], CLOUD[0], CLOUD[1]], NEG), "student"
        )
        assert np.allclose(a, b, atol=1e-12)

    def test_teacher_student_differ_only_in_object_block(self):
        t = encode_observation(make_observation("teacher", CLOUD, NEG), "teacher")
        s = encode_observation(make_observation("student", CLOUD, NEG), "student")
        robot_len = 3 + 4 + 24 + 24 + 15
        assert np.array_equal(t[:robot_len], s[:robot_len])
        assert np.array_equal(t[robot_len + 11 :], s[robot_len:])

    def test_translation_shifts_positions_not_histogram(self):
        base = encode_observation(make_observation("teacher", CLOUD, NEG), "teacher")
        moved = encode_observation(
            make_observation("teacher", CLOUD, NEG, shift=(1.0, -2.0, 3.0)), "teacher"
        )
        # hand-computed featurization of the 3-point cloud
        pts = np.array(CLOUD)
        robot_len = 3 + 4 + 24 + 24 + 15
        cloud_block = base[robot_len + 11 : robot_len + 11 + 41]
        assert np.allclose(cloud_block[0:3], pts.mean(axis=0), atol=1e-12)
        assert np.allclose(cloud_block[3:6], pts.min(axis=0), atol=1e-12)
        assert np.allclose(cloud_block[6:9], pts.max(axis=0), atol=1e-12)
        moved_block = moved[robot_len + 11 : robot_len + 11 + 41]
        assert np.allclose(moved_block[0:3] - cloud_block[0:3], [1.0, -2.0, 3.0])
        # radial histogram is centroid-relative: invariant under translation
        assert np.array_equal(cloud_block[9:], moved_block[9:])
        # wrist position block shifts with the scene
        assert np.allclose(moved[0:3] - base[0:3], [1.0, -2.0, 3.0])

    def test_empty_negative_uses_distance_cap(self):
        obs = make_observation("student", CLOUD, [])
        vec = encode_observation(obs, "student")
        assert np.array_equal(vec[-5:], np.ones(5))

    def test_summarize_empty_cloud_is_zeros(self):
        assert np.array_equal(summarize_cloud(np.zeros((0, 3))), np.zeros(41))


class TestCheckpoint:
    def test_roundtrip(self, tmp_path):
        pp = make_policy(4)
        adam = AdamState(np.random.default_rng(0).normal(size=len(pp.params)),
                         np.abs(np.random.default_rng(1).normal(size=len(pp.params))), t=7)
        rng = np.random.default_rng(123)
        rng.normal(size=10)  # advance
        path = tmp_path / "p.ckpt"
        save_checkpoint(path, pp, adam=adam, rng=rng, config_hash="abc")
        back, adam2, rng2, header = load_checkpoint(path)
        assert back.role == pp.role and back.spec == pp.spec
        assert np.array_equal(back.params, pp.params)
        assert np.array_equal(adam2.m, adam.m) and adam2.t == 7
        assert np.array_equal(rng2.normal(size=5), rng.normal(size=5))
        assert header["config_hash"] == "abc"

    def test_byte_identical_saves(self, tmp_path):
        pp = make_policy(4)
        save_checkpoint(tmp_path / "a.ckpt", pp)
        save_checkpoint(tmp_path / "b.ckpt", pp)
        assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()

    def test_spec_mismatch_fails_loudly(self, tmp_path):
        pp = make_policy(0)
        path = tmp_path / "p.ckpt"
        save_checkpoint(path, pp)
        other = MlpSpec(input_dim=7, output_dim=4, hidden_dims=(8, 5))
        with pytest.raises(CheckpointError):
            load_checkpoint(path, expected_spec=other)

    def test_corrupt_container(self, tmp_path):
        path = tmp_path / "bad.ckpt"
        path.write_bytes(b"not a checkpoint\n\x00\x01")
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_truncated_body(self, tmp_path):
        pp = make_policy(0)
        path = tmp_path / "p.ckpt"
        save_checkpoint(path, pp)
        blob = path.read_bytes()
        path.write_bytes(blob[:-8])
        with pytest.raises(CheckpointError):
            load_checkpoint(path)


class TestConfigHash:
    def test_stable_and_order_independent(self):
        a = config_hash({"x": 1, "y": [1, 2]})
        b = config_hash({"y": [1, 2], "x": 1})
        assert a == b and len(a) == 16

    def test_distinguishes(self):
        assert config_hash({"x": 1}) != config_hash({"x": 2})
