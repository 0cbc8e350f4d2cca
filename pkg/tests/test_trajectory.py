import numpy as np
import pytest

from dexgrasp_lab.geometry import Pose, quat_from_axis_angle
from dexgrasp_lab.hand import default_hand_spec
from dexgrasp_lab.trajectory import (
    ReachGraspParams,
    ReferenceFrame,
    ReferenceTrajectory,
    TrajectoryError,
    load_trajectory,
    resample,
    save_trajectory,
    synthesize_reach_grasp,
)


def two_frame_traj():
    levels = np.array([1, 2, 1])
    kp0 = np.zeros((3, 3))
    kp1 = np.array([[1.0, 0, 0], [0.5, 0, 0], [0.25, 0, 0]])
    return ReferenceTrajectory(
        [
            ReferenceFrame(0.0, Pose.identity(), kp0, levels),
            ReferenceFrame(1.0, Pose(position=[1, 0, 0]), kp1, levels),
        ]
    )


class TestValidation:
    def test_minimal_valid(self, tmp_path):
        path = tmp_path / "t.traj"
        save_trajectory(two_frame_traj(), path)
        back = load_trajectory(path)
        assert len(back.frames) == 2
        assert back.num_keypoints == 3

    def test_nonmonotone_timestamps(self):
        levels = np.array([1])
        with pytest.raises(TrajectoryError, match="frame 2"):
            ReferenceTrajectory(
                [
                    ReferenceFrame(0.0, Pose.identity(), np.zeros((1, 3)), levels),
                    ReferenceFrame(0.0, Pose.identity(), np.zeros((1, 3)), levels),
                ]
            )

    def test_varying_keypoint_count(self):
        with pytest.raises(TrajectoryError, match="keypoint count"):
            ReferenceTrajectory(
                [
                    ReferenceFrame(0.0, Pose.identity(), np.zeros((15, 3)), np.ones(15)),
                    ReferenceFrame(1.0, Pose.identity(), np.zeros((14, 3)), np.ones(14)),
                ]
            )

    def test_malformed_line_diagnostics(self, tmp_path):
        path = tmp_path / "bad.traj"
        path.write_text("frames F=1 levels=1\n0.0 0 0 0 1 0 0 0 1 2\n")
        with pytest.raises(TrajectoryError, match=":2"):
            load_trajectory(path)

    def test_roundtrip_9_sig_digits(self, tmp_path):
        spec = default_hand_spec()
        traj = synthesize_reach_grasp(spec, seed=3)
        p1, p2 = tmp_path / "a.traj", tmp_path / "b.traj"
        save_trajectory(traj, p1)
        save_trajectory(load_trajectory(p1), p2)
        assert p1.read_text() == p2.read_text()


class TestResample:
    def test_native_spacing_unchanged(self):
        traj = two_frame_traj()
        out = resample(traj, dt=1.0)
        assert len(out.frames) == 2
        for a, b in zip(out.frames, traj.frames):
            assert np.allclose(a.keypoints, b.keypoints, atol=1e-12)
            assert np.allclose(a.wrist.position, b.wrist.position, atol=1e-12)

    def test_linear_midpoint(self):
        out = resample(two_frame_traj(), dt=0.5)
        assert out.frames[1].timestamp == pytest.approx(0.5)
        assert np.allclose(out.frames[1].keypoints[0], [0.5, 0, 0])
        assert np.allclose(out.frames[1].wrist.position, [0.5, 0, 0])

    def test_slerp_halfway(self):
        levels = np.array([1])
        q90 = quat_from_axis_angle([0, 0, 1], np.pi / 2)
        traj = ReferenceTrajectory(
            [
                ReferenceFrame(0.0, Pose.identity(), np.zeros((1, 3)), levels),
                ReferenceFrame(1.0, Pose(quat=q90), np.zeros((1, 3)), levels),
            ]
        )
        out = resample(traj, dt=0.5)
        q45 = quat_from_axis_angle([0, 0, 1], np.pi / 4)
        assert np.allclose(out.frames[1].wrist.quat, q45, atol=1e-9)

    def test_endpoints_preserved(self):
        spec = default_hand_spec()
        traj = synthesize_reach_grasp(spec, seed=1)
        out = resample(traj, dt=traj.duration / 10)
        assert np.allclose(out.frames[0].keypoints, traj.frames[0].keypoints, atol=1e-12)
        assert np.allclose(out.frames[-1].keypoints, traj.frames[-1].keypoints, atol=1e-9)


class TestSynthesize:
    def test_passes_validation_and_roundtrip(self, tmp_path):
        spec = default_hand_spec()
        traj = synthesize_reach_grasp(spec, seed=0)
        save_trajectory(traj, tmp_path / "s.traj")
        back = load_trajectory(tmp_path / "s.traj")
        assert back.num_keypoints == 15
        assert back.duration > 0

    def test_minimum_jerk_peak_speed_at_half(self):
        # wrist speed during the approach peaks at t = T/2; the minimum-jerk
        # derivative 30u^2 - 60u^3 + 30u^4 is maximal at u = 1/2
        spec = default_hand_spec()
        params = ReachGraspParams(approach_duration=1.0, close_duration=0.5, frame_rate=100.0)
        traj = synthesize_reach_grasp(spec, seed=2, params=params)
        ts = np.array([f.timestamp for f in traj.frames])
        pos = np.array([f.wrist.position for f in traj.frames])
        sel = ts <= 1.0
        speeds = np.linalg.norm(np.diff(pos[sel], axis=0), axis=1)
        peak_t = ts[sel][np.argmax(speeds)]
        assert abs(peak_t - 0.5) < 0.05

    def test_seeds_give_different_directions(self):
        spec = default_hand_spec()
        a = synthesize_reach_grasp(spec, seed=0)
        b = synthesize_reach_grasp(spec, seed=1)
        assert not np.allclose(a.frames[-1].wrist.position, b.frames[-1].wrist.position)

    def test_determinism(self):
        spec = default_hand_spec()
        a = synthesize_reach_grasp(spec, seed=9)
        b = synthesize_reach_grasp(spec, seed=9)
        for fa, fb in zip(a.frames, b.frames):
            assert np.array_equal(fa.keypoints, fb.keypoints)
