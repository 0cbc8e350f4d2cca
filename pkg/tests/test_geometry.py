import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dexgrasp_lab.geometry import (
    GeometryError,
    PointCloud,
    Pose,
    farthest_point_sample,
    load_cloud,
    min_distance,
    quat_from_axis_angle,
    save_cloud,
    transform_cloud,
)


def square_cloud():
    return PointCloud(np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0]], dtype=float))


class TestFarthestPointSample:
    def test_unit_square_k2(self):
        # enumerated by hand: the corner opposite the seed maximizes min distance
        out = farthest_point_sample(square_cloud(), 2, seed_index=0)
        assert np.allclose(out.points, [[0, 0, 0], [1, 1, 0]])

    def test_k_equals_n_is_permutation(self):
        cloud = square_cloud()
        out = farthest_point_sample(cloud, 4, seed_index=1)
        got = {tuple(p) for p in out.points}
        want = {tuple(p) for p in cloud.points}
        assert got == want
        assert len(out) == 4

    def test_k1_is_seed(self):
        out = farthest_point_sample(square_cloud(), 1, seed_index=2)
        assert np.allclose(out.points, [[0, 1, 0]])

    def test_bounds(self):
        with pytest.raises(GeometryError):
            farthest_point_sample(square_cloud(), 0)
        with pytest.raises(GeometryError):
            farthest_point_sample(square_cloud(), 5)

    def test_deterministic(self):
        rng = np.random.default_rng(7)
        cloud = PointCloud(rng.normal(size=(40, 3)))
        a = farthest_point_sample(cloud, 10, seed_index=3)
        b = farthest_point_sample(cloud, 10, seed_index=3)
        assert np.array_equal(a.points, b.points)

    def test_labels_preserved(self):
        cloud = PointCloud(square_cloud().points, labels=[5, 6, 7, 8])
        out = farthest_point_sample(cloud, 2, seed_index=0)
        assert list(out.labels) == [5, 8]

    @pytest.mark.parametrize("seed", range(4))
    def test_dispersion_guarantees_brute_force(self, seed):
        # Greedy FPS is exactly optimal for k=2 and a 2-approximation of the
        # best max-min dispersion for larger k; check both against exhaustive
        # enumeration on small clouds.
        rng = np.random.default_rng(seed)
        cloud = PointCloud(rng.uniform(size=(8, 3)))

        def min_pairwise(idx):
            pts = cloud.points[list(idx)]
            d = np.linalg.norm(pts[:, None] - pts[None, :], axis=-1)
            return np.min(d[np.triu_indices(len(idx), 1)])

        for k in (2, 3, 4):
            fps = farthest_point_sample(cloud, k, seed_index=0)
            fps_idx = [int(np.where((cloud.points == p).all(axis=1))[0][0]) for p in fps.points]
            best = max(
                min_pairwise((0,) + combo)
                for combo in itertools.combinations(range(1, 8), k - 1)
            )
            if k == 2:
                assert min_pairwise(fps_idx) >= best - 1e-12
            else:
                assert min_pairwise(fps_idx) >= 0.5 * best - 1e-12


class TestMinDistance:
    def test_membership_zero(self):
        assert min_distance([1, 0, 0], square_cloud()) == 0.0

    def test_345(self):
        assert min_distance([0, 0, 0], PointCloud([[3, 4, 0]])) == pytest.approx(5.0)

    def test_matches_exhaustive(self):
        rng = np.random.default_rng(11)
        cloud = PointCloud(rng.normal(size=(50, 3)))
        p = rng.normal(size=3)
        brute = min(float(np.linalg.norm(q - p)) for q in cloud.points)
        assert min_distance(p, cloud) == pytest.approx(brute, abs=1e-15)

    def test_empty_rejected(self):
        with pytest.raises(GeometryError):
            min_distance([0, 0, 0], PointCloud(np.zeros((0, 3))))


class TestTransformCloud:
    def test_identity(self):
        cloud = square_cloud()
        out = transform_cloud(cloud, Pose.identity())
        assert np.allclose(out.points, cloud.points)

    def test_translation(self):
        out = transform_cloud(PointCloud([[0, 0, 0]]), Pose(position=[1, 0, 0]))
        assert np.allclose(out.points, [[1, 0, 0]])

    def test_rotation_90z(self):
        pose = Pose(quat=quat_from_axis_angle([0, 0, 1], np.pi / 2))
        out = transform_cloud(PointCloud([[1, 0, 0]]), pose)
        assert np.allclose(out.points, [[0, 1, 0]], atol=1e-9)

    def test_distances_preserved(self):
        rng = np.random.default_rng(3)
        cloud = PointCloud(rng.normal(size=(20, 3)))
        pose = Pose(position=rng.normal(size=3), quat=quat_from_axis_angle([1, 2, 3], 0.7))
        out = transform_cloud(cloud, pose)
        d0 = np.linalg.norm(cloud.points[:, None] - cloud.points[None, :], axis=-1)
        d1 = np.linalg.norm(out.points[:, None] - out.points[None, :], axis=-1)
        assert np.allclose(d0, d1, atol=1e-9)

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=30, deadline=None)
    def test_inverse_roundtrip(self, seed):
        rng = np.random.default_rng(seed)
        cloud = PointCloud(rng.normal(size=(10, 3)))
        pose = Pose(
            position=rng.normal(size=3),
            quat=quat_from_axis_angle(rng.normal(size=3) + 1e-3, rng.uniform(-3, 3)),
        )
        back = transform_cloud(transform_cloud(cloud, pose), pose.inverse())
        assert np.allclose(back.points, cloud.points, atol=1e-9)


class TestCloudFile:
    def test_roundtrip(self, tmp_path):
        cloud = PointCloud([[0.1, 0.2, 0.3], [1, 2, 3]], labels=[0, 1])
        path = tmp_path / "c.xyz"
        save_cloud(cloud, path)
        back = load_cloud(path)
        assert np.allclose(back.points, cloud.points)
        assert list(back.labels) == [0, 1]

    def test_comments_and_blank_lines(self, tmp_path):
        path = tmp_path / "c.xyz"
        path.write_text("# header\n\n1 2 3  # inline\n4 5 6\n")
        cloud = load_cloud(path)
        assert len(cloud) == 2
        assert cloud.labels is None

    def test_malformed(self, tmp_path):
        path = tmp_path / "bad.xyz"
        path.write_text("1 2\n")
        with pytest.raises(GeometryError):
            load_cloud(path)
