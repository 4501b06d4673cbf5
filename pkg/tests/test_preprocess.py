import numpy as np
import pytest

from featback.cloud import GuardMode, PointCloud
from featback.poison import PoisonSpec, Trigger, implant_trigger
from featback.preprocess import (
    Pipeline,
    apply_op,
    dropout,
    full_defense_ops,
    jitter,
    pipeline_apply,
    random_dropout,
    random_jitter,
    random_rotation,
    random_scaling,
    random_shift,
    rotation_matrix,
    scaling,
    sor,
    sor_filter,
)
from featback._kernels import knn_mean_dist_numba, knn_mean_dist_numpy


def sor_brute_force(cloud, k, delta):
    """O(n^2) reference: keep points with mean-kNN distance <= mean + delta*std."""
    n = cloud.n
    d = np.empty(n)
    for i in range(n):
        dists = np.sort(np.linalg.norm(cloud.positions - cloud.positions[i], axis=1))
        d[i] = dists[1 : k + 1].mean()  # skip self at distance 0
    keep = np.flatnonzero(d <= d.mean() + delta * d.std())
    if keep.size == 0:
        keep = np.array([int(np.argmin(d))])
    return keep


def grid_cloud():
    axes = np.arange(3.0)
    pos = np.array([[x, y, z] for x in axes for y in axes for z in axes])
    return PointCloud(pos, np.arange(27.0).reshape(-1, 1))


def random_cloud(rng, n, c=1):
    return PointCloud(rng.normal(size=(n, 3)), rng.uniform(size=(n, c)))


class TestSorFilter:
    def test_uniform_grid_untouched(self):
        cloud = grid_cloud()
        d = np.array([
            np.sort(np.linalg.norm(cloud.positions - p, axis=1))[1:4].mean()
            for p in cloud.positions
        ])
        assert d.max() <= d.mean() + 2 * d.std()  # oracle premise
        out = sor_filter(cloud, k=3, delta=2.0)
        assert out.n == 27

    def test_far_outlier_removed(self):
        cloud = grid_cloud()
        pos = np.vstack([cloud.positions, [[100.0, 100.0, 100.0]]])
        feat = np.vstack([cloud.features, [[99.0]]])
        out = sor_filter(PointCloud(pos, feat), k=3, delta=2.0)
        expected = sor_brute_force(PointCloud(pos, feat), 3, 2.0)
        assert out.n == len(expected)
        assert 99.0 not in out.features

    def test_huge_delta_is_identity(self):
        rng = np.random.default_rng(0)
        cloud = random_cloud(rng, 40)
        out = sor_filter(cloud, k=5, delta=1e9)
        assert np.array_equal(out.positions, cloud.positions)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(1)
        for _ in range(15):
            n = int(rng.integers(32, 120))
            cloud = random_cloud(rng, n)
            out = sor_filter(cloud, k=30, delta=2.0)
            keep = sor_brute_force(cloud, 30, 2.0)
            assert np.array_equal(out.positions, cloud.positions[keep])

    def test_requires_enough_points(self):
        rng = np.random.default_rng(2)
        with pytest.raises(ValueError):
            sor_filter(random_cloud(rng, 10), k=10, delta=2.0)

    def test_kernel_paths_agree(self):
        rng = np.random.default_rng(3)
        for _ in range(5):
            pos = rng.normal(size=(int(rng.integers(40, 100)), 3))
            a = knn_mean_dist_numba(pos, 7)
            b = knn_mean_dist_numpy(pos, 7)
            assert np.allclose(a, b, rtol=0, atol=1e-12)


class TestRotation:
    def test_zero_angle_identity(self):
        rng = np.random.default_rng(4)
        cloud = random_cloud(rng, 10)
        out = random_rotation(cloud, 0.0, (True, True, True), np.random.default_rng(0))
        assert np.allclose(out.positions, cloud.positions)

    def test_quarter_turn_about_x(self):
        assert np.allclose(rotation_matrix(np.pi / 2, 0, 0) @ [0, 1, 0], [0, 0, 1], atol=1e-15)

    def test_norm_preserved(self):
        rng = np.random.default_rng(5)
        cloud = random_cloud(rng, 30)
        out = random_rotation(cloud, 360.0, (True, True, True), np.random.default_rng(1))
        assert np.allclose(
            np.linalg.norm(out.positions, axis=1),
            np.linalg.norm(cloud.positions, axis=1),
            atol=1e-9,
        )

    def test_optional_normal_rotation(self):
        rng = np.random.default_rng(6)
        normals = rng.normal(size=(20, 3))
        normals /= np.linalg.norm(normals, axis=1, keepdims=True)
        cloud = PointCloud(rng.normal(size=(20, 3)), normals)
        out = random_rotation(cloud, 180.0, (True, True, True), np.random.default_rng(2),
                              rotate_unit_features=True)
        assert not np.array_equal(out.features, cloud.features)
        assert np.allclose(np.linalg.norm(out.features, axis=1), 1.0)


class TestSimpleOps:
    def test_identity_parameter_choices(self):
        rng = np.random.default_rng(7)
        cloud = random_cloud(rng, 25)
        assert np.allclose(
            random_scaling(cloud, 1.0, 1.0, np.random.default_rng(0)).positions,
            cloud.positions,
        )
        assert random_dropout(cloud, 0.0, np.random.default_rng(0)).n == 25
        assert np.array_equal(
            random_jitter(cloud, 0.0, np.random.default_rng(0)).positions, cloud.positions
        )

    def test_dropout_bounds(self):
        rng = np.random.default_rng(8)
        for _ in range(20):
            cloud = random_cloud(rng, int(rng.integers(2, 50)))
            out = random_dropout(cloud, 0.5, rng)
            assert 1 <= out.n <= cloud.n
            assert cloud.n - out.n <= int(np.ceil(0.5 * cloud.n))

    def test_shift_moves_everything_equally(self):
        rng = np.random.default_rng(9)
        cloud = random_cloud(rng, 12)
        out = random_shift(cloud, 0.1, np.random.default_rng(3))
        deltas = out.positions - cloud.positions
        assert np.allclose(deltas, deltas[0])
        assert np.all(np.abs(deltas) <= 0.1)

    def test_features_never_modified(self):
        # every op must leave surviving feature rows bit-identical
        rng = np.random.default_rng(10)
        ops = full_defense_ops()
        for _ in range(50):
            cloud = random_cloud(rng, int(rng.integers(40, 80)), c=2)
            op = ops[int(rng.integers(len(ops)))]
            out = apply_op(cloud, op, rng)
            for row in out.features:
                assert any(np.array_equal(row, orig) for orig in cloud.features)


class TestPipeline:
    def test_empty_pipeline_identity(self):
        rng = np.random.default_rng(11)
        cloud = random_cloud(rng, 10)
        out = pipeline_apply(cloud, Pipeline())
        assert np.array_equal(out.positions, cloud.positions)

    def test_sor_stage_removes_outlier(self):
        cloud = grid_cloud()
        pos = np.vstack([cloud.positions, [[50.0, 50, 50]]])
        feat = np.vstack([cloud.features, [[123.0]]])
        pipe = Pipeline((sor(3, 2.0),), seed=0)
        out = pipeline_apply(PointCloud(pos, feat), pipe)
        assert 123.0 not in out.features

    def test_deterministic_replay(self):
        rng = np.random.default_rng(12)
        cloud = random_cloud(rng, 60)
        pipe = Pipeline(full_defense_ops(), seed=5)
        a = pipeline_apply(cloud, pipe, sample_index=3, epoch=2)
        b = pipeline_apply(cloud, pipe, sample_index=3, epoch=2)
        assert np.array_equal(a.positions, b.positions)
        assert np.array_equal(a.features, b.features)
        c = pipeline_apply(cloud, pipe, sample_index=3, epoch=3)
        assert not np.array_equal(a.positions, c.positions)

    def test_full_pipeline_preserves_poisoned_features(self):
        rng = np.random.default_rng(13)
        cloud = random_cloud(rng, 64)
        spec = PoisonSpec(
            trigger=Trigger([0.4], [[-1.0, 1.0]]), w=40, guard=GuardMode.clip(0, 1)
        )
        poisoned = implant_trigger(cloud, spec)
        pipe = Pipeline(full_defense_ops(), seed=9)
        out = pipeline_apply(poisoned, pipe, sample_index=0, epoch=0)
        assert out.n >= 1
        for row in out.features:
            assert any(np.array_equal(row, orig) for orig in poisoned.features)

    def test_table_order(self):
        kinds = [op.kind for op in full_defense_ops()]
        assert kinds == ["sor", "rotation", "rotation3d", "scaling", "shift", "dropout", "jitter"]

    def test_config_round_trip(self):
        pipe = Pipeline(full_defense_ops(), seed=42)
        again = Pipeline.from_dict(pipe.to_dict())
        assert again == pipe

    def test_invalid_params_rejected(self):
        with pytest.raises(ValueError):
            sor(k=0)
        with pytest.raises(ValueError):
            dropout(max_frac=1.0)
        with pytest.raises(ValueError):
            jitter(sigma=-0.1)
        with pytest.raises(ValueError):
            scaling(2.0, 1.0)
