"""Pyramid shapes, receptive-cell centers, and gradient flow."""

import numpy as np
import pytest

import im2pc.pyramids as P
from im2pc.autodiff import Tensor
from im2pc.errors import IndexMismatch
from im2pc.geometry import CameraIntrinsics, SphericalConfig, spherical_project_many
from im2pc.sampling import GroupingSpec, PointCloud
from util import finite_diff, rel_err


CFG = SphericalConfig(H=16, W=64, f_up=30.0, f_down=30.0)
K = CameraIntrinsics(fx=40.0, fy=40.0, cx=32.0, cy=16.0)


def make_cloud(rng, n, c=4):
    pos = rng.normal(size=(n, 3)) + np.array([3.0, 0, 0])
    sph = spherical_project_many(pos, CFG)
    return PointCloud(pos, rng.normal(size=(n, c)), spherical=sph)


class TestCellCenters:
    def test_stride_one_is_pixel_centers(self):
        c = P.cell_centers(2, 3, 1)
        np.testing.assert_array_equal(c[0, 0], [0.0, 0.0])
        np.testing.assert_array_equal(c[1, 2], [2.0, 1.0])

    def test_stride_two(self):
        c = P.cell_centers(2, 2, 2)
        # a 2x2 receptive cell over pixels {0,1} is centered at 0.5
        np.testing.assert_array_equal(c[0, 0], [0.5, 0.5])
        np.testing.assert_array_equal(c[1, 1], [2.5, 2.5])

    def test_stride_four(self):
        c = P.cell_centers(1, 2, 4)
        np.testing.assert_array_equal(c[0, 1], [5.5, 1.5])


class TestImagePyramid:
    def test_desk_shapes_and_coords(self):
        rng = np.random.default_rng(0)
        pyr = P.ImagePyramid("img", 3, ((4, 4), (4, 8), (8, 8)),
                             ((2, 2), (2, 2), (2, 2)), rng)
        levels = pyr(Tensor(rng.normal(size=(32, 64, 3))), K, train=False)
        assert [lv.features.shape for lv in levels] == [
            (16, 32, 4), (8, 16, 8), (4, 8, 8)]
        np.testing.assert_array_equal(levels[0].pixel_coords[0, 0], [0.5, 0.5])
        np.testing.assert_array_equal(levels[1].pixel_coords[0, 0], [1.5, 1.5])
        np.testing.assert_array_equal(levels[2].pixel_coords[0, 0], [3.5, 3.5])
        assert levels[2].pixel_coords[-1, -1].tolist() == [59.5, 27.5]
        assert [lv.level for lv in levels] == [1, 2, 3]

    def test_gradient_reaches_input(self):
        rng = np.random.default_rng(1)
        pyr = P.ImagePyramid("img", 1, ((2,),), ((2, 2),), rng)
        x = Tensor(rng.normal(size=(4, 4, 1)), requires_grad=True)
        pyr(x, K, train=False)[0].features.sum().backward()
        assert x.grad is not None and np.abs(x.grad).sum() > 0


class TestSetAbstraction:
    def test_stride_path_counts_and_level(self):
        rng = np.random.default_rng(2)
        cloud = make_cloud(rng, 200)
        sa = P.SetAbstraction("sa", 4, (8, 8), GroupingSpec(4, (3, 5), 5.0, (2, 2)), rng)
        out, centers_idx, idx = sa(cloud, CFG, train=False)
        assert out.level == 1
        assert out.count == centers_idx.size
        assert out.features.shape == (out.count, 8)
        # one center per occupied 2x2 cell: the first point in scan order
        u, v = cloud.spherical[:, 0], cloud.spherical[:, 1]
        cells = {}
        for i in range(cloud.count):
            cells.setdefault((u[i] // 2, v[i] // 2), i)
        assert sorted(centers_idx) == sorted(cells.values())
        assert idx.shape == (out.count, 4)

    def test_fps_path_count(self):
        rng = np.random.default_rng(3)
        cloud = make_cloud(rng, 64)
        sa = P.SetAbstraction("sa", 4, (8,), GroupingSpec(4, (3, 5), 50.0, (2, 2)), rng)
        out, centers_idx, _ = sa(cloud, CFG, train=False, use_fps=True, fps_seed=1)
        assert out.count == 16  # 64 // (2 * 2)

    def test_pooled_feature_is_group_max(self):
        rng = np.random.default_rng(4)
        cloud = make_cloud(rng, 30)
        sa = P.SetAbstraction("sa", 4, (6,), GroupingSpec(5, (33, 129), 1e6, (1, 1)), rng)
        out, centers_idx, idx = sa(cloud, CFG, train=False)
        grouped = P.gather_group(cloud.features, cloud.positions, idx,
                                 cloud.positions[centers_idx])
        manual = sa.mlp(grouped, train=False).data.max(axis=1)
        np.testing.assert_array_equal(out.features.data, manual)


class TestPointPyramid:
    def test_four_levels(self):
        rng = np.random.default_rng(5)
        cloud = make_cloud(rng, 400)
        specs = [GroupingSpec(4, (3, 5), 8.0, (2, 2)) for _ in range(3)]
        specs.append(GroupingSpec(4, (3, 5), 8.0, (1, 2)))
        pyr = P.PointPyramid("pt", 4, ((8,), (8,), (16,), (16,)), specs, rng)
        levels = pyr(cloud, CFG, train=False)
        assert len(levels) == 5
        assert levels[0] is cloud
        assert [lv.level for lv in levels] == [0, 1, 2, 3, 4]
        counts = [lv.count for lv in levels]
        assert all(counts[i] >= counts[i + 1] for i in range(4))
        assert levels[4].features.shape[1] == 16


class TestContextGather:
    def test_shape_and_mismatch(self):
        rng = np.random.default_rng(6)
        cloud = make_cloud(rng, 20)
        cg = P.ContextGather("cg", 4, (8, 8), GroupingSpec(4, (5, 9), 50.0), rng)
        out = cg(cloud.features, cloud, CFG, train=False)
        assert out.shape == (20, 8)
        with pytest.raises(IndexMismatch):
            cg(Tensor(np.zeros((19, 4))), cloud, CFG, train=False)


class TestUpsample:
    def test_shape_and_gradient(self):
        rng = np.random.default_rng(7)
        coarse = make_cloud(rng, 6, c=3)
        fine = make_cloud(rng, 15, c=5)
        up = P.Upsample("up", 3, 5, (8,), 7, GroupingSpec(3, (33, 129), 1e6), rng)
        cv = rng.normal(size=(6, 3))

        def run(arr):
            return up(Tensor(arr), coarse, fine, fine.features, CFG, train=False)

        out = run(cv)
        assert out.shape == (15, 7)
        t = Tensor(cv, requires_grad=True)
        up(t, coarse, fine, fine.features, CFG, train=False).sum().backward()
        num = finite_diff(lambda: float(run(cv).data.sum()), cv)
        assert rel_err(t.grad, num) < 1e-5
