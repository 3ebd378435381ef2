import numpy as np
import pytest

from depthmotion import autodiff as ad
from depthmotion import fileio
from depthmotion import geometry as geo
from depthmotion import synthscene as sc


def flat_wall_config(z=5.0, height=16, width=16):
    intr = geo.Intrinsics(fx=14.0, fy=14.0, cx=(width - 1) / 2, cy=(height - 1) / 2)
    rng = np.random.default_rng(0)
    wall = sc.Plane(np.array([0.0, 0.0, 1.0]), z, sc.Texture.make(rng, 0.05, 0.2))
    return sc.SceneConfig(height=height, width=width, intrinsics=intr,
                          planes=[wall], objects=[],
                          ego_rotvec=np.zeros(3), ego_step=np.zeros(3))


class TestRender:
    def test_frontoparallel_plane_depth_constant(self):
        img, depth, masks = sc.render(flat_wall_config(z=5.0), 1)
        np.testing.assert_allclose(depth, 5.0, atol=1e-12)
        assert masks.shape[0] == 0
        assert img.min() >= 0.0 and img.max() <= 1.0

    def test_tilted_plane_inverse_depth_linear_in_rows(self):
        cfg = flat_wall_config()
        tilted = sc.Plane(np.array([0.0, 0.3, 1.0]), 5.0, cfg.planes[0].texture)
        cfg = sc.SceneConfig(height=cfg.height, width=cfg.width, intrinsics=cfg.intrinsics,
                             planes=[tilted], objects=[],
                             ego_rotvec=np.zeros(3), ego_step=np.zeros(3))
        _, depth, _ = sc.render(cfg, 1)
        # n . (d * K^-1 p) = c  =>  1/d = (ny * (v - cy)/fy + 1) / c: linear in v
        inv = 1.0 / depth[0]
        col = inv[:, 3]
        diffs = np.diff(col)
        np.testing.assert_allclose(diffs, diffs[0], atol=1e-12)
        # and constant along rows
        np.testing.assert_allclose(inv[4], inv[4, 0], atol=1e-12)

    def test_object_mask_exactly_where_object_nearer(self):
        cfg = flat_wall_config(z=8.0)
        rng = np.random.default_rng(1)
        rect = sc.Rect(center=np.array([0.0, 0.0, 4.0]),
                       axis_u=np.array([1.0, 0.0, 0.0]),
                       axis_v=np.array([0.0, 1.0, 0.0]),
                       half_u=0.8, half_v=0.6, velocity=np.zeros(3),
                       texture=sc.Texture.make(rng, 0.2, 0.6))
        cfg = sc.SceneConfig(height=cfg.height, width=cfg.width, intrinsics=cfg.intrinsics,
                             planes=cfg.planes, objects=[rect],
                             ego_rotvec=np.zeros(3), ego_step=np.zeros(3))
        _, depth, masks = sc.render(cfg, 1)
        assert masks.shape == (1, 16, 16)
        assert masks[0].any() and not masks[0].all()
        np.testing.assert_allclose(depth[0][masks[0]], 4.0, atol=1e-12)
        np.testing.assert_allclose(depth[0][~masks[0]], 8.0, atol=1e-12)

    def test_ray_miss_is_error(self):
        cfg = flat_wall_config()
        behind = sc.Plane(np.array([0.0, 0.0, 1.0]), -5.0, cfg.planes[0].texture)
        bad = sc.SceneConfig(height=16, width=16, intrinsics=cfg.intrinsics,
                             planes=[behind], objects=[],
                             ego_rotvec=np.zeros(3), ego_step=np.zeros(3))
        with pytest.raises(ValueError):
            sc.render(bad, 1)

    def test_dims_must_be_divisible_by_8(self):
        cfg = flat_wall_config()
        with pytest.raises(ValueError):
            sc.SceneConfig(height=10, width=16, intrinsics=cfg.intrinsics,
                           planes=cfg.planes, objects=[],
                           ego_rotvec=np.zeros(3), ego_step=np.zeros(3))


class TestMakeSample:
    def test_static_world_three_identical_frames(self):
        sample = sc.make_sample(flat_wall_config())
        np.testing.assert_array_equal(sample.frames[-1], sample.frames[0])
        np.testing.assert_array_equal(sample.frames[1], sample.frames[0])
        np.testing.assert_array_equal(sample.gt_velocity, 0.0)
        assert not sample.dynamic

    def test_determinism(self):
        a = sc.make_sample(sc.random_config(123, dynamic=True))
        b = sc.make_sample(sc.random_config(123, dynamic=True))
        for off in (-1, 0, 1):
            np.testing.assert_array_equal(a.frames[off], b.frames[off])
        np.testing.assert_array_equal(a.gt_depth, b.gt_depth)
        np.testing.assert_array_equal(a.gt_velocity, b.gt_velocity)

    def test_benchmark_layout_and_depth_range(self):
        bench = sc.generate_benchmark(7, n_train=4, n_eval_static=2, n_eval_dynamic=2)
        assert len(bench.train) == 4
        assert len(bench.eval_all) == 4
        for sample in bench.train + bench.eval_all:
            assert sample.gt_depth.min() >= sc.DEPTH_RANGE[0]
            assert sample.gt_depth.max() <= sc.DEPTH_RANGE[1]
        for sample in bench.eval_dynamic:
            assert sample.dynamic and sample.object_mask.any()
        for sample in bench.eval_static:
            assert not sample.dynamic

    def test_object_coverage_fraction(self):
        bench = sc.generate_benchmark(11, n_train=0, n_eval_static=0, n_eval_dynamic=8)
        for sample in bench.eval_dynamic:
            frac = sample.object_mask.mean()
            assert 0.03 <= frac <= 0.35, frac


class TestWarpConsistency:
    """The linchpin oracle: ground-truth warps must reproduce the target."""

    @staticmethod
    def warp_error(sample, offset, use_motion):
        motion = None
        if use_motion:
            motion = ad.constant(sample.gt_residual(offset))
        warped, valid = geo.synthesize_view(
            ad.constant(sample.frames[offset]),
            ad.constant(sample.gt_depth),
            sample.gt_poses[offset],
            sample.intrinsics,
            motion=motion,
        )
        err = np.abs(warped.data - sample.frames[0]).mean(axis=0)
        return err, valid.astype(bool)

    def test_static_scene_reconstruction(self):
        bench = sc.generate_benchmark(31, n_train=0, n_eval_static=6, n_eval_dynamic=0)
        for sample in bench.eval_static:
            for offset in (-1, 1):
                err, valid = self.warp_error(sample, offset, use_motion=False)
                assert valid.mean() > 0.8
                assert err[valid].mean() < 0.02, err[valid].mean()

    def test_dynamic_scene_needs_motion(self):
        bench = sc.generate_benchmark(37, n_train=0, n_eval_static=0, n_eval_dynamic=6)
        for sample in bench.eval_dynamic:
            mask = sample.object_mask
            for offset in (-1, 1):
                err_ego, valid = self.warp_error(sample, offset, use_motion=False)
                err_full, _ = self.warp_error(sample, offset, use_motion=True)
                inside = mask & valid
                assert err_full[inside].mean() < 0.03, err_full[inside].mean()


class TestFileFormats:
    def test_pfm_roundtrip_gray_and_color(self, tmp_path):
        gray = np.random.default_rng(0).uniform(0, 9, (6, 8))
        fileio.write_pfm(tmp_path / "g.pfm", gray)
        back = fileio.read_pfm(tmp_path / "g.pfm")
        np.testing.assert_array_equal(back, gray.astype(np.float32).astype(np.float64))
        color = np.random.default_rng(1).uniform(-2, 2, (3, 6, 8))
        fileio.write_pfm(tmp_path / "c.pfm", color)
        np.testing.assert_array_equal(
            fileio.read_pfm(tmp_path / "c.pfm"),
            color.astype(np.float32).astype(np.float64))

    def test_ppm_roundtrip(self, tmp_path):
        img = np.random.default_rng(2).uniform(0, 1, (3, 5, 7))
        fileio.write_ppm(tmp_path / "i.ppm", img)
        back = fileio.read_ppm(tmp_path / "i.ppm")
        assert back.shape == (3, 5, 7)
        assert np.abs(back - img).max() <= 0.5 / 255 + 1e-9

    def test_pgm_roundtrip(self, tmp_path):
        ids = np.random.default_rng(3).integers(0, 4, (6, 6))
        fileio.write_pgm(tmp_path / "m.pgm", ids)
        np.testing.assert_array_equal(fileio.read_pgm(tmp_path / "m.pgm"), ids)

    def test_scene_export_import(self, tmp_path):
        sample = sc.make_sample(sc.random_config(5, dynamic=True), scene_id=42)
        sc.export_scene(sample, tmp_path / "scene")
        back = sc.load_scene(tmp_path / "scene")
        assert back.scene_id == 42 and back.dynamic
        f32 = lambda a: a.astype(np.float32).astype(np.float64)
        np.testing.assert_array_equal(back.gt_depth, f32(sample.gt_depth))
        np.testing.assert_array_equal(back.frames[0], f32(sample.frames[0]))
        np.testing.assert_array_equal(back.gt_masks, sample.gt_masks)
        for off in (-1, 1):
            np.testing.assert_allclose(back.gt_poses[off].rotation.data,
                                       sample.gt_poses[off].rotation.data, atol=1e-16)

    def test_benchmark_export_import(self, tmp_path):
        bench = sc.generate_benchmark(13, n_train=2, n_eval_static=1, n_eval_dynamic=1)
        sc.export_benchmark(bench, tmp_path / "bench")
        back = sc.load_benchmark(tmp_path / "bench")
        assert len(back.train) == 2
        assert len(back.eval_static) == 1 and len(back.eval_dynamic) == 1
        np.testing.assert_array_equal(
            back.train[0].frames[0],
            bench.train[0].frames[0].astype(np.float32).astype(np.float64))
