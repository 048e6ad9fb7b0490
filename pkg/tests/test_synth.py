"""Synthetic sphere dataset: exact depths, coverage, reproducibility."""

import filecmp

import numpy as np
import pytest

from octfuse.synth import (SphereScene, coverage_focal, fibonacci_directions,
                           make_sphere_dataset, orbit_camera,
                           render_sphere_depth)
from octfuse.volume import backproject, load_dataset, load_ground_truth


class TestDirections:
    def test_unit_length(self):
        d = fibonacci_directions(31)
        assert d.shape == (31, 3)
        assert np.allclose(np.linalg.norm(d, axis=1), 1.0, atol=1e-12)

    def test_distinct_and_spread(self):
        d = fibonacci_directions(31)
        dots = d @ d.T
        np.fill_diagonal(dots, -1.0)
        # no two directions closer than ~20 degrees for 31 points
        assert dots.max() < np.cos(np.deg2rad(20.0))

    def test_covers_both_hemispheres(self):
        d = fibonacci_directions(31)
        assert d[:, 2].min() < -0.9 and d[:, 2].max() > 0.9


class TestSceneValidation:
    def test_radius_must_be_positive(self):
        with pytest.raises(ValueError):
            SphereScene(radius=0.0)

    def test_background_must_enclose_sphere(self):
        with pytest.raises(ValueError):
            SphereScene(radius=0.06, background_radius=0.05)


class TestRenderedDepth:
    def setup_method(self):
        fx = coverage_focal(160.0, 0.4, 0.08)
        self.cam = orbit_camera((1.0, 0.0, 0.0), (0.0, 0.0, 0.0), 0.4,
                                fx, fx, 320, 320)
        self.scene = SphereScene(radius=0.06, background_radius=1.2)

    def test_center_pixel_hits_front_of_sphere(self):
        # odd image size puts the principal point on an exact pixel, whose
        # ray passes through the sphere center; depths are stored float32
        fx = coverage_focal(160.0, 0.4, 0.08)
        cam = orbit_camera((1.0, 0.0, 0.0), (0.0, 0.0, 0.0), 0.4,
                           fx, fx, 321, 321)
        img = render_sphere_depth(cam, self.scene)
        assert img.depth[160, 160] == pytest.approx(0.4 - 0.06, abs=1e-7)

    def test_misses_land_on_background_shell(self):
        img = render_sphere_depth(self.cam, self.scene)
        h, w = img.depth.shape
        corner = img.depth[0, 0]
        assert corner > 0.4  # far behind the target
        x = backproject(0.0, 0.0, corner, self.cam)
        # depth quantized to float32, so the shell radius is met to ~1e-7
        assert abs(np.linalg.norm(x) - 1.2) < 5e-7

    def test_no_background_leaves_misses_empty(self):
        img = render_sphere_depth(self.cam, SphereScene(radius=0.06))
        assert img.depth[0, 0] == 0.0
        cy = int(round(self.cam.cy))
        cx = int(round(self.cam.cx))
        assert img.depth[cy, cx] > 0.0

    def test_every_pixel_lies_on_a_scene_surface(self):
        img = render_sphere_depth(self.cam, self.scene)
        h, w = img.depth.shape
        v, u = np.mgrid[0:h, 0:w]
        z = img.depth
        d = np.stack([(u - self.cam.cx) / self.cam.fx,
                      (v - self.cam.cy) / self.cam.fy,
                      np.ones_like(z)], axis=-1)
        pts = self.cam.center + (d * z[..., None]) @ self.cam.rotation.T
        r = np.linalg.norm(pts, axis=-1)
        err = np.minimum(np.abs(r - 0.06), np.abs(r - 1.2))
        # float32 depth quantization at range ~1.6 is about 1e-7
        assert err[z > 0].max() < 5e-7
        assert (z > 0).all()

    def test_camera_inside_sphere_rejected(self):
        cam = orbit_camera((1.0, 0.0, 0.0), (0.0, 0.0, 0.0), 0.03,
                           200.0, 200.0, 64, 64)
        with pytest.raises(ValueError):
            render_sphere_depth(cam, self.scene)


class TestDataset:
    def test_view_count_and_resolution_validation(self, tmp_path):
        with pytest.raises(ValueError):
            make_sphere_dataset(tmp_path / "a", n_views=0)
        with pytest.raises(ValueError):
            make_sphere_dataset(tmp_path / "b", resolution=0)

    def test_sphere_must_fit_inside_grid(self, tmp_path):
        # 16 cells of 2 mm give a 3.2 cm box; a 6 cm sphere cannot fit
        with pytest.raises(ValueError):
            make_sphere_dataset(tmp_path / "c", n_views=4, resolution=16,
                                voxel_size=0.002)

    def test_dataset_roundtrip(self, tmp_path):
        out = tmp_path / "ds"
        dom, cameras, images, scene = make_sphere_dataset(
            out, n_views=5, width=96, height=96, resolution=32,
            voxel_size=0.008)
        dom2, cams2, imgs2 = load_dataset(out)
        assert dom2.resolution == dom.resolution == 32
        assert dom2.voxel_size == dom.voxel_size
        assert np.array_equal(dom2.origin, dom.origin)
        assert len(cams2) == len(cameras) == 5
        for a, b in zip(cameras, cams2):
            assert np.array_equal(a.rotation, b.rotation)
            assert np.array_equal(a.translation, b.translation)
            assert (a.fx, a.fy, a.cx, a.cy) == (b.fx, b.fy, b.cx, b.cy)
        for a, b in zip(images, imgs2):
            assert np.array_equal(a.depth, b.depth)
        center, radius = load_ground_truth(out / "ground_truth.txt")
        assert np.array_equal(center, np.zeros(3))
        assert radius == scene.radius

    def test_generation_is_deterministic(self, tmp_path):
        a = tmp_path / "run_a"
        b = tmp_path / "run_b"
        for out in (a, b):
            make_sphere_dataset(out, n_views=4, width=64, height=64,
                                resolution=32, voxel_size=0.008)
        names = sorted(p.name for p in a.iterdir())
        assert names == sorted(p.name for p in b.iterdir())
        match, mismatch, errors = filecmp.cmpfiles(a, b, names, shallow=False)
        assert mismatch == [] and errors == []
        assert sorted(match) == names

    def test_default_views_see_the_whole_surface(self, tmp_path):
        dom, cameras, images, scene = make_sphere_dataset(
            tmp_path / "cov", n_views=31, width=96, height=96,
            resolution=32, voxel_size=0.008)
        rng = np.random.default_rng(63)
        d = rng.standard_normal((10000, 3))
        pts = scene.radius * d / np.linalg.norm(d, axis=1, keepdims=True)
        covered = np.zeros(len(pts), dtype=bool)
        for cam, img in zip(cameras, images):
            to_cam = cam.center - pts
            front = (pts * to_cam).sum(axis=1) > 0.0
            local = (pts - cam.center) @ cam.rotation
            z = local[:, 2]
            with np.errstate(divide="ignore", invalid="ignore"):
                u = cam.fx * local[:, 0] / z + cam.cx
                v = cam.fy * local[:, 1] / z + cam.cy
            h, w = img.depth.shape
            inside = (z > 0) & (u >= 0) & (u <= w - 1) & (v >= 0) & (v <= h - 1)
            covered |= front & inside
        assert covered.all()
