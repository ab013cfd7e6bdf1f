"""Tests for division-model distortion and the alpha interval search."""

import numpy as np
import pytest

from fastmap import synth
from fastmap.config import PipelineConfig
from fastmap.distortion import (distort_normalized, ready_fundamental_pairs,
                                schedule_cameras, search_alpha,
                                undistort_normalized, undistort_pixels)
from fastmap.model import CameraModel, GeometryClass


class TestDivisionModel:
    @pytest.mark.parametrize("alpha", [-0.4, -0.1, 0.0, 0.2])
    def test_distort_undistort_roundtrip(self, alpha):
        rng = np.random.default_rng(0)
        xy = rng.uniform(-0.7, 0.7, size=(100, 2))
        back = distort_normalized(undistort_normalized(xy, alpha), alpha)
        assert np.allclose(back, xy, atol=1e-12)

    def test_zero_alpha_is_identity(self):
        xy = np.array([[0.3, -0.2], [0.0, 0.0]])
        assert np.array_equal(undistort_normalized(xy, 0.0), xy)
        assert np.array_equal(distort_normalized(xy, 0.0), xy)

    def test_negative_alpha_moves_points_outward(self):
        # barrel distortion pulls points inward, so undistortion expands
        xy = np.array([[0.5, 0.0]])
        out = undistort_normalized(xy, -0.3)
        assert out[0, 0] > 0.5

    def test_invalid_denominator_flagged_nan(self):
        out = undistort_normalized(np.array([[1.0, 0.0]]), -1.0)
        assert np.all(np.isnan(out))

    def test_undistort_pixels_center_fixed(self):
        cam = CameraModel(focal=500.0, width=640, height=480, alpha=-0.2)
        center = np.array([[320.0, 240.0]])
        assert np.allclose(undistort_pixels(center, cam), center)


class TestAlphaSearch:
    def test_recovers_alpha_on_synthetic_scene(self):
        spec = synth.SynthSpec(n_images=8, n_points=200, fov_deg=70.0,
                               alpha=-0.2, seed=0)
        match_set, _ = synth.generate(spec)
        cfg = PipelineConfig()
        pairs = ready_fundamental_pairs(match_set)
        alpha = search_alpha(match_set, pairs, cfg)
        assert abs(alpha - (-0.2)) < 0.01

    def test_zero_distortion_scene(self):
        spec = synth.SynthSpec(n_images=8, n_points=200, fov_deg=70.0,
                               alpha=0.0, seed=1)
        match_set, _ = synth.generate(spec)
        pairs = ready_fundamental_pairs(match_set)
        alpha = search_alpha(match_set, pairs, PipelineConfig())
        assert abs(alpha) < 0.01


class TestReadyPairs:
    def test_homography_pairs_excluded(self):
        spec = synth.SynthSpec(n_images=8, n_points=200, seed=2,
                               planar_fraction=1.0)
        match_set, _ = synth.generate(spec)
        assert all(p.geometry_class is GeometryClass.HOMOGRAPHY
                   for p in match_set.pairs)
        assert ready_fundamental_pairs(match_set) == []

    def test_multi_camera_scheduling(self):
        spec = synth.SynthSpec(n_images=10, n_points=250, seed=3,
                               n_cameras=2, alpha=(-0.15, 0.1))
        match_set, _ = synth.generate(spec)
        alphas, unestimated = schedule_cameras(match_set, PipelineConfig())
        assert unestimated == []
        assert abs(alphas[0] - (-0.15)) < 0.03
        assert abs(alphas[1] - 0.1) < 0.03
