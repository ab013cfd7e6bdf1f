"""Tests for the shared domain types and MatchSet validation."""

import numpy as np
import pytest

from fastmap.model import (CameraModel, GeometryClass, ImageInfo,
                           ImagePairMatches, MatchSet, PoseState, Rotation3,
                           check_rotation, project_to_so3, validate)


def make_match_set(**kwargs):
    images = [ImageInfo(0, 0, 100, 80, "a.png"),
              ImageInfo(1, 0, 100, 80, "b.png")]
    keypoints = [np.array([[10.0, 10.0], [50.0, 40.0]]),
                 np.array([[12.0, 11.0], [52.0, 41.0]])]
    pairs = [ImagePairMatches(0, 1, GeometryClass.FUNDAMENTAL,
                              np.array([[0, 0], [1, 1]]))]
    defaults = dict(images=images, keypoints=keypoints, pairs=pairs)
    defaults.update(kwargs)
    return MatchSet(**defaults)


class TestCameraModel:
    def test_principal_point_is_image_center(self):
        cam = CameraModel(focal=500.0, width=640, height=480)
        assert cam.cx == 320.0 and cam.cy == 240.0

    def test_half_diagonal(self):
        cam = CameraModel(focal=500.0, width=640, height=480)
        assert cam.half_diagonal == pytest.approx(400.0)

    def test_K_matrix(self):
        cam = CameraModel(focal=500.0, width=640, height=480)
        assert np.allclose(cam.K, [[500, 0, 320], [0, 500, 240], [0, 0, 1]])

    def test_rejects_non_positive_focal(self):
        with pytest.raises(ValueError):
            CameraModel(focal=0.0, width=640, height=480)


class TestRotations:
    def test_check_rotation_accepts_identity(self):
        assert np.allclose(check_rotation(np.eye(3)), np.eye(3))

    def test_check_rotation_rejects_reflection(self):
        with pytest.raises(ValueError):
            check_rotation(np.diag([1.0, 1.0, -1.0]))

    def test_check_rotation_rejects_non_orthonormal(self):
        with pytest.raises(ValueError):
            check_rotation(np.eye(3) * 1.1)

    def test_project_to_so3_fixes_noisy_rotation(self):
        rng = np.random.default_rng(0)
        R = project_to_so3(rng.normal(size=(3, 3)))
        noisy = R + rng.normal(scale=1e-4, size=(3, 3))
        fixed = project_to_so3(noisy)
        check_rotation(fixed)
        assert np.linalg.norm(fixed - R) < 1e-3

    def test_project_to_so3_never_reflects(self):
        M = np.diag([1.0, 1.0, -1.0])
        R = project_to_so3(M)
        assert np.linalg.det(R) > 0

    def test_rotation3_validates(self):
        Rotation3(np.eye(3))
        with pytest.raises(ValueError):
            Rotation3(np.eye(3) * 2.0)


class TestMatchSet:
    def test_counts(self):
        ms = make_match_set()
        assert ms.n_images == 2
        assert ms.n_cameras == 1
        assert set(ms.pair_index()) == {(0, 1)}

    def test_valid_set_has_no_diagnostics(self):
        assert validate(make_match_set()) == []

    def test_flags_out_of_bounds_keypoint(self):
        ms = make_match_set()
        ms.keypoints[0][0, 0] = 1e4
        assert any("out of bounds" in d for d in validate(ms))

    def test_flags_self_pair(self):
        ms = make_match_set()
        ms.pairs.append(ImagePairMatches(1, 1, GeometryClass.FUNDAMENTAL,
                                         np.zeros((0, 2), dtype=np.int64)))
        assert any("self-pair" in d for d in validate(ms))

    def test_flags_reversed_pair(self):
        ms = make_match_set()
        ms.pairs = [ImagePairMatches(1, 0, GeometryClass.FUNDAMENTAL,
                                     np.array([[0, 0]]))]
        assert any("i<j" in d for d in validate(ms))

    def test_flags_dangling_keypoint_index(self):
        ms = make_match_set()
        ms.pairs = [ImagePairMatches(0, 1, GeometryClass.FUNDAMENTAL,
                                     np.array([[0, 7]]))]
        assert any("out of range" in d for d in validate(ms))

    def test_flags_duplicate_pair(self):
        ms = make_match_set()
        ms.pairs.append(ms.pairs[0])
        assert any("duplicate pair" in d for d in validate(ms))


class TestPoseState:
    def test_identity_factory(self):
        p = PoseState.identity(4)
        assert p.rotations.shape == (4, 3, 3)
        assert np.allclose(p.rotations, np.eye(3))
        assert np.all(p.registered)
