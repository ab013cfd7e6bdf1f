"""Tests for pose metrics: Umeyama, ATE, RRA/RTA/AUC."""

import numpy as np
import pytest
from scipy.spatial.transform import Rotation as ScipyRotation

from fastmap.metrics import (DegenerateAlignmentError, ate, auc_at, evaluate,
                             recall_at, relative_errors, rra_rta_auc,
                             umeyama_align)
from fastmap.model import PoseState, project_to_so3


def random_poses(n, seed=0):
    rng = np.random.default_rng(seed)
    return PoseState(
        rotations=np.stack([project_to_so3(rng.normal(size=(3, 3)))
                            for _ in range(n)]),
        centers=rng.normal(size=(n, 3)),
        registered=np.ones(n, dtype=bool),
    )


def similarity_transformed(poses, scale, R, t):
    return PoseState(
        rotations=np.einsum("nij,kj->nik", poses.rotations, R),
        centers=scale * poses.centers @ R.T + t,
        registered=poses.registered.copy(),
    )


class TestUmeyama:
    def test_exact_recovery(self):
        rng = np.random.default_rng(0)
        src = rng.normal(size=(20, 3))
        R = project_to_so3(rng.normal(size=(3, 3)))
        s, t = 2.5, np.array([1.0, -2.0, 0.5])
        dst = s * src @ R.T + t
        s_est, R_est, t_est = umeyama_align(src, dst)
        assert s_est == pytest.approx(s, abs=1e-10)
        assert np.allclose(R_est, R, atol=1e-10)
        assert np.allclose(t_est, t, atol=1e-10)

    def test_collinear_rejected(self):
        src = np.outer(np.arange(5.0), [1.0, 0.0, 0.0])
        with pytest.raises(DegenerateAlignmentError):
            umeyama_align(src, src)

    def test_too_few_points_rejected(self):
        with pytest.raises(DegenerateAlignmentError):
            umeyama_align(np.zeros((2, 3)), np.zeros((2, 3)))


class TestAte:
    def test_zero_for_similarity_transformed_copy(self):
        gt = random_poses(10)
        R = project_to_so3(np.random.default_rng(1).normal(size=(3, 3)))
        est = similarity_transformed(gt, 3.0, R, np.array([5.0, 0.0, -2.0]))
        assert ate(est, gt) < 1e-10

    def test_scales_with_perturbation(self):
        gt = random_poses(20, seed=2)
        rng = np.random.default_rng(3)
        est = similarity_transformed(gt, 1.0, np.eye(3), np.zeros(3))
        est.centers += rng.normal(scale=0.01, size=est.centers.shape)
        e = ate(est, gt)
        assert 1e-4 < e < 0.1

    def test_requires_three_common(self):
        gt = random_poses(5, seed=4)
        est = random_poses(5, seed=4)
        est.registered[:3] = False
        with pytest.raises(DegenerateAlignmentError):
            ate(est, gt)


class TestRelativeErrors:
    def test_zero_for_gauge_transformed_copy(self):
        gt = random_poses(8, seed=5)
        R = project_to_so3(np.random.default_rng(6).normal(size=(3, 3)))
        est = similarity_transformed(gt, 0.7, R, np.array([1.0, 2.0, 3.0]))
        rot, tr = relative_errors(est, gt)
        assert np.max(rot) < 1e-6
        assert np.max(tr) < 1e-5

    def test_unregistered_estimate_counts_infinite(self):
        gt = random_poses(5, seed=7)
        est = random_poses(5, seed=7)
        est.registered[0] = False
        rot, tr = relative_errors(est, gt)
        assert np.sum(np.isinf(rot)) == 4  # pairs involving image 0

    def test_known_rotation_error(self):
        gt = random_poses(3, seed=8)
        est = PoseState(rotations=gt.rotations.copy(),
                        centers=gt.centers.copy(),
                        registered=gt.registered.copy())
        bump = ScipyRotation.from_rotvec([0.0, 0.0, np.radians(2.0)])
        est.rotations[2] = bump.as_matrix() @ est.rotations[2]
        rot, _ = relative_errors(est, gt)
        # pairs: (0,1) exact, (0,2) and (1,2) off by 2 degrees
        assert sorted(np.round(rot, 6)) == pytest.approx([0.0, 2.0, 2.0],
                                                         abs=1e-5)


class TestSummaries:
    def test_recall_strict_threshold(self):
        assert recall_at([0.5, 1.5, 3.5], 3.0) == pytest.approx(200.0 / 3.0,
                                                                abs=1e-9)
        assert recall_at([3.0], 3.0) == 0.0

    def test_auc_piecewise_exact(self):
        assert auc_at([0.5, 1.5, 2.5], 3.0) == pytest.approx(50.0)

    def test_auc_all_zero_errors(self):
        assert auc_at([0.0, 0.0], 1.0) == pytest.approx(100.0)

    def test_auc_all_above_delta(self):
        assert auc_at([5.0, 9.0], 3.0) == 0.0

    def test_nan_translation_skipped(self):
        rra, rta, auc = rra_rta_auc([0.1, 0.2], [np.nan, 0.3], 1.0)
        assert rta == 100.0
        assert auc > 0.0

    def test_evaluate_keys(self):
        gt = random_poses(6, seed=9)
        out = evaluate(gt, gt)
        assert set(out) == {"ATE", "RRA@1", "RRA@3", "RTA@1", "RTA@3",
                            "AUC@1", "AUC@3"}
        assert out["RRA@1"] == 100.0
        assert out["AUC@3"] == pytest.approx(100.0)
