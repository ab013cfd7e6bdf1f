"""Tests for the re-weighting epipolar adjustment."""

import numpy as np
import pytest
from scipy.spatial.transform import Rotation as ScipyRotation

from fastmap.config import PipelineConfig
from fastmap.epipolar import (AdjustmentState, EpipolarPair, compose_essential,
                              current_residuals, epipolar_loss, irls_refine,
                              point_weight_vectors, precompute_weights,
                              prune_thresholds, quadratic_loss_and_grad)
from fastmap.model import PoseState, project_to_so3
from fastmap.optim import fd_check, skew


def small_scene(n_images=4, n_points=40, seed=0, noise=0.0):
    """Cameras on an arc looking inward plus normalized observations."""
    rng = np.random.default_rng(seed)
    angles = np.linspace(0.0, 1.2, n_images)
    centers = np.stack([2 * np.cos(angles), 2 * np.sin(angles),
                        0.2 * angles], axis=1)
    rotations = []
    for c in centers:
        fwd = -c / np.linalg.norm(c)
        right = np.cross(fwd, [0.0, 0.0, 1.0])
        right /= np.linalg.norm(right)
        down = np.cross(fwd, right)
        rotations.append(np.stack([right, down, fwd]))
    rotations = np.stack(rotations)
    pts = rng.uniform(-0.5, 0.5, size=(n_points, 3))

    pairs = []
    for i in range(n_images):
        for j in range(i + 1, n_images):
            xi = (pts - centers[i]) @ rotations[i].T
            xj = (pts - centers[j]) @ rotations[j].T
            xi = xi / xi[:, 2:3]
            xj = xj / xj[:, 2:3]
            if noise > 0:
                xi = xi + np.concatenate(
                    [rng.normal(scale=noise, size=(n_points, 2)),
                     np.zeros((n_points, 1))], axis=1)
            pairs.append(EpipolarPair(i=i, j=j, cam_i=0, cam_j=0,
                                      x1=xi, x2=xj))
    poses = PoseState(rotations=rotations, centers=centers,
                      registered=np.ones(n_images, dtype=bool))
    return poses, pairs


class TestWeights:
    def test_point_weight_vectors_shape(self):
        w = point_weight_vectors(np.ones((5, 3)), np.ones((5, 3)))
        assert w.shape == (5, 9)

    def test_weight_matrix_psd(self):
        rng = np.random.default_rng(0)
        W = precompute_weights(rng.normal(size=(30, 3)),
                               rng.normal(size=(30, 3)))
        assert np.allclose(W, W.T)
        assert np.min(np.linalg.eigvalsh(W)) > -1e-10

    def test_irls_weighting_downweights_large_residuals(self):
        rng = np.random.default_rng(1)
        x1, x2 = rng.normal(size=(10, 3)), rng.normal(size=(10, 3))
        res = np.full(10, 2.0)
        W = precompute_weights(x1, x2, residuals=res)
        assert np.allclose(W, precompute_weights(x1, x2) / 2.0)

    def test_empty_input(self):
        assert np.array_equal(precompute_weights(np.zeros((0, 3)),
                                                 np.zeros((0, 3))),
                              np.zeros((9, 9)))


class TestComposeEssential:
    def test_epipolar_constraint_holds(self):
        poses, pairs = small_scene()
        p = pairs[0]
        E = compose_essential(poses.rotations[p.i], poses.rotations[p.j],
                              poses.centers[p.i], poses.centers[p.j])
        res = np.einsum("mi,ij,mj->m", p.x2, E, p.x1)
        assert np.max(np.abs(res)) < 1e-10


class TestQuadraticIdentity:
    def test_matches_brute_force(self):
        poses, pairs = small_scene(seed=2, noise=1e-3)
        state = AdjustmentState.from_poses(poses, [0, 1, 2, 3], 1, False)
        quad, Z = epipolar_loss(state, pairs, mode="l2")
        # brute force: (2/Z) sum over points of (x2^T Ehat x1)^2
        total = 0.0
        for p in pairs:
            E = compose_essential(poses.rotations[p.i], poses.rotations[p.j],
                                  poses.centers[p.i], poses.centers[p.j])
            Ehat = E / np.linalg.norm(E)
            total += float(np.sum(np.einsum("mi,ij,mj->m",
                                            p.x2, Ehat, p.x1) ** 2))
        assert quad == pytest.approx(2.0 / Z * total, rel=1e-12)


class TestGradient:
    @pytest.mark.parametrize("refine_focal", [False, True])
    def test_matches_finite_differences(self, refine_focal):
        poses, pairs = small_scene(seed=3, noise=1e-3)
        state = AdjustmentState.from_poses(poses, [0, 1, 2, 3], 2,
                                           refine_focal)
        # evaluate away from the optimum, where gradients are informative
        rng = np.random.default_rng(3)
        packed = state.pack()
        packed += rng.normal(scale=0.02, size=packed.shape)
        Z = sum(int(p.active.sum()) for p in pairs)
        weights = [precompute_weights(p.x1, p.x2) for p in pairs]

        def f(flat):
            state.unpack(flat.copy())
            return quadratic_loss_and_grad(state, pairs, weights, Z)

        assert fd_check(f, packed) < 1e-4


class TestPruning:
    def test_threshold_schedule(self):
        cfg = PipelineConfig(prune_rounds=3, prune_threshold_start=0.01,
                             prune_threshold_end=0.005)
        assert prune_thresholds(cfg) == pytest.approx([0.01, 0.0075, 0.005])

    def test_single_round(self):
        cfg = PipelineConfig(prune_rounds=1)
        assert prune_thresholds(cfg) == [cfg.prune_threshold_start]

    def test_residuals_match_direct_evaluation(self):
        poses, pairs = small_scene(seed=4, noise=1e-3)
        state = AdjustmentState.from_poses(poses, [0, 1, 2, 3], 1, False)
        res = current_residuals(state, pairs)
        p = pairs[0]
        E = compose_essential(poses.rotations[p.i], poses.rotations[p.j],
                              poses.centers[p.i], poses.centers[p.j])
        Ehat = E / np.linalg.norm(E)
        direct = np.abs(np.einsum("mi,ij,mj->m", p.x2, Ehat, p.x1))
        assert np.allclose(res[0], direct, atol=1e-12)


class TestIrlsRefine:
    def test_improves_perturbed_poses(self):
        poses, pairs = small_scene(n_images=5, n_points=60, seed=5)
        rng = np.random.default_rng(5)
        noisy = PoseState(rotations=poses.rotations.copy(),
                          centers=poses.centers.copy(),
                          registered=poses.registered.copy())
        for k in range(1, 5):  # keep one camera fixed as gauge anchor
            rv = rng.normal(scale=0.01, size=3)
            noisy.rotations[k] = ScipyRotation.from_rotvec(rv).as_matrix() @ \
                noisy.rotations[k]
            noisy.centers[k] += rng.normal(scale=0.01, size=3)
        cfg = PipelineConfig(epipolar_lr=1e-3)

        def l1_of(p):
            state = AdjustmentState.from_poses(p, list(range(5)), 1, False)
            fresh = [EpipolarPair(i=q.i, j=q.j, cam_i=0, cam_j=0,
                                  x1=q.x1, x2=q.x2) for q in pairs]
            return epipolar_loss(state, fresh, mode="l1")[0]

        before = l1_of(noisy)
        refined, focal_scale, report = irls_refine(noisy, pairs, cfg,
                                                   n_cameras=1)
        after = l1_of(refined)
        assert after < before
        assert np.allclose(focal_scale, 1.0, atol=0.05)
        assert len(report["l1_history"]) == cfg.prune_rounds

    def test_all_pruned_raises(self):
        poses, pairs = small_scene(seed=6)
        for p in pairs:
            p.x1 = p.x1 + 10.0  # wreck the geometry
            p.terms = None
            p.__post_init__()
        cfg = PipelineConfig(prune_threshold_start=1e-12,
                             prune_threshold_end=1e-13)
        with pytest.raises(ValueError):
            irls_refine(poses, pairs, cfg, n_cameras=1)
