"""Tests for sparse triangulation."""

import numpy as np
import pytest

from fastmap import synth
from fastmap.config import PipelineConfig
from fastmap.focal import apply_calibration
from fastmap.model import PoseState, TrackSet
from fastmap.reconstruct import build_points, triangulate_pair
from fastmap.tracks import build_tracks
from fastmap.twoview import DegenerateGeometryError


def arc_cameras(n=4):
    angles = np.linspace(0.0, 1.0, n)
    centers = np.stack([2 * np.cos(angles), 2 * np.sin(angles),
                        0.1 * angles], axis=1)
    rotations = []
    for c in centers:
        fwd = -c / np.linalg.norm(c)
        right = np.cross(fwd, [0.0, 0.0, 1.0])
        right /= np.linalg.norm(right)
        rotations.append(np.stack([right, np.cross(fwd, right), fwd]))
    return np.stack(rotations), centers


class TestTriangulatePair:
    def test_recovers_point(self):
        R, c = arc_cameras(2)
        X = np.array([0.1, -0.2, 0.3])
        x = [(X - c[k]) @ R[k].T for k in range(2)]
        x = [v / v[2] for v in x]
        est, front = triangulate_pair(R[0], c[0], R[1], c[1], x[0], x[1])
        assert front
        assert np.allclose(est, X, atol=1e-10)

    def test_rigid_equivariance(self):
        # transforming the poses transforms the point exactly
        from fastmap.model import project_to_so3
        rng = np.random.default_rng(0)
        R, c = arc_cameras(2)
        X = np.array([0.1, -0.2, 0.3])
        x = [(X - c[k]) @ R[k].T for k in range(2)]
        x = [v / v[2] for v in x]
        Q = project_to_so3(rng.normal(size=(3, 3)))
        s = np.array([3.0, -1.0, 2.0])
        est, _ = triangulate_pair(R[0] @ Q.T, Q @ c[0] + s,
                                  R[1] @ Q.T, Q @ c[1] + s, x[0], x[1])
        assert np.allclose(est, Q @ X + s, atol=1e-9)

    def test_zero_baseline_raises(self):
        R, c = arc_cameras(2)
        with pytest.raises(DegenerateGeometryError):
            triangulate_pair(R[0], c[0], R[1], c[0],
                             np.array([0.0, 0.0, 1.0]),
                             np.array([0.0, 0.0, 1.0]))

    def test_behind_camera_flagged(self):
        # a point behind both inward-looking cameras still has a valid
        # projective observation, but the depth check must flag it
        R, c = arc_cameras(2)
        X = np.array([4.0, 4.1, 0.5])
        assert all((X - c[k]) @ R[k][2] < 0 for k in range(2))
        x = [(X - c[k]) @ R[k].T for k in range(2)]
        x = [v / v[2] for v in x]
        est, front = triangulate_pair(R[0], c[0], R[1], c[1], x[0], x[1])
        assert np.allclose(est, X, atol=1e-8)
        assert not front


class TestBuildPoints:
    def make_scene(self, noise_px=0.0, seed=0):
        spec = synth.SynthSpec(n_images=10, n_points=150, fov_deg=60.0,
                               noise_px=noise_px, seed=seed)
        ms, gt = synth.generate(spec)
        norm_kps, _ = apply_calibration(ms, gt.cameras)
        track_set = build_tracks(ms)
        return ms, gt, norm_kps, track_set

    def test_noise_free_tracks_triangulate_to_gt(self):
        ms, gt, norm_kps, track_set = self.make_scene()
        cfg = PipelineConfig()
        focals = np.array([gt.cameras[0].focal] * ms.n_images)
        points = build_points(track_set, gt.poses, norm_kps, cfg,
                              focals=focals)
        assert len(points) >= 0.95 * len(track_set.tracks)
        gt_by_track = {p.track_index: p.xyz for p in gt.points
                       if gt.tracks.tracks[p.track_index] in track_set.tracks}
        gt_index = {tuple(map(tuple, m)): p.xyz
                    for m, p in zip(gt.tracks.tracks, gt.points)}
        for p in points:
            key = tuple(map(tuple, track_set.tracks[p.track_index]))
            if key in gt_index:
                assert np.allclose(p.xyz, gt_index[key], atol=1e-6)
            assert p.error < 1e-6

    def test_unregistered_images_skipped(self):
        ms, gt, norm_kps, track_set = self.make_scene(seed=1)
        poses = PoseState(rotations=gt.poses.rotations.copy(),
                          centers=gt.poses.centers.copy(),
                          registered=gt.poses.registered.copy())
        poses.registered[5:] = False
        cfg = PipelineConfig()
        points = build_points(track_set, poses, norm_kps, cfg)
        for p in points:
            members = track_set.tracks[p.track_index]
            for (img, _), inl in zip(members, p.inlier_mask):
                if img >= 5:
                    assert not inl

    def test_low_parallax_track_dropped(self):
        # two nearly coincident cameras: triangulation angle below cutoff
        R = np.stack([np.eye(3), np.eye(3)])
        c = np.array([[0.0, 0.0, 0.0], [1e-4, 0.0, 0.0]])
        poses = PoseState(rotations=R, centers=c,
                          registered=np.ones(2, dtype=bool))
        X = np.array([0.0, 0.0, 5.0])
        kps = []
        for k in range(2):
            v = (X - c[k]) @ R[k].T
            kps.append((v / v[2])[None, :])
        track_set = TrackSet(tracks=[[(0, 0), (1, 0)]])
        cfg = PipelineConfig(triangulation_min_track_inliers=2)
        assert build_points(track_set, poses, kps, cfg) == []

    def test_outlier_observation_masked(self):
        ms, gt, norm_kps, track_set = self.make_scene(seed=2)
        # corrupt one observation of some long track
        t_idx = max(range(len(track_set.tracks)),
                    key=lambda t: len(track_set.tracks[t]))
        img, kp = track_set.tracks[t_idx][0]
        # moderate shift: well past the reprojection cut for this focal
        # length, small enough that the averaged point stays near truth
        norm_kps[img][kp, :2] += 0.02
        cfg = PipelineConfig()
        focals = np.array([gt.cameras[0].focal] * ms.n_images)
        points = build_points(track_set, gt.poses, norm_kps, cfg,
                              focals=focals)
        by_track = {p.track_index: p for p in points}
        assert t_idx in by_track
        assert not by_track[t_idx].inlier_mask[0]
        assert by_track[t_idx].inlier_mask[1:].all()
