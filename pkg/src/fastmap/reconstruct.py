"""Sparse triangulation of tracks with outlier filtering.

Each track is triangulated from (at most 50 random) observation pairs
with an inhomogeneous two-view DLT and the results are averaged. The
inhomogeneous formulation is exactly equivariant under rigid transforms
of the poses, unlike the homogeneous SVD variant. Observations with a
large reprojection error are marked outliers, and points with too few
inliers or a too-small maximal triangulation angle are dropped.
"""

import numpy as np

from .model import ScenePoint
from .twoview import DegenerateGeometryError

_MAX_PAIRS_PER_TRACK = 50


def triangulate_pair(R_i, c_i, R_j, c_j, x_i, x_j):
    """Triangulate one normalized homogeneous point pair.

    Poses are world-to-camera, x_cam = R (X - c). Returns (point,
    positive_depth) where the flag is True iff the point lies in front
    of both cameras. Raises DegenerateGeometryError for a zero baseline
    or (near-)parallel rays.
    """
    x_i = np.asarray(x_i, dtype=np.float64)
    x_j = np.asarray(x_j, dtype=np.float64)
    if np.linalg.norm(np.asarray(c_j) - np.asarray(c_i)) < 1e-12:
        raise DegenerateGeometryError("identical camera centers")
    pts, ok, valid = _triangulate_batch(
        np.asarray(R_i)[None], np.asarray(c_i)[None],
        np.asarray(R_j)[None], np.asarray(c_j)[None],
        x_i[None], x_j[None])
    if not valid[0]:
        raise DegenerateGeometryError("parallel rays")
    return pts[0], bool(ok[0])


def _triangulate_batch(Ri, ci, Rj, cj, xi, xj):
    """Vectorized inhomogeneous DLT over K observation pairs.

    Each pair contributes 4 linear equations M X = b; the normal
    equations are solved per pair. Returns (points (K, 3), positive
    depth in both views (K,), well-conditioned (K,))."""
    K = len(xi)
    Pi = np.concatenate([Ri, -(Ri @ ci[:, :, None])], axis=2)  # (K, 3, 4)
    Pj = np.concatenate([Rj, -(Rj @ cj[:, :, None])], axis=2)
    A = np.empty((K, 4, 4))
    A[:, 0] = xi[:, 0, None] * Pi[:, 2] - xi[:, 2, None] * Pi[:, 0]
    A[:, 1] = xi[:, 1, None] * Pi[:, 2] - xi[:, 2, None] * Pi[:, 1]
    A[:, 2] = xj[:, 0, None] * Pj[:, 2] - xj[:, 2, None] * Pj[:, 0]
    A[:, 3] = xj[:, 1, None] * Pj[:, 2] - xj[:, 2, None] * Pj[:, 1]
    M, b = A[:, :, :3], -A[:, :, 3]
    N = np.einsum("kra,krb->kab", M, M)
    rhs = np.einsum("kra,kr->ka", M, b)
    s = np.linalg.svd(N, compute_uv=False)
    valid = s[:, 2] > 1e-10 * np.maximum(s[:, 0], 1e-300)
    pts = np.zeros((K, 3))
    if np.any(valid):
        pts[valid] = np.linalg.solve(N[valid], rhs[valid][:, :, None])[:, :, 0]
    zi = np.einsum("ka,ka->k", pts - ci, Ri[:, 2])
    zj = np.einsum("ka,ka->k", pts - cj, Rj[:, 2])
    ok = (zi > 0) & (zj > 0)
    return pts, ok, valid


def _track_pairs(m, rng):
    """Index pairs (a, b) with a < b over m observations, subsampled to at
    most 50 per track."""
    a, b = np.triu_indices(m, k=1)
    if len(a) > _MAX_PAIRS_PER_TRACK:
        pick = rng.choice(len(a), size=_MAX_PAIRS_PER_TRACK, replace=False)
        pick.sort()
        a, b = a[pick], b[pick]
    return a, b


def _max_pairwise_angle_deg(dirs):
    """Largest angle between any two unit direction vectors."""
    gram = np.clip(dirs @ dirs.T, -1.0, 1.0)
    iu = np.triu_indices(len(dirs), k=1)
    if len(iu[0]) == 0:
        return 0.0
    return float(np.degrees(np.arccos(gram[iu].min())))


def build_points(track_set, poses, norm_keypoints, cfg, focals=None, seed=0):
    """Triangulate every track; returns a list of ScenePoint.

    ``norm_keypoints`` holds per-image (N, 3) normalized homogeneous
    keypoints; ``focals`` (per image, pixels) scales reprojection
    residuals into undistorted-pixel units for the outlier threshold
    (unit focal if omitted). Tracks failing the inlier-count or
    triangulation-angle rules produce no point.
    """
    rng = np.random.default_rng(seed)
    if focals is None:
        focals = np.ones(len(norm_keypoints))
    points = []
    for t_idx, members in enumerate(track_set.tracks):
        obs = [(im, kp) for im, kp in members if poses.registered[im]]
        if len(obs) < 2:
            continue
        imgs = np.array([im for im, _ in obs])
        x = np.stack([norm_keypoints[im][kp] for im, kp in obs])
        if not np.all(np.isfinite(x)):
            keep = np.all(np.isfinite(x), axis=1)
            imgs, x = imgs[keep], x[keep]
            obs = [o for o, k in zip(obs, keep) if k]
            if len(obs) < 2:
                continue
        R = poses.rotations[imgs]
        c = poses.centers[imgs]

        a, b = _track_pairs(len(obs), rng)
        pts, ok, valid = _triangulate_batch(R[a], c[a], R[b], c[b], x[a], x[b])
        keep = ok & valid
        if not np.any(keep):
            continue
        xyz = pts[keep].mean(axis=0)

        # reprojection in undistorted-pixel units; behind-camera = outlier
        cam_pts = np.einsum("kab,kb->ka", R, xyz - c)
        depth = cam_pts[:, 2]
        front = depth > 1e-9
        proj = cam_pts[:, :2] / np.where(front, depth, 1.0)[:, None]
        err = np.linalg.norm(proj - x[:, :2] / x[:, 2:3], axis=1) * focals[imgs]
        inlier = front & (err <= cfg.reproj_outlier_px)
        if inlier.sum() < cfg.triangulation_min_track_inliers:
            continue

        dirs = xyz - c[inlier]
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        if _max_pairwise_angle_deg(dirs) < cfg.triangulation_min_angle_deg:
            continue

        mask = np.zeros(len(members), dtype=bool)
        pos_of = {o: k for k, o in enumerate(members)}
        for o, is_in in zip(obs, inlier):
            mask[pos_of[o]] = bool(is_in)
        points.append(ScenePoint(
            xyz=xyz, track_index=t_idx, inlier_mask=mask,
            error=float(np.mean(err[inlier]))))
    return points
