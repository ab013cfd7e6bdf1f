"""Per-camera division-model distortion estimation.

The model maps distorted to undistorted coordinates as
x_u = x_d / (1 + alpha * r_d^2) on center-normalized coordinates (units
of half the image diagonal, so alpha is resolution-independent). The
parameter is found by hierarchical interval search minimizing the mean
epipolar error of re-fitted fundamental matrices.
"""

import numpy as np

from .model import GeometryClass
from .twoview import DegenerateGeometryError, epipolar_error, estimate_fundamental

_DENOM_EPS = 1e-6


def undistort_normalized(xy, alpha):
    """Apply the division model to center-normalized points (..., 2).

    Points with denominator <= eps come back as NaN (flagged invalid).
    """
    xy = np.asarray(xy, dtype=np.float64)
    r2 = np.sum(xy ** 2, axis=-1, keepdims=True)
    denom = 1.0 + alpha * r2
    denom = np.where(denom > _DENOM_EPS, denom, np.nan)
    return xy / denom


def distort_normalized(xy, alpha):
    """Closed-form inverse of ``undistort_normalized``.

    Solves alpha*r_u*r_d^2 - r_d + r_u = 0 for the branch continuous at
    alpha = 0.
    """
    xy = np.asarray(xy, dtype=np.float64)
    if alpha == 0.0:
        return xy.copy()
    ru = np.linalg.norm(xy, axis=-1, keepdims=True)
    disc = 1.0 - 4.0 * alpha * ru ** 2
    disc = np.where(disc >= 0.0, disc, np.nan)
    with np.errstate(invalid="ignore", divide="ignore"):
        rd = 2.0 * ru / (1.0 + np.sqrt(disc))
        scale = np.where(ru > 1e-12, rd / ru, 1.0)
    return xy * scale


def undistort_pixels(px, camera, alpha=None):
    """Undistort pixel keypoints of a camera; stays in pixel units."""
    alpha = camera.alpha if alpha is None else alpha
    s = camera.half_diagonal
    center = np.array([camera.cx, camera.cy])
    xn = (np.asarray(px, dtype=np.float64) - center) / s
    return undistort_normalized(xn, alpha) * s + center


def _pair_points(match_set, pair):
    kp_i = match_set.keypoints[pair.i][pair.correspondences[:, 0]]
    kp_j = match_set.keypoints[pair.j][pair.correspondences[:, 1]]
    return kp_i, kp_j


def ready_fundamental_pairs(match_set, camera_id=None, known_alphas=None):
    """Fundamental-matrix pairs usable for estimating one camera's alpha.

    A pair is ready if both images belong to the target camera, or one
    does and the other camera's alpha is already known. With
    ``camera_id=None`` (single shared camera) every F-pair qualifies.
    Homography pairs are always ignored at this stage.
    """
    known_alphas = known_alphas or {}
    out = []
    for pair in match_set.pairs:
        if pair.geometry_class is not GeometryClass.HOMOGRAPHY and \
                len(pair.correspondences) >= 8:
            if camera_id is None:
                out.append(pair)
                continue
            cam_i = match_set.images[pair.i].camera_id
            cam_j = match_set.images[pair.j].camera_id
            if cam_i == camera_id and cam_j == camera_id:
                out.append(pair)
            elif cam_i == camera_id and cam_j in known_alphas:
                out.append(pair)
            elif cam_j == camera_id and cam_i in known_alphas:
                out.append(pair)
    return out


def score_alpha(alpha, match_set, pairs, camera_id=None, known_alphas=None):
    """Mean epipolar error over all point pairs after undistorting with
    ``alpha`` and re-fitting each pair's fundamental matrix."""
    known_alphas = known_alphas or {}
    if not pairs:
        raise DegenerateGeometryError("no usable fundamental-matrix pairs")

    def alpha_for(image_id):
        cam = match_set.images[image_id].camera_id
        if camera_id is None or cam == camera_id:
            return alpha
        return known_alphas[cam]

    total, count = 0.0, 0
    for pair in pairs:
        kp_i, kp_j = _pair_points(match_set, pair)
        cam_i = _camera_geom(match_set, pair.i)
        cam_j = _camera_geom(match_set, pair.j)
        u_i = undistort_pixels(kp_i, cam_i, alpha_for(pair.i))
        u_j = undistort_pixels(kp_j, cam_j, alpha_for(pair.j))
        ok = np.all(np.isfinite(u_i), axis=1) & np.all(np.isfinite(u_j), axis=1)
        if ok.sum() < 8:
            continue
        u_i, u_j = u_i[ok], u_j[ok]
        # scale down for conditioning; epipolar residual of the normalized
        # F is what the candidates are compared on
        s = cam_i.half_diagonal
        try:
            F = estimate_fundamental(u_i / s, u_j / s)
        except DegenerateGeometryError:
            continue
        err = epipolar_error(F, u_i / s, u_j / s)
        total += float(err.sum())
        count += len(err)
    if count == 0:
        raise DegenerateGeometryError("no pair could be scored")
    return total / count


def _camera_geom(match_set, image_id):
    # geometry-only stand-in camera (focal unknown at this stage)
    from .model import CameraModel

    im = match_set.images[image_id]
    return CameraModel(focal=1.0, width=im.width, height=im.height, alpha=0.0)


def search_alpha(match_set, pairs, cfg, camera_id=None, known_alphas=None):
    """Hierarchical interval search for the distortion parameter.

    Each level samples the interval uniformly and shrinks it to the
    neighbors of the best candidate for the next level.
    """
    lo, hi = cfg.distortion_min, cfg.distortion_max
    n = cfg.distortion_samples_per_level
    if len(pairs) > cfg.distortion_max_pairs:
        # deterministic evenly-strided subset; the score is an average, so
        # a spread sample of pairs is representative
        idx = np.linspace(0, len(pairs) - 1, cfg.distortion_max_pairs)
        pairs = [pairs[int(k)] for k in idx]
    best_alpha = 0.0
    for _ in range(cfg.distortion_levels):
        candidates = np.linspace(lo, hi, n)
        scores = np.array([
            score_alpha(a, match_set, pairs, camera_id, known_alphas)
            for a in candidates
        ])
        k = int(np.argmin(scores))
        best_alpha = float(candidates[k])
        lo = candidates[max(k - 1, 0)]
        hi = candidates[min(k + 1, n - 1)]
    return best_alpha


def schedule_cameras(match_set, cfg):
    """Estimate alpha per camera in ready-pair order.

    Cameras are processed by descending count of ready pairs; cameras
    that never become ready fall back to alpha = 0 and are flagged.
    Returns (alphas dict, unestimated camera-id list).
    """
    n_cameras = match_set.n_cameras
    if n_cameras == 1:
        pairs = ready_fundamental_pairs(match_set)
        if not pairs:
            return {0: 0.0}, [0]
        return {0: search_alpha(match_set, pairs, cfg, None)}, []

    alphas, unestimated = {}, []
    remaining = set(range(n_cameras))
    while remaining:
        ready = {
            cam: ready_fundamental_pairs(match_set, cam, alphas)
            for cam in remaining
        }
        cam = max(remaining, key=lambda c: (len(ready[c]), -c))
        if not ready[cam]:
            unestimated.extend(sorted(remaining))
            for c in remaining:
                alphas[c] = 0.0
            break
        alphas[cam] = search_alpha(match_set, ready[cam], cfg, cam, alphas)
        remaining.discard(cam)
    return alphas, unestimated
