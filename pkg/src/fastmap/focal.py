"""Focal length estimation by singular-value-ratio voting.

A candidate focal is scored per fundamental matrix by how close
K^T F K is to a valid essential matrix (equal leading singular values),
with an exponential validity weight. Candidates are sampled uniformly
in horizontal field of view.
"""

import numpy as np

from .distortion import undistort_pixels
from .model import CameraModel, GeometryClass, MatchSet
from .twoview import DegenerateGeometryError, estimate_fundamental, estimate_homography, to_homogeneous


class FocalUnderdeterminedError(ValueError):
    """No fundamental matrix constrains the focal length."""


def fov_to_focal(fov_deg, width):
    return (width / 2.0) / np.tan(np.radians(fov_deg) / 2.0)


def focal_to_fov(focal, width):
    return np.degrees(2.0 * np.arctan((width / 2.0) / focal))


def essential_validity(F, K1, K2=None, tau=0.01):
    """Validity in (0, 1] of the essential matrix K2^T F K1.

    Equals exp((1 - l1/l2) / tau) for singular values l1 >= l2.
    """
    K2 = K1 if K2 is None else K2
    E = K2.T @ np.asarray(F, dtype=np.float64) @ K1
    if not np.all(np.isfinite(E)):
        raise ValueError("non-finite essential matrix")
    s = np.linalg.svd(E, compute_uv=False)
    if s[1] < 1e-15:
        return 0.0
    return float(np.exp((1.0 - s[0] / s[1]) / tau))


def _validity_batch(F_stack, K1_stack, K2_stack, tau):
    E = np.einsum("nji,njk,nkl->nil", K2_stack, F_stack, K1_stack)
    s = np.linalg.svd(E, compute_uv=False)
    ratio = s[:, 0] / np.maximum(s[:, 1], 1e-300)
    return np.exp((1.0 - ratio) / tau)


def undistorted_fundamentals(match_set, alphas):
    """Refit F for every fundamental pair from undistorted keypoints.

    Returns a list of (pair, F) with F fitted on coordinates scaled by
    each image's half diagonal (scale-consistent across candidates).
    Keys of ``alphas`` are camera ids.
    """
    out = []
    for pair in match_set.pairs:
        if pair.geometry_class is GeometryClass.HOMOGRAPHY:
            continue
        if len(pair.correspondences) < 8:
            continue
        im_i, im_j = match_set.images[pair.i], match_set.images[pair.j]
        cam_i = CameraModel(1.0, im_i.width, im_i.height,
                            alphas.get(im_i.camera_id, 0.0))
        cam_j = CameraModel(1.0, im_j.width, im_j.height,
                            alphas.get(im_j.camera_id, 0.0))
        u_i = undistort_pixels(match_set.keypoints[pair.i][pair.correspondences[:, 0]], cam_i)
        u_j = undistort_pixels(match_set.keypoints[pair.j][pair.correspondences[:, 1]], cam_j)
        ok = np.all(np.isfinite(u_i), axis=1) & np.all(np.isfinite(u_j), axis=1)
        if ok.sum() < 8:
            continue
        try:
            F = estimate_fundamental(u_i[ok], u_j[ok])
        except DegenerateGeometryError:
            continue
        out.append((pair, F))
    return out


def vote_focal(fundamentals, width, height, cfg, known=None, images=None,
               camera_id=None):
    """Vote over FoV candidates; returns (focal_px, fov_deg, votes).

    ``fundamentals`` is a list of (pair, F) in pixel coordinates. For
    cross-camera pairs, ``known`` maps already-estimated camera ids to
    focals and the candidate K enters only the unknown side.
    """
    if not fundamentals:
        raise FocalUnderdeterminedError(
            "focal underdetermined: no fundamental matrices")
    fovs = np.linspace(cfg.fov_min_deg, cfg.fov_max_deg, cfg.focal_samples)
    known = known or {}

    def K_of(focal, w, h):
        return np.array([[focal, 0.0, w / 2.0],
                         [0.0, focal, h / 2.0],
                         [0.0, 0.0, 1.0]])

    F_stack = np.stack([F for _, F in fundamentals])
    votes = np.zeros(len(fovs))
    for c, fov in enumerate(fovs):
        f_cand = fov_to_focal(fov, width)
        K1s, K2s = [], []
        for pair, _ in fundamentals:
            if images is None or camera_id is None:
                K1s.append(K_of(f_cand, width, height))
                K2s.append(K_of(f_cand, width, height))
            else:
                for side, img_id in enumerate((pair.i, pair.j)):
                    im = images[img_id]
                    if im.camera_id == camera_id:
                        K = K_of(fov_to_focal(fov, im.width), im.width, im.height)
                    else:
                        K = K_of(known[im.camera_id], im.width, im.height)
                    (K1s if side == 0 else K2s).append(K)
        v = _validity_batch(F_stack, np.stack(K1s), np.stack(K2s), cfg.tau)
        votes[c] = v.sum()
    best = int(np.argmax(votes))
    return float(fov_to_focal(fovs[best], width)), float(fovs[best]), votes


def _pairs_for_camera(fundamentals, images, camera_id, known):
    out = []
    for pair, F in fundamentals:
        cam_i = images[pair.i].camera_id
        cam_j = images[pair.j].camera_id
        if cam_i == camera_id and cam_j == camera_id:
            out.append((pair, F))
        elif cam_i == camera_id and cam_j in known:
            out.append((pair, F))
        elif cam_j == camera_id and cam_i in known:
            out.append((pair, F))
    return out


def vote_focal_multi(match_set, fundamentals, cfg):
    """Per-camera focal voting with ready-pair scheduling.

    Returns (focals dict, fallback camera-id list). Cameras that never
    become ready get the fallback FoV and are flagged.
    """
    n_cameras = match_set.n_cameras
    images = match_set.images
    dims = {}
    for im in images:
        dims[im.camera_id] = (im.width, im.height)
    if n_cameras == 1:
        w, h = dims[0]
        focal, _, _ = vote_focal(fundamentals, w, h, cfg)
        return {0: focal}, []

    focals, fallback = {}, []
    remaining = set(range(n_cameras))
    while remaining:
        ready = {
            cam: _pairs_for_camera(fundamentals, images, cam, focals)
            for cam in remaining
        }
        cam = max(remaining, key=lambda c: (len(ready[c]), -c))
        w, h = dims[cam]
        if not ready[cam]:
            for c in sorted(remaining):
                wc, hc = dims[c]
                focals[c] = float(fov_to_focal(cfg.fallback_fov_deg, wc))
                fallback.append(c)
            break
        focal, _, _ = vote_focal(ready[cam], w, h, cfg, known=focals,
                                 images=images, camera_id=cam)
        focals[cam] = focal
        remaining.discard(cam)
    return focals, fallback


def apply_calibration(match_set, cameras):
    """Normalized keypoints and refit geometry for every image/pair.

    Returns (normalized keypoints per image (N, 3) homogeneous, list of
    (pair, matrix) with geometry refit in normalized coordinates).
    Fundamental pairs yield essential matrices after this step.
    """
    norm_kps = []
    for im in match_set.images:
        cam = cameras[im.camera_id]
        und = undistort_pixels(match_set.keypoints[im.image_id], cam)
        xy = (und - np.array([cam.cx, cam.cy])) / cam.focal
        norm_kps.append(to_homogeneous(xy))

    geometry = []
    for pair in match_set.pairs:
        x1 = norm_kps[pair.i][pair.correspondences[:, 0]][:, :2]
        x2 = norm_kps[pair.j][pair.correspondences[:, 1]][:, :2]
        ok = np.all(np.isfinite(x1), axis=1) & np.all(np.isfinite(x2), axis=1)
        x1, x2 = x1[ok], x2[ok]
        try:
            if pair.geometry_class is GeometryClass.HOMOGRAPHY:
                mat = estimate_homography(x1, x2) if len(x1) >= 4 else None
            else:
                mat = estimate_fundamental(x1, x2) if len(x1) >= 8 else None
        except DegenerateGeometryError:
            mat = None
        geometry.append((pair, mat))
    return norm_kps, geometry
