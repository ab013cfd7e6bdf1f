"""Synthetic scene and match generation.

Places cameras per a layout, projects a random point cloud through the
pinhole + division-distortion model, and emits visibility-based pair
correspondences with ground-truth geometry classes. All randomness comes
from a single seeded generator, so outputs are deterministic per seed.
"""

from dataclasses import dataclass, field

import numpy as np

from .distortion import distort_normalized
from .model import (
    CameraModel,
    GeometryClass,
    ImageInfo,
    ImagePairMatches,
    MatchSet,
    PoseState,
    SceneModel,
    ScenePoint,
    TrackSet,
)


@dataclass
class SynthSpec:
    n_images: int = 30
    n_points: int = 500
    layout: str = "ring"  # ring | grid | random
    fov_deg: object = 60.0  # float or per-camera sequence
    alpha: object = 0.0  # float or per-camera sequence
    noise_px: float = 0.0
    outlier_frac: float = 0.0
    seed: int = 0
    width: int = 640
    height: int = 480
    n_cameras: int = 1
    camera_assignment: str = "interleave"  # interleave | split
    planar_fraction: float = 0.0
    min_pair_corrs: int = 16
    min_visible_per_image: int = 50


def _per_camera(value, n_cameras):
    if np.isscalar(value):
        return [float(value)] * n_cameras
    values = [float(v) for v in value]
    if len(values) != n_cameras:
        raise ValueError("per-camera parameter length mismatch")
    return values


def _look_at(position, target, up=(0.0, 0.0, 1.0)):
    """World-to-camera rotation with +z toward the target."""
    forward = np.asarray(target, dtype=np.float64) - position
    forward = forward / np.linalg.norm(forward)
    up = np.asarray(up, dtype=np.float64)
    right = np.cross(forward, up)
    if np.linalg.norm(right) < 1e-8:
        right = np.cross(forward, np.array([0.0, 1.0, 0.0]))
    right = right / np.linalg.norm(right)
    down = np.cross(forward, right)
    return np.stack([right, down, forward], axis=0)


def _camera_centers(spec, rng):
    n = spec.n_images
    if spec.layout == "ring":
        angles = np.linspace(0.0, 2.0 * np.pi, n, endpoint=False)
        radius = 2.0
        centers = np.stack([
            radius * np.cos(angles),
            radius * np.sin(angles),
            0.3 * np.sin(3.0 * angles),
        ], axis=1)
        targets = np.zeros((n, 3))
    elif spec.layout == "grid":
        side = int(np.ceil(np.sqrt(n)))
        ii, jj = np.meshgrid(np.arange(side), np.arange(side), indexing="ij")
        xy = np.stack([ii.ravel(), jj.ravel()], axis=1)[:n].astype(np.float64)
        xy = (xy - xy.mean(axis=0)) * 0.8
        centers = np.concatenate([xy, np.full((n, 1), 2.5)], axis=1)
        targets = centers * np.array([1.0, 1.0, 0.0])
        targets = targets + rng.normal(scale=0.05, size=(n, 3))
    elif spec.layout == "random":
        directions = rng.normal(size=(n, 3))
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)
        centers = directions * rng.uniform(1.8, 2.4, size=(n, 1))
        targets = rng.normal(scale=0.1, size=(n, 3))
    else:
        raise ValueError(f"unknown layout {spec.layout!r}")
    return centers, targets


def _point_cloud(spec, rng):
    n = spec.n_points
    n_planar = int(round(spec.planar_fraction * n))
    pts = []
    if n - n_planar > 0:
        free = rng.normal(size=(n - n_planar, 3))
        free /= np.maximum(np.linalg.norm(free, axis=1, keepdims=True), 1e-9)
        free *= rng.uniform(0.0, 0.9, size=(n - n_planar, 1)) ** (1.0 / 3.0)
        pts.append(free)
    if n_planar > 0:
        xy = rng.uniform(-0.9, 0.9, size=(n_planar, 2))
        pts.append(np.concatenate([xy, np.full((n_planar, 1), -0.2)], axis=1))
    planar_mask = np.zeros(n, dtype=bool)
    planar_mask[n - n_planar:] = True
    if spec.layout == "grid":
        cloud = np.concatenate(pts, axis=0)
        cloud[:, 2] = np.abs(cloud[:, 2]) * 0.3  # keep points below the rig
        return cloud, planar_mask
    return np.concatenate(pts, axis=0), planar_mask


def generate(spec):
    """Build a (MatchSet, ground-truth SceneModel) pair from a SynthSpec."""
    rng = np.random.default_rng(spec.seed)
    fovs = _per_camera(spec.fov_deg, spec.n_cameras)
    alphas = _per_camera(spec.alpha, spec.n_cameras)
    cameras = []
    for fov, alpha in zip(fovs, alphas):
        focal = (spec.width / 2.0) / np.tan(np.radians(fov) / 2.0)
        cameras.append(CameraModel(focal=focal, width=spec.width,
                                   height=spec.height, alpha=alpha))

    if spec.camera_assignment == "interleave":
        cam_of_image = [i % spec.n_cameras for i in range(spec.n_images)]
    elif spec.camera_assignment == "split":
        per = int(np.ceil(spec.n_images / spec.n_cameras))
        cam_of_image = [min(i // per, spec.n_cameras - 1)
                        for i in range(spec.n_images)]
    else:
        raise ValueError("unknown camera_assignment")

    centers, targets = _camera_centers(spec, rng)
    rotations = np.stack([_look_at(c, t) for c, t in zip(centers, targets)])
    points, planar_mask = _point_cloud(spec, rng)

    images, keypoints, visibility = [], [], []
    for i in range(spec.n_images):
        cam = cameras[cam_of_image[i]]
        images.append(ImageInfo(image_id=i, camera_id=cam_of_image[i],
                                width=spec.width, height=spec.height,
                                name=f"synth_{i:05d}.png"))
        x_cam = (points - centers[i]) @ rotations[i].T
        in_front = x_cam[:, 2] > 0.2
        z = np.where(in_front, x_cam[:, 2], 1.0)
        u = cam.focal * x_cam[:, 0] / z + cam.cx
        v = cam.focal * x_cam[:, 1] / z + cam.cy
        s = cam.half_diagonal
        xn = np.stack([(u - cam.cx) / s, (v - cam.cy) / s], axis=1)
        xd = distort_normalized(xn, cam.alpha)
        px = np.stack([cam.cx + s * xd[:, 0], cam.cy + s * xd[:, 1]], axis=1)
        if spec.noise_px > 0:
            px = px + rng.normal(scale=spec.noise_px, size=px.shape)
        margin = 1.0
        visible = (
            in_front
            & np.all(np.isfinite(px), axis=1)
            & (px[:, 0] >= margin) & (px[:, 0] <= spec.width - margin)
            & (px[:, 1] >= margin) & (px[:, 1] <= spec.height - margin)
        )
        idx = np.flatnonzero(visible)
        if len(idx) < spec.min_visible_per_image:
            raise ValueError(
                f"image {i} sees only {len(idx)} points; scene under-connected")
        keypoints.append(px[idx].copy())
        visibility.append({int(p): k for k, p in enumerate(idx)})

    pairs = []
    for i in range(spec.n_images):
        for j in range(i + 1, spec.n_images):
            shared = sorted(set(visibility[i]) & set(visibility[j]))
            if len(shared) < spec.min_pair_corrs:
                continue
            corr = np.array([[visibility[i][p], visibility[j][p]]
                             for p in shared], dtype=np.int64)
            if spec.outlier_frac > 0 and len(corr) >= 4:
                n_out = int(round(spec.outlier_frac * len(corr)))
                if n_out >= 2:
                    sel = rng.choice(len(corr), size=n_out, replace=False)
                    # swap destination keypoints: repeated-structure style outliers
                    corr[sel, 1] = corr[np.roll(sel, 1), 1]
            planar_share = planar_mask[shared].mean() if len(shared) else 0.0
            geom = (GeometryClass.HOMOGRAPHY if planar_share > 0.9
                    else GeometryClass.FUNDAMENTAL)
            pairs.append(ImagePairMatches(i=i, j=j, geometry_class=geom,
                                          correspondences=corr))
    if not pairs:
        raise ValueError("scene yields no usable image pairs")

    match_set = MatchSet(images=images, keypoints=keypoints, pairs=pairs)

    tracks = []
    for p in range(len(points)):
        members = [(i, visibility[i][p]) for i in range(spec.n_images)
                   if p in visibility[i]]
        if len(members) >= 2:
            tracks.append(members)
    track_set = TrackSet(tracks=tracks)
    scene_points = []
    for t, members in enumerate(tracks):
        # recover the originating 3D point from any member observation
        pid = None
        i0, k0 = members[0]
        for p, k in visibility[i0].items():
            if k == k0:
                pid = p
                break
        scene_points.append(ScenePoint(
            xyz=points[pid].copy(), track_index=t,
            inlier_mask=np.ones(len(members), dtype=bool)))
    gt = SceneModel(
        cameras=cameras,
        images=images,
        poses=PoseState(rotations=rotations, centers=centers,
                        registered=np.ones(spec.n_images, dtype=bool)),
        points=scene_points,
        tracks=track_set,
    )
    return match_set, gt
