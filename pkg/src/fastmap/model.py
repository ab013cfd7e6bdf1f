"""Domain types shared by the whole pipeline.

Image pairs are always stored with i < j; directed quantities
(relative rotations and translations) are defined for that orientation
and reversed on demand. Keypoints stay in pixel coordinates at ingest;
normalized coordinates are attached after the intrinsics stages.
"""

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

ROTATION_TOL = 1e-6


class GeometryClass(Enum):
    FUNDAMENTAL = "F"
    HOMOGRAPHY = "H"


@dataclass(frozen=True)
class ImageInfo:
    image_id: int
    camera_id: int
    width: int
    height: int
    name: str


@dataclass(frozen=True)
class ImagePairMatches:
    i: int
    j: int
    geometry_class: GeometryClass
    correspondences: np.ndarray  # (M, 2) int, keypoint indices in i and j
    synthetic_from_tracks: bool = False


@dataclass
class MatchSet:
    """Pipeline input: images, per-image keypoints, per-pair correspondences."""

    images: list  # list[ImageInfo], index == image_id
    keypoints: list  # list[np.ndarray], per image (N, 2) float64 pixels
    pairs: list  # list[ImagePairMatches]

    @property
    def n_images(self):
        return len(self.images)

    @property
    def n_cameras(self):
        return max(im.camera_id for im in self.images) + 1 if self.images else 0

    def pair_index(self):
        return {(p.i, p.j): p for p in self.pairs}


@dataclass
class CameraModel:
    """Pinhole camera with a one-parameter division distortion model.

    The principal point is fixed at the image center. ``alpha`` acts on
    coordinates normalized by half the image diagonal, so its value is
    resolution-independent.
    """

    focal: float
    width: int
    height: int
    alpha: float = 0.0

    def __post_init__(self):
        if self.focal <= 0:
            raise ValueError("focal must be positive")

    @property
    def cx(self):
        return self.width / 2.0

    @property
    def cy(self):
        return self.height / 2.0

    @property
    def half_diagonal(self):
        return 0.5 * float(np.hypot(self.width, self.height))

    @property
    def K(self):
        return np.array([
            [self.focal, 0.0, self.cx],
            [0.0, self.focal, self.cy],
            [0.0, 0.0, 1.0],
        ])


def check_rotation(R, tol=ROTATION_TOL):
    """Validate that R is a proper rotation; returns R as float64 (3, 3)."""
    R = np.asarray(R, dtype=np.float64)
    if R.shape != (3, 3):
        raise ValueError("rotation must be 3x3")
    err = np.linalg.norm(R.T @ R - np.eye(3))
    if err > tol:
        raise ValueError(f"not orthonormal: |R^T R - I| = {err:.3g}")
    if np.linalg.det(R) < 0:
        raise ValueError("determinant is negative")
    return R


def project_to_so3(R):
    """Nearest rotation matrix in Frobenius norm."""
    U, _, Vt = np.linalg.svd(np.asarray(R, dtype=np.float64))
    S = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    return U @ S @ Vt


@dataclass(frozen=True)
class Rotation3:
    """A validated world-to-camera (or relative) rotation matrix."""

    m: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "m", check_rotation(self.m))


@dataclass
class PoseState:
    """Per-image world-to-camera rotations and camera centers in the world frame."""

    rotations: np.ndarray  # (n, 3, 3)
    centers: np.ndarray  # (n, 3)
    registered: np.ndarray  # (n,) bool

    @classmethod
    def identity(cls, n):
        return cls(
            rotations=np.broadcast_to(np.eye(3), (n, 3, 3)).copy(),
            centers=np.zeros((n, 3)),
            registered=np.ones(n, dtype=bool),
        )


@dataclass
class PairGeometry:
    """Two-view geometry of one image pair after calibration."""

    i: int
    j: int
    rel_rotation: np.ndarray  # (3, 3), frame i -> frame j
    rel_direction_world: np.ndarray | None  # unit 3-vector o^{i->j}, None if unknown
    inlier_pairs: np.ndarray  # (M, 2, 3) normalized homogeneous point pairs
    weight_matrix: np.ndarray | None = None  # (9, 9) PSD
    residuals: np.ndarray | None = None  # (M,) cached |eps_hat|


@dataclass
class TrackSet:
    """Disjoint connected components of the keypoint match graph."""

    tracks: list  # list of list[(image_id, keypoint_index)]
    index: dict = field(default_factory=dict)  # (image_id, kp_idx) -> track idx

    def __post_init__(self):
        if not self.index:
            self.index = {
                obs: t for t, members in enumerate(self.tracks) for obs in members
            }


@dataclass
class ScenePoint:
    xyz: np.ndarray  # (3,)
    track_index: int
    inlier_mask: np.ndarray  # per-observation bool
    rgb: tuple = (128, 128, 128)
    error: float = 0.0


@dataclass
class SceneModel:
    """Final reconstruction: intrinsics, poses and triangulated points."""

    cameras: list  # list[CameraModel], index == camera_id
    images: list  # list[ImageInfo]
    poses: PoseState
    points: list = field(default_factory=list)  # list[ScenePoint]
    tracks: TrackSet | None = None


def validate(match_set):
    """Check MatchSet invariants; returns a list of diagnostic strings."""
    diags = []
    n = match_set.n_images
    for idx, im in enumerate(match_set.images):
        if im.image_id != idx:
            diags.append(f"image {im.image_id}: ids not contiguous (expected {idx})")
        if im.camera_id < 0:
            diags.append(f"image {im.image_id}: negative camera id")
        if im.width <= 0 or im.height <= 0:
            diags.append(f"image {im.image_id}: non-positive dimensions")
    if len(match_set.keypoints) != n:
        diags.append("keypoint table size does not match image count")
        return diags
    for idx, (im, kps) in enumerate(zip(match_set.images, match_set.keypoints)):
        if kps.size == 0:
            continue
        if not np.all(np.isfinite(kps)):
            diags.append(f"image {idx}: non-finite keypoints")
            continue
        bad = (
            (kps[:, 0] < 0)
            | (kps[:, 0] > im.width)
            | (kps[:, 1] < 0)
            | (kps[:, 1] > im.height)
        )
        if np.any(bad):
            diags.append(
                f"image {idx}: {int(bad.sum())} keypoint(s) out of bounds"
            )
    seen = set()
    for p in match_set.pairs:
        if p.i == p.j:
            diags.append(f"pair ({p.i},{p.j}): self-pair")
            continue
        if not (0 <= p.i < n and 0 <= p.j < n):
            diags.append(f"pair ({p.i},{p.j}): dangling image id")
            continue
        if p.i > p.j:
            diags.append(f"pair ({p.i},{p.j}): not stored with i<j")
        if (p.i, p.j) in seen:
            diags.append(f"pair ({p.i},{p.j}): duplicate pair record")
        seen.add((p.i, p.j))
        corr = p.correspondences
        if corr.size:
            if len(np.unique(corr, axis=0)) != len(corr):
                diags.append(f"pair ({p.i},{p.j}): duplicate correspondence")
            if corr[:, 0].max(initial=-1) >= len(match_set.keypoints[p.i]) or \
               corr[:, 1].max(initial=-1) >= len(match_set.keypoints[p.j]):
                diags.append(f"pair ({p.i},{p.j}): keypoint index out of range")
    return diags
