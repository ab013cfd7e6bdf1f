"""Reading matches and reading/writing reconstruction results.

Matches use a line-oriented UTF-8 MatchFile format (documented in the
README); models use the COLMAP text layout (cameras.txt, images.txt,
points3D.txt) with one deviation: the camera parameter after the
principal point is the division-model distortion alpha, not a
polynomial radial coefficient. File ids are 1-based as in COLMAP.
"""

import os

import numpy as np
from scipy.spatial.transform import Rotation as _ScipyRotation

from .model import (CameraModel, GeometryClass, ImageInfo, ImagePairMatches,
                    MatchSet, PoseState, SceneModel, ScenePoint, TrackSet,
                    validate)

MATCHES_MAGIC = "FASTMAP_MATCHES"
MATCHES_VERSION = 1


class ParseError(ValueError):
    pass


def write_matches(match_set, path):
    lines = [f"{MATCHES_MAGIC} {MATCHES_VERSION}"]
    for im in match_set.images:
        lines.append(f"IMAGE {im.image_id} {im.camera_id} {im.width} "
                     f"{im.height} {im.name}")
    for im in match_set.images:
        kps = match_set.keypoints[im.image_id]
        lines.append(f"KEYPOINTS {im.image_id} {len(kps)}")
        for x, y in kps:
            lines.append(f"{float(x)!r} {float(y)!r}")
    for p in match_set.pairs:
        lines.append(f"PAIR {p.i} {p.j} {p.geometry_class.value} "
                     f"{len(p.correspondences)}")
        for ki, kj in p.correspondences:
            lines.append(f"{ki} {kj}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_matches(path):
    """Parse a MatchFile; raises ParseError on malformed or invalid input."""
    with open(path, encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    if not lines:
        raise ParseError("empty matches file")
    head = lines[0].split()
    if len(head) != 2 or head[0] != MATCHES_MAGIC:
        raise ParseError("not a FastMap matches file")
    if int(head[1]) != MATCHES_VERSION:
        raise ParseError(f"unsupported matches version {head[1]}")

    images, keypoints, pairs = [], {}, []
    pos = 1
    try:
        while pos < len(lines):
            tokens = lines[pos].split()
            if tokens[0] == "IMAGE":
                img_id, cam_id, w, h = map(int, tokens[1:5])
                name = " ".join(tokens[5:])
                images.append(ImageInfo(img_id, cam_id, w, h, name))
                pos += 1
            elif tokens[0] == "KEYPOINTS":
                img_id, count = int(tokens[1]), int(tokens[2])
                block = [lines[pos + 1 + k].split() for k in range(count)]
                keypoints[img_id] = np.array(block, dtype=np.float64) \
                    .reshape(count, 2)
                pos += 1 + count
            elif tokens[0] == "PAIR":
                i, j = int(tokens[1]), int(tokens[2])
                gc = GeometryClass(tokens[3])
                count = int(tokens[4])
                block = [lines[pos + 1 + k].split() for k in range(count)]
                corr = np.array(block, dtype=np.int64).reshape(count, 2)
                pairs.append(ImagePairMatches(i, j, gc, corr))
                pos += 1 + count
            else:
                raise ParseError(f"unknown record {tokens[0]!r}")
    except (IndexError, ValueError) as exc:
        if isinstance(exc, ParseError):
            raise
        raise ParseError(f"malformed matches file near line {pos + 1}: {exc}")

    images.sort(key=lambda im: im.image_id)
    kp_list = [keypoints.get(im.image_id, np.zeros((0, 2))) for im in images]
    match_set = MatchSet(images=images, keypoints=kp_list, pairs=pairs)
    diags = validate(match_set)
    if diags:
        raise ParseError("invalid matches file: " + "; ".join(diags))
    return match_set


def _quat_wxyz(R):
    """Scalar-first unit quaternion with qw >= 0."""
    q = _ScipyRotation.from_matrix(R).as_quat()  # (x, y, z, w)
    q = np.array([q[3], q[0], q[1], q[2]])
    if q[0] < 0:
        q = -q
    return q


def _fmt(values):
    return " ".join(repr(float(v)) for v in values)


def write_model(scene, out_dir):
    """Write cameras.txt / images.txt / points3D.txt (COLMAP text layout).

    Only registered images are written; images.txt carries the
    observation line (x y point3D_id) when tracks are available, else an
    empty second line.
    """
    os.makedirs(out_dir, exist_ok=True)

    with open(os.path.join(out_dir, "cameras.txt"), "w", encoding="utf-8") as fh:
        fh.write("# Camera list: CAMERA_ID MODEL WIDTH HEIGHT f cx cy alpha\n"
                 "# alpha is a division-model distortion coefficient on\n"
                 "# half-diagonal-normalized coordinates (deviation from\n"
                 "# COLMAP SIMPLE_RADIAL).\n")
        for cam_id, cam in enumerate(scene.cameras):
            fh.write(f"{cam_id + 1} SIMPLE_RADIAL {cam.width} {cam.height} "
                     f"{_fmt([cam.focal, cam.cx, cam.cy, cam.alpha])}\n")

    # observations per image: keypoint index -> point3D id (1-based)
    obs = {im.image_id: [] for im in scene.images}
    for pt_id, point in enumerate(scene.points):
        members = scene.tracks.tracks[point.track_index] if scene.tracks else []
        for (img, kp), inl in zip(members, point.inlier_mask):
            if inl:
                obs[img].append((kp, pt_id + 1))

    with open(os.path.join(out_dir, "images.txt"), "w", encoding="utf-8") as fh:
        fh.write("# Image list: IMAGE_ID QW QX QY QZ TX TY TZ CAMERA_ID NAME\n"
                 "#   then one line of observations: X Y POINT3D_ID ...\n")
        for im in scene.images:
            if not scene.poses.registered[im.image_id]:
                continue
            R = scene.poses.rotations[im.image_id]
            o = scene.poses.centers[im.image_id]
            q = _quat_wxyz(R)
            t = -R @ o
            fh.write(f"{im.image_id + 1} {_fmt(q)} {_fmt(t)} "
                     f"{im.camera_id + 1} {im.name}\n")
            fh.write(" ".join(f"0 0 {pid}" for _, pid in
                              sorted(obs[im.image_id])) + "\n")

    with open(os.path.join(out_dir, "points3D.txt"), "w", encoding="utf-8") as fh:
        fh.write("# 3D point list: POINT3D_ID X Y Z R G B ERROR "
                 "(IMAGE_ID POINT2D_IDX)...\n")
        for pt_id, point in enumerate(scene.points):
            members = scene.tracks.tracks[point.track_index] \
                if scene.tracks else []
            track = " ".join(
                f"{img + 1} {kp}"
                for (img, kp), inl in zip(members, point.inlier_mask) if inl)
            r, g, b = point.rgb
            fh.write(f"{pt_id + 1} {_fmt(point.xyz)} {r} {g} {b} "
                     f"{point.error!r} {track}\n".rstrip() + "\n")


def _data_lines(path):
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line and not line.startswith("#"):
                yield line


def read_model(model_dir):
    """Inverse of write_model; tolerant of a missing points3D.txt."""
    cam_path = os.path.join(model_dir, "cameras.txt")
    img_path = os.path.join(model_dir, "images.txt")
    if not (os.path.isfile(cam_path) and os.path.isfile(img_path)):
        raise FileNotFoundError(f"not a model directory: {model_dir}")

    cameras = {}
    for line in _data_lines(cam_path):
        tok = line.split()
        cameras[int(tok[0]) - 1] = CameraModel(
            focal=float(tok[4]), width=int(tok[2]), height=int(tok[3]),
            alpha=float(tok[7]))
    cam_list = [cameras[k] for k in sorted(cameras)]

    records = []
    lines = list(_data_lines(img_path))
    for k in range(0, len(lines), 2):
        tok = lines[k].split()
        img_id = int(tok[0]) - 1
        q = np.array(list(map(float, tok[1:5])))
        t = np.array(list(map(float, tok[5:8])))
        cam_id = int(tok[8]) - 1
        name = " ".join(tok[9:])
        R = _ScipyRotation.from_quat([q[1], q[2], q[3], q[0]]).as_matrix()
        records.append((img_id, cam_id, name, R, -R.T @ t))

    n = max(r[0] for r in records) + 1 if records else 0
    poses = PoseState.identity(n)
    poses.registered[:] = False
    images = {}
    for img_id, cam_id, name, R, center in records:
        cam = cam_list[cam_id]
        images[img_id] = ImageInfo(img_id, cam_id, cam.width, cam.height, name)
        poses.rotations[img_id] = R
        poses.centers[img_id] = center
        poses.registered[img_id] = True
    image_list = [images.get(k, ImageInfo(k, 0, cam_list[0].width,
                                          cam_list[0].height, f"missing_{k}"))
                  for k in range(n)]

    points, tracks = [], []
    pts_path = os.path.join(model_dir, "points3D.txt")
    if os.path.isfile(pts_path):
        for line in _data_lines(pts_path):
            tok = line.split()
            xyz = np.array(list(map(float, tok[1:4])))
            rgb = tuple(int(v) for v in tok[4:7])
            err = float(tok[7])
            members = [(int(tok[k]) - 1, int(tok[k + 1]))
                       for k in range(8, len(tok), 2)]
            tracks.append(members)
            points.append(ScenePoint(
                xyz=xyz, track_index=len(tracks) - 1,
                inlier_mask=np.ones(len(members), dtype=bool),
                rgb=rgb, error=err))
    track_set = TrackSet(tracks=tracks) if tracks else None
    return SceneModel(cameras=cam_list, images=image_list, poses=poses,
                      points=points, tracks=track_set)
