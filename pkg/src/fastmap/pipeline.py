"""End-to-end pipeline driver.

Stage order: distortion -> focal -> calibrate -> decompose -> filter ->
rotation init -> rotation refine -> tracks + completion -> relative
translation -> global translation (multi-init) -> epipolar adjustment ->
triangulation. Each stage's wall time and key numbers land in the run
report.
"""

import time

import numpy as np

from . import config as config_mod
from . import distortion, focal, rotation, tracks, translation
from .epipolar import EpipolarPair, irls_refine
from .model import (CameraModel, GeometryClass, ImagePairMatches, MatchSet,
                    PoseState, SceneModel)
from .reconstruct import build_points
from .twoview import (DegenerateGeometryError, decompose_essential,
                      decompose_homography, epipolar_error)

_INLIER_RESIDUAL = 0.01  # on Frobenius-normalized two-view geometry


class StageError(RuntimeError):
    def __init__(self, stage, cause):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause


class _Report:
    def __init__(self):
        self.stages = []  # (name, seconds, dict of numbers)
        self._t0 = None
        self._name = None

    def start(self, name):
        self._name, self._t0 = name, time.perf_counter()

    def finish(self, **numbers):
        self.stages.append((self._name, time.perf_counter() - self._t0,
                            numbers))

    def text(self):
        lines = ["stage                          seconds  details"]
        total = 0.0
        for name, secs, numbers in self.stages:
            total += secs
            detail = " ".join(f"{k}={_fmt_num(v)}" for k, v in numbers.items())
            lines.append(f"{name:<30s} {secs:8.3f}  {detail}")
        lines.append(f"{'total':<30s} {total:8.3f}")
        return "\n".join(lines) + "\n"


def _fmt_num(v):
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def _pair_inliers(pair, mat, geometry_class, norm_kps):
    """Boolean inlier mask for a pair under its fitted geometry."""
    x1 = norm_kps[pair.i][pair.correspondences[:, 0]]
    x2 = norm_kps[pair.j][pair.correspondences[:, 1]]
    finite = np.all(np.isfinite(x1), axis=1) & np.all(np.isfinite(x2), axis=1)
    if mat is None:
        return x1, x2, finite & False
    if geometry_class is GeometryClass.HOMOGRAPHY:
        proj = x1 @ mat.T
        with np.errstate(invalid="ignore", divide="ignore"):
            proj = proj / proj[:, 2:3]
        err = np.linalg.norm(np.nan_to_num(proj - x2, nan=np.inf)[:, :2],
                             axis=1)
    else:
        err = epipolar_error(mat, np.nan_to_num(x1), np.nan_to_num(x2))
    # adaptive cut: 5x the median residual tracks the actual noise level,
    # clamped so clean pairs keep everything and noisy pairs stay sane
    cut = min(_INLIER_RESIDUAL, max(5.0 * float(np.median(err[finite])),
                                    1e-4)) if finite.any() else 0.0
    return x1, x2, finite & (err < cut)


def run_pipeline(match_set, cfg=None, seed=0):
    """Run the full reconstruction; returns (SceneModel, report text)."""
    cfg = cfg or config_mod.PipelineConfig()
    report = _Report()

    # ---- distortion -------------------------------------------------
    report.start("distortion.search")
    try:
        if cfg.estimate_distortion:
            alphas, alpha_fallback = distortion.schedule_cameras(match_set, cfg)
        else:
            alphas = {c: 0.0 for c in range(match_set.n_cameras)}
            alpha_fallback = []
    except Exception as exc:
        raise StageError("distortion.search", exc)
    report.finish(cameras=len(alphas), fallback=len(alpha_fallback))

    # ---- focal voting -----------------------------------------------
    report.start("focal.vote")
    try:
        fundamentals = focal.undistorted_fundamentals(match_set, alphas)
        focals, focal_fallback = focal.vote_focal_multi(match_set,
                                                        fundamentals, cfg)
    except Exception as exc:
        raise StageError("focal.vote", exc)
    cameras = []
    dims = {}
    for im in match_set.images:
        dims.setdefault(im.camera_id, (im.width, im.height))
    for cam_id in range(match_set.n_cameras):
        w, h = dims[cam_id]
        cameras.append(CameraModel(focal=focals[cam_id], width=w, height=h,
                                   alpha=alphas.get(cam_id, 0.0)))
    report.finish(cameras=len(cameras), fallback=len(focal_fallback))

    # ---- calibrate + decompose --------------------------------------
    report.start("twoview.decompose")
    try:
        norm_kps, geometry = focal.apply_calibration(match_set, cameras)
    except Exception as exc:
        raise StageError("twoview.decompose", exc)
    edges = []
    pair_points = {}  # (i, j) -> (x1, x2) inlier normalized points
    inlier_pairs = []  # correspondences surviving two-view verification
    for pair, mat in geometry:
        x1, x2, inl = _pair_inliers(pair, mat, pair.geometry_class, norm_kps)
        if mat is None or inl.sum() < 2:
            continue
        inlier_pairs.append(ImagePairMatches(
            i=pair.i, j=pair.j, geometry_class=pair.geometry_class,
            correspondences=pair.correspondences[inl]))
        try:
            if pair.geometry_class is GeometryClass.HOMOGRAPHY:
                R_rel, _ = decompose_homography(mat, x1[inl], x2[inl])
            else:
                R_rel, _ = decompose_essential(mat, x1[inl], x2[inl])
        except DegenerateGeometryError:
            continue
        edges.append(rotation.RelPoseEdge(pair.i, pair.j, R_rel,
                                          int(inl.sum())))
        pair_points[(pair.i, pair.j)] = (x1[inl], x2[inl])
    verified = MatchSet(images=match_set.images,
                        keypoints=match_set.keypoints, pairs=inlier_pairs)
    report.finish(pairs=len(edges))

    # ---- pair filtering ---------------------------------------------
    report.start("rotation.filter_pairs")
    try:
        graph = rotation.RelPoseGraph(match_set.n_images, edges)
        graph, threshold = rotation.filter_pairs(graph, cfg)
    except Exception as exc:
        raise StageError("rotation.filter_pairs", exc)
    n_registered = int(graph.registered.sum())
    report.finish(threshold=threshold, edges=len(graph.edges),
                  registered=n_registered)

    # ---- rotation init + refine -------------------------------------
    report.start("rotation.init")
    try:
        R_init = rotation.init_rotations(graph)
    except Exception as exc:
        raise StageError("rotation.init", exc)
    report.finish()
    report.start("rotation.refine")
    try:
        rotations, history = rotation.refine_rotations(R_init, graph, cfg)
    except Exception as exc:
        raise StageError("rotation.refine", exc)
    report.finish(steps=len(history), loss=history[-1] if history else 0.0)

    # ---- tracks + completion ----------------------------------------
    report.start("tracks.complete")
    try:
        track_set = tracks.build_tracks(verified)
        completed = tracks.complete_matches(
            track_set, verified,
            max_track_size=cfg.max_track_size_for_completion)
    except Exception as exc:
        raise StageError("tracks.complete", exc)
    report.finish(tracks=len(track_set.tracks),
                  pairs=len(completed.pairs))

    # ---- relative translation ---------------------------------------
    report.start("translation.relative")
    reg = graph.registered
    active = sorted(np.flatnonzero(reg))
    remap = {img: k for k, img in enumerate(active)}
    edges_i, edges_j, directions = [], [], []
    epi_pairs = []
    for pair in completed.pairs:
        if not (reg[pair.i] and reg[pair.j]):
            continue
        if pair.synthetic_from_tracks or (pair.i, pair.j) not in pair_points:
            x1 = norm_kps[pair.i][pair.correspondences[:, 0]]
            x2 = norm_kps[pair.j][pair.correspondences[:, 1]]
            ok = np.all(np.isfinite(x1), axis=1) & \
                np.all(np.isfinite(x2), axis=1)
            x1, x2 = x1[ok], x2[ok]
        else:
            x1, x2 = pair_points[(pair.i, pair.j)]
        if len(x1) < 2:
            continue
        R_rel = rotations[pair.j] @ rotations[pair.i].T
        try:
            t_ij = translation.reestimate_relative(x1, x2, R_rel, cfg)
        except translation.PairRejected:
            continue
        edges_i.append(remap[pair.i])
        edges_j.append(remap[pair.j])
        directions.append(translation.world_direction(t_ij, rotations[pair.j]))
        epi_pairs.append(EpipolarPair(
            i=pair.i, j=pair.j,
            cam_i=match_set.images[pair.i].camera_id,
            cam_j=match_set.images[pair.j].camera_id,
            x1=x1, x2=x2))
    if not edges_i:
        raise StageError("translation.relative",
                         "no pair kept a usable translation direction")
    dir_graph = translation.DirectionGraph(
        n=len(active),
        edges_i=np.array(edges_i, dtype=np.int64),
        edges_j=np.array(edges_j, dtype=np.int64),
        directions=np.stack(directions))
    report.finish(edges=len(edges_i))

    # ---- global translation -----------------------------------------
    report.start("translation.align")
    try:
        centers_active, t_loss = translation.multi_init_align(dir_graph, cfg,
                                                              seed=seed)
    except Exception as exc:
        raise StageError("translation.align", exc)
    poses = PoseState(rotations=rotations.copy(),
                      centers=np.zeros((match_set.n_images, 3)),
                      registered=reg.copy())
    for img, k in remap.items():
        poses.centers[img] = centers_active[k]
    report.finish(loss=t_loss)

    # ---- epipolar adjustment ----------------------------------------
    report.start("epipolar.adjust")
    if cfg.run_epipolar_adjustment:
        try:
            poses, focal_scale, epi_report = irls_refine(
                poses, epi_pairs, cfg, n_cameras=match_set.n_cameras)
        except Exception as exc:
            raise StageError("epipolar.adjust", exc)
        for cam_id, cam in enumerate(cameras):
            if focal_scale[cam_id] != 1.0:
                cameras[cam_id] = CameraModel(
                    focal=cam.focal * float(focal_scale[cam_id]),
                    width=cam.width, height=cam.height, alpha=cam.alpha)
        # focal changes rescale the normalized coordinates
        if cfg.refine_focal:
            for im in match_set.images:
                s = float(focal_scale[im.camera_id])
                if s != 1.0:
                    norm_kps[im.image_id][:, :2] /= s
        report.finish(l1=epi_report["l1_history"][-1],
                      pairs=epi_report["active_pairs"],
                      dropped=epi_report["dropped_pairs"])
    else:
        report.finish(skipped=1)

    # ---- triangulation ----------------------------------------------
    report.start("reconstruct.triangulate")
    per_image_focal = np.array([cameras[im.camera_id].focal
                                for im in match_set.images])
    try:
        points = build_points(track_set, poses, norm_kps, cfg,
                              focals=per_image_focal, seed=seed)
    except Exception as exc:
        raise StageError("reconstruct.triangulate", exc)
    report.finish(points=len(points), tracks=len(track_set.tracks))

    scene = SceneModel(cameras=cameras, images=match_set.images,
                       poses=poses, points=points, tracks=track_set)
    return scene, report.text()


class FastMapReconstructor:
    """Estimator-style wrapper: configure with keyword parameters, call
    ``fit`` on a MatchSet, read the result from ``scene_``.

    Parameters mirror PipelineConfig fields plus ``seed``.
    """

    def __init__(self, seed=0, **params):
        self.seed = seed
        self._cfg_params = dict(params)
        config_mod.PipelineConfig(**self._cfg_params)  # validate early

    def get_params(self, deep=True):
        out = dict(self._cfg_params)
        out["seed"] = self.seed
        return out

    def set_params(self, **params):
        if "seed" in params:
            self.seed = params.pop("seed")
        merged = {**self._cfg_params, **params}
        config_mod.PipelineConfig(**merged)
        self._cfg_params = merged
        return self

    def fit(self, match_set):
        cfg = config_mod.PipelineConfig(**self._cfg_params)
        self.scene_, self.report_ = run_pipeline(match_set, cfg,
                                                 seed=self.seed)
        return self
