"""Pose-accuracy metrics: similarity alignment, ATE, pairwise relative
errors, and RRA/RTA/AUC summaries.

ATE is computed after Umeyama-aligning the estimated centers to the
ground-truth centers, with the ground truth pre-scaled to unit mean
distance from its centroid so the number is comparable across scenes.
The AUC integral is evaluated exactly from the sorted errors
(piecewise-constant recall), not by sampling.
"""

import numpy as np

from .rotation import geodesic_distance


class DegenerateAlignmentError(ValueError):
    pass


def umeyama_align(src, dst):
    """Least-squares similarity: minimize sum ||s R x + t - y||^2.

    Returns (scale, rotation (3, 3), translation (3,)). Requires at
    least 3 non-collinear correspondences.
    """
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if len(src) < 3 or src.shape != dst.shape:
        raise DegenerateAlignmentError("need >= 3 paired points")
    mu_s, mu_d = src.mean(axis=0), dst.mean(axis=0)
    xs, xd = src - mu_s, dst - mu_d
    var_s = np.mean(np.sum(xs ** 2, axis=1))
    cov = xd.T @ xs / len(src)
    U, d, Vt = np.linalg.svd(cov)
    if d[1] < 1e-12 * max(d[0], 1e-300) or var_s < 1e-24:
        raise DegenerateAlignmentError("collinear or coincident points")
    S = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2, 2] = -1.0
    R = U @ S @ Vt
    scale = float(np.trace(np.diag(d) @ S) / var_s)
    t = mu_d - scale * R @ mu_s
    return scale, R, t


def _common_registered(est, gt):
    both = est.registered & gt.registered
    idx = np.flatnonzero(both)
    return idx


def normalize_centers(centers):
    """Centroid at origin, unit mean distance from the centroid."""
    out = centers - centers.mean(axis=0)
    scale = np.linalg.norm(out, axis=1).mean()
    if scale < 1e-12:
        raise DegenerateAlignmentError("coincident centers")
    return out / scale


def ate(est_poses, gt_poses):
    """RMSE of camera-center errors after similarity alignment.

    Ground-truth centers are normalized to unit mean distance from the
    centroid first; only images registered in both models count.
    """
    idx = _common_registered(est_poses, gt_poses)
    if len(idx) < 3:
        raise DegenerateAlignmentError("fewer than 3 common registered images")
    gt = normalize_centers(gt_poses.centers[idx])
    est = est_poses.centers[idx]
    s, R, t = umeyama_align(est, gt)
    aligned = est @ (s * R).T + t
    return float(np.sqrt(np.mean(np.sum((aligned - gt) ** 2, axis=1))))


def relative_errors(est_poses, gt_poses):
    """Pairwise relative rotation / translation-direction errors (degrees).

    Covers all n(n-1)/2 pairs of images registered in the ground truth;
    pairs involving an image unregistered in the estimate count as
    failures (infinite error). Pairs with coincident GT centers are
    skipped for the translation error (NaN there).
    """
    gt_idx = np.flatnonzero(gt_poses.registered)
    n = len(gt_idx)
    rot_errs, trans_errs = [], []
    for a in range(n):
        for b in range(a + 1, n):
            i, j = gt_idx[a], gt_idx[b]
            if not (est_poses.registered[i] and est_poses.registered[j]):
                rot_errs.append(np.inf)
                trans_errs.append(np.inf)
                continue
            R_rel_est = est_poses.rotations[j] @ est_poses.rotations[i].T
            R_rel_gt = gt_poses.rotations[j] @ gt_poses.rotations[i].T
            rot_errs.append(np.degrees(geodesic_distance(R_rel_est, R_rel_gt)))

            d_gt = gt_poses.centers[j] - gt_poses.centers[i]
            d_est = est_poses.centers[j] - est_poses.centers[i]
            n_gt, n_est = np.linalg.norm(d_gt), np.linalg.norm(d_est)
            if n_gt < 1e-12:
                trans_errs.append(np.nan)
                continue
            if n_est < 1e-12:
                trans_errs.append(np.inf)
                continue
            # compare unit direction in the respective camera-i frames so
            # the measure is invariant to any global similarity
            u_gt = gt_poses.rotations[i] @ (d_gt / n_gt)
            u_est = est_poses.rotations[i] @ (d_est / n_est)
            cosang = np.clip(u_gt @ u_est, -1.0, 1.0)
            trans_errs.append(np.degrees(np.arccos(cosang)))
    return np.array(rot_errs), np.array(trans_errs)


def recall_at(errors, delta):
    """Percentage of errors strictly below the threshold; NaN skipped."""
    errors = np.asarray(errors, dtype=np.float64)
    errors = errors[~np.isnan(errors)]
    if len(errors) == 0:
        raise ValueError("empty error list")
    return 100.0 * float(np.mean(errors < delta))


def auc_at(errors, delta):
    """Exact area under the error-recall curve up to delta, divided by
    delta, as a percentage. Recall is piecewise constant between sorted
    error values."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    errors = np.asarray(errors, dtype=np.float64)
    errors = errors[~np.isnan(errors)]
    if len(errors) == 0:
        raise ValueError("empty error list")
    e = np.sort(np.minimum(errors, delta))
    n = len(e)
    # integral of recall(t) = (#errors < t)/n over [0, delta]
    area = float(np.sum(delta - e)) / n
    return 100.0 * area / delta


def rra_rta_auc(rot_errors, trans_errors, delta):
    """(RRA@delta, RTA@delta, AUC-R&T@delta); the combined AUC uses the
    per-pair maximum of the rotation and translation errors."""
    rra = recall_at(rot_errors, delta)
    rta = recall_at(trans_errors, delta)
    rot = np.asarray(rot_errors, dtype=np.float64)
    tr = np.asarray(trans_errors, dtype=np.float64)
    combined = np.where(np.isnan(tr), rot, np.maximum(rot, tr))
    auc = auc_at(combined, delta)
    return rra, rta, auc


def evaluate(est_poses, gt_poses, deltas=(1.0, 3.0)):
    """Fixed-order summary dict: ATE plus RRA/RTA/AUC at each delta."""
    rot_errs, trans_errs = relative_errors(est_poses, gt_poses)
    out = {"ATE": ate(est_poses, gt_poses)}
    for delta in deltas:
        rra, rta, auc = rra_rta_auc(rot_errs, trans_errs, delta)
        d = int(delta) if float(delta).is_integer() else delta
        out[f"RRA@{d}"] = rra
        out[f"RTA@{d}"] = rta
        out[f"AUC@{d}"] = auc
    return out
