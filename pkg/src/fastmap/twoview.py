"""Two-view geometry: fundamental/homography fitting, epipolar error,
and decomposition into relative pose.

All matrices are Frobenius-normalized so that algebraic residuals are
comparable across pairs. The epipolar error is the absolute algebraic
residual |x2^T F x1| on homogeneous points with z = 1.
"""

import cv2
import numpy as np

from .model import project_to_so3


class DegenerateGeometryError(ValueError):
    pass


def to_homogeneous(points):
    points = np.asarray(points, dtype=np.float64)
    return np.concatenate([points, np.ones(points.shape[:-1] + (1,))], axis=-1)


def _hartley_normalization(points):
    """Similarity transform moving the centroid to the origin with mean
    distance sqrt(2)."""
    centroid = points.mean(axis=0)
    dist = np.linalg.norm(points - centroid, axis=1).mean()
    scale = np.sqrt(2.0) / max(dist, 1e-12)
    T = np.array([
        [scale, 0.0, -scale * centroid[0]],
        [0.0, scale, -scale * centroid[1]],
        [0.0, 0.0, 1.0],
    ])
    return T


def _smallest_right_vector(A):
    # eigh on the 9x9 normal matrix; far cheaper than an SVD of the tall A
    _, vecs = np.linalg.eigh(A.T @ A)
    return vecs[:, 0]


_TRIM_FACTOR = 10.0
_LMEDS_ITERS = 64
_LMEDS_SEED = 12345  # fixed: estimation must be a pure function of the data


def _refit_on_inliers(fit, error, p1, p2, model, min_support):
    """Refit on the points whose residual is within 10x the median."""
    r = error(model, p1, p2)
    keep = r <= max(_TRIM_FACTOR * float(np.median(r)), 1e-12)
    if min_support <= keep.sum() < len(p1):
        model = fit(p1[keep], p2[keep])
    return model


def estimate_fundamental(points1, points2):
    """Robust fundamental-matrix fit (LMedS + 8-point least squares).

    Accepts (M, 2) pixel/normalized coordinates; requires M >= 8.
    Returns a Frobenius-normalized rank-2 matrix F with x2^T F x1 = 0.
    With enough points, least-median-of-squares model selection over
    seeded minimal samples rejects gross outliers before the final
    least-squares refit; the sampling seed is fixed so the estimate is
    deterministic.
    """
    p1 = np.asarray(points1, dtype=np.float64)
    p2 = np.asarray(points2, dtype=np.float64)
    if len(p1) < 8:
        raise DegenerateGeometryError("need at least 8 point pairs")
    if len(p1) >= 16:
        F = _lmeds_fundamental(p1, p2)
    else:
        F = _fit_fundamental(p1, p2)
    return _refit_on_inliers(_fit_fundamental, epipolar_error, p1, p2, F, 8)


def _lmeds_fundamental(p1, p2):
    """Least-median-of-squares model selection over minimal 8-point
    samples, then a least-squares fit on the consensus inliers."""
    M = len(p1)
    T1 = _hartley_normalization(p1)
    T2 = _hartley_normalization(p2)
    x1 = to_homogeneous(p1) @ T1.T
    x2 = to_homogeneous(p2) @ T2.T
    A = (x2[:, :, None] * x1[:, None, :]).reshape(M, 9)
    rng = np.random.default_rng(_LMEDS_SEED)
    idx = np.stack([rng.choice(M, 8, replace=False)
                    for _ in range(_LMEDS_ITERS)])
    As = A[idx]
    N = np.einsum("kra,krb->kab", As, As)
    _, vecs = np.linalg.eigh(N)
    Fs = vecs[:, :, 0].reshape(-1, 3, 3)
    U, s, Vt = np.linalg.svd(Fs)
    s = s.copy()
    s[:, 2] = 0.0
    Fs = U @ (s[:, :, None] * Vt)
    r = np.abs(np.einsum("mi,kij,mj->km", x2, Fs, x1))
    best = int(np.argmin(np.median(r, axis=1)))
    rb = r[best]
    sigma = 1.4826 * (1.0 + 5.0 / (M - 8)) * np.sqrt(np.median(rb ** 2))
    keep = rb <= 2.5 * sigma
    if keep.sum() < 8:
        keep = np.zeros(M, dtype=bool)
        keep[np.argsort(rb)[:max(8, M // 2)]] = True
    return _fit_fundamental(p1[keep], p2[keep])


def _fit_fundamental(p1, p2):
    T1 = _hartley_normalization(p1)
    T2 = _hartley_normalization(p2)
    x1 = to_homogeneous(p1) @ T1.T
    x2 = to_homogeneous(p2) @ T2.T
    # rows are flatten(x2 x1^T)
    A = (x2[:, :, None] * x1[:, None, :]).reshape(-1, 9)
    F = _smallest_right_vector(A).reshape(3, 3)
    U, s, Vt = np.linalg.svd(F)
    F = U @ np.diag([s[0], s[1], 0.0]) @ Vt
    F = T2.T @ F @ T1
    norm = np.linalg.norm(F)
    if norm < 1e-15:
        raise DegenerateGeometryError("rank-deficient design matrix")
    return F / norm


def homography_transfer_error(H, p1, p2):
    """Euclidean transfer error ||proj(H x1) - x2|| on (M, 2) points."""
    x1 = to_homogeneous(np.asarray(p1, dtype=np.float64))
    proj = x1 @ np.asarray(H, dtype=np.float64).T
    with np.errstate(invalid="ignore", divide="ignore"):
        proj = proj[:, :2] / proj[:, 2:3]
    diff = proj - np.asarray(p2, dtype=np.float64)
    return np.linalg.norm(np.nan_to_num(diff, nan=np.inf, posinf=np.inf),
                          axis=1)


def estimate_homography(points1, points2):
    """Robust normalized DLT homography fit; requires >= 4 pairs.

    Returns H (Frobenius-normalized, positive trace sign) mapping
    homogeneous points of image 1 to image 2. Outlier handling follows
    ``estimate_fundamental``: seeded LMedS sample selection when enough
    points exist, then a least-squares refit on the inliers.
    """
    p1 = np.asarray(points1, dtype=np.float64)
    p2 = np.asarray(points2, dtype=np.float64)
    if len(p1) < 4:
        raise DegenerateGeometryError("need at least 4 point pairs")
    if len(p1) >= 12:
        H = _lmeds_homography(p1, p2)
    else:
        H = _fit_homography(p1, p2)
    return _refit_on_inliers(_fit_homography, homography_transfer_error,
                             p1, p2, H, 4)


def _lmeds_homography(p1, p2):
    M = len(p1)
    rng = np.random.default_rng(_LMEDS_SEED)
    best_H, best_med = None, np.inf
    for _ in range(_LMEDS_ITERS):
        idx = rng.choice(M, 4, replace=False)
        try:
            H = _fit_homography(p1[idx], p2[idx])
        except DegenerateGeometryError:
            continue
        med = float(np.median(homography_transfer_error(H, p1, p2)))
        if med < best_med:
            best_H, best_med = H, med
    if best_H is None:
        return _fit_homography(p1, p2)
    r = homography_transfer_error(best_H, p1, p2)
    sigma = 1.4826 * (1.0 + 5.0 / max(M - 4, 1)) * np.sqrt(np.median(r ** 2))
    keep = r <= 2.5 * sigma
    if keep.sum() < 4:
        keep = np.zeros(M, dtype=bool)
        keep[np.argsort(r)[:max(4, M // 2)]] = True
    return _fit_homography(p1[keep], p2[keep])


def _fit_homography(p1, p2):
    T1 = _hartley_normalization(p1)
    T2 = _hartley_normalization(p2)
    x1 = to_homogeneous(p1) @ T1.T
    x2 = to_homogeneous(p2) @ T2.T
    M = len(x1)
    A = np.zeros((2 * M, 9))
    A[0::2, 3:6] = -x2[:, 2:3] * x1
    A[0::2, 6:9] = x2[:, 1:2] * x1
    A[1::2, 0:3] = x2[:, 2:3] * x1
    A[1::2, 6:9] = -x2[:, 0:1] * x1
    H = _smallest_right_vector(A).reshape(3, 3)
    H = np.linalg.inv(T2) @ H @ T1
    norm = np.linalg.norm(H)
    if norm < 1e-15 or abs(np.linalg.det(H)) < 1e-12:
        raise DegenerateGeometryError("degenerate homography configuration")
    H = H / norm
    if np.trace(H) < 0:
        H = -H
    return H


def epipolar_error(F, x1, x2):
    """Absolute algebraic residual(s) |x2^T F x1|.

    ``x1``/``x2`` may be single points or (M, 2)/(M, 3) arrays; 2D input
    is promoted to homogeneous with z = 1.
    """
    x1 = np.asarray(x1, dtype=np.float64)
    x2 = np.asarray(x2, dtype=np.float64)
    if x1.shape[-1] == 2:
        x1 = to_homogeneous(x1)
    if x2.shape[-1] == 2:
        x2 = to_homogeneous(x2)
    res = np.einsum("...i,ij,...j->...", x2, F, x1)
    return np.abs(res)


def triangulate_linear(R1, c1, R2, c2, x1, x2):
    """Two-view linear (DLT) triangulation of normalized homogeneous points.

    Poses are world-to-camera: x_cam = R (X - c). Returns (M, 3) points.
    """
    P1 = np.hstack([R1, (-R1 @ c1)[:, None]])
    P2 = np.hstack([R2, (-R2 @ c2)[:, None]])
    x1 = np.asarray(x1, dtype=np.float64)
    x2 = np.asarray(x2, dtype=np.float64)
    single = x1.ndim == 1
    if single:
        x1, x2 = x1[None], x2[None]
    M = len(x1)
    A = np.zeros((M, 4, 4))
    A[:, 0] = x1[:, 0:1] * P1[2] - x1[:, 2:3] * P1[0]
    A[:, 1] = x1[:, 1:2] * P1[2] - x1[:, 2:3] * P1[1]
    A[:, 2] = x2[:, 0:1] * P2[2] - x2[:, 2:3] * P2[0]
    A[:, 3] = x2[:, 1:2] * P2[2] - x2[:, 2:3] * P2[1]
    _, _, Vt = np.linalg.svd(A)
    X = Vt[:, -1, :]
    w = X[:, 3:4]
    w = np.where(np.abs(w) < 1e-15, 1e-15, w)
    pts = X[:, :3] / w
    return pts[0] if single else pts


def _positive_depth_count(R, t, x1, x2):
    """Count pairs triangulating in front of both cameras for relative pose
    (R, t) with camera 1 at identity (x2 = R x1 + t up to depth)."""
    c2 = -R.T @ t
    pts = triangulate_linear(np.eye(3), np.zeros(3), R, c2, x1, x2)
    z1 = pts[:, 2]
    z2 = (pts - c2) @ R[2]
    return int(np.sum((z1 > 0) & (z2 > 0)))


def essential_candidates(E):
    """The four (R, t) decompositions of an essential matrix."""
    U, _, Vt = np.linalg.svd(E)
    if np.linalg.det(U) < 0:
        U = -U
    if np.linalg.det(Vt) < 0:
        Vt = -Vt
    W = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    Ra = U @ W @ Vt
    Rb = U @ W.T @ Vt
    t = U[:, 2]
    return [(Ra, t), (Ra, -t), (Rb, t), (Rb, -t)]


def decompose_essential(E, x1, x2):
    """Recover (R, unit t) from an essential matrix via cheirality.

    Among the four candidates, returns the one with the most point pairs
    triangulating with positive depth in both views; ties break toward
    the lowest candidate index. Points are normalized homogeneous (M, 3).
    """
    x1 = np.atleast_2d(np.asarray(x1, dtype=np.float64))
    x2 = np.atleast_2d(np.asarray(x2, dtype=np.float64))
    if len(x1) < 1:
        raise DegenerateGeometryError("need at least one point pair")
    s = np.linalg.svd(E, compute_uv=False)
    if s[1] < 1e-8 * s[0]:
        raise DegenerateGeometryError("matrix is not essential (rank < 2)")
    counts = [_positive_depth_count(R, t, x1, x2) for R, t in essential_candidates(E)]
    best = int(np.argmax(counts))
    if counts[best] == 0:
        raise DegenerateGeometryError("no translation support (all depths behind)")
    R, t = essential_candidates(E)[best]
    return project_to_so3(R), t / np.linalg.norm(t)


def decompose_homography(H, x1, x2):
    """Recover (R, unit t or None) from a calibrated homography.

    A conjugate-orthogonal H (pure rotation) returns (R, None). Otherwise
    candidates from the analytic decomposition are filtered by the
    positive-depth check; ties break toward the lowest index.
    """
    x1 = np.atleast_2d(np.asarray(x1, dtype=np.float64))
    x2 = np.atleast_2d(np.asarray(x2, dtype=np.float64))
    H = np.asarray(H, dtype=np.float64)
    if abs(np.linalg.det(H)) < 1e-12:
        raise DegenerateGeometryError("numerically degenerate homography")
    # scale so the middle singular value is 1 (calibrated convention)
    s = np.linalg.svd(H, compute_uv=False)
    Hn = H / s[1]
    if np.trace(Hn) < 0:
        Hn = -Hn
    if np.linalg.norm(Hn.T @ Hn - np.eye(3)) < 1e-6:
        return project_to_so3(Hn), None
    retval, Rs, ts, _ = cv2.decomposeHomographyMat(Hn, np.eye(3))
    if retval == 0:
        raise DegenerateGeometryError("homography decomposition failed")
    best, best_count = None, -1
    for idx in range(retval):
        R = project_to_so3(Rs[idx])
        t = ts[idx].ravel()
        nt = np.linalg.norm(t)
        if nt < 1e-9:
            continue
        count = _positive_depth_count(R, t / nt, x1, x2)
        if count > best_count:
            best, best_count = (R, t / nt), count
    if best is None or best_count == 0:
        raise DegenerateGeometryError("no cheirality support for homography pose")
    return best
