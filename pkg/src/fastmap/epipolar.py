"""Re-weighting epipolar adjustment.

Per image pair, the summed squared epipolar residual collapses into a
9x9 quadratic form over the flattened essential matrix, so each descent
step costs time linear in the number of image pairs regardless of how
many point pairs they carry. IRLS re-weighting approximates a robust L1
loss, and points with large residuals are pruned on a schedule.
"""

from dataclasses import dataclass, field

import numpy as np

from .optim import Adam, matrix_to_rot6d, rot6d_jacobian, rot6d_to_matrix, skew

_HUBER_EPS = 1e-6


@dataclass
class EpipolarPair:
    """One image pair entering the adjustment."""

    i: int
    j: int
    cam_i: int
    cam_j: int
    x1: np.ndarray  # (M, 3) normalized homogeneous, image i
    x2: np.ndarray  # (M, 3) normalized homogeneous, image j
    terms: np.ndarray = field(default=None)  # (M, 9) flatten(x2 x1^T)
    active: np.ndarray = field(default=None)  # (M,) bool

    def __post_init__(self):
        if self.terms is None:
            self.terms = (self.x2[:, :, None] * self.x1[:, None, :]).reshape(-1, 9)
        if self.active is None:
            self.active = np.ones(len(self.x1), dtype=bool)


def point_weight_vectors(x1, x2):
    """flatten(x2 x1^T) rows, one per point pair."""
    x1 = np.atleast_2d(np.asarray(x1, dtype=np.float64))
    x2 = np.atleast_2d(np.asarray(x2, dtype=np.float64))
    return (x2[:, :, None] * x1[:, None, :]).reshape(len(x1), 9)


def precompute_weights(x1, x2, residuals=None):
    """9x9 PSD matrix W = sum_m w_m w_m^T, optionally IRLS-weighted.

    With ``residuals`` given, each term is divided by max(|res|, eps) to
    approximate an L1 loss around the current state.
    """
    terms = point_weight_vectors(x1, x2)
    if len(terms) == 0:
        return np.zeros((9, 9))
    if residuals is None:
        scale = np.ones(len(terms))
    else:
        scale = 1.0 / np.maximum(np.abs(residuals), _HUBER_EPS)
    return (terms * scale[:, None]).T @ terms


def compose_essential(R_i, R_j, o_i, o_j):
    """Essential matrix of a pair from global world-to-camera poses.

    R_rel = R_j R_i^T, t = -R_j (o_j - o_i), E = [t]_x R_rel; E is not
    normalized here.
    """
    R_rel = R_j @ R_i.T
    t = -R_j @ (o_j - o_i)
    return skew(t) @ R_rel


@dataclass
class AdjustmentState:
    """Optimization variables: 6D rotations, centers, per-camera log-focal
    corrections (zero means "keep the calibrated focal")."""

    image_ids: np.ndarray  # active image ids, dense order
    rot6d: np.ndarray  # (n, 6)
    centers: np.ndarray  # (n, 3)
    log_focal: np.ndarray  # (n_cams,)
    refine_focal: bool

    @classmethod
    def from_poses(cls, poses, image_ids, n_cameras, refine_focal):
        ids = np.asarray(image_ids, dtype=np.int64)
        return cls(
            image_ids=ids,
            rot6d=matrix_to_rot6d(poses.rotations[ids]),
            centers=poses.centers[ids].copy(),
            log_focal=np.zeros(n_cameras),
            refine_focal=refine_focal,
        )

    def pack(self):
        parts = [self.rot6d.ravel(), self.centers.ravel()]
        if self.refine_focal:
            parts.append(self.log_focal.ravel())
        return np.concatenate(parts)

    def unpack(self, flat):
        n = len(self.image_ids)
        self.rot6d = flat[: 6 * n].reshape(n, 6)
        self.centers = flat[6 * n: 9 * n].reshape(n, 3)
        if self.refine_focal:
            self.log_focal = flat[9 * n:].copy()


def _batched_essentials(state, idx_i, idx_j, cam_i, cam_j):
    """Per-pair Frobenius-normalized fundamental (in current normalized
    coordinates) plus intermediates needed by the backward pass."""
    R = rot6d_to_matrix(state.rot6d)
    Ri, Rj = R[idx_i], R[idx_j]
    delta = state.centers[idx_j] - state.centers[idx_i]
    t = -np.einsum("mij,mj->mi", Rj, delta)
    R_rel = np.einsum("mij,mkj->mik", Rj, Ri)
    E = skew(t) @ R_rel
    if state.refine_focal:
        di = np.exp(-state.log_focal[cam_i])
        dj = np.exp(-state.log_focal[cam_j])
        Di = np.zeros((len(idx_i), 3, 3))
        Dj = np.zeros((len(idx_i), 3, 3))
        for D, d in ((Di, di), (Dj, dj)):
            D[:, 0, 0] = d
            D[:, 1, 1] = d
            D[:, 2, 2] = 1.0
        G = Dj @ E @ Di
    else:
        Di = Dj = None
        G = E
    g = G.reshape(-1, 9)
    norm = np.linalg.norm(g, axis=1, keepdims=True)
    norm = np.maximum(norm, 1e-15)
    return {
        "R": R, "Ri": Ri, "Rj": Rj, "delta": delta, "t": t,
        "R_rel": R_rel, "E": E, "Di": Di, "Dj": Dj,
        "g": g, "norm": norm, "ghat": g / norm,
    }


def epipolar_loss(state, pairs, weights=None, mode="l2"):
    """Evaluate (2/Z) sum e^T W e ("l2") or the direct mean absolute
    residual ("l1") at the current state. Returns (loss, Z)."""
    idx = _pair_indices(state, pairs)
    inter = _batched_essentials(state, *idx)
    Z = sum(int(p.active.sum()) for p in pairs)
    if Z == 0:
        raise ValueError("no active point pairs")
    if mode == "l2":
        if weights is None:
            weights = [precompute_weights(p.x1[p.active], p.x2[p.active])
                       for p in pairs]
        W = np.stack(weights)
        vals = np.einsum("mk,mkl,ml->m", inter["ghat"], W, inter["ghat"])
        return float(2.0 / Z * vals.sum()), Z
    total = 0.0
    for n, p in enumerate(pairs):
        res = p.terms[p.active] @ inter["ghat"][n]
        total += float(np.abs(res).sum())
    return total / Z, Z


def _pair_indices(state, pairs):
    remap = {img: k for k, img in enumerate(state.image_ids)}
    idx_i = np.array([remap[p.i] for p in pairs], dtype=np.int64)
    idx_j = np.array([remap[p.j] for p in pairs], dtype=np.int64)
    cam_i = np.array([p.cam_i for p in pairs], dtype=np.int64)
    cam_j = np.array([p.cam_j for p in pairs], dtype=np.int64)
    return idx_i, idx_j, cam_i, cam_j


def quadratic_loss_and_grad(state, pairs, weights, Z):
    """Loss (2/Z) sum ghat^T W ghat and its gradient in packed parameters."""
    idx_i, idx_j, cam_i, cam_j = _pair_indices(state, pairs)
    inter = _batched_essentials(state, idx_i, idx_j, cam_i, cam_j)
    m = len(pairs)
    n = len(state.image_ids)
    W = np.stack(weights)
    ghat = inter["ghat"]
    vals = np.einsum("mk,mkl,ml->m", ghat, W, ghat)
    loss = float(2.0 / Z * vals.sum())

    # d loss / d ghat, then back through the Frobenius normalization
    g_ghat = (2.0 / Z) * 2.0 * np.einsum("mkl,ml->mk", W, ghat)
    dot = np.sum(ghat * g_ghat, axis=1, keepdims=True)
    g_G = ((g_ghat - ghat * dot) / inter["norm"]).reshape(m, 3, 3)

    if state.refine_focal:
        E, Di, Dj = inter["E"], inter["Di"], inter["Dj"]
        g_E = Dj @ g_G @ Di  # diagonal D: D^T = D
        # d G / d log_focal through d = exp(-phi): dD/dphi = -diag(d, d, 0)
        gphi_i = _focal_grad(g_G, Dj @ E, state.log_focal[cam_i], side="right")
        gphi_j = _focal_grad(g_G, E @ Di, state.log_focal[cam_j], side="left")
        g_focal = np.zeros_like(state.log_focal)
        np.add.at(g_focal, cam_i, gphi_i)
        np.add.at(g_focal, cam_j, gphi_j)
    else:
        g_E = g_G
        g_focal = None

    R_rel, t = inter["R_rel"], inter["t"]
    # E = [t]_x R_rel
    M_rel = np.einsum("mba,mbc->mac", skew(t), g_E)  # [t]_x^T g_E
    P = np.einsum("mab,mcb->mac", g_E, R_rel)  # g_E R_rel^T
    g_t = np.stack([
        P[:, 2, 1] - P[:, 1, 2],
        P[:, 0, 2] - P[:, 2, 0],
        P[:, 1, 0] - P[:, 0, 1],
    ], axis=1)

    Ri, Rj, delta = inter["Ri"], inter["Rj"], inter["delta"]
    # t = -R_j delta
    g_delta = -np.einsum("mji,mj->mi", Rj, g_t)
    g_Rj = -np.einsum("ma,mb->mab", g_t, delta)
    # R_rel = R_j R_i^T
    g_Rj += M_rel @ Ri
    g_Ri = np.einsum("mba,mbc->mac", M_rel, Rj)

    grad_R = np.zeros((n, 3, 3))
    np.add.at(grad_R, idx_j, g_Rj)
    np.add.at(grad_R, idx_i, g_Ri)
    grad_centers = np.zeros((n, 3))
    np.add.at(grad_centers, idx_j, g_delta)
    np.add.at(grad_centers, idx_i, -g_delta)

    J = rot6d_jacobian(state.rot6d)
    grad_rot6d = np.einsum("nk,nkp->np", grad_R.reshape(n, 9), J)

    parts = [grad_rot6d.ravel(), grad_centers.ravel()]
    if state.refine_focal:
        parts.append(g_focal.ravel())
    return loss, np.concatenate(parts)


def _focal_grad(g_G, other, log_focal, side):
    """Gradient of sum(g_G * G) w.r.t. a log-focal correction.

    G = Dj E Di with D = diag(e^-phi, e^-phi, 1). For the right factor,
    d G / d phi_i = -(Dj E) diag(d, d, 0); for the left,
    d G / d phi_j = -diag(d, d, 0) (E Di).
    """
    d = np.exp(-log_focal)
    if side == "right":
        # columns 0 and 1 of (Dj E) scaled by -d
        contrib = np.einsum("mab,mab->m", g_G[:, :, :2], other[:, :, :2])
    else:
        contrib = np.einsum("mab,mab->m", g_G[:, :2, :], other[:, :2, :])
    return -d * contrib


def current_residuals(state, pairs):
    """Per-pair absolute residual arrays |terms @ ghat| (all points)."""
    idx = _pair_indices(state, pairs)
    inter = _batched_essentials(state, *idx)
    return [np.abs(p.terms @ inter["ghat"][k]) for k, p in enumerate(pairs)]


def prune_thresholds(cfg):
    if cfg.prune_rounds == 1:
        return [cfg.prune_threshold_start]
    return list(np.linspace(cfg.prune_threshold_start,
                            cfg.prune_threshold_end, cfg.prune_rounds))


def irls_refine(poses, pairs, cfg, n_cameras=1):
    """Scheduled IRLS refinement of global poses (and optionally focals).

    Mutates pair ``active`` masks during pruning. Returns
    (poses, focal_scale per camera, report dict).
    """
    image_ids = sorted({p.i for p in pairs} | {p.j for p in pairs})
    state = AdjustmentState.from_poses(poses, image_ids, n_cameras,
                                       cfg.refine_focal)
    thresholds = prune_thresholds(cfg)
    l1_history = []
    dropped_pairs = 0
    lr = cfg.epipolar_lr
    active_pairs = list(pairs)
    for rnd, threshold in enumerate(thresholds):
        residuals = current_residuals(state, active_pairs)
        kept = []
        for p, res in zip(active_pairs, residuals):
            p.active &= res <= threshold
            if p.active.sum() >= 1:
                kept.append(p)
            else:
                dropped_pairs += 1
        active_pairs = kept
        if not active_pairs:
            raise ValueError("all pairs pruned away")
        Z = sum(int(p.active.sum()) for p in active_pairs)

        opt = Adam(state.pack(), lr=lr, beta1=cfg.adam_beta1,
                   beta2=cfg.adam_beta2, eps=cfg.adam_eps)
        for _ in range(cfg.irls_iters_between_prunes):
            res = current_residuals(state, active_pairs)
            weights = [
                precompute_weights(p.x1[p.active], p.x2[p.active],
                                   residuals=r[p.active])
                for p, r in zip(active_pairs, res)
            ]
            for _ in range(cfg.epipolar_epoch_steps):
                state.unpack(opt.params)
                loss, grad = quadratic_loss_and_grad(state, active_pairs,
                                                     weights, Z)
                if not np.isfinite(loss):
                    raise FloatingPointError("non-finite epipolar loss")
                opt.step(grad)
            state.unpack(opt.params)
        l1, _ = epipolar_loss(state, active_pairs, mode="l1")
        l1_history.append(l1)
        lr /= cfg.lr_decay

    out = poses_from_state(poses, state)
    focal_scale = np.exp(state.log_focal) if cfg.refine_focal else \
        np.ones(n_cameras)
    report = {"l1_history": l1_history, "dropped_pairs": dropped_pairs,
              "active_pairs": len(active_pairs)}
    return out, focal_scale, report


def poses_from_state(poses, state):
    from .model import PoseState, project_to_so3

    out = PoseState(rotations=poses.rotations.copy(),
                    centers=poses.centers.copy(),
                    registered=poses.registered.copy())
    R = rot6d_to_matrix(state.rot6d)
    for k, img in enumerate(state.image_ids):
        out.rotations[img] = project_to_so3(R[k])
        out.centers[img] = state.centers[k]
    return out
