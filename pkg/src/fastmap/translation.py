"""Relative translation re-estimation and global camera-center alignment.

Relative directions are found by searching the unit sphere with a
Fibonacci lattice plus local refinement; camera centers then minimize an
L1 loss between normalized center differences and the measured world
directions, with several random initializations merged per image.
"""

from dataclasses import dataclass

import numpy as np

from .optim import Adam, skew

_NORM_EPS = 1e-8
_GOLDEN_ANGLE = np.pi * (3.0 - np.sqrt(5.0))


class PairRejected(ValueError):
    """The pair carries no usable translation signal."""


def fibonacci_sphere(n):
    """Deterministic, nearly uniform unit-sphere lattice of n points."""
    k = np.arange(n, dtype=np.float64) + 0.5
    z = 1.0 - 2.0 * k / n
    r = np.sqrt(np.maximum(1.0 - z * z, 0.0))
    phi = _GOLDEN_ANGLE * k
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def _cap_samples(axis, radius, n):
    """Spiral sample of a spherical cap of angular ``radius`` around ``axis``."""
    k = np.arange(n, dtype=np.float64) + 0.5
    theta = radius * np.sqrt(k / n)
    phi = _GOLDEN_ANGLE * k
    local = np.stack([
        np.sin(theta) * np.cos(phi),
        np.sin(theta) * np.sin(phi),
        np.cos(theta),
    ], axis=1)
    # rotate +z to axis
    axis = axis / np.linalg.norm(axis)
    ref = np.array([1.0, 0.0, 0.0]) if abs(axis[2]) > 0.9 else np.array([0.0, 0.0, 1.0])
    u = np.cross(ref, axis)
    u /= np.linalg.norm(u)
    v = np.cross(axis, u)
    basis = np.stack([u, v, axis], axis=1)
    return local @ basis.T


def _mean_epipolar_errors(point_terms, directions, rel_rotation):
    E = skew(directions) @ rel_rotation  # (C, 3, 3)
    e = E.reshape(len(directions), 9)
    return np.abs(point_terms @ e.T).mean(axis=0)  # (C,)


def reestimate_relative(x1, x2, rel_rotation, cfg):
    """Unit relative translation t^{i->j} (camera j frame) by sphere search.

    ``x1``/``x2`` are normalized homogeneous points (M, 3) of images i/j;
    ``rel_rotation`` maps frame i to frame j. Raises PairRejected for
    pure-rotation pairs (flat error landscape) and cheirality ties.
    """
    x1 = np.asarray(x1, dtype=np.float64)
    x2 = np.asarray(x2, dtype=np.float64)
    if len(x1) == 0:
        raise PairRejected("no inlier point pairs")
    point_terms = (x2[:, :, None] * x1[:, None, :]).reshape(len(x1), 9)

    candidates = fibonacci_sphere(cfg.sphere_samples)
    errors = _mean_epipolar_errors(point_terms, candidates, rel_rotation)
    med = float(np.median(errors))
    # exactly-zero errors everywhere (noise-free pure rotation) are as
    # flat as a high min/median ratio
    if med < 1e-15 or np.min(errors) > 0.9 * med:
        raise PairRejected("flat epipolar landscape (near-zero baseline)")
    best = candidates[int(np.argmin(errors))]

    radius = 2.0 * np.sqrt(4.0 * np.pi / cfg.sphere_samples)
    for _ in range(cfg.sphere_refine_levels):
        candidates = _cap_samples(best, radius, cfg.sphere_samples)
        errors = _mean_epipolar_errors(point_terms, candidates, rel_rotation)
        best = candidates[int(np.argmin(errors))]
        radius *= 2.0 * np.sqrt(np.pi / cfg.sphere_samples)

    # the epipolar error is sign-invariant; resolve the sign by cheirality
    from .twoview import _positive_depth_count

    sample = slice(0, min(len(x1), 200))
    pos = _positive_depth_count(rel_rotation, best, x1[sample], x2[sample])
    neg = _positive_depth_count(rel_rotation, -best, x1[sample], x2[sample])
    if pos == neg:
        raise PairRejected("cheirality tie")
    return best if pos > neg else -best


def world_direction(t_ij, R_j):
    """Unit vector from camera center i to j in world coordinates."""
    d = -np.asarray(R_j).T @ np.asarray(t_ij)
    return d / np.linalg.norm(d)


@dataclass
class DirectionGraph:
    n: int  # number of registered nodes (dense indices)
    edges_i: np.ndarray  # (m,)
    edges_j: np.ndarray  # (m,)
    directions: np.ndarray  # (m, 3) unit o^{i->j}


def translation_loss_and_grad(centers, graph):
    """Mean per-edge L1 direction loss and its gradient w.r.t. centers."""
    delta = centers[graph.edges_j] - centers[graph.edges_i]
    length = np.maximum(np.linalg.norm(delta, axis=1, keepdims=True), _NORM_EPS)
    u = delta / length
    r = u - graph.directions
    m = len(graph.directions)
    loss = float(np.abs(r).sum() / m)
    g_u = np.sign(r) / m
    g_delta = (g_u - u * np.sum(u * g_u, axis=1, keepdims=True)) / length
    grad = np.zeros_like(centers)
    np.add.at(grad, graph.edges_j, g_delta)
    np.add.at(grad, graph.edges_i, -g_delta)
    return loss, grad


def canonicalize(centers):
    """Move the centroid to the origin, rescale to unit mean norm."""
    out = centers - centers.mean(axis=0)
    scale = np.linalg.norm(out, axis=1).mean()
    if scale > _NORM_EPS:
        out = out / scale
    return out


def align_centers(graph, cfg, seed=0, init=None, steps=None):
    """Adam descent of the L1 direction loss from a random (or given)
    initialization. Returns (centers, final loss)."""
    rng = np.random.default_rng(seed)
    if init is None:
        init = rng.standard_normal((graph.n, 3))
    opt = Adam(init.ravel(), lr=cfg.translation_lr, beta1=cfg.adam_beta1,
               beta2=cfg.adam_beta2, eps=cfg.adam_eps)
    loss = np.inf
    for _ in range(steps if steps is not None else cfg.translation_steps):
        centers = opt.params.reshape(graph.n, 3)
        loss, grad = translation_loss_and_grad(centers, graph)
        if not np.isfinite(loss):
            raise FloatingPointError("non-finite translation loss")
        opt.step(grad.ravel())
    return opt.params.reshape(graph.n, 3).copy(), loss


def per_node_residuals(centers, graph):
    """Mean incident-edge L1 residual per node (gauge-invariant)."""
    delta = centers[graph.edges_j] - centers[graph.edges_i]
    length = np.maximum(np.linalg.norm(delta, axis=1, keepdims=True), _NORM_EPS)
    r = np.abs(delta / length - graph.directions).sum(axis=1)
    total = np.zeros(graph.n)
    count = np.zeros(graph.n)
    np.add.at(total, graph.edges_i, r)
    np.add.at(total, graph.edges_j, r)
    np.add.at(count, graph.edges_i, 1.0)
    np.add.at(count, graph.edges_j, 1.0)
    return total / np.maximum(count, 1.0)


def multi_init_align(graph, cfg, seed=0):
    """Independent random-seed runs merged per image, then a final descent.

    Each run is canonicalized (centroid at origin, unit mean norm); for
    every node the candidate with the lowest mean incident residual wins,
    and the merged solution initializes the final optimization.
    """
    if cfg.translation_inits == 1:
        return align_centers(graph, cfg, seed=seed)
    runs = []
    for k in range(cfg.translation_inits):
        centers, _ = align_centers(graph, cfg, seed=seed + k)
        runs.append(canonicalize(centers))
    residuals = np.stack([per_node_residuals(c, graph) for c in runs])
    choice = np.argmin(residuals, axis=0)
    merged = np.stack([runs[choice[v]][v] for v in range(graph.n)])
    centers, loss = align_centers(graph, cfg, seed=seed, init=merged)
    return centers, loss
