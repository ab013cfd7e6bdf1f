"""Global rotation alignment.

Connectivity-adaptive filtering of the relative-pose graph, column-wise
least-squares initialization, and Adam refinement of a mean geodesic
distance loss over the 6D rotation parameterization.
"""

from dataclasses import dataclass, field

import numpy as np

from .model import project_to_so3
from .optim import Adam, matrix_to_rot6d, rot6d_jacobian, rot6d_to_matrix


class SceneDisconnectedError(RuntimeError):
    pass


@dataclass
class RelPoseEdge:
    i: int
    j: int
    rel_rotation: np.ndarray  # (3, 3), frame i -> frame j
    inlier_count: int


@dataclass
class RelPoseGraph:
    n_images: int
    edges: list  # list[RelPoseEdge]
    registered: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.registered is None:
            self.registered = np.ones(self.n_images, dtype=bool)


def _components(n, edges):
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for e in edges:
        ra, rb = find(e.i), find(e.j)
        if ra != rb:
            parent[ra] = rb
    labels = [find(k) for k in range(n)]
    return labels


def filter_pairs(graph, cfg):
    """Drop low-inlier edges with a threshold that halves until the graph
    is connected (or the minimum threshold is reached); images outside
    the largest remaining component are marked unregistered."""
    if not graph.edges:
        raise SceneDisconnectedError("scene disconnected: empty pair graph")
    active = np.flatnonzero(graph.registered)
    threshold = cfg.pair_inlier_threshold_start
    while True:
        kept = [e for e in graph.edges if e.inlier_count >= threshold]
        labels = _components(graph.n_images, kept)
        counts = {}
        for k in active:
            counts[labels[k]] = counts.get(labels[k], 0) + 1
        largest = max(counts.values()) if counts else 0
        if largest == len(active) and kept:
            break
        if threshold <= cfg.pair_inlier_threshold_min:
            break
        threshold = max(threshold // 2, cfg.pair_inlier_threshold_min)
    if largest < 3:
        raise SceneDisconnectedError(
            "scene disconnected: largest component has fewer than 3 images")
    main_label = max(counts, key=counts.get)
    registered = graph.registered.copy()
    for k in range(graph.n_images):
        if labels[k] != main_label:
            registered[k] = False
    kept = [e for e in kept if registered[e.i] and registered[e.j]]
    return RelPoseGraph(graph.n_images, kept, registered), threshold


def _column_system(graph, index):
    """Sparse-style accumulation of A^T A for the first-column least squares,
    where rows are (x_j - R_rel x_i) over edges."""
    n = len(index)
    AtA = np.zeros((3 * n, 3 * n))
    eye = np.eye(3)
    for e in graph.edges:
        a, b = index[e.i], index[e.j]
        R = e.rel_rotation
        # row block: [-R at a, I at b]
        AtA[3 * a:3 * a + 3, 3 * a:3 * a + 3] += R.T @ R
        AtA[3 * b:3 * b + 3, 3 * b:3 * b + 3] += eye
        AtA[3 * a:3 * a + 3, 3 * b:3 * b + 3] += -R.T
        AtA[3 * b:3 * b + 3, 3 * a:3 * a + 3] += -R
    return AtA


def init_rotations(graph):
    """Column-wise least-squares initialization of global rotations.

    First columns come from the smallest eigenvector of the relative
    consistency system, second columns add an orthogonality penalty
    (weights 1/|edges| and 1/|images|) and are Gram-Schmidt corrected,
    third columns are cross products. Unregistered images get identity.
    """
    active = sorted(np.flatnonzero(graph.registered))
    index = {img: k for k, img in enumerate(active)}
    n = len(active)
    if n < 2:
        raise ValueError("need at least 2 registered images")
    n_edges = max(len(graph.edges), 1)

    AtA = _column_system(graph, index)
    _, vecs = np.linalg.eigh(AtA)
    c1 = vecs[:, 0].reshape(n, 3)
    norms = np.linalg.norm(c1, axis=1, keepdims=True)
    if np.any(norms < 1e-12):
        raise ValueError("degenerate first-column solution")
    c1 = c1 / norms

    # second column: same system plus per-image orthogonality penalty rows
    AtA2 = AtA / n_edges
    for img, k in index.items():
        v = c1[k]
        AtA2[3 * k:3 * k + 3, 3 * k:3 * k + 3] += np.outer(v, v) / n
    _, vecs2 = np.linalg.eigh(AtA2)
    c2 = vecs2[:, 0].reshape(n, 3)
    # Gram-Schmidt against the first column, then normalize
    c2 = c2 - np.sum(c2 * c1, axis=1, keepdims=True) * c1
    norms2 = np.linalg.norm(c2, axis=1, keepdims=True)
    if np.any(norms2 < 1e-12):
        raise ValueError("degenerate second-column solution")
    c2 = c2 / norms2
    c3 = np.cross(c1, c2)

    rotations = np.broadcast_to(np.eye(3), (graph.n_images, 3, 3)).copy()
    # the cross-product third column makes every output det +1; eigenvector
    # sign ambiguity only changes the arbitrary global gauge
    R_active = np.stack([c1, c2, c3], axis=-1)
    for img, k in index.items():
        rotations[img] = project_to_so3(R_active[k])
    return rotations


def geodesic_distance(R1, R2):
    """Angle of the relative rotation between (batched) rotation matrices."""
    R1 = np.asarray(R1, dtype=np.float64)
    R2 = np.asarray(R2, dtype=np.float64)
    tr = np.einsum("...ij,...ij->...", R1, R2)
    u = np.clip((tr - 1.0) / 2.0, -1.0, 1.0)
    return np.arccos(u)


_ACOS_CLAMP = 1.0 - 1e-12


def rotation_loss_and_grad(params6d, edges_i, edges_j, rel_rotations):
    """Mean geodesic loss over edges and its gradient w.r.t. 6D params.

    ``params6d`` has shape (n, 6); edges are index arrays; rel_rotations
    (m, 3, 3) map frame i to frame j.
    """
    n = params6d.shape[0]
    R = rot6d_to_matrix(params6d)
    Ri = R[edges_i]
    Rj = R[edges_j]
    target = rel_rotations @ Ri  # R^{i->j} R^{(i)}
    tr = np.einsum("mij,mij->m", Rj, target)
    u = np.clip((tr - 1.0) / 2.0, -_ACOS_CLAMP, _ACOS_CLAMP)
    m = len(u)
    loss = float(np.mean(np.arccos(u)))

    dd_du = -1.0 / np.sqrt(1.0 - u ** 2)
    scale = dd_du / (2.0 * m)
    # d tr / d Rj = rel R_i ; d tr / d Ri = rel^T Rj
    g_Rj = scale[:, None, None] * target
    g_Ri = scale[:, None, None] * np.einsum("mji,mjk->mik", rel_rotations, Rj)

    grad_R = np.zeros((n, 3, 3))
    np.add.at(grad_R, edges_j, g_Rj)
    np.add.at(grad_R, edges_i, g_Ri)

    J = rot6d_jacobian(params6d)  # (n, 9, 6)
    grad = np.einsum("nk,nkp->np", grad_R.reshape(n, 9), J)
    return loss, grad


def refine_rotations(init, graph, cfg):
    """Adam descent of the mean geodesic loss from an initialization.

    Stops early when the relative loss change over a 100-step window
    falls below 1e-9. Returns (rotations, loss history).
    """
    active = np.flatnonzero(graph.registered)
    remap = {img: k for k, img in enumerate(active)}
    edges_i = np.array([remap[e.i] for e in graph.edges], dtype=np.int64)
    edges_j = np.array([remap[e.j] for e in graph.edges], dtype=np.int64)
    rel = np.stack([e.rel_rotation for e in graph.edges])

    params = matrix_to_rot6d(init[active])
    opt = Adam(params.ravel(), lr=cfg.rotation_lr, beta1=cfg.adam_beta1,
               beta2=cfg.adam_beta2, eps=cfg.adam_eps)
    history = []
    window = 100
    # the geodesic gradient is unbounded at zero error, so Adam hovers
    # around the optimum; keep the best iterate instead of the last
    best_loss, best_params = np.inf, opt.params.copy()
    for step in range(cfg.rotation_steps):
        p = opt.params.reshape(len(active), 6)
        loss, grad = rotation_loss_and_grad(p, edges_i, edges_j, rel)
        if not np.isfinite(loss):
            raise FloatingPointError("non-finite rotation loss")
        history.append(loss)
        if loss < best_loss:
            best_loss, best_params = loss, opt.params.copy()
        if loss < 1e-12:
            break
        if step >= window:
            prev = history[step - window]
            if abs(prev - loss) < 1e-9 * max(prev, 1e-12):
                break
        opt.step(grad.ravel())
    out = init.copy()
    final = rot6d_to_matrix(best_params.reshape(len(active), 6))
    for k, img in enumerate(active):
        out[img] = project_to_so3(final[k])
    return out, history
