"""First-order optimization kernel shared by all alignment stages.

Contains a plain Adam optimizer, the continuous 6D rotation
parameterization (two free columns, orthonormalized by Gram-Schmidt),
and a central finite-difference gradient checker used by the tests.
"""

import numpy as np


class Adam:
    """Standard Adam with bias correction, operating on a flat ndarray."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = np.asarray(params, dtype=np.float64).copy()
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = np.zeros_like(self.params)
        self.v = np.zeros_like(self.params)
        self.t = 0

    def step(self, grads):
        grads = np.asarray(grads, dtype=np.float64)
        if grads.shape != self.params.shape:
            raise ValueError("gradient shape mismatch")
        if not np.all(np.isfinite(grads)):
            raise FloatingPointError("non-finite gradients")
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grads
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grads ** 2
        m_hat = self.m / (1.0 - self.beta1 ** self.t)
        v_hat = self.v / (1.0 - self.beta2 ** self.t)
        self.params -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
        return self.params


def rot6d_to_matrix(v):
    """Map 6-vectors (..., 6) to rotation matrices (..., 3, 3).

    First column: normalized first half. Second column: second half with
    its projection onto the first column removed, then normalized. Third
    column: cross product of the first two.
    """
    v = np.asarray(v, dtype=np.float64)
    a = v[..., :3]
    b = v[..., 3:]
    na = np.linalg.norm(a, axis=-1, keepdims=True)
    if np.any(na < 1e-12):
        raise ValueError("degenerate 6D rotation input: zero first half")
    b1 = a / na
    u = b - np.sum(b1 * b, axis=-1, keepdims=True) * b1
    nu = np.linalg.norm(u, axis=-1, keepdims=True)
    if np.any(nu < 1e-12):
        raise ValueError("degenerate 6D rotation input: collinear halves")
    b2 = u / nu
    b3 = np.cross(b1, b2)
    return np.stack([b1, b2, b3], axis=-1)


def matrix_to_rot6d(R):
    """Inverse of rot6d_to_matrix on actual rotation matrices (first two columns)."""
    R = np.asarray(R, dtype=np.float64)
    return np.concatenate([R[..., :, 0], R[..., :, 1]], axis=-1)


def rot6d_jacobian(v):
    """Jacobian of rot6d_to_matrix, shape (..., 9, 6).

    Rows index the flattened (row-major) rotation matrix, columns the
    6 parameters. Used by the analytic gradients of the alignment losses.
    """
    v = np.asarray(v, dtype=np.float64)
    a = v[..., :3]
    b = v[..., 3:]
    batch = a.shape[:-1]
    eye = np.broadcast_to(np.eye(3), batch + (3, 3))

    na = np.linalg.norm(a, axis=-1, keepdims=True)
    b1 = a / na
    # d b1 / d a
    db1_da = (eye - b1[..., :, None] * b1[..., None, :]) / na[..., None]

    dot = np.sum(b1 * b, axis=-1, keepdims=True)
    u = b - dot * b1
    nu = np.linalg.norm(u, axis=-1, keepdims=True)
    b2 = u / nu
    # u = b - (b1.b) b1  =>  du = (I - b1 b1^T) db - (b1 b^T + (b1.b) I) db1
    du_db = eye - b1[..., :, None] * b1[..., None, :]
    du_db1 = -(b1[..., :, None] * b[..., None, :] + dot[..., None] * eye)
    db2_du = (eye - b2[..., :, None] * b2[..., None, :]) / nu[..., None]
    db2_da = db2_du @ du_db1 @ db1_da
    db2_db = db2_du @ du_db

    # b3 = b1 x b2  =>  db3 = -[b2]_x db1 + [b1]_x db2
    sb1 = skew(b1)
    sb2 = skew(b2)
    db3_da = -sb2 @ db1_da + sb1 @ db2_da
    db3_db = sb1 @ db2_db

    J = np.zeros(batch + (9, 6))
    # column k of R occupies flat indices k, k+3, k+6 (row-major)
    for row in range(3):
        J[..., 3 * row + 0, :3] = db1_da[..., row, :]
        J[..., 3 * row + 1, :3] = db2_da[..., row, :]
        J[..., 3 * row + 1, 3:] = db2_db[..., row, :]
        J[..., 3 * row + 2, :3] = db3_da[..., row, :]
        J[..., 3 * row + 2, 3:] = db3_db[..., row, :]
    return J


def skew(t):
    """Cross-product matrices [t]_x for vectors of shape (..., 3)."""
    t = np.asarray(t, dtype=np.float64)
    S = np.zeros(t.shape[:-1] + (3, 3))
    S[..., 0, 1] = -t[..., 2]
    S[..., 0, 2] = t[..., 1]
    S[..., 1, 0] = t[..., 2]
    S[..., 1, 2] = -t[..., 0]
    S[..., 2, 0] = -t[..., 1]
    S[..., 2, 1] = t[..., 0]
    return S


def fd_check(f, theta, h=1e-6, grad=None):
    """Max relative discrepancy between an analytic gradient and central
    finite differences of scalar function ``f`` at ``theta``.

    ``grad`` defaults to the second return value of ``f`` (loss, grad).
    """
    theta = np.asarray(theta, dtype=np.float64)
    if grad is None:
        _, grad = f(theta)

        def value(x):
            return f(x)[0]
    else:
        value = f
    grad = np.asarray(grad, dtype=np.float64).ravel()
    fd = np.zeros_like(grad)
    flat = theta.ravel().copy()
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + h
        fp = value(flat.reshape(theta.shape))
        flat[k] = orig - h
        fm = value(flat.reshape(theta.shape))
        flat[k] = orig
        fd[k] = (fp - fm) / (2.0 * h)
    scale = np.maximum(np.abs(fd), np.abs(grad))
    scale = np.maximum(scale, np.max(scale) * 1e-6 + 1e-12)
    return float(np.max(np.abs(fd - grad) / scale))
