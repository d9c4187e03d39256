"""Rotation algebra: 6D rotation codec, SO(3) exp/log, angular velocity.

Conventions used throughout the package:
  * rotation matrices are world-from-body, applied as ``R @ v``
  * the 6D code is the first two columns of the matrix, column-major
  * angular velocity is body-frame (left-trivialized), matching what a
    strapped-down gyroscope reports
"""

from __future__ import annotations

import numpy as np

from .errors import DegenerateInput, InvalidArgument

# Below this angle (rad) log/exp switch to the first-order series.
SMALL_ANGLE = 1e-7
# Above this angle the log uses the diagonal (near-pi) branch.
NEAR_PI = np.pi - 1e-4

_EPS_COLUMN = 1e-8


def rot6d_to_matrix(r: np.ndarray) -> np.ndarray:
    """Decode a 6-vector (two leading columns) into a proper rotation matrix.

    Gram-Schmidt: normalize column one, orthogonalize-normalize column two,
    column three is their cross product. Invariant to positive per-column
    scaling of the input.
    """
    r = np.asarray(r, dtype=np.float64).reshape(6)
    a1, a2 = r[:3], r[3:]
    n1 = np.linalg.norm(a1)
    if n1 <= _EPS_COLUMN:
        raise DegenerateInput("first column is near-zero")
    b1 = a1 / n1
    a2p = a2 - np.dot(b1, a2) * b1
    n2 = np.linalg.norm(a2p)
    if n2 <= _EPS_COLUMN:
        raise DegenerateInput("columns are parallel or second column near-zero")
    b2 = a2p / n2
    b3 = np.cross(b1, b2)
    return np.stack([b1, b2, b3], axis=1)


def matrix_to_rot6d(R: np.ndarray) -> np.ndarray:
    """Encode a rotation matrix as its first two columns (column-major 6-vector)."""
    R = np.asarray(R, dtype=np.float64)
    return np.concatenate([R[:, 0], R[:, 1]])


def rot6d_to_matrix_batch(r: np.ndarray, fallback: bool = False) -> np.ndarray:
    """Vectorized 6D decode for an (..., 6) array.

    With ``fallback=True`` degenerate inputs decode to identity instead of
    raising; used when decoding network outputs that carry no guarantee.
    """
    r = np.asarray(r, dtype=np.float64)
    shape = r.shape[:-1]
    flat = r.reshape(-1, 6)
    a1, a2 = flat[:, :3], flat[:, 3:]
    n1 = np.linalg.norm(a1, axis=1)
    bad1 = n1 <= _EPS_COLUMN
    b1 = a1 / np.where(bad1, 1.0, n1)[:, None]
    a2p = a2 - np.sum(b1 * a2, axis=1, keepdims=True) * b1
    n2 = np.linalg.norm(a2p, axis=1)
    bad2 = n2 <= _EPS_COLUMN
    b2 = a2p / np.where(bad2, 1.0, n2)[:, None]
    bad = bad1 | bad2
    if bad.any():
        if not fallback:
            raise DegenerateInput("degenerate 6D rotation in batch")
        b1[bad] = np.array([1.0, 0.0, 0.0])
        b2[bad] = np.array([0.0, 1.0, 0.0])
    b3 = np.cross(b1, b2)
    out = np.stack([b1, b2, b3], axis=2)
    return out.reshape(*shape, 3, 3)


def matrix_to_rot6d_batch(R: np.ndarray) -> np.ndarray:
    """Vectorized encode for an (..., 3, 3) array."""
    R = np.asarray(R, dtype=np.float64)
    return np.concatenate([R[..., :, 0], R[..., :, 1]], axis=-1)


def exp_so3(v: np.ndarray) -> np.ndarray:
    """Rodrigues: map an axis-angle 3-vector to a rotation matrix."""
    v = np.asarray(v, dtype=np.float64).reshape(3)
    theta = np.linalg.norm(v)
    K = np.array([
        [0.0, -v[2], v[1]],
        [v[2], 0.0, -v[0]],
        [-v[1], v[0], 0.0],
    ])
    if theta < SMALL_ANGLE:
        return np.eye(3) + K + 0.5 * (K @ K)
    s = np.sin(theta) / theta
    c = (1.0 - np.cos(theta)) / (theta * theta)
    return np.eye(3) + s * K + c * (K @ K)


def log_so3(R: np.ndarray) -> np.ndarray:
    """Inverse Rodrigues with stable small-angle and near-pi branches."""
    R = np.asarray(R, dtype=np.float64)
    tr = np.clip((np.trace(R) - 1.0) * 0.5, -1.0, 1.0)
    theta = np.arccos(tr)
    w = 0.5 * np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if theta < SMALL_ANGLE:
        # first-order: log(R) ~ skew-part
        return w
    if theta > NEAR_PI:
        # near pi the skew part vanishes; recover the axis from the exact
        # symmetric decomposition (R + R^T)/2 - cos(theta) I = (1-cos) a a^T
        c = tr
        S = 0.5 * (R + R.T) - c * np.eye(3)
        diag = np.maximum(np.diag(S) / (1.0 - c), 0.0)
        axis = np.sqrt(diag)
        k = int(np.argmax(axis))
        if axis[k] <= 0.0:
            raise DegenerateInput("cannot extract rotation axis near pi")
        for i in range(3):
            if i != k and S[k, i] < 0.0:
                axis[i] = -axis[i]
        axis /= np.linalg.norm(axis)
        # orient so that the (possibly tiny) skew part agrees
        if np.dot(axis, w) < 0.0:
            axis = -axis
        return axis * theta
    return w * (theta / np.sin(theta))


def angular_velocity(R_prev: np.ndarray, R_next: np.ndarray, dt: float) -> np.ndarray:
    """Body-frame angular velocity (rad/s) taking R_prev to R_next over dt."""
    if dt <= 0.0:
        raise InvalidArgument(f"dt must be positive, got {dt}")
    R_prev = np.asarray(R_prev, dtype=np.float64)
    R_next = np.asarray(R_next, dtype=np.float64)
    return log_so3(R_prev.T @ R_next) / dt


def slerp(R0: np.ndarray, R1: np.ndarray, w: float) -> np.ndarray:
    """Geodesic interpolation R0 -> R1 at fraction w in [0, 1]."""
    if w == 0.0:
        return np.asarray(R0, dtype=np.float64).copy()
    if w == 1.0:
        return np.asarray(R1, dtype=np.float64).copy()
    return R0 @ exp_so3(w * log_so3(np.asarray(R0).T @ np.asarray(R1)))


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniform random rotation matrix (via a normalized 4-vector)."""
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def assert_rotation(R: np.ndarray, tol: float = 1e-9) -> None:
    """Raise DegenerateInput unless R is orthonormal with det +1 within tol."""
    R = np.asarray(R, dtype=np.float64)
    if R.shape != (3, 3):
        raise DegenerateInput(f"expected 3x3 matrix, got {R.shape}")
    if np.abs(R @ R.T - np.eye(3)).max() > tol or abs(np.linalg.det(R) - 1.0) > tol:
        raise DegenerateInput("matrix is not a proper rotation")
