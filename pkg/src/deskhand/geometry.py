"""Small rotation helpers shared by the kinematics, world and control code.

Quaternions are scalar-first ``(w, x, y, z)`` everywhere in this package;
conversion to scipy's scalar-last layout happens only inside this module.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial.transform import Rotation

IDENTITY_QUAT = np.array([1.0, 0.0, 0.0, 0.0])


def quat_normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    n = float(np.linalg.norm(q))
    if n == 0.0:
        raise ValueError("zero-norm quaternion")
    q = q / n
    # canonical sign: w >= 0 keeps rotvec round-trips stable
    return -q if q[0] < 0 else q


def _to_scipy(q: np.ndarray) -> Rotation:
    w, x, y, z = q
    return Rotation.from_quat([x, y, z, w])


def _from_scipy(r: Rotation) -> np.ndarray:
    x, y, z, w = r.as_quat()
    return quat_normalize(np.array([w, x, y, z]))


def quat_to_mat(q: np.ndarray) -> np.ndarray:
    return _to_scipy(q).as_matrix()


def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return _from_scipy(_to_scipy(a) * _to_scipy(b))


def quat_from_rotvec(rv: np.ndarray) -> np.ndarray:
    return _from_scipy(Rotation.from_rotvec(np.asarray(rv, dtype=float)))


def quat_to_rotvec(q: np.ndarray) -> np.ndarray:
    return _to_scipy(q).as_rotvec()


def quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate vector(s) v (shape (3,) or (N,3)) by quaternion q."""
    return _to_scipy(q).apply(np.asarray(v, dtype=float))


def quat_step_toward(q: np.ndarray, q_target: np.ndarray, alpha: float) -> np.ndarray:
    """Move a fraction alpha of the relative rotation from q toward q_target."""
    rel = _to_scipy(q).inv() * _to_scipy(q_target)
    step = Rotation.from_rotvec(alpha * rel.as_rotvec())
    return _from_scipy(_to_scipy(q) * step)


# ---------------------------------------------------------------------------
# batched variants (leading dim B), pure numpy so they cost one pass
# ---------------------------------------------------------------------------

def quat_to_mat_batch(q: np.ndarray) -> np.ndarray:
    """(B, 4) scalar-first unit quaternions -> (B, 3, 3) rotation matrices."""
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    R = np.empty(q.shape[:1] + (3, 3))
    R[:, 0, 0] = 1.0 - 2.0 * (y * y + z * z)
    R[:, 0, 1] = 2.0 * (x * y - w * z)
    R[:, 0, 2] = 2.0 * (x * z + w * y)
    R[:, 1, 0] = 2.0 * (x * y + w * z)
    R[:, 1, 1] = 1.0 - 2.0 * (x * x + z * z)
    R[:, 1, 2] = 2.0 * (y * z - w * x)
    R[:, 2, 0] = 2.0 * (x * z - w * y)
    R[:, 2, 1] = 2.0 * (y * z + w * x)
    R[:, 2, 2] = 1.0 - 2.0 * (x * x + y * y)
    return R


def quat_from_rotvec_batch(rv: np.ndarray) -> np.ndarray:
    """(B, 3) rotation vectors -> (B, 4) scalar-first unit quaternions."""
    rv = np.asarray(rv, dtype=float)
    angle = np.linalg.norm(rv, axis=1)
    half = 0.5 * angle
    # sin(a/2)/a with its a -> 0 limit, so the zero rotation is exact
    small = angle < 1e-12
    k = np.where(small, 0.5, np.sin(half) / np.where(small, 1.0, angle))
    q = np.concatenate([np.cos(half)[:, None], k[:, None] * rv], axis=1)
    sign = np.where(q[:, 0] < 0.0, -1.0, 1.0)
    return q * sign[:, None]


def quat_to_rotvec_batch(q: np.ndarray) -> np.ndarray:
    """(B, 4) scalar-first unit quaternions -> (B, 3) rotation vectors."""
    q = np.asarray(q, dtype=float)
    sign = np.where(q[:, 0] < 0.0, -1.0, 1.0)
    q = q * sign[:, None]
    s = np.linalg.norm(q[:, 1:], axis=1)
    angle = 2.0 * np.arctan2(s, q[:, 0])
    small = s < 1e-12
    k = np.where(small, 2.0, angle / np.where(small, 1.0, s))
    return k[:, None] * q[:, 1:]


def quat_nlerp_step(q: np.ndarray, target: np.ndarray, alpha: float) -> np.ndarray:
    """Move batched quaternions a fraction alpha toward targets.

    Normalized lerp with hemisphere alignment; for the small per-substep
    steps of the wrist servo this is indistinguishable from the geodesic.
    """
    d = np.sum(q * target, axis=1, keepdims=True)
    t = np.where(d < 0.0, -target, target)
    out = q + alpha * (t - q)
    n = np.linalg.norm(out, axis=1, keepdims=True)
    return out / n
