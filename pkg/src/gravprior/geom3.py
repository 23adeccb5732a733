"""Rotation and direction primitives.

Conventions used throughout the package:

* vectors are float64 arrays of shape ``(3,)`` (or ``(N, 3)`` where noted);
* quaternions are ``[w, x, y, z]`` arrays, Hamilton product;
* ``quat_to_rot(q)`` maps vectors from the rotated frame into the reference
  frame, i.e. for a body->world quaternion ``v_world = R @ v_body``.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import DegenerateVector

EPS_NORM = 1e-9

# (gx, gy, gz) -> (gx, gz, -gy); a proper rotation (det +1)
ARKIT_TO_EUROC = np.array(
    [[1.0, 0.0, 0.0],
     [0.0, 0.0, 1.0],
     [0.0, -1.0, 0.0]]
)


def normalize(v) -> np.ndarray:
    """Scale ``v`` to unit length.

    Accepts a single vector or an ``(N, 3)`` stack (row-wise). Raises
    ``DegenerateVector`` when any norm is at or below ``EPS_NORM``.
    """
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    if np.any(n <= EPS_NORM) or not np.all(np.isfinite(n)):
        raise DegenerateVector(f"cannot normalize vector with norm {n.min():.3g}")
    return v / n


def angle_deg(a, b) -> np.ndarray | float:
    """Angle between unit vectors in degrees, in [0, 180].

    Broadcasts over leading dimensions. Uses atan2 of the cross and dot
    products, which stays accurate near 0 and 180 where arccos does not.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    s = np.linalg.norm(np.cross(a, b), axis=-1)
    out = np.degrees(np.arctan2(s, np.sum(a * b, axis=-1)))
    return float(out) if out.ndim == 0 else out


def euler_rot(axis: str, angle: float) -> np.ndarray:
    """Right-handed elemental rotation about ``'X'``, ``'Y'`` or ``'Z'``."""
    c, s = math.cos(angle), math.sin(angle)
    axis = axis.upper()
    if axis == "X":
        return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])
    if axis == "Y":
        return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
    if axis == "Z":
        return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    raise ValueError(f"unknown axis {axis!r}")


def quat_normalize(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q)
    if n <= EPS_NORM:
        raise DegenerateVector("zero quaternion")
    return q / n


def quat_mul(p, q) -> np.ndarray:
    """Hamilton product ``p ⊗ q``."""
    pw, px, py, pz = p
    qw, qx, qy, qz = q
    return np.array([
        pw * qw - px * qx - py * qy - pz * qz,
        pw * qx + px * qw + py * qz - pz * qy,
        pw * qy - px * qz + py * qw + pz * qx,
        pw * qz + px * qy - py * qx + pz * qw,
    ])


def quat_conj(q) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]], dtype=float)


def quat_from_axis_angle(axis, angle: float) -> np.ndarray:
    axis = normalize(axis)
    h = 0.5 * angle
    return np.concatenate(([math.cos(h)], math.sin(h) * axis))


def quat_exp(rotvec) -> np.ndarray:
    """Unit quaternion of the rotation vector ``rotvec`` (axis * angle)."""
    rotvec = np.asarray(rotvec, dtype=float)
    theta = float(np.linalg.norm(rotvec))
    if theta < 1e-12:
        # second-order series keeps the step accurate for tiny rotations
        return quat_normalize(np.concatenate(([1.0 - theta * theta / 8.0], 0.5 * rotvec)))
    h = 0.5 * theta
    return np.concatenate(([math.cos(h)], (math.sin(h) / theta) * rotvec))


def quat_to_rot(q) -> np.ndarray:
    w, x, y, z = quat_normalize(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def rot_to_quat(R) -> np.ndarray:
    """Unit quaternion ``[w, x, y, z]`` (w >= 0) of a rotation matrix."""
    R = np.asarray(R, dtype=float)
    tr = np.trace(R)
    if tr > 0.0:
        s = 2.0 * math.sqrt(tr + 1.0)
        q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * math.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
    else:
        s = 2.0 * math.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
    q = quat_normalize(q)
    return -q if q[0] < 0 else q


def rot_from_two_vectors(a, b) -> np.ndarray:
    """Minimal rotation taking direction ``a`` onto direction ``b``, as a quaternion."""
    a = normalize(a)
    b = normalize(b)
    c = float(np.dot(a, b))
    if c < -1.0 + 1e-12:
        # antiparallel: any axis orthogonal to a works
        trial = np.array([1.0, 0.0, 0.0]) if abs(a[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
        return quat_from_axis_angle(np.cross(a, trial), math.pi)
    axis = np.cross(a, b)
    q = np.concatenate(([1.0 + c], axis))
    return quat_normalize(q)


def rotation_angle_deg(R) -> float:
    """Rotation angle of a rotation matrix, in degrees.

    Uses ``|R - I|_F = 2 sqrt(2) sin(theta / 2)``, which stays accurate for
    tiny angles where the trace formula loses about half the digits.
    """
    chord = float(np.linalg.norm(np.asarray(R, dtype=float) - np.eye(3)))
    return math.degrees(2.0 * math.asin(min(1.0, chord / (2.0 * math.sqrt(2.0)))))


def is_rotation(R, tol: float = 1e-6) -> bool:
    R = np.asarray(R, dtype=float)
    return (
        R.shape == (3, 3)
        and np.allclose(R.T @ R, np.eye(3), atol=tol)
        and abs(np.linalg.det(R) - 1.0) <= tol
    )


def arkit_to_euroc(g) -> np.ndarray:
    """Permute an ARKit camera-frame vector into the EuRoC camera convention.

    ARKit camera axes are X-right, Y-down, Z-forward; EuRoC here is X-right,
    Y-forward, Z-up. Works on ``(3,)`` or ``(N, 3)`` input.
    """
    g = np.asarray(g, dtype=float)
    return np.stack([g[..., 0], g[..., 2], -g[..., 1]], axis=-1)


def euroc_to_arkit(g) -> np.ndarray:
    g = np.asarray(g, dtype=float)
    return np.stack([g[..., 0], -g[..., 2], g[..., 1]], axis=-1)


def random_unit_vectors(rng: np.random.Generator, n: int) -> np.ndarray:
    """``n`` directions drawn uniformly on the sphere."""
    v = rng.standard_normal((n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    q = rng.standard_normal(4)
    return quat_to_rot(q / np.linalg.norm(q))


def rotate_about_random_axis(rng: np.random.Generator, g, angles_rad) -> np.ndarray:
    """Rotate each row of ``g`` by the matching angle about an axis perpendicular to it.

    The rotated vector makes exactly ``|angle|`` with the original.
    """
    g = np.atleast_2d(np.asarray(g, dtype=float))
    angles = np.broadcast_to(np.asarray(angles_rad, dtype=float), (g.shape[0],))
    t = rng.standard_normal(g.shape)
    t -= np.sum(t * g, axis=1, keepdims=True) * g
    t /= np.linalg.norm(t, axis=1, keepdims=True)
    out = np.cos(angles)[:, None] * g + np.sin(angles)[:, None] * t
    return out / np.linalg.norm(out, axis=1, keepdims=True)
