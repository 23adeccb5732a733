"""IMU->camera rotation from paired gravity directions.

Solves ``argmin_{R in SO(3)} sum_i |g_cam_i - R g_imu_i|^2`` through the SVD
of the cross-covariance ``M = G_cam^T G_imu``. The SVD is a fixed-size
one-sided Jacobi iteration so the result does not depend on a LAPACK build.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import geom3
from .errors import InsufficientPairs, NoConvergence

MAX_SWEEPS = 60


@dataclass(frozen=True)
class AlignmentResult:
    R: np.ndarray
    residual_rms_deg: float
    condition_flag: str  # "well_posed" | "degenerate"
    singular_values: np.ndarray
    n_pairs: int


def cross_covariance(g_cam, g_imu) -> np.ndarray:
    """``M[a, b] = sum_i g_cam[i, a] * g_imu[i, b]``."""
    g_cam = np.asarray(g_cam, dtype=float).reshape(-1, 3)
    g_imu = np.asarray(g_imu, dtype=float).reshape(-1, 3)
    if g_cam.shape != g_imu.shape:
        raise ValueError("paired direction lists differ in length")
    return g_cam.T @ g_imu


def _complete_basis(U: np.ndarray, k: int) -> None:
    """Overwrite columns k.. of U with an orthonormal completion of columns :k."""
    if k == 0:
        U[:] = np.eye(3)
        return
    if k == 1:
        u0 = U[:, 0]
        trial = np.eye(3)[int(np.argmin(np.abs(u0)))]
        u1 = trial - (trial @ u0) * u0
        U[:, 1] = u1 / np.linalg.norm(u1)
    U[:, 2] = np.cross(U[:, 0], U[:, 1])


def svd3(M, max_sweeps: int = MAX_SWEEPS):
    """Singular value decomposition of a 3x3 matrix.

    Returns ``(U, S, V)`` with ``M = U @ diag(S) @ V.T``, ``S`` sorted
    descending and non-negative, ``U`` and ``V`` orthogonal. One-sided
    (Hestenes) Jacobi: column pairs of ``A = M V`` are rotated until mutually
    orthogonal, then ``S`` are the column norms and ``U`` the normalized
    columns.
    """
    A = np.array(M, dtype=float, copy=True)
    if A.shape != (3, 3):
        raise ValueError("svd3 expects a 3x3 matrix")
    if not np.all(np.isfinite(A)):
        raise ValueError("svd3 input must be finite")
    # work at unit scale so column dot products neither overflow nor underflow
    scale = float(np.abs(A).max())
    if scale > 0.0:
        A /= scale
    V = np.eye(3)
    eps = np.finfo(float).eps
    # columns this small (relative to the unit-scaled matrix) count as zero
    negligible = 1e-200

    for _ in range(max_sweeps):
        rotated = False
        for i, j in ((0, 1), (0, 2), (1, 2)):
            ai, aj = A[:, i], A[:, j]
            alpha = ai @ ai
            beta = aj @ aj
            gamma = ai @ aj
            if alpha < negligible or beta < negligible:
                continue
            if gamma == 0.0 or abs(gamma) <= eps * math.sqrt(alpha) * math.sqrt(beta):
                continue
            rotated = True
            zeta = (beta - alpha) / (2.0 * gamma)
            t = math.copysign(1.0, zeta) / (abs(zeta) + math.hypot(1.0, zeta))
            c = 1.0 / math.sqrt(1.0 + t * t)
            s = c * t
            Ai = A[:, i].copy()
            A[:, i] = c * Ai - s * A[:, j]
            A[:, j] = s * Ai + c * A[:, j]
            Vi = V[:, i].copy()
            V[:, i] = c * Vi - s * V[:, j]
            V[:, j] = s * Vi + c * V[:, j]
        if not rotated:
            break
    else:
        raise NoConvergence(f"Jacobi SVD did not converge in {max_sweeps} sweeps")

    S = np.linalg.norm(A, axis=0)
    order = np.argsort(-S, kind="stable")
    S = S[order]
    A = A[:, order]
    V = V[:, order]

    U = np.zeros((3, 3))
    tiny = max(S[0], 0.0) * 1e-13
    k = 0
    while k < 3 and S[k] > tiny and S[k] > 0.0:
        u = A[:, k] / S[k]
        U[:, k] = u / np.linalg.norm(u)
        k += 1
    if k < 3:
        _complete_basis(U, k)
    if scale > 0.0:
        S = S * scale
    return U, S, V


def solve_procrustes(g_cam, g_imu, sigma_min_per_pair: float = 1e-6) -> AlignmentResult:
    """Best-fit rotation taking IMU-frame directions onto camera-frame ones."""
    g_cam = np.asarray(g_cam, dtype=float).reshape(-1, 3)
    g_imu = np.asarray(g_imu, dtype=float).reshape(-1, 3)
    n = g_cam.shape[0]
    if g_imu.shape[0] != n:
        raise ValueError("paired direction lists differ in length")
    if n < 3:
        raise InsufficientPairs(f"need at least 3 pairs, got {n}")

    M = cross_covariance(g_cam, g_imu)
    U, S, V = svd3(M)
    d = 1.0 if np.linalg.det(U @ V.T) >= 0.0 else -1.0
    R = U @ np.diag([1.0, 1.0, d]) @ V.T

    aligned = g_imu @ R.T
    err = geom3.angle_deg(g_cam, aligned)
    rms = float(np.sqrt(np.mean(np.square(err))))
    flag = "degenerate" if S[1] < sigma_min_per_pair * n else "well_posed"
    return AlignmentResult(R=R, residual_rms_deg=rms, condition_flag=flag,
                           singular_values=S, n_pairs=n)


def align_sequence(R, g_imu) -> np.ndarray:
    """Rotate body-frame gravity estimates into the camera frame.

    ``g_imu`` is an ``(N, 3)`` array or a sequence of objects with a
    ``g_imu`` attribute (e.g. ``GravityEstimate``).
    """
    if isinstance(g_imu, Sequence) and len(g_imu) and hasattr(g_imu[0], "g_imu"):
        g_imu = np.array([e.g_imu for e in g_imu])
    g = np.asarray(g_imu, dtype=float).reshape(-1, 3)
    return geom3.normalize(g @ np.asarray(R, dtype=float).T)


def rotation_error_deg(R_est, R_true) -> float:
    return geom3.rotation_angle_deg(np.asarray(R_est) @ np.asarray(R_true).T)
