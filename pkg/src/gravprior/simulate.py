"""Synthetic recordings with known truth.

Generates a consistent IMU stream and VIO pose stream from one simulated
body trajectory, so that every stage of the label pipeline can be checked
against exact values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import geom3
from .labels import PoseSample
from .mahony import G, ImuSample

# maps Z-up world vectors into the ARKit Y-up world
ZUP_TO_ARKIT_WORLD = geom3.ARKIT_TO_EUROC


@dataclass
class SyntheticRecording:
    poses: list[PoseSample]
    imu: list[ImuSample]
    R_imu_to_cam: np.ndarray        # body -> ARKit camera
    q_wb: np.ndarray                # (N_imu, 4) true body->world orientation
    g_body: np.ndarray              # (N_imu, 3) true body-frame gravity

    @property
    def expected_alignment(self) -> np.ndarray:
        """Rotation the Procrustes fit should recover (body -> EuRoC camera)."""
        return geom3.ARKIT_TO_EUROC @ self.R_imu_to_cam


def simulate_recording(
    duration: float = 10.0,
    imu_rate: float = 100.0,
    frame_rate: float = 10.0,
    *,
    motion: str = "random",
    max_rate: float = 1.0,
    segment_s: float = 0.5,
    R_imu_to_cam=None,
    q0=None,
    gyro_noise: float = 0.0,
    accel_noise: float = 0.0,
    first_accel_tilt_deg: float = 0.0,
    t0: float = 0.0,
    seed: int = 0,
) -> SyntheticRecording:
    """Simulate a handheld recording.

    ``motion='static'`` holds the initial orientation; ``'random'`` applies
    piecewise-constant angular velocity (uniform per axis in ``±max_rate``
    rad/s, redrawn every ``segment_s``). The gyro sample at ``t_k`` is the
    rate over ``(t_{k-1}, t_k]``, matching how the filter consumes it.
    ``first_accel_tilt_deg`` corrupts the first accelerometer reading, which
    seeds the filter's initial tilt.
    """
    rng = np.random.default_rng(seed)
    n = int(round(duration * imu_rate)) + 1
    dt = 1.0 / imu_rate
    if R_imu_to_cam is None:
        R_imu_to_cam = geom3.random_rotation(rng)
    q = geom3.quat_normalize(q0) if q0 is not None else geom3.rot_to_quat(geom3.random_rotation(rng))

    seg_len = max(1, int(round(segment_s * imu_rate)))
    omega = np.zeros(3)
    q_wb = np.empty((n, 4))
    gyro = np.zeros((n, 3))
    for k in range(n):
        if k > 0:
            if motion == "random" and (k - 1) % seg_len == 0:
                omega = rng.uniform(-max_rate, max_rate, 3)
            elif motion == "static":
                omega = np.zeros(3)
            q = geom3.quat_mul(q, geom3.quat_exp(omega * dt))
            q /= np.linalg.norm(q)
            gyro[k] = omega
        q_wb[k] = q

    g_body = np.empty((n, 3))
    accel = np.empty((n, 3))
    for k in range(n):
        R_wb = geom3.quat_to_rot(q_wb[k])
        g_body[k] = R_wb.T @ np.array([0.0, 0.0, -1.0])
        accel[k] = -G * g_body[k]
    if gyro_noise:
        gyro[1:] += rng.normal(0.0, gyro_noise, (n - 1, 3))
    if accel_noise:
        accel += rng.normal(0.0, accel_noise, (n, 3))
    if first_accel_tilt_deg:
        accel[0] = G * geom3.rotate_about_random_axis(
            rng, accel[0] / np.linalg.norm(accel[0]), math.radians(first_accel_tilt_deg))[0]

    times = t0 + dt * np.arange(n)
    imu = [ImuSample(float(times[k]), gyro[k].copy(), accel[k].copy()) for k in range(n)]

    step = imu_rate / frame_rate
    frame_idx = sorted({int(round(i * step)) for i in range(int(duration * frame_rate) + 1)
                        if int(round(i * step)) < n})
    R_ci = R_imu_to_cam.T
    poses = []
    for k in frame_idx:
        R_wc = ZUP_TO_ARKIT_WORLD @ geom3.quat_to_rot(q_wb[k]) @ R_ci
        poses.append(PoseSample(float(times[k]), geom3.rot_to_quat(R_wc), np.zeros(3)))
    return SyntheticRecording(poses=poses, imu=imu, R_imu_to_cam=R_imu_to_cam,
                              q_wb=q_wb, g_body=g_body)
