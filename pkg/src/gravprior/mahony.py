"""Mahony complementary filter producing per-frame gravity priors.

The filter tracks the body->world orientation (Z-up world) of the IMU. The
gyroscope is integrated at the native sample rate; the accelerometer, which
reads specific force (pointing up when static), feeds a proportional-integral
correction that pulls the estimated up direction toward the measured one.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from . import geom3
from .errors import DegenerateVector, EmptyStream, FrameBeforeStream, NonMonotonicTime

G = 9.81
WORLD_UP = np.array([0.0, 0.0, 1.0])


class ImuSample(NamedTuple):
    t: float
    gyro: np.ndarray   # rad/s, body frame
    accel: np.ndarray  # m/s^2, body frame


class GravityEstimate(NamedTuple):
    t: float
    g_imu: np.ndarray  # unit, body frame


@dataclass(frozen=True)
class MahonyGains:
    kp: float = 0.5
    ki: float = 0.01
    # +1: accelerometer reads +g along up when static (iOS style); -1 flips it
    accel_sign: float = 1.0
    g: float = G
    # skip the accelerometer correction when | |a|/g - 1 | exceeds this
    accel_reject: float = 0.5
    dt_max: float = 0.1

    def __post_init__(self):
        if self.kp < 0 or self.ki < 0:
            raise ValueError("Mahony gains must be non-negative")
        if self.accel_sign not in (1.0, -1.0, 1, -1):
            raise ValueError("accel_sign must be +1 or -1")


@dataclass(frozen=True)
class MahonyState:
    q: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    integral_fb: np.ndarray = field(default_factory=lambda: np.zeros(3))
    last_t: float | None = None
    gains: MahonyGains = field(default_factory=MahonyGains)


def _up_body(q) -> np.ndarray:
    # third row of R(q) = R^T applied to world up
    w, x, y, z = q
    return np.array([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)])


def mahony_init(gains: MahonyGains | None = None, first_accel=None) -> MahonyState:
    """Initial state; tilt-aligned to ``first_accel`` when given (yaw = 0)."""
    gains = gains or MahonyGains()
    if first_accel is None:
        return MahonyState(gains=gains)
    a = np.asarray(first_accel, dtype=float)
    if np.linalg.norm(a) <= geom3.EPS_NORM:
        raise DegenerateVector("zero accelerometer reading at init")
    measured_up = gains.accel_sign * geom3.normalize(a)
    # R(q) must send the body-frame up direction onto world up
    q = geom3.rot_from_two_vectors(measured_up, WORLD_UP)
    return MahonyState(q=q, gains=gains)


def gravity_body(state: MahonyState) -> np.ndarray:
    """Gravity direction in the body frame, the negated estimated up."""
    return -geom3.normalize(_up_body(state.q))


def mahony_update(state: MahonyState, s: ImuSample) -> MahonyState:
    """Advance the filter by one IMU sample."""
    t = float(s.t)
    if state.last_t is None:
        return replace(state, last_t=t)
    if t < state.last_t:
        raise NonMonotonicTime(f"sample at t={t} precedes filter time {state.last_t}")
    dt = t - state.last_t
    if dt == 0.0:
        return state

    gains = state.gains
    gyro = np.asarray(s.gyro, dtype=float)
    accel = np.asarray(s.accel, dtype=float)
    omega = gyro
    integral_fb = state.integral_fb

    a_norm = float(np.linalg.norm(accel))
    use_accel = (
        dt <= gains.dt_max
        and a_norm > geom3.EPS_NORM
        and abs(a_norm / gains.g - 1.0) <= gains.accel_reject
        and (gains.kp > 0 or gains.ki > 0)
    )
    if use_accel:
        measured_up = (gains.accel_sign / a_norm) * accel
        e = np.cross(measured_up, _up_body(state.q))
        if gains.ki > 0:
            integral_fb = integral_fb + gains.ki * e * dt
        omega = gyro + gains.kp * e + integral_fb
    elif gains.ki > 0:
        omega = gyro + integral_fb

    q = geom3.quat_mul(state.q, geom3.quat_exp(omega * dt))
    q = q / math.sqrt(float(q @ q))
    return MahonyState(q=q, integral_fb=integral_fb, last_t=t, gains=gains)


def run_sequence(
    imu: Sequence[ImuSample],
    frame_times: Iterable[float],
    gains: MahonyGains | None = None,
) -> list[GravityEstimate]:
    """Filter a whole IMU stream and sample the estimate at each frame time.

    The estimate reported for a frame is the state after the most recent IMU
    sample at or before that frame time (no interpolation).
    """
    if len(imu) == 0:
        raise EmptyStream("IMU stream is empty")
    gains = gains or MahonyGains()
    frame_times = [float(t) for t in frame_times]
    if any(b < a for a, b in zip(frame_times, frame_times[1:])):
        raise NonMonotonicTime("frame times are not sorted")
    t0 = float(imu[0].t)
    if frame_times and frame_times[0] < t0:
        raise FrameBeforeStream(f"frame at t={frame_times[0]} precedes first IMU sample t={t0}")

    a0 = np.asarray(imu[0].accel, dtype=float)
    first_accel = a0 if np.linalg.norm(a0) > geom3.EPS_NORM else None
    state = mahony_init(gains, first_accel)

    out: list[GravityEstimate] = []
    fi = 0
    n = len(imu)
    for i, s in enumerate(imu):
        state = mahony_update(state, s)
        next_t = float(imu[i + 1].t) if i + 1 < n else math.inf
        # emit for every frame in [t_i, t_{i+1})
        while fi < len(frame_times) and frame_times[fi] < next_t:
            out.append(GravityEstimate(frame_times[fi], gravity_body(state)))
            fi += 1
    return out


def nearest_preceding(times: Sequence[float], t: float) -> int:
    """Index of the last entry of sorted ``times`` at or before ``t`` (-1 if none)."""
    return bisect.bisect_right(times, t) - 1
