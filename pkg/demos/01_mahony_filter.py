"""Track gravity with the complementary filter on a simulated handheld clip.

We start the filter with a deliberately wrong attitude, watch the
accelerometer feedback pull it back, then switch the feedback off to see
pure gyro integration drift away under a small bias.
"""

import numpy as np

from gravprior import geom3
from gravprior.mahony import ImuSample, MahonyGains, run_sequence
from gravprior.simulate import simulate_recording

rec = simulate_recording(duration=20, imu_rate=200, frame_rate=2, seed=1,
                         gyro_noise=0.003, accel_noise=0.05, first_accel_tilt_deg=15.0)
frames = [p.t for p in rec.poses]

# the simulator keeps the true body-frame gravity for every IMU sample
imu_t = np.array([s.t for s in rec.imu])


def true_gravity(t):
    return rec.g_body[np.searchsorted(imu_t, t, side="right") - 1]


print("time   error (default gains)   error (gyro only, 0.01 rad/s bias)")
with_feedback = run_sequence(rec.imu, frames, MahonyGains())
biased = [ImuSample(s.t, s.gyro + 0.01, s.accel) for s in rec.imu]
gyro_only = run_sequence(biased, frames, MahonyGains(kp=0.0, ki=0.0))
for a, b in zip(with_feedback[::4], gyro_only[::4]):
    print(f"{a.t:5.1f}  {geom3.angle_deg(a.g_imu, true_gravity(a.t)):8.2f} deg"
          f"  {geom3.angle_deg(b.g_imu, true_gravity(b.t)):22.2f} deg")
