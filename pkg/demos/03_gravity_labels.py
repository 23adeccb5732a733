"""Turn a recording into per-frame gravity labels and priors.

Writes a simulated recording in the Stray Scanner layout, reads it back,
runs the full labelling pipeline and prints the per-sequence summary plus a
few frames. The CSV written at the end is what the stats subcommand reads.
"""

import sys
import tempfile
from pathlib import Path

import numpy as np

from gravprior import geom3
from gravprior.ingest import Intrinsics, StrayRecording, read_stray, write_stray
from gravprior.labels import build_sequence, tilt_histogram, write_sequence
from gravprior.simulate import simulate_recording

out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp())
rec = simulate_recording(duration=30, imu_rate=100, frame_rate=10, seed=4, max_rate=1.5,
                         gyro_noise=0.003, accel_noise=0.1)
write_stray(StrayRecording(rec.poses, rec.imu, Intrinsics(1500.0, 1500.0, 960.0, 720.0, 1920, 1440)),
            out / "session")
stray = read_stray(out / "session")
seq = build_sequence(stray.odometry, stray.imu, seq_id="session")

print(f"frames: {len(seq.frames)} (dropped {seq.dropped_frames})")
print(f"mounting fit: residual {seq.alignment.residual_rms_deg:.2f} deg, {seq.alignment.condition_flag}")
print(f"fit vs simulated mounting: "
      f"{geom3.rotation_angle_deg(seq.alignment.R @ rec.expected_alignment.T):.3f} deg")
err = np.array([f.prior_error_deg for f in seq.frames if not f.burn_in])
print(f"prior error after burn-in: mean {err.mean():.2f}, max {err.max():.2f} deg")
print(f"tilt histogram (0-60, 60-120, 120-180): {tilt_histogram(seq.frames)}\n")

print("    t    tilt   prior err   ratio")
for f in seq.frames[::60]:
    print(f"{f.t:5.1f}  {f.tilt_deg:6.1f}  {f.prior_error_deg:9.2f}  {f.nongravity_ratio:6.3f}")

write_sequence(seq, out / "session.csv")
print(f"\nlabels written to {out / 'session.csv'}")
