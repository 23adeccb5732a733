import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gravprior import geom3
from gravprior.errors import EmptyStream, EmptyWindow, NoTemporalOverlap
from gravprior.labels import (
    FRAME_COLUMNS,
    TABLE1_TILT_EDGES,
    PoseSample,
    build_labels,
    build_sequence,
    gravity_from_pose,
    nongravity_ratio,
    read_sequence,
    tilt_deg,
    tilt_histogram,
    write_sequence,
)
from gravprior.mahony import G, ImuSample, MahonyGains
from gravprior.simulate import simulate_recording

from .conftest import unit_quaternions

IDENTITY = np.array([1.0, 0, 0, 0])


def test_gravity_from_pose_examples():
    np.testing.assert_array_equal(gravity_from_pose(IDENTITY), [0, 0, 1])
    qz180 = geom3.quat_from_axis_angle([0, 0, 1], math.pi)
    np.testing.assert_allclose(gravity_from_pose(qz180), [0, 0, -1], atol=1e-15)
    # the ARKit-frame value before conversion is (0, 1, 0)
    np.testing.assert_allclose(geom3.euroc_to_arkit(gravity_from_pose(qz180)), [0, 1, 0], atol=1e-15)


@given(unit_quaternions())
def test_gravity_from_pose_unit(q):
    assert np.linalg.norm(gravity_from_pose(q)) == pytest.approx(1.0, abs=1e-12)


@given(unit_quaternions(), st.floats(-math.pi, math.pi))
def test_gravity_is_invariant_to_world_yaw(q, psi):
    # yaw about the ARKit world up axis (Y), applied on the world side
    q_yaw = geom3.quat_from_axis_angle([0, 1, 0], psi)
    np.testing.assert_allclose(gravity_from_pose(geom3.quat_mul(q_yaw, q)), gravity_from_pose(q),
                               atol=1e-9)


def test_camera_side_yaw_is_not_invariant():
    # composing on the camera side changes the camera's own orientation
    q = geom3.quat_from_axis_angle([1, 0, 0], 0.4)
    q_z = geom3.quat_from_axis_angle([0, 0, 1], 0.9)
    assert geom3.angle_deg(gravity_from_pose(geom3.quat_mul(q, q_z)), gravity_from_pose(q)) > 1.0


def test_build_labels():
    poses = [PoseSample(t, IDENTITY, np.zeros(3)) for t in (0.0, 0.1, 0.2)]
    labels = build_labels(poses)
    assert [t for t, _ in labels] == [0.0, 0.1, 0.2]
    for _, g in labels:
        np.testing.assert_array_equal(g, [0, 0, 1])
    with pytest.raises(EmptyStream):
        build_labels([])


def test_build_labels_matches_sequential_map_1e5():
    rng = np.random.default_rng(0)
    q = rng.normal(size=(100_000, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    poses = [PoseSample(float(i), q[i], np.zeros(3)) for i in range(len(q))]
    labels = build_labels(poses)
    # oracle: vectorized R^T (0,-1,0) = -(second row of R), then the permutation
    w, x, y, z = q.T
    row1 = np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], axis=1)
    oracle = geom3.arkit_to_euroc(-row1)
    np.testing.assert_allclose(np.array([g for _, g in labels]), oracle, atol=1e-12)


def test_nongravity_ratio_examples():
    assert nongravity_ratio([[0, 0, 9.81]]) == 0.0
    assert nongravity_ratio([[0, 0, 19.62]]) == 1.0
    assert nongravity_ratio([[0, 0, 9.81], [0, 0, 14.715]]) == pytest.approx(0.25, abs=1e-15)
    with pytest.raises(EmptyWindow):
        nongravity_ratio([])


def test_tilt_examples():
    assert tilt_deg([0, 0, 1]) == 0.0
    assert tilt_deg([1, 0, 0]) == 90.0
    assert tilt_deg([0, 0, -1]) == 180.0
    np.testing.assert_allclose(tilt_deg(np.array([[0, 0, 1.0], [0, 1.0, 0]])), [0, 90])


def test_static_recording_prior_below_one_degree():
    rec = simulate_recording(duration=10, motion="static", accel_noise=0.02, seed=1)
    seq = build_sequence(rec.poses, rec.imu)
    # a static recording sees one gravity direction, so the fit is rank-deficient
    assert seq.alignment.condition_flag == "degenerate"
    late = [f for f in seq.frames if not f.burn_in]
    assert late and max(f.prior_error_deg for f in late) < 1.0


def test_moving_recording_recovers_mounting_rotation():
    rec = simulate_recording(duration=20, seed=2, gyro_noise=0.002, accel_noise=0.05)
    seq = build_sequence(rec.poses, rec.imu, seq_id="moving")
    assert seq.alignment.condition_flag == "well_posed"
    assert geom3.rotation_angle_deg(seq.alignment.R @ rec.expected_alignment.T) < 1.0
    assert np.mean([f.prior_error_deg for f in seq.frames]) < 2.0


def test_injected_drift_shows_up_in_prior_error():
    # static device; the filter starts 20 degrees off about x, then a spurious
    # gyro burst swings it to -20 degrees. The error is symmetric, so the
    # mounting fit cannot absorb it and every frame should read about 20.
    rate = 100
    tilt = math.radians(20.0)
    imu = []
    for k in range(10 * rate + 1):
        t = k / rate
        gyro = np.array([-2 * tilt / 0.1, 0, 0]) if 5.0 <= t < 5.1 - 1e-9 else np.zeros(3)
        accel = geom3.euler_rot("X", tilt) @ [0, 0, G] if k == 0 else np.array([0, 0, G])
        imu.append(ImuSample(t, gyro, accel))
    poses = [PoseSample(k / 10, IDENTITY, np.zeros(3)) for k in range(1, 100)]
    seq = build_sequence(poses, imu, MahonyGains(kp=0.0, ki=0.0))
    errs = [f.prior_error_deg for f in seq.frames if abs(f.t - 5.05) > 0.1]
    assert np.mean(errs) == pytest.approx(20.0, abs=2.0)


def test_frame_invariants():
    rec = simulate_recording(duration=5, seed=4, accel_noise=0.3)
    seq = build_sequence(rec.poses, rec.imu)
    for f in seq.frames:
        assert f.prior_error_deg == geom3.angle_deg(f.g_prior, f.g_gt)
        assert 0.0 <= f.tilt_deg <= 180.0
        assert np.linalg.norm(f.g_gt) == pytest.approx(1.0, abs=1e-12)
    ts = [f.t for f in seq.frames]
    assert ts == sorted(ts)
    assert sum(tilt_histogram(seq.frames)) == len(seq.frames)


def test_burn_in_flag():
    rec = simulate_recording(duration=3, seed=5)
    seq = build_sequence(rec.poses, rec.imu, burn_in_s=1.0)
    assert all(f.burn_in == (f.t < 1.0) for f in seq.frames)


def test_window_falls_back_to_nearest_sample():
    # sparse IMU (1 Hz) leaves the 50 ms window empty for most frames
    imu = [ImuSample(float(t), np.zeros(3), np.array([0, 0, G * (1 + 0.1 * t)])) for t in range(5)]
    poses = [PoseSample(t, IDENTITY, np.zeros(3)) for t in (0.0, 1.4, 2.6)]
    seq = build_sequence(poses, imu)
    assert [f.nongravity_ratio for f in seq.frames] == pytest.approx([0.0, 0.1, 0.3])


def test_out_of_range_poses_dropped_and_counted():
    rec = simulate_recording(duration=3, seed=6)
    early = PoseSample(-1.0, IDENTITY, np.zeros(3))
    late = PoseSample(99.0, IDENTITY, np.zeros(3))
    seq = build_sequence([early, *rec.poses, late], rec.imu)
    assert seq.dropped_frames == 2
    assert len(seq.frames) == len(rec.poses)


def test_no_overlap():
    rec = simulate_recording(duration=2, seed=7)
    poses = [PoseSample(t + 100.0, p.q_wc, p.p_wc) for t, p in ((p.t, p) for p in rec.poses)]
    with pytest.raises(NoTemporalOverlap):
        build_sequence(poses, rec.imu)


def test_tilt_histogram_boundaries():
    from gravprior.labels import LabeledFrame

    def frame(tilt):
        return LabeledFrame(0.0, np.zeros(3), np.zeros(3), 0.0, 0.0, tilt)

    counts = tilt_histogram([frame(t) for t in (0.0, 30.0, 60.0, 90.0, 120.0, 150.0, 180.0)],
                            TABLE1_TILT_EDGES)
    assert counts == [2, 2, 3]


def test_sequence_csv_round_trip(tmp_path):
    rec = simulate_recording(duration=4, seed=8, accel_noise=0.1)
    seq = build_sequence(rec.poses, rec.imu, seq_id="rt")
    write_sequence(seq, tmp_path / "rt.csv")
    header = (tmp_path / "rt.csv").read_text().splitlines()[0]
    assert header == ",".join(FRAME_COLUMNS)
    back = read_sequence(tmp_path / "rt.csv")
    assert back.id == "rt"
    np.testing.assert_array_equal(back.alignment.R, seq.alignment.R)
    for a, b in zip(seq.frames, back.frames):
        assert a.t == b.t and a.burn_in == b.burn_in
        np.testing.assert_array_equal(a.g_gt, b.g_gt)
        np.testing.assert_array_equal(a.g_prior, b.g_prior)
        assert (a.prior_error_deg, a.nongravity_ratio, a.tilt_deg) == \
            (b.prior_error_deg, b.nongravity_ratio, b.tilt_deg)
