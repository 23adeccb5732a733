"""Supervised per-frame records from pose and IMU streams.

Ground-truth gravity comes from the VIO camera pose (ARKit, Y-up world), the
prior from the Mahony filter aligned to the camera by a per-sequence
Procrustes fit. Every gravity vector in a ``LabeledFrame`` is expressed in
the EuRoC camera convention (X-right, Y-forward, Z-up).
"""

from __future__ import annotations

import bisect
import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from . import geom3
from .errors import EmptyStream, EmptyWindow, NoTemporalOverlap
from .mahony import G, ImuSample, MahonyGains, run_sequence
from .procrustes import AlignmentResult, align_sequence, solve_procrustes

ARKIT_WORLD_GRAVITY = np.array([0.0, -1.0, 0.0])
TABLE1_TILT_EDGES = (0.0, 60.0, 120.0, 180.0)


class PoseSample(NamedTuple):
    t: float
    q_wc: np.ndarray  # [w, x, y, z], camera -> world
    p_wc: np.ndarray  # metres, unused by the gravity math


@dataclass(frozen=True)
class LabeledFrame:
    t: float
    g_gt: np.ndarray
    g_prior: np.ndarray
    prior_error_deg: float
    nongravity_ratio: float
    tilt_deg: float
    burn_in: bool = False


@dataclass
class SequenceRecord:
    id: str
    frames: list[LabeledFrame]
    alignment: AlignmentResult
    dropped_frames: int = 0
    meta: dict = field(default_factory=dict)


def gravity_from_pose(q_wc) -> np.ndarray:
    """Camera-frame gravity (EuRoC convention) from a camera->world quaternion."""
    R_wc = geom3.quat_to_rot(q_wc)
    g_c = R_wc.T @ ARKIT_WORLD_GRAVITY
    return geom3.arkit_to_euroc(geom3.normalize(g_c))


def build_labels(poses: Sequence[PoseSample]) -> list[tuple[float, np.ndarray]]:
    if len(poses) == 0:
        raise EmptyStream("no poses")
    return [(float(p.t), gravity_from_pose(p.q_wc)) for p in poses]


def nongravity_ratio(accel_window, g: float = G) -> float:
    """Mean of ``|a| / g - 1`` over a window of accelerometer readings."""
    a = np.asarray(accel_window, dtype=float).reshape(-1, 3)
    if a.shape[0] == 0:
        raise EmptyWindow("accelerometer window is empty")
    return float(np.mean(np.linalg.norm(a, axis=1) / g - 1.0))


def tilt_deg(g) -> np.ndarray | float:
    """Tilt angle ``arccos(g_z)`` in degrees; vectorized over rows."""
    g = np.asarray(g, dtype=float)
    out = np.degrees(np.arccos(np.clip(g[..., 2], -1.0, 1.0)))
    return float(out) if out.ndim == 0 else out


def _window_ratio(imu_t, imu_a, t, half_width, g):
    lo = bisect.bisect_left(imu_t, t - half_width)
    hi = bisect.bisect_right(imu_t, t + half_width)
    if hi > lo:
        return nongravity_ratio(imu_a[lo:hi], g)
    # sparse stream: fall back to the closest single sample
    j = min(range(max(lo - 1, 0), min(lo + 1, len(imu_t))), key=lambda k: abs(imu_t[k] - t))
    return nongravity_ratio(imu_a[j:j + 1], g)


def build_sequence(
    poses: Sequence[PoseSample],
    imu: Sequence[ImuSample],
    gains: MahonyGains | None = None,
    *,
    seq_id: str = "seq",
    window_s: float = 0.05,
    burn_in_s: float = 1.0,
) -> SequenceRecord:
    """Run filter, alignment and labeling for one recording.

    Frames before the first IMU sample are dropped (counted in
    ``dropped_frames``); frames within ``burn_in_s`` of the stream start are
    kept but flagged.
    """
    if len(poses) == 0 or len(imu) == 0:
        raise EmptyStream("both pose and IMU streams must be non-empty")
    gains = gains or MahonyGains()
    t_imu0, t_imu1 = float(imu[0].t), float(imu[-1].t)
    usable = [p for p in poses if t_imu0 <= float(p.t) <= t_imu1]
    if not usable:
        raise NoTemporalOverlap(
            f"poses [{poses[0].t}, {poses[-1].t}] do not overlap IMU [{t_imu0}, {t_imu1}]"
        )
    dropped = len(poses) - len(usable)

    labels = build_labels(usable)
    estimates = run_sequence(imu, [t for t, _ in labels], gains)
    g_gt = np.array([g for _, g in labels])
    g_imu = np.array([e.g_imu for e in estimates])

    alignment = solve_procrustes(g_gt, g_imu)
    g_prior = align_sequence(alignment.R, g_imu)
    err = geom3.angle_deg(g_prior, g_gt)
    tilts = tilt_deg(g_gt)

    imu_t = [float(s.t) for s in imu]
    imu_a = np.array([s.accel for s in imu], dtype=float)
    frames = []
    for k, (t, _) in enumerate(labels):
        frames.append(LabeledFrame(
            t=t,
            g_gt=g_gt[k],
            g_prior=g_prior[k],
            prior_error_deg=float(err[k]),
            nongravity_ratio=_window_ratio(imu_t, imu_a, t, window_s, gains.g),
            tilt_deg=float(tilts[k]),
            burn_in=(t - t_imu0) < burn_in_s,
        ))
    return SequenceRecord(id=seq_id, frames=frames, alignment=alignment, dropped_frames=dropped)


def tilt_histogram(frames: Sequence[LabeledFrame], edges=TABLE1_TILT_EDGES) -> list[int]:
    """Frame counts per tilt bin (right-open bins, last bin closed)."""
    from .evalkit import assign_bins

    idx = assign_bins(np.array([f.tilt_deg for f in frames]), edges)
    return [int(np.sum(idx == b)) for b in range(len(edges) - 1)]


# --- CSV / JSON emission -------------------------------------------------

FRAME_COLUMNS = [
    "t", "g_gt_x", "g_gt_y", "g_gt_z", "g_prior_x", "g_prior_y", "g_prior_z",
    "prior_error_deg", "nongravity_ratio", "tilt_deg", "burn_in",
]


def write_sequence(record: SequenceRecord, csv_path, json_path=None) -> None:
    """Write one row per frame plus a JSON sidecar with the alignment."""
    csv_path = Path(csv_path)
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(FRAME_COLUMNS)
        for f in record.frames:
            w.writerow([repr(float(f.t)), *map(repr, map(float, f.g_gt)),
                        *map(repr, map(float, f.g_prior)), repr(f.prior_error_deg),
                        repr(f.nongravity_ratio), repr(f.tilt_deg), int(f.burn_in)])
    if json_path is None:
        json_path = csv_path.with_suffix(".json")
    a = record.alignment
    side = {
        "id": record.id,
        "R_imu_to_cam": np.asarray(a.R).tolist(),
        "residual_rms_deg": a.residual_rms_deg,
        "condition_flag": a.condition_flag,
        "singular_values": np.asarray(a.singular_values).tolist(),
        "n_pairs": a.n_pairs,
        "dropped_frames": record.dropped_frames,
    }
    Path(json_path).write_text(json.dumps(side, indent=2))


def read_sequence(csv_path, json_path=None) -> SequenceRecord:
    from .ingest import read_numeric_csv

    csv_path = Path(csv_path)
    rows = read_numeric_csv(csv_path, len(FRAME_COLUMNS))
    frames = [
        LabeledFrame(t=r[0], g_gt=np.array(r[1:4]), g_prior=np.array(r[4:7]),
                     prior_error_deg=r[7], nongravity_ratio=r[8], tilt_deg=r[9],
                     burn_in=bool(int(r[10])))
        for r in rows
    ]
    if json_path is None:
        json_path = csv_path.with_suffix(".json")
    json_path = Path(json_path)
    if json_path.exists():
        side = json.loads(json_path.read_text())
        alignment = AlignmentResult(
            R=np.array(side["R_imu_to_cam"]), residual_rms_deg=side["residual_rms_deg"],
            condition_flag=side["condition_flag"],
            singular_values=np.array(side["singular_values"]), n_pairs=side["n_pairs"])
        seq_id, dropped = side["id"], side.get("dropped_frames", 0)
    else:
        alignment = AlignmentResult(np.eye(3), math.nan, "degenerate", np.zeros(3), 0)
        seq_id, dropped = csv_path.stem, 0
    return SequenceRecord(id=seq_id, frames=frames, alignment=alignment, dropped_frames=dropped)
