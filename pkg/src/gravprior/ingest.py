"""Recording readers and the undistort+resize remap table.

Stray Scanner layout (fixed by convention, see README)::

    odometry.csv       t, x, y, z, qx, qy, qz, qw
    imu.csv            t, a_x, a_y, a_z, alpha_x, alpha_y, alpha_z
    camera_matrix.csv  3 rows of K; optional row 4 "width, height";
                       optional row 5 "k1, k2, p1, p2, k3"

A leading header line is skipped when it is not numeric. ``column_map``
lets callers point logical columns at other header names.

EuRoC layout: ``imu0/data.csv`` with ``t[ns], w_x, w_y, w_z, a_x, a_y, a_z``
and optionally ``state_groundtruth_estimate0/data.csv``.
"""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import geom3
from .errors import MalformedRow, MissingFile, NonMonotonicTime
from .labels import PoseSample
from .mahony import ImuSample

ODOMETRY_COLUMNS = ["t", "x", "y", "z", "qx", "qy", "qz", "qw"]
IMU_COLUMNS = ["t", "a_x", "a_y", "a_z", "alpha_x", "alpha_y", "alpha_z"]
EUROC_IMU_HEADER = ("#timestamp [ns],w_RS_S_x [rad s^-1],w_RS_S_y [rad s^-1],w_RS_S_z [rad s^-1],"
                    "a_RS_S_x [m s^-2],a_RS_S_y [m s^-2],a_RS_S_z [m s^-2]")

REMAP_MAGIC = b"GRMP"
REMAP_VERSION = 1


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    dist: tuple = (0.0, 0.0, 0.0, 0.0, 0.0)  # k1, k2, p1, p2, k3

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point outside the image")
        if len(self.dist) != 5:
            raise ValueError("distortion needs (k1, k2, p1, p2, k3)")


@dataclass
class StrayRecording:
    odometry: list[PoseSample]
    imu: list[ImuSample]
    intrinsics: Intrinsics | None


@dataclass
class EurocRecording:
    imu: list[ImuSample]
    t_ns: np.ndarray
    gt_gravity: list[tuple[float, np.ndarray]] | None = None


@dataclass
class RemapTable:
    out_width: int
    out_height: int
    map_u: np.ndarray  # (out_height, out_width) float32 source x
    map_v: np.ndarray  # (out_height, out_width) float32 source y


# --- CSV helpers -----------------------------------------------------------

def _is_number(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


def _read_rows(path: Path):
    """Yield (line_number, stripped fields) for non-blank lines."""
    if not path.is_file():
        raise MissingFile(f"missing file: {path}")
    with open(path, newline="") as fh:
        for i, row in enumerate(csv.reader(fh), start=1):
            row = [c.strip() for c in row]
            if not row or all(c == "" for c in row):
                continue
            yield i, row


def read_numeric_csv(path, n_cols: int | None = None, column_map: Mapping[str, str] | None = None,
                     columns: Sequence[str] | None = None) -> list[list[float]]:
    """Parse a numeric CSV, skipping a non-numeric header.

    When ``column_map`` is given the header is required and logical
    ``columns`` are looked up by their mapped header names.
    """
    path = Path(path)
    out: list[list[float]] = []
    index = None
    for line, row in _read_rows(path):
        if not out and index is None and not _is_number(row[0].lstrip("#")):
            header = [h.lstrip("#").strip() for h in row]
            if column_map and columns:
                try:
                    index = [header.index(column_map.get(c, c)) for c in columns]
                except ValueError as exc:
                    raise MalformedRow(path, line, f"header lacks column: {exc}") from None
            continue
        if index is not None:
            if len(row) <= max(index):
                raise MalformedRow(path, line, f"expected at least {max(index) + 1} fields")
            row = [row[k] for k in index]
        elif n_cols is not None and len(row) != n_cols:
            raise MalformedRow(path, line, f"expected {n_cols} fields, got {len(row)}")
        try:
            vals = [float(c) for c in row]
        except ValueError:
            raise MalformedRow(path, line, "non-numeric field") from None
        if not all(math.isfinite(v) for v in vals):
            raise MalformedRow(path, line, "non-finite value")
        out.append(vals)
    return out


def _check_sorted(times, path):
    for k in range(1, len(times)):
        if times[k] < times[k - 1]:
            raise NonMonotonicTime(f"{path}: timestamp decreases at data row {k + 1}")


def _fmt(x) -> str:
    return repr(float(x))


# --- Stray Scanner ---------------------------------------------------------

def read_stray(directory, column_map: Mapping[str, str] | None = None) -> StrayRecording:
    d = Path(directory)
    odo_rows = read_numeric_csv(d / "odometry.csv", None if column_map else len(ODOMETRY_COLUMNS),
                                column_map, ODOMETRY_COLUMNS)
    imu_rows = read_numeric_csv(d / "imu.csv", None if column_map else len(IMU_COLUMNS),
                                column_map, IMU_COLUMNS)
    _check_sorted([r[0] for r in odo_rows], d / "odometry.csv")
    _check_sorted([r[0] for r in imu_rows], d / "imu.csv")

    poses = [PoseSample(r[0], np.array([r[7], r[4], r[5], r[6]]), np.array(r[1:4]))
             for r in odo_rows]
    imu = [ImuSample(r[0], np.array(r[4:7]), np.array(r[1:4])) for r in imu_rows]
    intr = read_camera_matrix(d / "camera_matrix.csv")
    return StrayRecording(odometry=poses, imu=imu, intrinsics=intr)


def read_camera_matrix(path) -> Intrinsics:
    path = Path(path)
    rows = [(line, r) for line, r in _read_rows(path)]
    if len(rows) < 3:
        raise MalformedRow(path, len(rows) + 1, "camera matrix needs 3 rows")
    for line, r in rows[:3]:
        if len(r) != 3 or not all(_is_number(c) for c in r):
            raise MalformedRow(path, line, "camera matrix rows need 3 numeric fields")
    K = np.array([[float(c) for c in r] for _, r in rows[:3]])
    fx, fy, cx, cy = (float(K[i, j]) for i, j in ((0, 0), (1, 1), (0, 2), (1, 2)))
    if len(rows) > 3:
        line, r = rows[3]
        if len(r) != 2:
            raise MalformedRow(path, line, "expected 'width, height'")
        width, height = int(float(r[0])), int(float(r[1]))
    else:
        width, height = int(round(2 * cx)), int(round(2 * cy))
    dist = (0.0,) * 5
    if len(rows) > 4:
        line, r = rows[4]
        if len(r) != 5:
            raise MalformedRow(path, line, "expected k1, k2, p1, p2, k3")
        dist = tuple(float(c) for c in r)
    return Intrinsics(fx, fy, cx, cy, width, height, dist)


def write_stray(rec: StrayRecording, directory) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    with open(d / "odometry.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(ODOMETRY_COLUMNS)
        for p in rec.odometry:
            qw, qx, qy, qz = p.q_wc
            w.writerow([_fmt(p.t), *map(_fmt, p.p_wc), _fmt(qx), _fmt(qy), _fmt(qz), _fmt(qw)])
    with open(d / "imu.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(IMU_COLUMNS)
        for s in rec.imu:
            w.writerow([_fmt(s.t), *map(_fmt, s.accel), *map(_fmt, s.gyro)])
    if rec.intrinsics is not None:
        k = rec.intrinsics
        with open(d / "camera_matrix.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([_fmt(k.fx), "0.0", _fmt(k.cx)])
            w.writerow(["0.0", _fmt(k.fy), _fmt(k.cy)])
            w.writerow(["0.0", "0.0", "1.0"])
            w.writerow([k.width, k.height])
            w.writerow([_fmt(c) for c in k.dist])


# --- EuRoC -----------------------------------------------------------------

def _read_euroc_rows(path: Path, n_min: int):
    out = []
    for line, row in _read_rows(path):
        if row[0].startswith("#"):
            continue
        if len(row) < n_min:
            raise MalformedRow(path, line, f"expected at least {n_min} fields, got {len(row)}")
        try:
            ts = int(row[0])
            vals = [float(c) for c in row[1:n_min]]
        except ValueError:
            raise MalformedRow(path, line, "non-numeric field") from None
        out.append((ts, vals))
    return out


def read_euroc(directory) -> EurocRecording:
    """Read an EuRoC ``mav0``-style directory (IMU and optional ground truth)."""
    d = Path(directory)
    imu_path = d / "imu0" / "data.csv"
    if not imu_path.is_file():
        raise MissingFile(f"missing file: {imu_path}")
    rows = _read_euroc_rows(imu_path, 7)
    t_ns = np.array([r[0] for r in rows], dtype=np.int64)
    _check_sorted(t_ns, imu_path)
    imu = [ImuSample(int(ts) / 1e9, np.array(v[0:3]), np.array(v[3:6])) for ts, v in rows]

    gt = None
    gt_path = d / "state_groundtruth_estimate0" / "data.csv"
    if gt_path.is_file():
        gt = []
        for ts, v in _read_euroc_rows(gt_path, 8):
            # p_xyz then q_wxyz (body -> world, Z-up)
            R_wb = geom3.quat_to_rot(np.array(v[3:7]))
            gt.append((ts / 1e9, R_wb.T @ np.array([0.0, 0.0, -1.0])))
    return EurocRecording(imu=imu, t_ns=t_ns, gt_gravity=gt)


def write_euroc(rec: EurocRecording, directory) -> None:
    """Write the IMU part of an EuRoC recording (inverse of ``read_euroc``)."""
    d = Path(directory) / "imu0"
    d.mkdir(parents=True, exist_ok=True)
    with open(d / "data.csv", "w", newline="") as fh:
        fh.write(EUROC_IMU_HEADER + "\n")
        w = csv.writer(fh)
        for ts, s in zip(rec.t_ns, rec.imu):
            w.writerow([int(ts), *map(_fmt, s.gyro), *map(_fmt, s.accel)])


# --- remap table -----------------------------------------------------------

def _distortion_terms(x, y, dist):
    k1, k2, p1, p2, k3 = dist
    r2 = x * x + y * y
    radial = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3))
    tx = 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x)
    ty = p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y
    return radial, tx, ty


def distort_normalized(x, y, dist):
    """Forward radial-tangential model on normalized image coordinates."""
    radial, tx, ty = _distortion_terms(x, y, dist)
    return x * radial + tx, y * radial + ty


def build_remap_table(intr: Intrinsics, out_size: tuple[int, int]) -> RemapTable:
    """Source pixel coordinates for every pixel of an undistorted, resized output.

    ``out_size`` is ``(width, height)``. The output camera is the input
    pinhole scaled by the resize ratio; each output pixel is back-projected
    through it, pushed through the distortion model and projected with the
    original intrinsics.
    """
    out_w, out_h = int(out_size[0]), int(out_size[1])
    if out_w <= 0 or out_h <= 0:
        raise ValueError("output size must be positive")
    sx = out_w / intr.width
    sy = out_h / intr.height
    fx_o, fy_o = intr.fx * sx, intr.fy * sy
    cx_o, cy_o = intr.cx * sx, intr.cy * sy

    uu, vv = np.meshgrid(np.arange(out_w, dtype=float), np.arange(out_h, dtype=float))
    du = uu - cx_o
    dv = vv - cy_o
    radial, tx, ty = _distortion_terms(du / fx_o, dv / fy_o, intr.dist)
    # offset form keeps the zero-distortion case exact after float32 rounding
    map_u = intr.cx + du * (intr.fx / fx_o) * radial + intr.fx * tx
    map_v = intr.cy + dv * (intr.fy / fy_o) * radial + intr.fy * ty
    return RemapTable(out_w, out_h, map_u.astype(np.float32), map_v.astype(np.float32))


def write_remap_table(table: RemapTable, path) -> None:
    """Binary layout: b"GRMP", u32 version, u32 width, u32 height, then
    row-major (u, v) float32 pairs, all little-endian."""
    pairs = np.stack([table.map_u, table.map_v], axis=-1).astype("<f4")
    with open(path, "wb") as fh:
        fh.write(REMAP_MAGIC)
        fh.write(struct.pack("<III", REMAP_VERSION, table.out_width, table.out_height))
        fh.write(pairs.tobytes(order="C"))


def read_remap_table(path) -> RemapTable:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"missing file: {path}")
    data = path.read_bytes()
    if data[:4] != REMAP_MAGIC:
        raise MalformedRow(path, 0, "bad magic, not a remap table")
    version, w, h = struct.unpack("<III", data[4:16])
    if version != REMAP_VERSION:
        raise MalformedRow(path, 0, f"unsupported remap version {version}")
    body = np.frombuffer(data[16:], dtype="<f4")
    if body.size != w * h * 2:
        raise MalformedRow(path, 0, "truncated remap table")
    pairs = body.reshape(h, w, 2)
    return RemapTable(w, h, pairs[..., 0].astype(np.float32), pairs[..., 1].astype(np.float32))
