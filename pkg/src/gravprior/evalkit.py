"""Evaluation protocol: angular-error summaries, tilt bins, gate diagnostics.

All gravity vectors are EuRoC-convention camera-frame unit vectors. Bins are
right-open except the last, which is closed, so a value sitting exactly on
an inner edge lands in the upper bin.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import geom3
from .errors import DataError, EmptyInput, ShapeMismatch
from .labels import TABLE1_TILT_EDGES, tilt_deg

FIG3_TILT_EDGES = (0.0, 30.0, 60.0, 90.0, 120.0, 150.0, 180.0)
PRIOR_ERROR_EDGES = (0.0, 10.0, 20.0, 30.0, 45.0, 60.0, math.inf)
RATIO_EDGES = (-math.inf, 0.05, 0.10, 0.20, 0.50, math.inf)
UPRIGHT_ARKIT = np.array([0.0, 1.0, 0.0])

METHOD_ORDER = ("Assume Upright", "IMU prior", "IMU-only", "image-only", "fused")


# --- binning and percentiles -------------------------------------------------

def assign_bins(values, edges) -> np.ndarray:
    """Bin index per value; right-open bins with the last bin closed."""
    edges = np.asarray(edges, dtype=float)
    if edges.ndim != 1 or edges.size < 2 or np.any(np.diff(edges) <= 0):
        raise ValueError("edges must be strictly increasing with at least two entries")
    v = np.asarray(values, dtype=float)
    if np.any((v < edges[0]) | (v > edges[-1])) or np.any(np.isnan(v)):
        raise DataError(f"values outside [{edges[0]}, {edges[-1]}]")
    idx = np.searchsorted(edges, v, side="right") - 1
    return np.minimum(idx, edges.size - 2)


def percentile(values, p: float) -> float:
    """Linear interpolation between closest ranks, inclusive endpoints.

    Position ``h = (n - 1) * p / 100`` in the sorted list.
    """
    x = np.sort(np.asarray(values, dtype=float).ravel())
    if x.size == 0:
        raise EmptyInput("percentile of an empty list")
    h = (x.size - 1) * p / 100.0
    lo = math.floor(h)
    hi = min(lo + 1, x.size - 1)
    return float(x[lo] + (h - lo) * (x[hi] - x[lo]))


@dataclass(frozen=True)
class ErrorSummary:
    mean: float
    median: float
    p90: float
    p95: float
    count: int


def summarize(errors_deg) -> ErrorSummary:
    e = np.asarray(errors_deg, dtype=float).ravel()
    if e.size == 0:
        raise EmptyInput("no errors to summarize")
    if np.any(~np.isfinite(e)) or np.any(e < 0) or np.any(e > 180.0):
        raise DataError("angular errors must lie in [0, 180] degrees")
    return ErrorSummary(
        mean=math.fsum(e.tolist()) / e.size,  # correctly rounded, order independent
        median=percentile(e, 50),
        p90=percentile(e, 90),
        p95=percentile(e, 95),
        count=int(e.size),
    )


# --- tilt breakdown ------------------------------------------------------------

@dataclass(frozen=True)
class TiltBinReport:
    edges: tuple[float, ...]
    summaries: tuple[ErrorSummary | None, ...]  # None for an empty bin
    counts: tuple[int, ...]

    def labels(self) -> list[str]:
        return [f"{a:g}-{b:g}" for a, b in zip(self.edges[:-1], self.edges[1:])]


def _as_rows(g, name):
    g = np.asarray(g, dtype=float)
    if g.ndim != 2 or g.shape[1] != 3:
        raise ShapeMismatch(f"{name} must have shape (N, 3), got {g.shape}")
    return g


def tilt_breakdown(g_pred, g_gt, edges=FIG3_TILT_EDGES) -> TiltBinReport:
    """Per-bin error summaries, binned by the tilt of the ground truth."""
    g_pred, g_gt = _as_rows(g_pred, "g_pred"), _as_rows(g_gt, "g_gt")
    if g_pred.shape != g_gt.shape:
        raise ShapeMismatch("prediction and label counts differ")
    if g_gt.shape[0] == 0:
        raise EmptyInput("no frames")
    err = np.atleast_1d(geom3.angle_deg(g_pred, g_gt))
    idx = assign_bins(np.atleast_1d(tilt_deg(g_gt)), edges)
    summaries, counts = [], []
    for b in range(len(edges) - 1):
        sel = err[idx == b]
        counts.append(int(sel.size))
        summaries.append(summarize(sel) if sel.size else None)
    return TiltBinReport(tuple(float(e) for e in edges), tuple(summaries), tuple(counts))


def assume_upright(n: int, frame: str = "arkit") -> np.ndarray:
    """Constant upright prediction, returned in the EuRoC convention.

    ``frame='arkit'`` reads the constant (0, 1, 0) as an ARKit camera vector
    and converts it, giving (0, 0, -1). ``frame='euroc'`` uses (0, 1, 0) as is.
    """
    if n < 1:
        raise EmptyInput("n must be at least 1")
    if frame == "arkit":
        g = geom3.arkit_to_euroc(UPRIGHT_ARKIT)
    elif frame == "euroc":
        g = UPRIGHT_ARKIT.copy()
    else:
        raise ValueError("frame must be 'arkit' or 'euroc'")
    return np.tile(g, (n, 1))


# --- gate diagnostics ----------------------------------------------------------

@dataclass(frozen=True)
class GateBinReport:
    edges: tuple[float, ...]
    mean_tau: tuple[float, ...]  # nan for an empty bin
    counts: tuple[int, ...]

    def labels(self) -> list[str]:
        out = []
        for a, b in zip(self.edges[:-1], self.edges[1:]):
            if math.isinf(a):
                out.append(f"<{b:g}")
            elif math.isinf(b):
                out.append(f">{a:g}")
            else:
                out.append(f"{a:g}-{b:g}")
        return out


def gate_bins(tau, key, edges) -> GateBinReport:
    tau = np.asarray(tau, dtype=float).ravel()
    key = np.asarray(key, dtype=float).ravel()
    if tau.size == 0:
        raise EmptyInput("no frames")
    if tau.shape != key.shape:
        raise ShapeMismatch("tau and bin key lengths differ")
    idx = assign_bins(key, edges)
    means, counts = [], []
    for b in range(len(edges) - 1):
        sel = tau[idx == b]
        counts.append(int(sel.size))
        means.append(float(sel.mean()) if sel.size else math.nan)
    return GateBinReport(tuple(float(e) for e in edges), tuple(means), tuple(counts))


def gate_diagnostics(tau, prior_error_deg, nongravity_ratio,
                     error_edges=PRIOR_ERROR_EDGES,
                     ratio_edges=RATIO_EDGES) -> tuple[GateBinReport, GateBinReport]:
    """Mean gate per prior-error bin and per non-gravity-ratio bin."""
    return (gate_bins(tau, prior_error_deg, error_edges),
            gate_bins(tau, nongravity_ratio, ratio_edges))


# --- prediction sets -----------------------------------------------------------

PREDICTION_COLUMNS = [
    "g_gt_x", "g_gt_y", "g_gt_z",
    "g_prior_x", "g_prior_y", "g_prior_z",
    "g_corr_x", "g_corr_y", "g_corr_z",
    "g_img_x", "g_img_y", "g_img_z",
    "g_pred_x", "g_pred_y", "g_pred_z",
    "tau", "prior_error_deg", "nongravity_ratio",
]


@dataclass
class PredictionSet:
    """Model outputs next to labels, one row per frame."""

    g_gt: np.ndarray
    g_prior: np.ndarray
    g_corr: np.ndarray
    g_img: np.ndarray
    g_pred: np.ndarray
    tau: np.ndarray
    prior_error_deg: np.ndarray
    nongravity_ratio: np.ndarray

    def __len__(self):
        return self.g_gt.shape[0]

    def methods(self, upright_frame: str = "arkit") -> dict[str, np.ndarray]:
        return {
            "Assume Upright": assume_upright(len(self), upright_frame),
            "IMU prior": self.g_prior,
            "IMU-only": self.g_corr,
            "image-only": self.g_img,
            "fused": self.g_pred,
        }


def predict(params, f, g_prior, g_gt, prior_error_deg=None, nongravity_ratio=None,
            chunk: int = 4096) -> PredictionSet:
    """Run the calibrator over a dataset in chunks."""
    from .calibnet import forward

    g_gt = _as_rows(g_gt, "g_gt")
    n = g_gt.shape[0]
    if n == 0:
        raise EmptyInput("no frames")
    parts = [forward(params, f[lo:lo + chunk], g_prior[lo:lo + chunk])[0]
             for lo in range(0, n, chunk)]
    cat = lambda name: np.concatenate([getattr(p, name) for p in parts])  # noqa: E731
    if prior_error_deg is None:
        prior_error_deg = geom3.angle_deg(g_prior, g_gt)
    if nongravity_ratio is None:
        nongravity_ratio = np.zeros(n)
    return PredictionSet(g_gt, np.asarray(g_prior, dtype=float), cat("g_corr"), cat("g_img"),
                         cat("g_pred"), cat("tau"), np.atleast_1d(np.asarray(prior_error_deg, float)),
                         np.asarray(nongravity_ratio, dtype=float))


def write_predictions(p: PredictionSet, path) -> None:
    cols = np.column_stack([p.g_gt, p.g_prior, p.g_corr, p.g_img, p.g_pred,
                            p.tau, p.prior_error_deg, p.nongravity_ratio])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(PREDICTION_COLUMNS)
        for row in cols:
            w.writerow([repr(float(x)) for x in row])


def read_predictions(path) -> PredictionSet:
    from .ingest import read_numeric_csv

    rows = np.array(read_numeric_csv(path, len(PREDICTION_COLUMNS)), dtype=float)
    if rows.size == 0:
        raise EmptyInput(f"{path}: no predictions")
    return PredictionSet(*(rows[:, k:k + 3].copy() for k in range(0, 15, 3)),
                         rows[:, 15].copy(), rows[:, 16].copy(), rows[:, 17].copy())


def method_summaries(preds: PredictionSet, upright_frame: str = "arkit") -> dict[str, ErrorSummary]:
    return {name: summarize(geom3.angle_deg(g, preds.g_gt))
            for name, g in preds.methods(upright_frame).items()}


def method_tilt_reports(preds: PredictionSet, edges=FIG3_TILT_EDGES,
                        upright_frame: str = "arkit") -> dict[str, TiltBinReport]:
    return {name: tilt_breakdown(g, preds.g_gt, edges)
            for name, g in preds.methods(upright_frame).items()}


# --- dataset statistics ----------------------------------------------------------

@dataclass(frozen=True)
class SplitStats:
    name: str
    sessions: int
    images: int


@dataclass(frozen=True)
class DatasetStats:
    splits: tuple[SplitStats, ...]
    tilt_edges: tuple[float, ...]
    tilt_counts: tuple[int, ...]

    @property
    def total_images(self) -> int:
        return sum(s.images for s in self.splits)

    def tilt_ratios(self) -> list[float]:
        n = sum(self.tilt_counts)
        return [100.0 * c / n if n else math.nan for c in self.tilt_counts]


def dataset_stats(splits: Mapping[str, Sequence], edges=TABLE1_TILT_EDGES) -> DatasetStats:
    """Sessions and images per split plus the pooled tilt distribution.

    ``splits`` maps a split name to a list of SequenceRecord.
    """
    rows, tilts = [], []
    for name, records in splits.items():
        n = sum(len(r.frames) for r in records)
        rows.append(SplitStats(name, len(records), n))
        tilts.extend(f.tilt_deg for r in records for f in r.frames)
    if not tilts:
        raise EmptyInput("no frames in any split")
    idx = assign_bins(np.array(tilts), edges)
    counts = tuple(int(np.sum(idx == b)) for b in range(len(edges) - 1))
    return DatasetStats(tuple(rows), tuple(float(e) for e in edges), counts)


def sphere_density(g, n_polar: int = 18, n_azimuth: int = 36) -> list[tuple[float, ...]]:
    """Histogram of directions over an equiangular S^2 grid.

    Rows are ``(polar_lo, polar_hi, azimuth_lo, azimuth_hi, count, density)``
    in degrees, density being count per steradian normalized by N.
    """
    g = _as_rows(g, "g")
    if g.shape[0] == 0:
        raise EmptyInput("no directions")
    g = geom3.normalize(g)
    polar = np.degrees(np.arccos(np.clip(g[:, 2], -1.0, 1.0)))
    azim = np.degrees(np.arctan2(g[:, 1], g[:, 0])) % 360.0
    pe = np.linspace(0.0, 180.0, n_polar + 1)
    ae = np.linspace(0.0, 360.0, n_azimuth + 1)
    pi = assign_bins(polar, pe)
    ai = assign_bins(azim, ae)
    counts = np.zeros((n_polar, n_azimuth), dtype=int)
    np.add.at(counts, (pi, ai), 1)
    out = []
    for i in range(n_polar):
        cap = math.cos(math.radians(pe[i])) - math.cos(math.radians(pe[i + 1]))
        area = cap * math.radians(ae[1] - ae[0])
        for j in range(n_azimuth):
            c = int(counts[i, j])
            out.append((pe[i], pe[i + 1], ae[j], ae[j + 1], c, c / (g.shape[0] * area)))
    return out


# --- output ----------------------------------------------------------------------

def format_table(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    cells = [[str(h) for h in header]]
    for r in rows:
        cells.append([f"{x:.2f}" if isinstance(x, float) else str(x) for x in r])
    widths = [max(len(row[k]) for row in cells) for k in range(len(header))]
    lines = []
    for i, row in enumerate(cells):
        lines.append("  ".join(c.ljust(w) if k == 0 else c.rjust(w)
                               for k, (c, w) in enumerate(zip(row, widths))))
        if i == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines)


def summary_rows(summaries: Mapping[str, ErrorSummary]) -> list[list]:
    return [[name, s.mean, s.median, s.p90, s.p95, s.count] for name, s in summaries.items()]


SUMMARY_HEADER = ["method", "mean", "median", "p90", "p95", "count"]


def tilt_rows(reports: Mapping[str, TiltBinReport]) -> tuple[list[str], list[list]]:
    first = next(iter(reports.values()))
    header = ["method", *first.labels()]
    rows = [[name, *(s.mean if s else math.nan for s in r.summaries)]
            for name, r in reports.items()]
    rows.append(["count", *first.counts])
    return header, rows


def gate_rows(report: GateBinReport, key: str) -> tuple[list[str], list[list]]:
    return [key, *report.labels()], [["mean tau", *report.mean_tau], ["count", *report.counts]]


def stats_rows(st: DatasetStats) -> tuple[list[list], list[list]]:
    split = [[s.name, s.sessions, s.images] for s in st.splits]
    split.append(["Total", sum(s.sessions for s in st.splits), st.total_images])
    labels = [f"{a:g}-{b:g}" for a, b in zip(st.tilt_edges[:-1], st.tilt_edges[1:])]
    tilt = [[lab, c, r] for lab, c, r in zip(labels, st.tilt_counts, st.tilt_ratios())]
    tilt.append(["Total", sum(st.tilt_counts), 100.0])
    return split, tilt


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(x) if isinstance(x, float) else x for x in r])
