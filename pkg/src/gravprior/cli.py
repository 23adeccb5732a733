"""Command-line entry point: ``gravprior <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import calibnet, evalkit, ingest, labels, mahony, procrustes, trainer
from .errors import DataError, MalformedRow, MissingFile, NumericError
from .gradcheck import run_gradcheck
from .losses import LossWeights

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def __init__(self, *a, **kw):
        kw.setdefault("allow_abbrev", False)  # keep --key overrides from prefix-matching flags
        super().__init__(*a, **kw)

    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


# --- configuration ---------------------------------------------------------------

def read_config(path) -> dict[str, str]:
    """``key = value`` lines; ``#`` starts a comment."""
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"missing config: {path}")
    out = {}
    for n, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise MalformedRow(path, n, "expected key = value")
        k, v = line.split("=", 1)
        out[k.strip().replace("-", "_")] = v.strip()
    return out


def parse_overrides(extra: list[str]) -> dict[str, str]:
    """Turn ``--key value`` / ``--key=value`` pairs into a dict."""
    out, i = {}, 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--"):
            raise UsageError(f"unexpected argument: {tok}")
        if "=" in tok:
            k, v = tok[2:].split("=", 1)
            i += 1
        else:
            if i + 1 >= len(extra):
                raise UsageError(f"missing value for {tok}")
            k, v = tok[2:], extra[i + 1]
            i += 2
        out[k.replace("-", "_")] = v
    return out


def _coerce(raw: str, default, name: str):
    try:
        if name == "drift_mixture":
            # "w:mean:std;w:mean:std"
            return tuple(tuple(float(x) for x in part.split(":"))
                         for part in raw.split(";") if part.strip())
        if isinstance(default, bool):
            if raw.lower() not in ("1", "0", "true", "false", "yes", "no"):
                raise ValueError(raw)
            return raw.lower() in ("1", "true", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(float(x) for x in raw.split(","))
        if default is None:
            return None if raw.lower() in ("", "none") else float(raw)
        return raw
    except ValueError:
        raise UsageError(f"bad value for {name}: {raw!r}") from None


def build(cls, settings: dict[str, str], used: set[str]):
    """Instantiate a config dataclass from string settings, noting used keys."""
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name in settings:
            kwargs[f.name] = _coerce(settings[f.name], f.default, f.name)
            used.add(f.name)
    try:
        return cls(**kwargs)
    except ValueError as exc:
        raise UsageError(f"{cls.__name__}: {exc}") from None


def _settings(args, extra) -> dict[str, str]:
    s = read_config(args.config) if args.config else {}
    s.update(parse_overrides(extra))
    return s


def _reject_unused(settings, used):
    unknown = sorted(set(settings) - used)
    if unknown:
        raise UsageError(f"unknown setting(s): {', '.join(unknown)}")


def parse_column_map(text: str | None) -> dict[str, str] | None:
    if not text:
        return None
    p = Path(text)
    if p.is_file():
        return read_config(p)
    out = {}
    for part in text.split(","):
        if "=" not in part:
            raise UsageError(f"bad column map entry: {part!r}")
        k, v = part.split("=", 1)
        out[k.strip()] = v.strip()
    return out


# --- output helpers ----------------------------------------------------------------

def _jsonable(obj):
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {k: _jsonable(v) for k, v in dataclasses.asdict(obj).items()}
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return None if math.isnan(x) else (str(x) if math.isinf(x) else x)
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _emit(args, payload, text: str) -> None:
    if args.json:
        print(json.dumps(_jsonable(payload), indent=2))
    else:
        print(text)


def _edges(text: str | None, default):
    if not text:
        return default
    try:
        edges = tuple(float(x) for x in text.split(","))
    except ValueError:
        raise UsageError(f"bad edge list: {text!r}") from None
    if len(edges) < 2 or any(b <= a for a, b in zip(edges, edges[1:])):
        raise UsageError(f"edges must be strictly increasing: {text!r}")
    return edges


# --- subcommands ---------------------------------------------------------------------

def cmd_extract(args, extra):
    settings = _settings(args, extra)
    used: set[str] = set()
    gains = build(mahony.MahonyGains, settings, used)
    window_s = _coerce(settings.get("window_s", "0.05"), 0.05, "window_s")
    burn_in_s = _coerce(settings.get("burn_in_s", "1.0"), 1.0, "burn_in_s")
    used |= {"window_s", "burn_in_s"}
    _reject_unused(settings, used)
    cmap = parse_column_map(args.column_map)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)

    def one(d):
        rec = ingest.read_stray(d, cmap)
        seq = labels.build_sequence(rec.odometry, rec.imu, gains, seq_id=Path(d).name,
                                    window_s=window_s, burn_in_s=burn_in_s)
        labels.write_sequence(seq, out / f"{seq.id}.csv")
        return seq

    with ThreadPoolExecutor(max_workers=args.threads) as pool:
        seqs = list(pool.map(one, args.stray_dirs))
    rows = [[s.id, len(s.frames), s.dropped_frames, s.alignment.residual_rms_deg,
             s.alignment.condition_flag] for s in seqs]
    _emit(args, [{"id": r[0], "frames": r[1], "dropped": r[2], "residual_rms_deg": r[3],
                  "condition_flag": r[4]} for r in rows],
          evalkit.format_table(["sequence", "frames", "dropped", "residual_deg", "condition"], rows))


def _frame_times(path) -> list[float]:
    return [r[0] for r in ingest.read_numeric_csv(path)]


def cmd_mahony(args, extra):
    settings = _settings(args, extra)
    used: set[str] = set()
    gains = build(mahony.MahonyGains, settings, used)
    _reject_unused(settings, used)
    src = Path(args.imu)
    if args.format == "euroc":
        imu = ingest.read_euroc(src).imu
    else:
        rows = ingest.read_numeric_csv(src, len(ingest.IMU_COLUMNS))
        imu = [mahony.ImuSample(r[0], np.array(r[4:7]), np.array(r[1:4])) for r in rows]
    times = _frame_times(args.frames) if args.frames else [s.t for s in imu]
    est = mahony.run_sequence(imu, times, gains)
    evalkit.write_csv(args.output, ["t", "g_x", "g_y", "g_z"],
                      [[float(e.t), *map(float, e.g_imu)] for e in est])
    _emit(args, {"estimates": len(est), "output": str(args.output)},
          f"wrote {len(est)} gravity estimates to {args.output}")


def _read_pairs(path):
    rows = np.array(ingest.read_numeric_csv(path, 6), dtype=float)
    if rows.size == 0:
        raise DataError(f"{path}: no pairs")
    return rows[:, :3], rows[:, 3:6]


def cmd_align(args, extra):
    _reject_unused(_settings(args, extra), set())
    pairs = {str(p): _read_pairs(p) for p in args.pairs}
    if args.global_fit:
        cam = np.vstack([c for c, _ in pairs.values()])
        imu = np.vstack([i for _, i in pairs.values()])
        results = {"global": procrustes.solve_procrustes(cam, imu)}
    else:
        results = {k: procrustes.solve_procrustes(c, i) for k, (c, i) in pairs.items()}
    payload = {k: {"R_imu_to_cam": r.R.tolist(), "residual_rms_deg": r.residual_rms_deg,
                   "condition_flag": r.condition_flag,
                   "singular_values": r.singular_values.tolist(), "n_pairs": r.n_pairs}
               for k, r in results.items()}
    Path(args.output).write_text(json.dumps(payload, indent=2))
    rows = [[k, r.n_pairs, r.residual_rms_deg, r.condition_flag] for k, r in results.items()]
    _emit(args, payload, evalkit.format_table(["source", "pairs", "residual_deg", "condition"], rows))


def cmd_synth(args, extra):
    settings = _settings(args, extra)
    used: set[str] = set()
    cfg = build(trainer.SynthConfig, settings, used)
    _reject_unused(settings, used)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    tr, va = trainer.make_synth(cfg)
    trainer.write_synth_csv(tr, out / "train.csv")
    trainer.write_synth_csv(va, out / "val.csv")
    _emit(args, {"train": len(tr), "val": len(va), "mean_prior_error_deg": float(va.prior_error_deg.mean())},
          f"wrote {len(tr)} train / {len(va)} val samples to {out}")


def cmd_train(args, extra):
    settings = _settings(args, extra)
    if args.lr_step:
        settings["lr_step"] = args.lr_step
    used: set[str] = set()
    cfg = build(trainer.TrainConfig, settings, used)
    dims_keys = {"H_prior", "H_head", "H_img", "prior_act", "head_act"}
    dims_settings = {k: v for k, v in settings.items() if k in dims_keys}
    w = build(LossWeights, settings, used)
    data = Path(args.data)
    tr = trainer.read_synth_csv(data / "train.csv")
    va = trainer.read_synth_csv(data / "val.csv") if (data / "val.csv").is_file() else None
    dims_settings["C"] = str(tr.f.shape[1])
    dims = build(calibnet.NetDims, dims_settings, used)
    used.add("C")
    _reject_unused(settings, used)

    params = calibnet.init_params(dims, seed=cfg.seed)
    quiet = args.json

    def report(rec):
        if not quiet:
            print(f"epoch {rec.epoch:3d}  lr {rec.lr:.3g}  train {rec.train.total:.4f}  "
                  f"val {rec.val.total:.4f}  err pred {rec.val_err_pred:.2f}  "
                  f"prior {rec.val_err_prior:.2f}  tau {rec.val_tau_mean:.3f}", flush=True)

    t0 = time.perf_counter()
    params, hist = trainer.train_loop(params, tr, va, w, cfg, report)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    calibnet.save_checkpoint(params, out / "model.gckp")
    trainer.write_history_csv(hist, out / "history.csv")
    last = hist[-1] if hist else None
    _emit(args, {"epochs": len(hist), "seconds": time.perf_counter() - t0,
                 "final": last and dataclasses.asdict(last)},
          f"saved {out / 'model.gckp'} and {out / 'history.csv'}")


def cmd_eval(args, extra):
    _reject_unused(_settings(args, extra), set())
    params = calibnet.load_checkpoint(args.checkpoint)
    data = trainer.read_synth_csv(args.data)
    preds = evalkit.predict(params, data.f, data.g_prior, data.g_star, data.prior_error_deg,
                            data.nongravity_ratio)
    if args.predictions:
        evalkit.write_predictions(preds, args.predictions)
    summ = evalkit.method_summaries(preds, args.upright_frame)
    rows = evalkit.summary_rows(summ)
    if args.csv:
        evalkit.write_csv(args.csv, evalkit.SUMMARY_HEADER, rows)
    _emit(args, summ, evalkit.format_table(evalkit.SUMMARY_HEADER, rows))


def cmd_tilt_report(args, extra):
    _reject_unused(_settings(args, extra), set())
    preds = evalkit.read_predictions(args.predictions)
    default = labels.TABLE1_TILT_EDGES if args.table1 else evalkit.FIG3_TILT_EDGES
    reports = evalkit.method_tilt_reports(preds, _edges(args.edges, default), args.upright_frame)
    header, rows = evalkit.tilt_rows(reports)
    if args.csv:
        evalkit.write_csv(args.csv, header, rows)
    _emit(args, reports, evalkit.format_table(header, rows))


def cmd_gate_diag(args, extra):
    _reject_unused(_settings(args, extra), set())
    preds = evalkit.read_predictions(args.predictions)
    by_err, by_r = evalkit.gate_diagnostics(
        preds.tau, preds.prior_error_deg, preds.nongravity_ratio,
        _edges(args.error_edges, evalkit.PRIOR_ERROR_EDGES),
        _edges(args.ratio_edges, evalkit.RATIO_EDGES))
    h1, r1 = evalkit.gate_rows(by_err, "prior error (deg)")
    h2, r2 = evalkit.gate_rows(by_r, "non-gravity ratio")
    if args.csv:
        base = Path(args.csv)
        evalkit.write_csv(base.with_name(base.stem + "_error.csv"), h1, r1)
        evalkit.write_csv(base.with_name(base.stem + "_ratio.csv"), h2, r2)
    _emit(args, {"prior_error": by_err, "nongravity_ratio": by_r},
          evalkit.format_table(h1, r1) + "\n\n" + evalkit.format_table(h2, r2))


def _record_paths(text: str) -> list[Path]:
    out = []
    for part in text.split(","):
        p = Path(part)
        out.extend(sorted(p.glob("*.csv")) if p.is_dir() else [p])
    return out


def cmd_stats(args, extra):
    _reject_unused(_settings(args, extra), set())
    groups: dict[str, list[Path]] = {}
    for s in args.split or []:
        if "=" not in s:
            raise UsageError(f"--split expects NAME=PATH[,PATH], got {s!r}")
        name, text = s.split("=", 1)
        groups[name] = _record_paths(text)
    if args.records:
        groups.setdefault("all", []).extend(p for r in args.records for p in _record_paths(r))
    if not groups:
        raise UsageError("stats needs sequence record CSVs (positional or --split)")
    with ThreadPoolExecutor(max_workers=args.threads) as pool:
        splits = {k: list(pool.map(labels.read_sequence, v)) for k, v in groups.items()}
    st = evalkit.dataset_stats(splits, _edges(args.edges, labels.TABLE1_TILT_EDGES))
    split_rows, tilt_rows = evalkit.stats_rows(st)
    if args.density:
        g = np.array([f.g_gt for recs in splits.values() for r in recs for f in r.frames])
        evalkit.write_csv(args.density, ["polar_lo", "polar_hi", "azimuth_lo", "azimuth_hi",
                                         "count", "density"], evalkit.sphere_density(g))
    text = (evalkit.format_table(["split", "sessions", "images"], split_rows) + "\n\n"
            + evalkit.format_table(["tilt bin", "images", "ratio %"], tilt_rows))
    _emit(args, {"splits": st.splits, "tilt_edges": st.tilt_edges,
                 "tilt_counts": st.tilt_counts, "tilt_ratios": st.tilt_ratios()}, text)


def cmd_remap(args, extra):
    _reject_unused(_settings(args, extra), set())
    intr = ingest.read_camera_matrix(args.camera_matrix)
    w = args.width or intr.width
    h = args.height or intr.height
    table = ingest.build_remap_table(intr, (w, h))
    ingest.write_remap_table(table, args.output)
    _emit(args, {"width": w, "height": h, "output": str(args.output)},
          f"wrote {w}x{h} remap table to {args.output}")


def cmd_gradcheck(args, extra):
    _reject_unused(_settings(args, extra), set())
    t0 = time.perf_counter()
    rep = run_gradcheck(seed=args.seed, n_configs=args.configs)
    secs = time.perf_counter() - t0
    rows = [[k, v] for k, v in rep.per_param.items()]
    text = (evalkit.format_table(["parameter", "max rel error"],
                                 [[k, f"{v:.3e}"] for k, v in rows])
            + f"\n\n{rep.n_configs} configs, {rep.n_resampled} resampled near ReLU kinks, "
              f"{secs:.1f}s\nmax relative error {rep.max_rel_error:.3e} ({rep.worst_param}): "
              f"{'PASS' if rep.passed else 'FAIL'}")
    _emit(args, {**dataclasses.asdict(rep), "passed": rep.passed, "seconds": secs}, text)
    if not rep.passed:
        raise NumericError(f"gradient check failed: {rep.max_rel_error:.3e} > {rep.rtol}")


# --- parser ----------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="key = value settings file")
    common.add_argument("--json", action="store_true", help="machine-readable output")
    common.add_argument("--threads", type=int, default=os.cpu_count() or 1)

    p = _Parser(prog="gravprior", description="Gravity-prior calibration toolkit.")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    def add(name, fn, help_):
        sp = sub.add_parser(name, parents=[common], help=help_)
        sp.set_defaults(fn=fn)
        return sp

    sp = add("extract", cmd_extract, "Stray recordings -> labeled sequence CSVs")
    sp.add_argument("stray_dirs", nargs="+")
    sp.add_argument("-o", "--output", required=True)
    sp.add_argument("--column-map", help="file or 'logical=header,...' remapping")

    sp = add("mahony", cmd_mahony, "IMU stream -> gravity estimates CSV")
    sp.add_argument("imu", help="imu.csv (stray) or an EuRoC directory")
    sp.add_argument("--format", choices=("stray", "euroc"), default="stray")
    sp.add_argument("--frames", help="CSV whose first column holds frame times")
    sp.add_argument("-o", "--output", required=True)

    sp = add("align", cmd_align, "gravity pairs -> rotation JSON")
    sp.add_argument("pairs", nargs="+", help="CSV of g_cam_xyz, g_imu_xyz rows")
    sp.add_argument("--global-fit", action="store_true", help="one rotation for all files")
    sp.add_argument("-o", "--output", required=True)

    sp = add("synth", cmd_synth, "synthetic feature dataset")
    sp.add_argument("-o", "--output", required=True)

    sp = add("train", cmd_train, "train the calibrator")
    sp.add_argument("--data", required=True, help="directory with train.csv and val.csv")
    sp.add_argument("--lr-step", choices=("epoch", "iter"))
    sp.add_argument("-o", "--output", required=True)

    sp = add("eval", cmd_eval, "method comparison report")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--data", required=True, help="dataset CSV")
    sp.add_argument("--predictions", help="also write per-frame predictions here")
    sp.add_argument("--csv")
    sp.add_argument("--upright-frame", choices=("arkit", "euroc"), default="arkit")

    sp = add("tilt-report", cmd_tilt_report, "mean error per tilt bin")
    sp.add_argument("predictions")
    sp.add_argument("--edges")
    sp.add_argument("--table1", action="store_true", help="three 60-degree bins")
    sp.add_argument("--csv")
    sp.add_argument("--upright-frame", choices=("arkit", "euroc"), default="arkit")

    sp = add("gate-diag", cmd_gate_diag, "mean gate per prior-error and ratio bin")
    sp.add_argument("predictions")
    sp.add_argument("--error-edges")
    sp.add_argument("--ratio-edges")
    sp.add_argument("--csv", help="base path; writes <stem>_error.csv and <stem>_ratio.csv")

    sp = add("stats", cmd_stats, "split sizes and tilt distribution")
    sp.add_argument("records", nargs="*", help="sequence CSVs or directories")
    sp.add_argument("--split", action="append", help="NAME=PATH[,PATH]")
    sp.add_argument("--edges")
    sp.add_argument("--density", help="write an S^2 direction histogram CSV")

    sp = add("remap", cmd_remap, "undistortion remap table")
    sp.add_argument("camera_matrix")
    sp.add_argument("--width", type=int)
    sp.add_argument("--height", type=int)
    sp.add_argument("-o", "--output", required=True)

    sp = add("gradcheck", cmd_gradcheck, "finite-difference gradient check")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--configs", type=int, default=100)
    return p


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args, extra = parser.parse_known_args(argv)
        if not getattr(args, "fn", None):
            raise UsageError(parser.format_usage() + "gravprior: error: a subcommand is required")
        if args.threads < 1:
            raise UsageError("--threads must be at least 1")
        args.fn(args, extra)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def main() -> None:
    sys.exit(run())
