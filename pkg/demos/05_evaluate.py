"""Evaluate a trained calibrator the way the reports do.

Loads ``model.gckp`` from the directory given as the first argument (as
written by 04_train_calibrator.py), or trains a short model if none is
given. Prints the method comparison, the per-tilt breakdown and the gate
diagnostics.
"""

import sys
from pathlib import Path

from gravprior.calibnet import NetDims, init_params, load_checkpoint
from gravprior.evalkit import (
    SUMMARY_HEADER,
    format_table,
    gate_diagnostics,
    gate_rows,
    method_summaries,
    method_tilt_reports,
    predict,
    summary_rows,
    tilt_rows,
)
from gravprior.trainer import SynthConfig, TrainConfig, make_synth, train_loop

train, val = make_synth(SynthConfig())
if len(sys.argv) > 1:
    params = load_checkpoint(Path(sys.argv[1]) / "model.gckp")
else:
    print("no checkpoint given; training for 10 epochs first\n")
    params, _ = train_loop(init_params(NetDims()), train, val, cfg=TrainConfig(epochs=10))

preds = predict(params, val.f, val.g_prior, val.g_star, val.prior_error_deg, val.nongravity_ratio)
print(format_table(SUMMARY_HEADER, summary_rows(method_summaries(preds))))
print()
print(format_table(*tilt_rows(method_tilt_reports(preds))))
print()
by_err, by_ratio = gate_diagnostics(preds.tau, preds.prior_error_deg, preds.nongravity_ratio)
print(format_table(*gate_rows(by_err, "prior error (deg)")))
print()
print(format_table(*gate_rows(by_ratio, "non-gravity ratio")))
