"""Train the gated calibrator on synthetic features.

The default desk configuration runs 50 epochs over 20k samples (well under a
minute on one core). Pass a smaller epoch count as the first argument for a
quick look, and an output directory as the second to keep the checkpoint.
"""

import sys
import tempfile
from pathlib import Path

from gravprior.calibnet import NetDims, init_params, save_checkpoint
from gravprior.trainer import SynthConfig, TrainConfig, make_synth, train_loop, write_history_csv

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 50
out = Path(sys.argv[2]) if len(sys.argv) > 2 else Path(tempfile.mkdtemp())
out.mkdir(parents=True, exist_ok=True)

synth = SynthConfig()
train, val = make_synth(synth)
print(f"{len(train)} train / {len(val)} val samples, mean prior error "
      f"{val.prior_error_deg.mean():.2f} deg\n")


def show(rec):
    if rec.epoch % 5 == 0 or rec.epoch == epochs - 1:
        print(f"epoch {rec.epoch:2d}  val loss {rec.val.total:.4f}  fused {rec.val_err_pred:5.2f}  "
              f"corrected prior {rec.val_err_corr:5.2f}  image {rec.val_err_img:5.2f}  "
              f"mean tau {rec.val_tau_mean:.2f}")


params, history = train_loop(init_params(NetDims(C=synth.C)), train, val,
                             cfg=TrainConfig(epochs=epochs), on_epoch=show)
save_checkpoint(params, out / "model.gckp")
write_history_csv(history, out / "history.csv")
print(f"\ncheckpoint and history in {out}")
