"""Jointly tune a wide student and a narrow teacher on synthetic data.

A shortened version of the ``idat-P-kl`` preset so it finishes in well under
a minute.  Pass a larger epoch count on the command line for the full run.
"""
import sys
import tempfile

from idat import config, presets
from idat.experiment import run

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 4
raw = presets.get("idat-P-kl")[0]
raw.update(epochs=epochs, with_baseline=True)
raw["optim"]["warmup_epochs"] = 1
raw["pretext"]["epochs"] = 2
raw["data"]["synthetic"]["samples_per_class"] = 30
cfg = config.from_dict(raw)

with tempfile.TemporaryDirectory() as out:
    summary = run(cfg, out)
    print(open(f"{out}/metrics.log").read().splitlines()[:3])

print("epoch losses:", [round(v, 3) for v in summary["epoch_loss"]])
print(f"student test acc {summary['test_acc_last']:.3f}, "
      f"baseline {summary['baseline']['test_acc_last']:.3f}")
print("student trainable:", summary["student_params"])
