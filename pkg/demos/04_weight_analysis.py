"""Compare adapter weight distributions of a trained student and teacher.

Trains a short run first, then histograms the adapter matrices on a shared
symmetric range and reports which model's weights are more spread out.
"""
import tempfile

from idat import analysis, checkpoint, config, presets
from idat.experiment import run

raw = presets.get("idat-P-kl")[0]
raw.update(epochs=3)
raw["optim"]["warmup_epochs"] = 1
raw["pretext"]["epochs"] = 2
raw["data"]["synthetic"]["samples_per_class"] = 20

with tempfile.TemporaryDirectory() as out:
    run(config.from_dict(raw), out)
    student = checkpoint.load(f"{out}/student.ckpt")
    teacher = checkpoint.load(f"{out}/teacher.ckpt")

lo_hi = analysis.symmetric_range([student, teacher])
rs = analysis.weight_report(student, "student", range=lo_hi)
rt = analysis.weight_report(teacher, "teacher", range=lo_hi)
for e in rs.entries:
    print(f"student layer {e.layer} {e.matrix:6s} std {e.stats.std:.4f} kurtosis {e.stats.excess_kurtosis:+.3f}")
for e in rt.entries:
    print(f"teacher layer {e.layer} {e.matrix:6s} std {e.stats.std:.4f} kurtosis {e.stats.excess_kurtosis:+.3f}")

# the student is deeper, so pair layers by relative depth
for c in analysis.compare_reports(rs, rt, analysis.depth_pairing(rs, rt)):
    print(c.key_a, "vs", c.key_b, f"std ratio {c.std_ratio:.3f}", "more dispersed:", c.more_dispersed)
