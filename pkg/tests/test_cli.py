import csv
import json
import struct

import numpy as np
import pytest

from idat import checkpoint
from idat.cli import SWEEP_FIELDS, main
from idat.data import load_dataset
from idat.model import ViTConfig, build_model


def test_gen_data_round_trip_and_determinism(tmp_path, capsys):
    args = ["gen-data", "--num-classes", "4", "--samples-per-class", "5", "--image-size", "6", "--seed", "9"]
    assert main(args + ["--out", str(tmp_path / "a.idds")]) == 0
    assert main(args + ["--out", str(tmp_path / "b.idds")]) == 0
    a = (tmp_path / "a.idds").read_bytes()
    assert a == (tmp_path / "b.idds").read_bytes()
    assert struct.unpack_from("<I", a, 8)[0] == 20
    ds = load_dataset(tmp_path / "a.idds")
    assert len(ds) == 20 and ds.num_classes == 4
    assert "wrote" in capsys.readouterr().out


def test_gen_data_bad_flags(tmp_path, capsys):
    assert main(["gen-data", "--out", str(tmp_path / "x"), "--num-classes", "0"]) == 2
    assert "error" in capsys.readouterr().err
    with pytest.raises(SystemExit) as e:
        main(["gen-data", "--out", str(tmp_path / "x"), "--noise", "loud"])
    assert e.value.code == 2


def test_train_eval_analyze(tmp_path, tiny_yaml, capsys):
    out = tmp_path / "run"
    assert main(["train", "--config", str(tiny_yaml()), "--out", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["student_params"]["adapters"] == 1 * (2 * 16 * 2 + 2 + 16)
    assert summary["teacher_params"]["head"] == 8 * 3 + 3
    rows = (out / "metrics.log").read_text().splitlines()
    assert rows[0] == "step,lr,ce_s,ce_t,distill,total"
    assert all("" not in r.split(",") for r in rows[1:])
    capsys.readouterr()

    ckpt = str(out / "student.ckpt")
    for _ in range(2):
        assert main(["eval", "--checkpoint", ckpt, "--data", str(out / "test.idds")]) == 0
    first, second = capsys.readouterr().out.splitlines()
    assert first == second
    assert float(first.split()[1]) == summary["test_acc_last"]

    an = tmp_path / "an"
    assert main(["analyze", ckpt, "--out", str(an)]) == 0
    assert sorted(p.name for p in an.iterdir()) == ["student__stats.txt", "student__weights.csv"]
    assert main(["analyze", ckpt, str(out / "teacher.ckpt"), "--out", str(an)]) == 0
    with open(an / "comparison.csv") as f:
        assert len(list(csv.DictReader(f))) == 2


def test_baseline_logs_only_student_ce(tmp_path, tiny_yaml):
    out = tmp_path / "base"
    assert main(["train", "--config", str(tiny_yaml(name="base", teacher=False)), "--out", str(out)]) == 0
    for row in (out / "metrics.log").read_text().splitlines()[1:]:
        step, lr, ce_s, ce_t, distill, total = row.split(",")
        assert ce_t == distill == "" and ce_s == total
    assert not (out / "teacher.ckpt").exists()


def test_effective_config_reproduces_run(tmp_path, tiny_yaml):
    assert main(["train", "--config", str(tiny_yaml()), "--out", str(tmp_path / "a"), "--seed", "11"]) == 0
    eff = tmp_path / "a" / "effective_config.yaml"
    assert main(["train", "--config", str(eff), "--out", str(tmp_path / "b")]) == 0
    for f in ("student.ckpt", "teacher.ckpt", "metrics.log"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_sweep_directory(tmp_path, tiny_yaml, capsys):
    tiny_yaml(name="one")
    tiny_yaml(name="two", teacher=False)
    out = tmp_path / "sweep"
    assert main(["train", "--config", str(tmp_path), "--out", str(out), "--seed", "1"]) == 0
    with open(out / "sweep_summary.csv") as f:
        rows = list(csv.DictReader(f))
    assert [r["name"] for r in rows] == ["one", "two"]
    assert tuple(rows[0]) == SWEEP_FIELDS
    assert rows[0]["seed"] != rows[1]["seed"]
    assert capsys.readouterr().out.startswith("name,seed")


def test_invalid_config_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("name: x\nepochs: -3\n")
    assert main(["train", "--config", str(bad)]) == 2
    assert "epochs" in capsys.readouterr().err
    assert main(["train", "--config", "no-such-preset"]) == 2
    bad.write_text("name: [unclosed\n")
    assert main(["train", "--config", str(bad)]) == 2


def test_numeric_failure_exit_3(tmp_path, tiny_yaml, capsys):
    path = tiny_yaml()
    code = main(["train", "--config", str(path), "--out", str(tmp_path / "boom"),
                 "--set", "pretext.lr=1e30", "--set", "pretext.warmup_epochs=0"])
    assert code == 3
    assert "numeric" in capsys.readouterr().err


def test_eval_version_mismatch_exit_2(tmp_path):
    cfg = ViTConfig(image_size=8, patch_size=4, channels=1, depth=1, width=8, heads=2, num_classes=3)
    path = tmp_path / "m.ckpt"
    checkpoint.save(build_model(cfg, 0), path)
    buf = bytearray(path.read_bytes())
    buf[4:8] = struct.pack("<I", 9)
    path.write_bytes(bytes(buf))
    data = tmp_path / "d.idds"
    main(["gen-data", "--out", str(data), "--num-classes", "3", "--image-size", "8", "--channels", "1"])
    assert main(["eval", "--checkpoint", str(path), "--data", str(data)]) == 2


def test_analyze_without_adapters_exit_2(tmp_path, capsys):
    cfg = ViTConfig(image_size=8, patch_size=4, channels=1, depth=1, width=8, heads=2, num_classes=3)
    checkpoint.save(build_model(cfg, 0), tmp_path / "m.ckpt")
    assert main(["analyze", str(tmp_path / "m.ckpt"), "--out", str(tmp_path / "o")]) == 2
    assert "no adapter parameters found" in capsys.readouterr().err


def test_constant_predictor_eval(tmp_path, capsys):
    cfg = ViTConfig(image_size=8, patch_size=4, channels=1, depth=1, width=8, heads=2, num_classes=4)
    m = build_model(cfg, 0)
    m["head.weight"].data[:] = 0
    m["head.bias"].data[:] = np.array([0, 0, 1, 0])
    checkpoint.save(m, tmp_path / "c.ckpt")
    data = tmp_path / "d.idds"
    main(["gen-data", "--out", str(data), "--num-classes", "4", "--samples-per-class", "3",
          "--image-size", "8", "--channels", "1"])
    capsys.readouterr()
    assert main(["eval", "--checkpoint", str(tmp_path / "c.ckpt"), "--data", str(data)]) == 0
    assert capsys.readouterr().out.strip() == "accuracy 0.25"
