import csv
import json
import subprocess
import sys

import pytest

from anomseg.cli import main
from anomseg.plots import read_plot_csv
from anomseg.trainer import save_oracle_checkpoint

SMALL_SPEC = {"height": 32, "width": 32, "num_background_classes": 3}


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    spec = root / "spec.json"
    spec.write_text(json.dumps(SMALL_SPEC))
    assert main(["synth", "--out", str(root / "data"), "--spec", str(spec), "--count", "12", "--seed", "3"]) == 0
    return root / "data"


def test_synth_counts_and_determinism(tmp_path):
    assert main(["synth", "--out", str(tmp_path / "a"), "--count", "4", "--seed", "1"]) == 0
    assert main(["synth", "--out", str(tmp_path / "b"), "--count", "4", "--seed", "1"]) == 0
    m = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert len(m["samples"]) == 8
    assert sum(e["domain"] == "V" for e in m["samples"]) == 4
    assert (tmp_path / "a" / "manifest.json").read_bytes() == (tmp_path / "b" / "manifest.json").read_bytes()
    assert (tmp_path / "a" / "config.json").is_file()


def test_synth_invalid_spec_names_field(tmp_path, capsys):
    spec = tmp_path / "s.json"
    spec.write_text(json.dumps({"height": 8}))
    assert main(["synth", "--out", str(tmp_path / "x"), "--spec", str(spec)]) == 1
    assert "height" in capsys.readouterr().err
    spec.write_text(json.dumps({"hieght": 64}))
    assert main(["synth", "--out", str(tmp_path / "x"), "--spec", str(spec)]) == 1
    assert "hieght" in capsys.readouterr().err


def test_unknown_flag_rejected(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["synth", "--out", str(tmp_path), "--bogus"])
    assert exc.value.code == 1


def test_train_override_and_plot(data_dir, tmp_path):
    out = tmp_path / "run"
    rc = main(["train", "--data", str(data_dir), "--out", str(out),
               "--override", "max_iters=4", "n_anchor=10", "lambda_c=0"])
    assert rc == 0
    with open(out / "losses.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 4 and all(float(r["L_CAC"]) == 0.0 for r in rows)
    assert json.loads((out / "config.json").read_text())["lambda_c"] == 0.0

    plots = tmp_path / "plots"
    assert main(["plot", "--run", str(out), "--out", str(plots)]) == 0
    tau_curve = read_plot_csv(plots / "tau_schedule.csv")
    assert tau_curve["tau"][0] == 1.0 and tau_curve["tau"][-1] == 0.5
    for name in ("loss_curves.png", "tau_schedule.png", "lr_schedule.png", "config.json"):
        assert (plots / name).is_file()


def test_train_bad_inputs(tmp_path):
    assert main(["train", "--data", str(tmp_path / "none"), "--out", str(tmp_path / "o")]) == 1
    assert main(["train", "--data", str(tmp_path), "--out", str(tmp_path / "o"), "--override", "nope=1"]) == 1


def test_eval_oracle_and_plot(data_dir, tmp_path, capsys):
    ckpt = tmp_path / "oracle.pt"
    save_oracle_checkpoint(ckpt)
    for name in ("e1", "e2"):
        assert main(["eval", "--data", str(data_dir), "--checkpoint", str(ckpt), "--out", str(tmp_path / name)]) == 0
    assert "ap=1.0000" in capsys.readouterr().out
    report = (tmp_path / "e1" / "report.json").read_bytes()
    assert report == (tmp_path / "e2" / "report.json").read_bytes()
    assert json.loads(report)["ap"] == 1.0

    assert main(["plot", "--run", str(tmp_path / "e1"), "--out", str(tmp_path / "p")]) == 0
    pr = read_plot_csv(tmp_path / "p" / "pr_curve_plot.csv")
    assert all(p == 1.0 for p, r in zip(pr["precision"], pr["recall"]) if r < 1.0)


def test_eval_empty_dataset(tmp_path, capsys):
    ckpt = tmp_path / "oracle.pt"
    save_oracle_checkpoint(ckpt)
    (tmp_path / "empty").mkdir()
    assert main(["eval", "--data", str(tmp_path / "empty"), "--checkpoint", str(ckpt), "--out", str(tmp_path / "o")]) == 1
    assert "undefined metric" in capsys.readouterr().err


def test_eval_bad_checkpoint(data_dir, tmp_path):
    bad = tmp_path / "bad.pt"
    bad.write_text("junk")
    assert main(["eval", "--data", str(data_dir), "--checkpoint", str(bad), "--out", str(tmp_path / "o")]) == 1


def test_plot_missing_run(tmp_path):
    assert main(["plot", "--run", str(tmp_path / "none"), "--out", str(tmp_path / "o")]) == 1


def test_ablate_bad_seeds(data_dir, tmp_path):
    assert main(["ablate", "--data", str(data_dir), "--out", str(tmp_path), "--seeds", "a,b"]) == 1


def test_output_root_env(tmp_path, monkeypatch):
    monkeypatch.setenv("ANOMSEG_OUTPUT_ROOT", str(tmp_path))
    assert main(["synth", "--out", "rel", "--count", "1"]) == 0
    assert (tmp_path / "rel" / "manifest.json").is_file()


def test_console_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "anomseg.cli", "plot", "--run", str(tmp_path / "x"),
                          "--out", str(tmp_path / "y")], capture_output=True, text=True)
    assert res.returncode == 1
    assert "does not exist" in res.stderr
