import csv
import json

import numpy as np
import pytest
from PIL import Image

from litenext.checkpoint import load_checkpoint
from litenext.cli import main
from litenext.config import RunConfig
from litenext.data import write_png


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli") / "data"
    assert main(["synth", "--n", "10", "--size", "32", "--seed", "3", "--out", str(d)]) == 0
    return d


TINY = ["--set", "base_channels=4", "--set", "gcf_dim=8", "--set", "head_channels=8", "--set", "context_scale=2", "--set", "mwl_k=3"]


@pytest.fixture(scope="module")
def run_dir(data_dir):
    out = data_dir.parent / "run"
    code = main(["train", "--data", str(data_dir), "--out", str(out), "--epochs", "2", "--batch-size", "4", "--seed", "1", *TINY])
    assert code == 0
    return out


def test_synth_prints_summary(tmp_path, capsys):
    assert main(["synth", "--n", "2", "--size", "16", "--out", str(tmp_path / "d")]) == 0
    assert capsys.readouterr().out.strip() == "generated 2 pairs at 16x16"


@pytest.mark.parametrize(
    "argv",
    [
        ["synth", "--n", "2", "--size", "32"],
        ["synth", "--n", "0", "--size", "32", "--out", "x"],
        ["synth", "--n", "2", "--size", "30", "--out", "x"],
        ["synth", "--n", "2", "--size", "32", "--overlap", "2", "--out", "x"],
        ["bogus"],
        [],
    ],
)
def test_usage_errors_exit_2(argv, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(argv) == 2


def test_help_exits_0(capsys):
    assert main(["--help"]) == 0


def test_train_writes_outputs(run_dir):
    assert {p.name for p in run_dir.iterdir()} == {"resolved.cfg", "history.csv", "best.ckpt", "final.ckpt"}
    rows = list(csv.DictReader((run_dir / "history.csv").open()))
    assert [int(r["epoch"]) for r in rows] == [1, 2]
    cfg = RunConfig().with_overrides(RunConfig.parse((run_dir / "resolved.cfg").read_text()))
    assert (cfg.image_size, cfg.batch_size, cfg.base_channels, cfg.seed) == (32, 4, 4, 1)
    params = load_checkpoint(run_dir / "best.ckpt")
    assert params.cfg.image_size == 32 and params.cfg.base_channels == 4


def test_train_refuses_existing_outputs(run_dir, data_dir):
    before = (run_dir / "history.csv").read_bytes()
    assert main(["train", "--data", str(data_dir), "--out", str(run_dir), "--epochs", "1", *TINY]) == 2
    assert (run_dir / "history.csv").read_bytes() == before


def test_train_bad_config_key(tmp_path, data_dir):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("epochs=1\nnot_a_key=3\n")
    assert main(["train", "--data", str(data_dir), "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert not (tmp_path / "o").exists()


def test_train_missing_data_exit_1(tmp_path):
    assert main(["train", "--data", str(tmp_path / "nope"), "--out", str(tmp_path / "o"), "--epochs", "1"]) == 1
    assert not (tmp_path / "o").exists()


def test_config_file_and_flag_precedence(tmp_path, data_dir):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(f"data={data_dir}\nepochs=5\nlr=0.01\nbase_channels=4\ngcf_dim=8\nhead_channels=8\ncontext_scale=2\n")
    out = tmp_path / "o"
    assert main(["train", "--config", str(cfg), "--epochs", "1", "--batch-size", "8", "--out", str(out)]) == 0
    resolved = RunConfig.parse((out / "resolved.cfg").read_text())
    assert resolved["epochs"] == 1 and resolved["lr"] == 0.01
    assert len((out / "history.csv").read_text().splitlines()) == 2


def test_eval_self_baseline(run_dir, data_dir, tmp_path, capsys):
    rep = tmp_path / "r.json"
    args = ["eval", "--checkpoint", str(run_dir / "best.ckpt"), "--data", str(data_dir), "--report", str(rep)]
    assert main(args) == 0
    doc = json.loads(rep.read_text())
    assert doc["aggregate"]["n"] == 10
    preds = sorted((tmp_path / "r_predictions").glob("*.png"))
    assert len(preds) == 10
    assert np.asarray(Image.open(preds[0])).shape == (32, 32)
    rep2 = tmp_path / "r2.json"
    assert main(args[:-1] + [str(rep2), "--baseline-report", str(rep)]) == 0
    assert all(p == 1.0 for p in json.loads(rep2.read_text())["p_values"].values())
    assert (tmp_path / "r2.csv").exists()


def test_eval_corrupt_checkpoint_exit_1(run_dir, data_dir, tmp_path):
    buf = bytearray((run_dir / "best.ckpt").read_bytes())
    buf[len(buf) // 2] ^= 0xFF
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(bytes(buf))
    assert main(["eval", "--checkpoint", str(bad), "--data", str(data_dir), "--report", str(tmp_path / "r.json")]) == 1


def _mask(tmp_path, arr):
    p = tmp_path / "m.png"
    write_png(p, np.asarray(arr, dtype=np.uint8) * 255)
    return p


def test_weightmask_rejects_bad_weights(tmp_path):
    m = _mask(tmp_path, np.ones((8, 8)))
    argv = ["weightmask", "--mask", str(m), "--wb", "0.3", "--wo", "0.3", "--wm", "0.4", "--out", str(tmp_path / "w.png")]
    assert main(argv) == 2
    assert not (tmp_path / "w.png").exists()


def test_weightmask_all_zero(tmp_path, capsys):
    m = _mask(tmp_path, np.zeros((8, 8)))
    assert main(["weightmask", "--mask", str(m), "--out", str(tmp_path / "w.png")]) == 0
    assert capsys.readouterr().out.split() == ["background", "64", "object", "0", "margin", "0"]
    np.testing.assert_array_equal(np.asarray(Image.open(tmp_path / "w.png")), 25)


def test_weightmask_centred_dot(tmp_path, capsys):
    a = np.zeros((9, 9))
    a[4, 4] = 1
    m = _mask(tmp_path, a)
    assert main(["weightmask", "--mask", str(m), "--k", "3", "--out", str(tmp_path / "w.png")]) == 0
    assert capsys.readouterr().out.split() == ["background", "72", "object", "0", "margin", "9"]
    img = np.asarray(Image.open(tmp_path / "w.png"))
    assert (img[3:6, 3:6] == 153).all() and (img == 153).sum() == 9 and (img == 25).sum() == 72
