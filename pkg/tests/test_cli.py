import os
import subprocess
import sys

import numpy as np
import pytest

from mmgr.cli import main
from mmgr.fusion import read_scores

from workflow import full_workflow, run


def test_workflow_produces_artifacts(tmp_path, capsys):
    files = full_workflow(tmp_path)
    assert all(f.is_file() for f in files)
    out = capsys.readouterr().out
    assert "epoch=1 loss=" in out and "accuracy=" in out and "total correct=" in out
    fused = read_scores(tmp_path / "fused.csv")
    assert fused.scores.shape == (3, 3)
    assert np.allclose(fused.scores.sum(axis=1), 1)


def test_gen_is_deterministic(tmp_path):
    for name in ("a", "b"):
        run("gen", "--classes", 8, "--per-class", 1, "--frames", 8, "--size", 16, "--seed", 7,
            "--out", tmp_path / name)
    a = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    assert a == sorted(p.relative_to(tmp_path / "b") for p in (tmp_path / "b").rglob("*") if p.is_file())
    assert all((tmp_path / "a" / p).read_bytes() == (tmp_path / "b" / p).read_bytes() for p in a)


def test_fuse_with_zero_weight_reproduces_first(tmp_path):
    (tmp_path / "a.csv").write_text("id,c0,c1,c2\nx,0.1,0.7,0.2\ny,0.6,0.3,0.1\n")
    (tmp_path / "b.csv").write_text("id,c0,c1,c2\nx,0.9,0.05,0.05\ny,0.0,0.0,1.0\n")
    run("fuse", tmp_path / "a.csv", tmp_path / "b.csv", "--weights", "1,0", "--out", tmp_path / "f.csv",
        "--pred", tmp_path / "p.csv")
    assert (tmp_path / "p.csv").read_text() == "id,label\nx,1\ny,0\n"
    assert np.array_equal(read_scores(tmp_path / "f.csv").scores, read_scores(tmp_path / "a.csv").scores)


def test_eval_hand_made(tmp_path, capsys):
    (tmp_path / "t.csv").write_text("id,label\na,0\nb,1\nc,2\nd,1\n")
    (tmp_path / "p.csv").write_text("id,label\na,0\nb,1\nc,2\nd,0\n")
    run("eval", "--pred", tmp_path / "p.csv", "--truth", tmp_path / "t.csv")
    assert "accuracy=0.750000 n=4" in capsys.readouterr().out


def test_unknown_flag_exits_2(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["gen", "--bogus"])
    assert exc.value.code == 2
    assert "unrecognized arguments" in capsys.readouterr().err


def test_missing_file_exits_2(tmp_path, capsys):
    assert main(["eval", "--pred", str(tmp_path / "none.csv"), "--truth", str(tmp_path / "t.csv")]) == 2
    assert "error:" in capsys.readouterr().err
    assert main(["train", "--data", str(tmp_path), "--out", str(tmp_path / "m.ckpt")]) == 2
    assert main(["train", "--data", str(tmp_path)]) == 2


def test_bad_input_exits_1(tmp_path, capsys):
    (tmp_path / "a.csv").write_text("wrong\n")
    assert main(["fuse", str(tmp_path / "a.csv"), "--out", str(tmp_path / "f.csv")]) == 1
    assert "header" in capsys.readouterr().err


def test_threads_do_not_change_output(tmp_path, monkeypatch):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("num_classes = 4\ninput_size = 16\nrgb.widths = 4\nepochs = 1\n")
    run("gen", "--classes", 4, "--per-class", 3, "--frames", 8, "--size", 16, "--out", tmp_path / "d")
    run("train", "--data", tmp_path / "d", "--config", cfg, "--out", tmp_path / "m.ckpt")
    outputs = []
    for threads in ("1", "3"):
        monkeypatch.setenv("MMGR_THREADS", threads)
        path = tmp_path / f"s{threads}.csv"
        run("score", "--data", tmp_path / "d", "--config", cfg, "--model", tmp_path / "m.ckpt", "--out", path)
        outputs.append(path.read_bytes())
    assert outputs[0] == outputs[1]


def test_module_entry_point():
    env = dict(os.environ)
    proc = subprocess.run([sys.executable, "-m", "mmgr", "--help"], capture_output=True, text=True, env=env)
    assert proc.returncode == 0
    for cmd in ("gen", "flow", "train", "score", "fuse", "eval", "pipeline"):
        assert cmd in proc.stdout
