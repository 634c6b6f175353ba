import subprocess
import sys

import pytest

from tetra import nn
from tetra.cli import COMMANDS, run
from conftest import TOY_CONFIG


def small_config(tmp_path, extra=""):
    text = TOY_CONFIG.read_text()
    text = text.replace("epochs = 20", "epochs = 2")
    text = text.replace("alphas = 0.02, 0.05, 0.1", "alphas = 0.05").replace("gammas = 1, 3, 10, 30", "gammas = 3, 10")
    text = text.replace("attack_restarts = 2", "attack_restarts = 2\nmax_images = 30")
    path = tmp_path / "small.ini"
    path.write_text(text + extra)
    return path


def test_all_spec_commands_exist():
    assert set(COMMANDS) == {"train", "attack", "eval-tetra", "eval-fetra", "rpgd-analysis",
                             "ablate-vanilla", "ablate-distance", "timing", "grid-search", "report"}


def test_train_writes_checkpoint(tmp_path, capsys):
    assert run(["train", "--config", str(small_config(tmp_path)), "--out", str(tmp_path / "o")]) == 0
    c = nn.load_checkpoint(tmp_path / "o" / "model.ckpt")
    assert c.num_classes == 4 and c.input_dim == 16
    assert (tmp_path / "o" / "loss.csv").read_text().startswith("epoch,clean_loss,adv_loss\n")
    assert "clean test accuracy" in capsys.readouterr().out


def test_checkpoint_reuse(tmp_path):
    cfg = str(small_config(tmp_path))
    run(["train", "--config", cfg, "--out", str(tmp_path / "a")])
    run(["attack", "--config", cfg, "--out", str(tmp_path / "b")])
    run(["attack", "--config", cfg, "--out", str(tmp_path / "c"), "--checkpoint", str(tmp_path / "a" / "model.ckpt")])
    assert (tmp_path / "b" / "table.csv").read_bytes() == (tmp_path / "c" / "table.csv").read_bytes()
    assert not (tmp_path / "c" / "model.ckpt").exists()


def test_checkpoint_shape_mismatch(tmp_path, rng, capsys):
    nn.save_checkpoint(nn.mlp([5, 3], rng), tmp_path / "bad.ckpt")
    code = run(["attack", "--config", str(small_config(tmp_path)), "--out", str(tmp_path / "o"),
                "--checkpoint", str(tmp_path / "bad.ckpt")])
    assert code == 1 and "checkpoint is 5->3" in capsys.readouterr().err


def test_seed_flag_changes_outputs(tmp_path):
    cfg = str(small_config(tmp_path))
    run(["train", "--config", cfg, "--out", str(tmp_path / "a")])
    run(["train", "--config", cfg, "--out", str(tmp_path / "b"), "--seed", "99"])
    assert (tmp_path / "a" / "model.ckpt").read_bytes() != (tmp_path / "b" / "model.ckpt").read_bytes()


def test_fetra_needs_top_k(tmp_path, capsys):
    path = tmp_path / "nok.ini"
    path.write_text(small_config(tmp_path).read_text().replace("top_k = 2", "top_k = none"))
    assert run(["eval-fetra", "--config", str(path), "--out", str(tmp_path / "o")]) == 1
    assert "top_k" in capsys.readouterr().err
    assert run(["eval-fetra", "--config", str(path), "--out", str(tmp_path / "o"), "--top-k", "3"]) == 0


def test_dump_transforms(tmp_path):
    out = tmp_path / "o"
    run(["eval-tetra", "--config", str(small_config(tmp_path)), "--out", str(out), "--dump-transforms"])
    names = sorted(p.name for p in (out / "transforms").iterdir())
    assert "TETRA_L2_0.5.bin" in names and "TETRA_L2_0.5.bin.index.csv" in names


def test_bad_config(tmp_path, capsys):
    (tmp_path / "x.ini").write_text("[dataset]\nclasses = 3\n")
    assert run(["train", "--config", str(tmp_path / "x.ini")]) == 2
    assert "seed" in capsys.readouterr().err


def test_missing_command():
    with pytest.raises(SystemExit):
        run([])


def test_module_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "tetra", "train", "--config", str(small_config(tmp_path)),
                          "--out", str(tmp_path / "o")], capture_output=True, text=True)
    assert out.returncode == 0 and (tmp_path / "o" / "model.ckpt").exists()
