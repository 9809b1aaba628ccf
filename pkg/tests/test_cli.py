import configparser

import numpy as np
import pytest

from flowvla.cli import main
from flowvla.model import load_checkpoint

SMALL_RUN = """\
[model]
preset = tiny
image_size = 16
patch_size = 8
max_images = 3
action_dim = 8
horizon = 10

[train]
batch_size = 4
eval_every = 2

[data]
mixture = reach:arm_1cam pick_place:arm
episodes_per_pair = 2
"""


@pytest.fixture
def cfg_file(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text(SMALL_RUN)
    return path


def run(*argv):
    return main([str(a) for a in argv])


def test_unknown_flag_and_subcommand_exit_two(capsys):
    assert run("pretrain", "--bogus") == 2
    assert "usage" in capsys.readouterr().err
    assert run("dance") == 2


def test_pretrain_zero_steps_writes_init_checkpoint(tmp_path, cfg_file):
    out = tmp_path / "init"
    assert run("pretrain", "--config", cfg_file, "--steps", 0, "--out", out, "--seed", 4) == 0
    model, meta = load_checkpoint(out / "checkpoint.bin")
    assert meta["phase"] == "init" and model.config.horizon == 10
    saved = configparser.ConfigParser()
    saved.read(out / "config.ini")
    assert saved["run"]["seed"] == "4" and saved["train"]["steps"] == "0"


def test_saved_config_reproduces_run(tmp_path, cfg_file):
    a = tmp_path / "a"
    assert run("pretrain", "--config", cfg_file, "--steps", 4, "--out", a) == 0
    b = tmp_path / "b"
    assert run("pretrain", "--config", a / "config.ini", "--out", b) == 0
    assert (a / "checkpoint.bin").read_bytes() == (b / "checkpoint.bin").read_bytes()


@pytest.fixture
def checkpoint(tmp_path, cfg_file):
    out = tmp_path / "ckpt"
    assert run("pretrain", "--config", cfg_file, "--steps", 0, "--out", out) == 0
    return out / "checkpoint.bin"


def test_eval_prints_one_line_per_condition(tmp_path, checkpoint, capsys):
    commands = tmp_path / "human.txt"
    commands.write_text("reach target\n")
    out = tmp_path / "eval"
    code = run("eval", "--checkpoint", checkpoint, "--episodes", 2, "--execute-k", 5, "--out", out,
               "--task", "reach", "--embodiment", "arm", "--human-commands", commands)
    assert code == 0
    lines = capsys.readouterr().out.splitlines()
    assert [line.split(":")[0] for line in lines] == ["flat", "commander", "human"]
    assert all("+/-" in line and "(n=2)" in line for line in lines)
    assert (out / "eval.csv").read_text().splitlines()[0] == "condition,mean,stderr,n"


def test_human_file_naming_missing_object_fails_cleanly(tmp_path, checkpoint, capsys):
    commands = tmp_path / "human.txt"
    commands.write_text("pick red\nreach target\n")
    code = run("eval", "--checkpoint", checkpoint, "--episodes", 1, "--execute-k", 5, "--out", tmp_path / "e",
               "--task", "reach", "--embodiment", "arm", "--human-commands", commands)
    assert code == 1 and "red" in capsys.readouterr().err


def test_sample_emits_csv(tmp_path, checkpoint, capsys):
    assert run("sample", "--checkpoint", checkpoint, "--out", tmp_path / "s", "--embodiment", "dual",
               "--task", "reach") == 0
    text = capsys.readouterr().out
    rows = text.splitlines()
    assert rows[0] == "a0,a1,a2,a3,a4,a5" and len(rows) == 11
    np.loadtxt(rows[1:], delimiter=",")
    assert (tmp_path / "s" / "chunk.csv").read_text() == text


def test_bench_emits_timing_csv(tmp_path, cfg_file, capsys):
    assert run("bench", "--config", cfg_file, "--out", tmp_path / "b") == 0
    rows = capsys.readouterr().out.splitlines()
    assert rows[0] == "part,ms" and rows[-1].startswith("total,")


def test_gen_data_writes_episode_dirs(tmp_path):
    out = tmp_path / "gen"
    assert run("gen-data", "--task", "reach", "--embodiment", "arm", "--episodes", 2, "--out", out) == 0
    assert sorted(p.name for p in (out / "data" / "arm" / "reach").iterdir()) == ["00000", "00001"]


def test_finetune_from_generated_data(tmp_path, checkpoint, capsys):
    gen = tmp_path / "gen"
    assert run("gen-data", "--task", "reach", "--embodiment", "arm", "--episodes", 2, "--out", gen) == 0
    out = tmp_path / "ft"
    assert run("finetune", "--checkpoint", checkpoint, "--data", gen / "data", "--task", "reach",
               "--embodiment", "arm", "--steps", 3, "--out", out) == 0
    _, meta = load_checkpoint(out / "checkpoint.bin")
    assert meta["phase"] == "finetune" and "final loss" in capsys.readouterr().out


def test_errors_exit_nonzero(tmp_path, capsys):
    assert run("eval", "--out", tmp_path / "x") == 2
    assert "--checkpoint" in capsys.readouterr().err
    assert run("pretrain", "--config", tmp_path / "missing.ini", "--out", tmp_path / "y") == 2
    assert run("sample", "--checkpoint", tmp_path / "nope.bin", "--out", tmp_path / "z") == 1


def test_gradcheck_passes(tmp_path, capsys):
    assert run("gradcheck", "--out", tmp_path) == 0
    out = capsys.readouterr().out
    assert out.count("PASS") == 2 and "FAIL" not in out


@pytest.mark.slow
def test_verify_passes_on_fresh_build(tmp_path, capsys):
    assert run("verify", "--out", tmp_path) == 0
    assert "FAIL" not in capsys.readouterr().out
