import numpy as np
import pytest

from localsgd.cli import main
from localsgd.config import load_config
from localsgd.harness import load_checkpoint, save_checkpoint

CFG = """
objective = logistic
dataset = synthetic:sparse-binary:256:12:0
K = 2
B_loc = 8
H = 2
lr = 1.0
epochs = 2
seeds = 1,2
"""


@pytest.fixture
def cfg_path(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text(CFG)
    return p


def test_run_writes_trace_config_and_checkpoints(cfg_path, tmp_path, capsys):
    out = tmp_path / "o"
    assert main(["run", str(cfg_path), "--out", str(out), "--set", "H=4"]) == 0
    trace = (out / "trace.csv").read_text().splitlines()
    assert trace[0].startswith("run_id,round,step")
    echoed = load_config(str(out / "config.txt"))
    assert echoed.H == 4 and echoed.K == 2
    assert load_checkpoint(str(out / "final.ckpt")).shape == (12,)
    assert "budget" in capsys.readouterr().out


def test_echoed_config_replays_bit_exactly(cfg_path, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", str(cfg_path), "--out", str(a), "--set", "codec=ef-sign"]) == 0
    assert main(["run", str(a / "config.txt"), "--out", str(b)]) == 0
    assert (a / "trace.csv").read_bytes() == (b / "trace.csv").read_bytes()


def test_all_seeds(cfg_path, tmp_path):
    out = tmp_path / "o"
    assert main(["run", str(cfg_path), "--out", str(out), "--all-seeds"]) == 0
    ids = {line.split(",")[0] for line in (out / "trace.csv").read_text().splitlines()[1:]}
    assert ids == {"run-s1", "run-s2"}


def test_config_error_exit_code(cfg_path, tmp_path, capsys):
    assert main(["run", str(cfg_path), "--out", str(tmp_path), "--set", "K=3", "--set", "blocks=2"]) == 2
    assert "config error" in capsys.readouterr().err
    assert main(["run", str(tmp_path / "nope.cfg"), "--out", str(tmp_path)]) == 2


def test_grid_and_search_failure(cfg_path, tmp_path):
    out = tmp_path / "g"
    assert main(["grid", str(cfg_path), "--out", str(out), "--family", "constant",
                 "--set", "f_star=0.1", "--set", "target_eps=100"]) == 0
    assert (out / "grid.csv").read_text().startswith("family,c,time_to_target")
    code = main(["grid", str(cfg_path), "--out", str(out), "--family", "constant",
                 "--set", "f_star=-1", "--set", "target_eps=1e-9", "--set", "grid_start=28"])
    assert code == 3


def test_sweep(cfg_path, tmp_path):
    out = tmp_path / "s"
    assert main(["sweep", str(cfg_path), "--out", str(out), "--K", "1", "2", "--H", "1", "2",
                 "--set", "f_star=0.1", "--set", "target_eps=100"]) == 0
    lines = (out / "sweep.csv").read_text().splitlines()
    assert lines[0] == "K,H,time_to_target,speedup,c" and len(lines) == 5
    assert main(["sweep", str(cfg_path), "--out", str(out), "--K", "2", "--H", "2",
                 "--set", "f_star=0.1"]) == 2


def test_diag_commands(cfg_path, tmp_path):
    a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    save_checkpoint(np.zeros(12), str(a))
    save_checkpoint(np.ones(12) * 0.1, str(b))
    out = tmp_path / "d"
    assert main(["diag", "spectrum", str(cfg_path), "--checkpoint", str(a), "--out", str(out), "--k", "2"]) == 0
    rows = (out / "spectrum.csv").read_text().splitlines()
    assert rows[0] == "rank,eigenvalue,converged" and len(rows) == 3
    assert main(["diag", "interpolate", str(cfg_path), "--checkpoint", str(a), "--checkpoint-b", str(b),
                 "--out", str(out), "--points", "5"]) == 0
    rows = (out / "interpolate.csv").read_text().splitlines()
    assert rows[0] == "lambda,train_loss,eval_loss" and len(rows) == 6
    save_checkpoint(np.zeros(3), str(a))
    assert main(["diag", "spectrum", str(cfg_path), "--checkpoint", str(a), "--out", str(out)]) == 2
    assert main(["diag", "interpolate", str(cfg_path), "--checkpoint", str(b), "--out", str(out)]) == 2
