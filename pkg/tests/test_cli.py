import csv
import io
import re
import subprocess
import sys

import numpy as np
import pytest

from swinlip.cli import EXIT_CONFIG, EXIT_FAIL, EXIT_IO, EXIT_OK, main
from swinlip.rng import Rng
from swinlip.tensorio import read_tensor, write_tensor

REDUCED = """\
patch.size = 3
input.frames = 3
input.height = 24
input.width = 24
stem.channels = 4
stage1.channels = 16
stage2.channels = 32
stage2.heads = 2
stage3.channels = 64
stage3.depth = 2
stage3.heads = 4
temporal.dim = 128
temporal.heads = 4
temporal.ffn_hidden = 128
temporal.kernel = 5
"""


def _totals(out):
    # the overall summary follows the per-module lines
    p, g = re.findall(r"params ([\d.]+) M, MACs ([\d.]+) G", out)[-1]
    return float(p), float(g)


@pytest.mark.parametrize("text,params,macs", [
    ("", 12.46, 1.92),
    ("temporal.streaming = true\n", 9.82, 1.84),
    ("model.kind = resnet18_frontend\n", 11.18, 9.2),
])
def test_describe_totals(tmp_path, capsys, text, params, macs):
    cfg = tmp_path / "m.cfg"
    cfg.write_text(text)
    assert main(["describe", "--config", str(cfg), "--csv", str(tmp_path / "r.csv")]) == EXIT_OK
    p, g = _totals(capsys.readouterr().out)
    tol = 0.05 if "resnet" in text else 0.03
    assert abs(p - params) <= tol * params
    assert abs(g - macs) <= 0.10 * macs
    rows = list(csv.reader(io.StringIO((tmp_path / "r.csv").read_text())))
    assert rows[0] == ["layer", "params", "macs", "out_shape"] and rows[-1][0] == "total"


def test_describe_config_error_has_line_number(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("# comment\nstage1.window = 3\n")
    assert main(["describe", "--config", str(cfg)]) == EXIT_CONFIG
    assert "line 2" in capsys.readouterr().err


def test_missing_config_file_is_io_error(tmp_path):
    assert main(["describe", "--config", str(tmp_path / "nope.cfg")]) == EXIT_IO


def test_forward_is_bitwise_reproducible(tmp_path, capsys):
    clip = Rng(0).uniform((29, 88, 88, 1)).astype(np.float32)
    write_tensor(tmp_path / "in.slt", clip)
    assert main(["init", "--output", str(tmp_path / "w.slwz")]) == EXIT_OK
    args = ["forward", "--weights", str(tmp_path / "w.slwz"), "--input", str(tmp_path / "in.slt")]
    assert main(args + ["--output", str(tmp_path / "a.slt")]) == EXIT_OK
    assert main(args + ["--output", str(tmp_path / "b.slt")]) == EXIT_OK
    assert read_tensor(tmp_path / "a.slt").shape == (29, 512)
    assert (tmp_path / "a.slt").read_bytes() == (tmp_path / "b.slt").read_bytes()
    assert "29x88x88x1 -> 29x512" in capsys.readouterr().out


def test_forward_indivisible_input_exits_2(tmp_path):
    write_tensor(tmp_path / "in.slt", np.zeros((29, 90, 90, 1), dtype=np.float32))
    assert main(["forward", "--input", str(tmp_path / "in.slt"),
                 "--output", str(tmp_path / "o.slt")]) == EXIT_CONFIG


def test_forward_wrong_rank_exits_2(tmp_path):
    write_tensor(tmp_path / "in.slt", np.zeros((29, 88, 88), dtype=np.float32))
    assert main(["forward", "--input", str(tmp_path / "in.slt"),
                 "--output", str(tmp_path / "o.slt")]) == EXIT_CONFIG


def test_forward_missing_input_exits_3(tmp_path):
    assert main(["forward", "--input", str(tmp_path / "none.slt"),
                 "--output", str(tmp_path / "o.slt")]) == EXIT_IO


def test_forward_weights_for_other_config_exits_3(tmp_path):
    cfg = tmp_path / "s.cfg"
    cfg.write_text("temporal.streaming = true\n")
    assert main(["init", "--config", str(cfg), "--output", str(tmp_path / "w.slwz")]) == EXIT_OK
    write_tensor(tmp_path / "in.slt", np.zeros((2, 88, 88, 1), dtype=np.float32))
    assert main(["forward", "--weights", str(tmp_path / "w.slwz"), "--input", str(tmp_path / "in.slt"),
                 "--output", str(tmp_path / "o.slt")]) == EXIT_IO


def test_bench_rejects_single_rep(tmp_path):
    assert main(["bench", "--reps", "1", "--t-values", "1"]) == EXIT_CONFIG


def test_bench_csv(tmp_path, capsys):
    cfg = tmp_path / "r.cfg"
    cfg.write_text(REDUCED)
    assert main(["bench", "--config", str(cfg), "--t-values", "2,1", "--csv", str(tmp_path / "b.csv")]) == EXIT_OK
    rows = list(csv.reader(io.StringIO((tmp_path / "b.csv").read_text())))
    assert rows[0] == ["model", "T", "mean_ms", "std_ms", "reps"]
    assert [r[1] for r in rows[1:]] == ["1", "2"]


def test_gradcheck_passes(capsys):
    assert main(["gradcheck", "--max-entries", "1"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "reduced_model" in out and "FAIL" not in out


def test_gradcheck_fails_at_impossible_tolerance(capsys):
    assert main(["gradcheck", "--tolerance", "1e-30", "--max-entries", "1"]) == EXIT_FAIL
    assert "FAILED:" in capsys.readouterr().out


def test_overfit_zero_lr_trace(tmp_path, capsys):
    assert main(["overfit", "--steps", "2", "--lr", "0", "--csv", str(tmp_path / "t.csv")]) == EXIT_OK
    rows = list(csv.reader(io.StringIO((tmp_path / "t.csv").read_text())))
    assert rows[0] == ["step", "loss", "accuracy"] and rows[1][1] == rows[2][1]


def test_overfit_divergence_exits_1(capsys):
    with np.errstate(all="ignore"):
        assert main(["overfit", "--steps", "20", "--lr", "1e6"]) == EXIT_FAIL


def test_console_entry_point():
    out = subprocess.run([sys.executable, "-m", "swinlip.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "describe" in out.stdout
