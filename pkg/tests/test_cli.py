import csv
import math

import numpy as np
import pytest

import wavefield.layer as layer
from wavefield.cli import CSV_SCHEMAS, fmt, main
from wavefield.model import ModelConfig, init_params, model_forward
from wavefield.params_io import load_params, save_params


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.reader(fh))


def run(tmp_path, *args, name="out"):
    out = tmp_path / name
    code = main([*args, "--out", str(out)])
    return code, out


# ---- formatting

def test_fmt_17_significant_digits():
    assert fmt(0.1) == "0.10000000000000001"
    assert float(fmt(math.pi)) == math.pi
    assert fmt(True) == "true" and fmt(np.bool_(False)) == "false"
    assert fmt(float("inf")) == "inf" and fmt(float("nan")) == "nan"
    assert fmt(np.int64(7)) == "7"


# ---- gradcheck

def test_gradcheck_default_passes(tmp_path):
    code, out = run(tmp_path, "gradcheck", "--set", "instances=12")
    rows = read_csv(out / "gradcheck.csv")
    assert code == 0
    assert rows[0] == CSV_SCHEMAS["gradcheck"]
    assert len(rows) == 13
    assert all(float(r[4]) <= 1e-5 for r in rows[1:])


def test_gradcheck_corrupted_adjoint_fails(tmp_path, capsys):
    code, out = run(tmp_path, "gradcheck", "--set", "instances=3", "--set", "corrupt_d_gamma=true")
    rows = read_csv(out / "gradcheck.csv")
    assert code == 1
    assert len(rows) == 4 and all(float(r[4]) > 1e-5 for r in rows[1:])
    assert "max relative error" in capsys.readouterr().err


def test_gradcheck_empty(tmp_path):
    code, out = run(tmp_path, "gradcheck", "--set", "instances=0")
    assert code == 0
    assert read_csv(out / "gradcheck.csv") == [CSV_SCHEMAS["gradcheck"]]


# ---- dt sweep and wecs

def test_dt_sweep_rows(tmp_path):
    code, out = run(tmp_path, "dt-sweep", "--set", "dt_grid=[0.01, 0.1, 0.5, 0.7, 1.0]")
    rows = read_csv(out / "dt_sweep.csv")
    assert code == 0 and rows[0] == CSV_SCHEMAS["dt-sweep"]
    assert [float(r[0]) for r in rows[1:]] == [0.01, 0.1, 0.5, 0.7, 1.0]
    assert [r[3] for r in rows[1:]] == ["false", "false", "false", "true", "true"]


def test_dt_sweep_single_row(tmp_path):
    code, out = run(tmp_path, "dt-sweep", "--set", "dt_grid=[0.1]")
    assert len(read_csv(out / "dt_sweep.csv")) == 2


def test_wecs_rows(tmp_path):
    code, out = run(tmp_path, "wecs")
    rows = read_csv(out / "wecs.csv")
    assert code == 0 and rows[0] == CSV_SCHEMAS["wecs"]
    verlet = {int(r[1]): float(r[2]) for r in rows[1:] if r[0] == "verlet"}
    euler = [abs(float(r[2]) - 1) for r in rows[1:] if r[0] == "euler"]
    assert set(verlet) == {1, 10, 100, 1000}
    assert 0.999 <= verlet[1] <= 1.001
    assert 0.99 <= verlet[1000] <= 1.01
    assert all(b >= a for a, b in zip(euler, euler[1:]))
    assert euler[-1] > 0.5


# ---- train

SMALL_PATTERN = ["--set", "task=pattern-detect", "--set", "n=24", "--set", "d=4",
                 "--set", "train_steps=3", "--set", "heldout=20", "--set", "log_every=1",
                 "--set", "batch_size=4", "--set", "vocab=8"]


def test_train_inverse_medium_zero_lr_flat_curve(tmp_path):
    code, out = run(tmp_path, "train", "--set", "lr=0", "--set", "train_steps=4",
                    "--set", "log_every=1", "--set", "num_samples=4")
    rows = read_csv(out / "curve.csv")
    assert code == 0 and rows[0] == CSV_SCHEMAS["curve"]
    assert len({r[1] for r in rows[1:]}) == 1
    report = dict(read_csv(out / "report.csv")[1:])
    assert report["task"] == "inverse-medium"
    params, meta = load_params(out / "params.txt")
    assert meta["kind"] == "direct-medium" and params["c"].shape == (64,)
    assert read_csv(out / "medium.csv")[0] == CSV_SCHEMAS["dump-medium"]


@pytest.mark.parametrize("args", [
    ["--set", "train_steps=5", "--set", "num_samples=4"],
    ["--set", "task=universality-fit", "--set", "train_steps=5"],
    SMALL_PATTERN,
])
def test_train_is_deterministic(tmp_path, args):
    a = run(tmp_path, "train", "--seed", "3", *args, name="a")[1]
    b = run(tmp_path, "train", "--seed", "3", *args, name="b")[1]
    files = sorted(p.name for p in a.iterdir())
    assert files == sorted(p.name for p in b.iterdir())
    for f in files:
        assert (a / f).read_bytes() == (b / f).read_bytes()


def test_train_pattern_outputs(tmp_path):
    code, out = run(tmp_path, "train", *SMALL_PATTERN)
    assert code == 0
    for f in ("curve_wave.csv", "curve_control.csv", "params_wave.txt", "params_control.txt", "medium.csv"):
        assert (out / f).exists()
    assert len(read_csv(out / "medium.csv")) == 25


def test_train_rejects_unknown_task(tmp_path, capsys):
    code, _ = run(tmp_path, "train", "--set", "task=dt-sweep")
    assert code == 2 and "task must be" in capsys.readouterr().err


# ---- dump-medium

def model_file(tmp_path, cfg, params):
    path = tmp_path / "params.txt"
    save_params(path, params, {"kind": "model", "model": cfg.to_dict()})
    return path


def test_dump_medium_zero_weights(tmp_path):
    cfg = ModelConfig(d=4, num_blocks=1, steps=2, input_kind="tokens", vocab_size=5, readout="pooled", out_dim=2)
    params = init_params(cfg)
    for k in ("w_c", "b_c", "w_g", "b_g"):
        params[f"block0.{k}"] = np.zeros_like(params[f"block0.{k}"])
    path = model_file(tmp_path, cfg, params)
    code, out = run(tmp_path, "dump-medium", "--set", f"params={path}", "--set", "tokens=[0, 1, 2, 3, 4, 0, 1]")
    rows = read_csv(out / "medium.csv")
    assert code == 0 and rows[0] == CSV_SCHEMAS["dump-medium"]
    assert len(rows) == 8
    assert all(float(r[2]) == pytest.approx(math.log(2)) and float(r[3]) == pytest.approx(math.log(2))
               for r in rows[1:])


def test_dump_medium_matches_forward_bitwise(tmp_path, monkeypatch):
    cfg = ModelConfig(d=4, num_blocks=2, steps=2, input_kind="tokens", vocab_size=6, readout="pooled",
                      out_dim=2, weight_scale=1.0)
    params = init_params(cfg, 5)
    path = model_file(tmp_path, cfg, params)
    tokens = [5, 1, 2, 3, 0, 4, 4, 2, 1]
    seen = []
    original = layer.wave_layer_forward

    def spy(H, p):
        out, tape = original(H, p)
        seen.append(tape.medium.c.copy())
        return out, tape

    monkeypatch.setattr("wavefield.model.wave_layer_forward", spy)
    model_forward(np.array(tokens), params, cfg)
    monkeypatch.undo()
    code, out = run(tmp_path, "dump-medium", "--set", f"params={path}", "--set", f"tokens={tokens}",
                    "--set", "block=1")
    dumped = np.array([float(r[2]) for r in read_csv(out / "medium.csv")[1:]])
    assert code == 0
    assert dumped.tobytes() == seen[1].tobytes()


def test_dump_medium_bad_file(tmp_path, capsys):
    bad = tmp_path / "bad.txt"
    bad.write_text("not a param file\n")
    code, _ = run(tmp_path, "dump-medium", "--set", f"params={bad}")
    assert code == 2 and "parameter file" in capsys.readouterr().err


def test_dump_medium_shape_mismatch(tmp_path):
    cfg = ModelConfig(d=4, num_blocks=1, steps=2, input_kind="tokens", vocab_size=5, readout="pooled", out_dim=2)
    params = init_params(cfg)
    params["block0.w_c"] = np.zeros(3)
    path = model_file(tmp_path, cfg, params)
    code, _ = run(tmp_path, "dump-medium", "--set", f"params={path}", "--set", "tokens=[0, 1, 2]")
    assert code == 2


# ---- config handling

def test_config_file_and_override(tmp_path):
    cfg = tmp_path / "sweep.yaml"
    cfg.write_text("dt_grid: [0.1, 0.2]\nn: 32\nseed: 4\n")
    code, out = run(tmp_path, "dt-sweep", "--config", str(cfg), "--set", "dt_grid=[0.3]")
    rows = read_csv(out / "dt_sweep.csv")
    assert code == 0 and [r[0] for r in rows[1:]] == ["0.29999999999999999"]


@pytest.mark.parametrize("text,msg", [
    ("bogus_key: 1\n", "unknown key"),
    ("- 1\n- 2\n", "mapping"),
    ("dt_grid: [0.1\n", "YAML"),
])
def test_config_errors(tmp_path, capsys, text, msg):
    cfg = tmp_path / "c.yaml"
    cfg.write_text(text)
    code, _ = run(tmp_path, "dt-sweep", "--config", str(cfg))
    assert code == 2 and msg in capsys.readouterr().err


def test_missing_config_file(tmp_path, capsys):
    code, _ = run(tmp_path, "wecs", "--config", str(tmp_path / "nope.yaml"))
    assert code == 2


def test_unsorted_dt_grid_rejected(tmp_path, capsys):
    code, _ = run(tmp_path, "dt-sweep", "--set", "dt_grid=[0.2, 0.1]")
    assert code == 2 and "increasing" in capsys.readouterr().err


def test_bench_small_grid(tmp_path):
    code, out = run(tmp_path, "bench", "--set", "ns=[64, 128]", "--set", "d=8", "--set", "reps=1",
                    "--set", "warmup=0")
    rows = read_csv(out / "bench.csv")
    assert code == 0 and rows[0] == CSV_SCHEMAS["bench"]
    assert [r[0] for r in rows[1:]] == ["64", "128"]
    assert all(float(r[1]) > 0 and float(r[2]) > 0 for r in rows[1:])
