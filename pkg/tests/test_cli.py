import csv
import json

import pytest

from debiasing.cli import build_parser, main
from debiasing.imageio import write_signal_csv

TV1D_SMALL = ["--length", "48", "--pieces", "3", "--min-piece-len", "8"]


def test_tv1d_run_writes_outputs(tmp_path, capsys):
    out = tmp_path / "tv1d"
    code = main(["tv1d", "--lambda", "20", "--sigma", "10", "--out", str(out), "--trace", *TV1D_SMALL])
    assert code == 0
    stdout = capsys.readouterr().out
    assert "Running tv1d" in stdout
    assert "debiased" in stdout
    assert f"→ {out / 'metrics.csv'}" in stdout
    for name in ("metrics.csv", "trace.csv", "run.json", "signal_debiased.csv"):
        assert (out / name).exists()
    with open(out / "metrics.csv", newline="") as fh:
        assert next(csv.reader(fh)) == [
            "method", "psnr_db", "method_bias_norm", "model_bias_norm", "iters", "converged",
        ]
    assert "debiased" in json.loads((out / "timing.json").read_text())


def test_flags_reach_the_spec(tmp_path):
    out = tmp_path / "run"
    main(["tv1d", "--lambda", "3", "--sigma", "0", "--seed", "2", "--no-bias-report", "--out", str(out), *TV1D_SMALL])
    spec = json.loads((out / "run.json").read_text())["spec"]
    assert spec["lam"] == 3.0
    assert spec["noise_sigma"] == 0.0
    assert spec["seed"] == 2
    assert spec["length"] == 48
    assert spec["bias_report"] is False


def test_config_sidecar_with_flag_override(tmp_path):
    config = tmp_path / "run.json"
    config.write_text(json.dumps({"lambda": 8.0, "sigma": 5.0, "length": 40, "pieces": 2, "min_piece_len": 8}))
    out = tmp_path / "out"
    assert main(["tv1d", "--config", str(config), "--sigma", "1", "--out", str(out)]) == 0
    spec = json.loads((out / "run.json").read_text())["spec"]
    assert (spec["lam"], spec["noise_sigma"], spec["length"]) == (8.0, 1.0, 40)


def test_input_signal(tmp_path):
    truth = write_signal_csv(tmp_path / "truth.csv", [5.0] * 10 + [50.0] * 10)
    out = tmp_path / "out"
    assert main(["tv1d", "--lambda", "2", "--sigma", "0", "--input", str(truth), "--out", str(out)]) == 0
    with open(out / "signal_clean.csv", newline="") as fh:
        assert len(list(csv.DictReader(fh))) == 20


def test_missing_lambda_is_an_error(tmp_path, capsys):
    assert main(["tv1d", "--out", str(tmp_path)]) == 1
    err = capsys.readouterr().err
    assert err.startswith("error: ParameterError:")
    assert "--lambda" in err


def test_bad_lambda_is_an_error(tmp_path, capsys):
    assert main(["lasso", "--lambda", "-1", "--out", str(tmp_path)]) == 1
    assert capsys.readouterr().err.startswith("error: ParameterError:")


def test_missing_input_file_is_an_error(tmp_path, capsys):
    code = main(["nlm", "--input", str(tmp_path / "nope.pgm"), "--out", str(tmp_path / "out")])
    assert code == 1
    assert capsys.readouterr().err.startswith("error: ")


def test_unknown_command_exits():
    with pytest.raises(SystemExit):
        build_parser().parse_args(["wavelets"])


def test_subcommand_specific_flags():
    parser = build_parser()
    args = parser.parse_args(["tv2d-deconv", "--lambda-grid", "1", "2", "4", "--bandwidth", "1.5"])
    assert args.lambda_grid == [1.0, 2.0, 4.0]
    assert args.bandwidth == 1.5
    with pytest.raises(SystemExit):
        parser.parse_args(["tv1d", "--lambda-grid", "1"])


def test_wrongly_typed_sidecar_is_an_error(tmp_path, capsys):
    config = tmp_path / "run.json"
    config.write_text(json.dumps({"lambda": "twenty"}))
    assert main(["tv1d", "--config", str(config), "--out", str(tmp_path / "out")]) == 1
    err = capsys.readouterr().err
    assert err.startswith("error: ParameterError:")
    assert "twenty" in err
    assert len(err.strip().splitlines()) == 1


def test_broken_sidecar_is_an_error(tmp_path, capsys):
    config = tmp_path / "run.json"
    config.write_text("{lambda: 20}")
    assert main(["tv1d", "--config", str(config), "--out", str(tmp_path / "out")]) == 1
    err = capsys.readouterr().err
    assert err.startswith("error: ParameterError:")
    assert "invalid JSON" in err
