import csv
import json
import logging
import math

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from debiasing.config import ExperimentSpec
from debiasing.errors import InvalidDimensionError, ParameterError
from debiasing.harness import (
    METRICS_HEADER,
    awgn,
    gen_cartoon_2d,
    gen_pwc_1d,
    gen_texture_2d,
    psnr,
    run_experiment,
    tune_lambda,
)
from debiasing.imageio import read_pgm, read_signal_csv, write_pgm, write_signal_csv
from debiasing.linops import Shape, Signal

SMALL_TV1D = {"kind": "tv1d", "length": 64, "pieces": 3, "min_piece_len": 16}


def test_gen_pwc_1d_pieces():
    u = gen_pwc_1d(100, 5, min_piece_len=10, seed=3).values
    assert np.count_nonzero(np.diff(u)) == 4
    assert u.min() >= 0 and u.max() <= 192
    assert np.unique(gen_pwc_1d(50, 1, seed=0).values).size == 1


def test_gen_pwc_1d_is_deterministic():
    assert_array_equal(gen_pwc_1d(64, 4, seed=9).values, gen_pwc_1d(64, 4, seed=9).values)
    assert not np.array_equal(gen_pwc_1d(64, 4, seed=9).values, gen_pwc_1d(64, 4, seed=10).values)


def test_gen_pwc_1d_rejects_infeasible_segmentation():
    with pytest.raises(ParameterError):
        gen_pwc_1d(10, 4, min_piece_len=3)
    with pytest.raises(ParameterError):
        gen_pwc_1d(10, 0)


def test_image_generators():
    cartoon = gen_cartoon_2d(24, 20, seed=1)
    assert cartoon.shape.dims == (24, 20)
    assert_array_equal(cartoon.values, np.rint(cartoon.values))
    assert_array_equal(cartoon.values, gen_cartoon_2d(24, 20, seed=1).values)

    texture = gen_texture_2d(12, 12, period=3, seed=0).image()
    assert_array_equal(texture[:, :3], texture[:, 3:6])
    assert_array_equal(texture[:3], texture[9:])


def test_awgn_zero_sigma_is_a_copy():
    f = Signal.from_array(np.arange(5.0))
    g = awgn(f, 0.0, seed=1)
    assert_array_equal(g.values, f.values)
    assert g.values is not f.values
    with pytest.raises(ParameterError):
        awgn(f, -1.0, seed=1)


def test_awgn_statistics():
    n, sigma = 1_000_000, 10.0
    w = awgn(Signal(np.zeros(n), Shape.one_d(n)), sigma, seed=0).values
    assert abs(w.var() / sigma**2 - 1) < 0.01
    assert abs(w.mean()) < 4 * sigma / math.sqrt(n)


def test_psnr_examples():
    ref = np.linspace(0, 255, 16)
    assert math.isinf(psnr(ref, ref))
    assert psnr(ref + 255.0, ref) == pytest.approx(0.0, abs=1e-12)
    assert psnr(ref + math.sqrt(255.0), ref) == pytest.approx(24.065, abs=1e-3)
    with pytest.raises(InvalidDimensionError):
        psnr(ref, ref[:4])


def test_tv1d_noiseless_debiasing_has_no_method_bias():
    result = run_experiment(ExperimentSpec(**SMALL_TV1D, lam=2.0, noise_sigma=0.0, tol=1e-12))
    assert [row.method for row in result.rows] == ["noisy", "biased", "debiased"]
    assert math.isinf(result.row("noisy").psnr_db)
    biased, debiased = result.row("biased"), result.row("debiased")
    assert debiased.method_bias_norm < 1e-6
    assert biased.method_bias_norm > 1e-3
    assert debiased.psnr_db > biased.psnr_db
    assert result.summary["true_support_size"] == 3


def test_tv1d_artifacts(tmp_path):
    spec = ExperimentSpec(**SMALL_TV1D, lam=20.0, trace=True, out_dir=tmp_path)
    result = run_experiment(spec)
    names = {p.name for p in result.artifacts}
    assert {"metrics.csv", "trace.csv", "run.json"} <= names
    assert {f"signal_{label}.csv" for label in ("clean", "noisy", "biased", "debiased")} <= names
    assert "history.csv" not in names

    with open(tmp_path / "metrics.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == METRICS_HEADER
    assert "runtime_s" not in rows[0]
    assert [r[0] for r in rows[1:]] == ["noisy", "biased", "debiased"]
    assert_allclose(read_signal_csv(tmp_path / "signal_debiased.csv"), result.signals["debiased"], rtol=0)

    run = json.loads((tmp_path / "run.json").read_text())
    assert run["spec"]["kind"] == "tv1d"
    assert "out_dir" not in run["spec"]
    assert run["summary"]["lambda"] == 20.0


def test_runs_are_reproducible(tmp_path):
    for name in ("a", "b"):
        run_experiment(ExperimentSpec(**SMALL_TV1D, lam=20.0, seed=4, out_dir=tmp_path / name))
    for label in ("clean", "noisy", "biased", "debiased"):
        fname = f"signal_{label}.csv"
        assert (tmp_path / "a" / fname).read_bytes() == (tmp_path / "b" / fname).read_bytes()
    for fname in ("metrics.csv", "run.json"):
        assert (tmp_path / "a" / fname).read_bytes() == (tmp_path / "b" / fname).read_bytes()
    timing = json.loads((tmp_path / "a" / "timing.json").read_text())
    assert set(timing) == {"noisy", "biased", "debiased"}
    assert timing["biased"] > 0


def test_non_convergence_is_flagged_not_raised(caplog):
    with caplog.at_level(logging.WARNING, logger="debiasing.harness"):
        result = run_experiment(ExperimentSpec(**SMALL_TV1D, lam=20.0, max_iters=2, bias_report=False))
    assert not result.row("biased").converged
    assert result.row("biased").iters == 2
    assert math.isnan(result.row("biased").method_bias_norm)
    assert "did not converge" in caplog.text


def test_tv1d_from_input_file(tmp_path):
    u0 = np.array([10.0] * 12 + [80.0] * 12 + [30.0] * 8)
    path = write_signal_csv(tmp_path / "truth.csv", u0)
    result = run_experiment(ExperimentSpec(kind="tv1d", lam=5.0, noise_sigma=0.0, input_path=path))
    assert_array_equal(result.signals["clean"], u0)
    assert result.summary["true_support_size"] == 3


def test_tv2d_deconvolution_with_lambda_grid(tmp_path):
    spec = ExperimentSpec(
        kind="tv2d-deconv", image_size=16, max_iters=300, lambda_grid=(5.0, 50.0), out_dir=tmp_path
    )
    result = run_experiment(spec)
    assert result.summary["lambda"] in (5.0, 50.0)
    assert result.spec.lam == result.summary["lambda"]
    assert json.loads((tmp_path / "run.json").read_text())["spec"]["lam"] == result.summary["lambda"]
    assert len(result.summary["lambda_scores"]) == 2
    assert [row.method for row in result.rows] == ["noisy", "biased", "debiased"]
    for label in ("clean", "noisy", "biased", "debiased"):
        assert read_pgm(tmp_path / f"tv2d_deconv_{label}.pgm").shape == (16, 16)


def test_tune_lambda():
    spec = ExperimentSpec(**SMALL_TV1D, lam=1.0, bias_report=False)
    best, scores = tune_lambda(spec, [1.0, 20.0, 1e4])
    assert [lam for lam, _ in scores] == [1.0, 20.0, 1e4]
    assert best == max(scores, key=lambda s: s[1])[0]
    # lambda = 1e4 flattens the signal to its mean
    assert scores[2][1] < scores[1][1]
    with pytest.raises(ParameterError):
        tune_lambda(spec, [])
    with pytest.raises(ParameterError):
        tune_lambda(ExperimentSpec(kind="nlm"), [1.0])


def test_nlm_run(tmp_path):
    spec = ExperimentSpec(kind="nlm", image_size=16, window_half=2, max_dirs=4, out_dir=tmp_path)
    result = run_experiment(spec)
    assert [row.method for row in result.rows] == ["noisy", "biased", "debiased"]
    assert result.row("debiased").iters == len(result.history) <= 4
    assert result.summary["nlm_h"] == 20.0
    assert not math.isnan(result.row("debiased").method_bias_norm)
    assert (tmp_path / "history.csv").exists()
    assert (tmp_path / "nlm_debiased.pgm").exists()


def test_nlm_reads_pgm_input(tmp_path):
    img = gen_texture_2d(12, 10, seed=2).image()
    path = write_pgm(tmp_path / "in.pgm", img)
    result = run_experiment(
        ExperimentSpec(kind="nlm", input_path=path, window_half=1, max_dirs=2, bias_report=False)
    )
    assert result.shape == (12, 10)
    assert_array_equal(result.signals["clean"], img.ravel())


def test_lasso_run():
    spec = ExperimentSpec(kind="lasso", lam=5.0, length=32, measurements=24, sparsity=3)
    result = run_experiment(spec)
    # measurements live in R^24 and cannot be scored against u0 in R^32
    assert [row.method for row in result.rows] == ["biased", "debiased"]
    assert result.signals["measurements"].shape == (24,)
    assert result.summary["true_support_size"] == 3
    assert result.row("debiased").psnr_db > result.row("biased").psnr_db


def test_debias_general_run_agrees_with_joint_iteration():
    result = run_experiment(ExperimentSpec(kind="debias-general", lam=20.0, length=64, pieces=3))
    assert [row.method for row in result.rows] == ["noisy", "biased", "debiased_pd", "debiased_general"]
    assert result.summary["max_abs_difference"] < 1e-3
    assert result.history
    assert result.row("debiased_general").method_bias_norm < 1e-3


@pytest.mark.slow
def test_deconvolution_debiasing_improves_psnr():
    grid = tuple(float(x) for x in np.geomspace(1.0, 100.0, 10))
    wins = 0
    for seed in range(10):
        spec = ExperimentSpec(
            kind="tv2d-deconv", image_size=32, max_iters=1500, lambda_grid=grid, seed=seed, bias_report=False
        )
        result = run_experiment(spec)
        wins += result.row("debiased").psnr_db > result.row("biased").psnr_db
    assert wins >= 8
