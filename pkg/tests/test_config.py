import json
import logging
from pathlib import Path

import pytest

from debiasing.config import KIND_DEFAULTS, ExperimentSpec, coerce_setting, load_sidecar, spec_from_mapping
from debiasing.errors import ParameterError


def test_kind_defaults_fill_unset_fields():
    spec = ExperimentSpec(kind="tv2d-deconv", lam=10.0)
    assert spec.noise_sigma == KIND_DEFAULTS["tv2d-deconv"]["noise_sigma"]
    assert spec.max_iters == KIND_DEFAULTS["tv2d-deconv"]["max_iters"]
    assert ExperimentSpec(kind="tv1d", lam=1.0, noise_sigma=3.0).noise_sigma == 3.0


@pytest.mark.parametrize(
    "fields",
    [
        {"kind": "wavelets"},
        {"kind": "tv1d"},
        {"kind": "tv1d", "lam": 0.0},
        {"kind": "tv1d", "lam": 1.0, "noise_sigma": -1.0},
        {"kind": "tv1d", "lam": 1.0, "lambda_grid": (1.0, 2.0)},
        {"kind": "tv2d-deconv", "lambda_grid": (1.0, -2.0)},
        {"kind": "nlm", "noise_sigma": 0.0},
        {"kind": "lasso", "lam": 1.0, "sparsity": 0},
        {"kind": "lasso", "lam": 1.0, "measurements": 0},
        {"kind": "tv1d", "lam": 1.0, "max_iters": 0},
    ],
)
def test_invalid_specs(fields):
    with pytest.raises(ParameterError):
        ExperimentSpec(**fields)


def test_nlm_needs_no_lambda():
    spec = ExperimentSpec(kind="nlm", noise_sigma=0.0, nlm_h=15.0)
    assert spec.lam is None


def test_paths_are_converted():
    spec = ExperimentSpec(kind="tv1d", lam=1.0, out_dir="out/x")
    assert spec.out_dir == Path("out/x")
    assert spec.to_json()["out_dir"] == "out/x"


def test_replace_revalidates():
    spec = ExperimentSpec(kind="tv1d", lam=1.0)
    assert spec.replace(seed=5).seed == 5
    with pytest.raises(ParameterError):
        spec.replace(lam=-1.0)


def test_spec_from_mapping_aliases_and_overrides(caplog):
    mapping = {"kind": "tv1d", "lambda": 4.0, "sigma": 2.0, "colour": "red"}
    with caplog.at_level(logging.WARNING, logger="debiasing.config"):
        spec = spec_from_mapping(mapping, seed=7, lam=None)
    assert (spec.lam, spec.noise_sigma, spec.seed) == (4.0, 2.0, 7)
    assert "colour" in caplog.text
    assert spec_from_mapping(mapping, lam=9.0).lam == 9.0
    with pytest.raises(ParameterError):
        spec_from_mapping({"lam": 1.0})


def test_load_sidecar(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"kind": "nlm", "sigma": 25}))
    assert load_sidecar(path) == {"kind": "nlm", "sigma": 25}
    path.write_text("[1, 2]")
    with pytest.raises(ParameterError):
        load_sidecar(path)
    with pytest.raises(ParameterError):
        load_sidecar(tmp_path / "missing.json")


def test_load_sidecar_reports_broken_json(tmp_path):
    path = tmp_path / "run.json"
    path.write_text('{"lambda": 20,')
    with pytest.raises(ParameterError, match="invalid JSON"):
        load_sidecar(path)


@pytest.mark.parametrize(
    "mapping",
    [
        {"lambda": "twenty"},
        {"sigma": [10]},
        {"length": 64.5},
        {"seed": True},
        {"trace": "yes"},
        {"lambda_grid": [1.0, "2"]},
        {"input": 3},
    ],
)
def test_wrongly_typed_settings_are_rejected(mapping):
    with pytest.raises(ParameterError):
        spec_from_mapping({"kind": "tv1d", "lambda": 1.0, **mapping})


def test_settings_are_converted_to_field_types():
    spec = spec_from_mapping({"kind": "tv1d", "lambda": 20, "length": 64.0, "input": "truth.csv"})
    assert spec.lam == 20.0 and isinstance(spec.lam, float)
    assert spec.length == 64 and isinstance(spec.length, int)
    assert spec.input_path == Path("truth.csv")
    assert coerce_setting("max_iters", None) is None
    assert coerce_setting("lambda_grid", [1, 2]) == (1.0, 2.0)
