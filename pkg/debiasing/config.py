"""Experiment specifications.

An ExperimentSpec fully determines a run: with the same spec and seed the
harness writes the same files.  Specs come from CLI flags, from a JSON
sidecar, or both (flags win).

Usage:
    spec = ExperimentSpec(kind="tv1d", lam=20.0)
    spec = spec_from_mapping(load_sidecar(Path("run.json")), kind="tv2d-deconv")
"""

from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass
from pathlib import Path

from debiasing.debias_iter import DEFAULT_MAX_DIRS, DEFAULT_STOP_TOL
from debiasing.errors import ParameterError
from debiasing.l1_analysis import BETA_DEFAULT
from debiasing.nlm import KERNEL_LEVELS

log = logging.getLogger(__name__)

KINDS = ("tv1d", "tv2d-deconv", "nlm", "lasso", "debias-general")
NEEDS_LAMBDA = ("tv1d", "tv2d-deconv", "lasso", "debias-general")

# noise level, iteration cap and tolerance when an ExperimentSpec leaves them unset
KIND_DEFAULTS = {
    "tv1d": {"noise_sigma": 10.0, "max_iters": 100_000, "tol": 1e-9},
    "tv2d-deconv": {"noise_sigma": 20.0, "max_iters": 3_000, "tol": 1e-7},
    "nlm": {"noise_sigma": 20.0, "max_iters": 100_000, "tol": 1e-9},
    "lasso": {"noise_sigma": 1.0, "max_iters": 100_000, "tol": 1e-9},
    "debias-general": {"noise_sigma": 10.0, "max_iters": 100_000, "tol": 1e-9},
}

PATH_FIELDS = ("out_dir", "input_path")
ALIASES = {"lambda": "lam", "sigma": "noise_sigma", "input": "input_path", "out": "out_dir"}


@dataclass(frozen=True)
class ExperimentSpec:
    kind: str
    lam: float | None = None
    noise_sigma: float | None = None
    seed: int = 0
    out_dir: Path | None = None
    input_path: Path | None = None
    # tv1d / debias-general signal
    length: int = 256
    pieces: int = 6
    min_piece_len: int = 16
    value_low: float = 0.0
    value_high: float = 192.0
    # 2D images
    image_size: int = 64
    shapes: int = 6
    blur_bandwidth: float = 2.0
    texture_period: int = 3
    # nlm
    patch_half: int = 1
    window_half: int = 3
    kernel_levels: int = KERNEL_LEVELS
    nlm_h: float | None = None
    # lasso
    measurements: int = 64
    sparsity: int = 8
    # solvers
    max_iters: int | None = None
    tol: float | None = None
    beta: float = BETA_DEFAULT
    epsilon: float | None = None
    max_dirs: int = DEFAULT_MAX_DIRS
    stop_tol: float = DEFAULT_STOP_TOL
    trace: bool = False
    lambda_grid: tuple[float, ...] = ()
    bias_report: bool = True

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ParameterError(f"unknown experiment kind {self.kind!r}, expected one of {', '.join(KINDS)}")
        for name, value in KIND_DEFAULTS[self.kind].items():
            if getattr(self, name) is None:
                object.__setattr__(self, name, value)
        for name in PATH_FIELDS:
            value = getattr(self, name)
            if value is not None and not isinstance(value, Path):
                object.__setattr__(self, name, Path(value))
        object.__setattr__(self, "lambda_grid", tuple(float(x) for x in self.lambda_grid))

        if self.noise_sigma < 0:
            raise ParameterError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if self.lam is not None and not self.lam > 0:
            raise ParameterError(f"lambda must be positive, got {self.lam}")
        if self.kind in NEEDS_LAMBDA and self.lam is None and not self.lambda_grid:
            raise ParameterError(f"{self.kind} needs a regularization weight (--lambda)")
        if self.lambda_grid and self.kind != "tv2d-deconv":
            raise ParameterError("a lambda grid is only used by tv2d-deconv")
        if any(not x > 0 for x in self.lambda_grid):
            raise ParameterError(f"lambda grid values must be positive, got {self.lambda_grid}")
        if self.kind == "nlm" and self.nlm_h is None and self.noise_sigma == 0:
            raise ParameterError("nlm without noise needs an explicit filtering parameter (nlm_h)")
        if self.max_iters < 1 or not self.tol > 0:
            raise ParameterError(f"need max_iters >= 1 and tol > 0, got {self.max_iters}, {self.tol}")
        if self.kind == "lasso" and not 1 <= self.sparsity <= self.length:
            raise ParameterError(f"sparsity must lie in [1, {self.length}], got {self.sparsity}")
        if self.measurements < 1:
            raise ParameterError(f"measurements must be >= 1, got {self.measurements}")

    def replace(self, **changes) -> ExperimentSpec:
        return dataclasses.replace(self, **changes)

    def to_json(self) -> dict:
        data = dataclasses.asdict(self)
        for name in PATH_FIELDS:
            if data[name] is not None:
                data[name] = str(data[name])
        data["lambda_grid"] = list(self.lambda_grid)
        return data


def spec_fields() -> set[str]:
    return {f.name for f in dataclasses.fields(ExperimentSpec)}


def _is_number(value) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def coerce_setting(name: str, value):
    """Convert a sidecar value to the type of field ``name``; raise ParameterError if it does not fit."""
    annotation = FIELD_TYPES[name]
    if value is None:
        if "None" in annotation:
            return None
        raise ParameterError(f"{name}: a value is required")
    if annotation.startswith("float"):
        if not _is_number(value):
            raise ParameterError(f"{name}: expected a number, got {value!r}")
        return float(value)
    if annotation.startswith("int"):
        if not _is_number(value) or not float(value).is_integer():
            raise ParameterError(f"{name}: expected an integer, got {value!r}")
        return int(value)
    if annotation == "bool":
        if not isinstance(value, bool):
            raise ParameterError(f"{name}: expected true or false, got {value!r}")
        return value
    if annotation.startswith("Path"):
        if not isinstance(value, (str, Path)):
            raise ParameterError(f"{name}: expected a path, got {value!r}")
        return Path(value)
    if annotation.startswith("tuple"):
        if not isinstance(value, (list, tuple)) or not all(_is_number(x) for x in value):
            raise ParameterError(f"{name}: expected a list of numbers, got {value!r}")
        return tuple(float(x) for x in value)
    if not isinstance(value, str):
        raise ParameterError(f"{name}: expected a string, got {value!r}")
    return value


def load_sidecar(path: Path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ParameterError(f"{path}: no such settings file")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParameterError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ParameterError(f"{path}: expected a JSON object with experiment settings")
    return data


def spec_from_mapping(mapping: dict, **overrides) -> ExperimentSpec:
    """Build a spec from sidecar values; ``overrides`` that are not None win."""
    known = spec_fields()
    values = {}
    for key, value in mapping.items():
        key = ALIASES.get(key, key)
        if key in known:
            values[key] = coerce_setting(key, value)
        else:
            log.warning("ignoring unknown setting %r", key)
    values.update({k: v for k, v in overrides.items() if v is not None})
    if "kind" not in values:
        raise ParameterError("experiment kind is missing")
    return ExperimentSpec(**values)


# field name -> annotation string, e.g. "float | None"
FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(ExperimentSpec)}
