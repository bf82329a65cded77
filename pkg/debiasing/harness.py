"""Experiment runners: synthetic data, noise, PSNR, bias reports, artifacts.

Each runner builds a ground truth u0 (generated, or read from --input),
degrades it, restores it with the biased estimator, debiases, and measures
both against u0.  The bias decomposition is evaluated at the noiseless
observation f0 = Phi u0 on the model subspace recovered there.

Artifacts written to the output directory:
    metrics.csv           one row per method
    run.json              the resolved spec and a run summary
    timing.json           wall-clock seconds per method
    trace.csv             primal-dual trace (--trace)
    history.csv           random-direction debiasing steps (nlm, debias-general)
    signal_<label>.csv    1D signals
    <kind>_<label>.pgm    2D images

Usage:
    result = run_experiment(ExperimentSpec(kind="tv1d", lam=20.0, out_dir=Path("out")))
    for row in result.rows:
        print(row.method, row.psnr_db)
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import astuple, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from debiasing.config import ExperimentSpec
from debiasing.debias_iter import DebiasConfig, DebiasRun, DebiasStep, debias_general
from debiasing.errors import InvalidDimensionError, ParameterError
from debiasing.imageio import read_pgm, read_signal_csv, write_csv, write_json, write_pgm, write_signal_csv
from debiasing.l1_analysis import (
    DebiasedPdResult,
    PdParams,
    TraceRow,
    cosupport_basis,
    l1_jvp,
    solve_pd,
    solve_pd_debiased,
)
from debiasing.linops import LinearMap, Shape, Signal, gauss_conv, grad_1d, grad_2d, identity
from debiasing.nlm import NlmConfig, nlm_denoise
from debiasing.subspace import BiasReport, bias_decompose

log = logging.getLogger(__name__)

PEAK = 255.0
NOISE_SEED_OFFSET = 1
TRACE_EVERY = 10
# lasso amplitudes are drawn in [LASSO_MIN_AMPLITUDE, 1] * value_high
LASSO_MIN_AMPLITUDE = 0.5

# metrics.csv holds only seed-determined values; runtime_s goes to timing.json
METRICS_HEADER = ("method", "psnr_db", "method_bias_norm", "model_bias_norm", "iters", "converged")
TRACE_HEADER = ("iter", "energy", "active_size", "change", "tilde_change")
HISTORY_HEADER = ("iter", "direction_norm", "kept", "residual_norm", "change")


# ---------------------------------------------------------------------------
# Data
# ---------------------------------------------------------------------------

def gen_pwc_1d(
    n: int,
    pieces: int,
    value_range: tuple[float, float] = (0.0, 192.0),
    min_piece_len: int = 1,
    seed: int = 0,
) -> Signal:
    """Piecewise-constant signal with ``pieces`` segments of random lengths and levels."""
    if pieces < 1 or min_piece_len < 1:
        raise ParameterError(f"need pieces >= 1 and min_piece_len >= 1, got {pieces}, {min_piece_len}")
    if n < pieces * min_piece_len:
        raise ParameterError(f"cannot fit {pieces} pieces of length >= {min_piece_len} in {n} samples")
    lo, hi = value_range
    if not hi > lo:
        raise ParameterError(f"empty value range {value_range}")

    rng = np.random.default_rng(seed)
    extra = n - pieces * min_piece_len
    cuts = np.sort(rng.integers(0, extra + 1, size=pieces - 1))
    lengths = min_piece_len + np.diff(np.concatenate([[0], cuts, [extra]]))
    levels = np.empty(pieces)
    for k in range(pieces):
        level = rng.uniform(lo, hi)
        while k and level == levels[k - 1]:
            level = rng.uniform(lo, hi)
        levels[k] = level
    return Signal(np.repeat(levels, lengths), Shape.one_d(n))


def gen_cartoon_2d(n1: int, n2: int, shapes: int = 6, seed: int = 0) -> Signal:
    """Integer-valued cartoon: rectangles and discs over a flat background."""
    if min(n1, n2) < 2 or shapes < 0:
        raise ParameterError(f"need an image of at least 2x2 and shapes >= 0, got {n1}x{n2}, {shapes}")
    rng = np.random.default_rng(seed)
    img = np.full((n1, n2), float(rng.integers(0, 256)))
    yy, xx = np.mgrid[0:n1, 0:n2]
    for k in range(shapes):
        value = float(rng.integers(0, 256))
        if k % 2 == 0:
            y0, x0 = rng.integers(0, n1 - 1), rng.integers(0, n2 - 1)
            h = rng.integers(max(2, n1 // 8), max(3, n1 // 2))
            w = rng.integers(max(2, n2 // 8), max(3, n2 // 2))
            img[y0:y0 + h, x0:x0 + w] = value
        else:
            cy, cx = rng.uniform(0, n1), rng.uniform(0, n2)
            r = rng.uniform(min(n1, n2) / 10, min(n1, n2) / 4)
            img[(yy - cy) ** 2 + (xx - cx) ** 2 <= r * r] = value
    return Signal.from_array(img)


def gen_texture_2d(n1: int, n2: int, period: int = 3, seed: int = 0) -> Signal:
    """A random integer tile of side ``period`` repeated over the image."""
    if min(n1, n2) < 2 or period < 1:
        raise ParameterError(f"need an image of at least 2x2 and period >= 1, got {n1}x{n2}, {period}")
    rng = np.random.default_rng(seed)
    tile = rng.integers(0, 256, size=(period, period)).astype(float)
    reps = (-(-n1 // period), -(-n2 // period))
    return Signal.from_array(np.tile(tile, reps)[:n1, :n2])


def awgn(f: Signal, sigma: float, seed: int) -> Signal:
    """f + w with w i.i.d. N(0, sigma^2)."""
    if sigma < 0:
        raise ParameterError(f"noise sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return Signal(f.values.copy(), f.shape)
    rng = np.random.default_rng(seed)
    return Signal(f.values + sigma * rng.standard_normal(f.values.size), f.shape)


def _values(x) -> np.ndarray:
    if isinstance(x, Signal):
        return x.values
    return np.asarray(x, dtype=float).ravel()


def psnr(u, ref, peak: float = PEAK) -> float:
    """10 log10(peak^2 / MSE) in dB; +inf when u equals ref."""
    u, ref = _values(u), _values(ref)
    if u.shape != ref.shape:
        raise InvalidDimensionError(f"psnr: {u.size} values against a reference of {ref.size}")
    if not peak > 0:
        raise ParameterError(f"peak must be positive, got {peak}")
    mse = float(np.mean((u - ref) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak**2 / mse)


# ---------------------------------------------------------------------------
# Results
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MetricsRow:
    method: str
    psnr_db: float
    method_bias_norm: float = math.nan
    model_bias_norm: float = math.nan
    runtime_s: float = 0.0
    iters: int = 0
    converged: bool = True

    def csv_row(self) -> tuple:
        return tuple(getattr(self, name) for name in METRICS_HEADER)


@dataclass
class ExperimentResult:
    spec: ExperimentSpec
    rows: list[MetricsRow]
    signals: dict[str, np.ndarray]
    shape: tuple[int, ...]
    trace: list[TraceRow] = field(default_factory=list)
    history: list[DebiasStep] = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    artifacts: list[Path] = field(default_factory=list)

    def row(self, method: str) -> MetricsRow:
        for row in self.rows:
            if row.method == method:
                return row
        raise KeyError(method)


@dataclass(frozen=True)
class L1Problem:
    """u0, the operators, and the noiseless and noisy observations."""

    u0: Signal
    Phi: LinearMap
    Gamma: LinearMap
    f0: np.ndarray
    f: np.ndarray
    # whether f lives in the signal domain and can be scored against u0
    scorable: bool = True


def _timed(fn: Callable, *args, **kwargs):
    start = time.perf_counter()
    out = fn(*args, **kwargs)
    return out, time.perf_counter() - start


def _noise_seed(spec: ExperimentSpec) -> int:
    return spec.seed + NOISE_SEED_OFFSET


def _pd_params(spec: ExperimentSpec, Gamma: LinearMap) -> PdParams:
    return PdParams.for_operator(Gamma, beta=spec.beta, max_iters=spec.max_iters, tol=spec.tol)


def _debias_config(spec: ExperimentSpec) -> DebiasConfig:
    return DebiasConfig(epsilon=spec.epsilon, max_dirs=spec.max_dirs, stop_tol=spec.stop_tol, seed=spec.seed)


def _norms(report: BiasReport | None) -> tuple[float, float]:
    if report is None:
        return math.nan, math.nan
    method, model, _ = report.norms
    return method, model


# ---------------------------------------------------------------------------
# Problems
# ---------------------------------------------------------------------------

def _signal_1d(spec: ExperimentSpec) -> Signal:
    if spec.input_path is not None:
        return Signal.from_array(read_signal_csv(spec.input_path))
    return gen_pwc_1d(
        spec.length, spec.pieces, (spec.value_low, spec.value_high), spec.min_piece_len, spec.seed
    )


def _image(spec: ExperimentSpec, generator: Callable[..., Signal], *args) -> Signal:
    if spec.input_path is not None:
        return Signal.from_array(read_pgm(spec.input_path))
    return generator(spec.image_size, spec.image_size, *args, seed=spec.seed)


def _build_tv1d(spec: ExperimentSpec) -> L1Problem:
    u0 = _signal_1d(spec)
    n = u0.shape.size
    f = awgn(u0, spec.noise_sigma, _noise_seed(spec))
    return L1Problem(u0, identity(n), grad_1d(n), u0.values.copy(), f.values)


def _build_tv2d(spec: ExperimentSpec) -> L1Problem:
    u0 = _image(spec, gen_cartoon_2d, spec.shapes)
    Phi = gauss_conv(u0.shape, spec.blur_bandwidth)
    f0 = Phi.apply(u0.values)
    f = awgn(Signal(f0, u0.shape), spec.noise_sigma, _noise_seed(spec))
    return L1Problem(u0, Phi, grad_2d(u0.shape), f0, f.values)


def _build_lasso(spec: ExperimentSpec) -> L1Problem:
    n, p, k = spec.length, spec.measurements, spec.sparsity
    rng = np.random.default_rng(spec.seed)
    Phi = LinearMap.from_matrix(rng.standard_normal((p, n)) / math.sqrt(p), name=f"gaussian({p}x{n})")
    u0 = np.zeros(n)
    idx = rng.choice(n, size=k, replace=False)
    u0[idx] = rng.choice([-1.0, 1.0], size=k) * rng.uniform(LASSO_MIN_AMPLITUDE, 1.0, size=k) * spec.value_high
    f0 = Phi.apply(u0)
    f = awgn(Signal(f0, Shape.one_d(p)), spec.noise_sigma, _noise_seed(spec))
    return L1Problem(Signal(u0, Shape.one_d(n)), Phi, identity(n), f0, f.values, scorable=p == n)


L1_BUILDERS: dict[str, Callable[[ExperimentSpec], L1Problem]] = {
    "tv1d": _build_tv1d,
    "tv2d-deconv": _build_tv2d,
    "lasso": _build_lasso,
    "debias-general": _build_tv1d,
}


def tune_lambda(spec: ExperimentSpec, grid) -> tuple[float, list[tuple[float, float]]]:
    """Return the lambda in ``grid`` maximizing the PSNR of the biased estimate."""
    grid = [float(x) for x in grid]
    if not grid:
        raise ParameterError("lambda grid is empty")
    if spec.kind not in L1_BUILDERS:
        raise ParameterError(f"lambda tuning needs an l1 experiment, got {spec.kind}")
    prob = L1_BUILDERS[spec.kind](spec)
    params = _pd_params(spec, prob.Gamma)
    scores = []
    for lam in grid:
        res = solve_pd(prob.Phi, prob.Gamma, lam, prob.f, params)
        scores.append((lam, psnr(res.u, prob.u0)))
        log.info("lambda %g: biased PSNR %.2f dB", lam, scores[-1][1])
    best = max(scores, key=lambda s: s[1])[0]
    return best, scores


# ---------------------------------------------------------------------------
# Runners
# ---------------------------------------------------------------------------

def _l1_reports(
    spec: ExperimentSpec, prob: L1Problem, lam: float, params: PdParams, noisy: DebiasedPdResult
) -> tuple[BiasReport | None, BiasReport | None, DebiasedPdResult | None]:
    """Bias decomposition of both estimates at f0, on the model subspace found at f0."""
    if not spec.bias_report:
        return None, None, None
    at_f0 = noisy if spec.noise_sigma == 0 else solve_pd_debiased(prob.Phi, prob.Gamma, lam, prob.f0, params)
    M = cosupport_basis(prob.Gamma, at_f0.support.cosupport)
    u0 = prob.u0.values
    return bias_decompose(at_f0.u, u0, M), bias_decompose(at_f0.tilde_u, u0, M), at_f0


def _resolve_lambda(spec: ExperimentSpec, summary: dict) -> float:
    if not spec.lambda_grid:
        return spec.lam
    lam, scores = tune_lambda(spec, spec.lambda_grid)
    summary["lambda_scores"] = [[x, s] for x, s in scores]
    return lam


def _run_l1(spec: ExperimentSpec) -> ExperimentResult:
    prob = L1_BUILDERS[spec.kind](spec)
    summary: dict = {}
    lam = _resolve_lambda(spec, summary)
    spec = spec.replace(lam=lam)
    params = _pd_params(spec, prob.Gamma)
    res, runtime = _timed(
        solve_pd_debiased, prob.Phi, prob.Gamma, lam, prob.f, params, TRACE_EVERY if spec.trace else 0
    )
    biased_rep, debiased_rep, _ = _l1_reports(spec, prob, lam, params, res)

    u0 = prob.u0.values
    rows = []
    if prob.scorable:
        rows.append(MetricsRow("noisy", psnr(prob.f, u0)))
    rows.append(MetricsRow("biased", psnr(res.u, u0), *_norms(biased_rep), runtime, res.iters, res.converged))
    rows.append(MetricsRow("debiased", psnr(res.tilde_u, u0), *_norms(debiased_rep), runtime, res.iters, res.converged))

    true_support = np.flatnonzero(np.abs(prob.Gamma.apply(u0)) > 0)
    summary.update({
        "lambda": lam,
        "support_size": len(res.support),
        "true_support_size": int(true_support.size),
        "support_exact": bool(np.array_equal(res.support.cosupport, true_support)),
        "support_stable_since": res.support_stable_since,
    })
    signals = {"clean": u0, "biased": res.u, "debiased": res.tilde_u}
    if prob.scorable:
        signals["noisy"] = prob.f
    else:
        signals["measurements"] = prob.f
    return ExperimentResult(spec, rows, signals, prob.u0.shape.dims, res.trace, [], summary)


def _nlm_basis_at(u: Signal, cfg: NlmConfig, dcfg: DebiasConfig) -> tuple[np.ndarray, DebiasRun]:
    u_star, jvp = nlm_denoise(u.image(), cfg)
    return u_star, debias_general(u.values, u_star, jvp, identity(u.shape.size), dcfg)


def _run_nlm(spec: ExperimentSpec) -> ExperimentResult:
    u0 = _image(spec, gen_texture_2d, spec.texture_period)
    f = awgn(u0, spec.noise_sigma, _noise_seed(spec))
    cfg = NlmConfig(spec.patch_half, spec.window_half, spec.nlm_h or spec.noise_sigma, spec.kernel_levels)
    dcfg = _debias_config(spec)

    (u_star, jvp), nlm_time = _timed(nlm_denoise, f.image(), cfg)
    run, debias_time = _timed(debias_general, f.values, u_star, jvp, identity(u0.shape.size), dcfg)

    biased_rep = debiased_rep = None
    if spec.bias_report:
        u0_star, run0 = _nlm_basis_at(u0, cfg, dcfg)
        biased_rep = bias_decompose(u0_star, u0.values, run0.basis)
        debiased_rep = bias_decompose(run0.tilde_u, u0.values, run0.basis)

    rows = [
        MetricsRow("noisy", psnr(f, u0)),
        MetricsRow("biased", psnr(u_star, u0), *_norms(biased_rep), nlm_time, 1, True),
        MetricsRow(
            "debiased", psnr(run.tilde_u, u0), *_norms(debiased_rep),
            nlm_time + debias_time, len(run.history), run.converged,
        ),
    ]
    summary = {
        "basis_dim": run.basis.dim,
        "directions": len(run.history),
        "epsilon": dcfg.resolve_epsilon(f.values),
        "nlm_h": cfg.noise_sigma,
    }
    signals = {"clean": u0.values, "noisy": f.values, "biased": u_star, "debiased": run.tilde_u}
    return ExperimentResult(spec, rows, signals, u0.shape.dims, [], run.history, summary)


def _run_debias_general(spec: ExperimentSpec) -> ExperimentResult:
    """Random-direction debiasing of the TV-1D estimator, against the joint debiased iteration."""
    prob = L1_BUILDERS[spec.kind](spec)
    params = _pd_params(spec, prob.Gamma)
    dcfg = _debias_config(spec)
    res, pd_time = _timed(
        solve_pd_debiased, prob.Phi, prob.Gamma, spec.lam, prob.f, params, TRACE_EVERY if spec.trace else 0
    )
    jvp = l1_jvp(prob.Phi, prob.Gamma, res.support)
    run, debias_time = _timed(debias_general, prob.f, res.u, jvp, prob.Phi, dcfg)

    biased_rep, joint_rep, at_f0 = _l1_reports(spec, prob, spec.lam, params, res)
    general_rep = None
    if at_f0 is not None:
        run0 = debias_general(prob.f0, at_f0.u, l1_jvp(prob.Phi, prob.Gamma, at_f0.support), prob.Phi, dcfg)
        M = cosupport_basis(prob.Gamma, at_f0.support.cosupport)
        general_rep = bias_decompose(run0.tilde_u, prob.u0.values, M)

    u0 = prob.u0.values
    rows = [
        MetricsRow("noisy", psnr(prob.f, u0)),
        MetricsRow("biased", psnr(res.u, u0), *_norms(biased_rep), pd_time, res.iters, res.converged),
        MetricsRow("debiased_pd", psnr(res.tilde_u, u0), *_norms(joint_rep), pd_time, res.iters, res.converged),
        MetricsRow(
            "debiased_general", psnr(run.tilde_u, u0), *_norms(general_rep),
            pd_time + debias_time, len(run.history), run.converged,
        ),
    ]
    summary = {
        "lambda": spec.lam,
        "support_size": len(res.support),
        "basis_dim": run.basis.dim,
        "max_abs_difference": float(np.max(np.abs(run.tilde_u - res.tilde_u))),
    }
    signals = {
        "clean": u0, "noisy": prob.f, "biased": res.u,
        "debiased_pd": res.tilde_u, "debiased_general": run.tilde_u,
    }
    return ExperimentResult(spec, rows, signals, prob.u0.shape.dims, res.trace, run.history, summary)


RUNNERS: dict[str, Callable[[ExperimentSpec], ExperimentResult]] = {
    "tv1d": _run_l1,
    "tv2d-deconv": _run_l1,
    "lasso": _run_l1,
    "nlm": _run_nlm,
    "debias-general": _run_debias_general,
}


def write_artifacts(result: ExperimentResult, out_dir: Path) -> list[Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = [write_csv(out_dir / "metrics.csv", METRICS_HEADER, (r.csv_row() for r in result.rows))]
    if result.spec.trace and result.trace:
        paths.append(write_csv(out_dir / "trace.csv", TRACE_HEADER, (astuple(r) for r in result.trace)))
    if result.history:
        paths.append(write_csv(out_dir / "history.csv", HISTORY_HEADER, (astuple(s) for s in result.history)))

    prefix = result.spec.kind.replace("-", "_")
    for label, values in result.signals.items():
        if len(result.shape) == 2:
            paths.append(write_pgm(out_dir / f"{prefix}_{label}.pgm", values.reshape(result.shape)))
        else:
            paths.append(write_signal_csv(out_dir / f"signal_{label}.csv", values))

    spec = result.spec.to_json()
    spec.pop("out_dir")
    paths.append(write_json(out_dir / "run.json", {"spec": spec, "summary": result.summary}))
    paths.append(write_json(out_dir / "timing.json", {r.method: r.runtime_s for r in result.rows}))
    return paths


def run_experiment(spec: ExperimentSpec) -> ExperimentResult:
    log.debug("running %s (seed %d, sigma %g)", spec.kind, spec.seed, spec.noise_sigma)
    result = RUNNERS[spec.kind](spec)
    for row in result.rows:
        if not row.converged:
            log.warning("%s: %s did not converge within its iteration budget", spec.kind, row.method)
    if spec.out_dir is not None:
        result.artifacts = write_artifacts(result, spec.out_dir)
    return result
