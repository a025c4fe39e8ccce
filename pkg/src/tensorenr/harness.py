"""Synthetic data generation, metrics and batch experiment runs.

The harness generates random low-rank tensors, corrupts them (dense
noise, missing entries, sparse outliers), runs a configured solver over a
penalty grid and emits one CSV row per (lambda, seed) run plus a summary
row per lambda. Runs never abort the batch: failures are caught and
recorded in the row's error column.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .core import cp_reconstruct, sample_mask
from .lrtc import LrtcConfig, solve as lrtc_solve
from .regularizers import RegularizerSpec
from .trpca import TrpcaConfig, trpca_solve

CSV_COLUMNS = (
    "task,kind,seed,lambda,p_effective,rate,rel_error,rel_error_std,"
    "psnr,final_rank,iters,seconds,error"
)


class NumericFailure(RuntimeError):
    """A metric or solve could not be computed for numerical reasons."""


@dataclass
class Metrics:
    """Quality numbers for one completed run."""

    relative_error: float
    psnr: float
    wall_time: float
    final_rank: int


def relative_error(truth, estimate, eval_mask=None):
    """Relative Frobenius error, optionally restricted to the entries of
    `eval_mask` (pass the complement of a training mask to score only
    unobserved entries)."""
    t = np.asarray(truth, dtype=np.float64)
    e = np.asarray(estimate, dtype=np.float64)
    if t.shape != e.shape:
        raise ValueError(f"shape mismatch: {t.shape} vs {e.shape}")
    if eval_mask is not None:
        if tuple(eval_mask.shape) != t.shape:
            raise ValueError("evaluation mask shape does not match tensors")
        idx = eval_mask.multi_indices()
        diff = t[idx] - e[idx]
        ref = t[idx]
        num = float(np.linalg.norm(diff))
        den = float(np.linalg.norm(ref))
    else:
        num = float(np.linalg.norm(t - e))
        den = float(np.linalg.norm(t))
    if den == 0.0:
        raise NumericFailure("reference tensor has zero norm on the evaluation set")
    return num / den


def psnr(truth, estimate, peak=1.0):
    """Peak signal-to-noise ratio in dB; infinite for an exact match."""
    if peak <= 0:
        raise ValueError(f"peak must be positive, got {peak}")
    t = np.asarray(truth, dtype=np.float64)
    e = np.asarray(estimate, dtype=np.float64)
    if t.shape != e.shape:
        raise ValueError(f"shape mismatch: {t.shape} vs {e.shape}")
    mse = float(np.mean((t - e) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def lambda_grid(lo=0.01, hi=500.0, num=20):
    """Default penalty grid: `num` log-spaced points on [lo, hi]."""
    return np.geomspace(lo, hi, num)


@dataclass
class ExperimentSpec:
    """One batch experiment: a data model plus a solver configuration.

    ``lambdas`` may include 0 for unregularized ablations; when None the
    default 20-point log grid is used. ``reg`` accepts either a
    :class:`RegularizerSpec` or grammar text like ``sym:p=0.3333``.
    """

    task: str
    shape: tuple
    true_rank: int
    noise_level: float = 0.1
    missing_rate: float = 0.0
    sparse_density: float = 0.0
    weights_mode: str | None = None
    corruption: str = "additive"
    k_init: int | None = None
    reg: RegularizerSpec | str | None = None
    solver: str | None = None
    seeds: tuple = (0,)
    lambdas: tuple | None = None
    lambda_e: float = 0.1
    q: float | None = None
    t_max: int = 500
    rho: float = 1.0
    delta: float = 0.95
    mu: float = 10.0

    def __post_init__(self):
        if self.task not in ("lrtc", "trpca"):
            raise ValueError(f"task must be 'lrtc' or 'trpca', got {self.task!r}")
        self.shape = tuple(int(n) for n in self.shape)
        if self.true_rank < 1:
            raise ValueError(f"true_rank must be >= 1, got {self.true_rank}")
        if self.noise_level < 0:
            raise ValueError(f"noise_level must be non-negative, got {self.noise_level}")
        if not 0.0 <= self.missing_rate < 1.0:
            raise ValueError(f"missing_rate must be in [0, 1), got {self.missing_rate}")
        if not 0.0 <= self.sparse_density <= 1.0:
            raise ValueError(f"sparse_density must be in [0, 1], got {self.sparse_density}")
        if self.corruption not in ("additive", "replace"):
            raise ValueError(f"corruption must be additive or replace, got {self.corruption!r}")
        if self.weights_mode is None:
            self.weights_mode = "unit" if self.task == "lrtc" else "linear"
        if self.weights_mode not in ("unit", "linear"):
            raise ValueError(f"weights_mode must be unit or linear, got {self.weights_mode!r}")
        if self.k_init is None:
            self.k_init = 2 * self.true_rank
        if self.solver is None:
            self.solver = "bcde" if self.task == "lrtc" else "admm"
        allowed = ("bcde", "qn") if self.task == "lrtc" else ("admm", "asym", "als")
        if self.solver not in allowed:
            raise ValueError(f"solver {self.solver!r} not valid for task {self.task!r}")
        order = len(self.shape)
        if self.reg is None:
            if self.task == "trpca" and self.solver == "als":
                self.reg = RegularizerSpec("sym", order, p=2.0 / order)
            elif self.task == "trpca" and self.solver == "asym":
                self.reg = None
            else:
                self.reg = RegularizerSpec("sym", order, p=1.0 / order)
        elif isinstance(self.reg, str):
            self.reg = RegularizerSpec.parse(self.reg, order)
        self.seeds = tuple(int(s) for s in self.seeds)
        if not self.seeds:
            raise ValueError("seeds must be non-empty")
        if self.lambdas is not None:
            self.lambdas = tuple(float(v) for v in self.lambdas)
            if any(v < 0 for v in self.lambdas):
                raise ValueError("lambda values must be non-negative")

    def lambda_values(self):
        if self.lambdas is not None:
            return tuple(self.lambdas)
        return tuple(lambda_grid())


def _component_weights(mode, rank):
    if mode == "linear":
        return np.arange(1, rank + 1) / rank
    return np.ones(rank)


def _random_low_rank(rng, shape, rank, weights):
    factors = [rng.standard_normal((n, rank)) for n in shape]
    factors[0] = factors[0] * weights
    return cp_reconstruct(factors)


def _derived_seed(rng):
    return int(rng.integers(0, 2**31 - 1))


def gen_lrtc_data(spec, seed):
    """Generate (truth, noisy data, observation mask) for a completion run."""
    rng = np.random.default_rng(seed)
    weights = _component_weights(spec.weights_mode, spec.true_rank)
    truth = _random_low_rank(rng, spec.shape, spec.true_rank, weights)
    sigma = float(np.std(truth))
    noise = rng.standard_normal(spec.shape) * (spec.noise_level * sigma)
    mask = sample_mask(spec.shape, spec.missing_rate, _derived_seed(rng))
    return truth, truth + noise, mask


def gen_trpca_data(spec, seed):
    """Generate (truth, corrupted data, sparse term) for a robust PCA run.

    The sparse corruption hits round(density * size) entries chosen
    uniformly; entries are either added to the noisy tensor or replace
    its values there, depending on ``spec.corruption``."""
    rng = np.random.default_rng(seed)
    weights = _component_weights(spec.weights_mode, spec.true_rank)
    truth = _random_low_rank(rng, spec.shape, spec.true_rank, weights)
    sigma = float(np.std(truth))
    noisy = truth + rng.standard_normal(spec.shape) * (spec.noise_level * sigma)
    if spec.sparse_density == 0.0:
        return truth, noisy, np.zeros(spec.shape)
    support = sample_mask(spec.shape, 1.0 - spec.sparse_density, _derived_seed(rng))
    idx = support.multi_indices()
    draws = rng.normal(0.0, sigma, size=support.count)
    data = noisy.copy()
    if spec.corruption == "additive":
        data[idx] += draws
    else:
        data[idx] = draws
    sparse = np.zeros(spec.shape)
    sparse[idx] = data[idx] - noisy[idx]
    return truth, data, sparse


def _solver_seed(seed):
    # Decorrelate solver initialization from the data stream, which also
    # starts at default_rng(seed).
    return int(np.random.default_rng([int(seed), 0x5EED]).integers(0, 2**63 - 1))


def run_single(spec, seed, lam, timing=True):
    """Run one (seed, lambda) cell of the experiment; returns Metrics."""
    start = time.perf_counter()
    if spec.task == "lrtc":
        truth, data, mask = gen_lrtc_data(spec, seed)
        cfg = LrtcConfig(
            k_init=spec.k_init,
            lam=lam,
            spec=spec.reg,
            solver=spec.solver,
            t_max=spec.t_max,
            rho=spec.rho,
            delta=spec.delta,
            rng_seed=_solver_seed(seed),
        )
        report = lrtc_solve(data, mask, cfg)
        estimate = report.recovered
        eval_mask = mask.complement()
        if eval_mask.count == 0:
            eval_mask = None
        err = relative_error(truth, estimate, eval_mask)
    else:
        truth, data, _ = gen_trpca_data(spec, seed)
        cfg = TrpcaConfig(
            k_init=spec.k_init,
            lam_x=lam,
            lam_e=spec.lambda_e,
            spec=spec.reg,
            q=spec.q,
            solver=spec.solver,
            mu=spec.mu,
            t_max=spec.t_max,
            rng_seed=_solver_seed(seed),
        )
        report, _ = trpca_solve(data, cfg)
        estimate = report.recovered
        err = relative_error(truth, estimate)
    wall = time.perf_counter() - start if timing else 0.0
    return Metrics(
        relative_error=err,
        psnr=psnr(truth, estimate),
        wall_time=wall,
        final_rank=report.final_rank,
    ), report.iterations


def _fmt(x, spec_="%.10g"):
    if x is None:
        return ""
    if isinstance(x, float) and math.isinf(x):
        return "inf"
    return spec_ % x


def run_experiment(spec, timing=True, out_path=None):
    """Run the full (lambda x seed) grid and return the report as CSV text.

    With ``timing=False`` the seconds column is zeroed, which makes the
    output byte-identical across reruns of the same spec.
    """
    rate = spec.missing_rate if spec.task == "lrtc" else spec.sparse_density
    p_eff = spec.reg.effective_p if spec.reg is not None else None
    lines = [CSV_COLUMNS]
    for lam in spec.lambda_values():
        errs, psnrs, ranks, secs = [], [], [], []
        failures = 0
        for seed in spec.seeds:
            try:
                metrics, iters = run_single(spec, seed, lam, timing=timing)
            except Exception as exc:  # noqa: BLE001 - keep the batch alive
                failures += 1
                msg = str(exc).replace(",", ";").replace("\n", " ")
                lines.append(
                    f"{spec.task},run,{seed},{_fmt(lam)},{_fmt(p_eff)},{_fmt(rate)},"
                    f",,,,,,{type(exc).__name__}: {msg}"
                )
                continue
            errs.append(metrics.relative_error)
            psnrs.append(metrics.psnr)
            ranks.append(metrics.final_rank)
            secs.append(metrics.wall_time)
            lines.append(
                f"{spec.task},run,{seed},{_fmt(lam)},{_fmt(p_eff)},{_fmt(rate)},"
                f"{_fmt(metrics.relative_error)},,{_fmt(metrics.psnr)},"
                f"{metrics.final_rank},{iters},{_fmt(metrics.wall_time, '%.3f')},"
            )
        if errs:
            note = f"{failures} failed" if failures else ""
            lines.append(
                f"{spec.task},summary,,{_fmt(lam)},{_fmt(p_eff)},{_fmt(rate)},"
                f"{_fmt(float(np.mean(errs)))},{_fmt(float(np.std(errs)))},"
                f"{_fmt(float(np.mean(psnrs)))},{_fmt(float(np.median(ranks)))},"
                f",{_fmt(float(np.mean(secs)), '%.3f')},{note}"
            )
        else:
            lines.append(
                f"{spec.task},summary,,{_fmt(lam)},{_fmt(p_eff)},{_fmt(rate)},"
                f",,,,,,{failures} failed"
            )
    text = "\n".join(lines) + "\n"
    if out_path is not None:
        with open(out_path, "w") as fh:
            fh.write(text)
    return text


def best_lambda(csv_text):
    """Pick the lambda whose summary row has the lowest mean error."""
    best = None
    for line in csv_text.strip().splitlines()[1:]:
        parts = line.split(",")
        if parts[1] != "summary" or parts[6] == "":
            continue
        lam, err = float(parts[3]), float(parts[6])
        if best is None or err < best[1]:
            best = (lam, err)
    if best is None:
        raise NumericFailure("no successful runs in experiment output")
    return best
