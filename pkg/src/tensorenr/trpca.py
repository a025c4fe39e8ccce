"""Robust tensor PCA: fit a CP model plus an elementwise-sparse term.

All three solvers decompose a fully observed tensor D as CP(F) + E with
an L1 penalty lam_e on E and a Euclidean-norm penalty on the factors:

* :func:`trpca_admm_solve`   splits the factors from their regularized
  copies and alternates closed-form updates with column soft thresholds
  (effective column exponent 1);
* :func:`trpca_asym_solve`   same splitting on mode 0 only, with a
  reweighted prox for a norm power q in (0, 1), and ridge-regularized
  least squares on the remaining modes;
* :func:`trpca_als_solve`    plain alternating ridge least squares
  (effective column exponent 2); its objective is monotone because every
  block update is an exact minimizer.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .core import cp_reconstruct, khatri_rao, unfold, validate_factors
from .lrtc import SolveReport, init_factors
from .regularizers import (
    RegularizerSpec,
    prox_group_soft,
    prox_irls,
    soft_threshold_elem,
)


@dataclass
class TrpcaConfig:
    """Settings for the robust PCA solvers."""

    k_init: int
    lam_x: float
    lam_e: float
    spec: RegularizerSpec | None = None
    q: float | None = None
    solver: str = "admm"
    mu: float = 10.0
    t_max: int = 500
    conv_tol: float = 1e-8
    rng_seed: int = 0

    def __post_init__(self):
        if self.k_init < 1:
            raise ValueError(f"k_init must be >= 1, got {self.k_init}")
        if self.lam_x < 0 or self.lam_e < 0:
            raise ValueError("penalty weights must be non-negative")
        if self.solver not in ("admm", "asym", "als"):
            raise ValueError(f"solver must be admm, asym or als, got {self.solver!r}")
        if self.mu <= 0:
            raise ValueError(f"mu must be positive, got {self.mu}")
        if self.t_max < 1:
            raise ValueError(f"t_max must be >= 1, got {self.t_max}")
        if self.conv_tol < 0:
            raise ValueError(f"conv_tol must be non-negative, got {self.conv_tol}")


def _check_data(data):
    d = np.asarray(data, dtype=np.float64)
    if d.ndim < 2:
        raise ValueError("data must be a tensor of order >= 2")
    if not np.all(np.isfinite(d)):
        raise ValueError("data contains non-finite entries")
    return d


def _solve_right(gram, rhs):
    """Solve X @ gram = rhs for X with an SPD factorization, falling back
    to least squares if the system is numerically singular."""
    try:
        factor = cho_factor(gram)
        return cho_solve(factor, rhs.T).T
    except np.linalg.LinAlgError:
        return np.linalg.lstsq(gram.T, rhs.T, rcond=None)[0].T


def trpca_x_update(data, sparse, factors, aux, dual, mode, mu):
    """Closed-form update of one factor block under the splitting.

    Minimizes, over X,

        0.5*||(D - E)_(j) - X @ KR^T||^2 + <Y - X, Z> + 0.5*mu*||Y - X||^2

    where KR is the Khatri-Rao matrix of the other modes, giving

        X = ((D - E)_(j) @ KR + mu*Y + Z) @ (KR^T KR + mu*I)^{-1}.
    """
    if mu <= 0:
        raise ValueError(f"mu must be positive, got {mu}")
    d = _check_data(data)
    e = np.asarray(sparse, dtype=np.float64)
    shape, k = validate_factors(factors)
    if d.shape != shape or e.shape != shape:
        raise ValueError("data, sparse term and factors have mismatched shapes")
    kr = khatri_rao(factors, skip=mode)
    gram = kr.T @ kr + mu * np.eye(k)
    rhs = unfold(d - e, mode) @ kr + mu * np.asarray(aux) + np.asarray(dual)
    return _solve_right(gram, rhs)


def _column_norm_power_sum(mat, power):
    return float(np.sum(np.linalg.norm(mat, axis=0) ** power))


def _admm_objective(data, factors, sparse, lam_x, lam_e):
    res = data - cp_reconstruct(factors) - sparse
    pen = sum(_column_norm_power_sum(f, 1.0) for f in factors)
    return 0.5 * float(np.sum(res * res)) + lam_x * pen + lam_e * float(
        np.sum(np.abs(sparse))
    )


def _als_objective(data, factors, sparse, lam_x, lam_e):
    d = len(factors)
    res = data - cp_reconstruct(factors) - sparse
    pen = sum(_column_norm_power_sum(f, 2.0) for f in factors) / d
    return 0.5 * float(np.sum(res * res)) + lam_x * pen + lam_e * float(
        np.sum(np.abs(sparse))
    )


def _asym_objective(data, factors, sparse, q, lam_x, lam_e):
    res = data - cp_reconstruct(factors) - sparse
    pen = _column_norm_power_sum(factors[0], q) / q
    pen += 0.5 * sum(_column_norm_power_sum(f, 2.0) for f in factors[1:])
    return 0.5 * float(np.sum(res * res)) + lam_x * pen + lam_e * float(
        np.sum(np.abs(sparse))
    )


def _admm_sweep(data, sparse, factors, aux, duals, lam_x, lam_e, mu):
    """One full iteration of the splitting solver; mutates the factor,
    auxiliary and dual lists in place and returns the new sparse term."""
    for j in range(len(factors)):
        factors[j] = trpca_x_update(data, sparse, factors, aux[j], duals[j], j, mu)
        aux[j] = prox_group_soft(factors[j] - duals[j] / mu, lam_x / mu)
        duals[j] = duals[j] + mu * (aux[j] - factors[j])
    return soft_threshold_elem(data - cp_reconstruct(factors), lam_e)


def _asym_sweep(data, sparse, factors, aux0, dual0, q, lam_x, lam_e, mu):
    """One full iteration of the mode-0 splitting solver. Returns the new
    (aux0, dual0, sparse)."""
    factors[0] = trpca_x_update(data, sparse, factors, aux0, dual0, 0, mu)
    aux0 = prox_irls(factors[0] - dual0 / mu, q, lam_x / mu)
    dual0 = dual0 + mu * (aux0 - factors[0])
    k = factors[0].shape[1]
    for j in range(1, len(factors)):
        kr = khatri_rao(factors, skip=j)
        gram = kr.T @ kr + lam_x * np.eye(k)
        factors[j] = _solve_right(gram, unfold(data - sparse, j) @ kr)
    return aux0, dual0, soft_threshold_elem(data - cp_reconstruct(factors), lam_e)


def _als_sweep(data, sparse, factors, lam_x, lam_e):
    """One full iteration of alternating ridge least squares. Every block
    update is an exact minimizer, so the objective cannot increase."""
    d = len(factors)
    k = factors[0].shape[1]
    for j in range(d):
        kr = khatri_rao(factors, skip=j)
        gram = kr.T @ kr + (2.0 * lam_x / d) * np.eye(k)
        factors[j] = _solve_right(gram, unfold(data - sparse, j) @ kr)
    return soft_threshold_elem(data - cp_reconstruct(factors), lam_e)


def _relative_change(new, old):
    return float(np.linalg.norm(np.ravel(new - old)) / max(1.0, np.linalg.norm(np.ravel(old))))


def _finish(data, factors, sparse, trace, iterations, start, converged, rank_trace, time_trace):
    k = factors[0].shape[1]
    recovered = cp_reconstruct(factors) if k else np.zeros(data.shape)
    report = SolveReport(
        recovered=recovered,
        factors=factors,
        final_rank=k,
        objective_trace=trace,
        iterations=iterations,
        wall_time=time.perf_counter() - start,
        converged=converged,
        rank_trace=rank_trace,
        time_trace=time_trace,
    )
    return report, sparse


def _require_sym_exponent(spec, target, solver_name):
    if spec is None:
        return
    if spec.kind != "sym" or spec.mode_terms()[0][1] != target:
        raise ValueError(
            f"{solver_name} requires a sym regularizer with column exponent "
            f"{target:g}, got {spec.label()}"
        )


def trpca_admm_solve(data, config):
    """Splitting solver for the column-norm (exponent 1) penalty.

    Returns (report, sparse_term). The objective trace records the
    unaugmented objective at the factor iterates; it is reported, not
    guaranteed monotone.
    """
    d = _check_data(data)
    _require_sym_exponent(config.spec, 1.0, "trpca_admm_solve")
    lam_x, lam_e, mu = config.lam_x, config.lam_e, config.mu

    factors = init_factors(d.shape, config.k_init, config.rng_seed)
    aux = [f.copy() for f in factors]
    duals = [np.zeros_like(f) for f in factors]
    sparse = np.zeros(d.shape)

    start = time.perf_counter()
    trace = [_admm_objective(d, factors, sparse, lam_x, lam_e)]
    rank_trace = [config.k_init]
    time_trace = [0.0]
    converged = False
    iterations = 0

    for t in range(1, config.t_max + 1):
        iterations = t
        prev_factors = [f.copy() for f in factors]
        prev_sparse = sparse
        sparse = _admm_sweep(d, sparse, factors, aux, duals, lam_x, lam_e, mu)

        norms = np.stack([np.linalg.norm(y, axis=0) for y in aux])
        dead = np.all(norms == 0.0, axis=0)
        pruned = bool(np.any(dead))
        if pruned:
            keep = ~dead
            factors = [f[:, keep] for f in factors]
            aux = [y[:, keep] for y in aux]
            duals = [z[:, keep] for z in duals]

        trace.append(_admm_objective(d, factors, sparse, lam_x, lam_e))
        rank_trace.append(factors[0].shape[1])
        time_trace.append(time.perf_counter() - start)

        if factors[0].shape[1] == 0:
            converged = True
            break
        if not pruned:
            fac_change = max(
                _relative_change(f, p) for f, p in zip(factors, prev_factors)
            )
            if fac_change < config.conv_tol and _relative_change(
                sparse, prev_sparse
            ) < config.conv_tol:
                converged = True
                break

    return _finish(d, factors, sparse, trace, iterations, start, converged, rank_trace, time_trace)


def trpca_asym_solve(data, config):
    """Splitting solver with a norm power q in (0, 1) on mode 0 and ridge
    penalties on the remaining modes. Returns (report, sparse_term)."""
    d = _check_data(data)
    q = config.q
    if q is None and config.spec is not None and config.spec.kind == "asym_b":
        q = config.spec.q
    if q is None or not 0.0 < q < 1.0:
        raise ValueError(f"trpca_asym_solve requires q in (0, 1), got {q}")
    lam_x, lam_e, mu = config.lam_x, config.lam_e, config.mu

    factors = init_factors(d.shape, config.k_init, config.rng_seed)
    aux0 = factors[0].copy()
    dual0 = np.zeros_like(factors[0])
    sparse = np.zeros(d.shape)

    start = time.perf_counter()
    trace = [_asym_objective(d, factors, sparse, q, lam_x, lam_e)]
    rank_trace = [config.k_init]
    time_trace = [0.0]
    converged = False
    iterations = 0

    for t in range(1, config.t_max + 1):
        iterations = t
        prev_factors = [f.copy() for f in factors]
        prev_sparse = sparse
        aux0, dual0, sparse = _asym_sweep(
            d, sparse, factors, aux0, dual0, q, lam_x, lam_e, mu
        )

        dead = np.linalg.norm(aux0, axis=0) == 0.0
        pruned = bool(np.any(dead))
        if pruned:
            keep = ~dead
            factors = [f[:, keep] for f in factors]
            aux0 = aux0[:, keep]
            dual0 = dual0[:, keep]

        trace.append(_asym_objective(d, factors, sparse, q, lam_x, lam_e))
        rank_trace.append(factors[0].shape[1])
        time_trace.append(time.perf_counter() - start)

        if factors[0].shape[1] == 0:
            converged = True
            break
        if not pruned:
            fac_change = max(
                _relative_change(f, p) for f, p in zip(factors, prev_factors)
            )
            if fac_change < config.conv_tol and _relative_change(
                sparse, prev_sparse
            ) < config.conv_tol:
                converged = True
                break

    return _finish(d, factors, sparse, trace, iterations, start, converged, rank_trace, time_trace)


def trpca_als_solve(data, config):
    """Alternating ridge least squares for the squared-norm (exponent 2)
    penalty. Returns (report, sparse_term); the objective trace is
    monotone non-increasing."""
    d = _check_data(data)
    _require_sym_exponent(config.spec, 2.0, "trpca_als_solve")
    lam_x, lam_e = config.lam_x, config.lam_e

    factors = init_factors(d.shape, config.k_init, config.rng_seed)
    sparse = np.zeros(d.shape)

    start = time.perf_counter()
    trace = [_als_objective(d, factors, sparse, lam_x, lam_e)]
    rank_trace = [config.k_init]
    time_trace = [0.0]
    converged = False
    iterations = 0

    for t in range(1, config.t_max + 1):
        iterations = t
        prev_factors = [f.copy() for f in factors]
        prev_sparse = sparse
        sparse = _als_sweep(d, sparse, factors, lam_x, lam_e)

        trace.append(_als_objective(d, factors, sparse, lam_x, lam_e))
        rank_trace.append(factors[0].shape[1])
        time_trace.append(time.perf_counter() - start)

        fac_change = max(
            _relative_change(f, p) for f, p in zip(factors, prev_factors)
        )
        if fac_change < config.conv_tol and _relative_change(
            sparse, prev_sparse
        ) < config.conv_tol:
            converged = True
            break

    return _finish(d, factors, sparse, trace, iterations, start, converged, rank_trace, time_trace)


def trpca_solve(data, config):
    """Dispatch to the solver named in the config."""
    if config.solver == "asym":
        return trpca_asym_solve(data, config)
    if config.solver == "als":
        return trpca_als_solve(data, config)
    return trpca_admm_solve(data, config)


def sparsity_summary(sparse, tol=1e-12):
    """Count of entries with magnitude above `tol` and their fraction."""
    e = np.asarray(sparse)
    nnz = int(np.sum(np.abs(e) > tol))
    return nnz, nnz / e.size
