"""Scenario generation and experiment harness for power/size/robustness sweeps.

Covers AR(1) Gaussian designs with standardized columns, sparse-signal
coefficient vectors, the model-violation error catalog (heavy tails, skew,
heteroskedasticity, nonlinearity), block-orthogonal designs, the PC- and
phi-test baselines, replicated power sweeps with per-replication RNG streams,
and the tuning-variance decomposition experiment.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field, fields

import numpy as np

from .affine import _mc_pvalue, affine_piece, glasso_mc_test, l_test
from .classic import TestOutcome, f_test, oracle_test
from .errors import BadRegime, ConfigError, LTestError, RankDeficient
from .exact import mcfree_test
from .model import (
    Design,
    ModelContext,
    build_model,
    sample_sphere_batch,
    sufficient_state,
)
from .solvers import TuningChoice, tune

_VIOLATIONS = ("none", "t_errors", "gamma_errors", "heteroskedastic", "nonlinear")
_PATTERNS = ("random_signs", "dense_alternating", "dense_nonnegative")
_METHODS = ("f", "l", "mcfree", "glasso", "oracle", "pc", "phi")


@dataclass(frozen=True)
class ScenarioConfig:
    """One simulation scenario.

    ``amp`` is the signal amplitude A; ``k1`` of the first k coefficients are
    set to +-A/sqrt(k1), ``k2`` of the remaining d-k are drawn standard
    Gaussian.  ``violation_param`` carries the violation's parameter (nu for
    t errors, the shape for gamma errors, eta^2 for heteroskedastic, delta for
    nonlinear).
    """

    n: int
    d: int
    k: int
    amp: float = 0.0
    k1: int = 0
    k2: int = 0
    rho: float = 0.0
    violation: str = "none"
    violation_param: float | None = None
    reps: int = 300
    alpha: float = 0.05
    mc_samples: int = 200
    seed: int = 0
    block_orthogonal: bool = False
    beta_pattern: str = "random_signs"

    def __post_init__(self):
        if not (0 < self.k <= self.d < self.n):
            raise ConfigError("need 0 < k <= d < n")
        if not 0 <= self.k1 <= self.k:
            raise ConfigError("need 0 <= k1 <= k")
        if not 0 <= self.k2 <= self.d - self.k:
            raise ConfigError("need 0 <= k2 <= d - k")
        if not 0.0 <= self.rho < 1.0:
            raise ConfigError("need rho in [0, 1)")
        if self.reps < 1:
            raise ConfigError("need reps >= 1")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError("need alpha in (0, 1)")
        if self.violation not in _VIOLATIONS:
            raise ConfigError(f"unknown violation {self.violation!r}")
        if self.violation != "none" and self.violation_param is None:
            raise ConfigError(f"violation {self.violation!r} needs violation_param")
        if self.beta_pattern not in _PATTERNS:
            raise ConfigError(f"unknown beta_pattern {self.beta_pattern!r}")


@dataclass(frozen=True)
class PowerRecord:
    """Rejection-rate summary for one (scenario, method) cell.

    ``failures`` counts replications that raised a numerical error; they are
    excluded from the rate's denominator but never silently dropped.
    """

    method: str
    scenario: str
    rejection_rate: float
    standard_error: float
    wall_time: float
    failures: int = 0


def _ar1_rows(n: int, d: int, rho: float, rng: np.random.Generator) -> np.ndarray:
    """Rows i.i.d. N(0, Sigma) with Sigma_ij = rho^|i-j| via the AR recursion."""
    Z = rng.standard_normal((n, d))
    if rho == 0.0:
        return Z
    X = np.empty_like(Z)
    X[:, 0] = Z[:, 0]
    scale = np.sqrt(1.0 - rho * rho)
    for j in range(1, d):
        X[:, j] = rho * X[:, j - 1] + scale * Z[:, j]
    return X


def block_orthogonalize(X: np.ndarray, k: int) -> np.ndarray:
    """Replace the nuisance block by its residual on the first k columns."""
    head = X[:, :k]
    Q, _ = np.linalg.qr(head)
    out = X.copy()
    out[:, k:] = X[:, k:] - Q @ (Q.T @ X[:, k:])
    return out


def standardize_columns(X: np.ndarray) -> np.ndarray:
    """Zero-mean, unit-Euclidean-norm columns."""
    Xc = X - X.mean(axis=0)
    norms = np.linalg.norm(Xc, axis=0)
    if np.any(norms == 0.0):
        raise RankDeficient("constant column cannot be standardized")
    return Xc / norms


def nonlinear_design(X: np.ndarray, delta: float) -> np.ndarray:
    """Entrywise sign(x)|x|^delta transform of the design."""
    return np.sign(X) * np.abs(X) ** delta


def gen_design(cfg: ScenarioConfig, rng: np.random.Generator) -> Design:
    """Standardized AR(1) design (optionally block-orthogonalized).

    Redraws up to 3 times on a rank-deficient sample before giving up.
    """
    last_err = None
    for _ in range(3):
        X = _ar1_rows(cfg.n, cfg.d, cfg.rho, rng)
        if cfg.block_orthogonal:
            X = block_orthogonalize(X, cfg.k)
        try:
            Xs = standardize_columns(X)
            svals = np.linalg.svd(Xs, compute_uv=False)
            if svals[-1] <= 1e-8 * svals[0]:
                raise RankDeficient("standardized design is numerically singular")
        except RankDeficient as exc:
            last_err = exc
            continue
        return Design(X=Xs, n=cfg.n, d=cfg.d, k=cfg.k)
    raise RankDeficient(f"3 redraws failed: {last_err}")


def gen_beta(cfg: ScenarioConfig, rng: np.random.Generator) -> np.ndarray:
    """Coefficient vector for the scenario.

    random_signs: k1 of the first k coordinates are +-A/sqrt(k1); the dense
    patterns fill the whole tested block at A/sqrt(k) with alternating signs
    or all nonnegative.  k2 of the nuisance coordinates are standard Gaussian.
    """
    beta = np.zeros(cfg.d)
    if cfg.beta_pattern == "random_signs":
        if cfg.k1:
            idx = rng.choice(cfg.k, size=cfg.k1, replace=False)
            signs = np.where(rng.random(cfg.k1) < 0.5, -1.0, 1.0)
            beta[idx] = signs * cfg.amp / np.sqrt(cfg.k1)
    elif cfg.beta_pattern == "dense_alternating":
        signs = np.where(np.arange(cfg.k) % 2 == 0, 1.0, -1.0)
        beta[: cfg.k] = signs * cfg.amp / np.sqrt(cfg.k)
    else:  # dense_nonnegative
        beta[: cfg.k] = cfg.amp / np.sqrt(cfg.k)
    if cfg.k2:
        idx = cfg.k + rng.choice(cfg.d - cfg.k, size=cfg.k2, replace=False)
        beta[idx] = rng.standard_normal(cfg.k2)
    return beta


def gen_errors(cfg: ScenarioConfig, X: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Error vector under the configured model violation.

    t errors are standardized by the theoretical SD except at nu = 2 (infinite
    variance); gamma errors are standardized by mean/SD; heteroskedastic
    errors have SD eta on rows with positive row mean.  The nonlinear
    violation leaves the errors Gaussian -- the harness transforms the design
    via ``nonlinear_design`` when generating the response.
    """
    n = X.shape[0]
    if cfg.violation == "t_errors":
        nu = float(cfg.violation_param)
        eps = rng.standard_t(nu, size=n)
        if nu > 2:
            eps /= np.sqrt(nu / (nu - 2.0))
        return eps
    if cfg.violation == "gamma_errors":
        shape = float(cfg.violation_param)
        return (rng.gamma(shape, 1.0, size=n) - shape) / np.sqrt(shape)
    if cfg.violation == "heteroskedastic":
        eta = np.sqrt(float(cfg.violation_param))
        eps = rng.standard_normal(n)
        eps[X.mean(axis=1) > 0.0] *= eta
        return eps
    return rng.standard_normal(n)


def gen_response(
    cfg: ScenarioConfig,
    design: Design,
    beta: np.ndarray,
    rng: np.random.Generator,
) -> np.ndarray:
    """y from the scenario's data-generating process (sigma = 1).

    The signal enters on the unit-sample-SD scale of the covariates: a
    zero-mean unit-norm column is exactly a unit-SD column divided by
    sqrt(n), so the mean is (sqrt(n) X) beta.  This keeps the amplitude
    ``amp`` comparable across n (and to the per-observation noise sigma = 1)
    while the solvers keep seeing unit-norm columns.  Under the nonlinear
    violation the response uses the entrywise-transformed design (at the same
    unit-SD scale) while tests keep regressing on the original columns.
    """
    eps = gen_errors(cfg, design.X, rng)
    X_dgp = np.sqrt(design.n) * design.X
    if cfg.violation == "nonlinear":
        X_dgp = nonlinear_design(X_dgp, float(cfg.violation_param))
    return X_dgp @ beta + eps


def pc_test(ctx: ModelContext, y: np.ndarray, var_threshold: float = 0.85) -> TestOutcome:
    """F-test on the leading principal directions of the tested block.

    Keeps the smallest r whose cumulative squared singular values reach
    ``var_threshold`` of the variance in X_{1:k}, rebuilds the design as
    [X_{1:k} W_r, X_{-1:k}], and runs the F-test on the r retained columns.
    """
    if not 0.0 < var_threshold <= 1.0:
        raise BadRegime("var_threshold must lie in (0, 1]")
    _, svals, Vt = np.linalg.svd(ctx.Xk, full_matrices=False)
    share = np.cumsum(svals**2) / np.sum(svals**2)
    r = int(np.searchsorted(share, var_threshold - 1e-12) + 1)
    W_r = Vt[:r].T
    reduced = np.hstack([ctx.Xk @ W_r, ctx.Xnuis])
    sub = build_model(reduced, r)
    out = f_test(sub, y)
    return TestOutcome(
        method="pc",
        statistic=out.statistic,
        p_value=out.p_value,
        meta={**out.meta, "r": r},
    )


def phi_test(
    ctx: ModelContext,
    y: np.ndarray,
    tuning: TuningChoice | None = None,
    mc_samples: int = 200,
    rng: np.random.Generator | int | None = None,
    *,
    folds: int = 10,
    repeats: int = 1,
) -> TestOutcome:
    """MC test with the premultiplier applied to u_{1:k} without recentering.

    Same exchangeable-copies machinery as the L-test, statistic ||A u_{1:k}||;
    isolates the premultiplier's geometric contribution to power.
    """
    if mc_samples < 1:
        raise ValueError("mc_samples must be >= 1")
    gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    state = sufficient_state(ctx, y)
    if tuning is None:
        tuning = tune(ctx, state, gen, folds=folds, repeats=repeats)
    piece = affine_piece(ctx, state, tuning.lam, tuning.b_star)
    observed = float(np.linalg.norm(piece.A @ state.u[: ctx.k]))
    draws = sample_sphere_batch(gen, mc_samples, ctx.n - ctx.d + ctx.k)
    stats_mc = np.linalg.norm(draws[:, : ctx.k] @ piece.A.T, axis=1)
    mc = _mc_pvalue(observed, stats_mc)
    return TestOutcome(
        method="phi",
        statistic=observed,
        p_value=mc.p,
        mc_samples=mc.M,
        meta={"lam": tuning.lam, "ge_count": mc.ge_count},
    )


def _rep_rngs(seed: int, scenario: int, rep: int) -> list[np.random.Generator]:
    """Independent, reproducible streams for one replication.

    Order: design, beta, errors, tuning, then one per method in _METHODS
    order, so adding or removing methods never shifts the other streams.
    """
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(scenario, rep))
    return [np.random.default_rng(child) for child in ss.spawn(4 + len(_METHODS))]


def _run_method(
    method: str,
    ctx: ModelContext,
    y: np.ndarray,
    beta: np.ndarray,
    tuning: TuningChoice | None,
    mc_samples: int,
    rng: np.random.Generator,
) -> float:
    if method == "f":
        return f_test(ctx, y).p_value
    if method == "l":
        return l_test(ctx, y, mc_samples=mc_samples, rng=rng, tuning=tuning).p_value
    if method == "mcfree":
        return mcfree_test(ctx, y, tuning=tuning).p_value
    if method == "glasso":
        lam = tuning.lam
        return glasso_mc_test(ctx, y, lam, mc_samples=mc_samples, rng=rng).p_value
    if method == "oracle":
        return oracle_test(ctx, y, beta).p_value
    if method == "pc":
        return pc_test(ctx, y).p_value
    if method == "phi":
        return phi_test(ctx, y, tuning=tuning, mc_samples=mc_samples, rng=rng).p_value
    raise ConfigError(f"unknown method {method!r}")


def _needs_tuning(methods) -> bool:
    return any(m in ("l", "mcfree", "glasso", "phi") for m in methods)


def scenario_id(cfg: ScenarioConfig, index: int) -> str:
    bits = [f"s{index}", f"n{cfg.n}", f"d{cfg.d}", f"k{cfg.k}",
            f"A{cfg.amp:g}", f"k1_{cfg.k1}", f"k2_{cfg.k2}", f"rho{cfg.rho:g}"]
    if cfg.violation != "none":
        bits.append(f"{cfg.violation}{cfg.violation_param:g}")
    if cfg.block_orthogonal:
        bits.append("blockorth")
    if cfg.beta_pattern != "random_signs":
        bits.append(cfg.beta_pattern)
    return "-".join(bits)


def run_power_sweep(
    configs,
    methods,
    *,
    tuning_repeats: int = 1,
    progress: bool = False,
) -> list[PowerRecord]:
    """Rejection rates per scenario x method, deterministic in each cfg.seed.

    All methods of a replication share the same dataset and (where relevant)
    the same tuning draw, so paired comparisons see the same randomness.
    Replications that raise a numerical error count toward ``failures``.
    """
    configs = list(configs)
    methods = list(methods)
    if not configs or not methods:
        raise ConfigError("need at least one scenario and one method")
    for m in methods:
        if m not in _METHODS:
            raise ConfigError(f"unknown method {m!r}")

    records = []
    for ci, cfg in enumerate(configs):
        rejections = {m: 0 for m in methods}
        failures = {m: 0 for m in methods}
        timings = {m: 0.0 for m in methods}
        for rep in range(cfg.reps):
            rngs = _rep_rngs(cfg.seed, ci, rep)
            r_design, r_beta, r_err, r_tune = rngs[:4]
            method_rngs = dict(zip(_METHODS, rngs[4:]))
            design = gen_design(cfg, r_design)
            beta = gen_beta(cfg, r_beta)
            y = gen_response(cfg, design, beta, r_err)
            ctx = build_model(design.X, cfg.k)
            tuning = None
            if _needs_tuning(methods):
                state = sufficient_state(ctx, y)
                tuning = tune(ctx, state, r_tune, repeats=tuning_repeats)
            for m in methods:
                t0 = time.perf_counter()
                try:
                    p = _run_method(m, ctx, y, beta, tuning,
                                    cfg.mc_samples, method_rngs[m])
                except LTestError:
                    failures[m] += 1
                else:
                    rejections[m] += p <= cfg.alpha
                timings[m] += time.perf_counter() - t0
            if progress and (rep + 1) % 50 == 0:
                print(f"[{scenario_id(cfg, ci)}] {rep + 1}/{cfg.reps}", flush=True)
        for m in methods:
            ok = cfg.reps - failures[m]
            rate = rejections[m] / ok if ok else float("nan")
            se = float(np.sqrt(rate * (1.0 - rate) / ok)) if ok else float("nan")
            records.append(PowerRecord(
                method=m,
                scenario=scenario_id(cfg, ci),
                rejection_rate=float(rate),
                standard_error=se,
                wall_time=timings[m],
                failures=failures[m],
            ))
    return records


@dataclass(frozen=True)
class VarianceDecomposition:
    """Overall vs within-dataset spread of p-values under tuning resampling."""

    overall_sd: float
    within_sd: float
    ratio: float
    p_values: np.ndarray = field(repr=False, compare=False, default=None)


def tuning_variance_experiment(
    cfg: ScenarioConfig,
    m_outer: int,
    m_inner: int,
    rng: np.random.Generator,
    *,
    method: str = "l",
) -> VarianceDecomposition:
    """Decompose p-value spread into dataset vs tuning-draw contributions.

    Generates ``m_outer`` datasets; on each, re-runs the test ``m_inner``
    times with fresh tuning draws.  Reports

        overall sd = sqrt( sum (p_ij - pbar)^2 / (N - 1) ),   N = m_outer * m_inner
        within  sd = sqrt( sum (p_ij - pbar_i)^2 / (m_outer (m_inner - 1)) )

    and their ratio (within/overall).
    """
    if m_outer < 2 or m_inner < 2:
        raise ConfigError("need m_outer >= 2 and m_inner >= 2")
    if method not in ("l", "mcfree", "glasso", "phi"):
        raise ConfigError(f"method {method!r} has no tuning randomness")
    P = np.empty((m_outer, m_inner))
    for i in range(m_outer):
        design = gen_design(cfg, rng)
        beta = gen_beta(cfg, rng)
        y = gen_response(cfg, design, beta, rng)
        ctx = build_model(design.X, cfg.k)
        state = sufficient_state(ctx, y)
        for j in range(m_inner):
            tuning = tune(ctx, state, rng)
            P[i, j] = _run_method(method, ctx, y, beta, tuning,
                                  cfg.mc_samples, rng)
    total = P.size
    pbar = P.mean()
    overall = float(np.sqrt(np.sum((P - pbar) ** 2) / (total - 1)))
    within = float(np.sqrt(
        np.sum((P - P.mean(axis=1, keepdims=True)) ** 2)
        / (m_outer * (m_inner - 1))
    ))
    ratio = within / overall if overall > 0 else 0.0
    return VarianceDecomposition(
        overall_sd=overall, within_sd=within, ratio=float(ratio), p_values=P,
    )


def write_records_csv(records, path, include_timing: bool = False) -> None:
    """PowerRecord rows as CSV with a fixed column order and float format.

    Wall times vary run to run, so the timing column is opt-in; without it
    the bytes are a pure function of the configs and seeds.
    """
    header = ["scenario", "method", "rejection_rate", "standard_error", "failures"]
    if include_timing:
        header.append("wall_time")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for rec in records:
            row = [rec.scenario, rec.method,
                   f"{rec.rejection_rate:.10g}", f"{rec.standard_error:.10g}",
                   rec.failures]
            if include_timing:
                row.append(f"{rec.wall_time:.6f}")
            writer.writerow(row)


def run_manifest(configs, seed_note=None) -> dict:
    """JSON-ready echo of the sweep configuration (for the run manifest)."""
    cfg_dicts = []
    for cfg in configs:
        entry = {f.name: getattr(cfg, f.name) for f in fields(cfg)}
        cfg_dicts.append(entry)
    out = {"schema": 1, "configs": cfg_dicts}
    if seed_note is not None:
        out["seed_note"] = seed_note
    return out
