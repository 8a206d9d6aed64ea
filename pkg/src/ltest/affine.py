"""The L-test: an affine approximation of the group-LASSO solution map.

Running a fresh group-LASSO fit for every Monte Carlo replicate is the
expensive part of the exact MC test.  Restricted to a sphere of fixed radius,
the map from u_{1:k} (the tested-block part of the conditional unit vector) to
the group-LASSO head beta_{1:k} has an explicit inverse

    f^{-1}(b) = (1/sigma_hat) (X_{1:k}^T V_{1:k})^{-1}
                ( -X_{1:k}^T (yhat - X_{1:k} b - X_{-1:k} bhat_{-1:k}(b))
                  + n lam b/||b|| ),

where bhat_{-1:k}(b) is the conditional LASSO.  Its gradient on the sphere is
constant wherever the conditional-LASSO active set A(b) is, so locally
f^{-1}(b) = grad_inv b + nu and the statistic

    L(u) = || A (u_{1:k} - nu) ||,   A = V_{1:k}^T X_{1:k} grad_inv^{-1}

(with an explicit r -> 0 limit matrix when b* = 0) can be evaluated for every
replicate with one k x k multiply: the solver runs once per dataset, not once
per replicate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .classic import TestOutcome
from .errors import SingularGradient, ZeroInput
from .model import (
    ModelContext,
    SufficientState,
    sample_sphere_batch,
    sufficient_state,
)
from .solvers import (
    TuningChoice,
    _conditional_fit_from_qn,
    _mfista_stack,
    group_lasso,
    tune,
)

# ||b*|| at or below this routes to the r -> 0 limit branch of A.
ZERO_BSTAR = 1e-10

_COND_LIMIT = 1e12  # SingularGradient beyond this condition number


@dataclass
class AffinePiece:
    """One affine piece of the inverse map, frozen at (b*, lam).

    ``grad_inv`` is None on the limit branch (b* = 0), where only the limit
    premultiplier A is defined.  ``active_set`` holds 0-based design-column
    indices of the conditional-LASSO active set at b*.
    """

    grad_inv: np.ndarray | None
    nu: np.ndarray
    A: np.ndarray
    b_star: np.ndarray
    lam: float
    active_set: np.ndarray


@dataclass
class McPValue:
    """Monte Carlo p-value (1 + #{samples >= observed}) / (M + 1)."""

    p: float
    M: int
    ge_count: int


def _mc_pvalue(observed: float, samples: np.ndarray) -> McPValue:
    ge = int(np.count_nonzero(samples >= observed))
    M = int(samples.size)
    return McPValue(p=(1 + ge) / (M + 1), M=M, ge_count=ge)


def _conditional_at(ctx: ModelContext, state: SufficientState, lam: float, b: np.ndarray):
    """Conditional-LASSO fit at tested-block value b, fed from the state only."""
    qn = state.Xty - ctx.cross @ b
    return _conditional_fit_from_qn(ctx, qn, float(lam))


def _proj_active(ctx: ModelContext, nuis_idx: np.ndarray, M: np.ndarray) -> np.ndarray:
    """P_A applied to the columns of M, where A indexes the nuisance block."""
    if nuis_idx.size == 0:
        return np.zeros_like(M)
    Q = np.linalg.qr(ctx.Xnuis[:, nuis_idx], mode="reduced")[0]
    return Q @ (Q.T @ M)


def f_inverse(
    ctx: ModelContext,
    state: SufficientState,
    lam: float,
    b: np.ndarray,
) -> np.ndarray:
    """The u_{1:k} whose group-LASSO head equals b (b != 0).

    Raises
    ------
    ZeroInput
        For b = 0; the inverse is set-valued there and callers should use the
        limit branch of the premultiplier instead.
    """
    if lam <= 0:
        raise ValueError("lam must be positive")
    b = np.asarray(b, dtype=float)
    nb = np.linalg.norm(b)
    if nb == 0.0:
        raise ZeroInput("f_inverse undefined at b = 0; use the limit branch")
    cfit = _conditional_at(ctx, state, lam, b)
    k = ctx.k
    gram_kk = ctx.gram[:k, :k]
    xk_yhat = ctx.Xk.T @ state.yhat
    inner = -(xk_yhat - gram_kk @ b - ctx.cross.T @ cfit.beta_nuis)
    inner += ctx.n * lam * b / nb
    return np.linalg.solve(ctx.W, inner) / state.sigma_hat


def grad_f_inverse(
    ctx: ModelContext,
    state: SufficientState,
    lam: float,
    b_star: np.ndarray,
    r: float,
) -> np.ndarray:
    """Analytic gradient of f^{-1} restricted to the sphere of radius r."""
    if lam <= 0 or r <= 0:
        raise ValueError("lam and r must be positive")
    b_star = np.asarray(b_star, dtype=float)
    cfit = _conditional_at(ctx, state, lam, b_star)
    return _grad_from_active(ctx, state, lam, cfit.active_set, r)


def _grad_from_active(
    ctx: ModelContext,
    state: SufficientState,
    lam: float,
    nuis_idx: np.ndarray,
    r: float,
) -> np.ndarray:
    k = ctx.k
    M = ctx.gram[:k, :k] - ctx.Xk.T @ _proj_active(ctx, nuis_idx, ctx.Xk)
    M = M + (ctx.n * lam / r) * np.eye(k)
    return np.linalg.solve(ctx.W, M) / state.sigma_hat


def affine_piece(
    ctx: ModelContext,
    state: SufficientState,
    lam: float,
    b_star: np.ndarray,
) -> AffinePiece:
    """Gradient, recentering vector nu, and premultiplier A at (b*, lam).

    For ||b*|| <= ZERO_BSTAR the limit branch is used:
    A = (sigma_hat/(n lam)) V_{1:k}^T X_{1:k} X_{1:k}^T V_{1:k}, and nu comes
    from the same expression with the P_A b* term dropped.

    Raises
    ------
    SingularGradient
        If the gradient matrix is numerically singular (condition > 1e12).
    """
    if lam <= 0:
        raise ValueError("lam must be positive")
    b_star = np.asarray(b_star, dtype=float)
    k = ctx.k
    cfit = _conditional_at(ctx, state, lam, b_star)
    nb = float(np.linalg.norm(b_star))
    limit_branch = nb <= ZERO_BSTAR

    # beta-check vector: S^{-1} X_{1:k}^T (yhat - Xn bhat - P_A Xk b*)
    target = state.yhat - ctx.Xnuis @ cfit.beta_nuis
    if not limit_branch:
        target = target - _proj_active(ctx, cfit.active_set, ctx.Xk @ b_star)
    cho = scipy.linalg.cho_factor(ctx.schur.S)
    beta_check = scipy.linalg.cho_solve(cho, ctx.Xk.T @ target)
    nu = -(ctx.W.T @ beta_check) / state.sigma_hat

    if limit_branch:
        grad_inv = None
        A = (state.sigma_hat / (ctx.n * lam)) * (ctx.W.T @ ctx.W)
    else:
        grad_inv = _grad_from_active(ctx, state, lam, cfit.active_set, nb)
        if np.linalg.cond(grad_inv) > _COND_LIMIT:
            raise SingularGradient(
                "gradient of the inverse map is numerically singular"
            )
        # A = V_{1:k}^T X_{1:k} grad_inv^{-1}, via a solve on the transpose
        A = np.linalg.solve(grad_inv.T, ctx.W).T
    return AffinePiece(
        grad_inv=grad_inv,
        nu=nu,
        A=A,
        b_star=b_star,
        lam=float(lam),
        active_set=ctx.k + cfit.active_set,
    )


def l_statistic(piece: AffinePiece, u_head: np.ndarray) -> float:
    """L(u) = ||A (u_{1:k} - nu)||; one k x k matrix-vector product."""
    return float(np.linalg.norm(piece.A @ (np.asarray(u_head, float) - piece.nu)))


def l_test(
    ctx: ModelContext,
    y: np.ndarray,
    mc_samples: int = 200,
    rng: np.random.Generator | int | None = None,
    tuning: TuningChoice | None = None,
    *,
    folds: int = 10,
    repeats: int = 1,
) -> TestOutcome:
    """The L-test: exact MC test with the affine-piece statistic.

    Solver work is one CV tuning pass, one refit, and one conditional LASSO,
    independent of ``mc_samples``; each MC replicate costs a k x k multiply.

    Parameters
    ----------
    tuning : TuningChoice, optional
        Reuse an existing (lambda, b*) choice; by default one is computed here
        from ``rng`` (which also drives the MC draws).
    """
    if mc_samples < 1:
        raise ValueError("mc_samples must be >= 1")
    gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    state = sufficient_state(ctx, y)
    if tuning is None:
        tuning = tune(ctx, state, gen, folds=folds, repeats=repeats)
    piece = affine_piece(ctx, state, tuning.lam, tuning.b_star)
    observed = l_statistic(piece, state.u[: ctx.k])
    draws = sample_sphere_batch(gen, mc_samples, ctx.V.shape[1])
    stats_mc = np.linalg.norm((draws[:, : ctx.k] - piece.nu) @ piece.A.T, axis=1)
    mcp = _mc_pvalue(observed, stats_mc)
    return TestOutcome(
        method="l",
        statistic=observed,
        p_value=mcp.p,
        mc_samples=mcp.M,
        meta={
            "lam": tuning.lam,
            "b_star": [float(v) for v in tuning.b_star],
            "ge_count": mcp.ge_count,
            "limit_branch": piece.grad_inv is None,
            "tuning_repeats": tuning.repeats,
        },
    )


def glasso_mc_test(
    ctx: ModelContext,
    y: np.ndarray,
    lam: float,
    mc_samples: int = 200,
    rng: np.random.Generator | int | None = None,
) -> TestOutcome:
    """Exact MC test with the full group-LASSO statistic T = ||V_{1:k}^T X_{1:k} beta_{1:k}||.

    Runs one group-LASSO fit per MC replicate (all replicates advance in one
    stacked solve, warm-started at the observed fit).  Replicates whose fit
    did not converge are counted on the >= side of the comparison --
    conservative, never anti-conservative -- and surfaced in ``meta``.
    """
    if mc_samples < 1:
        raise ValueError("mc_samples must be >= 1")
    gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    state = sufficient_state(ctx, y)
    k = ctx.k

    fit_obs = group_lasso(ctx, y, lam)
    t_obs = float(np.linalg.norm(ctx.W.T @ fit_obs.beta[:k]))

    draws = sample_sphere_batch(gen, mc_samples, ctx.V.shape[1])
    y_mc = state.yhat[None, :] + state.sigma_hat * (draws @ ctx.V.T)
    q_mc = y_mc @ ctx.X
    res = _mfista_stack(
        ctx.gram,
        q_mc,
        state.yty,
        float(ctx.n),
        float(lam),
        k,
        np.tile(fit_obs.beta, (mc_samples, 1)),
        ctx.gram_eigmax,
    )
    t_mc = np.linalg.norm(res.W[:, :k] @ ctx.W, axis=1)
    t_mc = np.where(res.converged, t_mc, np.inf)  # unconverged -> tie side
    mcp = _mc_pvalue(t_obs, t_mc)
    return TestOutcome(
        method="glasso-mc",
        statistic=t_obs,
        p_value=mcp.p,
        mc_samples=mcp.M,
        meta={
            "lam": float(lam),
            "ge_count": mcp.ge_count,
            "unconverged_samples": int(np.count_nonzero(~res.converged)),
            "observed_converged": fit_obs.converged,
        },
    )
