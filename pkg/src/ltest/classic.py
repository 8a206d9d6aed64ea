"""Classical and oracle baselines: F-test, OLS subvector identities, oracle t-test.

The F statistic compares the null-model and full-model residual sums of
squares; conditionally on the sufficient statistic it is a monotone function
of ||u_{1:k}||, whose squared norm is Beta(k/2, (n-d)/2) under the null -- the
identity the two-path agreement tests exercise.  The oracle test knows the
true direction of beta_{1:k}, collapses the tested block to the single column
X_{1:k} beta/||beta||, and runs a one-sided t-test on that coefficient.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy import stats

from .errors import DegenerateResidual, NullDirection
from .model import ModelContext, sufficient_state


@dataclass
class TestOutcome:
    """Common result record for every test in the package."""

    method: str
    statistic: float
    p_value: float
    mc_samples: int | None = None
    meta: dict = field(default_factory=dict)


def f_test(ctx: ModelContext, y: np.ndarray) -> TestOutcome:
    """Classical F-test of H_{1:k} with the F_{k, n-d} reference distribution.

    Raises
    ------
    DegenerateResidual
        If y lies in the nuisance column space or the full-model residual is
        zero (the statistic is undefined in either case).
    """
    state = sufficient_state(ctx, y)
    y = np.asarray(y, dtype=float)
    n, d, k = ctx.n, ctx.d, ctx.k
    rss0 = state.sigma_hat ** 2
    beta_ols = np.linalg.lstsq(ctx.X, y, rcond=None)[0]
    resid = y - ctx.X @ beta_ols
    rss1 = float(resid @ resid)
    if n == d or rss1 <= 1e-24 * max(1.0, float(y @ y)):
        raise DegenerateResidual("full-model residual is zero; F undefined")
    fstat = ((rss0 - rss1) / k) / (rss1 / (n - d))
    return TestOutcome(
        method="f",
        statistic=float(fstat),
        p_value=float(stats.f.sf(fstat, k, n - d)),
        meta={"rss0": rss0, "rss1": rss1, "df": (k, n - d)},
    )


def ols_subvector(ctx: ModelContext, y: np.ndarray) -> np.ndarray:
    """First k OLS coefficients, computed as S^{-1} X_{1:k}^T (I - P_{-1:k}) y.

    Equals the leading block of the full least-squares solution; see the
    three-path agreement tests for the companion identities.
    """
    y = np.asarray(y, dtype=float)
    rhs = ctx.Xk.T @ (y - ctx.proj_nuis(y))
    cho = scipy.linalg.cho_factor(ctx.schur.S)
    return scipy.linalg.cho_solve(cho, rhs)


def oracle_test(
    ctx: ModelContext, y: np.ndarray, beta_true: np.ndarray
) -> TestOutcome:
    """One-sided t-test along the true direction of the tested block.

    Builds the collapsed design [X_{1:k} beta_{1:k}/||beta_{1:k}||, X_{-1:k}]
    and tests its first coefficient against zero from above, with n-d+k-1
    residual degrees of freedom.  A power benchmark, not a usable test: it
    requires the unknown direction.

    Raises
    ------
    NullDirection
        If beta_true has a zero tested block (no direction to use).
    """
    y = np.asarray(y, dtype=float)
    beta_true = np.asarray(beta_true, dtype=float)
    head = beta_true[: ctx.k]
    nrm = np.linalg.norm(head)
    if nrm == 0.0:
        raise NullDirection("oracle direction undefined: beta_{1:k, true} = 0")
    direction_col = ctx.Xk @ (head / nrm)
    X_tilde = np.column_stack([direction_col, ctx.Xnuis])
    dof = ctx.n - X_tilde.shape[1]
    gamma = np.linalg.lstsq(X_tilde, y, rcond=None)[0]
    resid = y - X_tilde @ gamma
    rss = float(resid @ resid)
    if dof <= 0 or rss <= 0.0:
        raise DegenerateResidual("oracle model leaves no residual df")
    sigma2 = rss / dof
    gram = X_tilde.T @ X_tilde
    inv_11 = float(np.linalg.solve(gram, np.eye(gram.shape[0])[:, 0])[0])
    tstat = float(gamma[0] / np.sqrt(sigma2 * inv_11))
    return TestOutcome(
        method="oracle",
        statistic=tstat,
        p_value=float(stats.t.sf(tstat, dof)),
        meta={"dof": dof},
    )
