"""Linear-model geometry for conditional group tests.

Conventions: the design ``X`` is n x d with full column rank, n >= d, and the
tested group occupies the *first* k columns.  ``X_{-1:k}`` denotes the nuisance
block (columns k+1..d).  The complement basis ``V`` is an n x (n-d+k)
orthonormal basis of the orthogonal complement of col(X_{-1:k}), built so that

* column i (i <= k) is the normalized residual of X_i regressed on columns
  i+1..d, and
* the remaining n-d columns are the left singular vectors of X with index > d.

With P = P_{-1:k} the projection onto col(X_{-1:k}), any response decomposes as

    y = P y + sigma_hat * V u,   sigma_hat = ||(I - P) y||,  ||u|| = 1,

and conditional on the null-sufficient statistic (X_{-1:k}^T y, y^T y) the unit
vector u is uniform on the sphere.  Sampling fresh uniform u's and rebuilding
responses through this identity is what makes the Monte Carlo tests exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BadGroupSize, DegenerateResidual, RankDeficient

# Relative rank tolerance: smallest singular value must exceed this times the
# largest, otherwise the conditional geometry is numerically undefined.
RANK_RTOL = 1e-8

# sigma_hat below this (relative to ||y||) means y sits in the null-model
# column space and the conditional tests are undefined.
_DEGENERATE_RTOL = 1e-12


@dataclass(frozen=True)
class Design:
    """Design matrix plus the tested-group size."""

    X: np.ndarray
    n: int
    d: int
    k: int


@dataclass(frozen=True)
class ComplementBasis:
    """Orthonormal basis V of col(X_{-1:k})^perp; Vk is its first k columns."""

    V: np.ndarray

    @property
    def Vk(self) -> np.ndarray:
        return self.V[:, : self._k]

    # number of leading "tested" columns; stored privately so Vk stays a view
    _k: int = 0


@dataclass(frozen=True)
class SchurBlock:
    """S = X_{1:k}^T V_{1:k} V_{1:k}^T X_{1:k}, the tested block's quadratic form."""

    S: np.ndarray

    @property
    def M(self) -> np.ndarray:
        """Alias of S when used as a quadratic form."""
        return self.S


@dataclass(frozen=True)
class SufficientState:
    """The conditioning bundle for H_{1:k} at an observed response y.

    Attributes
    ----------
    yhat : ndarray
        P_{-1:k} y, the null-model fitted values.
    sigma_hat : float
        ||(I - P_{-1:k}) y||.
    u : ndarray
        Unit vector of length n-d+k with y = yhat + sigma_hat * V u.
    Xty : ndarray
        X_{-1:k}^T y, first half of the sufficient statistic.
    yty : float
        y^T y, second half of the sufficient statistic.
    """

    yhat: np.ndarray
    sigma_hat: float
    u: np.ndarray
    Xty: np.ndarray
    yty: float


@dataclass(frozen=True)
class ModelContext:
    """Immutable bundle of design factorizations shared by every test.

    Safe to share across threads; all arrays are treated as read-only.
    Solvers and tests consume the cached Gram blocks rather than refactoring X.
    """

    design: Design
    basis: ComplementBasis
    schur: SchurBlock
    # Orthonormal basis (QR Q factor) of the nuisance block, for applying
    # P_{-1:k} without ever forming an n x n projection matrix.
    q_nuis: np.ndarray = field(repr=False)
    # Cached Gram blocks: G = X^T X, G_nuis = Xn^T Xn, cross = Xn^T Xk.
    gram: np.ndarray = field(repr=False)
    gram_nuis: np.ndarray = field(repr=False)
    cross: np.ndarray = field(repr=False)
    # W = Xk^T Vk (k x k); S = W W^T.
    W: np.ndarray = field(repr=False)
    # Largest eigenvalues of the Gram blocks, for solver step sizes.
    gram_eigmax: float = 0.0
    gram_nuis_eigmax: float = 0.0

    @property
    def X(self) -> np.ndarray:
        return self.design.X

    @property
    def Xk(self) -> np.ndarray:
        return self.design.X[:, : self.design.k]

    @property
    def Xnuis(self) -> np.ndarray:
        return self.design.X[:, self.design.k:]

    @property
    def n(self) -> int:
        return self.design.n

    @property
    def d(self) -> int:
        return self.design.d

    @property
    def k(self) -> int:
        return self.design.k

    @property
    def V(self) -> np.ndarray:
        return self.basis.V

    @property
    def Vk(self) -> np.ndarray:
        return self.basis.Vk

    def proj_nuis(self, v: np.ndarray) -> np.ndarray:
        """Apply P_{-1:k} to a vector (or to each column of a matrix)."""
        if self.q_nuis.shape[1] == 0:
            return np.zeros_like(v)
        return self.q_nuis @ (self.q_nuis.T @ v)


def build_model(X: np.ndarray, k: int) -> ModelContext:
    """Factor a design matrix and assemble the conditional-test geometry.

    Parameters
    ----------
    X : ndarray of shape (n, d)
        Full-column-rank design; the tested group is columns 0..k-1.
    k : int
        Tested-group size, 1 <= k <= d.

    Returns
    -------
    ModelContext

    Raises
    ------
    RankDeficient
        If n < d or the smallest singular value is below RANK_RTOL times the
        largest.
    BadGroupSize
        If k is outside [1, d].
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise RankDeficient("design must be a 2-d array")
    n, d = X.shape
    if not 1 <= k <= d:
        raise BadGroupSize(f"group size k={k} outside [1, {d}]")
    if n < d:
        raise RankDeficient(f"n={n} < d={d}: columns cannot be independent")

    # Full SVD: rank check + the n-d tail columns of V in one factorization.
    U, svals, _ = np.linalg.svd(X, full_matrices=True)
    if svals[-1] <= RANK_RTOL * svals[0]:
        raise RankDeficient(
            f"smallest singular value {svals[-1]:.3e} below tolerance "
            f"{RANK_RTOL:.0e} * {svals[0]:.3e}"
        )

    # First k columns of V: normalized residual of X_i on columns i+1..d.
    # (Reversed Gram-Schmidt: residual i is orthogonal to span{X_{i+1},..,X_d},
    # which contains every later residual and the whole nuisance block.)
    V = np.empty((n, n - d + k))
    for i in range(k):
        trailing = X[:, i + 1:]
        xi = X[:, i]
        if trailing.shape[1] > 0:
            Q = np.linalg.qr(trailing, mode="reduced")[0]
            resid = xi - Q @ (Q.T @ xi)
        else:
            resid = xi.copy()
        V[:, i] = resid / np.linalg.norm(resid)
    V[:, k:] = U[:, d:]

    Xk = X[:, :k]
    Xn = X[:, k:]
    q_nuis = (
        np.linalg.qr(Xn, mode="reduced")[0] if d > k else np.zeros((n, 0))
    )

    W = Xk.T @ V[:, :k]
    S = W @ W.T

    gram = X.T @ X
    gram_nuis = Xn.T @ Xn
    cross = Xn.T @ Xk
    gram_eigmax = float(svals[0] ** 2)
    gram_nuis_eigmax = (
        float(np.linalg.eigvalsh(gram_nuis)[-1]) if d > k else 0.0
    )

    return ModelContext(
        design=Design(X=X, n=n, d=d, k=k),
        basis=ComplementBasis(V=V, _k=k),
        schur=SchurBlock(S=S),
        q_nuis=q_nuis,
        gram=gram,
        gram_nuis=gram_nuis,
        cross=cross,
        W=W,
        gram_eigmax=gram_eigmax,
        gram_nuis_eigmax=gram_nuis_eigmax,
    )


def sufficient_state(ctx: ModelContext, y: np.ndarray) -> SufficientState:
    """Decompose y into (yhat, sigma_hat, u) plus the sufficient statistic.

    Raises
    ------
    DegenerateResidual
        If y lies (numerically) in col(X_{-1:k}), i.e. sigma_hat ~ 0.
    """
    y = np.asarray(y, dtype=float)
    if y.shape != (ctx.n,):
        raise ValueError(f"y must have shape ({ctx.n},), got {y.shape}")
    yhat = ctx.proj_nuis(y)
    resid = y - yhat
    sigma_hat = float(np.linalg.norm(resid))
    if sigma_hat <= _DEGENERATE_RTOL * max(1.0, float(np.linalg.norm(y))):
        raise DegenerateResidual(
            "response lies in the nuisance column space (sigma_hat ~ 0)"
        )
    u = (ctx.V.T @ resid) / sigma_hat
    return SufficientState(
        yhat=yhat,
        sigma_hat=sigma_hat,
        u=u,
        Xty=ctx.Xnuis.T @ y,
        yty=float(y @ y),
    )


def sample_sphere(rng: np.random.Generator, dim: int) -> np.ndarray:
    """One uniform draw from the unit sphere S^{dim-1}."""
    while True:
        g = rng.standard_normal(dim)
        nrm = np.linalg.norm(g)
        if nrm > 0.0:  # probability-zero guard
            return g / nrm


def sample_sphere_batch(
    rng: np.random.Generator, m: int, dim: int
) -> np.ndarray:
    """m independent uniform sphere draws, one per row."""
    g = rng.standard_normal((m, dim))
    nrm = np.linalg.norm(g, axis=1)
    while np.any(nrm == 0.0):
        bad = nrm == 0.0
        g[bad] = rng.standard_normal((int(bad.sum()), dim))
        nrm = np.linalg.norm(g, axis=1)
    return g / nrm[:, None]


def sample_conditional(
    ctx: ModelContext, state: SufficientState, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Draw a co-sufficient response copy.

    Returns
    -------
    (u_tilde, y_tilde)
        ``u_tilde`` uniform on S^{n-d+k-1} and the reconstructed response
        ``y_tilde = yhat + sigma_hat * V u_tilde``, which shares
        (X_{-1:k}^T y, y^T y) with the observed data.
    """
    u_tilde = sample_sphere(rng, ctx.V.shape[1])
    y_tilde = state.yhat + state.sigma_hat * (ctx.V @ u_tilde)
    return u_tilde, y_tilde
