"""Shared fixtures: small seeded designs reused across the module tests."""

import numpy as np
import pytest

from ltest import build_model, sufficient_state


def make_ctx(n=40, d=8, k=3, seed=0, rho=0.0):
    """A standardized random design context (AR(1) columns if rho > 0)."""
    rng = np.random.default_rng(seed)
    Z = rng.standard_normal((n, d))
    if rho > 0.0:
        X = np.empty_like(Z)
        X[:, 0] = Z[:, 0]
        for j in range(1, d):
            X[:, j] = rho * X[:, j - 1] + np.sqrt(1 - rho**2) * Z[:, j]
    else:
        X = Z
    X = X - X.mean(axis=0)
    X = X / np.linalg.norm(X, axis=0)
    return build_model(X, k)


@pytest.fixture
def small_ctx():
    return make_ctx()


@pytest.fixture
def null_data(small_ctx):
    """Context plus a response with no tested-block signal."""
    rng = np.random.default_rng(7)
    y = small_ctx.X[:, small_ctx.k:] @ rng.standard_normal(small_ctx.d - small_ctx.k) * 0.5
    y = y + rng.standard_normal(small_ctx.n)
    return small_ctx, y


@pytest.fixture
def alt_data():
    """Larger context plus a response with clear tested-block signal."""
    ctx = make_ctx(n=60, d=12, k=4, seed=3)
    rng = np.random.default_rng(4)
    beta = np.zeros(ctx.d)
    beta[: ctx.k] = 1.5 / np.sqrt(ctx.k)
    beta[ctx.k] = 0.8
    y = ctx.X @ beta + rng.standard_normal(ctx.n)
    return ctx, y


@pytest.fixture
def alt_state(alt_data):
    ctx, y = alt_data
    return ctx, y, sufficient_state(ctx, y)
