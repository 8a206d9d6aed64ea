"""Tests for the F-test, the OLS subvector identities, and the oracle t-test."""

import numpy as np
import pytest
from scipy import special, stats

from ltest import build_model, f_test, ols_subvector, oracle_test, sufficient_state
from ltest.errors import DegenerateResidual, NullDirection

from tests.conftest import make_ctx


def test_f_test_on_hand_checkable_design():
    # X = [[1,0],[0,1],[0,0]], y = (1,1,1), k = 1:
    # rss0 = 2 (null model fits only the second column), rss1 = 1,
    # F = ((2-1)/1)/(1/1) = 1 with (1, 1) df, so p = P(F_{1,1} >= 1) = 1/2.
    X = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]])
    y = np.array([1.0, 1.0, 1.0])
    out = f_test(build_model(X, 1), y)
    assert out.statistic == pytest.approx(1.0, abs=1e-12)
    assert out.p_value == pytest.approx(0.5, abs=1e-12)
    assert out.meta["rss0"] == pytest.approx(2.0)
    assert out.meta["rss1"] == pytest.approx(1.0)
    assert out.meta["df"] == (1, 1)


def test_f_two_path_agreement():
    # classical F p-value == 1 - I_{||u_head||^2}(k/2, (n-d)/2)
    for seed in range(100):
        ctx = make_ctx(n=30, d=8, k=3, seed=seed)
        y = np.random.default_rng(1000 + seed).standard_normal(30)
        out = f_test(ctx, y)
        st = sufficient_state(ctx, y)
        z2 = float(np.sum(st.u[: ctx.k] ** 2))
        p_beta = 1.0 - special.betainc(ctx.k / 2, (ctx.n - ctx.d) / 2, z2)
        assert abs(out.p_value - p_beta) <= 1e-10


def test_f_statistic_matches_textbook_formula(null_data):
    ctx, y = null_data
    beta0 = np.linalg.lstsq(ctx.Xnuis, y, rcond=None)[0]
    rss0 = float(np.sum((y - ctx.Xnuis @ beta0) ** 2))
    beta1 = np.linalg.lstsq(ctx.X, y, rcond=None)[0]
    rss1 = float(np.sum((y - ctx.X @ beta1) ** 2))
    expected = ((rss0 - rss1) / ctx.k) / (rss1 / (ctx.n - ctx.d))
    out = f_test(ctx, y)
    assert out.statistic == pytest.approx(expected, rel=1e-10)
    assert out.p_value == pytest.approx(stats.f.sf(expected, ctx.k, ctx.n - ctx.d), rel=1e-12)


def test_f_undefined_with_saturated_model():
    rng = np.random.default_rng(8)
    ctx = build_model(rng.standard_normal((6, 6)), 2)
    y = rng.standard_normal(6)
    with pytest.raises(DegenerateResidual):
        f_test(ctx, y)


def test_ols_subvector_three_path_agreement():
    # full lstsq head == Schur-complement solve == sigma_hat S^{-1} W u_head
    for seed in range(20):
        ctx = make_ctx(n=35, d=9, k=4, seed=seed)
        y = np.random.default_rng(seed).standard_normal(35)

        full = np.linalg.lstsq(ctx.X, y, rcond=None)[0][: ctx.k]
        schur = ols_subvector(ctx, y)

        st = sufficient_state(ctx, y)
        via_u = st.sigma_hat * np.linalg.solve(ctx.schur.S, ctx.W @ st.u[: ctx.k])

        np.testing.assert_allclose(schur, full, atol=1e-8)
        np.testing.assert_allclose(via_u, full, atol=1e-8)


class TestOracle:
    def test_scale_invariant_in_the_direction(self, alt_data):
        ctx, y = alt_data
        beta = np.zeros(ctx.d)
        beta[: ctx.k] = [1.0, -0.5, 0.25, 0.0]
        a = oracle_test(ctx, y, beta)
        b = oracle_test(ctx, y, 37.0 * beta)
        assert b.statistic == pytest.approx(a.statistic, rel=1e-12)
        assert b.p_value == pytest.approx(a.p_value, rel=1e-12)

    def test_needs_a_nonzero_direction(self, alt_data):
        ctx, y = alt_data
        with pytest.raises(NullDirection):
            oracle_test(ctx, y, np.zeros(ctx.d))

    def test_matches_manual_collapsed_regression(self, alt_data):
        ctx, y = alt_data
        beta = np.zeros(ctx.d)
        beta[: ctx.k] = 1.0
        out = oracle_test(ctx, y, beta)

        head = beta[: ctx.k] / np.linalg.norm(beta[: ctx.k])
        Xt = np.column_stack([ctx.Xk @ head, ctx.Xnuis])
        gamma, *_ = np.linalg.lstsq(Xt, y, rcond=None)
        resid = y - Xt @ gamma
        dof = ctx.n - Xt.shape[1]
        sigma2 = float(resid @ resid) / dof
        se = np.sqrt(sigma2 * np.linalg.inv(Xt.T @ Xt)[0, 0])
        t = gamma[0] / se
        assert out.statistic == pytest.approx(t, rel=1e-9)
        assert out.p_value == pytest.approx(float(stats.t.sf(t, dof)), rel=1e-9)
        assert out.meta["dof"] == dof

    def test_one_sided_direction_helps(self):
        # strong aligned signal should give a tiny one-sided p-value
        ctx = make_ctx(n=50, d=10, k=3, seed=6)
        beta = np.zeros(10)
        beta[:3] = 2.0
        y = ctx.X @ beta + 0.3 * np.random.default_rng(3).standard_normal(50)
        assert oracle_test(ctx, y, beta).p_value < 1e-4
