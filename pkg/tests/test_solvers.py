"""Tests for the mixed-penalty group-LASSO solver, the penalty path, and CV
tuning."""

import numpy as np
import pytest

from ltest import build_model, conditional_lasso, group_lasso, sufficient_state, tune
from ltest.solvers import invocation_count, lambda_grid, lambda_max

from tests.conftest import make_ctx


def mixed_objective(ctx, y, w, lam):
    """(1/2n)||y - Xw||^2 + lam(||w_head||_2 + ||w_tail||_1), spelled out."""
    r = y - ctx.X @ w
    pen = np.linalg.norm(w[: ctx.k]) + np.sum(np.abs(w[ctx.k:]))
    return float(r @ r) / (2 * ctx.n) + lam * pen


class TestGroupLasso:
    def test_zero_solution_at_lambda_max(self, alt_data):
        ctx, y = alt_data
        lam_hi = lambda_max(ctx, y)
        fit = group_lasso(ctx, y, lam_hi * 1.0000001)
        np.testing.assert_array_equal(fit.beta, np.zeros(ctx.d))
        fit_below = group_lasso(ctx, y, lam_hi * 0.95)
        assert np.any(fit_below.beta != 0.0)

    def test_converged_fit_satisfies_stationarity(self, alt_data):
        ctx, y = alt_data
        fit = group_lasso(ctx, y, 0.05)
        assert fit.converged
        assert fit.kkt_residual <= 1e-7

    def test_objective_matches_direct_evaluation(self, alt_data):
        ctx, y = alt_data
        fit = group_lasso(ctx, y, 0.05)
        assert fit.objective == pytest.approx(mixed_objective(ctx, y, fit.beta, 0.05), rel=1e-12)

    def test_objective_history_nonincreasing(self, alt_data):
        ctx, y = alt_data
        fit = group_lasso(ctx, y, 0.03, record_history=True)
        assert fit.history is not None and fit.history.size >= 2
        assert np.all(np.diff(fit.history) <= 1e-12)

    def test_fit_beats_random_perturbations(self, alt_data):
        ctx, y = alt_data
        lam = 0.05
        fit = group_lasso(ctx, y, lam)
        base = mixed_objective(ctx, y, fit.beta, lam)
        rng = np.random.default_rng(0)
        for _ in range(30):
            w = fit.beta + 1e-3 * rng.standard_normal(ctx.d)
            assert mixed_objective(ctx, y, w, lam) >= base - 1e-12

    def test_blockwise_resolve_reproduces_fit(self, alt_data):
        # With one block frozen, re-solving the other must return it unchanged.
        ctx, y = alt_data
        lam = 0.05
        fit = group_lasso(ctx, y, lam)
        head, tail = fit.beta[: ctx.k], fit.beta[ctx.k:]

        tail_resolved = conditional_lasso(ctx, y, head, lam)
        np.testing.assert_allclose(tail_resolved, tail, atol=1e-6)

        head_ctx = build_model(ctx.Xk, ctx.k)  # group-only subproblem
        head_resolved = group_lasso(head_ctx, y - ctx.Xnuis @ tail, lam)
        np.testing.assert_allclose(head_resolved.beta, head, atol=1e-6)

    def test_warm_start_agrees_with_cold(self, alt_data):
        ctx, y = alt_data
        cold = group_lasso(ctx, y, 0.08)
        warm = group_lasso(ctx, y, 0.08, w0=cold.beta + 0.01)
        np.testing.assert_allclose(warm.beta, cold.beta, atol=1e-6)

    def test_active_set_indexes_nonzero_nuisance(self, alt_data):
        ctx, y = alt_data
        fit = group_lasso(ctx, y, 0.05)
        nz = np.flatnonzero(fit.beta[ctx.k:] != 0.0) + ctx.k
        np.testing.assert_array_equal(np.sort(fit.active_set), nz)

    def test_rejects_nonpositive_penalty(self, alt_data):
        ctx, y = alt_data
        with pytest.raises(ValueError):
            group_lasso(ctx, y, 0.0)


class TestConditionalLasso:
    def test_depends_on_y_only_through_nuisance_inner_products(self, alt_data):
        ctx, y = alt_data
        b = np.full(ctx.k, 0.2)
        base = conditional_lasso(ctx, y, b, 0.05)
        # shifting y inside col(X_{-1:k})^perp leaves X_{-1:k}^T y unchanged
        rng = np.random.default_rng(9)
        y_shift = y + ctx.V @ rng.standard_normal(ctx.V.shape[1])
        np.testing.assert_array_equal(conditional_lasso(ctx, y_shift, b, 0.05), base)

    def test_kkt_at_solution(self, alt_data):
        ctx, y = alt_data
        lam = 0.05
        b = np.full(ctx.k, 0.2)
        beta = conditional_lasso(ctx, y, b, lam)
        grad = ctx.Xnuis.T @ (ctx.Xnuis @ beta + ctx.Xk @ b - y) / ctx.n
        on = beta != 0.0
        np.testing.assert_allclose(grad[on], -lam * np.sign(beta[on]), atol=1e-6)
        assert np.all(np.abs(grad[~on]) <= lam + 1e-7)

    def test_empty_nuisance_block(self):
        ctx = make_ctx(n=20, d=3, k=3, seed=5)
        y = np.random.default_rng(0).standard_normal(20)
        out = conditional_lasso(ctx, y, np.zeros(3), 0.1)
        assert out.shape == (0,)


def test_lambda_grid_is_geometric():
    grid = lambda_grid(2.0)
    assert grid.size == 100
    assert grid[0] == pytest.approx(2.0)
    assert grid[-1] == pytest.approx(2.0e-3)
    ratios = grid[1:] / grid[:-1]
    np.testing.assert_allclose(ratios, ratios[0], rtol=1e-12)


def test_lambda_max_formula(alt_data):
    ctx, y = alt_data
    q = ctx.X.T @ y
    expected = max(np.linalg.norm(q[: ctx.k]) / ctx.n, np.max(np.abs(q[ctx.k:])) / ctx.n)
    assert lambda_max(ctx, y) == pytest.approx(expected, rel=1e-12)


class TestTune:
    def test_reproducible_under_integer_seed(self, alt_state):
        ctx, y, state = alt_state
        t1 = tune(ctx, state, 42, folds=5)
        t2 = tune(ctx, state, 42, folds=5)
        assert t1.lam == t2.lam
        np.testing.assert_array_equal(t1.b_star, t2.b_star)
        assert t1.tuning_seed == 42

    def test_depends_on_data_only_through_state(self, alt_state):
        # rebuilding y from (yhat, sigma_hat, u) must not move the choice
        ctx, y, state = alt_state
        y_rebuilt = state.yhat + state.sigma_hat * (ctx.V @ state.u)
        state2 = sufficient_state(ctx, y_rebuilt)
        t1 = tune(ctx, state, 7, folds=5)
        t2 = tune(ctx, state2, 7, folds=5)
        assert t2.lam == pytest.approx(t1.lam, rel=1e-9)
        np.testing.assert_allclose(t2.b_star, t1.b_star, atol=1e-8)

    def test_choice_shape_and_diagnostics(self, alt_state):
        ctx, y, state = alt_state
        t = tune(ctx, state, 0, folds=5)
        assert t.lam > 0
        assert t.b_star.shape == (ctx.k,)
        assert t.repeats == 1
        d = t.diagnostics
        assert d["grid"].size == 100
        assert d["cv_mean"].shape == d["cv_se"].shape == d["grid"].shape
        assert d["grid"][d["idx_min"]] == pytest.approx(t.lam)
        assert d["idx_1se"] <= d["idx_min"]  # larger penalty comes earlier
        assert isinstance(d["refit_converged"], (bool, np.bool_))

    def test_repeat_averaging(self, alt_state):
        ctx, y, state = alt_state
        t = tune(ctx, state, 3, folds=5, repeats=3)
        assert t.repeats == 3
        assert t.lam > 0

    def test_rejects_bad_arguments(self, alt_state):
        ctx, y, state = alt_state
        with pytest.raises(ValueError):
            tune(ctx, state, 0, folds=1)
        with pytest.raises(ValueError):
            tune(ctx, state, 0, repeats=0)


class TestInvocationAccounting:
    def test_tune_runs_folds_times_grid_plus_refit(self, alt_state):
        ctx, y, state = alt_state
        before = invocation_count()
        tune(ctx, state, 0, folds=10)
        assert invocation_count() - before == 10 * 100 + 1

    def test_repeats_scale_the_count(self, alt_state):
        ctx, y, state = alt_state
        before = invocation_count()
        tune(ctx, state, 0, folds=5, repeats=2)
        assert invocation_count() - before == 2 * (5 * 100 + 1)
