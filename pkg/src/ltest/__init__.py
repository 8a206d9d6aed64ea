"""Exact conditional tests for groups of coefficients in Gaussian linear models.

The package tests H_{1:k}: beta_{1:k} = 0 in y ~ N(X beta, sigma^2 I) by
conditioning on the null-sufficient statistic and comparing the observed
response to exchangeable co-sufficient copies.  It provides the classical
F-test, a group-LASSO Monte Carlo test, the L-test (an affine approximation of
the group-LASSO solution map that needs only one fit per dataset), an analytic
Monte-Carlo-free variant, oracle/PC/phi baselines, Holm and Benjamini-Hochberg
adjustments, and a simulation harness.
"""

from .affine import (
    AffinePiece,
    McPValue,
    affine_piece,
    f_inverse,
    glasso_mc_test,
    grad_f_inverse,
    l_statistic,
    l_test,
)
from .classic import TestOutcome, f_test, ols_subvector, oracle_test
from .exact import RecenteredLaw, density, mcfree_test, survival, survival_k1
from .model import (
    ComplementBasis,
    Design,
    ModelContext,
    SchurBlock,
    SufficientState,
    build_model,
    sample_conditional,
    sample_sphere,
    sample_sphere_batch,
    sufficient_state,
)
from .multitest import AdjustedResults, bh, holm
from .simulate import (
    PowerRecord,
    ScenarioConfig,
    VarianceDecomposition,
    block_orthogonalize,
    gen_beta,
    gen_design,
    gen_errors,
    gen_response,
    nonlinear_design,
    pc_test,
    phi_test,
    run_power_sweep,
    standardize_columns,
    tuning_variance_experiment,
)
from .solvers import GroupLassoFit, TuningChoice, conditional_lasso, group_lasso, tune

__version__ = "0.1.0"

__all__ = [
    "AdjustedResults",
    "AffinePiece",
    "ComplementBasis",
    "Design",
    "GroupLassoFit",
    "McPValue",
    "ModelContext",
    "PowerRecord",
    "RecenteredLaw",
    "ScenarioConfig",
    "SchurBlock",
    "SufficientState",
    "TestOutcome",
    "TuningChoice",
    "VarianceDecomposition",
    "affine_piece",
    "bh",
    "block_orthogonalize",
    "build_model",
    "conditional_lasso",
    "density",
    "f_inverse",
    "f_test",
    "gen_beta",
    "gen_design",
    "gen_errors",
    "gen_response",
    "glasso_mc_test",
    "grad_f_inverse",
    "group_lasso",
    "holm",
    "l_statistic",
    "l_test",
    "mcfree_test",
    "nonlinear_design",
    "ols_subvector",
    "oracle_test",
    "pc_test",
    "phi_test",
    "run_power_sweep",
    "sample_conditional",
    "sample_sphere",
    "sample_sphere_batch",
    "standardize_columns",
    "sufficient_state",
    "survival",
    "survival_k1",
    "tune",
    "tuning_variance_experiment",
]
