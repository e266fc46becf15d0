"""Grouped panel regression for extremes.

GEV and generalized Pareto regressions whose parameters depend on
covariates through link functions, with latent group memberships estimated
jointly with group coefficients by a hard-assignment EM algorithm, BIC
selection of the number of groups, period-clustered sandwich standard
errors, and a copula-coupled simulation harness.
"""

__version__ = "0.1.0"

from .distributions import (
    XI_EPS,
    GevParams,
    GpParams,
    gev_cdf,
    gev_logpdf,
    gev_quantile,
    gp_logpdf,
    return_level,
)
from .em import EmFit, EmOptions, EmTrace, assign_groups, canonicalize_labels, em_fit
from .errors import (
    ConfigError,
    DomainError,
    ExtremePanelError,
    FitError,
    NumericalRankError,
    ParseError,
    UnderdeterminedError,
)
from .gp_panel import (
    ExceedancePanel,
    em_fit_gp,
    extract_exceedances,
    select_groups_gp,
)
from .links import (
    GroupCoefficients,
    LinkKind,
    LinkSpec,
    apply_link,
    coefficient_count,
    design_matrix,
    eval_params,
    link_intercept,
)
from .panel import (
    FitResult,
    GroupAssignment,
    OptimOptions,
    PanelData,
    exceedance_rates,
    fit_qml_group,
    inverse_hessian_covariance,
    panel_loglik,
    sandwich_covariance,
    score_vector,
)
from .selection import SweepEntry, SweepResult, bic, mrae, rand_index, select_groups
from .simulate import (
    CopulaSpec,
    DgpConfig,
    DgpGroupParams,
    StudyReplication,
    StudySummary,
    dgp_link_spec,
    reference_config,
    run_study,
    sample_copula,
    simulate_covariates,
    simulate_panel,
    true_assignment,
)
from .io import (
    ModelConfig,
    Report,
    read_dgp_config,
    read_fit_report,
    read_model_config,
    read_panel_csv,
    write_dgp_config,
    write_fit_report,
    write_model_config,
    write_panel_csv,
)
