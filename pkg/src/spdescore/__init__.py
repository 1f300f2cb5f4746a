"""Spectral Galerkin Malliavin toolkit for linear SPDEs with additive noise.

The truncated model is ``du = A u dt + Q^{1/2} dW`` in a Dirichlet sine basis.
Everything Gaussian about its terminal law (Malliavin covariance, covering
fields, Skorokhod integrals, exact score) is computed in closed form and
checked against Monte Carlo and quadrature oracles.
"""
__version__ = "0.1.0"

from .errors import (
    AsymmetryError,
    DimensionError,
    HorizonError,
    InvalidParameterError,
    NotPSDError,
    OutOfRangeWarning,
    OutOfSupportWarning,
    StabilityWarning,
    TraceClassError,
)
from .spectral import (
    HilbertState,
    ModeSpectrum,
    TraceClassQ,
    hs_condition_value,
    make_dense_q,
    make_dirichlet_laplacian,
    make_power_law_q,
    semigroup_apply,
    synthesize_on_grid,
)
from .forward import (
    Ensemble,
    PathRecord,
    mild_solution,
    sample_ensemble,
    sample_exact_transition,
    simulate_em_path,
    stochastic_convolution,
)
from .malliavin import (
    MalliavinCov,
    covering_field,
    covering_property_check,
    malliavin_covariance,
    malliavin_derivative,
    pseudoinverse,
    skorokhod_integral,
)
from .score import (
    ScoreContext,
    bismut_consistency_demo,
    gaussian_logdensity_oracle,
    make_score_context,
    score_directional,
    score_full,
)
from .reverse import ReverseConfig, probability_flow_step, reverse_sde_step, run_reverse
from .verify import CheckReport, run_suite

__all__ = [
    "__version__",
    "AsymmetryError",
    "DimensionError",
    "HorizonError",
    "InvalidParameterError",
    "NotPSDError",
    "OutOfRangeWarning",
    "OutOfSupportWarning",
    "StabilityWarning",
    "TraceClassError",
    "HilbertState",
    "ModeSpectrum",
    "TraceClassQ",
    "hs_condition_value",
    "make_dense_q",
    "make_dirichlet_laplacian",
    "make_power_law_q",
    "semigroup_apply",
    "synthesize_on_grid",
    "Ensemble",
    "PathRecord",
    "mild_solution",
    "sample_ensemble",
    "sample_exact_transition",
    "simulate_em_path",
    "stochastic_convolution",
    "MalliavinCov",
    "covering_field",
    "covering_property_check",
    "malliavin_covariance",
    "malliavin_derivative",
    "pseudoinverse",
    "skorokhod_integral",
    "ScoreContext",
    "bismut_consistency_demo",
    "gaussian_logdensity_oracle",
    "make_score_context",
    "score_directional",
    "score_full",
    "ReverseConfig",
    "probability_flow_step",
    "reverse_sde_step",
    "run_reverse",
    "CheckReport",
    "run_suite",
]
