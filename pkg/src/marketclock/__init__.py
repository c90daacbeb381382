"""Brownian motion on a stochastic clock: simulation, transport, portfolios.

The model has two time axes. Physical time carries the observable price
path; market time carries a standard Brownian motion; a strictly increasing
right-continuous clock maps one into the other. This package samples such
clocks, builds aligned grids where the clock images are exact grid points,
transports integrands and integrals between the axes with pathwise-exact
discrete identities, constructs the closed-form power-utility trading
strategy on either axis, and wraps the whole thing in seeded, reproducible
Monte Carlo checks with a config-driven command line.
"""

from .config import (
    RunConfig,
    build_scenario,
    build_setup,
    parse_config,
    serialize_config,
)
from .errors import (
    AdaptednessError,
    CausalityError,
    ConfigError,
    DomainError,
    GridAlignmentError,
    InadmissibleError,
    InvalidSpecError,
)
from .harness import (
    CheckVerdict,
    ConvergenceReport,
    IdentityReport,
    ModelSetup,
    ObjectiveEstimate,
    ScanReport,
    ScanRow,
    TowerReport,
    ValueCheck,
    conditional_value_check,
    convergence_sweep,
    estimate_objective,
    make_bundle,
    moment_checks,
    optimality_scan,
    path_rng,
    run_ensemble,
    sample_time_change,
    tower_check,
    verify_identities,
)
from .integrate import (
    MarketIntegrand,
    is_clock_adapted,
    is_grid_step,
    ito_integral_M,
    ito_integral_W,
    pullback,
    pushforward,
    stochastic_exponential,
    verify_backward,
    verify_forward,
)
from .paths import GridPair, PathBundle, assemble_bundle, build_grid_pair, sample_brownian, time_changed_path
from .portfolio import (
    MarketScenario,
    WealthPath,
    conditional_optimal_value,
    conditional_value_variant,
    optimal_market_strategy,
    optimal_physical_strategy,
    physical_rate_decisions,
    power_utility,
    quadratic_risk_budget,
    wealth,
)
from .strategies import Strategy, probe_causality, repeat_to_market
from .timechange import (
    DeterministicPiecewiseSpec,
    IntegratedDiffusionSpec,
    LinearSpec,
    SubordinatorDriftSpec,
    TimeChangePath,
    ValidationReport,
    build_deterministic,
    build_linear,
    from_drift_and_jumps,
    generalized_inverse,
    sample_integrated_diffusion,
    sample_subordinator_drift,
    validate,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # clocks
    "TimeChangePath",
    "DeterministicPiecewiseSpec",
    "LinearSpec",
    "SubordinatorDriftSpec",
    "IntegratedDiffusionSpec",
    "build_deterministic",
    "build_linear",
    "from_drift_and_jumps",
    "sample_subordinator_drift",
    "sample_integrated_diffusion",
    "generalized_inverse",
    "validate",
    "ValidationReport",
    # paths and grids
    "GridPair",
    "PathBundle",
    "build_grid_pair",
    "sample_brownian",
    "time_changed_path",
    "assemble_bundle",
    # strategies
    "Strategy",
    "repeat_to_market",
    "probe_causality",
    # transport and integration
    "MarketIntegrand",
    "is_clock_adapted",
    "is_grid_step",
    "pushforward",
    "pullback",
    "ito_integral_M",
    "ito_integral_W",
    "stochastic_exponential",
    "verify_forward",
    "verify_backward",
    # portfolio
    "MarketScenario",
    "WealthPath",
    "power_utility",
    "physical_rate_decisions",
    "optimal_market_strategy",
    "optimal_physical_strategy",
    "wealth",
    "quadratic_risk_budget",
    "conditional_optimal_value",
    "conditional_value_variant",
    # harness
    "ModelSetup",
    "path_rng",
    "sample_time_change",
    "make_bundle",
    "run_ensemble",
    "ObjectiveEstimate",
    "estimate_objective",
    "ValueCheck",
    "conditional_value_check",
    "ScanRow",
    "ScanReport",
    "optimality_scan",
    "TowerReport",
    "tower_check",
    "IdentityReport",
    "verify_identities",
    "CheckVerdict",
    "moment_checks",
    "ConvergenceReport",
    "convergence_sweep",
    # config
    "RunConfig",
    "parse_config",
    "serialize_config",
    "build_setup",
    "build_scenario",
    # errors
    "InvalidSpecError",
    "DomainError",
    "GridAlignmentError",
    "CausalityError",
    "AdaptednessError",
    "InadmissibleError",
    "ConfigError",
]
