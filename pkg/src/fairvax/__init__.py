"""Fairness-aware vaccination strategies on temporal mobility networks.

Simulates epidemic spread over bipartite community/venue visit networks,
selects communities to vaccinate with budgeted greedy influence
maximization (optionally under demographic-fairness group budgets), and
evaluates infection reduction and fairness outcomes.
"""

__version__ = "0.1.0"

from .network import (  # noqa: F401
    Cbg,
    MobilityNetwork,
    NetworkValidationError,
    Poi,
    SyntheticSpec,
    VisitMatrix,
    assign_income_groups,
    assign_risk_weights,
    generate_synthetic,
    load_network,
    save_network,
)
from .disease import (  # noqa: F401
    CALIBRATED_PARAMS,
    DiseaseParams,
    SeirState,
    SimulationResult,
    init_state,
    run,
    run_many,
    run_mean_field,
    sigma,
    sigma_a,
    step,
)
from .selection import (  # noqa: F401
    CoverageInfluence,
    GroupBudgets,
    SelectionResult,
    SimulationInfluence,
    StrategySpec,
    celf_greedy,
    charge_selection,
    compute_group_budgets,
    select,
    select_im,
    select_oldest,
    select_random,
)
from .metrics import (  # noqa: F401
    FairnessReport,
    GroupDistribution,
    fairness_report,
    kl_divergence,
    mobility_reduction,
    outcome_distribution,
    pct_decrease,
    reference_distribution,
    risk_weighted_eir,
    treatment_distribution,
)
from .experiment import (  # noqa: F401
    ConfigError,
    ExperimentConfig,
    ExperimentReport,
    evaluate_selection,
    export_plot_data,
    load_config,
    run_experiment,
)
