"""Search-aware cold-start recommendation engine.

Estimates a consumer's dynamic search/convert/exit policy from
clickstream data, solves the seller's finite-horizon recommendation
problem by backward induction over a discretized history state, and
evaluates counterfactual recommendation regimes with bootstrap
uncertainty.
"""

from .catalog import (
    NormalizationSpec,
    VehicleCatalog,
    VehicleRecord,
    compute_margins,
    load_catalog,
    normalize,
    synthetic_catalog,
)
from .clickstream import (
    Event,
    Session,
    SyntheticLogitPolicy,
    SyntheticParams,
    extract_status_quo_matrix,
    first_click_distribution,
    generate_synthetic,
    load_clickstream,
    recode_to_clusters,
    save_clickstream,
    sessions_to_training,
)
from .clustering import ClusterModel, kmeans, silhouette, sweep, ward_init
from .counterfactual import (
    SCENARIO_NAMES,
    BootstrapResult,
    ScenarioInputs,
    ScenarioResult,
    bootstrap,
    optimize_matrix,
    run_scenario,
    run_suite,
)
from .dpsolver import (
    MatrixRecPolicy,
    ScenarioModifiers,
    StateSpace,
    TableRecPolicy,
    ValueTable,
    bellman_solve,
    enumerate_actions,
    evaluate_policy,
    instantaneous_profit,
    solve_masked,
    summarize_policy,
)
from .policy import (
    ConsumerPolicy,
    FitReport,
    LogitPolicy,
    TrainingSet,
    TreeParams,
    evaluate,
    featurize,
    fit_multinomial_logit,
    fit_tree_ensemble,
    select_model,
)
from .states import EMPTY, RecState, SimplexLattice, transition, update_freq
from .worlds import World, default_world, diagonal_matrix, logit_truth

__version__ = "0.1.0"
