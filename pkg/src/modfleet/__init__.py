"""Queueing-network toolkit for station-based mobility-on-demand fleets."""

from .scenario import (
    FleetConfig,
    JacksonNetwork,
    RebalanceParams,
    Scenario,
    SplitParams,
    build_network,
    build_system_networks,
    generate_scenario,
    load_scenario,
    save_scenario,
    split_demand,
    validate_scenario,
)
from .jackson import (
    AnalysisResult,
    MvaResult,
    analyze,
    ctmc_oracle,
    mva,
    mva_availability,
    normalization_constants,
    product_form_distribution,
    relative_throughput,
    relative_utilization,
    throughput_and_availability,
)
from .minflow import FlowProblem, FlowResult, solve_min_cost_flow
from .rebalance_lp import (
    MrpSolution,
    PassengerMetrics,
    availability_sweep,
    passenger_availability,
    solve_mrp,
)
from .rebalance_nlp import (
    MmrpConfig,
    MmrpResult,
    pareto_sweep,
    solve_mmrp,
    verify_point,
)
from .sizing import (
    SizingConfig,
    SizingResult,
    cost_curves,
    min_fleet_for_threshold,
    optimal_ratios,
    size_sweep,
)
from .assignment import (
    AssignmentProblem,
    AssignmentSolution,
    StationState,
    build_problem,
    solve_assignment,
)
from .simulator import (
    SimConfig,
    SimMetrics,
    rebalance_drivers_step,
    run_loss_sim,
    run_queueing_sim,
)
from .ingest import (
    IngestResult,
    TripRecord,
    cluster_stations,
    estimate_parameters,
    ingest,
    parse_trips,
)

__version__ = "0.1.0"
