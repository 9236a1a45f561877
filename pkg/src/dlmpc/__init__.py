"""Distributed and localized model predictive control for networked systems.

The package synthesizes closed-loop response maps column-block by
column-block across a network of coupled linear subsystems.  Each subsystem
only ever talks to a bounded graph neighborhood, both during synthesis and
when the controller runs.
"""

from .admm import (
    AdmmState,
    ConvergenceError,
    DlmpcEngine,
    ExchangePacket,
    Phase,
    RowSolverKind,
    StalenessError,
    StepResult,
    packet_within_locality,
    row_profiles,
)
from .bench import (
    Case,
    RunReport,
    Scenario,
    ScenarioConfig,
    StepRecord,
    SweepRow,
    box_violation,
    build_chain_model,
    build_scenario,
    centralized_closed_loop,
    emit_report,
    emit_sweep,
    load_config,
    load_model_file,
    load_report,
    realized_cost,
    run_closed_loop,
    run_mpc_step,
    run_scaling_sweep,
    save_model_file,
)
from .explicit_row import (
    InfeasibleRowError,
    Region,
    RowProblem,
    RowSolution,
    kkt_residuals,
    sherman_morrison_apply,
    solve_row,
    solve_row_block,
)
from .qp import (
    CentralizedSolution,
    DenseQP,
    QpResult,
    QpStatus,
    QpStructureError,
    centralized_local_mpc,
    centralized_mpc,
    solve_qp,
)
from .sls import (
    FeasibilityOperator,
    ResponseColumn,
    assemble_feasibility_operator,
    controller_from_response,
    extract_control,
    full_response_from_controller,
    project_column,
    response_from_controller,
)
from .topology import (
    Graph,
    LocalityIndex,
    ModelValidationError,
    NetworkModel,
    SubsystemIndex,
    build_graph,
    build_locality_index,
    d_in_set,
    d_out_set,
)

__version__ = "0.1.0"

__all__ = [
    "AdmmState",
    "Case",
    "CentralizedSolution",
    "ConvergenceError",
    "DenseQP",
    "DlmpcEngine",
    "ExchangePacket",
    "FeasibilityOperator",
    "Graph",
    "InfeasibleRowError",
    "LocalityIndex",
    "ModelValidationError",
    "NetworkModel",
    "Phase",
    "QpResult",
    "QpStatus",
    "QpStructureError",
    "Region",
    "ResponseColumn",
    "RowProblem",
    "RowSolution",
    "RowSolverKind",
    "RunReport",
    "Scenario",
    "ScenarioConfig",
    "StalenessError",
    "StepRecord",
    "StepResult",
    "SweepRow",
    "assemble_feasibility_operator",
    "box_violation",
    "build_chain_model",
    "build_graph",
    "build_locality_index",
    "build_scenario",
    "centralized_closed_loop",
    "centralized_local_mpc",
    "centralized_mpc",
    "controller_from_response",
    "d_in_set",
    "d_out_set",
    "emit_report",
    "emit_sweep",
    "extract_control",
    "full_response_from_controller",
    "kkt_residuals",
    "load_config",
    "load_model_file",
    "load_report",
    "packet_within_locality",
    "project_column",
    "realized_cost",
    "response_from_controller",
    "row_profiles",
    "run_closed_loop",
    "run_mpc_step",
    "run_scaling_sweep",
    "save_model_file",
    "sherman_morrison_apply",
    "solve_qp",
    "solve_row",
    "solve_row_block",
    "__version__",
]
