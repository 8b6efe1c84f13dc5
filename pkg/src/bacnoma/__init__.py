"""Minimum-total-power resource allocation for BackCom-assisted hybrid-NOMA uplinks."""

from .bb import BBConfig, FeasibilityOutcome, Rectangle, bb_solve, rect_bounds, sca_feasibility, sra_feasibility
from .channel import ScenarioConfig, sample_instance
from .experiments import ExperimentSpec, fig_mode, run_experiment, write_csv
from .kernel import (
    ConcaveProgram,
    LogConstraint,
    LogSumProblem,
    NumericalFailure,
    barrier_solve,
    phase_one,
    waterfill_min_sum,
)
from .model import (
    PowerProfile,
    SolveReport,
    SolveStatus,
    SystemInstance,
    is_feasible,
    oma_profile,
    profile_from_reflection,
    rate_in_slot,
    to_reflection,
    total_power,
    total_rate,
)
from .sca import linearize_interference, sca_solve
from .twouser import (
    CandidateKind,
    CertificationConflict,
    TwoUserCandidate,
    TwoUserInstance,
    certify_kkt,
    classify_solution,
    enumerate_candidates,
    grid_oracle_two_user,
    solve_conventional_two_user,
    solve_two_user,
)

__version__ = "0.1.0"
