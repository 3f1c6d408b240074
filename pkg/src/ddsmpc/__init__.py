"""Data-driven robust stochastic MPC with support-vector-clustering uncertainty sets."""
from .calibration import (GuaranteeParams, calibrate, calibration_sample_size,
                          df_decision_count, empirical_coverage, rect_decision_count,
                          scenario_sample_size)
from .lti import LtiModel, build_prediction_matrices, simulate_step
from .qp import QuadraticProgram, QpStatus, SolverSettings, check_kkt, solve_lp, solve_qp
from .scenarios import (Ar1Params, ScenarioSet, SaturationKind, estimate_moments,
                        generate_ar1, lift)
from .svc import SVCUncertaintySet, SvcUncertaintySet, fit_wgik, train_svc

__version__ = "0.1.0"
