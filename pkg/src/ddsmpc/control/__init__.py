"""Finite-horizon controllers over saturated disturbance-feedback policies."""
from .estimators import DRMPC, RMPC, SSMPC, make_controller, rect_fit
from .objective import ObjectiveForm, QuadraticCost, build_objective
from .problem import (BuiltProblem, PolicySolution, ProblemTemplate, backup_template,
                      ddro_template, rect_template, solve_policy, ssmpc_template)
from .spec import ControlSpec, ControllerKind, DecisionLayout, PolicyDecision, RectSet
