"""Controllers as estimators: ``fit`` learns from disturbance scenarios, ``solve`` plans."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from ..calibration import (calibration_sample_size, df_decision_count, rect_decision_count,
                           scenario_sample_size)
from ..qp import SolverSettings
from ..scenarios import ScenarioSet, estimate_moments, lift
from ..svc import SVCUncertaintySet
from .problem import (PolicySolution, ProblemTemplate, ddro_template, rect_template,
                      ssmpc_template)
from .spec import ControlSpec, ControllerKind, RectSet

__all__ = ["DRMPC", "SSMPC", "RMPC", "rect_fit", "make_controller"]


def _scenarios(X, spec: ControlSpec) -> ScenarioSet:
    if isinstance(X, ScenarioSet):
        if X.H != spec.H or X.n_w != spec.model.n_w:
            raise ValueError(f"scenarios have H={X.H}, n_w={X.n_w}; spec needs "
                             f"H={spec.H}, n_w={spec.model.n_w}")
        return X
    X = check_array(X, ensure_min_samples=1)
    return ScenarioSet(X, spec.H, spec.model.n_w)


def rect_fit(scenarios) -> RectSet:
    """Smallest axis-aligned box holding every scenario (coordinatewise min/max)."""
    W = scenarios.data if isinstance(scenarios, ScenarioSet) else np.atleast_2d(scenarios)
    if W.shape[0] == 0:
        raise ValueError("cannot fit a rectangle to an empty scenario set")
    return RectSet(W.min(axis=0), W.max(axis=0))


class _Controller(BaseEstimator):
    kind: ControllerKind

    def _templates(self):
        raise NotImplementedError

    def _settings(self):
        return self.settings if self.settings is not None else SolverSettings()

    def _moments(self, lifted):
        return self.spec.moments if self.spec.moments is not None else estimate_moments(lifted)

    def _lift(self, scenarios):
        """Lift with the centring of shared moments when ``spec.moments`` is set."""
        m = self.spec.moments
        pm = None if m is None or m.phi_mean is None else m.phi_mean
        return lift(scenarios, self.spec.saturation, pm)

    def solve(self, x0, v=None, t0: int = 0) -> PolicySolution:
        """Plan from state ``x0`` at wall-clock step ``t0``.

        ``v`` is the stacked known-input forecast for stages ``0..H-1``.
        """
        check_is_fitted(self, "template_")
        return self.template_.solve(x0, v, t0)

    def solve_backup(self, x0, v=None, t0: int = 0) -> PolicySolution:
        check_is_fitted(self, "template_")
        if getattr(self, "backup_template_", None) is None:
            self.backup_template_ = self._backup()
        return self.backup_template_.solve(x0, v, t0)

    def instantiate(self, x0, v=None, t0: int = 0, backup: bool = False):
        check_is_fitted(self, "template_")
        if backup:
            if getattr(self, "backup_template_", None) is None:
                self.backup_template_ = self._backup()
            return self.backup_template_.instantiate(x0, v, t0)
        return self.template_.instantiate(x0, v, t0)

    def predict(self, X, v=None, t0: int = 0):
        """First planned input for each state row of ``X``; NaN where infeasible."""
        X = check_array(X)
        out = np.full((X.shape[0], self.spec.model.n_u), np.nan)
        for i, x in enumerate(X):
            sol = self.solve(x, v, t0)
            if sol.optimal:
                out[i] = sol.decision.first_input
        return out


class DRMPC(_Controller):
    """Robust MPC over a calibrated SVC uncertainty set in the lifted space.

    Parameters
    ----------
    spec : ControlSpec
    nu : float or None
        SVC regularization; defaults to the guarantee's ``epsilon``.
    lambda_reg : float or None
        Sphering regularization passed to :func:`fit_wgik`.
    check_sample_size : bool
        Require at least :func:`calibration_sample_size` calibration rows.
    settings : SolverSettings or None
    form : {"compact", "pairs"}
        Robust-counterpart formulation, see :func:`ddro_template`.
    stagewise : bool
        Learn and calibrate one set per stage on the lifted prefix
        ``[phi_1..phi_t; w_1..w_t]`` instead of reusing the stage-``H`` set.
    """

    kind = ControllerKind.DRMPC

    def __init__(self, spec, nu=None, lambda_reg=None, check_sample_size=True, settings=None,
                 form="compact", stagewise=False):
        self.spec = spec
        self.stagewise = stagewise
        self.nu = nu
        self.lambda_reg = lambda_reg
        self.check_sample_size = check_sample_size
        self.settings = settings
        self.form = form

    def fit(self, W_train, W_calib):
        spec = self.spec
        train = _scenarios(W_train, spec)
        calib = _scenarios(W_calib, spec)
        g = spec.guarantee
        if self.check_sample_size and calib.N < calibration_sample_size(g):
            raise ValueError(f"DRMPC needs {calibration_sample_size(g)} calibration scenarios, "
                             f"got {calib.N}")
        lifted = self._lift(train)
        self.phi_mean_ = lifted.phi_mean
        self.moments_ = self._moments(lifted)
        nu = g.epsilon if self.nu is None else self.nu
        lifted_cal = lift(calib, spec.saturation, self.phi_mean_)
        H, n_w = spec.H, spec.model.n_w
        stages = range(1, H + 1) if self.stagewise else [H]
        self.stage_svcs_ = []
        for t in stages:
            k = t * n_w
            idx = np.r_[np.arange(k), H * n_w + np.arange(k)]
            est = SVCUncertaintySet(nu=nu, lambda_reg=self.lambda_reg)
            est.fit(lifted.data[:, idx], phi_mean=self.phi_mean_[:k])
            est.calibrate(lifted_cal.data[:, idx], g if self.check_sample_size else None)
            self.stage_svcs_.append(est)
        self.svc_ = self.stage_svcs_[-1]
        self.uncertainty_set_ = self.svc_.set_
        self.stage_sets_ = [e.set_ for e in self.stage_svcs_] if self.stagewise else None
        self.template_ = ddro_template(spec, self._sets(), self.moments_, self._settings(),
                                       form=self.form)
        self.backup_template_ = None
        self.n_train_, self.n_calib_ = train.N, calib.N
        return self

    def _backup(self) -> ProblemTemplate:
        return ddro_template(self.spec, self._sets(), self.moments_, self._settings(),
                             soften=True, form=self.form)

    def _sets(self):
        return self.stage_sets_ if self.stage_sets_ is not None else self.uncertainty_set_


class SSMPC(_Controller):
    """Scenario MPC: hard state constraints at every training scenario."""

    kind = ControllerKind.SSMPC

    def __init__(self, spec, check_sample_size=True, settings=None):
        self.spec = spec
        self.check_sample_size = check_sample_size
        self.settings = settings

    def required_scenarios(self) -> int:
        m = self.spec.model
        return scenario_sample_size(df_decision_count(self.spec.H, m.n_u, m.n_w),
                                    self.spec.guarantee)

    def fit(self, W, y=None):
        W = _scenarios(W, self.spec)
        if self.check_sample_size and W.N < self.required_scenarios():
            raise ValueError(f"SSMPC needs {self.required_scenarios()} scenarios, got {W.N}")
        self.lifted_ = self._lift(W)
        self.phi_mean_ = self.lifted_.phi_mean
        self.moments_ = self._moments(self.lifted_)
        self.template_ = ssmpc_template(self.spec, self.lifted_, self.moments_, self._settings())
        self.backup_template_ = None
        return self

    def _backup(self) -> ProblemTemplate:
        return ssmpc_template(self.spec, self.lifted_, self.moments_, self._settings(),
                              soften=True)


class RMPC(_Controller):
    """Robust MPC over the bounding box of the scenarios."""

    kind = ControllerKind.RMPC

    def __init__(self, spec, check_sample_size=True, settings=None):
        self.spec = spec
        self.check_sample_size = check_sample_size
        self.settings = settings

    def required_scenarios(self) -> int:
        return scenario_sample_size(rect_decision_count(self.spec.H, self.spec.model.n_w),
                                    self.spec.guarantee)

    def fit(self, W, y=None):
        W = _scenarios(W, self.spec)
        if self.check_sample_size and W.N < self.required_scenarios():
            raise ValueError(f"RMPC needs {self.required_scenarios()} scenarios, got {W.N}")
        lifted = self._lift(W)
        self.phi_mean_ = lifted.phi_mean
        self.moments_ = self._moments(lifted)
        self.rect_ = rect_fit(W)
        self.template_ = rect_template(self.spec, self.rect_, self.phi_mean_, self.moments_,
                                       self._settings())
        self.backup_template_ = None
        return self

    def _backup(self) -> ProblemTemplate:
        return rect_template(self.spec, self.rect_, self.phi_mean_, self.moments_,
                             self._settings(), soften=True)


def make_controller(kind, spec, **kw) -> _Controller:
    kind = ControllerKind(kind)
    cls = {ControllerKind.DRMPC: DRMPC, ControllerKind.SSMPC: SSMPC,
           ControllerKind.RMPC: RMPC}[kind]
    return cls(spec, **kw)
