"""Built-in benchmark plants: a two-mass-spring system and a building thermal model."""
from __future__ import annotations

import numpy as np

from ..calibration import GuaranteeParams
from ..control.spec import ControlSpec
from ..lti import LtiModel
from ..scenarios import SaturationKind

__all__ = [
    "TWO_MASS_X0",
    "two_mass_spring_model",
    "two_mass_spring_spec",
    "building_model",
    "building_comfort_profile",
    "building_spec",
]

TWO_MASS_X0 = np.array([0.2, 1.0, -0.1, 0.1])


def two_mass_spring_model(K: float = 1.0, m1: float = 0.5, m2: float = 2.0) -> LtiModel:
    """Sampled at 0.1 s; matrices exactly as published (spring terms not rescaled)."""
    A = np.array([
        [1.0, 0.0, 0.1, 0.0],
        [0.0, 1.0, 0.0, 0.1],
        [-K / m1, 0.1 * K / m1, 1.0, 0.0],
        [K / m2, -0.1 * K / m2, 0.0, 1.0],
    ])
    B_u = np.array([[0.0], [0.0], [0.1 / m1], [0.0]])
    B_w = np.array([[1.0], [0.5], [0.3], [0.4]])
    return LtiModel(A, B_u, B_w)


def two_mass_spring_spec(H: int = 5, guarantee: GuaranteeParams | None = None,
                         velocity_bound: float = 0.38, input_bound: float = 1.6,
                         model: LtiModel | None = None) -> ControlSpec:
    model = model or two_mass_spring_model()
    F = np.array([[0, 0, 1, 0], [0, 0, -1, 0], [0, 0, 0, 1], [0, 0, 0, -1]], dtype=float)
    return ControlSpec(
        model=model,
        H=H,
        Q=5.0 * np.eye(4),
        R=np.eye(1),
        Q_f=np.eye(4),
        F=F,
        f=np.full(4, velocity_bound),
        G=np.array([[1.0], [-1.0]]),
        g=np.array([input_bound, input_bound]),
        saturation=SaturationKind.TANH,
        guarantee=guarantee or GuaranteeParams(0.05, 0.05),
    )


def building_model() -> LtiModel:
    """Hourly room/wall/roof/floor temperature model with heating input."""
    A = np.array([
        [0.0167, 0.0048, 0.1245, 0.1409],
        [0.0005, 0.0002, 0.0039, 0.0044],
        [0.0253, 0.0073, 0.3321, 0.0617],
        [0.0244, 0.0070, 0.0526, 0.3456],
    ])
    B_u = np.array([[0.0986], [0.0029], [0.0288], [0.0275]])
    B_w = np.array([[0.2536], [0.0070], [0.4450], [0.4477]])
    B_v = np.array([
        [0.2536, 0.4596],
        [0.0070, 0.9840],
        [0.4450, 0.1287],
        [0.4477, 0.1225],
    ])
    return LtiModel(A, B_u, B_w, B_v)


def building_comfort_profile(occupied: float = 21.0, unoccupied: float = 15.0,
                             start_hour: int = 7, end_hour: int = 18) -> np.ndarray:
    """Minimum room temperature per hour of day as a ``(24, 1)`` profile of ``-x1 <= -T``."""
    hours = np.arange(24)
    T = np.where((hours >= start_hour) & (hours < end_hour), occupied, unoccupied)
    return -T[:, None].astype(float)


def building_spec(H: int = 5, guarantee: GuaranteeParams | None = None,
                  u_max: float = 80.0) -> ControlSpec:
    model = building_model()
    prof = building_comfort_profile()
    return ControlSpec(
        model=model,
        H=H,
        Q=np.zeros((4, 4)),
        R=np.eye(1),
        Q_f=np.zeros((4, 4)),
        F=np.array([[-1.0, 0.0, 0.0, 0.0]]),
        f=prof[0],
        G=np.array([[1.0], [-1.0]]),
        g=np.array([u_max, 0.0]),
        saturation=SaturationKind.TANH,
        guarantee=guarantee or GuaranteeParams(0.05, 0.10),
        f_profile=prof,
    )
