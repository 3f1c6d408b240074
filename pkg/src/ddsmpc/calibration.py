"""Sample-size rules and radius calibration for the (epsilon, beta) guarantee."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .svc import SvcUncertaintySet

__all__ = [
    "GuaranteeParams",
    "CalibrationResult",
    "calibration_sample_size",
    "binomial_tail",
    "scenario_sample_size",
    "df_decision_count",
    "rect_decision_count",
    "calibrate",
    "empirical_coverage",
]

MAX_SCENARIOS = 10_000_000


@dataclass(frozen=True)
class GuaranteeParams:
    epsilon: float = 0.05
    beta: float = 0.05

    def __post_init__(self):
        for name in ("epsilon", "beta"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name} must lie strictly inside (0, 1), got {v}")


def calibration_sample_size(g: GuaranteeParams) -> int:
    """``ceil(log beta / log(1 - epsilon))``."""
    r = math.log(g.beta) / math.log1p(-g.epsilon)
    n = math.ceil(r)
    # guard against ratios that land a hair above an integer through rounding
    if n - r > 1 - 1e-12 * max(1.0, r):
        n -= 1
    return max(int(n), 1)


def binomial_tail(N: int, d: int, epsilon: float) -> float:
    """``sum_{j<d} C(N,j) eps^j (1-eps)^(N-j)`` evaluated in log space."""
    if d <= 0:
        return 0.0
    if d > N:
        return 1.0
    j = np.arange(d)
    logc = gammaln(N + 1) - gammaln(j + 1) - gammaln(N - j + 1)
    logt = logc + j * math.log(epsilon) + (N - j) * math.log1p(-epsilon)
    m = logt.max()
    return float(math.exp(m) * np.exp(logt - m).sum())


def scenario_sample_size(d: int, g: GuaranteeParams) -> int:
    """Smallest ``N`` with ``binomial_tail(N, d, epsilon) <= beta``.

    The tail is nonincreasing in ``N`` for ``N >= d``, so an exponential
    bracket followed by bisection finds the threshold; a short linear pass
    then confirms minimality.
    """
    if d < 1:
        raise ValueError("d must be >= 1")
    eps, beta = g.epsilon, g.beta
    lo, hi = d - 1, max(d, 1)
    while binomial_tail(hi, d, eps) > beta:
        lo, hi = hi, 2 * hi
        if hi > 2 * MAX_SCENARIOS:
            raise ValueError(f"required scenario count exceeds {MAX_SCENARIOS}")
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if binomial_tail(mid, d, eps) <= beta:
            hi = mid
        else:
            lo = mid
    while hi > d and binomial_tail(hi - 1, d, eps) <= beta:
        hi -= 1
    if hi > MAX_SCENARIOS:
        raise ValueError(f"required scenario count {hi} exceeds {MAX_SCENARIOS}")
    return int(hi)


def df_decision_count(H: int, n_u: int, n_w: int) -> int:
    """Decision variables of a disturbance-feedback policy over ``H`` stages."""
    if H < 1:
        raise ValueError("H must be >= 1")
    return H * n_u + n_u * n_w * (H - 1) * H // 2


def rect_decision_count(H: int, n_w: int) -> int:
    if H < 1:
        raise ValueError("H must be >= 1")
    return 2 * H * n_w


@dataclass(frozen=True)
class CalibrationResult:
    theta_tilde: float
    n_used: int
    max_index: int
    uncertainty_set: SvcUncertaintySet


def calibrate(uset: SvcUncertaintySet, calib, g: GuaranteeParams | None = None) -> CalibrationResult:
    """Set the radius to the largest ``f`` over the calibration samples.

    When ``g`` is given the sample count must reach
    :func:`calibration_sample_size`.
    """
    X = np.atleast_2d(np.asarray(calib, dtype=float))
    if X.shape[1] != uset.d:
        raise ValueError(f"calibration rows have dimension {X.shape[1]}, set has {uset.d}")
    if g is not None:
        need = calibration_sample_size(g)
        if X.shape[0] < need:
            raise ValueError(
                f"calibration needs at least {need} samples for epsilon={g.epsilon}, "
                f"beta={g.beta}; got {X.shape[0]}"
            )
    if X.shape[0] < 1:
        raise ValueError("calibration set is empty")
    f = uset.f(X)
    k = int(np.argmax(f))  # first index on ties
    theta = float(f[k])
    out = uset.with_radius(theta)
    if not np.all(f <= out.radius):
        raise AssertionError("calibrated set does not contain its calibration data")
    return CalibrationResult(theta, X.shape[0], k, out)


def empirical_coverage(uset: SvcUncertaintySet, X) -> float:
    """Fraction of rows of ``X`` with ``f <= radius``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[0] == 0:
        raise ValueError("evaluation set is empty")
    return float(np.mean(uset.f(X) <= uset.radius))
