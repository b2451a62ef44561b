"""Price-setting laws for the market operator.

The stabilizing law adjusts the price proportionally to the previous
period's generation scheduling error, scaled by the local supply/demand
slopes at an operating point (fixed, or adapted to the latest price).
The direct-feedback law simply inverts the supply curve at the previous
demand; it is the unstable baseline the proportional law replaces.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ControllerError, PriceDomainError

MODES = ("fixed", "adaptive", "direct")


def clamp(lam: float, lo: float, hi: float) -> float:
    return min(max(lam, lo), hi)


@dataclass(frozen=True)
class ControllerConfig:
    """Gain, operating-point mode, price bounds, and demand-slope error.

    eta is the proportional gain in (0, 1); 0.5 gives one-step (deadbeat)
    convergence of the linearized loop, smaller values trade speed for
    attack resilience. w_slope_error is the relative error applied to the
    operator's demand-slope estimate (0 = perfect knowledge).
    """

    eta: float = 0.5
    mode: str = "adaptive"
    lambda_o: float | None = None
    lambda_min: float = 1.0
    lambda_max: float = 200.0
    w_slope_error: float = 0.0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.mode != "direct" and not (0.0 < self.eta < 1.0):
            raise ValueError(f"eta must lie in (0, 1), got {self.eta}")
        if not (0.0 < self.lambda_min < self.lambda_max):
            raise ValueError(
                f"need 0 < lambda_min < lambda_max, got [{self.lambda_min}, {self.lambda_max}]"
            )
        if self.mode == "fixed":
            if self.lambda_o is None:
                raise ValueError("fixed mode requires an operating price lambda_o")
            if not (self.lambda_min <= self.lambda_o <= self.lambda_max):
                raise ValueError("lambda_o must lie inside the price bounds")
        if not self.w_slope_error < 1.0:
            raise ValueError("w_slope_error must be < 1 (estimate keeps its sign)")


def stabilizing_update(
    cfg: ControllerConfig, lam_prev: float, error_prev: float, demand, supply
) -> float:
    """Next price from the proportional error-feedback law, clamped to bounds.

    The operating point is cfg.lambda_o in fixed mode and the previous
    price in adaptive mode. The demand slope is degraded by the configured
    relative estimation error; the operator never sees the attack, so the
    slopes always come from the honest models.
    """
    lam_o = cfg.lambda_o if cfg.mode == "fixed" else lam_prev
    w_est = (1.0 - cfg.w_slope_error) * demand.slope(lam_o)
    denom = supply.slope(lam_o) - w_est
    if denom <= 0.0:
        raise ControllerError(
            f"gain denominator {denom} <= 0 at operating price {lam_o}; "
            "slope estimate is corrupted"
        )
    step = 2.0 * cfg.eta * error_prev / denom
    return clamp(lam_prev - step, cfg.lambda_min, cfg.lambda_max)


def direct_feedback_update(supply, demand_prev: float, cfg: ControllerConfig) -> float:
    """Persistence baseline: price that schedules supply equal to last demand.

    When the previous demand is below the supply intercept the inverse has
    no positive price; the update then reports the price floor.
    """
    try:
        lam = supply.price_for(demand_prev)
    except PriceDomainError:
        return cfg.lambda_min
    return clamp(lam, cfg.lambda_min, cfg.lambda_max)


def estimation_error_bound(eta: float, supply_slope: float, demand_slope: float):
    """Largest tolerable relative demand-slope error, (exact, conservative).

    The exact bound is (1 - eta) * (1 - supply_slope / demand_slope); since
    demand_slope < 0 the parenthesis exceeds one, so (1 - eta) is a simpler
    sufficient bound. Returns (exact_bound, conservative_bound).
    """
    if not (0.0 < eta < 1.0):
        raise ValueError(f"eta must lie in (0, 1), got {eta}")
    if supply_slope <= 0.0 or demand_slope >= 0.0:
        raise ValueError("need supply_slope > 0 and demand_slope < 0")
    exact = (1.0 - eta) * (1.0 - supply_slope / demand_slope)
    return exact, 1.0 - eta


def simulate_linearized(
    eta: float,
    supply_slope: float,
    demand_slope: float,
    lam0: float,
    lam_star: float,
    n: int,
    w_slope_error: float = 0.0,
):
    """Price path of the linearized fixed-operating-point loop, unclamped.

    The error feeding the controller is (s_dot - w_dot) * (lam_k - lam*),
    so the recursion is a pure geometric mode at the closed-loop pole.
    """
    import numpy as np

    pole = closed_loop_pole(eta, supply_slope, demand_slope, w_slope_error)
    lam = np.empty(n + 1)
    lam[0] = lam0
    for k in range(n):
        lam[k + 1] = lam_star + pole * (lam[k] - lam_star)
    return lam


def closed_loop_pole(
    eta: float, supply_slope: float, demand_slope: float, w_slope_error: float = 0.0
) -> float:
    """Pole of the linearized fixed-operating-point loop.

    With a perfect slope estimate the pole is 1 - 2*eta; a slope estimate
    degraded by w_slope_error moves it to
    1 - 2*eta*(s_dot - w_dot)/(s_dot - (1 - w_slope_error)*w_dot).
    |pole| < 1 means the price error decays geometrically.
    """
    denom = supply_slope - (1.0 - w_slope_error) * demand_slope
    if denom <= 0.0:
        raise ControllerError("corrupted slope estimate: non-positive denominator")
    return 1.0 - 2.0 * eta * (supply_slope - demand_slope) / denom
