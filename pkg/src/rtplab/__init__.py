"""rtplab: a desk-scale lab for closed-loop real-time pricing under price-integrity attacks."""

from .attacks import AttackGroup, AttackSpec, apply_attack, mu_ceo
from .controller import (
    ControllerConfig,
    closed_loop_pole,
    direct_feedback_update,
    estimation_error_bound,
    stabilizing_update,
)
from .models import (
    BaselineTrace,
    CeoDemand,
    ConsumerPopulation,
    LinearSupply,
    aggregate_demand,
    calibrate_demand_scale,
    fit_linear_supply,
    marginal_ratio,
    sample_population,
)
from .sim import (
    SimConfig,
    SimTrace,
    convergence_probability,
    feeder_events,
    load_baseline_trace,
    mean_marginal_ratio,
    run,
    volatility,
)
from .stability import (
    CharPoly,
    StabilityBoundary,
    boundary_curve,
    char_poly_delay,
    char_poly_scaled_delay,
    char_poly_scaling,
    critical_h,
    delay_ros_limit,
    jury_stable,
    jury_verdict,
    ros_nesting_check,
    roots_in_unit_circle,
    scaling_boundary_h,
    scaling_eta_bar,
    scaling_ros_limit,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
