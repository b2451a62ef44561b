"""Discrete-time closed-loop simulation of the pricing system.

Each period the operator announces a price, consumers (possibly seeing
compromised prices) realize their demand, and the scheduling error
between scheduled supply and realized demand drives the next price.
The engine records a full per-period trace and derives the volatility,
emergency, and convergence metrics used by the experiment commands.
"""

from __future__ import annotations

import csv
import datetime as _dt
from dataclasses import dataclass, field

import numpy as np

from .attacks import AttackSpec, apply_attack
from .controller import ControllerConfig, direct_feedback_update, stabilizing_update
from .errors import IngestionError, PriceDomainError
from .models import (
    BaselineTrace,
    CeoDemand,
    ConsumerPopulation,
    LinearSupply,
    calibrate_demand_scale,
    marginal_ratio,
)

#: |error| below this fraction of scheduled supply counts toward convergence
CONV_TOL = 1e-6
#: looser tolerance used when the baseline is a moving trace the price
#: can only track, never null out
TRACKING_CONV_TOL = 1e-2
#: consecutive small-error periods required to declare convergence
CONV_RUN = 5
#: consecutive bound-pinned periods that declare divergence
PIN_RUN = 10
#: |error| beyond this multiple of the reference supply declares divergence
BLOWUP_FACTOR = 10.0


@dataclass(frozen=True)
class SimConfig:
    """Everything one closed-loop run needs; identical configs give identical traces."""

    supplier: LinearSupply
    demand: CeoDemand | ConsumerPopulation
    controller: ControllerConfig
    attack: AttackSpec = field(default_factory=AttackSpec)
    baseline: BaselineTrace | float = 0.0
    lambda0: float = 20.0
    horizon: int = 100
    period_hours: float = 0.5
    seed: int = 0
    feeder_rating: float | None = None
    units: str = "MW"
    lambda_star: float | None = None

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        if not (self.controller.lambda_min <= self.lambda0 <= self.controller.lambda_max):
            raise ValueError("initial price must lie inside the price bounds")
        if isinstance(self.baseline, BaselineTrace) and len(self.baseline) < self.horizon:
            raise ValueError(
                f"baseline trace has {len(self.baseline)} periods, horizon needs "
                f"{self.horizon} (no wraparound)"
            )
        if self.feeder_rating is not None and not self.feeder_rating > 0.0:
            raise ValueError("feeder rating must be positive")
        if self.units not in ("MW", "kW"):
            raise ValueError("units must be 'MW' or 'kW'")

    @property
    def periods_per_day(self) -> int:
        return max(int(round(24.0 / self.period_hours)), 1)


TRACE_COLUMNS = (
    "k", "lambda", "lambda_attacked", "b", "demand_honest",
    "demand_compromised", "demand_total", "supply_scheduled", "error", "h",
)


@dataclass
class SimTrace:
    """Per-period record of one run plus run-level annotations."""

    lam: np.ndarray
    lam_attacked: np.ndarray  # shape (horizon, n_groups); empty second axis if no attack
    baseline: np.ndarray
    demand_honest: np.ndarray
    demand_compromised: np.ndarray
    demand_total: np.ndarray
    supply_scheduled: np.ndarray
    error: np.ndarray
    h: np.ndarray
    attack_start: int | None
    converged_at: int | None
    diverged_at: int | None
    config: SimConfig

    def __len__(self) -> int:
        return self.lam.size

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(TRACE_COLUMNS)
            for k in range(len(self)):
                attacked = ";".join(repr(float(v)) for v in self.lam_attacked[k])
                writer.writerow([
                    k, repr(float(self.lam[k])), attacked, repr(float(self.baseline[k])),
                    repr(float(self.demand_honest[k])), repr(float(self.demand_compromised[k])),
                    repr(float(self.demand_total[k])), repr(float(self.supply_scheduled[k])),
                    repr(float(self.error[k])), repr(float(self.h[k])),
                ])


def read_trace_csv(path) -> dict[str, np.ndarray]:
    """Re-ingest a trace CSV as named columns (attacked prices as 2-d array)."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or tuple(reader.fieldnames) != TRACE_COLUMNS:
            raise IngestionError(f"unexpected trace header {reader.fieldnames}")
        rows = list(reader)
    out: dict[str, np.ndarray] = {}
    for name in TRACE_COLUMNS:
        if name == "lambda_attacked":
            parsed = [
                [float(v) for v in row[name].split(";")] if row[name] else []
                for row in rows
            ]
            width = max((len(p) for p in parsed), default=0)
            arr = np.zeros((len(parsed), width))
            for i, p in enumerate(parsed):
                arr[i, : len(p)] = p
            out[name] = arr
        elif name == "k":
            out[name] = np.array([int(row[name]) for row in rows])
        else:
            out[name] = np.array([float(row[name]) for row in rows])
    return out


def _demand_split(demand, baseline_k, lam, attacked_prices, fractions):
    """(total, compromised, honest) demand for either demand representation."""
    if isinstance(demand, ConsumerPopulation):
        honest = demand.group_quantity(0, lam)
        comp = 0.0
        for g in range(1, demand.n_groups + 1):
            price = attacked_prices[g - 1] if g - 1 < len(attacked_prices) else lam
            comp += demand.group_quantity(g, price)
        return baseline_k + honest + comp, comp, honest
    # aggregate curve: compromised groups hold the configured demand fractions
    total_frac = sum(fractions)
    honest = (1.0 - total_frac) * demand.quantity(lam)
    comp = sum(
        frac * demand.quantity(price)
        for frac, price in zip(fractions, attacked_prices)
    )
    return baseline_k + honest + comp, comp, honest


def run(cfg: SimConfig) -> SimTrace:
    """Simulate the closed loop for the configured horizon.

    The attack launches at its configured period, or, when start_k is
    None, one period after the convergence detector fires (plus a full
    day of margin when the baseline is a trace). Deterministic for a
    fixed config, including the compromised-set draw.
    """
    rng = np.random.default_rng(cfg.seed)
    groups = cfg.attack.group_specs()
    demand = cfg.demand
    if isinstance(demand, ConsumerPopulation) and groups:
        if demand.n_groups == 0:
            demand = demand.with_compromised([g.fraction for g in groups], rng)
        elif demand.n_groups != len(groups):
            raise ValueError(
                f"population has {demand.n_groups} preassigned groups, attack has "
                f"{len(groups)}"
            )
    fractions = [g.fraction for g in groups]

    trace_based = isinstance(cfg.baseline, BaselineTrace)
    if trace_based:
        baseline = cfg.baseline.values[: cfg.horizon]
    else:
        baseline = np.full(cfg.horizon, float(cfg.baseline))
    conv_tol = TRACKING_CONV_TOL if trace_based else CONV_TOL

    s_ref = cfg.supplier.quantity(
        cfg.lambda_star if cfg.lambda_star is not None else cfg.lambda0
    )

    n = cfg.horizon
    n_g = len(groups)
    lam = np.empty(n)
    lam_att = np.empty((n, n_g))
    dem_h = np.empty(n)
    dem_c = np.empty(n)
    dem_t = np.empty(n)
    sched = np.empty(n)
    err = np.empty(n)
    h_arr = np.empty(n)

    start = cfg.attack.start_k
    converged_at = None
    diverged_at = None
    conv_run = 0
    pin_run = 0
    prices = [float(cfg.lambda0)]

    for k in range(n):
        lam_k = prices[k]
        try:
            attacked = apply_attack(cfg.attack, prices, k, start=start)
            total, comp, honest = _demand_split(
                demand, baseline[k], lam_k, attacked, fractions
            )
            s_k = cfg.supplier.quantity(lam_k)
        except PriceDomainError as exc:
            raise PriceDomainError(f"period {k}: {exc}") from exc
        e_k = s_k - total

        lam[k] = lam_k
        lam_att[k, :] = attacked
        dem_h[k] = honest
        dem_c[k] = comp
        dem_t[k] = total
        sched[k] = s_k
        err[k] = e_k
        if cfg.controller.mode == "fixed":
            h_point = cfg.controller.lambda_o
        elif cfg.controller.mode == "adaptive":
            h_point = prices[k - 1] if k >= 1 else prices[0]
        else:
            h_point = lam_k
        h_arr[k] = marginal_ratio(demand, cfg.supplier, h_point)

        # run-state detectors
        if abs(e_k) < conv_tol * s_k:
            conv_run += 1
            if conv_run >= CONV_RUN and converged_at is None:
                converged_at = k
                if start is None:
                    start = k + 1 + (cfg.periods_per_day if trace_based else 0)
        else:
            conv_run = 0
        pinned = lam_k in (cfg.controller.lambda_min, cfg.controller.lambda_max)
        pin_run = pin_run + 1 if pinned else 0
        if diverged_at is None and (pin_run >= PIN_RUN or abs(e_k) > BLOWUP_FACTOR * s_ref):
            diverged_at = k

        if cfg.controller.mode == "direct":
            lam_next = direct_feedback_update(cfg.supplier, total, cfg.controller)
        else:
            lam_next = stabilizing_update(
                cfg.controller, lam_k, e_k, demand, cfg.supplier
            )
        prices.append(lam_next)

    return SimTrace(
        lam=lam, lam_attacked=lam_att, baseline=baseline.copy(),
        demand_honest=dem_h, demand_compromised=dem_c, demand_total=dem_t,
        supply_scheduled=sched, error=err, h=h_arr,
        attack_start=start if groups else None,
        converged_at=converged_at, diverged_at=diverged_at,
        config=cfg,
    )


def volatility(trace: SimTrace, attack_start: int | None = None) -> float:
    """Population standard deviation of the scheduling error from a start period.

    The window defaults to everything after the attack launch; for a
    benign run it starts where the convergence detector fired, so a
    near-zero value indicates a run that settled and stayed settled.
    """
    if attack_start is None:
        attack_start = trace.attack_start
        if attack_start is None:
            attack_start = trace.converged_at or 0
    if attack_start >= len(trace):
        raise ValueError(f"empty volatility window (start={attack_start}, n={len(trace)})")
    return float(np.std(trace.error[attack_start:]))


def mean_marginal_ratio(
    trace: SimTrace, start: int | None = None, end: int | None = None
) -> float:
    """Arithmetic mean of the per-period slope ratio h over [start, end).

    Defaults to the window from attack launch to the end of the run.
    """
    if start is None:
        start = trace.attack_start or 0
    stop = len(trace) if end is None else end
    if start >= stop:
        raise ValueError("empty averaging window")
    return float(np.mean(trace.h[start:stop]))


def trend_ratio(trace: SimTrace, start: int | None = None) -> float:
    """Late/early volatility ratio over the post-launch window.

    The window is split in four; the ratio compares the last quarter's
    error deviation with the first quarter's. Values below 1 indicate a
    contracting oscillation, above 1 an expanding one. Returns inf when
    the early quarter is exactly quiet but the late one is not.
    """
    s = start if start is not None else (trace.attack_start or 0)
    post = trace.error[s:]
    quarter = len(post) // 4
    if quarter < 2:
        raise ValueError("window too short to estimate a trend")
    early = float(np.std(post[:quarter]))
    late = float(np.std(post[-quarter:]))
    if early == 0.0:
        return float("inf") if late > 0.0 else 1.0
    return late / early


def settled_at_end(trace: SimTrace, tol: float = 1e-3, run_len: int = CONV_RUN) -> bool:
    """True when the loop ends with run_len periods of near-zero error."""
    tail_err = np.abs(trace.error[-run_len:])
    tail_sup = trace.supply_scheduled[-run_len:]
    return bool(np.all(tail_err < tol * tail_sup))


def feeder_events(
    trace: SimTrace, rating: float, periods_per_day: int | None = None
) -> list[tuple[int, float, float]]:
    """Per-day (day, emergency_frequency, max_overload_pct) from total demand.

    A period is an emergency when demand exceeds the feeder rating;
    overload is the exceedance as a percentage of the rating. The
    frequency denominator is always periods_per_day, also for a partial
    final day.
    """
    if rating <= 0.0:
        raise ValueError("rating must be positive")
    ppd = periods_per_day if periods_per_day is not None else trace.config.periods_per_day
    if len(trace) < 1:
        raise ValueError("empty trace")
    overload = np.maximum(0.0, (trace.demand_total - rating) / rating) * 100.0
    out = []
    for day in range(int(np.ceil(len(trace) / ppd))):
        chunk = overload[day * ppd : (day + 1) * ppd]
        freq = float(np.count_nonzero(chunk > 0.0)) / ppd
        out.append((day, freq, float(chunk.max())))
    return out


def default_feeder_rating(benign_trace: SimTrace, headroom: float = 1.25) -> float:
    """Rating at a fixed headroom above the benign run's peak demand."""
    return headroom * float(benign_trace.demand_total.max())


def convergence_probability(
    supplier: LinearSupply,
    baseline: float,
    elasticity: float,
    lambda_star: float,
    controller: ControllerConfig | None = None,
    n_initial: int = 101,
    max_iter: int = 500,
) -> float:
    """Fraction of initial prices from which direct feedback converges.

    Calibrates the demand curve to clear at lambda_star, then iterates the
    persistence update from a uniform grid of initial prices across the
    allowed band, with out-of-band prices clamped. Convergence means the
    scheduling error stays within tolerance for a run of periods.
    """
    cfg = controller or ControllerConfig(mode="direct")
    demand = calibrate_demand_scale(supplier, baseline, lambda_star, elasticity)
    lam = np.linspace(cfg.lambda_min, cfg.lambda_max, n_initial)
    run_count = np.zeros(n_initial, dtype=int)
    converged = np.zeros(n_initial, dtype=bool)
    for _ in range(max_iter):
        total = baseline + demand.scale * lam**demand.elasticity
        lam_next = np.clip(
            (total - supplier.q) / supplier.p, cfg.lambda_min, cfg.lambda_max
        )
        supply_next = supplier.p * lam_next + supplier.q
        err = supply_next - (baseline + demand.scale * lam_next**demand.elasticity)
        small = np.abs(err) < CONV_TOL * supply_next
        run_count = np.where(small, run_count + 1, 0)
        converged |= run_count >= CONV_RUN
        lam = lam_next
    return float(np.mean(converged))


def stabilized_probability(
    supplier: LinearSupply,
    baseline: float,
    elasticity: float,
    lambda_star: float,
    eta: float = 0.5,
    controller: ControllerConfig | None = None,
    n_initial: int = 101,
    max_iter: int = 500,
) -> float:
    """Convergence probability with the proportional law substituted in."""
    base = controller or ControllerConfig(mode="direct")
    cfg = ControllerConfig(
        eta=eta, mode="adaptive",
        lambda_min=base.lambda_min, lambda_max=base.lambda_max,
    )
    demand = calibrate_demand_scale(supplier, baseline, lambda_star, elasticity)
    n_conv = 0
    for lam0 in np.linspace(cfg.lambda_min, cfg.lambda_max, n_initial):
        trace = run(SimConfig(
            supplier=supplier, demand=demand, controller=cfg,
            baseline=baseline, lambda0=float(lam0), horizon=max_iter,
            lambda_star=lambda_star,
        ))
        if trace.converged_at is not None:
            n_conv += 1
    return n_conv / n_initial


def load_baseline_trace(
    path,
    per_house_scale: float = 1.0,
    house_count: int = 1,
    expected_period_hours: float | None = None,
) -> BaselineTrace:
    """Read a timestamp,value CSV and scale it into a total baseline series.

    Each value is multiplied by per_house_scale * house_count. Timestamps
    must be ISO 8601 on a uniform grid; when expected_period_hours is
    given the grid spacing must match it. Malformed rows, gaps, and
    non-uniform spacing are ingestion errors carrying the row number.
    """
    if per_house_scale < 0.0 or house_count < 1:
        raise ValueError("per_house_scale must be >= 0 and house_count >= 1")
    stamps: list[_dt.datetime] = []
    raw: list[float] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [c.strip() for c in header[:2]] != ["timestamp", "value"]:
            raise IngestionError(f"expected header 'timestamp,value', got {header}")
        for i, row in enumerate(reader, start=2):
            if len(row) < 2:
                raise IngestionError("short row", row=i)
            try:
                stamps.append(_dt.datetime.fromisoformat(row[0].strip()))
                val = float(row[1])
            except ValueError as exc:
                raise IngestionError(f"unparseable row: {exc}", row=i) from exc
            if not np.isfinite(val) or val < 0.0:
                raise IngestionError(f"value {val} must be finite and >= 0", row=i)
            raw.append(val)
    if len(raw) < 2:
        raise IngestionError("trace needs at least two rows")
    deltas = [
        (b - a).total_seconds() for a, b in zip(stamps[:-1], stamps[1:])
    ]
    step = deltas[0]
    if step <= 0.0:
        raise IngestionError("timestamps must be strictly increasing", row=3)
    for i, d in enumerate(deltas, start=3):
        if abs(d - step) > 1e-6 * step + 1e-3:
            raise IngestionError(
                f"non-uniform spacing: {d} s vs {step} s", row=i
            )
    period_hours = step / 3600.0
    if expected_period_hours is not None and abs(period_hours - expected_period_hours) > 1e-9:
        raise IngestionError(
            f"trace spacing {period_hours} h does not match period {expected_period_hours} h"
        )
    per_house = np.asarray(raw) * per_house_scale
    return BaselineTrace(
        values=per_house * house_count,
        period_hours=period_hours,
        per_house_range=(float(per_house.min()), float(per_house.max())),
    )
