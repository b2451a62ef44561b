"""Supply and demand models for the pricing loop.

Demand is split into an exogenous baseline plus a price-responsive part.
The price-responsive part follows a constant-elasticity (power-law) curve,
either as one aggregate curve or as a population of per-consumer curves.
Supply is an affine function of price fitted from price/quantity data.

Units: a scenario works either at region scale (MW, $/MWh) or at feeder
scale (kW, $/MWh). All models are unit-agnostic as long as one scale is
used consistently.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import CalibrationError, FitError, PriceDomainError


def _check_price(lam: float) -> float:
    if not np.isfinite(lam) or lam <= 0.0:
        raise PriceDomainError(f"price must be positive and finite, got {lam!r}")
    return float(lam)


@dataclass(frozen=True)
class CeoDemand:
    """Constant-elasticity price-responsive demand: quantity = scale * price**elasticity.

    scale > 0 (MW or kW), elasticity in (-1, 0). The curve is strictly
    decreasing and positive for positive prices.
    """

    scale: float
    elasticity: float

    def __post_init__(self):
        if not (self.scale > 0.0 and np.isfinite(self.scale)):
            raise ValueError(f"demand scale must be positive, got {self.scale}")
        if not (-1.0 < self.elasticity < 0.0):
            raise ValueError(
                f"elasticity must lie in (-1, 0), got {self.elasticity}"
            )

    def quantity(self, lam: float) -> float:
        """Price-responsive demand at price lam."""
        return self.scale * _check_price(lam) ** self.elasticity

    def slope(self, lam: float) -> float:
        """d(quantity)/d(price); always negative."""
        return self.scale * self.elasticity * _check_price(lam) ** (self.elasticity - 1.0)


@dataclass(frozen=True)
class LinearSupply:
    """Affine scheduled-supply curve: quantity = p * price + q, with p, q > 0."""

    p: float
    q: float

    def __post_init__(self):
        if not (self.p > 0.0 and np.isfinite(self.p)):
            raise ValueError(f"supply slope must be positive, got {self.p}")
        if not (self.q > 0.0 and np.isfinite(self.q)):
            raise ValueError(f"supply intercept must be positive, got {self.q}")

    def quantity(self, lam: float) -> float:
        return self.p * _check_price(lam) + self.q

    def price_for(self, x: float) -> float:
        """Inverse of quantity(); requires x > q so the price is positive."""
        if x <= self.q:
            raise PriceDomainError(
                f"supply inverse undefined for quantity {x} <= intercept {self.q}"
            )
        return (x - self.q) / self.p

    def slope(self, lam: float | None = None) -> float:
        return self.p


def marginal_ratio(demand, supply, lam: float) -> float:
    """Magnitude of the demand/supply slope ratio at an operating price.

    This dimensionless ratio is the loop-gain driver of closed-loop
    stability: the steeper the price response of demand relative to
    supply, the harder the loop is to stabilize.
    """
    s_dot = supply.slope(lam)
    if s_dot == 0.0:
        raise ZeroDivisionError("supply slope is zero; ratio undefined")
    return abs(demand.slope(lam) / s_dot)


def calibrate_demand_scale(
    supply: LinearSupply, baseline: float, clearing_price: float, elasticity: float
) -> CeoDemand:
    """Build the CEO demand curve whose market clears exactly at clearing_price.

    Solves supply(lam*) = baseline + scale * lam***elasticity for scale.
    Raises CalibrationError when the baseline already exceeds supply at the
    clearing price (scale would be non-positive).
    """
    lam_star = _check_price(clearing_price)
    if baseline < 0.0:
        raise CalibrationError(f"baseline must be non-negative, got {baseline}")
    residual = supply.quantity(lam_star) - baseline
    if residual <= 0.0:
        raise CalibrationError(
            f"baseline {baseline} >= supply {supply.quantity(lam_star)} at price "
            f"{lam_star}; no positive demand scale exists"
        )
    return CeoDemand(scale=residual / lam_star**elasticity, elasticity=elasticity)


def fit_linear_supply(prices, quantities) -> LinearSupply:
    """Ordinary least-squares fit of the affine supply curve to (price, quantity) pairs."""
    lam = np.asarray(prices, dtype=float)
    x = np.asarray(quantities, dtype=float)
    if lam.shape != x.shape or lam.ndim != 1:
        raise FitError("prices and quantities must be 1-d arrays of equal length")
    if lam.size < 2 or np.ptp(lam) == 0.0:
        raise FitError("need at least two distinct prices to fit the supply curve")
    a = np.column_stack([lam, np.ones_like(lam)])
    (p, q), *_ = np.linalg.lstsq(a, x, rcond=None)
    return LinearSupply(p=float(p), q=float(q))


@dataclass(frozen=True)
class ConsumerPopulation:
    """A set of per-consumer CEO demand curves with a compromised-group label.

    group[i] == 0 marks an honest consumer; group[i] == g >= 1 assigns the
    consumer to attack group g (groups are disjoint by construction).
    baseline_scale apportions the per-house baseline among consumers and
    must be non-negative.
    """

    scale: np.ndarray
    elasticity: np.ndarray
    baseline_scale: np.ndarray = field(default=None)  # type: ignore[assignment]
    group: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        scale = np.asarray(self.scale, dtype=float)
        eps = np.asarray(self.elasticity, dtype=float)
        if scale.ndim != 1 or scale.shape != eps.shape or scale.size == 0:
            raise ValueError("scale and elasticity must be equal-length 1-d arrays")
        if np.any(scale <= 0.0) or not np.all(np.isfinite(scale)):
            raise ValueError("every consumer demand scale must be positive")
        if np.any(eps <= -1.0) or np.any(eps >= 0.0):
            raise ValueError("every consumer elasticity must lie in (-1, 0)")
        bscale = (
            np.ones_like(scale)
            if self.baseline_scale is None
            else np.asarray(self.baseline_scale, dtype=float)
        )
        if bscale.shape != scale.shape or np.any(bscale < 0.0):
            raise ValueError("baseline_scale must be non-negative, one per consumer")
        grp = (
            np.zeros(scale.size, dtype=int)
            if self.group is None
            else np.asarray(self.group, dtype=int)
        )
        if grp.shape != scale.shape or np.any(grp < 0):
            raise ValueError("group must be a non-negative int label per consumer")
        object.__setattr__(self, "scale", scale)
        object.__setattr__(self, "elasticity", eps)
        object.__setattr__(self, "baseline_scale", bscale)
        object.__setattr__(self, "group", grp)

    def __len__(self) -> int:
        return self.scale.size

    @property
    def n_groups(self) -> int:
        return int(self.group.max())

    def quantity(self, lam: float) -> float:
        """Total honest-price responsive demand (all consumers at the true price)."""
        _check_price(lam)
        return float(np.sum(self.scale * lam**self.elasticity))

    def slope(self, lam: float) -> float:
        """Total demand slope at the true price; what the operator's model sees."""
        _check_price(lam)
        return float(np.sum(self.scale * self.elasticity * lam ** (self.elasticity - 1.0)))

    def group_quantity(self, g: int, lam: float) -> float:
        _check_price(lam)
        mask = self.group == g
        return float(np.sum(self.scale[mask] * lam ** self.elasticity[mask]))

    def compromised_share(self, lam_attacked: float) -> float:
        """Fraction of price-responsive demand held by compromised consumers.

        Both numerator and denominator are evaluated at the attacked price,
        so for identical consumers the share equals |C'|/|C| exactly, and
        for heterogeneous populations it is nearly price-invariant.
        """
        _check_price(lam_attacked)
        total = self.quantity(lam_attacked)
        if total <= 0.0:
            raise ZeroDivisionError("population has no price-responsive demand")
        comp = float(
            np.sum(
                self.scale[self.group > 0]
                * lam_attacked ** self.elasticity[self.group > 0]
            )
        )
        return comp / total

    def with_compromised(self, fractions, rng: np.random.Generator) -> "ConsumerPopulation":
        """Assign disjoint random attack groups of sizes round(f_g * n).

        fractions is one value per group; their sum must not exceed 1.
        """
        fracs = np.atleast_1d(np.asarray(fractions, dtype=float))
        if np.any(fracs <= 0.0) or fracs.sum() > 1.0 + 1e-12:
            raise ValueError("group fractions must be positive with sum <= 1")
        n = len(self)
        order = rng.permutation(n)
        group = np.zeros(n, dtype=int)
        start = 0
        for g, f in enumerate(fracs, start=1):
            size = int(round(f * n))
            group[order[start : start + size]] = g
            start += size
        return ConsumerPopulation(self.scale, self.elasticity, self.baseline_scale, group)


def aggregate_demand(
    pop: ConsumerPopulation,
    baseline: float,
    lam: float,
    lam_attacked=None,
) -> tuple[float, float, float]:
    """Total demand with the compromised groups responding to attacked prices.

    Returns (total, compromised, honest) where total = baseline +
    compromised + honest. lam_attacked is None (no attack), a single
    price (group 1), or a sequence of per-group prices.
    """
    _check_price(lam)
    if lam_attacked is None:
        attacked = []
    elif np.isscalar(lam_attacked):
        attacked = [float(lam_attacked)]
    else:
        attacked = [float(v) for v in lam_attacked]
    honest = pop.group_quantity(0, lam)
    comp = 0.0
    for g in range(1, pop.n_groups + 1):
        price_g = attacked[g - 1] if g - 1 < len(attacked) else lam
        comp += pop.group_quantity(g, price_g)
    return baseline + honest + comp, comp, honest


@dataclass(frozen=True)
class BaselineTrace:
    """Uniformly sampled exogenous baseline demand, one total per pricing period."""

    values: np.ndarray
    period_hours: float
    per_house_range: tuple[float, float] | None = None

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 1 or vals.size == 0:
            raise ValueError("baseline trace must be a non-empty 1-d series")
        if np.any(vals < 0.0) or not np.all(np.isfinite(vals)):
            raise ValueError("baseline values must be finite and non-negative")
        if not (self.period_hours > 0.0):
            raise ValueError("period must be positive")
        object.__setattr__(self, "values", vals)

    def __len__(self) -> int:
        return self.values.size


def sample_population(
    n: int,
    rng: np.random.Generator,
    scale_mean: float = 7.0,
    scale_std: float = 3.5,
    scale_min: float = 0.5,
    elasticity_mean: float = -0.8,
    elasticity_std: float = 0.1,
    elasticity_bounds: tuple[float, float] = (-0.99, -0.01),
) -> ConsumerPopulation:
    """Draw a heterogeneous population from truncated normal distributions.

    Defaults target a per-house feeder study in kW. Truncation (by
    resampling) keeps every consumer inside the model's validity region.
    """
    if n < 1:
        raise ValueError("population size must be at least 1")

    def draw(mean, std, lo, hi):
        out = np.empty(n)
        todo = np.arange(n)
        while todo.size:
            cand = rng.normal(mean, std, size=todo.size)
            ok = (cand >= lo) & (cand <= hi)
            out[todo[ok]] = cand[ok]
            todo = todo[~ok]
        return out

    scale = draw(scale_mean, scale_std, scale_min, np.inf)
    eps = draw(elasticity_mean, elasticity_std, *elasticity_bounds)
    return ConsumerPopulation(scale=scale, elasticity=eps)


def population_from_csv(path) -> ConsumerPopulation:
    """Read a population from CSV columns D,epsilon,baseline_scale,compromised."""
    scale, eps, bscale, group = [], [], [], []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"D", "epsilon", "baseline_scale", "compromised"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise FitError(f"population CSV must have columns {sorted(required)}")
        for row in reader:
            scale.append(float(row["D"]))
            eps.append(float(row["epsilon"]))
            bscale.append(float(row["baseline_scale"]))
            group.append(int(row["compromised"]))
    return ConsumerPopulation(
        scale=np.array(scale),
        elasticity=np.array(eps),
        baseline_scale=np.array(bscale),
        group=np.array(group),
    )
