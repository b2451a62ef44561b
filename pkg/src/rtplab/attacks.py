"""Integrity-attack transforms on the advertised price stream.

An attack rewrites the price seen by a subset of consumers: a scaling
attack multiplies the current price, a delay attack replays a stale
price from tau periods earlier, and the two can be superimposed.
A composite attack runs several such transforms on disjoint consumer
groups at once. Transforms are pure functions of the true-price history,
so the compromised price at period k never depends on future prices.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class AttackGroup:
    """One group of a composite attack: a fraction of consumers and a transform."""

    fraction: float
    kind: str
    gamma: float = 1.0
    tau: int = 1

    def __post_init__(self):
        if self.kind not in ("scaling", "delay", "scaled_delay"):
            raise ValueError(f"unknown attack kind {self.kind!r}")
        if not (0.0 < self.fraction <= 1.0):
            raise ValueError(f"group fraction must lie in (0, 1], got {self.fraction}")
        if self.gamma <= 0.0:
            raise ValueError(f"scale factor must be positive, got {self.gamma}")
        if self.kind != "scaling" and (int(self.tau) != self.tau or self.tau < 1):
            raise ValueError(f"delay must be a positive integer, got {self.tau}")


@dataclass(frozen=True)
class AttackSpec:
    """Attack description: kind, compromised fraction, parameters, launch period.

    start_k is the first attacked period; None means "resolve at run time"
    (the simulator launches after the loop has converged).
    """

    kind: str = "none"
    rho: float = 1.0
    gamma: float = 1.0
    tau: int = 1
    start_k: int | None = 0
    groups: tuple[AttackGroup, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if self.kind not in ("none", "scaling", "delay", "scaled_delay", "composite"):
            raise ValueError(f"unknown attack kind {self.kind!r}")
        if self.kind == "composite":
            if not self.groups:
                raise ValueError("composite attack needs at least one group")
            total = sum(g.fraction for g in self.groups)
            if total > 1.0 + 1e-12:
                raise ValueError(f"composite group fractions sum to {total} > 1")
        elif self.kind != "none":
            if not (0.0 < self.rho <= 1.0):
                raise ValueError(f"rho must lie in (0, 1], got {self.rho}")
            if self.gamma <= 0.0:
                raise ValueError(f"gamma must be positive, got {self.gamma}")
            if self.kind != "scaling" and (int(self.tau) != self.tau or self.tau < 1):
                raise ValueError(f"tau must be a positive integer, got {self.tau}")
        if self.start_k is not None and self.start_k < 0:
            raise ValueError("start_k must be non-negative")

    def group_specs(self) -> tuple[AttackGroup, ...]:
        """The attack as a list of disjoint groups (empty when kind is none)."""
        if self.kind == "none":
            return ()
        if self.kind == "composite":
            return self.groups
        return (AttackGroup(self.rho, self.kind, self.gamma, int(self.tau)),)


def _transform(group: AttackGroup, prices, k: int) -> float:
    if group.kind == "scaling":
        return group.gamma * prices[k]
    # delay and scaled_delay replay a genuinely received price: the lagged
    # meter buffer serves true history, and the initial price before that.
    j = max(k - group.tau, 0)
    stale = prices[j]
    return stale if group.kind == "delay" else group.gamma * stale

def apply_attack(spec: AttackSpec, prices, k: int, start: int | None = None) -> list[float]:
    """Compromised price per attack group at period k.

    prices must cover indices 0..k of the true price stream. Before the
    launch period every group sees the true price. Returns one price per
    group; empty list when the spec is "none".
    """
    if k < 0 or k >= len(prices):
        raise IndexError(f"period {k} outside the provided price history")
    groups = spec.group_specs()
    launch = spec.start_k if start is None else start
    if not groups:
        return []
    if launch is None or k < launch:
        return [float(prices[k])] * len(groups)
    return [float(_transform(g, prices, k)) for g in groups]


def mu_ceo(gamma: float, elasticity: float) -> float:
    """Demand-slope scaling factor of a price-scaling attack on a CEO curve.

    The CEO slope satisfies slope(gamma * lam) = slope(lam) * gamma**(elasticity - 1)
    for every price, so the factor is independent of the operating point.
    """
    if gamma <= 0.0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    if not (-1.0 < elasticity < 0.0):
        raise ValueError(f"elasticity must lie in (-1, 0), got {elasticity}")
    return float(gamma ** (elasticity - 1.0))


def choose_compromised(n: int, rho: float, rng: np.random.Generator) -> np.ndarray:
    """Seeded uniform choice of round(rho * n) compromised consumer indices."""
    if not (0.0 < rho <= 1.0):
        raise ValueError(f"rho must lie in (0, 1], got {rho}")
    size = int(round(rho * n))
    return rng.choice(n, size=size, replace=False)
