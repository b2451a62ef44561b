"""Analytical stability engine for the attacked pricing loop.

The closed loop linearized at an operating point has a real-coefficient
characteristic polynomial in z whose roots must all lie strictly inside
the unit circle for stability. This module builds those polynomials for
the scaling, delay, and scaled-delay attack families, decides stability
with the Jury table test (cross-checked by a companion-matrix root
oracle), traces stability-boundary curves eta_bar(h), and computes the
h -> infinity boundary limits, including the exact-rational sparse-table
reduction for the delay family.

Quantities: h is the demand/supply slope-ratio magnitude at the operating
point; eta the controller gain; rho the compromised demand fraction;
gamma the attack price-scale factor; mu the slope factor induced by gamma
(gamma**(elasticity-1) for CEO demand); tau the attack delay in periods.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import AnalysisError
from .ratpoly import FracPoly

STABLE = "stable"
UNSTABLE = "unstable"
MARGINAL = "marginal"

#: relative half-width of the band around zero inside which a Jury
#: comparison is declared marginal rather than decided
JURY_TOL = 1e-12


@dataclass(frozen=True)
class CharPoly:
    """Real characteristic polynomial, coefficients in descending powers of z."""

    coeffs: tuple[float, ...]
    provenance: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        cs = tuple(float(c) for c in self.coeffs)
        if len(cs) < 2:
            raise ValueError("characteristic polynomial must have degree >= 1")
        if not all(np.isfinite(cs)):
            raise ValueError("coefficients must be finite")
        if cs[0] == 0.0:
            raise ValueError("leading coefficient must be nonzero")
        object.__setattr__(self, "coeffs", cs)

    @property
    def degree(self) -> int:
        return len(self.coeffs) - 1


def _check_family(h=None, eta=None, rho=None, gamma=None, mu=None, tau=None):
    if h is not None and not h > 0.0:
        raise ValueError(f"h must be positive, got {h}")
    if eta is not None and not (0.0 < eta < 1.0):
        raise ValueError(f"eta must lie in (0, 1), got {eta}")
    if rho is not None and not (0.0 < rho <= 1.0):
        raise ValueError(f"rho must lie in (0, 1], got {rho}")
    if gamma is not None and not gamma > 0.0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    if mu is not None and not mu > 0.0:
        raise ValueError(f"mu must be positive, got {mu}")
    if tau is not None and (int(tau) != tau or tau < 1):
        raise ValueError(f"tau must be a positive integer, got {tau}")


def char_poly_scaling(h, eta, rho, gamma, mu) -> CharPoly:
    """Degree-1 characteristic polynomial of the loop under a scaling attack."""
    _check_family(h=h, eta=eta, rho=rho, gamma=gamma, mu=mu)
    lead = h + 1.0
    return CharPoly(
        (lead, 2.0 * eta * (1.0 + rho * gamma * mu * h + h - rho * h) - lead),
        provenance={"family": "scaling", "h": h, "eta": eta, "rho": rho,
                    "gamma": gamma, "mu": mu},
    )


def char_poly_delay(h, eta, rho, tau) -> CharPoly:
    """Degree tau+1 characteristic polynomial of the loop under a delay attack.

    Only three coefficients are nonzero: the leading pair and the constant
    term contributed by the replayed stale price.
    """
    _check_family(h=h, eta=eta, rho=rho, tau=tau)
    coeffs = [h + 1.0, 2.0 * eta + 2.0 * eta * (1.0 - rho) * h - h - 1.0]
    coeffs += [0.0] * (int(tau) - 1)
    coeffs.append(2.0 * eta * rho * h)
    return CharPoly(
        tuple(coeffs),
        provenance={"family": "delay", "h": h, "eta": eta, "rho": rho, "tau": int(tau)},
    )


def char_poly_scaled_delay(h, eta, rho, tau, gamma, mu) -> CharPoly:
    """Superimposed scale-and-delay attack: the constant term gains a gamma*mu factor."""
    _check_family(h=h, eta=eta, rho=rho, gamma=gamma, mu=mu, tau=tau)
    base = char_poly_delay(h, eta, rho, tau)
    coeffs = list(base.coeffs)
    coeffs[-1] *= gamma * mu
    return CharPoly(
        tuple(coeffs),
        provenance={"family": "scaled_delay", "h": h, "eta": eta, "rho": rho,
                    "tau": int(tau), "gamma": gamma, "mu": mu},
    )


def _banded_sign(margin: float, scale: float, tol: float) -> str:
    band = tol * max(scale, 1.0)
    if margin > band:
        return STABLE
    if margin < -band:
        return UNSTABLE
    return MARGINAL


def jury_verdict(poly: CharPoly, tol: float = JURY_TOL) -> str:
    """Jury table test: stable / unstable / marginal.

    Checks the endpoint conditions P(1) > 0 and (-1)^n P(-1) > 0, the
    coefficient condition |a_0| < a_n, then reduces the table row by row
    (each row rescaled by its largest entry, which leaves every comparison
    invariant and avoids overflow), requiring |first| > |last| down to the
    three-entry row. A comparison falling inside the tolerance band makes
    the verdict marginal: the polynomial has a root too close to the unit
    circle to call.
    """
    a = np.array(poly.coeffs, dtype=float)
    if a[0] < 0.0:
        a = -a
    n = len(a) - 1
    scale = float(np.abs(a).max())

    # (-1)^n * P(-1) = sum_i a_i * (-1)^i with descending coefficients
    signs = np.where(np.arange(n + 1) % 2 == 0, 1.0, -1.0)
    checks = [
        (float(a.sum()), scale),                      # P(1) > 0
        (float((signs * a).sum()), scale),            # (-1)^n P(-1) > 0
        (float(a[0] - abs(a[-1])), scale),            # |a_0| < a_n
    ]
    for margin, sc in checks:
        verdict = _banded_sign(margin, sc, tol)
        if verdict != STABLE:
            return verdict

    row = a[::-1].copy()  # ascending order for the table reduction
    while len(row) > 3:
        m = float(np.abs(row).max())
        if m == 0.0:
            return MARGINAL
        row = row / m
        row = row[0] * row[:-1] - row[-1] * row[:0:-1]
        verdict = _banded_sign(abs(row[0]) - abs(row[-1]), 1.0, tol)
        if verdict != STABLE:
            return verdict
    return STABLE


def jury_stable(poly: CharPoly, tol: float = JURY_TOL) -> bool:
    """True only for a clear stable verdict; marginal counts as not stable."""
    return jury_verdict(poly, tol) == STABLE


def roots_in_unit_circle(poly: CharPoly, tol: float = 0.0) -> tuple[bool, float]:
    """Numeric root oracle: (all roots strictly inside, max root magnitude).

    Uses balanced companion-matrix eigenvalues; intended for degrees up to
    a few dozen, which covers every attack family used here.
    """
    try:
        roots = np.roots(poly.coeffs)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - defensive
        raise AnalysisError(f"root finder failed on {poly.coeffs}: {exc}") from exc
    max_mag = float(np.abs(roots).max()) if roots.size else 0.0
    return max_mag < 1.0 - tol, max_mag


def scaling_eta_bar(h, rho, gamma, mu) -> float:
    """Stability boundary gain for the scaling family at slope ratio h.

    The loop is stable iff eta < min(1, eta_bar). Always positive; equal
    to 1 everywhere when gamma*mu = 1 (no effective attack).
    """
    _check_family(h=h, rho=rho, gamma=gamma, mu=mu)
    denom = h + 1.0 + rho * h * (gamma * mu - 1.0)
    if denom <= 0.0:
        raise ValueError(
            f"boundary denominator {denom} <= 0; parameters outside the model"
        )
    return (h + 1.0) / denom


def scaling_ros_limit(rho, gamma, mu) -> float:
    """Gain bound that keeps the scaling-attacked loop stable for every h.

    For gamma*mu <= 1 the whole gain range (0, 1) is safe; otherwise the
    bound is the h -> infinity limit of scaling_eta_bar.
    """
    _check_family(rho=rho, gamma=gamma, mu=mu)
    gm = gamma * mu
    if gm <= 1.0:
        return 1.0
    return 1.0 / (1.0 + rho * (gm - 1.0))


def scaling_boundary_h(eta, rho, gamma, mu) -> float:
    """Slope ratio h at which the scaling boundary crosses a given gain.

    Solves scaling_eta_bar(h) = eta in closed form. A crossing exists only
    when scaling_ros_limit < eta < 1; otherwise raises AnalysisError.
    """
    _check_family(eta=eta, rho=rho, gamma=gamma, mu=mu)
    denom = eta * rho * (gamma * mu - 1.0) - (1.0 - eta)
    if denom <= 0.0:
        raise AnalysisError(
            f"no boundary crossing: eta={eta} is below the h->inf limit "
            f"{scaling_ros_limit(rho, gamma, mu)}"
        )
    return (1.0 - eta) / denom


def _family_poly(family: str, h, eta, rho, tau, gamma, mu) -> CharPoly:
    if family == "delay":
        return char_poly_delay(h, eta, rho, tau)
    if family == "scaled_delay":
        return char_poly_scaled_delay(h, eta, rho, tau, gamma, mu)
    if family == "scaling":
        return char_poly_scaling(h, eta, rho, gamma, mu)
    raise ValueError(f"unknown family {family!r}")


@dataclass(frozen=True)
class StabilityBoundary:
    """Sampled boundary curve eta_bar(h) for one attack family."""

    family: str
    rho: float
    tau: int | None
    gamma: float | None
    mu: float | None
    samples: tuple[tuple[float, float], ...]
    limit: float | None = None
    #: h values where stability was not a single interval in eta, mapped to
    #: the stable intervals found; empty in every case observed so far
    anomalies: dict = field(default_factory=dict, compare=False)

    def eta_bar(self, h: float) -> float:
        for hv, ev in self.samples:
            if hv == h:
                return ev
        raise KeyError(f"h={h} not on the sampled grid")


def _eta_bar_at(make_poly, h, scan_points=200, tol=1e-5):
    """sup{eta : stable} at one h, with a single-crossing guard scan.

    Returns (eta_bar, intervals); intervals is None when the stable set is
    the expected single interval (0, eta_bar), otherwise the list of
    stable (lo, hi) intervals found on the scan grid.
    """
    lo_edge, hi_edge = 1e-9, 1.0 - 1e-9
    etas = np.linspace(lo_edge, hi_edge, scan_points)
    flags = [jury_stable(make_poly(h, e)) for e in etas]
    if all(flags):
        return 1.0, None
    # guard: stable prefix followed by unstable suffix
    first_bad = flags.index(False)
    if first_bad == 0:
        # no stable gain found on the grid at all
        if not any(flags):
            return 0.0, None
    if all(flags[:first_bad]) and not any(flags[first_bad:]):
        lo = etas[first_bad - 1] if first_bad > 0 else lo_edge
        hi = etas[first_bad]
        while hi - lo > tol:
            mid = 0.5 * (lo + hi)
            if jury_stable(make_poly(h, mid)):
                lo = mid
            else:
                hi = mid
        return 0.5 * (lo + hi), None
    # non-monotone stability in eta: report stable intervals instead
    intervals = []
    start = None
    for e, f in zip(etas, flags):
        if f and start is None:
            start = e
        elif not f and start is not None:
            intervals.append((float(start), float(e)))
            start = None
    if start is not None:
        intervals.append((float(start), float(etas[-1])))
    return max(hi for _, hi in intervals), intervals


def boundary_curve(
    family: str,
    rho: float,
    h_grid,
    tau: int | None = None,
    gamma: float | None = None,
    mu: float | None = None,
    scan_points: int = 200,
    tol: float = 1e-5,
) -> StabilityBoundary:
    """Trace eta_bar(h) over a grid of slope ratios for one attack family.

    Each grid point is resolved by a stability scan over eta (validating
    that the stable set is a single interval) followed by bisection to the
    requested tolerance. Marginal Jury verdicts count as unstable, so the
    reported boundary is conservative.
    """
    h_arr = np.asarray(h_grid, dtype=float)
    if h_arr.ndim != 1 or h_arr.size == 0 or np.any(h_arr <= 0.0):
        raise ValueError("h_grid must be a non-empty 1-d array of positive values")
    if np.any(np.diff(h_arr) <= 0.0):
        raise ValueError("h_grid must be strictly ascending")

    def make_poly(h, eta):
        return _family_poly(family, h, eta, rho, tau, gamma, mu)

    samples = []
    anomalies = {}
    for h in h_arr:
        eta_bar, intervals = _eta_bar_at(make_poly, h, scan_points, tol)
        samples.append((float(h), float(eta_bar)))
        if intervals is not None:
            anomalies[float(h)] = intervals

    limit = None
    if family == "delay":
        limit = delay_ros_limit(rho, tau)
    elif family == "scaling":
        limit = scaling_ros_limit(rho, gamma, mu)
    return StabilityBoundary(
        family=family, rho=rho, tau=tau, gamma=gamma, mu=mu,
        samples=tuple(samples), limit=limit, anomalies=anomalies,
    )


def critical_h(
    family: str,
    eta: float,
    rho: float,
    tau: int | None = None,
    gamma: float | None = None,
    mu: float | None = None,
    h_lo: float = 1e-3,
    h_hi: float = 1e3,
    tol: float = 1e-6,
) -> float:
    """Largest h keeping the loop stable at a fixed gain, by bisection on h.

    Requires stability at h_lo and instability at h_hi (boundary curves of
    these families are non-increasing in h, so the crossing is unique).
    """

    def stable(h):
        return jury_stable(_family_poly(family, h, eta, rho, tau, gamma, mu))

    if not stable(h_lo):
        raise AnalysisError(f"already unstable at h_lo={h_lo}")
    if stable(h_hi):
        raise AnalysisError(f"still stable at h_hi={h_hi}; no crossing in range")
    lo, hi = h_lo, h_hi
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if stable(mid):
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# --- delay-family boundary limit (h -> infinity), exact arithmetic ---------
#
# Normalizing the delay characteristic polynomial by h and letting
# h -> infinity leaves a polynomial whose Jury table rows keep the sparse
# shape [A, B, 0, ..., 0, C]. One reduction maps (A, B, C) to
# (A**2 - C**2, A*B, -B*C), and the stability conditions are exactly
# |A| > |C| for every row down to three entries. The reduction and the
# sign tests are carried out in exact rational arithmetic so that roots
# of the row conditions near 0 or 1 are not lost.


def _scale_row(a: FracPoly, b: FracPoly, c: FracPoly):
    """Divide a whole row by one positive rational so comparisons survive."""
    coeffs = [x for p in (a, b, c) for x in p.coeffs if x != 0]
    if not coeffs:
        return a, b, c
    from math import gcd

    num = 0
    den = 1
    for x in coeffs:
        num = gcd(num, abs(x.numerator))
        den = den * x.denominator // gcd(den, x.denominator)
    factor = Fraction(den, num)
    scale = FracPoly([factor])
    return a * scale, b * scale, c * scale


def _limit_rows(rho: Fraction, tau: int) -> list[tuple[FracPoly, FracPoly, FracPoly]]:
    """Symbolic sparse-table rows (A, B, C) as exact polynomials in eta.

    Rows after the first are rescaled by a common positive factor per
    row, which keeps every |A| > |C| comparison intact while containing
    coefficient growth.
    """
    a = FracPoly([1])
    b = FracPoly([-1, 2 * (1 - rho)])  # 2*(1-rho)*eta - 1
    c = FracPoly([0, 2 * rho])         # 2*rho*eta
    rows = [(a, b, c)]
    for _ in range(1, tau):
        if b.is_zero() or c.is_zero():
            raise AnalysisError("degenerate table reduction: a row entry vanished")
        a, b, c = _scale_row(a * a - c * c, a * b, -(b * c))
        rows.append((a, b, c))
    return rows


def _limit_stable(eta: Fraction, rho: Fraction, tau: int) -> bool:
    """Exact stability predicate of the h -> infinity delay-family limit."""
    a = Fraction(1)
    b = 2 * (1 - rho) * eta - 1
    c = 2 * rho * eta
    if abs(c) >= abs(a):  # |constant| < leading
        return False
    for _ in range(1, tau):
        a, b, c = a * a - c * c, a * b, -(b * c)
        if abs(a) <= abs(c):
            return False
    return True


def delay_ros_limit(rho: float, tau: int, scan_points: int = 10_000) -> float:
    """Gain bound keeping the delay-attacked loop stable for every h.

    For rho <= 0.5 the loop is stable for every gain and every delay, so
    the bound is 1. For tau = 1 the bound is 1/(2*rho). Larger delays are
    resolved by the exact sparse-table reduction: the bound is the first
    gain in (0, 1) violating any row condition, located by an exact sign
    scan and rational bisection to 1e-10. Returns 1.0 when no violation
    exists in (0, 1).
    """
    _check_family(rho=rho, tau=tau)
    tau = int(tau)
    if rho <= 0.5:
        return 1.0
    if tau == 1:
        return 1.0 / (2.0 * rho)
    rho_fr = Fraction(rho)
    first_bad = None
    for j in range(1, scan_points + 1):
        q = Fraction(j, scan_points)
        if not _limit_stable(q, rho_fr, tau):
            first_bad = j
            break
    if first_bad is None:
        return 1.0
    lo = Fraction(first_bad - 1, scan_points)
    hi = Fraction(first_bad, scan_points)
    while hi - lo > Fraction(1, 10**10):
        mid = (lo + hi) / 2
        if _limit_stable(mid, rho_fr, tau):
            lo = mid
        else:
            hi = mid
    return float((lo + hi) / 2)


def ros_nesting_check(rho: float, tau: int, h_grid, tol: float = 1e-5) -> bool:
    """Check that the boundary for delay tau+1 sits below the one for tau."""
    cur = boundary_curve("delay", rho, h_grid, tau=tau)
    nxt = boundary_curve("delay", rho, h_grid, tau=tau + 1)
    return all(
        e_next <= e_cur + tol
        for (_, e_cur), (_, e_next) in zip(cur.samples, nxt.samples)
    )
