"""Power-utility portfolio choice on a time-changed Brownian market.

The risky asset is ``S = S0 + M + A`` where ``M`` is the time-changed
Brownian path and ``A`` integrates the rate against the clock, so the rate is
a price of risk per unit of clock time. The optimal amount process is built
twice: once on the market clock, where the problem is classical, and once on
the physical clock from physical quantities only. On the aligned grid pair
the two constructions agree to rounding, because the log increments of the
exponential wealth regroup block by block under the clock.

Wealth appears in two conventions. The closed forms use exponential
compounding, whose terminal law given the clock is exactly lognormal, which
is what makes the conditional value formula exact and keeps wealth positive.
:func:`wealth` is the honest linear trading account; the two differ by a
per-step compounding error that vanishes with the grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .errors import DomainError, InvalidSpecError
from .integrate import (
    MarketIntegrand,
    _physical_index,
    is_clock_adapted,
    stochastic_exponential,
)
from .paths import PathBundle

__all__ = [
    "MarketScenario",
    "WealthPath",
    "power_utility",
    "physical_rate_decisions",
    "optimal_market_strategy",
    "optimal_physical_strategy",
    "wealth",
    "conditional_optimal_value",
    "conditional_value_variant",
    "quadratic_risk_budget",
]


@dataclass(frozen=True)
class MarketScenario:
    """Investor data: relative risk aversion ``p``, capital ``x``, start time ``t``.

    ``p`` may be any real except 0 and 1; ``p > 1`` penalizes ruin with
    unbounded disutility. The rate itself lives with the path bundle so the
    strategy and the market can never disagree about it.
    """

    p: float
    x: float
    t: float = 0.0

    def __post_init__(self):
        if self.p == 0.0 or self.p == 1.0:
            raise InvalidSpecError("risk aversion 0 and 1 fall outside the power family")
        if not self.x > 0.0:
            raise InvalidSpecError("initial capital must be positive")
        if self.t < 0.0:
            raise InvalidSpecError("start time must be nonnegative")


@dataclass(frozen=True)
class WealthPath:
    """Wealth values along one grid, starting at the decision time."""

    times: NDArray[np.float64]
    values: NDArray[np.float64]
    clock: str


def power_utility(wealth_value, p: float):
    """``v ** (1 - p) / (1 - p)``, with the boundary handled explicitly.

    Negative wealth is rejected; zero wealth is worth ``-inf`` when ``p > 1``
    and ``0`` when ``p < 1``.
    """
    if p == 0.0 or p == 1.0:
        raise InvalidSpecError("risk aversion 0 and 1 fall outside the power family")
    v = np.asarray(wealth_value, dtype=float)
    if np.any(v < 0.0):
        raise DomainError("power utility is undefined for negative wealth")
    with np.errstate(divide="ignore"):
        out = np.where(v > 0.0, v ** (1.0 - p) / (1.0 - p), -np.inf if p > 1.0 else 0.0)
    return float(out) if out.ndim == 0 else out


def physical_rate_decisions(bundle: PathBundle) -> NDArray[np.float64]:
    """Per-interval rate decisions on the physical grid, read off the bundle."""
    return bundle.rate_profile[bundle.grids.idx_right[:-1]]


def _window(bundle: PathBundle, t: float) -> tuple[int, int, int]:
    """Physical start index and the market index window ``[j0, j1]`` it clocks to."""
    i0 = _physical_index(bundle, t)
    j0 = int(bundle.grids.idx_right[i0])
    j1 = int(bundle.grids.idx_right[-1])
    return i0, j0, j1


def optimal_market_strategy(
    scenario: MarketScenario, bundle: PathBundle
) -> tuple[MarketIntegrand, WealthPath]:
    """Optimal dollar amount on the market clock and the wealth it finances.

    The optimal fraction of wealth is the clocked rate over ``p``; the amount
    is that fraction times the exponentially compounded wealth, supported on
    the market window between the clock values of the start time and the
    horizon. The amount moves with the Brownian path inside clock-jump
    images, so it is genuinely not constant there and the integrand is
    flagged accordingly; its physical counterpart is reached by pointwise
    composition with the clock, not by the backward identity.
    """
    i0, j0, j1 = _window(bundle, scenario.t)
    pi = bundle.rate_profile / scenario.p
    growth = stochastic_exponential(
        pi * bundle.rate_profile, pi, bundle.W, bundle.grids.market, j0, j1
    )
    values = np.zeros(bundle.grids.market_steps)
    values[j0:j1] = pi[j0:j1] * (scenario.x * growth[:-1])
    amount = MarketIntegrand(values=values, clock_adapted=is_clock_adapted(values, bundle))
    path = WealthPath(
        times=bundle.grids.market[j0 : j1 + 1],
        values=scenario.x * growth,
        clock="market",
    )
    return amount, path


def optimal_physical_strategy(
    scenario: MarketScenario, bundle: PathBundle, method: str = "direct"
) -> tuple[NDArray[np.float64], WealthPath]:
    """Optimal dollar amount on the physical clock, by either construction.

    ``direct`` assembles the closed form from physical objects only: rate
    decisions, increments of the time-changed path and of the rate integral.
    ``pullback`` composes the market amount with the clock, reading its value
    at each clock image. Both are measurable at the decision times, because
    the clock image of ``t_i`` is exactly where the visible history of the
    time-changed path ends. The two agree to rounding on the aligned grids.
    """
    i0, j0, j1 = _window(bundle, scenario.t)
    n = bundle.grids.n_steps
    p = scenario.p
    if method == "pullback":
        amount, market_path = optimal_market_strategy(scenario, bundle)
        idx = bundle.grids.idx_right
        values = np.zeros(n)
        values[i0:] = amount.values[idx[i0:n]]
        wealth_vals = market_path.values[idx[i0:] - j0]
        path = WealthPath(
            times=bundle.grids.physical[i0:], values=wealth_vals, clock="physical"
        )
        return values, path
    if method != "direct":
        raise InvalidSpecError(f"unknown construction {method!r}")
    theta = physical_rate_decisions(bundle)
    dM = np.diff(bundle.M)
    dA = np.diff(bundle.A)
    log_incr = (theta[i0:] / p) * dM[i0:] + ((2.0 * p - 1.0) / (2.0 * p * p)) * theta[i0:] * dA[i0:]
    growth = np.exp(np.concatenate([[0.0], np.cumsum(log_incr)]))
    values = np.zeros(n)
    values[i0:] = scenario.x * (theta[i0:] / p) * growth[:-1]
    path = WealthPath(
        times=bundle.grids.physical[i0:], values=scenario.x * growth, clock="physical"
    )
    return values, path


def wealth(
    amounts: NDArray[np.float64], bundle: PathBundle, x: float, t_start: float = 0.0
) -> WealthPath:
    """Linear self-financing account of a physical amount process.

    Each step adds the held amount times the asset increment. This is the
    honest trading account; nothing stops it from going negative, and the
    power utilities reject it when it does. The closed forms use exponential
    compounding instead, which this account approaches as the grid refines.
    """
    amounts = np.asarray(amounts, dtype=float)
    if amounts.size != bundle.grids.n_steps:
        raise InvalidSpecError("amount array length does not match the physical grid")
    i0 = _physical_index(bundle, t_start)
    dS = np.diff(bundle.S[i0:])
    values = np.concatenate([[x], x + np.cumsum(amounts[i0:] * dS)])
    return WealthPath(times=bundle.grids.physical[i0:], values=values, clock="physical")


def _risk_budget(bundle: PathBundle, t: float) -> float:
    _, j0, j1 = _window(bundle, t)
    ds = np.diff(bundle.grids.market)
    return float(np.sum(bundle.rate_profile[j0:j1] ** 2 * ds[j0:j1]))


def quadratic_risk_budget(bundle: PathBundle, t_start: float = 0.0) -> tuple[float, float]:
    """Squared rate integrated on each clock over the remaining horizon.

    Returns the market-clock sum and the physical-clock sum. The clocked rate
    is block-constant between clock images, so the two are the same integral
    regrouped and agree to rounding.
    """
    i0, _, _ = _window(bundle, t_start)
    theta = physical_rate_decisions(bundle)
    d_lam = np.diff(bundle.grids.clock_values)
    physical = float(np.sum(theta[i0:] ** 2 * d_lam[i0:]))
    return _risk_budget(bundle, t_start), physical


def conditional_optimal_value(scenario: MarketScenario, bundle: PathBundle) -> float:
    """Expected utility of the optimal strategy given this clock path.

    Terminal exponential wealth is lognormal given the clock, so the
    conditional expectation is closed-form: utility of the capital times
    ``exp(((1 - p) / (2 p)) * B)`` with ``B`` the quadratic risk budget of
    the remaining horizon. Exact for the discrete construction, not just in
    the limit.
    """
    b = _risk_budget(bundle, scenario.t)
    u0 = float(power_utility(scenario.x, scenario.p))
    return u0 * math.exp((1.0 - scenario.p) / (2.0 * scenario.p) * b)


def conditional_value_variant(scenario: MarketScenario, bundle: PathBundle) -> float:
    """Alternative closed form, kept for side-by-side comparison.

    Scales utility by ``x ** (1 - p) / (2 p)`` and exponentiates the full
    risk budget. Disagrees with :func:`conditional_optimal_value` in general;
    the comparison is reported rather than reconciled.
    """
    b = _risk_budget(bundle, scenario.t)
    return scenario.x ** (1.0 - scenario.p) / (2.0 * scenario.p) * math.exp(b)
