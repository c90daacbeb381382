"""Stochastic integrals on both clocks and the transport between them.

Two identities are implemented as statements about finite left-point sums on
an aligned grid pair. Forward: integrating a causal strategy against the
time-changed path equals integrating its clock-composed profile against the
Brownian path, up to the clock image of the window. Backward: a market-time
integrand that is constant across every clock-jump image can be carried back
to physical time by composing with the clock. For grid-step integrands both
identities are exact regroupings of the same terms; the only residue is float
summation order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .errors import AdaptednessError, InvalidSpecError
from .paths import PathBundle
from .strategies import Strategy, probe_causality, repeat_to_market

__all__ = [
    "MarketIntegrand",
    "is_clock_adapted",
    "is_grid_step",
    "pushforward",
    "pullback",
    "ito_integral_M",
    "ito_integral_W",
    "stochastic_exponential",
    "verify_forward",
    "verify_backward",
    "probe_causality",
]


@dataclass(frozen=True)
class MarketIntegrand:
    """Per-interval integrand values on the market grid.

    ``clock_adapted`` records whether the values are constant across every
    clock-jump image; backward transport is only meaningful when they are.
    """

    values: NDArray[np.float64]
    clock_adapted: bool

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))


def is_clock_adapted(values: NDArray[np.float64], bundle: PathBundle) -> bool:
    """True iff the integrand is constant on each jump image interval."""
    grids = bundle.grids
    for i in np.nonzero(grids.idx_left < grids.idx_right)[0]:
        block = values[grids.idx_left[i] : grids.idx_right[i]]
        if block.size and np.any(block != block[0]):
            return False
    return True


def is_grid_step(values: NDArray[np.float64], bundle: PathBundle) -> bool:
    """True iff the integrand is constant on each physical-interval block.

    Block ``i`` spans the market intervals between the clock images of
    ``t_i`` and ``t_{i+1}``, jump image included. Grid-step integrands are
    the ones whose market-side sums regroup term by term into physical-side
    sums, making the transport identities exact to rounding; anything that
    moves inside a block carries a discretization residue instead. The tail
    beyond the terminal clock value never enters a window and is ignored.
    """
    idx = bundle.grids.idx_right
    active = values[: idx[-1]]
    expected = np.repeat(values[idx[:-1]], np.diff(idx))
    return bool(np.array_equal(active, expected))


def _physical_index(bundle: PathBundle, t: float) -> int:
    grid = bundle.grids.physical
    i = int(np.searchsorted(grid, t))
    if i >= grid.size or grid[i] != t:
        raise InvalidSpecError(f"t={t} is not a physical grid time")
    return i


def _market_index(bundle: PathBundle, s: float) -> int:
    grid = bundle.grids.market
    j = int(np.searchsorted(grid, s))
    if j >= grid.size or grid[j] != s:
        raise InvalidSpecError(f"s={s} is not a market grid time")
    return j


def _decisions(nu, bundle: PathBundle) -> NDArray[np.float64]:
    if isinstance(nu, Strategy):
        return nu.decisions(bundle.lam, bundle.grids, bundle.M)
    arr = np.asarray(nu, dtype=float)
    if arr.size != bundle.grids.n_steps:
        raise InvalidSpecError("decision array length does not match the physical grid")
    return arr


def pushforward(nu: Strategy, bundle: PathBundle) -> MarketIntegrand:
    """Clock-composed market-time profile of a causal strategy.

    Grid-step strategies spread block-constant over the market intervals
    between consecutive clock images, which keeps left-point sums exactly
    regroupable; deterministic time functions compose pointwise with the
    generalized inverse. Either way the result is constant on jump images,
    because the inverse is constant there.
    """
    values = nu.market_profile(bundle.lam, bundle.grids, bundle.M)
    return MarketIntegrand(values=values, clock_adapted=is_clock_adapted(values, bundle))


def pullback(
    nu_tilde: MarketIntegrand | NDArray[np.float64],
    bundle: PathBundle,
    require_adapted: bool = True,
) -> NDArray[np.float64]:
    """Physical per-interval decisions of a market integrand, via the clock.

    The decision over ``(t_i, t_{i+1}]`` is the integrand value just after
    ``Lambda(t_i)``; at a clock jump that is the value carried across the jump
    image, i.e. the left limit the backward identity pulls out. By default the
    integrand must be constant across jump images, otherwise the transported
    integral would not match and an :class:`AdaptednessError` is raised.

    Round trip with :func:`pushforward` returns the original decisions
    bit for bit.
    """
    values = nu_tilde.values if isinstance(nu_tilde, MarketIntegrand) else np.asarray(nu_tilde, float)
    if require_adapted and not is_clock_adapted(values, bundle):
        raise AdaptednessError(
            "integrand varies across a clock-jump image; backward transport "
            "requires it to be constant there"
        )
    return values[bundle.grids.idx_right[:-1]]


def ito_integral_M(nu, bundle: PathBundle, t_start: float = 0.0, t_end: float | None = None) -> NDArray[np.float64]:
    """Cumulative left-point sum of ``nu`` against ``M`` over ``[t_start, t_end]``.

    ``nu`` is a :class:`~marketclock.strategies.Strategy` or a per-interval
    decision array. The increment multiplying the decision at ``t_i`` spans
    ``(t_i, t_{i+1}]``, so a clock jump at a grid point enters with the
    decision made before it, the left-limit convention.
    """
    v = _decisions(nu, bundle)
    i0 = _physical_index(bundle, t_start)
    i1 = bundle.grids.n_steps if t_end is None else _physical_index(bundle, t_end)
    dM = np.diff(bundle.M[i0 : i1 + 1])
    return np.concatenate([[0.0], np.cumsum(v[i0:i1] * dM)])


def ito_integral_W(nu_tilde, bundle: PathBundle, s_start: float = 0.0, s_end: float | None = None) -> NDArray[np.float64]:
    """Cumulative left-point sum of a market integrand against ``W``."""
    values = nu_tilde.values if isinstance(nu_tilde, MarketIntegrand) else np.asarray(nu_tilde, float)
    if values.size != bundle.grids.market_steps:
        raise InvalidSpecError("integrand length does not match the market grid")
    j0 = _market_index(bundle, s_start)
    j1 = bundle.grids.market.size - 1 if s_end is None else _market_index(bundle, s_end)
    dW = np.diff(bundle.W[j0 : j1 + 1])
    return np.concatenate([[0.0], np.cumsum(values[j0:j1] * dW)])


def stochastic_exponential(
    drift_density: NDArray[np.float64],
    diffusion: NDArray[np.float64],
    W: NDArray[np.float64],
    market: NDArray[np.float64],
    j_start: int = 0,
    j_end: int | None = None,
) -> NDArray[np.float64]:
    """Exponential of a market-time integral, normalized to 1 at the window start.

    Computed as ``exp(sum(diffusion dW) + sum(drift_density ds) -
    0.5 sum(diffusion^2 ds))`` cumulatively over ``[j_start, j_end]``; strictly
    positive by construction.
    """
    j1 = market.size - 1 if j_end is None else j_end
    dW = np.diff(W[j_start : j1 + 1])
    ds = np.diff(market[j_start : j1 + 1])
    g = diffusion[j_start:j1]
    b = drift_density[j_start:j1]
    log_incr = g * dW + (b - 0.5 * g * g) * ds
    return np.exp(np.concatenate([[0.0], np.cumsum(log_incr)]))


def _record(identity: str, t: float, lhs: float, rhs: float, mode: str, path_id=None) -> dict:
    diff = abs(lhs - rhs)
    scale = max(abs(lhs), abs(rhs))
    return {
        "identity": identity,
        "path_id": path_id,
        "t": float(t),
        "lhs": float(lhs),
        "rhs": float(rhs),
        "abs_diff": float(diff),
        "rel_diff": float(diff / scale) if scale > 0.0 else 0.0,
        "mode": mode,
    }


def verify_forward(nu, bundle: PathBundle, t: float | None = None, path_id=None) -> dict:
    """Compare both sides of the forward identity at physical time ``t``.

    Left side: the integral of ``nu`` against ``M`` over ``[0, t]``. Right
    side: the integral of the clock-composed profile against ``W`` over
    ``[0, Lambda(t)]``, so a clock jump at ``t`` itself is included on both
    sides with the decision made before it. Returns a discrepancy record.
    """
    t1 = float(bundle.grids.physical[-1]) if t is None else float(t)
    i1 = _physical_index(bundle, t1)
    lhs = float(ito_integral_M(nu, bundle, 0.0, t1)[-1])
    profile = pushforward(nu, bundle) if isinstance(nu, Strategy) else MarketIntegrand(
        repeat_to_market(_decisions(nu, bundle), bundle.grids), True
    )
    s1 = float(bundle.grids.market[bundle.grids.idx_right[i1]])
    rhs = float(ito_integral_W(profile, bundle, 0.0, s1)[-1])
    mode = "exact" if is_grid_step(profile.values, bundle) else "approximate"
    return _record("forward", t1, lhs, rhs, mode, path_id)


def verify_backward(
    nu_tilde,
    bundle: PathBundle,
    t: float | None = None,
    demonstrate_failure: bool = False,
    path_id=None,
) -> dict:
    """Compare both sides of the backward identity at physical time ``t``.

    Requires the integrand to be constant across jump images; with
    ``demonstrate_failure=True`` that requirement is waived and the record
    shows the discrepancy such an integrand produces. The record's mode
    grades the comparison: ``exact`` when the integrand is grid-step and
    adapted, so the two sums are regroupings of the same terms;
    ``demonstrate_failure`` when the waiver was needed; ``approximate`` for
    adapted integrands that move inside blocks, where the gap is honest
    discretization error rather than a defect.
    """
    values = nu_tilde.values if isinstance(nu_tilde, MarketIntegrand) else np.asarray(nu_tilde, float)
    adapted = is_clock_adapted(values, bundle)
    if not adapted and not demonstrate_failure:
        raise AdaptednessError(
            "integrand varies across a clock-jump image; pass "
            "demonstrate_failure=True to measure the resulting discrepancy"
        )
    t1 = float(bundle.grids.physical[-1]) if t is None else float(t)
    i1 = _physical_index(bundle, t1)
    s1 = float(bundle.grids.market[bundle.grids.idx_right[i1]])
    lhs = float(ito_integral_W(values, bundle, 0.0, s1)[-1])
    decisions = pullback(values, bundle, require_adapted=False)
    rhs = float(ito_integral_M(decisions, bundle, 0.0, t1)[-1])
    if adapted and is_grid_step(values, bundle):
        mode = "exact"
    elif demonstrate_failure:
        mode = "demonstrate_failure"
    else:
        mode = "approximate"
    return _record("backward", t1, lhs, rhs, mode, path_id)
