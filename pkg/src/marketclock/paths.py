"""Sampling Brownian motion and running it through a market clock.

Everything downstream leans on one construction: the *aligned grid pair*. The
market grid contains the clock image ``Lambda(t_i)`` and left limit
``Lambda(t_i-)`` of every physical grid point, stored as exactly the same
float64 values, so the time-changed path is a pure gather from the Brownian
path and never interpolates. That alignment is what turns the two
change-of-clock identities into exact statements about finite sums.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import reduce

import numpy as np
from numpy.typing import NDArray

from .errors import GridAlignmentError, InvalidSpecError
from .strategies import Strategy, repeat_to_market
from .timechange import TimeChangePath

__all__ = [
    "GridPair",
    "PathBundle",
    "build_grid_pair",
    "sample_brownian",
    "time_changed_path",
    "drift_path",
    "assemble_bundle",
]


@dataclass(frozen=True)
class GridPair:
    """Aligned physical and market grids for one clock path.

    ``physical`` runs over ``[0, T]`` and contains every clock jump time;
    ``market`` runs over ``[0, T_bar]`` and contains every ``Lambda(t_i)`` and
    ``Lambda(t_i-)``. ``idx_right[i]`` and ``idx_left[i]`` locate those two
    images in the market grid, so ``market[idx_right] == Lambda(physical)``
    holds exactly.
    """

    physical: NDArray[np.float64]
    market: NDArray[np.float64]
    idx_left: NDArray[np.int64]
    idx_right: NDArray[np.int64]

    @property
    def n_steps(self) -> int:
        return self.physical.size - 1

    @property
    def market_steps(self) -> int:
        return self.market.size - 1

    @property
    def clock_values(self) -> NDArray[np.float64]:
        """``Lambda(t_i)`` for every physical grid point."""
        return self.market[self.idx_right]


def _locate(market: NDArray[np.float64], values: NDArray[np.float64]) -> NDArray[np.int64]:
    idx = np.searchsorted(market, values)
    if np.any(idx >= market.size) or np.any(market[idx] != values):
        raise GridAlignmentError("clock image missing from market grid")
    return idx


def build_grid_pair(lam: TimeChangePath, n_physical: int, n_market: int) -> GridPair:
    """Build the aligned grid pair for ``lam``.

    ``n_physical`` and ``n_market`` size the uniform base grids on ``[0, T]``
    and ``[0, T_bar]``; jump times and clock images are unioned in on top, so
    the resulting grids are at least that fine.
    """
    if n_physical < 2 or n_market < 2:
        raise InvalidSpecError("grids need at least two intervals")
    physical = np.union1d(np.linspace(0.0, lam.T, n_physical + 1), lam.jump_times)
    right = np.asarray(lam.value(physical))
    left = np.asarray(lam.left_value(physical))
    market = reduce(np.union1d, (np.linspace(0.0, lam.T_bar, n_market + 1), right, left))
    return GridPair(
        physical=physical,
        market=market,
        idx_left=_locate(market, left),
        idx_right=_locate(market, right),
    )


def sample_brownian(market: NDArray[np.float64], rng: np.random.Generator) -> NDArray[np.float64]:
    """Standard Brownian path on the market grid, started at zero."""
    increments = rng.standard_normal(market.size - 1) * np.sqrt(np.diff(market))
    return np.concatenate([[0.0], np.cumsum(increments)])


def time_changed_path(W: NDArray[np.float64], grids: GridPair) -> NDArray[np.float64]:
    """``M(t_i) = W(Lambda(t_i))`` by exact gather; no interpolation."""
    if W.size != grids.market.size:
        raise InvalidSpecError("Brownian path length does not match the market grid")
    return W[grids.idx_right]


def drift_path(
    theta: Strategy,
    lam: TimeChangePath,
    grids: GridPair,
    M: NDArray[np.float64] | None = None,
) -> NDArray[np.float64]:
    """Finite-variation part ``A(t_i)``: left-point integral of the rate against the clock.

    The rate's per-interval physical decisions are spread block-constant over
    the market grid, integrated by left-point sums there, and read off at the
    clock images. The physical increment over ``(t_i, t_{i+1}]`` is then
    exactly the decision at ``t_i`` times the clock increment, so ``A`` jumps
    exactly where the clock does and rate integrals on the two clocks regroup
    term by term.
    """
    profile = repeat_to_market(theta.decisions(lam, grids, M), grids)
    cum = np.concatenate([[0.0], np.cumsum(profile * np.diff(grids.market))])
    return cum[grids.idx_right]


@dataclass(frozen=True)
class PathBundle:
    """One simulated path of everything the models consume.

    ``W`` lives on the market grid; ``M``, ``A`` and ``S = S0 + M + A`` live on
    the physical grid. ``rate_profile`` caches the clocked rate per market
    interval so portfolio code does not recompute the composition.
    """

    lam: TimeChangePath
    grids: GridPair
    W: NDArray[np.float64]
    M: NDArray[np.float64]
    A: NDArray[np.float64]
    S: NDArray[np.float64]
    S0: float
    rate_profile: NDArray[np.float64]

    def to_csv(self, prefix) -> tuple[str, str]:
        """Write ``<prefix>.csv`` (physical columns) and ``<prefix>_market.csv``."""
        main = f"{prefix}.csv"
        side = f"{prefix}_market.csv"
        lam_vals = self.grids.clock_values
        with open(main, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["t", "Lambda", "M", "A", "S"])
            for row in zip(self.grids.physical, lam_vals, self.M, self.A, self.S):
                writer.writerow([repr(float(x)) for x in row])
        with open(side, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["s", "W"])
            for row in zip(self.grids.market, self.W):
                writer.writerow([repr(float(x)) for x in row])
        return main, side


def assemble_bundle(
    lam: TimeChangePath,
    grids: GridPair,
    W: NDArray[np.float64],
    theta: Strategy,
    S0: float = 1.0,
) -> PathBundle:
    """Assemble the bundle stage by stage so causal rates can read ``M``."""
    M = time_changed_path(W, grids)
    profile = repeat_to_market(theta.decisions(lam, grids, M), grids)
    cum = np.concatenate([[0.0], np.cumsum(profile * np.diff(grids.market))])
    A = cum[grids.idx_right]
    return PathBundle(
        lam=lam,
        grids=grids,
        W=W,
        M=M,
        A=A,
        S=S0 + M + A,
        S0=float(S0),
        rate_profile=profile,
    )
