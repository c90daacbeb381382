"""Causal trading strategies and clock rates.

A strategy decides, at each physical grid time ``t_i``, the amount held over
the following interval ``(t_i, t_{i+1}]``. The decision may read the clock up
to and including ``t_i`` and the time-changed Brownian path strictly before
``t_i``; that one-sided information pattern is what makes left-point sums
against the time-changed path well defined at jumps.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Callable

import numpy as np
from numpy.typing import NDArray

from .errors import CausalityError, InvalidSpecError

if TYPE_CHECKING:  # pragma: no cover
    from .paths import GridPair
    from .timechange import TimeChangePath

__all__ = ["Strategy", "repeat_to_market", "probe_causality"]

PathFunctional = Callable[
    [float, tuple[NDArray[np.float64], NDArray[np.float64]], tuple[NDArray[np.float64], NDArray[np.float64]]],
    float,
]


def repeat_to_market(decisions: NDArray[np.float64], grids: "GridPair") -> NDArray[np.float64]:
    """Spread per-interval physical decisions over the market grid.

    Market intervals between the images of consecutive physical grid points,
    including the image of a clock jump, all carry the decision made at the
    left physical endpoint. Beyond the terminal clock value the last decision
    is continued. The mapping is index-exact, so sums against it regroup into
    physical-interval sums without rounding surprises.
    """
    counts = np.diff(grids.idx_right)
    profile = np.repeat(decisions, counts)
    tail = (grids.market.size - 1) - profile.size
    if tail > 0:
        profile = np.concatenate([profile, np.full(tail, decisions[-1])])
    return profile


@dataclass(frozen=True, eq=False)
class Strategy:
    """A causal amount process, in one of four evaluation styles.

    ``constant`` and ``time_function`` are deterministic; ``path_functional``
    calls back with the visible histories; ``grid_values`` carries
    pre-computed per-interval decisions. Build through the classmethods.
    """

    kind: str
    value: float = 0.0
    fn: Callable | None = None
    values: NDArray[np.float64] | None = None
    label: str = field(default="")

    @classmethod
    def constant(cls, value: float, label: str = "") -> "Strategy":
        return cls(kind="constant", value=float(value), label=label or f"const {value:g}")

    @classmethod
    def of_time(cls, fn: Callable[[NDArray[np.float64]], NDArray[np.float64]], label: str = "") -> "Strategy":
        """Deterministic function of physical time, evaluated vectorized."""
        return cls(kind="time_function", fn=fn, label=label or "time function")

    @classmethod
    def path_functional(cls, fn: PathFunctional, label: str = "") -> "Strategy":
        """Callback ``fn(t, (times<=t, clock values), (times<t, M values))``."""
        return cls(kind="path_functional", fn=fn, label=label or "path functional")

    @classmethod
    def from_values(cls, values, label: str = "") -> "Strategy":
        vals = np.asarray(values, dtype=float)
        return cls(kind="grid_values", values=vals, label=label or "grid values")

    def describe(self) -> dict:
        out = {"kind": self.kind, "label": self.label}
        if self.kind == "constant":
            out["value"] = self.value
        return out

    # -- evaluation ---------------------------------------------------------

    def decisions(
        self,
        lam: "TimeChangePath",
        grids: "GridPair",
        M: NDArray[np.float64] | None = None,
    ) -> NDArray[np.float64]:
        """Per-interval decisions on the physical grid, length ``n_steps``."""
        t = grids.physical
        n = t.size - 1
        if self.kind == "constant":
            return np.full(n, self.value)
        if self.kind == "time_function":
            return np.asarray(self.fn(t[:-1]), dtype=float)
        if self.kind == "grid_values":
            if self.values.size != n:
                raise InvalidSpecError(
                    f"grid_values strategy has {self.values.size} entries for {n} intervals"
                )
            return np.asarray(self.values, dtype=float)
        if self.kind == "path_functional":
            if M is None:
                raise InvalidSpecError("path_functional strategies need the M path")
            lam_vals = grids.market[grids.idx_right]
            out = np.empty(n)
            for i in range(n):
                out[i] = self.fn(t[i], (t[: i + 1], lam_vals[: i + 1]), (t[:i], M[:i]))
            return out
        raise InvalidSpecError(f"unknown strategy kind {self.kind!r}")

    def market_profile(
        self,
        lam: "TimeChangePath",
        grids: "GridPair",
        M: NDArray[np.float64] | None = None,
    ) -> NDArray[np.float64]:
        """Per-interval values on the market grid, composed with the clock.

        Deterministic time functions are composed pointwise with the
        generalized inverse, so they vary inside physical intervals; all other
        kinds are grid-step processes and spread block-constant via
        :func:`repeat_to_market`.
        """
        if self.kind == "time_function":
            return np.asarray(self.fn(lam.inverse(grids.market[:-1])), dtype=float)
        return repeat_to_market(self.decisions(lam, grids, M), grids)


def probe_causality(
    strategy: Strategy,
    lam: "TimeChangePath",
    grids: "GridPair",
    M: NDArray[np.float64],
    rng: np.random.Generator,
    n_probes: int = 3,
) -> None:
    """Spot-check the information boundary of a strategy evaluation.

    Evaluators receive only sliced histories, which makes them causal by
    construction; what can still go wrong is the slicing machinery leaking, or
    an evaluator producing values contaminated by the poisoned future region.
    At a handful of grid indices the decision is recomputed from history
    arrays whose beyond-boundary region is overwritten with NaN; a decision
    that changes, or comes out non-finite, raises :class:`CausalityError`.
    """
    ref = strategy.decisions(lam, grids, M)
    if not np.all(np.isfinite(ref)):
        raise CausalityError("strategy produced non-finite decisions")
    if strategy.kind != "path_functional":
        return
    t = grids.physical
    n = t.size - 1
    lam_vals = grids.market[grids.idx_right]
    idxs = sorted(set(int(i) for i in rng.integers(1, n, size=n_probes)))
    for i in idxs:
        lam_poison = lam_vals.copy()
        lam_poison[i + 1 :] = np.nan
        m_poison = M.copy()
        m_poison[i:] = np.nan
        probed = strategy.fn(t[i], (t[: i + 1], lam_poison[: i + 1]), (t[:i], m_poison[:i]))
        if not np.isfinite(probed) or probed != ref[i]:
            raise CausalityError(
                f"strategy decision at t={t[i]:g} depends on information after the decision time"
            )
