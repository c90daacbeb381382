"""Strictly increasing market clocks with jumps, and their generalized inverses.

A clock maps physical time ``t in [0, T]`` to market time ``Lambda(t) in
[0, T_bar]``. Paths are stored as knots ``(t, lam_left, lam_right)`` with
piecewise-linear interpolation between knots; a knot with
``lam_left < lam_right`` is a jump, equality marks a continuity point. The
representation is exact: evaluation, left limits and the generalized inverse
involve no approximation beyond float arithmetic.
"""

from __future__ import annotations

import csv
import warnings
from bisect import bisect_right
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from .errors import DomainError, InvalidSpecError

__all__ = [
    "TimeChangePath",
    "DeterministicPiecewiseSpec",
    "LinearSpec",
    "SubordinatorDriftSpec",
    "IntegratedDiffusionSpec",
    "ValidationReport",
    "build_deterministic",
    "build_linear",
    "from_drift_and_jumps",
    "sample_subordinator_drift",
    "sample_integrated_diffusion",
    "generalized_inverse",
    "validate",
]


@dataclass(frozen=True)
class TimeChangePath:
    """One realized clock path.

    Parameters
    ----------
    knot_t : ndarray
        Strictly increasing knot times, starting at 0 and ending at ``T``.
    lam_left : ndarray
        Left limits ``Lambda(t-)`` at each knot.
    lam_right : ndarray
        Right-continuous values ``Lambda(t)`` at each knot.
    T, T_bar : float
        Physical and market horizons.
    declared_jump_times : tuple of float
        Jump times the constructing spec promised; ``validate`` checks each
        actually carries a positive jump.

    Arrays are treated as immutable after construction. Between consecutive
    knots the path is linear from ``lam_right[k]`` to ``lam_left[k+1]``.
    """

    knot_t: NDArray[np.float64]
    lam_left: NDArray[np.float64]
    lam_right: NDArray[np.float64]
    T: float
    T_bar: float
    declared_jump_times: tuple[float, ...] = field(default=())

    def __post_init__(self):
        for name in ("knot_t", "lam_left", "lam_right"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if not (self.knot_t.shape == self.lam_left.shape == self.lam_right.shape):
            raise InvalidSpecError("knot arrays must have matching shapes")
        if self.knot_t.ndim != 1 or self.knot_t.size < 2:
            raise InvalidSpecError("a clock path needs at least the two endpoint knots")

    @property
    def jump_times(self) -> NDArray[np.float64]:
        """Times where the stored path actually jumps."""
        return self.knot_t[self.lam_right > self.lam_left]

    @property
    def total_increase(self) -> float:
        return float(self.lam_right[-1])

    def _interp(self, t: NDArray[np.float64], at_knot: NDArray[np.float64]) -> NDArray[np.float64]:
        # shared linear interpolation; `at_knot` supplies the value used when
        # t coincides with a knot (right value or left limit)
        k = np.searchsorted(self.knot_t, t, side="right") - 1
        k = np.clip(k, 0, self.knot_t.size - 1)
        on_knot = self.knot_t[k] == t
        k_next = np.minimum(k + 1, self.knot_t.size - 1)
        seg = self.knot_t[k_next] - self.knot_t[k]
        frac = (t - self.knot_t[k]) / np.where(seg > 0.0, seg, 1.0)
        interp = self.lam_right[k] + frac * (self.lam_left[k_next] - self.lam_right[k])
        return np.where(on_knot, at_knot[k], interp)

    def value(self, t) -> NDArray[np.float64] | float:
        """Right-continuous evaluation ``Lambda(t)`` for ``t in [0, T]``."""
        t_arr = np.asarray(t, dtype=float)
        if np.any(t_arr < 0.0) or np.any(t_arr > self.T):
            raise DomainError(f"physical time outside [0, {self.T}]")
        out = self._interp(np.atleast_1d(t_arr), self.lam_right)
        return float(out[0]) if t_arr.ndim == 0 else out

    def left_value(self, t) -> NDArray[np.float64] | float:
        """Left limit ``Lambda(t-)``; at ``t = 0`` this is 0."""
        t_arr = np.asarray(t, dtype=float)
        if np.any(t_arr < 0.0) or np.any(t_arr > self.T):
            raise DomainError(f"physical time outside [0, {self.T}]")
        out = self._interp(np.atleast_1d(t_arr), self.lam_left)
        return float(out[0]) if t_arr.ndim == 0 else out

    def inverse(self, s) -> NDArray[np.float64] | float:
        """Generalized inverse ``inf{t : Lambda(t) > s}``, capped at ``T``.

        Exact on the piecewise-linear representation: binary search over the
        knots, then a closed-form segment solve. For ``s`` inside a jump image
        ``[Lambda(u-), Lambda(u))`` the inverse is the jump time ``u``; for
        ``s >= Lambda(T)`` it is ``T``.
        """
        s_arr = np.atleast_1d(np.asarray(s, dtype=float))
        if np.any(s_arr < 0.0) or np.any(s_arr > self.T_bar):
            raise DomainError(f"market time outside [0, {self.T_bar}]")
        idx = np.searchsorted(self.lam_right, s_arr, side="right")
        idx_c = np.clip(idx, 0, self.knot_t.size - 1)
        in_jump = s_arr >= self.lam_left[idx_c]
        k_prev = np.clip(idx - 1, 0, self.knot_t.size - 1)
        rise = self.lam_left[idx_c] - self.lam_right[k_prev]
        slope_inv = (self.knot_t[idx_c] - self.knot_t[k_prev]) / np.where(rise > 0.0, rise, 1.0)
        seg_t = self.knot_t[k_prev] + (s_arr - self.lam_right[k_prev]) * slope_inv
        out = np.where(in_jump, self.knot_t[idx_c], seg_t)
        out = np.where(s_arr >= self.lam_right[-1], self.T, out)
        return float(out[0]) if np.asarray(s, dtype=float).ndim == 0 else out

    def to_csv(self, path) -> None:
        """Write knots as CSV columns ``(t, lambda_left, lambda_right)``."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["t", "lambda_left", "lambda_right"])
            for t, lo, hi in zip(self.knot_t, self.lam_left, self.lam_right):
                writer.writerow([repr(float(t)), repr(float(lo)), repr(float(hi))])

    @classmethod
    def from_csv(cls, path, T_bar: float | None = None) -> "TimeChangePath":
        """Read a path written by :meth:`to_csv`.

        The CSV does not carry the market horizon; pass ``T_bar`` or the
        terminal clock value is used.
        """
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header != ["t", "lambda_left", "lambda_right"]:
                raise InvalidSpecError(f"unexpected CSV header {header!r}")
            rows = [[float(x) for x in row] for row in reader if row]
        arr = np.asarray(rows, dtype=float)
        t, lo, hi = arr[:, 0], arr[:, 1], arr[:, 2]
        tbar = float(hi[-1]) if T_bar is None else float(T_bar)
        jumps = tuple(float(x) for x in t[hi > lo])
        return cls(t, lo, hi, T=float(t[-1]), T_bar=tbar, declared_jump_times=jumps)


# ---------------------------------------------------------------------------
# specs


@dataclass(frozen=True)
class DeterministicPiecewiseSpec:
    """Piecewise-linear clock: positive slopes between breakpoints plus jumps.

    ``slopes`` has one entry more than ``breakpoints``; ``jumps`` is a tuple of
    ``(time, size)`` with times in ``(0, T]`` and positive sizes.
    """

    slopes: tuple[float, ...]
    breakpoints: tuple[float, ...] = ()
    jumps: tuple[tuple[float, float], ...] = ()
    kind: str = field(default="deterministic_piecewise", init=False)


@dataclass(frozen=True)
class LinearSpec:
    """Constant-rate clock ``Lambda(t) = rate * t``."""

    rate: float = 1.0
    kind: str = field(default="linear", init=False)


@dataclass(frozen=True)
class SubordinatorDriftSpec:
    """Drift plus compound-Poisson jumps with exponential sizes.

    ``Lambda(t) = drift * t + sum of jump sizes arriving before t``; arrival
    rate ``jump_intensity`` per unit time, sizes Exp(``jump_mean``). The drift
    must be positive so the path is strictly increasing.
    """

    drift: float = 1.0
    jump_intensity: float = 1.0
    jump_mean: float = 1.0
    kind: str = field(default="subordinator_drift", init=False)


@dataclass(frozen=True)
class IntegratedDiffusionSpec:
    """Clock given by the running integral of a positive mean-reverting rate.

    The rate follows a square-root diffusion discretized by Euler steps with
    reflection at ``floor``, and the clock is its left-point quadrature, so the
    path is continuous and strictly increasing.
    """

    reversion: float = 1.0
    level: float = 1.0
    vol: float = 0.5
    v0: float = 1.0
    floor: float = 1e-6
    rate_steps: int = 4096
    kind: str = field(default="integrated_diffusion", init=False)


@dataclass(frozen=True)
class ValidationReport:
    valid: bool
    violations: tuple[str, ...]


# ---------------------------------------------------------------------------
# builders


def _assemble(knot_times, jump_size_at, slope_at, T, T_bar, *, declared) -> TimeChangePath:
    # walk the knots accumulating the running clock value
    t = np.asarray(knot_times, dtype=float)
    lo = np.empty_like(t)
    hi = np.empty_like(t)
    lam = 0.0
    for k, tk in enumerate(t):
        lo[k] = lam
        lam += jump_size_at(tk)
        hi[k] = lam
        if k + 1 < t.size:
            lam += slope_at(tk, t[k + 1]) * (t[k + 1] - tk)
    if hi[-1] > T_bar:
        raise InvalidSpecError(
            f"clock reaches {hi[-1]:.6g} at T={T}, beyond market horizon {T_bar}"
        )
    return TimeChangePath(t, lo, hi, T=float(T), T_bar=float(T_bar), declared_jump_times=declared)


def build_deterministic(spec: DeterministicPiecewiseSpec, T: float, T_bar: float) -> TimeChangePath:
    """Construct the deterministic piecewise-linear clock described by ``spec``."""
    if T <= 0 or T_bar <= 0:
        raise InvalidSpecError("horizons must be positive")
    slopes = tuple(float(c) for c in spec.slopes)
    breaks = tuple(float(b) for b in spec.breakpoints)
    if len(slopes) != len(breaks) + 1:
        raise InvalidSpecError("need exactly one slope per breakpoint interval")
    if any(c <= 0 for c in slopes):
        raise InvalidSpecError("slopes must be positive for a strictly increasing clock")
    if list(breaks) != sorted(set(breaks)) or any(not 0 < b < T for b in breaks):
        raise InvalidSpecError("breakpoints must be strictly increasing inside (0, T)")
    jump_map: dict[float, float] = {}
    for tau, size in spec.jumps:
        tau, size = float(tau), float(size)
        if not 0 < tau <= T:
            raise InvalidSpecError(f"jump time {tau} outside (0, T]")
        if size <= 0:
            raise InvalidSpecError(f"jump size {size} must be positive")
        jump_map[tau] = jump_map.get(tau, 0.0) + size

    knots = sorted({0.0, T, *breaks, *jump_map})

    def slope_at(a: float, b: float) -> float:
        return slopes[bisect_right(breaks, 0.5 * (a + b))]

    return _assemble(
        knots,
        lambda tk: jump_map.get(tk, 0.0),
        slope_at,
        T,
        T_bar,
        declared=tuple(sorted(jump_map)),
    )


def build_linear(rate: float, T: float, T_bar: float | None = None) -> TimeChangePath:
    """Clock running at a constant positive rate; ``T_bar`` defaults to ``rate*T``."""
    if rate <= 0:
        raise InvalidSpecError("rate must be positive")
    tbar = rate * T if T_bar is None else T_bar
    return build_deterministic(DeterministicPiecewiseSpec(slopes=(rate,)), T, tbar)


def from_drift_and_jumps(
    drift: float,
    jump_times,
    jump_sizes,
    T: float,
    T_bar: float,
) -> TimeChangePath:
    """Assemble a drift-plus-jumps path from explicit jump data."""
    if drift <= 0:
        raise InvalidSpecError("drift must be positive")
    times = np.asarray(jump_times, dtype=float)
    sizes = np.asarray(jump_sizes, dtype=float)
    if times.size != sizes.size:
        raise InvalidSpecError("jump times and sizes must match in length")
    return build_deterministic(
        DeterministicPiecewiseSpec(
            slopes=(float(drift),),
            jumps=tuple((float(t), float(j)) for t, j in zip(times, sizes)),
        ),
        T,
        T_bar,
    )


def sample_subordinator_drift(
    spec: SubordinatorDriftSpec,
    T: float,
    T_bar: float,
    rng: np.random.Generator,
    max_attempts: int = 1000,
) -> TimeChangePath:
    """Draw one drift-plus-compound-Poisson clock path.

    Draw order is fixed: jump count, then sorted jump times, then sizes.
    Realizations whose terminal value would exceed ``T_bar`` are rejected and
    redrawn (a warning reports how many were discarded); the conditioning this
    introduces is accepted by design.
    """
    if spec.drift <= 0:
        raise InvalidSpecError("drift must be positive")
    if spec.jump_intensity < 0 or spec.jump_mean <= 0:
        raise InvalidSpecError("jump intensity must be >= 0 and jump mean > 0")
    if spec.drift * T > T_bar:
        raise InvalidSpecError("drift alone exceeds the market horizon; no path is feasible")
    rejected = 0
    for _ in range(max_attempts):
        n = int(rng.poisson(spec.jump_intensity * T))
        times = np.sort(rng.uniform(0.0, T, size=n))
        sizes = rng.exponential(spec.jump_mean, size=n)
        if spec.drift * T + sizes.sum() <= T_bar:
            if rejected:
                warnings.warn(
                    f"discarded {rejected} clock draw(s) exceeding market horizon {T_bar}",
                    stacklevel=2,
                )
            return from_drift_and_jumps(spec.drift, times, sizes, T, T_bar)
        rejected += 1
    raise InvalidSpecError(
        f"no clock draw fit the market horizon {T_bar} in {max_attempts} attempts"
    )


def sample_integrated_diffusion(
    spec: IntegratedDiffusionSpec,
    T: float,
    T_bar: float,
    rng: np.random.Generator,
    max_attempts: int = 1000,
) -> TimeChangePath:
    """Draw one integrated square-root-diffusion clock path.

    The rate is stepped on a uniform grid of ``spec.rate_steps`` intervals,
    reflected at ``spec.floor``; the clock is the left-point running integral,
    hence continuous with all grid points stored as knots.
    """
    if spec.floor <= 0:
        raise InvalidSpecError("rate floor must be positive")
    if spec.v0 < spec.floor:
        raise InvalidSpecError("initial rate below the floor")
    if spec.reversion < 0 or spec.level < 0 or spec.vol < 0:
        raise InvalidSpecError("reversion, level and vol must be nonnegative")
    if spec.rate_steps < 1:
        raise InvalidSpecError("rate_steps must be at least 1")
    grid = np.linspace(0.0, T, spec.rate_steps + 1)
    dt = T / spec.rate_steps
    sqrt_dt = np.sqrt(dt)
    rejected = 0
    for _ in range(max_attempts):
        shocks = rng.standard_normal(spec.rate_steps)
        v = np.empty(spec.rate_steps + 1)
        v[0] = spec.v0
        for k in range(spec.rate_steps):
            nxt = v[k] + spec.reversion * (spec.level - v[k]) * dt
            nxt += spec.vol * np.sqrt(v[k]) * sqrt_dt * shocks[k]
            v[k + 1] = 2.0 * spec.floor - nxt if nxt < spec.floor else nxt
        lam = np.concatenate([[0.0], np.cumsum(v[:-1] * dt)])
        if lam[-1] <= T_bar:
            if rejected:
                warnings.warn(
                    f"discarded {rejected} clock draw(s) exceeding market horizon {T_bar}",
                    stacklevel=2,
                )
            return TimeChangePath(grid, lam, lam, T=float(T), T_bar=float(T_bar))
        rejected += 1
    raise InvalidSpecError(
        f"no clock draw fit the market horizon {T_bar} in {max_attempts} attempts"
    )


def generalized_inverse(lam: TimeChangePath, s):
    """Module-level alias for :meth:`TimeChangePath.inverse`."""
    return lam.inverse(s)


def validate(lam: TimeChangePath) -> ValidationReport:
    """Check the path invariants and list every violation found."""
    bad: list[str] = []
    t, lo, hi = lam.knot_t, lam.lam_left, lam.lam_right
    if np.any(np.diff(t) <= 0.0):
        bad.append("knot times not strictly increasing")
    if t[0] != 0.0:
        bad.append("first knot not at t=0")
    if t[-1] != lam.T:
        bad.append(f"last knot {t[-1]} != T={lam.T}")
    if hi[0] != 0.0 or lo[0] != 0.0:
        bad.append("clock does not start at zero")
    neg = np.nonzero(lo > hi)[0]
    for k in neg:
        bad.append(f"negative jump at t={t[k]}")
    flat = np.nonzero(hi[:-1] >= lo[1:])[0]
    for k in flat:
        if lo[k + 1] <= hi[k]:
            bad.append(f"not strictly increasing on segment starting t={t[k]}")
    declared = set(float(x) for x in lam.declared_jump_times)
    actual = {float(x) for x in t[hi > lo]}
    for tau in sorted(declared - actual):
        bad.append(f"zero jump at declared jump time t={tau}")
    if hi[-1] > lam.T_bar:
        bad.append(f"terminal clock value {hi[-1]} exceeds market horizon {lam.T_bar}")
    return ValidationReport(valid=not bad, violations=tuple(bad))
