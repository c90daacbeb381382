"""Monte Carlo engines over clock and Brownian draws.

Reproducibility contract: path ``i`` of a run with master seed ``k`` draws
from ``Philox(key=k, counter=i << 128)``, clock randomness first, Brownian
randomness second. Streams never depend on the worker count or on chunking,
and every reduction runs in path-index order, so a run is bit-identical for
any ``workers`` value. Worker threads only overlap the per-path engines;
the vectorized engines are single batches already.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .errors import InadmissibleError, InvalidSpecError
from .integrate import (
    MarketIntegrand,
    ito_integral_M,
    ito_integral_W,
    pullback,
    pushforward,
    verify_backward,
    verify_forward,
)
from .paths import PathBundle, assemble_bundle, build_grid_pair, sample_brownian
from .portfolio import (
    MarketScenario,
    optimal_market_strategy,
    optimal_physical_strategy,
    power_utility,
    wealth,
)
from .strategies import Strategy, repeat_to_market
from .timechange import (
    DeterministicPiecewiseSpec,
    IntegratedDiffusionSpec,
    LinearSpec,
    SubordinatorDriftSpec,
    TimeChangePath,
    build_deterministic,
    build_linear,
    sample_integrated_diffusion,
    sample_subordinator_drift,
)

__all__ = [
    "ModelSetup",
    "path_rng",
    "sample_time_change",
    "make_bundle",
    "run_ensemble",
    "ObjectiveEstimate",
    "estimate_objective",
    "ValueCheck",
    "conditional_value_check",
    "ScanRow",
    "ScanReport",
    "PERTURBATION_FAMILIES",
    "optimality_scan",
    "TowerReport",
    "tower_check",
    "IdentityReport",
    "verify_identities",
    "CheckVerdict",
    "moment_checks",
    "ConvergenceReport",
    "convergence_sweep",
]

_MASK_128 = (1 << 128) - 1


def path_rng(master_seed: int, path_index: int) -> np.random.Generator:
    """Counter-based generator for one path: disjoint by construction.

    Each path owns a 2**128-draw block of the Philox counter space, so
    streams are independent without any notion of draw budgets, and path
    ``i`` sees the same numbers no matter which worker runs it.
    """
    return np.random.Generator(
        np.random.Philox(key=master_seed & _MASK_128, counter=path_index << 128)
    )


@dataclass(frozen=True)
class ModelSetup:
    """Everything needed to draw one market path: clock law, rate, grids.

    ``clock`` is one of the clock specs, or a fixed
    :class:`~marketclock.timechange.TimeChangePath` to pin the clock exactly.
    """

    clock: object
    theta: Strategy
    T: float
    T_bar: float
    n_physical: int = 256
    n_market: int = 256
    S0: float = 1.0

    @property
    def stochastic_clock(self) -> bool:
        return isinstance(self.clock, (SubordinatorDriftSpec, IntegratedDiffusionSpec))


def sample_time_change(setup: ModelSetup, rng: np.random.Generator) -> TimeChangePath:
    """Draw (or build) the clock for one path; deterministic kinds ignore ``rng``."""
    clock = setup.clock
    if isinstance(clock, TimeChangePath):
        return clock
    if isinstance(clock, DeterministicPiecewiseSpec):
        return build_deterministic(clock, setup.T, setup.T_bar)
    if isinstance(clock, LinearSpec):
        return build_linear(clock.rate, setup.T, setup.T_bar)
    if isinstance(clock, SubordinatorDriftSpec):
        return sample_subordinator_drift(clock, setup.T, setup.T_bar, rng)
    if isinstance(clock, IntegratedDiffusionSpec):
        return sample_integrated_diffusion(clock, setup.T, setup.T_bar, rng)
    raise InvalidSpecError(f"unrecognized clock description {clock!r}")


def make_bundle(
    setup: ModelSetup,
    rng: np.random.Generator,
    fixed: tuple | None = None,
) -> PathBundle:
    """One full path draw. ``fixed`` reuses a (clock, grids) pair across paths."""
    if fixed is None:
        lam = sample_time_change(setup, rng)
        grids = build_grid_pair(lam, setup.n_physical, setup.n_market)
    else:
        lam, grids = fixed
    W = sample_brownian(grids.market, rng)
    return assemble_bundle(lam, grids, W, setup.theta, setup.S0)


def _fixed_pair(setup: ModelSetup) -> tuple | None:
    if setup.stochastic_clock:
        return None
    lam = sample_time_change(setup, path_rng(0, 0))
    return lam, build_grid_pair(lam, setup.n_physical, setup.n_market)


def _map_paths(fn, n_paths: int, workers: int, chunk: int = 64) -> list:
    """Run ``fn(lo, hi) -> list`` over index chunks, order-stable for any workers."""
    spans = [(lo, min(lo + chunk, n_paths)) for lo in range(0, n_paths, chunk)]
    if workers <= 1:
        parts = [fn(lo, hi) for lo, hi in spans]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda span: fn(*span), spans))
    return [item for part in parts for item in part]


def run_ensemble(setup: ModelSetup, seed: int, n_paths: int, workers: int = 1):
    """Yield ``(path_id, bundle)`` in path order.

    Bundles are built chunk by chunk so memory stays bounded; worker threads
    overlap the numpy work inside a chunk without touching the draw order.
    """
    fixed = _fixed_pair(setup)

    def build(lo: int, hi: int) -> list:
        return [(i, make_bundle(setup, path_rng(seed, i), fixed)) for i in range(lo, hi)]

    chunk = 64
    spans = [(lo, min(lo + chunk, n_paths)) for lo in range(0, n_paths, chunk)]
    if workers <= 1:
        for lo, hi in spans:
            yield from build(lo, hi)
        return
    with ThreadPoolExecutor(max_workers=workers) as pool:
        for part in pool.map(lambda span: build(*span), spans):
            yield from part


# ---------------------------------------------------------------------------
# objective estimation


@dataclass(frozen=True)
class ObjectiveEstimate:
    mean: float
    stderr: float
    n_paths: int
    n_inadmissible: int
    wealth_mode: str

    def to_dict(self) -> dict:
        return {
            "mean": self.mean,
            "stderr": self.stderr,
            "n_paths": self.n_paths,
            "n_inadmissible": self.n_inadmissible,
            "wealth_mode": self.wealth_mode,
        }


def estimate_objective(
    scenario: MarketScenario,
    bundles,
    wealth_mode: str = "exponential",
    max_inadmissible: float = 1e-3,
) -> ObjectiveEstimate:
    """Average terminal utility of the optimal strategy over given bundles.

    ``exponential`` compounds wealth multiplicatively and cannot go broke;
    ``linear`` runs the honest trading account, whose terminal value can be
    negative on coarse grids. A negative-terminal path has no power utility;
    it is counted and enters the average at negative infinity, so a
    contaminated estimate is visibly contaminated instead of quietly biased.
    More than ``max_inadmissible`` of them aborts the run.
    """
    utilities = []
    bad = 0
    for item in bundles:
        bundle = item[1] if isinstance(item, tuple) else item
        if wealth_mode == "exponential":
            _, path = optimal_market_strategy(scenario, bundle)
            terminal = float(path.values[-1])
        elif wealth_mode == "linear":
            amounts, _ = optimal_physical_strategy(scenario, bundle)
            terminal = float(wealth(amounts, bundle, scenario.x, scenario.t).values[-1])
        else:
            raise InvalidSpecError(f"unknown wealth mode {wealth_mode!r}")
        if terminal < 0.0:
            bad += 1
            utilities.append(-math.inf)
        else:
            utilities.append(float(power_utility(terminal, scenario.p)))
    n = len(utilities)
    if n == 0:
        raise InvalidSpecError("no paths supplied")
    if bad > max_inadmissible * n:
        raise InadmissibleError(
            f"{bad} of {n} paths ended with negative wealth, over the {max_inadmissible:.1%} limit"
        )
    arr = np.asarray(utilities)
    mean = float(np.mean(arr))
    stderr = float(np.std(arr, ddof=1) / math.sqrt(n)) if n > 1 and np.isfinite(mean) else math.nan
    return ObjectiveEstimate(mean, stderr, n, bad, wealth_mode)


# ---------------------------------------------------------------------------
# vectorized wealth engine over frozen clocks


def _clock_arrays(setup: ModelSetup, scenario: MarketScenario, lam: TimeChangePath, grids):
    """Market-window pieces for the vectorized engines: rate, steps, indices."""
    profile = repeat_to_market(setup.theta.decisions(lam, grids, None), grids)
    t_grid = grids.physical
    i0 = int(np.searchsorted(t_grid, scenario.t))
    if i0 >= t_grid.size or t_grid[i0] != scenario.t:
        raise InvalidSpecError(f"start time {scenario.t} is not a physical grid time")
    j0 = int(grids.idx_right[i0])
    j1 = int(grids.idx_right[-1])
    return profile[j0:j1], np.diff(grids.market)[j0:j1], i0, j0, j1


def _terminal_utilities(
    x: float,
    p: float,
    fraction: NDArray[np.float64],
    theta_window: NDArray[np.float64],
    ds: NDArray[np.float64],
    increments: NDArray[np.float64],
) -> NDArray[np.float64]:
    """Utilities of terminal exponential wealth for one fraction profile.

    ``increments`` holds Brownian increments over the window, one row per
    path. Terminal log wealth is a single inner product per row.
    """
    drift = float(np.sum((fraction * theta_window - 0.5 * fraction**2) * ds))
    log_growth = increments @ fraction + drift
    return power_utility(x * np.exp(log_growth), p)


def _clock_groups(setup: ModelSetup, seed: int, n_paths: int, n_clocks: int):
    """Split paths over clock draws; one group per clock, streams per group.

    Group ``g`` draws from the stream of path index ``g``: clock first, then
    one Brownian increment matrix for all the group's paths in a single
    fixed-shape draw. Deterministic clocks collapse to one group.
    """
    if not setup.stochastic_clock:
        n_clocks = 1
    n_clocks = max(1, min(n_clocks, n_paths))
    base, extra = divmod(n_paths, n_clocks)
    for g in range(n_clocks):
        rng = path_rng(seed, g)
        lam = sample_time_change(setup, rng)
        grids = build_grid_pair(lam, setup.n_physical, setup.n_market)
        n_w = base + (1 if g < extra else 0)
        yield rng, lam, grids, n_w


def _window_increments(rng: np.random.Generator, ds: NDArray[np.float64], n_w: int, chunk: int = 2048):
    """Brownian increments over the window, yielded in row chunks."""
    root = np.sqrt(ds)
    done = 0
    while done < n_w:
        rows = min(chunk, n_w - done)
        yield rng.standard_normal((rows, ds.size)) * root
        done += rows


@dataclass(frozen=True)
class ValueCheck:
    """Monte Carlo terminal utility against the closed-form value."""

    mc_mean: float
    mc_stderr: float
    formula_mean: float
    variant_mean: float
    diff: float
    diff_stderr: float
    z: float
    passed: bool
    n_paths: int
    n_clocks: int

    def to_dict(self) -> dict:
        return {
            "mc_mean": self.mc_mean,
            "mc_stderr": self.mc_stderr,
            "formula_mean": self.formula_mean,
            "variant_mean": self.variant_mean,
            "diff": self.diff,
            "diff_stderr": self.diff_stderr,
            "z": self.z,
            "passed": self.passed,
            "n_paths": self.n_paths,
            "n_clocks": self.n_clocks,
        }


def _paired_utility_sums(
    setup: ModelSetup,
    scenario: MarketScenario,
    seed: int,
    n_paths: int,
    n_clocks: int,
) -> dict:
    """Shared engine: optimal-strategy utilities paired with per-clock formulas.

    Returns running sums for the utilities, the paired residuals against the
    conditional closed form, and both closed forms, accumulated in group
    order so the result is independent of chunking.
    """
    p, x = scenario.p, scenario.x
    acc = {"u": 0.0, "u2": 0.0, "d": 0.0, "d2": 0.0, "f": 0.0, "v": 0.0, "n": 0, "groups": 0}
    for rng, lam, grids, n_w in _clock_groups(setup, seed, n_paths, n_clocks):
        theta_w, ds, i0, j0, j1 = _clock_arrays(setup, scenario, lam, grids)
        view = _FormulaView(theta_w, ds)
        f = view.conditional_value(scenario)
        fraction = theta_w / p
        for incr in _window_increments(rng, ds, n_w):
            u = _terminal_utilities(x, p, fraction, theta_w, ds, incr)
            d = u - f
            acc["u"] += float(np.sum(u))
            acc["u2"] += float(np.sum(u * u))
            acc["d"] += float(np.sum(d))
            acc["d2"] += float(np.sum(d * d))
            acc["n"] += incr.shape[0]
        acc["f"] += f * n_w
        acc["v"] += view.variant_value(scenario) * n_w
        acc["groups"] += 1
    return acc


def conditional_value_check(
    setup: ModelSetup,
    scenario: MarketScenario,
    seed: int,
    n_paths: int,
    n_clocks: int = 64,
    z_limit: float = 3.0,
) -> ValueCheck:
    """Test the closed-form value against simulation, clock by clock.

    For each clock draw the conditional expected utility is exact, so the
    paired residual ``utility - formula(clock)`` has mean zero under the
    closed form; the verdict is a ``z_limit``-standard-error test on that
    residual. The alternative closed form is averaged alongside for the
    side-by-side report.
    """
    acc = _paired_utility_sums(setup, scenario, seed, n_paths, n_clocks)
    n = acc["n"]
    mc_mean = acc["u"] / n
    var_u = max(acc["u2"] / n - mc_mean * mc_mean, 0.0)
    diff = acc["d"] / n
    var_d = max(acc["d2"] / n - diff * diff, 0.0)
    diff_stderr = math.sqrt(var_d / n)
    z = abs(diff) / diff_stderr if diff_stderr > 0.0 else 0.0
    return ValueCheck(
        mc_mean=mc_mean,
        mc_stderr=math.sqrt(var_u / n),
        formula_mean=acc["f"] / n,
        variant_mean=acc["v"] / n,
        diff=diff,
        diff_stderr=diff_stderr,
        z=z,
        passed=bool(z <= z_limit),
        n_paths=n,
        n_clocks=acc["groups"],
    )


class _FormulaView:
    """Closed-form values from window arrays, without building a bundle."""

    def __init__(self, theta_window, ds):
        self.budget = float(np.sum(theta_window**2 * ds))

    def conditional_value(self, scenario: MarketScenario) -> float:
        u0 = float(power_utility(scenario.x, scenario.p))
        return u0 * math.exp((1.0 - scenario.p) / (2.0 * scenario.p) * self.budget)

    def variant_value(self, scenario: MarketScenario) -> float:
        return scenario.x ** (1.0 - scenario.p) / (2.0 * scenario.p) * math.exp(self.budget)


# ---------------------------------------------------------------------------
# optimality scan


PERTURBATION_FAMILIES = ("scale", "shift", "delay", "zero")


@dataclass(frozen=True)
class ScanRow:
    family: str
    epsilon: float
    value: float
    stderr: float
    gap: float
    passed: bool

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "epsilon": self.epsilon,
            "value": self.value,
            "stderr": self.stderr,
            "gap": self.gap,
            "passed": self.passed,
        }


@dataclass(frozen=True)
class ScanReport:
    baseline_value: float
    baseline_stderr: float
    rows: tuple
    passed: bool
    n_paths: int

    def to_dict(self) -> dict:
        return {
            "baseline_value": self.baseline_value,
            "baseline_stderr": self.baseline_stderr,
            "rows": [row.to_dict() for row in self.rows],
            "passed": self.passed,
            "n_paths": self.n_paths,
        }


def _perturbed_fraction(
    family: str,
    eps: float,
    base: NDArray[np.float64],
    grids,
    scenario: MarketScenario,
    i0: int,
    j0: int,
) -> NDArray[np.float64]:
    g = base.copy()
    if family == "optimal":
        pass
    elif family == "scale":
        g *= 1.0 + eps
    elif family == "shift":
        g += eps
    elif family == "zero":
        g[:] = 0.0
    elif family == "delay":
        t_grid = grids.physical
        i = int(np.searchsorted(t_grid, scenario.t + abs(eps)))
        i = min(max(i, i0), t_grid.size - 1)
        g[: int(grids.idx_right[i]) - j0] = 0.0
    else:
        raise InvalidSpecError(f"unknown perturbation family {family!r}")
    return g


def optimality_scan(
    setup: ModelSetup,
    scenario: MarketScenario,
    seed: int,
    n_paths: int,
    epsilons=(-0.2, -0.1, -0.05, 0.05, 0.1, 0.2),
    families=PERTURBATION_FAMILIES,
    n_clocks: int = 64,
    slack: float = 2.0,
) -> ScanReport:
    """Estimate the objective for the optimal strategy and perturbations of it.

    All rows share every random draw, so differences are common-random-number
    comparisons; the strategy's own row is the baseline. Perturbations act on
    the fraction of wealth, which keeps every row solvent by construction.
    A row passes when the baseline is no worse than the row minus ``slack``
    times the two standard errors combined.
    """
    labels = [("optimal", 0.0)]
    for family in families:
        if family == "zero":
            labels.append(("zero", 0.0))
        else:
            labels.extend((family, float(e)) for e in epsilons)
    n_rows = len(labels)
    s1 = np.zeros(n_rows)
    s2 = np.zeros(n_rows)
    n_done = 0
    for rng, lam, grids, n_w in _clock_groups(setup, seed, n_paths, n_clocks):
        theta_w, ds, i0, j0, j1 = _clock_arrays(setup, scenario, lam, grids)
        base = theta_w / scenario.p
        fractions = [
            _perturbed_fraction(family, eps, base, grids, scenario, i0, j0)
            for family, eps in labels
        ]
        for incr in _window_increments(rng, ds, n_w):
            for r, g in enumerate(fractions):
                u = _terminal_utilities(scenario.x, scenario.p, g, theta_w, ds, incr)
                s1[r] += float(np.sum(u))
                s2[r] += float(np.sum(u * u))
            n_done += incr.shape[0]
    means = s1 / n_done
    variances = np.maximum(s2 / n_done - means**2, 0.0)
    stderrs = np.sqrt(variances / n_done)
    base_mean, base_se = float(means[0]), float(stderrs[0])
    rows = []
    for r in range(1, n_rows):
        family, eps = labels[r]
        ok = base_mean >= float(means[r]) - slack * (base_se + float(stderrs[r]))
        rows.append(
            ScanRow(
                family=family,
                epsilon=eps,
                value=float(means[r]),
                stderr=float(stderrs[r]),
                gap=base_mean - float(means[r]),
                passed=bool(ok),
            )
        )
    return ScanReport(
        baseline_value=base_mean,
        baseline_stderr=base_se,
        rows=tuple(rows),
        passed=all(row.passed for row in rows),
        n_paths=n_done,
    )


# ---------------------------------------------------------------------------
# tower property


@dataclass(frozen=True)
class TowerReport:
    mean_utility: float
    mean_formula: float
    diff: float
    diff_stderr: float
    z: float
    passed: bool
    n_paths: int

    def to_dict(self) -> dict:
        return {
            "mean_utility": self.mean_utility,
            "mean_formula": self.mean_formula,
            "diff": self.diff,
            "diff_stderr": self.diff_stderr,
            "z": self.z,
            "passed": self.passed,
            "n_paths": self.n_paths,
        }


def tower_check(
    setup: ModelSetup,
    scenario: MarketScenario,
    seed: int,
    n_paths: int,
    n_clocks: int = 1024,
    z_limit: float = 3.0,
) -> TowerReport:
    """Average the conditional value over clock draws against raw utilities.

    One estimator averages terminal utilities over joint clock and Brownian
    randomness; the other averages the conditional closed form over the same
    clock draws. Their paired difference has the clock noise cancelled, so
    the comparison is sharp where the clock actually varies. Passing says
    the unconditional value is the clock average of the conditional one.
    """
    acc = _paired_utility_sums(setup, scenario, seed, n_paths, n_clocks)
    n = acc["n"]
    diff = acc["d"] / n
    var_d = max(acc["d2"] / n - diff * diff, 0.0)
    se = math.sqrt(var_d / n)
    z = abs(diff) / se if se > 0.0 else 0.0
    return TowerReport(
        mean_utility=acc["u"] / n,
        mean_formula=acc["f"] / n,
        diff=diff,
        diff_stderr=se,
        z=z,
        passed=bool(z <= z_limit),
        n_paths=n,
    )


# ---------------------------------------------------------------------------
# identity sweeps


@dataclass(frozen=True)
class IdentityReport:
    """Verdict and evidence for the pathwise transport identities.

    ``max_rel_diff`` drives the verdict; the failure fields summarize the
    demonstration records (``None`` when the clock never jumps, since the
    failure mode needs a jump image to move inside).
    """

    max_abs_diff: float
    max_rel_diff: float
    max_rel_forward: float
    max_rel_backward: float
    roundtrip_exact: bool
    passed: bool
    n_paths: int
    records: tuple
    failure_mean_abs: float | None = None
    failure_stderr: float | None = None
    failure_z: float | None = None
    failure_demonstrated: bool | None = None

    def to_dict(self) -> dict:
        return {
            "max_abs_diff": self.max_abs_diff,
            "max_rel_diff": self.max_rel_diff,
            "max_rel_forward": self.max_rel_forward,
            "max_rel_backward": self.max_rel_backward,
            "roundtrip_exact": self.roundtrip_exact,
            "passed": self.passed,
            "n_paths": self.n_paths,
            "failure_mean_abs": self.failure_mean_abs,
            "failure_stderr": self.failure_stderr,
            "failure_z": self.failure_z,
            "failure_demonstrated": self.failure_demonstrated,
            "records": list(self.records),
        }


def _sweep_strategies() -> list[Strategy]:
    return [
        Strategy.constant(1.0),
        Strategy.constant(-0.5, label="const -0.5"),
        Strategy.path_functional(
            lambda t, lam_hist, m_hist: math.sin(m_hist[1][-1]) if m_hist[1].size else 0.0,
            label="sin of last M",
        ),
    ]


def verify_identities(
    setup: ModelSetup,
    seed: int,
    n_paths: int,
    workers: int = 1,
    tolerance: float = 1e-12,
    strategies: list[Strategy] | None = None,
    max_records: int = 1000,
    demonstrate_failure: bool = True,
) -> IdentityReport:
    """Check both transport identities pathwise across an ensemble.

    Forward and backward discrepancies are collected for a family of causal
    strategies, the pushforward-pullback round trip is required to be exact
    bit for bit, and on clocks with jumps one record per path demonstrates
    the failure mode the adaptedness requirement exists to block: the running
    market time itself, an integrand that moves inside every jump image, so
    its naive transport drops a nonzero piece of the integral. Demonstration
    records are excluded from the verdict but summarized separately; their
    mean absolute discrepancy should sit many standard errors above zero.
    """
    strategies = _sweep_strategies() if strategies is None else strategies
    fixed = _fixed_pair(setup)

    def run(lo: int, hi: int) -> list:
        out = []
        for i in range(lo, hi):
            bundle = make_bundle(setup, path_rng(seed, i), fixed)
            per_path = []
            exact = True
            for strat in strategies:
                rec = verify_forward(strat, bundle, path_id=i)
                per_path.append(rec)
                profile = pushforward(strat, bundle)
                per_path.append(verify_backward(profile, bundle, path_id=i))
                decisions = strat.decisions(bundle.lam, bundle.grids, bundle.M)
                back = pullback(profile, bundle)
                exact = exact and bool(np.array_equal(decisions, back))
            if demonstrate_failure and bundle.lam.jump_times.size:
                running = MarketIntegrand(
                    bundle.grids.market[:-1].copy(), clock_adapted=False
                )
                per_path.append(
                    verify_backward(running, bundle, demonstrate_failure=True, path_id=i)
                )
            out.append((per_path, exact))
        return out

    results = _map_paths(run, n_paths, workers)
    records = [rec for per_path, _ in results for rec in per_path]
    exact_records = [r for r in records if r["mode"] == "exact"]
    max_abs = max((r["abs_diff"] for r in exact_records), default=0.0)
    max_rel = max((r["rel_diff"] for r in exact_records), default=0.0)
    rel_by = {
        name: max(
            (r["rel_diff"] for r in exact_records if r["identity"] == name),
            default=0.0,
        )
        for name in ("forward", "backward")
    }
    roundtrip = all(flag for _, flag in results)
    demo = np.asarray(
        [abs(r["abs_diff"]) for r in records if r["mode"] == "demonstrate_failure"]
    )
    failure_mean = failure_se = failure_z = None
    demonstrated = None
    if demo.size > 1:
        failure_mean = float(np.mean(demo))
        failure_se = float(np.std(demo, ddof=1) / math.sqrt(demo.size))
        failure_z = failure_mean / failure_se if failure_se > 0.0 else math.inf
        demonstrated = bool(failure_z > 5.0)
    return IdentityReport(
        max_abs_diff=float(max_abs),
        max_rel_diff=float(max_rel),
        max_rel_forward=float(rel_by["forward"]),
        max_rel_backward=float(rel_by["backward"]),
        roundtrip_exact=bool(roundtrip),
        passed=bool(max_rel <= tolerance and roundtrip),
        n_paths=n_paths,
        records=tuple(records[:max_records]),
        failure_mean_abs=failure_mean,
        failure_stderr=failure_se,
        failure_z=failure_z,
        failure_demonstrated=demonstrated,
    )


# ---------------------------------------------------------------------------
# moment checks


@dataclass(frozen=True)
class CheckVerdict:
    name: str
    passed: bool
    statistic: float
    threshold: float
    detail: str = ""

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "passed": self.passed,
            "statistic": self.statistic,
            "threshold": self.threshold,
            "detail": self.detail,
        }


class _Welford:
    """Running mean and variance with a fixed, chunk-independent fold order."""

    def __init__(self):
        self.n = 0
        self.s1 = 0.0
        self.s2 = 0.0

    def add(self, values: NDArray[np.float64]) -> None:
        self.n += values.size
        self.s1 += float(np.sum(values))
        self.s2 += float(np.sum(values * values))

    @property
    def mean(self) -> float:
        return self.s1 / self.n

    @property
    def variance(self) -> float:
        return max(self.s2 / self.n - self.mean**2, 0.0)

    @property
    def stderr(self) -> float:
        return math.sqrt(self.variance / self.n)


def moment_checks(
    setup: ModelSetup,
    seed: int,
    n_paths: int,
    n_clocks: int = 256,
) -> list[CheckVerdict]:
    """Distributional sanity of the time-changed path across an ensemble.

    Martingale: the integral of a bounded deterministic integrand against the
    path, and the terminal path value itself, average to zero. Isometry: the
    squared integral matches the squared integrand against the clock, and the
    squared terminal value matches the terminal clock value, both tested on
    paired per-path differences so the clock noise cancels. Jump law: the
    increment across a clock jump, scaled by the root jump size, has unit
    variance. Rate budget: the squared rate integrated on either clock is
    the same number up to rounding.
    """
    ramp = Strategy.of_time(lambda t: 1.0 + 0.5 * t, label="ramp")
    integral_acc = _Welford()
    iso_acc = _Welford()
    terminal_acc = _Welford()
    quad_acc = _Welford()
    jump_acc = _Welford()
    worst_budget = 0.0
    for rng, lam, grids, n_w in _clock_groups(setup, seed, n_paths, n_clocks):
        v = ramp.decisions(lam, grids, None)
        d_lam = np.diff(grids.clock_values)
        quad = float(np.sum(v * v * d_lam))
        lam_T = float(grids.clock_values[-1])
        profile = repeat_to_market(setup.theta.decisions(lam, grids, None), grids)
        j1 = int(grids.idx_right[-1])
        ds_full = np.diff(grids.market)
        market_b = float(np.sum(profile[:j1] ** 2 * ds_full[:j1]))
        theta_phys = profile[grids.idx_right[:-1]]
        physical_b = float(np.sum(theta_phys**2 * d_lam))
        worst_budget = max(worst_budget, abs(market_b - physical_b))
        jump_cols = [
            (int(grids.idx_left[k]), int(grids.idx_right[k]))
            for k in np.nonzero(grids.idx_left < grids.idx_right)[0]
        ]
        done = 0
        while done < n_w:
            rows = min(2048, n_w - done)
            incr = rng.standard_normal((rows, ds_full.size)) * np.sqrt(ds_full)
            W = np.concatenate([np.zeros((rows, 1)), np.cumsum(incr, axis=1)], axis=1)
            M = W[:, grids.idx_right]
            integral = np.diff(M, axis=1) @ v
            integral_acc.add(integral)
            iso_acc.add(integral**2 - quad)
            terminal = M[:, -1]
            terminal_acc.add(terminal)
            quad_acc.add(terminal**2 - lam_T)
            for jl, jr in jump_cols:
                size = float(grids.market[jr] - grids.market[jl])
                jump_acc.add((W[:, jr] - W[:, jl]) / math.sqrt(size))
            done += rows
    checks = [
        CheckVerdict(
            name="martingale_integral",
            passed=bool(abs(integral_acc.mean) <= 3.0 * integral_acc.stderr),
            statistic=integral_acc.mean,
            threshold=3.0 * integral_acc.stderr,
            detail="mean integral of a bounded integrand against the path",
        ),
        CheckVerdict(
            name="martingale_terminal",
            passed=bool(abs(terminal_acc.mean) <= 3.0 * terminal_acc.stderr),
            statistic=terminal_acc.mean,
            threshold=3.0 * terminal_acc.stderr,
            detail="mean terminal value of the time-changed path",
        ),
        CheckVerdict(
            name="isometry",
            passed=bool(abs(iso_acc.mean) <= 3.0 * iso_acc.stderr),
            statistic=iso_acc.mean,
            threshold=3.0 * iso_acc.stderr,
            detail="squared integral minus squared integrand against the clock",
        ),
        CheckVerdict(
            name="terminal_variance",
            passed=bool(abs(quad_acc.mean) <= 3.0 * quad_acc.stderr),
            statistic=quad_acc.mean,
            threshold=3.0 * quad_acc.stderr,
            detail="squared terminal path value minus terminal clock value",
        ),
    ]
    if jump_acc.n > 1:
        var = jump_acc.variance * jump_acc.n / (jump_acc.n - 1)
        band = 3.0 * math.sqrt(2.0 / (jump_acc.n - 1))
        checks.append(
            CheckVerdict(
                name="jump_variance",
                passed=bool(abs(var - 1.0) <= band),
                statistic=var,
                threshold=band,
                detail="variance of jump increments scaled by the root jump size",
            )
        )
    checks.append(
        CheckVerdict(
            name="rate_budget",
            passed=bool(worst_budget <= 1e-10),
            statistic=worst_budget,
            threshold=1e-10,
            detail="squared rate integrated on each clock, worst mismatch",
        )
    )
    return checks


# ---------------------------------------------------------------------------
# convergence sweep


@dataclass(frozen=True)
class ConvergenceReport:
    integrand: str
    grid_sizes: tuple
    rms: tuple
    ratios: tuple
    window: tuple
    passed: bool
    n_paths: int

    def to_dict(self) -> dict:
        return {
            "integrand": self.integrand,
            "grid_sizes": [list(g) for g in self.grid_sizes],
            "rms": list(self.rms),
            "ratios": list(self.ratios),
            "window": list(self.window),
            "passed": self.passed,
            "n_paths": self.n_paths,
        }


def convergence_sweep(
    setup: ModelSetup,
    seed: int,
    n_paths: int,
    integrand: str = "smooth_time",
    levels: int = 3,
    refine: int = 4,
    window: tuple[float, float] = (1.2, 2.8),
    workers: int = 1,
) -> ConvergenceReport:
    """Measure how fast the forward transport discrepancy shrinks under refinement.

    ``smooth_time`` uses a deterministic integrand of physical time, composed
    with the clock inverse pointwise on the market side; its discrepancy
    scales with the step, one order per refinement level. ``rough_path`` uses
    the same smooth function read off the Brownian history on each side, so
    the mismatch inside each step is itself diffusive and the discrepancy
    scales with the root of the step. The report states the measured ratios
    against the acceptance window; it does not grade on expectations.
    """
    if integrand not in ("smooth_time", "rough_path"):
        raise InvalidSpecError(f"unknown integrand family {integrand!r}")
    sizes = []
    rms_values = []
    for level in range(levels):
        n_phys = setup.n_physical * refine**level
        n_mkt = setup.n_market * refine**level
        level_setup = ModelSetup(
            clock=setup.clock,
            theta=setup.theta,
            T=setup.T,
            T_bar=setup.T_bar,
            n_physical=n_phys,
            n_market=n_mkt,
            S0=setup.S0,
        )
        fixed = _fixed_pair(level_setup)

        def run(lo: int, hi: int) -> list:
            out = []
            for i in range(lo, hi):
                rng = path_rng(seed, (level << 40) + i)
                bundle = make_bundle(level_setup, rng, fixed)
                if integrand == "smooth_time":
                    rec = verify_forward(Strategy.of_time(np.sin), bundle, path_id=i)
                    out.append(rec["lhs"] - rec["rhs"])
                else:
                    lhs = float(ito_integral_M(np.sin(bundle.M[:-1]), bundle)[-1])
                    j1 = int(bundle.grids.idx_right[-1])
                    s1 = float(bundle.grids.market[j1])
                    rhs = float(
                        ito_integral_W(np.sin(bundle.W[:-1]), bundle, 0.0, s1)[-1]
                    )
                    out.append(lhs - rhs)
            return out

        diffs = np.asarray(_map_paths(run, n_paths, workers))
        sizes.append((n_phys, n_mkt))
        rms_values.append(float(np.sqrt(np.mean(diffs**2))))
    # a vanishing fine-level RMS leaves no order to measure; report inf/nan
    # rather than crash, and let the window test fail the sweep
    ratios = tuple(
        rms_values[k] / rms_values[k + 1]
        if rms_values[k + 1] > 0.0
        else (math.inf if rms_values[k] > 0.0 else math.nan)
        for k in range(len(rms_values) - 1)
    )
    passed = all(window[0] <= r <= window[1] for r in ratios)
    return ConvergenceReport(
        integrand=integrand,
        grid_sizes=tuple(sizes),
        rms=tuple(rms_values),
        ratios=ratios,
        window=tuple(window),
        passed=bool(passed),
        n_paths=n_paths,
    )
