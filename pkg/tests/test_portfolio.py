"""Power utility, closed-form optimal strategies, and wealth accounting."""

import math

import numpy as np
import pytest

from marketclock import (
    DomainError,
    InvalidSpecError,
    MarketScenario,
    Strategy,
    SubordinatorDriftSpec,
    build_linear,
    conditional_optimal_value,
    conditional_value_variant,
    optimal_market_strategy,
    optimal_physical_strategy,
    physical_rate_decisions,
    power_utility,
    pullback,
    quadratic_risk_budget,
    sample_subordinator_drift,
    wealth,
)

from conftest import bundle_for, rel_diff


def subordinator_bundle(seed, theta, n=256):
    spec = SubordinatorDriftSpec(drift=1.0, jump_intensity=2.0, jump_mean=1.0)
    clock = sample_subordinator_drift(spec, T=1.0, T_bar=60.0, rng=np.random.default_rng(seed))
    return bundle_for(clock, theta, T=1.0, T_bar=60.0, seed=seed, n_physical=n, n_market=n)


def test_power_utility_values():
    assert power_utility(4.0, 2.0) == -0.25
    assert power_utility(4.0, 0.5) == 4.0
    for p in (0.5, 2.0, 3.0):
        assert power_utility(1.0, p) == 1.0 / (1.0 - p), f"U(1) wrong for p={p}"


def test_power_utility_ruin_sentinels():
    assert power_utility(0.0, 2.0) == -math.inf, "ruin is infinitely bad for p > 1"
    assert power_utility(0.0, 0.5) == 0.0, "ruin is merely worthless for p < 1"
    with pytest.raises(DomainError):
        power_utility(-1.0, 2.0)
    arr = power_utility(np.array([0.0, 1.0, 4.0]), 2.0)
    np.testing.assert_array_equal(arr, [-math.inf, -1.0, -0.25])


def test_scenario_rejects_degenerate_parameters():
    with pytest.raises(InvalidSpecError):
        MarketScenario(p=0.0, x=1.0)
    with pytest.raises(InvalidSpecError):
        MarketScenario(p=1.0, x=1.0)
    with pytest.raises(InvalidSpecError):
        MarketScenario(p=2.0, x=0.0)
    with pytest.raises(InvalidSpecError):
        MarketScenario(p=2.0, x=1.0, t=-0.5)


def test_conditional_value_frozen_oracles():
    # identity clock, unit rate, p = 2, x = 1, unit window:
    # U(1) * exp(((1-2)/4) * 1) = -exp(-1/4)
    b = bundle_for(build_linear(1.0, T=1.0), Strategy.constant(1.0), T=1.0, T_bar=1.0)
    got = conditional_optimal_value(MarketScenario(p=2.0, x=1.0), b)
    assert rel_diff(got, -0.7788007830714049) <= 1e-12, f"value {got!r}"

    # p = 1/2, rate 0.5: 2 * exp(0.5 * 0.25) = 2 * exp(1/8)
    b2 = bundle_for(build_linear(1.0, T=1.0), Strategy.constant(0.5), T=1.0, T_bar=1.0)
    got2 = conditional_optimal_value(MarketScenario(p=0.5, x=1.0), b2)
    assert rel_diff(got2, 2.0 * math.exp(0.125)) <= 1e-12, f"value {got2!r}"


def test_conditional_value_uses_full_clock_increase(reference_clock):
    # unit rate on the jumpy reference clock: budget is the total increase 3
    b = bundle_for(reference_clock, Strategy.constant(1.0), T=2.0, T_bar=3.0)
    got = conditional_optimal_value(MarketScenario(p=2.0, x=1.0), b)
    assert rel_diff(got, -math.exp(-0.75)) <= 1e-12, f"value {got!r}"


def test_conditional_value_homogeneity(reference_clock):
    b = bundle_for(reference_clock, Strategy.constant(1.0), T=2.0, T_bar=3.0)
    for p in (0.5, 2.0):
        v1 = conditional_optimal_value(MarketScenario(p=p, x=1.0), b)
        v2 = conditional_optimal_value(MarketScenario(p=p, x=2.0), b)
        assert rel_diff(v2, 2.0 ** (1.0 - p) * v1) <= 1e-12, (
            f"doubling capital must scale the value by 2^(1-p) at p={p}"
        )


def test_variant_value_disagrees_and_is_reported():
    b = bundle_for(build_linear(1.0, T=1.0), Strategy.constant(1.0), T=1.0, T_bar=1.0)
    scenario = MarketScenario(p=2.0, x=1.0)
    formula = conditional_optimal_value(scenario, b)
    variant = conditional_value_variant(scenario, b)
    assert rel_diff(variant, 0.25 * math.e) <= 1e-12, f"variant {variant!r}"
    assert abs(formula - variant) > 1.0, "the two closed forms genuinely differ here"


def test_zero_rate_keeps_wealth_flat(reference_bundle):
    scenario = MarketScenario(p=2.0, x=1.5)
    amount, market_path = optimal_market_strategy(scenario, reference_bundle)
    np.testing.assert_array_equal(amount.values, np.zeros_like(amount.values))
    np.testing.assert_array_equal(market_path.values, np.full(market_path.values.size, 1.5))
    amounts, phys_path = optimal_physical_strategy(scenario, reference_bundle)
    np.testing.assert_array_equal(amounts, np.zeros_like(amounts))
    np.testing.assert_array_equal(phys_path.values, np.full(phys_path.values.size, 1.5))
    assert conditional_optimal_value(scenario, reference_bundle) == power_utility(1.5, 2.0)


def test_market_wealth_matches_constant_rate_closed_form():
    c, p, x = 0.8, 2.0, 1.3
    b = bundle_for(build_linear(1.0, T=1.0), Strategy.constant(c), T=1.0, T_bar=1.0, seed=21)
    _, path = optimal_market_strategy(MarketScenario(p=p, x=x), b)
    s = path.times
    drift = (c * c / p - c * c / (2.0 * p * p)) * s
    closed = x * np.exp((c / p) * b.W + drift)
    np.testing.assert_allclose(
        path.values, closed, rtol=1e-12,
        err_msg="constant-rate wealth has an explicit lognormal form",
    )


def test_dual_strategy_constructions_agree():
    scenario = MarketScenario(p=2.0, x=1.0)
    for seed in range(10):
        b = subordinator_bundle(seed, Strategy.constant(1.0))
        direct, path_d = optimal_physical_strategy(scenario, b, method="direct")
        composed, path_c = optimal_physical_strategy(scenario, b, method="pullback")
        worst = max(
            rel_diff(a, c) for a, c in zip(direct, composed)
        )
        assert worst <= 1e-10, f"strategy constructions diverge by {worst:.3e} on seed {seed}"
        worst_w = max(rel_diff(a, c) for a, c in zip(path_d.values, path_c.values))
        assert worst_w <= 1e-10, f"wealth paths diverge by {worst_w:.3e} on seed {seed}"


def test_identity_clock_strategies_coincide(identity_clock):
    scenario = MarketScenario(p=2.0, x=1.0)
    b = bundle_for(identity_clock, Strategy.constant(0.6), T=1.0, T_bar=1.0, seed=5)
    amount, market_path = optimal_market_strategy(scenario, b)
    amounts, phys_path = optimal_physical_strategy(scenario, b)
    np.testing.assert_allclose(amounts, amount.values, rtol=1e-13, atol=0)
    np.testing.assert_allclose(phys_path.values, market_path.values, rtol=1e-13, atol=0)


def test_strategies_scale_linearly_in_capital(reference_clock):
    b = bundle_for(reference_clock, Strategy.constant(0.6), T=2.0, T_bar=3.0, seed=5)
    one = MarketScenario(p=2.0, x=1.0)
    two = MarketScenario(p=2.0, x=2.0)
    a1, p1 = optimal_market_strategy(one, b)
    a2, p2 = optimal_market_strategy(two, b)
    np.testing.assert_array_equal(a2.values, 2.0 * a1.values)
    np.testing.assert_array_equal(p2.values, 2.0 * p1.values)
    d1, w1 = optimal_physical_strategy(one, b)
    d2, w2 = optimal_physical_strategy(two, b)
    np.testing.assert_array_equal(d2, 2.0 * d1)
    np.testing.assert_array_equal(w2.values, 2.0 * w1.values)


def test_optimal_wealth_is_strictly_positive():
    scenario = MarketScenario(p=2.0, x=1.0)
    for seed in range(10):
        b = subordinator_bundle(seed, Strategy.constant(1.5))
        _, market_path = optimal_market_strategy(scenario, b)
        _, phys_path = optimal_physical_strategy(scenario, b)
        assert np.all(market_path.values > 0.0), f"market wealth hit 0 on seed {seed}"
        assert np.all(phys_path.values > 0.0), f"physical wealth hit 0 on seed {seed}"


def test_risk_budget_identity_across_clocks():
    theta = Strategy.of_time(lambda t: 1.0 + 0.5 * np.asarray(t))
    for seed in range(10):
        b = subordinator_bundle(seed, theta)
        market_side, physical_side = quadratic_risk_budget(b)
        assert rel_diff(market_side, physical_side) <= 1e-12, (
            f"squared-rate budgets disagree on seed {seed}: "
            f"{market_side!r} vs {physical_side!r}"
        )


def test_physical_rate_decisions_read_back(reference_clock):
    theta = Strategy.of_time(lambda t: 1.0 + np.asarray(t))
    b = bundle_for(reference_clock, theta, T=2.0, T_bar=3.0, seed=5)
    expected = theta.decisions(b.lam, b.grids, b.M)
    np.testing.assert_array_equal(physical_rate_decisions(b), expected)


def test_linear_account_zero_and_unit_amounts(reference_bundle):
    b = reference_bundle
    flat = wealth(np.zeros(b.grids.n_steps), b, x=2.0)
    np.testing.assert_array_equal(flat.values, np.full(flat.values.size, 2.0))
    full = wealth(np.ones(b.grids.n_steps), b, x=2.0)
    np.testing.assert_allclose(
        full.values, 2.0 + b.S - b.S[0], rtol=0, atol=1e-14,
        err_msg="holding one share telescopes to x + S(t) - S(0)",
    )
    with pytest.raises(InvalidSpecError):
        wealth(np.ones(3), b, x=1.0)


def test_linear_account_approaches_exponential_wealth():
    # the trading account compounds additively per step; against the
    # exponential construction the gap shrinks as the grid refines
    scenario = MarketScenario(p=2.0, x=1.0)
    errors = {16: [], 4: [], 1: []}
    for seed in range(50):
        b = bundle_for(build_linear(1.0, T=1.0), Strategy.constant(1.0),
                       T=1.0, T_bar=1.0, seed=seed, n_physical=1024, n_market=1024)
        amounts, path = optimal_physical_strategy(scenario, b)
        target = path.values[-1]
        for stride in errors:
            idx = np.arange(0, b.grids.n_steps + 1, stride)
            coarse = 1.0 + np.sum(amounts[idx[:-1]] * np.diff(b.S[idx]))
            errors[stride].append(abs(coarse - target))
    rms = {k: float(np.sqrt(np.mean(np.square(v)))) for k, v in errors.items()}
    assert rms[4] < rms[16] and rms[1] < rms[4], (
        f"account error should fall with the step: {rms}"
    )
    assert rms[1] < 0.01, f"finest-grid account error {rms[1]:.4f} still large"


def test_market_amount_pulls_back_to_physical_strategy():
    scenario = MarketScenario(p=2.0, x=1.0)
    for seed in range(5):
        b = subordinator_bundle(seed, Strategy.constant(1.0))
        amount, _ = optimal_market_strategy(scenario, b)
        direct, _ = optimal_physical_strategy(scenario, b)
        composed = pullback(amount, b, require_adapted=False)
        worst = max(rel_diff(a, c) for a, c in zip(direct, composed))
        assert worst <= 1e-10, f"pullback of the market amount diverges on seed {seed}"
