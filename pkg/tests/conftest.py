"""Shared fixtures: reference clocks and small path bundles."""

import numpy as np
import pytest

from marketclock import (
    DeterministicPiecewiseSpec,
    ModelSetup,
    Strategy,
    build_deterministic,
    build_linear,
    make_bundle,
    path_rng,
)

# Worked reference clock used throughout: unit slope on [0, 1), a jump of
# size 1 at t = 1, unit slope on (1, 2].  So Lambda(0.5) = 0.5,
# Lambda(1-) = 1, Lambda(1) = 2, Lambda(2) = 3.
REFERENCE_SPEC = DeterministicPiecewiseSpec(
    slopes=(1.0, 1.0), breakpoints=(1.0,), jumps=((1.0, 1.0),)
)


@pytest.fixture
def reference_clock():
    return build_deterministic(REFERENCE_SPEC, T=2.0, T_bar=3.0)


@pytest.fixture
def identity_clock():
    return build_linear(1.0, T=1.0)


@pytest.fixture
def identity_bundle():
    """Bundle on the identity clock with theta = 0, modest grids."""
    setup = ModelSetup(
        clock=build_linear(1.0, T=1.0),
        theta=Strategy.constant(0.0),
        T=1.0,
        T_bar=1.0,
        n_physical=64,
        n_market=64,
    )
    return make_bundle(setup, path_rng(11, 0))


@pytest.fixture
def reference_bundle():
    """Bundle on the jumpy reference clock with theta = 0."""
    setup = ModelSetup(
        clock=build_deterministic(REFERENCE_SPEC, T=2.0, T_bar=3.0),
        theta=Strategy.constant(0.0),
        T=2.0,
        T_bar=3.0,
        n_physical=128,
        n_market=128,
    )
    return make_bundle(setup, path_rng(11, 0))


def bundle_for(clock, theta, T, T_bar, seed=0, n_physical=128, n_market=128):
    """Build one bundle for ad-hoc clock/strategy combinations."""
    setup = ModelSetup(
        clock=clock, theta=theta, T=T, T_bar=T_bar,
        n_physical=n_physical, n_market=n_market,
    )
    return make_bundle(setup, path_rng(seed, 0))


def rel_diff(a, b):
    scale = max(abs(float(a)), abs(float(b)), 1e-300)
    return abs(float(a) - float(b)) / scale


# Acceptance verdict lines are echoed after the run so they stay visible
# under default output capture; test_acceptance.verdict() appends here.
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.line(line)
