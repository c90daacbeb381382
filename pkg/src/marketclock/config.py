"""Sectioned key-value run configuration: parse, validate, serialize.

The format is INI-style with five sections. ``time_change`` picks the clock
kind and its parameters, ``market`` sets horizons and the investor, ``strategy``
sets the rate process, ``simulation`` sizes the Monte Carlo run, and ``checks``
tunes thresholds. Keys are case-sensitive. Unknown sections or keys are
errors with the offending line number, so a typo never silently becomes a
default. ``parse -> serialize -> parse`` is the identity, and the serialized
form spells out every default, which makes reports self-describing.

Example::

    [time_change]
    kind = subordinator
    drift = 1.0
    jump_intensity = 1.0
    jump_mean = 1.0

    [market]
    T = 1.0
    T_bar = 8.0
    p = 2.0
    x = 1.0

``workers`` is the one execution-only key: it never changes any number in
any report, so the config echo embedded in summaries omits it.
"""

from __future__ import annotations

import configparser
import io
import math
import re
from dataclasses import dataclass, fields

from .errors import ConfigError
from .harness import PERTURBATION_FAMILIES, ModelSetup
from .portfolio import MarketScenario
from .strategies import Strategy
from .timechange import (
    DeterministicPiecewiseSpec,
    IntegratedDiffusionSpec,
    LinearSpec,
    SubordinatorDriftSpec,
    build_deterministic,
    build_linear,
)

__all__ = [
    "RunConfig",
    "parse_config",
    "serialize_config",
    "build_setup",
    "build_scenario",
    "config_dict",
]

CLOCK_KINDS = ("linear", "piecewise", "subordinator", "diffusion")
STRATEGY_KINDS = ("constant", "affine")
INTEGRAND_KINDS = ("smooth_time", "rough_path")

_BOOLEANS = {"true": True, "false": False, "yes": True, "no": False, "1": True, "0": False}


@dataclass(frozen=True)
class RunConfig:
    """Fully-resolved run description; every field has its final value."""

    # time_change
    clock_kind: str
    rate: float = 1.0
    slopes: tuple = (1.0,)
    breakpoints: tuple = ()
    jumps: tuple = ()
    drift: float = 1.0
    jump_intensity: float = 1.0
    jump_mean: float = 1.0
    reversion: float = 1.0
    level: float = 1.0
    vol: float = 0.5
    v0: float = 1.0
    # market
    T: float = 1.0
    T_bar: float = 1.0
    S0: float = 1.0
    p: float = 2.0
    x: float = 1.0
    t: float = 0.0
    # strategy
    theta_kind: str = "constant"
    theta_value: float = 0.0
    theta_intercept: float = 0.0
    theta_slope: float = 0.0
    # simulation
    n_paths: int = 10000
    n_physical: int = 4096
    n_market: int = 4096
    seed: int = 0
    workers: int = 1
    n_clocks: int = 64
    # checks
    identity_tolerance: float = 1e-12
    strategy_tolerance: float = 1e-10
    z_limit: float = 3.0
    scan_slack: float = 2.0
    epsilons: tuple = (-0.5, -0.25, 0.25, 0.5)
    families: tuple = PERTURBATION_FAMILIES
    convergence: bool = False
    convergence_levels: int = 3
    convergence_integrand: str = "smooth_time"
    demonstrate_failure: bool = True


# Per-section key tables: name -> (parser tag, field name). Clock and strategy
# parameter keys are admitted only for the kind that uses them.

_CLOCK_KEYS = {
    "linear": {"rate": ("float", "rate")},
    "piecewise": {
        "slopes": ("floats", "slopes"),
        "breakpoints": ("floats", "breakpoints"),
        "jumps": ("jumps", "jumps"),
    },
    "subordinator": {
        "drift": ("float", "drift"),
        "jump_intensity": ("float", "jump_intensity"),
        "jump_mean": ("float", "jump_mean"),
    },
    "diffusion": {
        "reversion": ("float", "reversion"),
        "level": ("float", "level"),
        "vol": ("float", "vol"),
        "v0": ("float", "v0"),
    },
}

_MARKET_KEYS = {
    "T": ("float", "T"),
    "T_bar": ("float", "T_bar"),
    "S0": ("float", "S0"),
    "p": ("float", "p"),
    "x": ("float", "x"),
    "t": ("float", "t"),
}

_STRATEGY_KEYS = {
    "constant": {"value": ("float", "theta_value")},
    "affine": {
        "intercept": ("float", "theta_intercept"),
        "slope": ("float", "theta_slope"),
    },
}

_SIMULATION_KEYS = {
    "n_paths": ("int", "n_paths"),
    "n_physical": ("int", "n_physical"),
    "n_market": ("int", "n_market"),
    "seed": ("int", "seed"),
    "workers": ("int", "workers"),
    "n_clocks": ("int", "n_clocks"),
}

_CHECKS_KEYS = {
    "identity_tolerance": ("float", "identity_tolerance"),
    "strategy_tolerance": ("float", "strategy_tolerance"),
    "z_limit": ("float", "z_limit"),
    "scan_slack": ("float", "scan_slack"),
    "epsilons": ("floats", "epsilons"),
    "families": ("words", "families"),
    "convergence": ("bool", "convergence"),
    "convergence_levels": ("int", "convergence_levels"),
    "convergence_integrand": ("word", "convergence_integrand"),
    "demonstrate_failure": ("bool", "demonstrate_failure"),
}

_SECTIONS = ("time_change", "market", "strategy", "simulation", "checks")


class _Lines:
    """Locate sections and keys in the raw text for error messages."""

    def __init__(self, text: str):
        self.section_line: dict[str, int] = {}
        self.key_line: dict[tuple[str, str], int] = {}
        current = None
        for i, raw in enumerate(text.splitlines(), start=1):
            stripped = raw.strip()
            if not stripped or stripped.startswith(("#", ";")):
                continue
            if stripped.startswith("[") and stripped.endswith("]"):
                current = stripped[1:-1].strip()
                self.section_line.setdefault(current, i)
                continue
            m = re.match(r"([^=:]+)[=:]", stripped)
            if m and current is not None:
                self.key_line.setdefault((current, m.group(1).strip()), i)

    def of(self, section: str, key: str | None = None) -> int | None:
        if key is not None and (section, key) in self.key_line:
            return self.key_line[(section, key)]
        return self.section_line.get(section)


def _convert(tag: str, raw: str, key: str, line: int | None):
    raw = raw.strip()
    try:
        if tag == "float":
            return float(raw)
        if tag == "int":
            return int(raw)
        if tag == "bool":
            if raw.lower() not in _BOOLEANS:
                raise ValueError
            return _BOOLEANS[raw.lower()]
        if tag == "floats":
            return tuple(float(part) for part in raw.split(",") if part.strip()) if raw else ()
        if tag == "jumps":
            out = []
            for part in raw.split(","):
                part = part.strip()
                if not part:
                    continue
                when, _, size = part.partition(":")
                if not size:
                    raise ValueError
                out.append((float(when), float(size)))
            return tuple(out)
        if tag in ("word", "words"):
            if tag == "word":
                return raw
            return tuple(part.strip() for part in raw.split(",") if part.strip())
    except ValueError:
        raise ConfigError(f"{key} has malformed value {raw!r}", line) from None
    raise ConfigError(f"internal: unknown value tag {tag}")  # pragma: no cover


def parse_config(text: str) -> RunConfig:
    """Parse and validate configuration text into a :class:`RunConfig`.

    Defaults are filled, derived quantities resolved (a deterministic clock
    gets ``T_bar`` set to its own terminal value when the key is absent), and
    every violation reports the offending line.
    """
    lines = _Lines(text)
    parser = configparser.ConfigParser(
        interpolation=None, delimiters=("=",), comment_prefixes=("#", ";"), strict=True
    )
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        line = getattr(exc, "lineno", None)
        if line is None:
            errors = getattr(exc, "errors", None)
            if errors:
                line = errors[0][0]
        raise ConfigError(f"malformed config: {exc.message.splitlines()[0]}", line) from None

    for section in parser.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown section [{section}]", lines.of(section))

    values: dict[str, object] = {}

    def read_section(section: str, table: dict) -> None:
        if not parser.has_section(section):
            return
        for key, raw in parser.items(section):
            if key not in table:
                raise ConfigError(
                    f"unknown key {key!r} in [{section}]", lines.of(section, key)
                )
            tag, field_name = table[key]
            values[field_name] = _convert(tag, raw, key, lines.of(section, key))

    # time_change: kind gates which parameter keys are admitted
    if not parser.has_section("time_change"):
        raise ConfigError("missing required section [time_change]")
    clock_kind = parser.get("time_change", "kind", fallback=None)
    if clock_kind is None:
        raise ConfigError("time_change needs a 'kind' key", lines.of("time_change"))
    clock_kind = clock_kind.strip()
    if clock_kind not in CLOCK_KINDS:
        raise ConfigError(
            f"unknown clock kind {clock_kind!r}; choose from {', '.join(CLOCK_KINDS)}",
            lines.of("time_change", "kind"),
        )
    values["clock_kind"] = clock_kind
    table = dict(_CLOCK_KEYS[clock_kind])
    table["kind"] = ("word", "clock_kind")
    read_section("time_change", table)

    # strategy: same gating
    theta_kind = "constant"
    if parser.has_section("strategy"):
        theta_kind = parser.get("strategy", "kind", fallback="constant").strip()
        if theta_kind not in STRATEGY_KINDS:
            raise ConfigError(
                f"unknown strategy kind {theta_kind!r}; choose from {', '.join(STRATEGY_KINDS)}",
                lines.of("strategy", "kind"),
            )
    values["theta_kind"] = theta_kind
    table = dict(_STRATEGY_KEYS[theta_kind])
    table["kind"] = ("word", "theta_kind")
    read_section("strategy", table)

    if not parser.has_section("market"):
        raise ConfigError("missing required section [market]")
    read_section("market", _MARKET_KEYS)
    read_section("simulation", _SIMULATION_KEYS)
    read_section("checks", _CHECKS_KEYS)

    for key in ("p", "x"):
        if key not in values:
            raise ConfigError(f"[market] needs a {key!r} key", lines.of("market"))

    cfg = RunConfig(**{k: v for k, v in values.items() if k != "T_bar"})
    t_bar = values.get("T_bar")

    # -- semantic validation, with line numbers where the value came from ----
    def fail(section: str, key: str, message: str):
        raise ConfigError(message, lines.of(section, key))

    if cfg.p in (0.0, 1.0):
        fail("market", "p", "p must not be 0 or 1")
    if cfg.x <= 0.0:
        fail("market", "x", "x must be positive")
    if cfg.T <= 0.0:
        fail("market", "T", "T must be positive")
    if not 0.0 <= cfg.t < cfg.T:
        fail("market", "t", "t must lie in [0, T)")
    if cfg.S0 <= 0.0:
        fail("market", "S0", "S0 must be positive")
    for key, minimum in (("n_paths", 1), ("n_physical", 2), ("n_market", 2), ("workers", 1), ("n_clocks", 1)):
        if getattr(cfg, key) < minimum:
            fail("simulation", key, f"{key} must be at least {minimum}")
    if cfg.seed < 0 or cfg.seed >= 1 << 64:
        fail("simulation", "seed", "seed must fit in an unsigned 64-bit integer")
    for key in ("identity_tolerance", "strategy_tolerance", "z_limit", "scan_slack"):
        if getattr(cfg, key) <= 0.0:
            fail("checks", key, f"{key} must be positive")
    if cfg.convergence_levels < 2:
        fail("checks", "convergence_levels", "convergence_levels must be at least 2")
    if cfg.convergence_integrand not in INTEGRAND_KINDS:
        fail(
            "checks",
            "convergence_integrand",
            f"convergence_integrand must be one of {', '.join(INTEGRAND_KINDS)}",
        )
    for family in cfg.families:
        if family not in PERTURBATION_FAMILIES:
            fail(
                "checks",
                "families",
                f"unknown perturbation family {family!r}; choose from {', '.join(PERTURBATION_FAMILIES)}",
            )

    # -- resolve T_bar ---------------------------------------------------
    if t_bar is None:
        if clock_kind in ("subordinator", "diffusion"):
            raise ConfigError(
                "T_bar is required for stochastic clocks", lines.of("market")
            )
        t_bar = _terminal_clock_value(cfg)
    cfg = RunConfig(**{**_as_dict(cfg), "T_bar": float(t_bar)})
    if cfg.T_bar <= 0.0:
        fail("market", "T_bar", "T_bar must be positive")
    if clock_kind in ("linear", "piecewise"):
        try:
            _build_clock_spec(cfg)
            _build_deterministic_path(cfg)
        except Exception as exc:
            raise ConfigError(str(exc), lines.of("time_change")) from None
    return cfg


def _as_dict(cfg: RunConfig) -> dict:
    return {f.name: getattr(cfg, f.name) for f in fields(cfg)}


def _build_clock_spec(cfg: RunConfig):
    if cfg.clock_kind == "linear":
        return LinearSpec(rate=cfg.rate)
    if cfg.clock_kind == "piecewise":
        return DeterministicPiecewiseSpec(
            slopes=cfg.slopes, breakpoints=cfg.breakpoints, jumps=cfg.jumps
        )
    if cfg.clock_kind == "subordinator":
        return SubordinatorDriftSpec(
            drift=cfg.drift, jump_intensity=cfg.jump_intensity, jump_mean=cfg.jump_mean
        )
    return IntegratedDiffusionSpec(
        reversion=cfg.reversion, level=cfg.level, vol=cfg.vol, v0=cfg.v0
    )


def _build_deterministic_path(cfg: RunConfig):
    spec = _build_clock_spec(cfg)
    if cfg.clock_kind == "linear":
        return build_linear(spec.rate, cfg.T, cfg.T_bar)
    return build_deterministic(spec, cfg.T, cfg.T_bar)


def _terminal_clock_value(cfg: RunConfig) -> float:
    """Clock value at the physical horizon, for deriving a tight ``T_bar``."""
    probe = RunConfig(**{**_as_dict(cfg), "T_bar": math.inf})
    lam = _build_deterministic_path(probe)
    return float(lam.value(cfg.T))


def _theta_strategy(cfg: RunConfig) -> Strategy:
    if cfg.theta_kind == "constant":
        return Strategy.constant(cfg.theta_value)
    a, b = cfg.theta_intercept, cfg.theta_slope
    return Strategy.of_time(lambda t: a + b * t, label=f"affine {a:g}+{b:g}t")


def build_setup(cfg: RunConfig) -> ModelSetup:
    """Model assembly: clock spec, rate process, horizons, grid sizes."""
    return ModelSetup(
        clock=_build_clock_spec(cfg),
        theta=_theta_strategy(cfg),
        T=cfg.T,
        T_bar=cfg.T_bar,
        n_physical=cfg.n_physical,
        n_market=cfg.n_market,
        S0=cfg.S0,
    )


def build_scenario(cfg: RunConfig) -> MarketScenario:
    return MarketScenario(p=cfg.p, x=cfg.x, t=cfg.t)


def serialize_config(cfg: RunConfig) -> str:
    """Render a config with every default explicit, in a fixed layout.

    The output reparses to an equal :class:`RunConfig`; floats use ``repr``
    so values survive the round trip bit for bit.
    """
    out = io.StringIO()

    def emit(section: str, pairs: list[tuple[str, str]]):
        out.write(f"[{section}]\n")
        for key, rendered in pairs:
            out.write(f"{key} = {rendered}\n")
        out.write("\n")

    def flt(v: float) -> str:
        return repr(float(v))

    clock_pairs = [("kind", cfg.clock_kind)]
    if cfg.clock_kind == "linear":
        clock_pairs.append(("rate", flt(cfg.rate)))
    elif cfg.clock_kind == "piecewise":
        clock_pairs.append(("slopes", ", ".join(flt(v) for v in cfg.slopes)))
        clock_pairs.append(("breakpoints", ", ".join(flt(v) for v in cfg.breakpoints)))
        clock_pairs.append(("jumps", ", ".join(f"{flt(a)}:{flt(b)}" for a, b in cfg.jumps)))
    elif cfg.clock_kind == "subordinator":
        clock_pairs += [
            ("drift", flt(cfg.drift)),
            ("jump_intensity", flt(cfg.jump_intensity)),
            ("jump_mean", flt(cfg.jump_mean)),
        ]
    else:
        clock_pairs += [
            ("reversion", flt(cfg.reversion)),
            ("level", flt(cfg.level)),
            ("vol", flt(cfg.vol)),
            ("v0", flt(cfg.v0)),
        ]
    emit("time_change", clock_pairs)
    emit(
        "market",
        [
            ("T", flt(cfg.T)),
            ("T_bar", flt(cfg.T_bar)),
            ("S0", flt(cfg.S0)),
            ("p", flt(cfg.p)),
            ("x", flt(cfg.x)),
            ("t", flt(cfg.t)),
        ],
    )
    if cfg.theta_kind == "constant":
        emit("strategy", [("kind", "constant"), ("value", flt(cfg.theta_value))])
    else:
        emit(
            "strategy",
            [
                ("kind", "affine"),
                ("intercept", flt(cfg.theta_intercept)),
                ("slope", flt(cfg.theta_slope)),
            ],
        )
    emit(
        "simulation",
        [
            ("n_paths", str(cfg.n_paths)),
            ("n_physical", str(cfg.n_physical)),
            ("n_market", str(cfg.n_market)),
            ("seed", str(cfg.seed)),
            ("workers", str(cfg.workers)),
            ("n_clocks", str(cfg.n_clocks)),
        ],
    )
    emit(
        "checks",
        [
            ("identity_tolerance", flt(cfg.identity_tolerance)),
            ("strategy_tolerance", flt(cfg.strategy_tolerance)),
            ("z_limit", flt(cfg.z_limit)),
            ("scan_slack", flt(cfg.scan_slack)),
            ("epsilons", ", ".join(flt(v) for v in cfg.epsilons)),
            ("families", ", ".join(cfg.families)),
            ("convergence", "true" if cfg.convergence else "false"),
            ("convergence_levels", str(cfg.convergence_levels)),
            ("convergence_integrand", cfg.convergence_integrand),
            ("demonstrate_failure", "true" if cfg.demonstrate_failure else "false"),
        ],
    )
    return out.getvalue().rstrip("\n") + "\n"


def config_dict(cfg: RunConfig, include_execution: bool = False) -> dict:
    """Config as a JSON-ready dict for report embedding.

    ``workers`` never changes a computed number, so by default it is left
    out; two runs that differ only in worker count then embed identical
    config echoes, keeping report files hash-comparable.
    """
    data = _as_dict(cfg)
    data["jumps"] = [list(pair) for pair in data["jumps"]]
    for key in ("slopes", "breakpoints", "epsilons", "families"):
        data[key] = list(data[key])
    if not include_execution:
        data.pop("workers")
    return data
