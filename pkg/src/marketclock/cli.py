"""Command-line interface: config-driven runs with file reports.

Five commands share one calling convention::

    marketclock <command> --config run.ini [--out DIR] [--seed N] [--paths N]

``simulate`` writes path bundles as CSV, ``verify`` checks the transport
identities and path statistics, ``optimize`` builds the closed-form strategy
and tests its value, ``scan`` compares the strategy against perturbations,
and ``tower`` averages the conditional value over clock draws.

Every run writes ``summary.json`` (machine-parseable, sorted keys) and
``run_meta.json``. The summary and all CSVs are deterministic functions of
the config and seed for any worker count; ``run_meta.json`` carries the
wall-clock time and worker count and is the one file excluded from that
guarantee. Exit status: 0 when every enabled verdict passes, 1 when any
fails, 2 for unusable configs or arguments.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
from dataclasses import replace

import numpy as np

from .config import (
    RunConfig,
    build_scenario,
    build_setup,
    config_dict,
    parse_config,
)
from .errors import (
    ConfigError,
    DomainError,
    InadmissibleError,
    InvalidSpecError,
)
from .harness import (
    conditional_value_check,
    convergence_sweep,
    moment_checks,
    optimality_scan,
    run_ensemble,
    tower_check,
    verify_identities,
)
from .portfolio import optimal_physical_strategy, power_utility

__all__ = ["main"]


def _clean(obj):
    """JSON-safe copy: non-finite floats become null, tuples become lists."""
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def _verdict(name: str, passed: bool, statistic=None, threshold=None, detail: str = "", **extra) -> dict:
    out = {"name": name, "passed": bool(passed), "statistic": statistic, "threshold": threshold, "detail": detail}
    out.update(extra)
    return out


def _write_csv(path: str, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(float(v)) if isinstance(v, float) else v for v in row])


# ---------------------------------------------------------------------------
# commands: each returns (verdicts, reports, artifact file names)


def cmd_simulate(cfg: RunConfig, out_dir: str):
    setup = build_setup(cfg)
    artifacts = []
    n = 0
    sum_m = sum_m2 = sum_lam = 0.0
    for path_id, bundle in run_ensemble(setup, cfg.seed, cfg.n_paths, cfg.workers):
        prefix = os.path.join(out_dir, f"bundle_{path_id:05d}")
        main_csv, side_csv = bundle.to_csv(prefix)
        artifacts += [os.path.basename(main_csv), os.path.basename(side_csv)]
        terminal_m = float(bundle.M[-1])
        sum_m += terminal_m
        sum_m2 += terminal_m * terminal_m
        sum_lam += float(bundle.grids.clock_values[-1])
        n += 1
    report = {
        "n_paths": n,
        "terminal_path_mean": sum_m / n,
        "terminal_path_second_moment": sum_m2 / n,
        "terminal_clock_mean": sum_lam / n,
    }
    return [], {"ensemble": report}, artifacts


def cmd_verify(cfg: RunConfig, out_dir: str):
    setup = build_setup(cfg)
    report = verify_identities(
        setup,
        cfg.seed,
        cfg.n_paths,
        workers=cfg.workers,
        tolerance=cfg.identity_tolerance,
        demonstrate_failure=cfg.demonstrate_failure,
    )
    verdicts = [
        _verdict(
            "forward_identity",
            report.max_rel_forward <= cfg.identity_tolerance,
            statistic=report.max_rel_forward,
            threshold=cfg.identity_tolerance,
            detail="worst relative gap, physical-side integral vs transported market-side integral",
            identity="forward",
        ),
        _verdict(
            "backward_identity",
            report.max_rel_backward <= cfg.identity_tolerance,
            statistic=report.max_rel_backward,
            threshold=cfg.identity_tolerance,
            detail="worst relative gap, market-side integral vs transported physical-side integral",
            identity="backward",
        ),
        _verdict(
            "transport_roundtrip",
            report.roundtrip_exact,
            detail="pushforward then pullback returns the original decisions bit for bit",
        ),
    ]
    if cfg.demonstrate_failure and report.failure_demonstrated is not None:
        verdicts.append(
            _verdict(
                "backward_failure_demo",
                report.failure_demonstrated,
                statistic=report.failure_z,
                threshold=5.0,
                detail=(
                    "expected-fail: pass"
                    if report.failure_demonstrated
                    else "expected-fail: fail"
                ),
            )
        )
    for check in moment_checks(setup, cfg.seed, cfg.n_paths, n_clocks=cfg.n_clocks):
        verdicts.append(
            _verdict(check.name, check.passed, statistic=check.statistic, threshold=check.threshold, detail=check.detail)
        )
    reports = {"identities": {k: v for k, v in report.to_dict().items() if k != "records"}}
    if cfg.convergence:
        sweep = convergence_sweep(
            setup,
            cfg.seed,
            cfg.n_paths,
            integrand=cfg.convergence_integrand,
            levels=cfg.convergence_levels,
            workers=cfg.workers,
        )
        reports["convergence"] = sweep.to_dict()
        verdicts.append(
            _verdict(
                "convergence_order",
                sweep.passed,
                detail="RMS discrepancy ratios inside the acceptance window at every refinement",
            )
        )
    records_path = os.path.join(out_dir, "records.json")
    with open(records_path, "w", newline="\n") as fh:
        json.dump({"records": _clean(list(report.records))}, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return verdicts, reports, ["records.json"]


def cmd_optimize(cfg: RunConfig, out_dir: str):
    setup = build_setup(cfg)
    scenario = build_scenario(cfg)
    value = conditional_value_check(
        setup, scenario, cfg.seed, cfg.n_paths, n_clocks=cfg.n_clocks, z_limit=cfg.z_limit
    )
    max_rel = 0.0
    n_transport = min(cfg.n_paths, 100)
    first = None
    for path_id, bundle in run_ensemble(setup, cfg.seed, n_transport, cfg.workers):
        direct, direct_path = optimal_physical_strategy(scenario, bundle, method="direct")
        pulled, pulled_path = optimal_physical_strategy(scenario, bundle, method="pullback")
        for a, b in ((direct, pulled), (direct_path.values, pulled_path.values)):
            scale = np.maximum(np.abs(a), np.abs(b))
            diff = np.abs(a - b) / np.where(scale > 0.0, scale, 1.0)
            max_rel = max(max_rel, float(diff.max()))
        if first is None:
            first = (bundle, direct, direct_path)
    bundle, amounts, path = first
    i0 = bundle.grids.physical.size - path.values.size
    decisions = np.append(amounts[i0:], 0.0)
    _write_csv(
        os.path.join(out_dir, "optimize_path.csv"),
        ["t", "nu_opt", "V", "U_of_V"],
        zip(
            (float(v) for v in path.times),
            (float(v) for v in decisions),
            (float(v) for v in path.values),
            (float(power_utility(v, scenario.p)) for v in path.values),
        ),
    )
    verdicts = [
        _verdict(
            "value_formula",
            value.passed,
            statistic=value.z,
            threshold=cfg.z_limit,
            detail="simulated mean utility vs conditional closed-form value",
        ),
        _verdict(
            "strategy_transport",
            max_rel <= cfg.strategy_tolerance,
            statistic=max_rel,
            threshold=cfg.strategy_tolerance,
            detail=f"direct vs pulled-back construction on {n_transport} paths, every grid point",
        ),
    ]
    reports = {
        "value_check": value.to_dict(),
        "variant_gap": value.formula_mean - value.variant_mean,
    }
    return verdicts, reports, ["optimize_path.csv"]


def cmd_scan(cfg: RunConfig, out_dir: str):
    setup = build_setup(cfg)
    scenario = build_scenario(cfg)
    report = optimality_scan(
        setup,
        scenario,
        cfg.seed,
        cfg.n_paths,
        epsilons=cfg.epsilons,
        families=cfg.families,
        n_clocks=cfg.n_clocks,
        slack=cfg.scan_slack,
    )
    rows = [["optimal", 0.0, report.baseline_value, report.baseline_stderr, "true"]]
    for row in report.rows:
        rows.append(
            [row.family, row.epsilon, row.value, row.stderr, "true" if row.passed else "false"]
        )
    _write_csv(
        os.path.join(out_dir, "scan.csv"),
        ["family", "epsilon", "J_mean", "J_stderr", "pass"],
        rows,
    )
    verdicts = [
        _verdict(
            "optimality",
            report.passed,
            statistic=min((row.gap for row in report.rows), default=0.0),
            threshold=0.0,
            detail="baseline value at least every perturbed value, within combined-stderr slack",
        )
    ]
    return verdicts, {"scan": report.to_dict()}, ["scan.csv"]


def cmd_tower(cfg: RunConfig, out_dir: str):
    setup = build_setup(cfg)
    scenario = build_scenario(cfg)
    report = tower_check(
        setup, scenario, cfg.seed, cfg.n_paths, n_clocks=cfg.n_clocks, z_limit=cfg.z_limit
    )
    verdicts = [
        _verdict(
            "tower",
            report.passed,
            statistic=report.z,
            threshold=cfg.z_limit,
            detail="unconditional mean utility vs clock-averaged conditional value",
        )
    ]
    return verdicts, {"tower": report.to_dict()}, []


_COMMANDS = {
    "simulate": cmd_simulate,
    "verify": cmd_verify,
    "optimize": cmd_optimize,
    "scan": cmd_scan,
    "tower": cmd_tower,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="marketclock",
        description="Simulation and verification runs for time-changed market models.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("simulate", "draw path bundles and write them as CSV"),
        ("verify", "check the transport identities and path statistics"),
        ("optimize", "build the closed-form strategy and test its value"),
        ("scan", "compare the strategy against deliberate perturbations"),
        ("tower", "average the conditional value over clock draws"),
    ):
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("--config", required=True, help="path to the run configuration")
        cmd.add_argument("--out", default=".", help="output directory (default: current)")
        cmd.add_argument("--seed", type=int, default=None, help="override the config seed")
        cmd.add_argument("--paths", type=int, default=None, help="override the config path count")
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        with open(args.config, encoding="utf-8") as fh:
            cfg = parse_config(fh.read())
    except OSError as exc:
        print(f"cannot read config: {exc}", file=sys.stderr)
        return 2
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    if args.seed is not None:
        if not 0 <= args.seed < 1 << 64:
            print("config error: --seed must fit in an unsigned 64-bit integer", file=sys.stderr)
            return 2
        cfg = replace(cfg, seed=args.seed)
    if args.paths is not None:
        if args.paths < 1:
            print("config error: --paths must be positive", file=sys.stderr)
            return 2
        cfg = replace(cfg, n_paths=args.paths)
    try:
        os.makedirs(args.out, exist_ok=True)
    except OSError as exc:
        print(f"cannot create output directory: {exc}", file=sys.stderr)
        return 2

    started = time.perf_counter()
    try:
        verdicts, reports, artifacts = _COMMANDS[args.command](cfg, args.out)
    except (ConfigError, InvalidSpecError, DomainError, InadmissibleError) as exc:
        print(f"run aborted: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o failure: {exc}", file=sys.stderr)
        return 2
    elapsed = time.perf_counter() - started

    passed = all(v["passed"] for v in verdicts)
    summary = {
        "command": args.command,
        "config": config_dict(cfg),
        "passed": passed,
        "verdicts": verdicts,
        "reports": reports,
        "artifacts": sorted(artifacts),
    }
    summary_path = os.path.join(args.out, "summary.json")
    with open(summary_path, "w", newline="\n") as fh:
        json.dump(_clean(summary), fh, sort_keys=True, indent=2)
        fh.write("\n")
    meta_path = os.path.join(args.out, "run_meta.json")
    with open(meta_path, "w", newline="\n") as fh:
        json.dump({"wall_seconds": elapsed, "workers": cfg.workers}, fh, sort_keys=True, indent=2)
        fh.write("\n")

    for v in verdicts:
        mark = "PASS" if v["passed"] else "FAIL"
        stat = "" if v["statistic"] is None else f" statistic={v['statistic']:.6g}"
        print(f"[{mark}] {v['name']}{stat}")
    print(f"summary: {summary_path}")
    return 0 if passed else 1
