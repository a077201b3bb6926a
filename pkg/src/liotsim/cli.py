"""Command-line entry point: solve, simulate, sweep, and report subcommands."""

from __future__ import annotations

import argparse
import concurrent.futures
import math
import os
import sys
from typing import Optional

import yaml

from . import kernel, metrics, scenario as scenario_mod
from .energy import (
    Feasibility,
    active_totals,
    builtin_harvester,
    builtin_profile,
    solve_sleep_time,
)
from .metrics import ExportError
from .scenario import ScenarioError

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_INFEASIBLE = 3
EXIT_IO = 4

EIGHT_HOURS_S = 8 * 3600.0


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _load_profile_arg(ref: str):
    """Profile argument: a built-in preset name or a YAML file."""
    try:
        return builtin_profile(ref), builtin_harvester(ref)
    except KeyError:
        pass
    if not os.path.exists(ref):
        raise CliError(
            f"profile {ref!r} is neither a built-in preset nor a file", EXIT_VALIDATION
        )
    try:
        with open(ref, encoding="utf-8") as fh:
            doc = yaml.safe_load(fh)
        profile = scenario_mod._parse_profile(doc.get("profile", doc), "profile")
        harvester = None
        if isinstance(doc, dict) and "harvester" in doc:
            harvester = scenario_mod._parse_harvester(doc["harvester"], "harvester")
        return profile, harvester
    except OSError as exc:
        raise CliError(str(exc), EXIT_IO)
    except (ScenarioError, yaml.YAMLError) as exc:
        raise CliError(str(exc), EXIT_VALIDATION)


def cmd_solve(args) -> int:
    if (args.lux is None) == (args.harvest_mw is None):
        raise CliError("pass exactly one of --lux or --harvest-mw", EXIT_VALIDATION)
    profile, harvester = _load_profile_arg(args.profile)
    if args.harvest_mw is not None:
        if args.harvest_mw < 0:
            raise CliError("--harvest-mw must be >= 0", EXIT_VALIDATION)
        p_harv = args.harvest_mw
    else:
        if harvester is None:
            raise CliError(
                "profile file has no harvester curve; use --harvest-mw", EXIT_VALIDATION
            )
        p_harv = harvester.power_mw(args.lux)
    margin = args.margin
    if margin is None:
        margin = 0.05 if args.profile == "ble-table1" else 0.0

    sol = solve_sleep_time(profile, p_harv)
    t_active, e_active = active_totals(profile)
    print(f"harvest power:    {p_harv:.5f} mW")
    print(f"active cycle:     {t_active:.3f} s, {e_active:.5f} J")
    if sol.feasibility is Feasibility.INFEASIBLE:
        print("sleep time:       infeasible (harvest cannot cover even sleep)")
        return EXIT_INFEASIBLE
    if sol.feasibility is Feasibility.CONTINUOUS:
        print("sleep time:       0 s (harvest covers continuous operation)")
        cycle = t_active
    else:
        cycle = (t_active + sol.t_sleep_s) * (1.0 + margin)
        print(f"sleep time:       {sol.t_sleep_s:.3f} s")
    print(f"duty cycle:       {cycle:.3f} s (margin {margin:.0%})")
    print(f"samples per 8 h:  {int(EIGHT_HOURS_S // cycle)}")
    return EXIT_OK


def _resolve_scenario(ref: str, seed: Optional[int], duration: Optional[float]):
    try:
        doc = scenario_mod.resolve_scenario_dict(ref)
    except FileNotFoundError:
        raise CliError(
            f"{ref!r} is neither a preset ({', '.join(scenario_mod.PRESET_NAMES)}) "
            "nor a scenario file", EXIT_VALIDATION,
        )
    except OSError as exc:
        raise CliError(str(exc), EXIT_IO)
    if seed is not None:
        doc["seed"] = seed
    if duration is not None:
        doc["duration_s"] = duration
    try:
        return scenario_mod.scenario_from_dict(doc)
    except ScenarioError as exc:
        raise CliError(f"invalid scenario: {exc}", EXIT_VALIDATION)


def _print_summary(summary: metrics.RunSummary) -> None:
    print(f"{'node':<10} {'kind':<5} {'sent':>6} {'received':>9} "
          f"{'PDR':>6} {'avg SCap (V)':>13}")
    for n in summary.nodes:
        print(f"{n.node_id:<10} {n.kind:<5} {n.packets_sent:>6} "
              f"{n.packets_received:>9} {n.pdr:>6.3f} {n.scap_avg_v:>13.3f}")


def _write_outputs(result: kernel.RunResult, out_dir: str, fmt: str) -> None:
    try:
        os.makedirs(out_dir, exist_ok=True)
        metrics.export_summary(result.summary, os.path.join(out_dir, "summary.json"))
        ext = "csv" if fmt == "csv" else "jsonl"
        metrics.export_records(
            result.records, fmt, os.path.join(out_dir, f"records.{ext}")
        )
        metrics.export_trace(result.traces, fmt, os.path.join(out_dir, f"trace.{ext}"))
    except (OSError, ExportError) as exc:
        raise CliError(str(exc), EXIT_IO)


def cmd_simulate(args) -> int:
    sc = _resolve_scenario(args.scenario, args.seed, args.duration)
    result = kernel.run(sc)
    out_dir = args.out or os.environ.get("LIOTSIM_OUT")
    if out_dir:
        _write_outputs(result, out_dir, args.format)
    _print_summary(result.summary)
    return EXIT_OK


def _sweep_one(doc: dict, param: str, value) -> list[dict]:
    scenario_mod.set_by_path(doc, param, value)
    sc = scenario_mod.scenario_from_dict(doc)
    result = kernel.run(sc)
    rows = []
    for n in result.summary.nodes:
        rows.append(
            {
                "param_value": value,
                "node_id": n.node_id,
                "kind": n.kind,
                "packets_sent": n.packets_sent,
                "packets_received": n.packets_received,
                "pdr": n.pdr,
                "scap_avg_v": n.scap_avg_v,
                "scap_min_v": n.scap_min_v,
                "scap_max_v": n.scap_max_v,
            }
        )
    return rows


def cmd_sweep(args) -> int:
    import copy
    import csv

    values = []
    for raw in args.values.split(","):
        raw = raw.strip()
        try:
            values.append(float(raw))
        except ValueError:
            values.append(raw)
    try:
        base = scenario_mod.resolve_scenario_dict(args.scenario)
    except (FileNotFoundError, OSError) as exc:
        raise CliError(str(exc), EXIT_VALIDATION)
    # Validate the parameter path and every value before running anything.
    jobs_args = []
    for v in values:
        doc = copy.deepcopy(base)
        try:
            scenario_mod.set_by_path(doc, args.param, v)
            scenario_mod.scenario_from_dict(doc)
        except ScenarioError as exc:
            raise CliError(f"invalid sweep point {v!r}: {exc}", EXIT_VALIDATION)
        jobs_args.append((copy.deepcopy(base), args.param, v))

    if args.jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=args.jobs) as pool:
            all_rows = list(pool.map(_sweep_one_star, jobs_args))
    else:
        all_rows = [_sweep_one(*ja) for ja in jobs_args]

    rows = [row for rows_ in all_rows for row in rows_]
    rows.sort(key=lambda r: (str(type(r["param_value"])), r["param_value"],
                             r["node_id"]))
    fields = ["param_value", "node_id", "kind", "packets_sent", "packets_received",
              "pdr", "scap_avg_v", "scap_min_v", "scap_max_v"]
    try:
        out = open(args.out, "w", encoding="utf-8", newline="") if args.out else sys.stdout
        writer = csv.DictWriter(out, fieldnames=fields)
        writer.writeheader()
        writer.writerows(rows)
        if args.out:
            out.close()
    except OSError as exc:
        raise CliError(f"cannot write {args.out}: {exc}", EXIT_IO)
    return EXIT_OK


def _sweep_one_star(ja):
    return _sweep_one(*ja)


def cmd_report(args) -> int:
    try:
        records = metrics.load_records(args.records)
        traces = metrics.load_trace(args.trace) if args.trace else {}
    except (ExportError, KeyError, ValueError) as exc:
        raise CliError(f"cannot parse input: {exc}", EXIT_VALIDATION)
    by_node: dict[str, list] = {}
    for r in records:
        by_node.setdefault(r.node_id, []).append(r)
    print(f"{'node':<10} {'sent':>6} {'received':>9} {'PDR':>6} "
          f"{'avg SCap (V)':>13}")
    from .protocol import SessionOutcome

    for node_id in sorted(by_node):
        recs = by_node[node_id]
        sent = len(recs)
        received = sum(1 for r in recs if r.outcome is SessionOutcome.DELIVERED)
        pdr = received / sent if sent else 0.0
        avg, _, _ = metrics.time_weighted_voltage_stats(traces.get(node_id, []))
        print(f"{node_id:<10} {sent:>6} {received:>9} {pdr:>6.3f} {avg:>13.3f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="liotsim",
        description="Energy-budget solver and discrete-event simulator for "
                    "batteryless BLE and light-based IoT sensor nodes.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="solve the balance-point sleep time")
    p.add_argument("--profile", required=True,
                   help="built-in profile (ble-table1, liot-table2) or YAML file")
    p.add_argument("--lux", type=float, help="illuminance; uses the harvester curve")
    p.add_argument("--harvest-mw", type=float, help="harvest power directly, in mW")
    p.add_argument("--margin", type=float, default=None,
                   help="duty-cycle stretch fraction (default 0.05 BLE, 0 otherwise)")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("simulate", help="run one scenario")
    p.add_argument("--scenario", required=True, help="preset name or YAML file")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--duration", type=float, default=None,
                   help="override the scenario duration in seconds")
    p.add_argument("--out", default=None,
                   help="output directory (or set LIOTSIM_OUT)")
    p.add_argument("--format", choices=("csv", "jsonl"), default="csv")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="run a scenario across parameter values")
    p.add_argument("--scenario", required=True)
    p.add_argument("--param", required=True,
                   help="dotted schema path, e.g. illumination.lux")
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--out", default=None, help="merged CSV path (default stdout)")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="summarize exported cycle records")
    p.add_argument("--records", required=True, help="records export (csv or jsonl)")
    p.add_argument("--trace", default=None, help="voltage trace export")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
