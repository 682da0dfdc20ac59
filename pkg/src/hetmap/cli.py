"""Command-line entry point.

Subcommands:
  run              simulate a scenario under one or more policies
  explore          repeated runs with learned operating points carried over
  eval-regression  surrogate-model quality sweep over training sizes and degrees
  compare          multi-policy run with an improvement-factor summary

Improvement factors are reported as baseline/policy for both execution time
and energy, so a value above 1 means the policy is faster or uses less energy
than the baseline. Set HETMAP_LOG=debug|info for diagnostics.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from .errors import HetmapError, UnderDeterminedError
from .explorer import fit_model, monomial_exponents, predicted_front, stage_of
from .metrics import common_ratio, igd, mape
from .monitor import ConfigStats, EmaState
from .opoints import (
    AppDescription,
    Application,
    Stage,
    make_point,
    pareto_filter,
    save_app_description,
)
from .platform import Platform, enumerate_configurations, load_platform
from .simkernel import (
    POLICIES,
    Report,
    Scenario,
    ground_truth,
    load_scenario,
    run_scenario,
    true_points,
)

log = logging.getLogger("hetmap.cli")


def _setup_logging() -> None:
    level = os.environ.get("HETMAP_LOG", "warning").lower()
    logging.basicConfig(
        level={"debug": logging.DEBUG, "info": logging.INFO}.get(level, logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s",
    )


def _check_inputs(args) -> tuple[Platform, Scenario, Path]:
    platform_path = Path(args.platform)
    if not platform_path.is_file():
        raise HetmapError(f"platform file not found: {platform_path}")
    scenario_path = Path(args.scenario)
    if not scenario_path.is_file():
        raise HetmapError(f"scenario file not found: {scenario_path}")
    platform = load_platform(platform_path)
    scenario = load_scenario(scenario_path, platform)
    if args.window_ms is not None:
        scenario = Scenario(
            name=scenario.name,
            seed=scenario.seed,
            window_ms=float(args.window_ms),
            apps=scenario.apps,
            policy_options=scenario.policy_options,
            thresholds=scenario.thresholds,
        )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return platform, scenario, out


def _policies(arg: str) -> list[str]:
    policies = [p.strip() for p in arg.split(",") if p.strip()]
    for p in policies:
        if p not in POLICIES:
            raise HetmapError(f"unknown policy {p!r}, expected one of {POLICIES}")
    if not policies:
        raise HetmapError("at least one policy is required")
    return policies


def _aggregate(reports: list[Report]) -> dict:
    apps = sorted(reports[0].per_app)
    return {
        "policy": reports[0].policy,
        "scenario": reports[0].scenario,
        "repetitions": len(reports),
        "mean_makespan_ms": float(np.mean([r.makespan_ms for r in reports])),
        "mean_total_energy_j": float(np.mean([r.total_energy_j for r in reports])),
        "per_app": {
            a: {
                "mean_completion_time_ms": float(
                    np.mean([r.per_app[a].completion_ms for r in reports])
                ),
                "mean_energy_j": float(np.mean([r.per_app[a].energy_j for r in reports])),
            }
            for a in apps
        },
    }


def _open_traces(out: Path, policy: str, rep: int, enabled: bool):
    if not enabled:
        return None, None, []
    mon = open(out / f"trace_monitor_{policy}_rep{rep}.csv", "w")
    exp = open(out / f"trace_explore_{policy}_rep{rep}.csv", "w")
    return mon, exp, [mon, exp]


def _run_policies(
    args, policies: list[str]
) -> tuple[Platform, Scenario, Path, dict[str, list[Report]]]:
    platform, scenario, out = _check_inputs(args)
    reports: dict[str, list[Report]] = {}
    for policy in policies:
        reports[policy] = []
        for rep in range(args.reps):
            mon, exp, handles = _open_traces(out, policy, rep, args.trace)
            try:
                report = run_scenario(
                    scenario,
                    platform,
                    policy,
                    extra_entropy=(args.seed, rep),
                    monitor_trace=mon,
                    explore_trace=exp,
                )
            finally:
                for h in handles:
                    h.close()
            report.write_json(out / f"report_{policy}_rep{rep}.json")
            report.write_csv(out / f"report_{policy}_rep{rep}.csv")
            reports[policy].append(report)
        agg = _aggregate(reports[policy])
        (out / f"aggregate_{policy}.json").write_text(json.dumps(agg, indent=2) + "\n")
    return platform, scenario, out, reports


def _write_factors(out: Path, reports: dict[str, list[Report]], baseline: str) -> None:
    base_time = float(np.mean([r.makespan_ms for r in reports[baseline]]))
    base_energy = float(np.mean([r.total_energy_j for r in reports[baseline]]))
    rows = []
    for policy, rs in reports.items():
        t = float(np.mean([r.makespan_ms for r in rs]))
        e = float(np.mean([r.total_energy_j for r in rs]))
        rows.append(
            {
                "policy": policy,
                "baseline": baseline,
                "time_improvement_factor": base_time / t if t > 0 else math.nan,
                "energy_improvement_factor": base_energy / e if e > 0 else math.nan,
            }
        )
    with open(out / "improvement_factors.csv", "w", newline="") as fh:
        writer = csv.DictWriter(
            fh,
            fieldnames=[
                "policy",
                "baseline",
                "time_improvement_factor",
                "energy_improvement_factor",
            ],
        )
        writer.writeheader()
        writer.writerows(rows)


def cmd_run(args) -> int:
    policies = _policies(args.policy)
    _platform, _scenario, out, reports = _run_policies(args, policies)
    if "baseline_spread" in policies:
        _write_factors(out, reports, "baseline_spread")
    print(f"wrote {sum(len(v) for v in reports.values())} reports to {out}")
    return 0


def cmd_compare(args) -> int:
    policies = _policies(args.policy)
    if len(policies) < 2:
        raise HetmapError("compare needs at least two policies")
    _platform, _scenario, out, reports = _run_policies(args, policies)
    baseline = "baseline_spread" if "baseline_spread" in policies else policies[0]
    _write_factors(out, reports, baseline)
    for policy in policies:
        agg = _aggregate(reports[policy])
        print(
            f"{policy}: mean makespan {agg['mean_makespan_ms']:.1f} ms, "
            f"mean energy {agg['mean_total_energy_j']:.2f} J"
        )
    return 0


def _state_paths(state_dir: Path, scenario: Scenario) -> dict[str, Path]:
    return {app.app_id: state_dir / f"{app.app_id}.json" for app in scenario.apps}


def _load_state(state_dir: Path, scenario: Scenario) -> dict:
    state: dict = {}
    for app_id, path in _state_paths(state_dir, scenario).items():
        if path.is_file():
            state[app_id] = json.loads(path.read_text())
    return state


def _save_state(state_dir: Path, state: dict) -> None:
    state_dir.mkdir(parents=True, exist_ok=True)
    for app_id, entry in state.items():
        (state_dir / f"{app_id}.json").write_text(json.dumps(entry, indent=2) + "\n")


def _stage_from_state(entry: dict | None, thresholds) -> Stage:
    app = Application(app_id="state")
    if entry:
        for row in entry.get("configs", []):
            app.history[tuple(int(x) for x in row["config"])] = ConfigStats(
                count=int(row["count"]),
                ema_ips=EmaState(float(row["ips_ema"]), initialized=True),
                ema_power=EmaState(float(row["power_ema"]), initialized=True),
            )
    return stage_of(app, thresholds)


def _export_descriptions(
    platform: Platform, scenario: Scenario, state: dict, desc_dir: Path
) -> None:
    desc_dir.mkdir(parents=True, exist_ok=True)
    for spec in scenario.apps:
        entry = state.get(spec.app_id)
        if not entry:
            continue
        points = [
            make_point(
                tuple(int(x) for x in row["config"]),
                platform,
                row["ips_ema"],
                row["power_ema"],
                "measured",
            )
            for row in entry.get("configs", [])
            if row["ips_ema"] > 0.0 and row["power_ema"] > 0.0
        ]
        if not points:
            continue
        desc = AppDescription(
            app_id=spec.app_id,
            utility_units="work/s",
            points=tuple(pareto_filter(points)),
        )
        save_app_description(desc, desc_dir / f"{spec.app_id}.json")


def cmd_explore(args) -> int:
    platform, scenario, out = _check_inputs(args)
    state_dir = Path(args.state_dir) if args.state_dir else out / "state"
    summary_rows = []
    learning_apps = [a.app_id for a in scenario.apps if a.description_file is None]
    for run_idx in range(args.reps):
        state = _load_state(state_dir, scenario)
        stages_at_start = {
            app_id: _stage_from_state(state.get(app_id), scenario.thresholds)
            for app_id in learning_apps
        }
        label = (
            "Stable"
            if all(s == Stage.STABLE for s in stages_at_start.values())
            else "Training"
        )
        mon, exp, handles = _open_traces(out, "emapper", run_idx, args.trace)
        try:
            report = run_scenario(
                scenario,
                platform,
                "emapper",
                extra_entropy=(args.seed, run_idx),
                learn_state=state,
                monitor_trace=mon,
                explore_trace=exp,
            )
        finally:
            for h in handles:
                h.close()
        _save_state(state_dir, state)
        _export_descriptions(platform, scenario, state, out / "descriptions")
        report.write_json(out / f"run_{run_idx}.json")
        report.write_csv(out / f"run_{run_idx}.csv")
        row = {
            "run": run_idx,
            "label": label,
            "makespan_ms": report.makespan_ms,
            "total_energy_j": report.total_energy_j,
        }
        for app_id in learning_apps:
            row[f"stage_end_{app_id}"] = report.per_app[app_id].final_stage
        summary_rows.append(row)
        print(
            f"run {run_idx}: {label}, makespan {report.makespan_ms:.1f} ms, "
            f"energy {report.total_energy_j:.2f} J"
        )
    if summary_rows:
        with open(out / "runs_summary.csv", "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(summary_rows[0]))
            writer.writeheader()
            writer.writerows(summary_rows)
    return 0


def _parse_int_list(text: str, what: str) -> list[int]:
    try:
        values = [int(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise HetmapError(f"bad {what} list {text!r}: {exc}") from exc
    if not values:
        raise HetmapError(f"{what} list is empty")
    return values


def cmd_eval_regression(args) -> int:
    platform, scenario, out = _check_inputs(args)
    sizes = _parse_int_list(args.sizes, "sizes")
    degrees = _parse_int_list(args.degrees, "degrees")
    noise = (
        float(args.noise_sigma)
        if args.noise_sigma is not None
        else scenario.policy_options.noise_sigma
    )
    configs = enumerate_configurations(platform)
    rows = []
    for app_idx, spec in enumerate(scenario.apps):
        truth = [
            ground_truth(spec.behavior, cfg, platform, spec.thread_cap)
            for cfg in configs
        ]
        truth_ips = np.array([v[0] for v in truth])
        truth_pow = np.array([v[1] for v in truth])
        reference = pareto_filter(
            [
                make_point(cfg, platform, i, p)
                for cfg, i, p in zip(configs, truth_ips, truth_pow)
                if i > 0.0 and p > 0.0
            ]
        )
        for size in sizes:
            for eval_seed in range(args.eval_seeds):
                rng = np.random.default_rng(
                    np.random.SeedSequence(
                        [args.seed, scenario.seed, app_idx, size, eval_seed]
                    )
                )
                chosen = rng.choice(len(configs), size=min(size, len(configs)), replace=False)
                train = []
                for idx in sorted(chosen):
                    i, p = truth_ips[idx], truth_pow[idx]
                    if noise > 0.0:
                        g1, g2 = rng.normal(0.0, noise, size=2)
                        i, p = max(i * (1.0 + g1), 0.0), max(p * (1.0 + g2), 0.0)
                    train.append((configs[idx], float(i), float(p)))
                for degree in degrees:
                    row = {
                        "app_id": spec.app_id,
                        "degree": degree,
                        "train_size": size,
                        "eval_seed": eval_seed,
                        "under_determined": 0,
                        "mape_ips": "",
                        "mape_power": "",
                        "igd": "",
                        "common_ratio": "",
                    }
                    try:
                        model = fit_model(train, platform.num_dims, degree)
                    except UnderDeterminedError:
                        row["under_determined"] = 1
                        rows.append(row)
                        continue
                    pred_ips, pred_pow = model.predict_many(configs)
                    row["mape_ips"] = f"{mape(pred_ips, truth_ips):.6g}"
                    row["mape_power"] = f"{mape(pred_pow, truth_pow):.6g}"
                    generated = predicted_front(model, platform, [])
                    if generated and reference:
                        row["igd"] = f"{igd(reference, generated):.6g}"
                        row["common_ratio"] = f"{common_ratio(reference, generated):.6g}"
                    rows.append(row)
    path = out / "eval_regression.csv"
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)
    print(f"wrote {len(rows)} rows to {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hetmap",
        description=__doc__,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def common(p, policy_default="emapper", reps_default=1):
        p.add_argument("--platform", required=True, help="platform descriptor JSON")
        p.add_argument("--scenario", required=True, help="scenario JSON")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=0, help="top-level seed")
        p.add_argument("--reps", type=int, default=reps_default, help="repetitions")
        p.add_argument(
            "--window-ms", type=float, default=None, help="override measurement window"
        )
        p.add_argument(
            "--trace", action="store_true", help="write monitor/exploration CSV traces"
        )
        if policy_default is not None:
            p.add_argument(
                "--policy",
                default=policy_default,
                help=f"comma-separated policies from {POLICIES}",
            )

    p_run = sub.add_parser("run", help="simulate a scenario under one or more policies")
    common(p_run, policy_default="emapper", reps_default=1)
    p_run.set_defaults(func=cmd_run)

    p_explore = sub.add_parser(
        "explore", help="sequential runs that learn operating points across executions"
    )
    common(p_explore, policy_default=None, reps_default=15)
    p_explore.add_argument(
        "--state-dir", default=None, help="learned-state directory (default OUT/state)"
    )
    p_explore.set_defaults(func=cmd_explore)

    p_eval = sub.add_parser(
        "eval-regression", help="surrogate quality sweep over sizes, degrees and seeds"
    )
    common(p_eval, policy_default=None, reps_default=1)
    p_eval.add_argument("--sizes", default="6,10,15,20,25,30,40")
    p_eval.add_argument("--degrees", default="1,2,3")
    p_eval.add_argument("--eval-seeds", type=int, default=10)
    p_eval.add_argument("--noise-sigma", default=None)
    p_eval.set_defaults(func=cmd_eval_regression)

    p_cmp = sub.add_parser("compare", help="multi-policy comparison run")
    common(p_cmp, policy_default=",".join(POLICIES), reps_default=1)
    p_cmp.set_defaults(func=cmd_compare)
    return parser


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except HetmapError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
