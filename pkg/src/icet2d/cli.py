"""Command-line interface: simulate, match, benchmark, compare."""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import benchmark as bench
from .errors import DomainError
from .geometry import StateVector, load_scan_csv, save_scan_csv
from .ndt import NdtConfig, ndt_match, ndt_solution_to_dict
from .simulator import (
    ScanSpec,
    TrialSpec,
    build_environment,
    generate_trial_pair,
    load_environment,
    save_environment,
)
from .solver import IcetConfig, icet_match, solution_to_dict
from .voxels import GridConfig


def _env_from_flag(value: str):
    if value.startswith("custom:"):
        return load_environment(value.split(":", 1)[1])
    return build_environment(value)


def _parse_state(text: str) -> StateVector:
    parts = [float(v) for v in text.split(",")]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("state must be 'x,y,theta'")
    return StateVector(*parts)


def _add_common_env_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument(
        "--env",
        default="t-intersection",
        help="t-intersection | tunnel | custom:<env.json>",
    )
    p.add_argument("--seed", type=int, default=0, help="base RNG seed")


def cmd_simulate(args) -> int:
    env = _env_from_flag(args.env)
    spec = ScanSpec(
        beam_count=args.beams,
        noise_sigma=args.sigma,
        max_range=args.max_range,
        rng_seed=args.seed,
    )
    trial = TrialSpec(true_transform=args.truth, ref_seed=args.seed, new_seed=args.seed + 1)
    ref, new, truth = generate_trial_pair(env, trial, spec)
    os.makedirs(args.out, exist_ok=True)
    save_scan_csv(ref, os.path.join(args.out, "ref.csv"))
    save_scan_csv(new, os.path.join(args.out, "new.csv"))
    save_environment(env, os.path.join(args.out, "env.json"))
    with open(os.path.join(args.out, "truth.json"), "w") as fh:
        json.dump({"x": truth.x, "y": truth.y, "theta": truth.theta}, fh, indent=2, sort_keys=True)
    print(f"wrote ref.csv, new.csv, env.json, truth.json to {args.out}")
    return 0


def cmd_match(args) -> int:
    ref = load_scan_csv(args.ref)
    new = load_scan_csv(args.new)
    if args.algo == "icet":
        grid = GridConfig(
            voxel_width=args.voxel_width,
            min_points=args.min_points,
            correspondence_mode=args.correspondence,
        )
        sol = icet_match(ref, new, grid, IcetConfig(), args.x0)
        payload = solution_to_dict(sol, include_delta_log=args.delta_log)
    else:
        cfg = NdtConfig(
            voxel_width=args.voxel_width,
            min_points=args.min_points,
            correspondence_mode=args.correspondence,
        )
        x, diag = ndt_match(ref, new, cfg, args.x0)
        payload = ndt_solution_to_dict(x, diag)
    print(json.dumps(payload, indent=2, sort_keys=True))
    return 0


def cmd_benchmark(args) -> int:
    if args.config:
        with open(args.config) as fh:
            cfg = bench.scenario_from_dict(json.load(fh))
    else:
        grid = GridConfig(voxel_width=args.voxel_width, correspondence_mode=args.correspondence)
        ndt = NdtConfig(voxel_width=args.voxel_width, correspondence_mode=args.correspondence)
        cfg = bench.ScenarioConfig(
            environment_kind=args.env,
            trials=args.trials,
            scan=ScanSpec(beam_count=args.beams, noise_sigma=args.sigma),
            grid=grid,
            ndt=ndt,
            algo=args.algo,
            base_seed=args.seed,
        )
    report = bench.run_monte_carlo(cfg, workers=args.workers)
    bench.save_report(report, args.out)
    print(bench.render_comparison_table(report))
    print(f"report.json and records.csv written to {args.out}")
    return 0


def cmd_compare(args) -> int:
    for path in args.report:
        with open(path) as fh:
            data = json.load(fh)
        cfg = bench.scenario_from_dict(data["config"])
        icet = data.get("icet") or {}
        ndt = data.get("ndt") or {}
        cons = icet.get("consistency")
        print(
            f"{cfg.environment_kind} ({data.get('trials')} trials, "
            f"sigma={cfg.scan.noise_sigma}, voxel={cfg.grid.voxel_width})"
        )
        print(f"{'Algorithm':<16}{'std error x':>14}{'std error y':>14}{'std error theta':>18}")

        def row(label, stds):
            cells = [bench._fmt_cell(v) for v in stds]
            print(f"{label:<16}{cells[0]:>14}{cells[1]:>14}{cells[2]:>18}")

        if ndt.get("error_std"):
            row("NDT Actual", ndt["error_std"])
        if icet.get("error_std"):
            row("ICET Actual", icet["error_std"])
        if cons:
            row("ICET Predicted", cons["mean_pred_std"])
            print(
                f"ICET NEES mean {cons['nees_mean']:.3f} (mean dof {cons['dof_mean']:.2f}), "
                f"ambiguity rate {icet.get('ambiguity_rate'):.3f}"
            )
        print()
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="icet2d", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="emit a reference/new scan pair with ground truth")
    _add_common_env_flags(p)
    p.add_argument("--beams", type=int, default=4200)
    p.add_argument("--sigma", type=float, default=2.0)
    p.add_argument("--max-range", type=float, default=2000.0)
    p.add_argument("--truth", type=_parse_state, default=StateVector(5.0, 10.0, 0.1))
    p.add_argument("--out", default="sim_out")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("match", help="match one scan pair, JSON solution to stdout")
    p.add_argument("--ref", required=True)
    p.add_argument("--new", required=True)
    p.add_argument("--algo", choices=("icet", "ndt"), default="icet")
    p.add_argument("--voxel-width", type=float, default=50.0)
    p.add_argument("--min-points", type=int, default=5)
    p.add_argument("--correspondence", choices=("colocated", "nn"), default="nn")
    p.add_argument("--x0", type=_parse_state, default=StateVector())
    p.add_argument("--delta-log", action="store_true", help="include per-iteration deltas")
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("benchmark", help="Monte-Carlo run: report.json + records.csv")
    _add_common_env_flags(p)
    p.add_argument("--config", help="ScenarioConfig JSON file (overrides other flags)")
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--algo", choices=("icet", "ndt", "both"), default="both")
    p.add_argument("--voxel-width", type=float, default=50.0)
    p.add_argument("--correspondence", choices=("colocated", "nn"), default="nn")
    p.add_argument("--beams", type=int, default=4200)
    p.add_argument("--sigma", type=float, default=2.0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", default="bench_out")
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("compare", help="render comparison tables from report.json files")
    p.add_argument("report", nargs="+")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except DomainError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
