"""Monte-Carlo benchmark harness comparing ICET and NDT.

Each trial raycasts an independent scan pair, matches it with both
algorithms from a zero initial state, and records per-axis errors along
with ICET's own accuracy prediction. The whole run is a pure function of
its configuration (including the base seed): per-trial seeds are derived
from the base seed and the trial index, and trial failures are recorded
as data rather than raised, up to a run-level failure-rate cap.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import null_space

from .errors import DomainError
from .geometry import StateVector, normalize_angle
from .ndt import NdtConfig, ndt_match
from .simulator import ScanSpec, TrialSpec, build_environment, generate_trial_pair
from .solver import IcetConfig, IcetSolution, icet_match
from .voxels import GridConfig

_AXES = ("x", "y", "theta")
_ANGLE_BIN_DEG = 5.0
_FAILURE_RATE_CAP = 0.10


@dataclass(frozen=True)
class ScenarioConfig:
    """Complete description of a Monte-Carlo experiment."""

    environment_kind: str = "t-intersection"
    environment_params: dict = field(default_factory=dict)
    trials: int = 1000
    true_transform: StateVector = StateVector(5.0, 10.0, 0.1)
    scan: ScanSpec = ScanSpec()
    grid: GridConfig = GridConfig()
    icet: IcetConfig = IcetConfig()
    ndt: NdtConfig = NdtConfig()
    algo: str = "both"
    base_seed: int = 0

    def __post_init__(self):
        if self.trials < 1:
            raise DomainError("trials must be at least 1")
        if self.algo not in ("icet", "ndt", "both"):
            raise DomainError(f"algo must be icet, ndt, or both, got {self.algo!r}")
        if self.grid.voxel_width < 10.0 * self.scan.noise_sigma:
            warnings.warn(
                "voxel width is less than 10x the lidar noise sigma; "
                "extended-feature detection may misfire",
                stacklevel=2,
            )

    def seeds_for(self, trial_index: int) -> tuple[int, int]:
        base = self.base_seed + 2 * trial_index
        return base, base + 1

    @property
    def run_icet(self) -> bool:
        return self.algo in ("icet", "both")

    @property
    def run_ndt(self) -> bool:
        return self.algo in ("ndt", "both")


@dataclass(frozen=True)
class TrialRecord:
    """Flat per-trial outcome; None means the field does not apply."""

    index: int
    ref_seed: int
    new_seed: int
    icet_ok: bool | None = None
    icet_error: tuple[float, float, float] | None = None
    icet_pred_std: tuple[float | None, float | None, float | None] | None = None
    icet_excluded: tuple[bool, bool, bool] | None = None
    icet_nees: float | None = None
    icet_dof: int | None = None
    icet_subspace: bool | None = None
    icet_iterations: int | None = None
    icet_converged: bool | None = None
    icet_excluded_angle_deg: float | None = None
    icet_failure: str | None = None
    ndt_ok: bool | None = None
    ndt_error: tuple[float, float, float] | None = None
    ndt_iterations: int | None = None
    ndt_converged: bool | None = None
    ndt_score: float | None = None
    ndt_failure: str | None = None


@dataclass(frozen=True)
class ConsistencyResult:
    """Actual-vs-predicted agreement metrics for ICET."""

    nees_mean: float
    dof_mean: float
    axis_ratios: tuple[float | None, float | None, float | None]
    mean_pred_std: tuple[float | None, float | None, float | None]


@dataclass(frozen=True, eq=False)
class McReport:
    """Aggregated Monte-Carlo results plus the raw per-trial records."""

    config: ScenarioConfig
    records: tuple[TrialRecord, ...]
    icet_error_mean: tuple[float | None, float | None, float | None] | None
    icet_error_std: tuple[float | None, float | None, float | None] | None
    ndt_error_mean: tuple[float | None, float | None, float | None] | None
    ndt_error_std: tuple[float | None, float | None, float | None] | None
    consistency: ConsistencyResult | None
    ambiguity_rate: float | None
    excluded_angle_histogram: tuple[int, ...]
    failure_count: int


def state_error(estimate: StateVector, truth: StateVector) -> np.ndarray:
    """Per-axis estimate-minus-truth with the angle difference wrapped."""
    return np.array(
        [
            estimate.x - truth.x,
            estimate.y - truth.y,
            normalize_angle(estimate.theta - truth.theta),
        ]
    )


def _icet_trial_fields(sol: IcetSolution, truth: StateVector) -> dict:
    err = state_error(sol.estimate, truth)
    cov = sol.covariance
    if sol.used_subspace:
        basis = cov.reduced.basis
        leftover = 1.0 - np.sum(basis**2, axis=1)  # per-axis weight in eliminated space
        excluded = tuple(bool(v > 0.5) for v in leftover)
        z = basis.T @ err
        info = np.diag(1.0 / np.diag(cov.reduced.cov))
        nees = float(z @ info @ z)
        dof = basis.shape[1]
        eliminated = null_space(basis.T)
        # dominant eliminated direction by translation weight
        k = int(np.argmax(np.hypot(eliminated[0], eliminated[1])))
        angle = math.degrees(math.atan2(eliminated[1, k], eliminated[0, k])) % 180.0
    else:
        excluded = (False, False, False)
        nees = float(err @ np.linalg.solve(cov.matrix, err))
        dof = 3
        angle = None
    pred = []
    for k in range(3):
        pred.append(None if excluded[k] else float(math.sqrt(max(cov.matrix[k, k], 0.0))))
    return {
        "icet_ok": True,
        "icet_error": tuple(float(v) for v in err),
        "icet_pred_std": tuple(pred),
        "icet_excluded": excluded,
        "icet_nees": nees,
        "icet_dof": dof,
        "icet_subspace": sol.used_subspace,
        "icet_iterations": sol.iterations,
        "icet_converged": sol.converged,
        "icet_excluded_angle_deg": angle,
    }


def run_trial(cfg: ScenarioConfig, index: int) -> TrialRecord:
    """Generate one scan pair and match it with the configured algorithms."""
    ref_seed, new_seed = cfg.seeds_for(index)
    fields: dict = {"index": index, "ref_seed": ref_seed, "new_seed": new_seed}
    env = build_environment(cfg.environment_kind, **cfg.environment_params)
    try:
        trial = TrialSpec(true_transform=cfg.true_transform, ref_seed=ref_seed, new_seed=new_seed)
        ref, new, truth = generate_trial_pair(env, trial, cfg.scan)
    except DomainError as exc:
        reason = f"pair generation: {exc}"
        if cfg.run_icet:
            fields.update({"icet_ok": False, "icet_failure": reason})
        if cfg.run_ndt:
            fields.update({"ndt_ok": False, "ndt_failure": reason})
        return TrialRecord(**fields)

    if cfg.run_icet:
        try:
            sol = icet_match(ref, new, cfg.grid, cfg.icet, StateVector())
            fields.update(_icet_trial_fields(sol, truth))
        except DomainError as exc:
            fields.update({"icet_ok": False, "icet_failure": str(exc)})
    if cfg.run_ndt:
        try:
            x, diag = ndt_match(ref, new, cfg.ndt, StateVector())
            err = state_error(x, truth)
            fields.update(
                {
                    "ndt_ok": True,
                    "ndt_error": tuple(float(v) for v in err),
                    "ndt_iterations": diag.iterations,
                    "ndt_converged": diag.converged,
                    "ndt_score": diag.score,
                }
            )
        except DomainError as exc:
            fields.update({"ndt_ok": False, "ndt_failure": str(exc)})
    return TrialRecord(**fields)


def error_statistics(errors) -> tuple[np.ndarray, np.ndarray]:
    """Per-axis sample mean and (n-1)-denominator std, ignoring NaN entries.

    Axes with no finite entries come back as NaN (reported downstream as
    not-available). Raises on empty input; std requires two finite values.
    """
    arr = np.asarray(errors, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.size == 0:
        raise DomainError("error_statistics requires at least one record")
    means = np.full(arr.shape[1], np.nan)
    stds = np.full(arr.shape[1], np.nan)
    for k in range(arr.shape[1]):
        col = arr[:, k]
        col = col[np.isfinite(col)]
        if col.size == 0:
            continue
        means[k] = col.mean()
        if col.size >= 2:
            stds[k] = col.std(ddof=1)
    return means, stds


def consistency_check(records) -> ConsistencyResult:
    """NEES mean plus per-axis actual/predicted std ratios over ICET records."""
    ok = [r for r in records if r.icet_ok]
    if not ok:
        raise DomainError("consistency_check requires successful ICET records")
    nees = np.array([r.icet_nees for r in ok])
    dof = np.array([r.icet_dof for r in ok], dtype=float)
    errors = _masked_icet_errors(ok)
    _, actual_std = error_statistics(errors)
    ratios: list[float | None] = []
    mean_pred: list[float | None] = []
    for k in range(3):
        preds = np.array(
            [r.icet_pred_std[k] for r in ok if r.icet_pred_std[k] is not None], dtype=float
        )
        if preds.size == 0 or not np.isfinite(actual_std[k]):
            ratios.append(None)
            mean_pred.append(None)
        else:
            mean_pred.append(float(preds.mean()))
            ratios.append(float(actual_std[k] / preds.mean()))
    return ConsistencyResult(
        nees_mean=float(nees.mean()),
        dof_mean=float(dof.mean()),
        axis_ratios=tuple(ratios),
        mean_pred_std=tuple(mean_pred),
    )


def _masked_icet_errors(records) -> np.ndarray:
    """(n, 3) ICET errors with excluded axes masked to NaN."""
    rows = []
    for r in records:
        row = list(r.icet_error)
        for k in range(3):
            if r.icet_excluded[k]:
                row[k] = np.nan
        rows.append(row)
    return np.array(rows)


def _tuple_or_none(values: np.ndarray) -> tuple[float | None, ...]:
    return tuple(None if not np.isfinite(v) else float(v) for v in values)


def aggregate_records(cfg: ScenarioConfig, records: list[TrialRecord]) -> McReport:
    """Build the report from raw records; every aggregate derives from them."""
    icet_ok = [r for r in records if r.icet_ok]
    ndt_ok = [r for r in records if r.ndt_ok]

    icet_mean = icet_std = None
    consistency = None
    ambiguity_rate = None
    hist = [0] * int(round(180.0 / _ANGLE_BIN_DEG))
    if icet_ok:
        means, stds = error_statistics(_masked_icet_errors(icet_ok))
        icet_mean, icet_std = _tuple_or_none(means), _tuple_or_none(stds)
        consistency = consistency_check(icet_ok)
        ambiguity_rate = float(sum(1 for r in icet_ok if r.icet_subspace) / len(icet_ok))
        for r in icet_ok:
            if r.icet_excluded_angle_deg is not None:
                hist[int(r.icet_excluded_angle_deg // _ANGLE_BIN_DEG) % len(hist)] += 1

    ndt_mean = ndt_std = None
    if ndt_ok:
        means, stds = error_statistics(np.array([r.ndt_error for r in ndt_ok]))
        ndt_mean, ndt_std = _tuple_or_none(means), _tuple_or_none(stds)

    failures = sum(1 for r in records if (r.icet_ok is False) or (r.ndt_ok is False))
    return McReport(
        config=cfg,
        records=tuple(records),
        icet_error_mean=icet_mean,
        icet_error_std=icet_std,
        ndt_error_mean=ndt_mean,
        ndt_error_std=ndt_std,
        consistency=consistency,
        ambiguity_rate=ambiguity_rate,
        excluded_angle_histogram=tuple(hist),
        failure_count=failures,
    )


def run_monte_carlo(cfg: ScenarioConfig, workers: int = 1) -> McReport:
    """Run all trials (optionally across processes) and aggregate.

    Results are identical for any worker count: per-trial seeds depend
    only on the config, and records are assembled in trial order.
    """
    # Fail fast on a broken environment description.
    build_environment(cfg.environment_kind, **cfg.environment_params)
    if workers > 1 and cfg.trials > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_trial_worker, [(cfg, k) for k in range(cfg.trials)], chunksize=8))
    else:
        records = [run_trial(cfg, k) for k in range(cfg.trials)]
    records.sort(key=lambda r: r.index)

    failures = sum(1 for r in records if (r.icet_ok is False) or (r.ndt_ok is False))
    if failures > _FAILURE_RATE_CAP * cfg.trials:
        raise DomainError(
            f"{failures}/{cfg.trials} trials failed (over the {_FAILURE_RATE_CAP:.0%} cap)"
        )
    return aggregate_records(cfg, records)


def _trial_worker(args: tuple[ScenarioConfig, int]) -> TrialRecord:
    cfg, index = args
    return run_trial(cfg, index)


# ---------------------------------------------------------------------------
# Serialization


def scenario_to_dict(cfg: ScenarioConfig) -> dict:
    t = cfg.true_transform
    return {
        "environment_kind": cfg.environment_kind,
        "environment_params": dict(cfg.environment_params),
        "trials": cfg.trials,
        "true_transform": {"x": t.x, "y": t.y, "theta": t.theta},
        "scan": {
            "beam_count": cfg.scan.beam_count,
            "noise_sigma": cfg.scan.noise_sigma,
            "max_range": cfg.scan.max_range,
        },
        "grid": {
            "voxel_width": cfg.grid.voxel_width,
            "origin": [cfg.grid.origin.x, cfg.grid.origin.y],
            "min_points": cfg.grid.min_points,
            "eigen_threshold": cfg.grid.eigen_threshold,
            "correspondence_mode": cfg.grid.correspondence_mode,
            "nn_radius": cfg.grid.nn_radius,
        },
        "icet": {
            "max_iterations": cfg.icet.max_iterations,
            "translation_tol": cfg.icet.translation_tol,
            "rotation_tol": cfg.icet.rotation_tol,
            "condition_cutoff": cfg.icet.condition_cutoff,
            "noise_jitter": cfg.icet.noise_jitter,
        },
        "ndt": {
            "voxel_width": cfg.ndt.voxel_width,
            "min_points": cfg.ndt.min_points,
            "max_iterations": cfg.ndt.max_iterations,
            "translation_tol": cfg.ndt.translation_tol,
            "rotation_tol": cfg.ndt.rotation_tol,
            "eig_floor_ratio": cfg.ndt.eig_floor_ratio,
            "correspondence_mode": cfg.ndt.correspondence_mode,
            "nn_radius": cfg.ndt.nn_radius,
        },
        "algo": cfg.algo,
        "base_seed": cfg.base_seed,
    }


def scenario_from_dict(data: dict) -> ScenarioConfig:
    from .geometry import Point2

    t = data.get("true_transform", {})
    grid = data.get("grid", {})
    icet = data.get("icet", {})
    ndt = data.get("ndt", {})
    scan = data.get("scan", {})
    origin = grid.get("origin", [0.0, 0.0])
    return ScenarioConfig(
        environment_kind=data.get("environment_kind", "t-intersection"),
        environment_params=dict(data.get("environment_params", {})),
        trials=int(data.get("trials", 1000)),
        true_transform=StateVector(t.get("x", 5.0), t.get("y", 10.0), t.get("theta", 0.1)),
        scan=ScanSpec(
            beam_count=int(scan.get("beam_count", 4200)),
            noise_sigma=float(scan.get("noise_sigma", 2.0)),
            max_range=float(scan.get("max_range", 2000.0)),
        ),
        grid=GridConfig(
            voxel_width=float(grid.get("voxel_width", 50.0)),
            origin=Point2(float(origin[0]), float(origin[1])),
            min_points=int(grid.get("min_points", 5)),
            eigen_threshold=grid.get("eigen_threshold"),
            correspondence_mode=grid.get("correspondence_mode", "nn"),
            nn_radius=grid.get("nn_radius"),
        ),
        icet=IcetConfig(
            max_iterations=int(icet.get("max_iterations", 50)),
            translation_tol=float(icet.get("translation_tol", 1e-4)),
            rotation_tol=float(icet.get("rotation_tol", 1e-6)),
            condition_cutoff=float(icet.get("condition_cutoff", 1e5)),
            noise_jitter=icet.get("noise_jitter"),
        ),
        ndt=NdtConfig(
            voxel_width=float(ndt.get("voxel_width", 50.0)),
            min_points=int(ndt.get("min_points", 5)),
            max_iterations=int(ndt.get("max_iterations", 50)),
            translation_tol=float(ndt.get("translation_tol", 1e-4)),
            rotation_tol=float(ndt.get("rotation_tol", 1e-6)),
            eig_floor_ratio=float(ndt.get("eig_floor_ratio", 0.001)),
            correspondence_mode=ndt.get("correspondence_mode", "nn"),
            nn_radius=ndt.get("nn_radius"),
        ),
        algo=data.get("algo", "both"),
        base_seed=int(data.get("base_seed", 0)),
    )


def report_to_dict(report: McReport, include_records: bool = False) -> dict:
    cons = None
    if report.consistency is not None:
        cons = {
            "nees_mean": report.consistency.nees_mean,
            "dof_mean": report.consistency.dof_mean,
            "axis_ratios": list(report.consistency.axis_ratios),
            "mean_pred_std": list(report.consistency.mean_pred_std),
        }
    out = {
        "config": scenario_to_dict(report.config),
        "trials": report.config.trials,
        "icet": {
            "error_mean": list(report.icet_error_mean) if report.icet_error_mean else None,
            "error_std": list(report.icet_error_std) if report.icet_error_std else None,
            "consistency": cons,
            "ambiguity_rate": report.ambiguity_rate,
            "excluded_angle_histogram_5deg": list(report.excluded_angle_histogram),
        },
        "ndt": {
            "error_mean": list(report.ndt_error_mean) if report.ndt_error_mean else None,
            "error_std": list(report.ndt_error_std) if report.ndt_error_std else None,
            "covariance": None,
        },
        "failure_count": report.failure_count,
    }
    if include_records:
        out["records"] = [record_to_row(r) for r in report.records]
    return out


def report_to_json(report: McReport, include_records: bool = False) -> str:
    return json.dumps(report_to_dict(report, include_records), indent=2, sort_keys=True)


_CSV_COLUMNS = [
    "index",
    "ref_seed",
    "new_seed",
    "icet_ok",
    "icet_err_x",
    "icet_err_y",
    "icet_err_theta",
    "icet_pred_std_x",
    "icet_pred_std_y",
    "icet_pred_std_theta",
    "icet_excluded_x",
    "icet_excluded_y",
    "icet_excluded_theta",
    "icet_nees",
    "icet_dof",
    "icet_subspace",
    "icet_iterations",
    "icet_converged",
    "icet_excluded_angle_deg",
    "icet_failure",
    "ndt_ok",
    "ndt_err_x",
    "ndt_err_y",
    "ndt_err_theta",
    "ndt_iterations",
    "ndt_converged",
    "ndt_score",
    "ndt_failure",
]


def record_to_row(r: TrialRecord) -> dict:
    def fmt(v):
        if v is None:
            return ""
        if isinstance(v, bool):
            return "1" if v else "0"
        if isinstance(v, float):
            return repr(v)
        return v

    row = {
        "index": r.index,
        "ref_seed": r.ref_seed,
        "new_seed": r.new_seed,
        "icet_ok": fmt(r.icet_ok),
        "icet_nees": fmt(r.icet_nees),
        "icet_dof": fmt(r.icet_dof),
        "icet_subspace": fmt(r.icet_subspace),
        "icet_iterations": fmt(r.icet_iterations),
        "icet_converged": fmt(r.icet_converged),
        "icet_excluded_angle_deg": fmt(r.icet_excluded_angle_deg),
        "icet_failure": fmt(r.icet_failure),
        "ndt_ok": fmt(r.ndt_ok),
        "ndt_iterations": fmt(r.ndt_iterations),
        "ndt_converged": fmt(r.ndt_converged),
        "ndt_score": fmt(r.ndt_score),
        "ndt_failure": fmt(r.ndt_failure),
    }
    for k, axis in enumerate(_AXES):
        row[f"icet_err_{axis}"] = fmt(r.icet_error[k]) if r.icet_error else ""
        row[f"icet_pred_std_{axis}"] = fmt(r.icet_pred_std[k]) if r.icet_pred_std else ""
        row[f"icet_excluded_{axis}"] = fmt(r.icet_excluded[k]) if r.icet_excluded else ""
        row[f"ndt_err_{axis}"] = fmt(r.ndt_error[k]) if r.ndt_error else ""
    return row


def save_records_csv(records, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=_CSV_COLUMNS)
        writer.writeheader()
        for r in records:
            writer.writerow(record_to_row(r))


def load_records_csv(path) -> list[TrialRecord]:
    def parse(v, kind):
        if v == "":
            return None
        if kind == "bool":
            return v == "1"
        if kind == "int":
            return int(v)
        if kind == "float":
            return float(v)
        return v

    records = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            icet_ok = parse(row["icet_ok"], "bool")
            ndt_ok = parse(row["ndt_ok"], "bool")
            records.append(
                TrialRecord(
                    index=int(row["index"]),
                    ref_seed=int(row["ref_seed"]),
                    new_seed=int(row["new_seed"]),
                    icet_ok=icet_ok,
                    icet_error=tuple(float(row[f"icet_err_{a}"]) for a in _AXES)
                    if icet_ok
                    else None,
                    icet_pred_std=tuple(parse(row[f"icet_pred_std_{a}"], "float") for a in _AXES)
                    if icet_ok
                    else None,
                    icet_excluded=tuple(row[f"icet_excluded_{a}"] == "1" for a in _AXES)
                    if icet_ok
                    else None,
                    icet_nees=parse(row["icet_nees"], "float"),
                    icet_dof=parse(row["icet_dof"], "int"),
                    icet_subspace=parse(row["icet_subspace"], "bool"),
                    icet_iterations=parse(row["icet_iterations"], "int"),
                    icet_converged=parse(row["icet_converged"], "bool"),
                    icet_excluded_angle_deg=parse(row["icet_excluded_angle_deg"], "float"),
                    icet_failure=parse(row["icet_failure"], "str"),
                    ndt_ok=ndt_ok,
                    ndt_error=tuple(float(row[f"ndt_err_{a}"]) for a in _AXES) if ndt_ok else None,
                    ndt_iterations=parse(row["ndt_iterations"], "int"),
                    ndt_converged=parse(row["ndt_converged"], "bool"),
                    ndt_score=parse(row["ndt_score"], "float"),
                    ndt_failure=parse(row["ndt_failure"], "str"),
                )
            )
    return records


def save_report(report: McReport, out_dir) -> None:
    """Write report.json and records.csv into a directory."""
    import os

    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "report.json"), "w") as fh:
        fh.write(report_to_json(report))
    save_records_csv(report.records, os.path.join(out_dir, "records.csv"))


def _fmt_cell(v) -> str:
    if v is None:
        return "excluded"
    return f"{v:.4g}"


def render_comparison_table(report: McReport) -> str:
    """Text table of per-axis actual and predicted error standard deviations."""
    lines = [
        f"{report.config.environment_kind} ({report.config.trials} trials, "
        f"sigma={report.config.scan.noise_sigma}, voxel={report.config.grid.voxel_width})",
        f"{'Algorithm':<16}{'std error x':>14}{'std error y':>14}{'std error theta':>18}",
    ]
    if report.ndt_error_std is not None:
        cells = [_fmt_cell(v) for v in report.ndt_error_std]
        lines.append(f"{'NDT Actual':<16}{cells[0]:>14}{cells[1]:>14}{cells[2]:>18}")
    if report.icet_error_std is not None:
        cells = [_fmt_cell(v) for v in report.icet_error_std]
        lines.append(f"{'ICET Actual':<16}{cells[0]:>14}{cells[1]:>14}{cells[2]:>18}")
    if report.consistency is not None:
        cells = [_fmt_cell(v) for v in report.consistency.mean_pred_std]
        lines.append(f"{'ICET Predicted':<16}{cells[0]:>14}{cells[1]:>14}{cells[2]:>18}")
        lines.append(
            f"ICET NEES mean {report.consistency.nees_mean:.3f} "
            f"(mean dof {report.consistency.dof_mean:.2f}), "
            f"ambiguity rate {report.ambiguity_rate:.3f}"
        )
    lines.append(f"failures: {report.failure_count}")
    return "\n".join(lines)
