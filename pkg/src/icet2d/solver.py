"""Iterative closest ellipsoidal transform (ICET) solver.

Scan matching is posed as weighted least squares over voxel-mean
residuals. Each matched voxel contributes a small measurement block:
a Jacobian of its transformed-scan mean with respect to the state, a
noise covariance combining both scans' mean uncertainties, and the mean
residual, all projected onto the directions the pruning step kept. The
condensed normal equations are accumulated block by block (the full
block-diagonal noise matrix is never materialized), and the solved
inverse doubles as the solution-error covariance prediction.

When the normal-equation matrix is ill-conditioned (a scene with no
information along some state direction, e.g. a straight tunnel), the
correction is computed only in the well-conditioned eigen-subspace, and
the covariance is reported in that subspace.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .geometry import (
    Scan,
    StateCovariance,
    StateVector,
    ReducedCovariance,
    rotation_derivative,
    transform_points,
)
from .voxels import Correspondence, GridConfig, VoxelStats, _voxelize, correspond, eigen_prune


@dataclass(frozen=True)
class IcetConfig:
    """Solver knobs.

    Convergence requires every translation step below translation_tol and
    the rotation step below rotation_tol. noise_jitter (length^2) is added
    to each voxel noise block before reduction; None means
    1e-9 * voxel_width**2, resolved at match time.
    """

    max_iterations: int = 50
    translation_tol: float = 1e-4
    rotation_tol: float = 1e-6
    condition_cutoff: float = 1e5
    noise_jitter: float | None = None

    def __post_init__(self):
        if self.max_iterations < 1:
            raise DomainError("max_iterations must be at least 1")
        if not (self.translation_tol > 0 and self.rotation_tol > 0):
            raise DomainError("convergence tolerances must be positive")
        if not self.condition_cutoff > 1:
            raise DomainError("condition_cutoff must exceed 1")
        if self.noise_jitter is not None and not self.noise_jitter > 0:
            raise DomainError("noise_jitter must be positive")

    def jitter_for(self, grid: GridConfig) -> float:
        if self.noise_jitter is not None:
            return self.noise_jitter
        return 1e-9 * grid.voxel_width**2


@dataclass(frozen=True, eq=False)
class MeasurementBlock:
    """One voxel's reduced-dimension contribution to the normal equations.

    jacobian is (n, 3), noise is (n, n) symmetric positive definite,
    residual is (n,), with n in {1, 2}.
    """

    jacobian: np.ndarray
    noise: np.ndarray
    residual: np.ndarray


@dataclass(frozen=True, eq=False)
class SubspaceInfo:
    """Well-conditioned eigen-subspace retained by a guarded solve."""

    basis: np.ndarray  # 3 x m preserved eigenvectors
    eigenvalues: np.ndarray  # m information eigenvalues (ascending)
    eliminated: np.ndarray  # 3 x (3 - m) eliminated eigenvectors


@dataclass(frozen=True, eq=False)
class IcetSolution:
    """Converged estimate plus the solver's prediction of its own accuracy."""

    estimate: StateVector
    covariance: StateCovariance
    iterations: int
    converged: bool
    used_subspace: bool
    preserved_basis: np.ndarray | None
    excluded_directions: tuple[str, ...]
    residual_norm: float
    residual_history: tuple[float, ...]
    delta_history: tuple[tuple[float, float, float], ...]


def jacobian_block(points_xy: np.ndarray, theta: float) -> np.ndarray:
    """2x3 derivative of a voxel's transformed mean w.r.t. (x, y, theta).

    The translation block is -I. The rotation column averages the rotation
    derivative applied to the voxel's original (untransformed) new-scan
    points, evaluated at the current angle estimate.
    """
    pts = np.asarray(points_xy, dtype=float)
    if pts.ndim != 2 or pts.shape[0] == 0:
        raise DomainError("jacobian_block requires a non-empty point set")
    h = np.zeros((2, 3))
    h[0, 0] = -1.0
    h[1, 1] = -1.0
    h[:, 2] = rotation_derivative(theta) @ pts.mean(axis=0)
    return h


def noise_block(ref: VoxelStats, new: VoxelStats, jitter: float) -> np.ndarray:
    """Covariance of the voxel-mean residual: Q0/n0 + Q/n + jitter * I."""
    r = ref.cov / ref.count + new.cov / new.count + jitter * np.eye(2)
    return 0.5 * (r + r.T)


def reduce_block(corr: Correspondence, jac: np.ndarray, noise: np.ndarray) -> MeasurementBlock | None:
    """Project a voxel's measurement onto its preserved directions.

    Both axes preserved: pass-through. One axis: project residual,
    Jacobian, and noise onto it (the noise is conjugated by the preserved
    basis so it stays square and invertible). No axes: the voxel
    contributes nothing and None is returned.
    """
    n = corr.prune.n_preserved
    if n == 0:
        return None
    residual = corr.ref_stats.mean - corr.new_stats.mean
    if n == 2:
        return MeasurementBlock(jacobian=jac, noise=noise, residual=residual)
    basis = corr.prune.preserved_axes  # 2 x 1
    return MeasurementBlock(
        jacobian=basis.T @ jac,
        noise=basis.T @ noise @ basis,
        residual=basis.T @ residual,
    )


def _invert_noise(noise: np.ndarray) -> np.ndarray:
    """Closed-form inverse for the 1x1 / 2x2 noise blocks."""
    if noise.shape == (1, 1):
        return np.array([[1.0 / noise[0, 0]]])
    a, b, c, d = noise[0, 0], noise[0, 1], noise[1, 0], noise[1, 1]
    det = a * d - b * c
    return np.array([[d, -b], [-c, a]]) / det


def accumulate_normal_equations(blocks: list[MeasurementBlock]) -> tuple[np.ndarray, np.ndarray]:
    """Condensed normal equations: A = sum(J' W J), b = sum(J' W r).

    Equivalent to stacking all blocks and weighting by the block-diagonal
    inverse noise, without building those matrices.
    """
    if not blocks:
        raise DomainError("accumulate_normal_equations requires at least one block")
    a = np.zeros((3, 3))
    b = np.zeros(3)
    for blk in blocks:
        w = _invert_noise(blk.noise)
        jw = blk.jacobian.T @ w
        a += jw @ blk.jacobian
        b += jw @ blk.residual
    return 0.5 * (a + a.T), b


def solve_step(
    a: np.ndarray, b: np.ndarray, cfg: IcetConfig
) -> tuple[np.ndarray, SubspaceInfo | None]:
    """Condition-number-guarded solve of the normal equations.

    Well-conditioned systems solve directly. Otherwise the smallest
    information eigenvalues are eliminated one at a time until the
    retained set meets the condition cutoff, and the correction is lifted
    from that subspace; the eliminated directions receive no correction.
    """
    values, vectors = np.linalg.eigh(0.5 * (a + a.T))  # ascending
    if values[-1] <= 0:
        raise DomainError("no observable directions")

    def condition(lo: int) -> float:
        if values[lo] <= 0:
            return math.inf
        return values[-1] / values[lo]

    if condition(0) < cfg.condition_cutoff:
        delta = np.linalg.solve(a, b)
        return delta, None

    lo = 1
    while lo < 3 and condition(lo) >= cfg.condition_cutoff:
        lo += 1
    if lo >= 3:
        raise DomainError("no observable directions")
    basis = vectors[:, lo:]
    eigenvalues = values[lo:]
    eliminated = vectors[:, :lo]
    delta = basis @ ((basis.T @ b) / eigenvalues)
    return delta, SubspaceInfo(basis=basis, eigenvalues=eigenvalues, eliminated=eliminated)


def _describe_direction(u: np.ndarray) -> str:
    """Human-readable account of a suppressed state-space direction."""
    tx, ty, tr = float(u[0]), float(u[1]), float(u[2])
    t_norm = math.hypot(tx, ty)
    if t_norm > 1e-12:
        angle = math.degrees(math.atan2(ty, tx)) % 180.0
        lead = f"translation heading {angle:.1f} deg from +x (weight {t_norm:.3f})"
    else:
        lead = "no translation component"
    return f"suppressed state direction [{tx:+.4f}, {ty:+.4f}, {tr:+.4f}]: {lead}, rotation weight {tr:+.4f}"


def _build_blocks(
    corrs: list[Correspondence],
    members: dict[tuple[int, int], np.ndarray],
    new_xy: np.ndarray,
    theta: float,
    jitter: float,
) -> list[MeasurementBlock]:
    blocks = []
    for corr in corrs:
        jac = jacobian_block(new_xy[members[corr.new_stats.index]], theta)
        noise = noise_block(corr.ref_stats, corr.new_stats, jitter)
        blk = reduce_block(corr, jac, noise)
        if blk is not None:
            blocks.append(blk)
    return blocks


def icet_match(
    ref_scan: Scan,
    new_scan: Scan,
    grid_cfg: GridConfig | None = None,
    cfg: IcetConfig | None = None,
    x0: StateVector | None = None,
) -> IcetSolution:
    """Estimate the transform aligning new_scan to ref_scan.

    The reference grid and its prune results are computed once. Each
    iteration transforms the new scan by the current estimate,
    re-voxelizes it on the same grid, matches voxels, accumulates the
    condensed normal equations, and applies the guarded solve. Rotation
    Jacobians always use the original new-scan points regrouped by the
    current voxel membership.

    Raises DomainError on unusable grids, zero correspondences, or a
    fully unobservable system. Running out of iterations is not an error;
    the last iterate is returned with converged=False.
    """
    grid_cfg = grid_cfg or GridConfig()
    cfg = cfg or IcetConfig()
    x0 = x0 or StateVector()
    jitter = cfg.jitter_for(grid_cfg)

    ref_stats, _ = _voxelize(ref_scan, grid_cfg)
    prune_by_index = {v.index: eigen_prune(v.cov, grid_cfg.threshold) for v in ref_stats}

    x = x0
    subspace: SubspaceInfo | None = None
    a = np.zeros((3, 3))
    iterations = 0
    converged = False
    residual_history: list[float] = []
    delta_history: list[tuple[float, float, float]] = []

    for _ in range(cfg.max_iterations):
        iterations += 1
        moved = transform_points(new_scan.xy, x)
        new_stats, members = _voxelize(Scan(moved, frame_tag="transformed"), grid_cfg)
        corrs = correspond(ref_stats, new_stats, grid_cfg, prune_by_index)
        blocks = _build_blocks(corrs, members, new_scan.xy, x.theta, jitter)
        if not blocks:
            raise DomainError("no observable directions")
        a, b = accumulate_normal_equations(blocks)
        residual_history.append(float(math.sqrt(sum(float(blk.residual @ blk.residual) for blk in blocks))))
        delta, subspace = solve_step(a, b, cfg)
        x = StateVector.from_array(x.as_array() + delta)
        delta_history.append((float(delta[0]), float(delta[1]), float(delta[2])))
        if (
            abs(delta[0]) < cfg.translation_tol
            and abs(delta[1]) < cfg.translation_tol
            and abs(delta[2]) < cfg.rotation_tol
        ):
            converged = True
            break

    if subspace is None:
        cov = StateCovariance(matrix=np.linalg.inv(a))
        return IcetSolution(
            estimate=x,
            covariance=cov,
            iterations=iterations,
            converged=converged,
            used_subspace=False,
            preserved_basis=None,
            excluded_directions=(),
            residual_norm=residual_history[-1],
            residual_history=tuple(residual_history),
            delta_history=tuple(delta_history),
        )

    # Subspace path: corrections were lifted only through preserved
    # directions, but those directions drift slightly between iterations.
    # Project the accumulated correction onto the final preserved basis so
    # the reported estimate carries exactly no component along the final
    # eliminated directions.
    basis = subspace.basis
    correction = x.as_array() - x0.as_array()
    x = StateVector.from_array(x0.as_array() + basis @ (basis.T @ correction))
    reduced_cov = np.diag(1.0 / subspace.eigenvalues)
    cov = StateCovariance(
        matrix=basis @ reduced_cov @ basis.T,
        reduced=ReducedCovariance(basis=basis, cov=reduced_cov),
    )
    excluded = tuple(_describe_direction(subspace.eliminated[:, k]) for k in range(subspace.eliminated.shape[1]))
    return IcetSolution(
        estimate=x,
        covariance=cov,
        iterations=iterations,
        converged=converged,
        used_subspace=True,
        preserved_basis=basis,
        excluded_directions=excluded,
        residual_norm=residual_history[-1],
        residual_history=tuple(residual_history),
        delta_history=tuple(delta_history),
    )


def solution_to_dict(sol: IcetSolution, include_delta_log: bool = False) -> dict:
    """JSON-ready view of a solution; reduced covariance keeps its basis."""
    if sol.used_subspace:
        reduced = sol.covariance.reduced
        cov_payload = {
            "preserved_basis": [[float(v) for v in row] for row in reduced.basis],
            "reduced_cov": [[float(v) for v in row] for row in reduced.cov],
            "lifted_matrix": [[float(v) for v in row] for row in sol.covariance.matrix],
        }
    else:
        cov_payload = {"matrix": [[float(v) for v in row] for row in sol.covariance.matrix]}
    out = {
        "estimate": {"x": sol.estimate.x, "y": sol.estimate.y, "theta": sol.estimate.theta},
        "covariance": cov_payload,
        "iterations": sol.iterations,
        "converged": sol.converged,
        "used_subspace": sol.used_subspace,
        "excluded_directions": list(sol.excluded_directions),
        "residual_norm": sol.residual_norm,
    }
    if include_delta_log:
        out["delta_log"] = [list(d) for d in sol.delta_history]
    return out
