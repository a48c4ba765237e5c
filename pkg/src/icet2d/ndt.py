"""Point-to-distribution NDT baseline.

The reference scan's voxels are modeled as Gaussians and the transformed
new scan is scored by summed Gaussian likelihood terms; Newton iterations
maximize the score. Near-singular voxel Gaussians are regularized by
flooring small covariance eigenvalues at a fraction of the largest one,
and non-positive-definite Newton Hessians are repaired by adding
multiples of the identity. The optimizer deliberately emits no covariance
or quality indication: the absence of one is the point of the baseline.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import DomainError
from .geometry import Point2, Scan, StateVector, rotation_matrix, rotation_derivative, transform_points
from .voxels import GridConfig, VoxelStats, build_grid


@dataclass(frozen=True)
class NdtConfig:
    """NDT parameters; voxel_width is shared with the ICET grid for fair runs."""

    voxel_width: float = 50.0
    min_points: int = 5
    max_iterations: int = 50
    translation_tol: float = 1e-4
    rotation_tol: float = 1e-6
    eig_floor_ratio: float = 0.001
    correspondence_mode: str = "nn"
    nn_radius: float | None = None
    max_halvings: int = 10

    def __post_init__(self):
        if not self.voxel_width > 0:
            raise DomainError("voxel_width must be positive")
        if self.min_points < 2:
            raise DomainError("min_points must be at least 2")
        if self.max_iterations < 1:
            raise DomainError("max_iterations must be at least 1")
        if not (self.translation_tol > 0 and self.rotation_tol > 0):
            raise DomainError("tolerances must be positive")
        if not self.eig_floor_ratio > 0:
            raise DomainError("eig_floor_ratio must be positive")
        if self.correspondence_mode not in ("colocated", "nn"):
            raise DomainError(f"unknown correspondence_mode {self.correspondence_mode!r}")

    @property
    def radius(self) -> float:
        return self.nn_radius if self.nn_radius is not None else self.voxel_width


@dataclass(frozen=True, eq=False)
class NdtDiagnostics:
    """Optimizer bookkeeping; deliberately carries no covariance."""

    score: float
    iterations: int
    converged: bool
    score_history: tuple[float, ...]


class _Targets:
    """Regularized reference Gaussians with fast cell / nearest-mean lookup."""

    def __init__(self, voxels: list[VoxelStats], cfg: NdtConfig, origin: Point2):
        if not voxels:
            raise DomainError("no usable voxels")
        self.cfg = cfg
        self.origin = origin.as_array()
        self.means = np.array([v.mean for v in voxels])
        inv_covs = []
        for v in voxels:
            values, vectors = np.linalg.eigh(v.cov)
            floor = max(cfg.eig_floor_ratio * float(values[-1]), 1e-12)
            values = np.maximum(values, floor)
            inv_covs.append(vectors @ np.diag(1.0 / values) @ vectors.T)
        self.inv_covs = np.array(inv_covs)
        packed = np.array([self._pack(v.index[0], v.index[1]) for v in voxels], dtype=np.int64)
        order = np.argsort(packed)
        self._sorted_cells = packed[order]
        self._row_of_sorted = order
        self.tree = cKDTree(self.means) if cfg.correspondence_mode == "nn" else None

    @staticmethod
    def _pack(i, j):
        return np.int64(i) * np.int64(2**32) + np.int64(j)

    def assign(self, q: np.ndarray) -> np.ndarray:
        """Row of the target Gaussian per transformed point; -1 if none."""
        if self.tree is not None:
            dist, row = self.tree.query(q, k=1)
            row = np.asarray(row)
            row[dist > self.cfg.radius] = -1
            return row
        cells = np.floor((q - self.origin) / self.cfg.voxel_width).astype(np.int64)
        packed = cells[:, 0] * np.int64(2**32) + cells[:, 1]
        pos = np.searchsorted(self._sorted_cells, packed).clip(max=self._sorted_cells.size - 1)
        row = self._row_of_sorted[pos].copy()
        row[self._sorted_cells[pos] != packed] = -1
        return row


def _score_terms(
    x: StateVector, xy: np.ndarray, targets: _Targets, want_derivatives: bool
) -> tuple[float, np.ndarray | None, np.ndarray | None]:
    """Score, and optionally gradient/Hessian of the negative score.

    Per point q = R(theta) p - t with an assigned Gaussian (mu, S^-1):
    contribution exp(-0.5 (q-mu)' S^-1 (q-mu)). Unassigned points
    contribute zero and have zero derivatives.
    """
    q = transform_points(xy, x)
    rows = targets.assign(q)
    valid = rows >= 0
    if not np.any(valid):
        return 0.0, (np.zeros(3) if want_derivatives else None), (np.zeros((3, 3)) if want_derivatives else None)

    q = q[valid]
    p = xy[valid]
    rows = rows[valid]
    err = q - targets.means[rows]
    sinv = targets.inv_covs[rows]
    v = np.einsum("nij,nj->ni", sinv, err)
    m2 = np.einsum("ni,ni->n", v, err)
    s = np.exp(-0.5 * m2)
    score = float(s.sum())
    if not want_derivatives:
        return score, None, None

    # Jacobian of q per state: columns (-1, 0), (0, -1), R'(theta) p.
    jtheta = p @ rotation_derivative(x.theta).T
    # u_k = v . dq/dx_k for each point
    u = np.empty((p.shape[0], 3))
    u[:, 0] = -v[:, 0]
    u[:, 1] = -v[:, 1]
    u[:, 2] = np.einsum("ni,ni->n", v, jtheta)

    grad = (s[:, None] * u).sum(axis=0)

    # Hessian of the negative score:
    # sum_i s_i [ -u u' + J' S^-1 J + (v . d2q/dx_k dx_l) ]
    hess = -np.einsum("n,ni,nj->ij", s, u, u)
    sv_theta = np.einsum("nij,nj->ni", sinv, jtheta)
    hess[0, 0] += float((s * sinv[:, 0, 0]).sum())
    hess[0, 1] += float((s * sinv[:, 0, 1]).sum())
    hess[1, 1] += float((s * sinv[:, 1, 1]).sum())
    hess[0, 2] += float((s * -sv_theta[:, 0]).sum())
    hess[1, 2] += float((s * -sv_theta[:, 1]).sum())
    hess[2, 2] += float((s * np.einsum("ni,ni->n", jtheta, sv_theta)).sum())
    # d2q/dtheta2 = -R(theta) p; only the theta-theta entry has curvature of q.
    d2 = -(p @ rotation_matrix(x.theta).T)
    hess[2, 2] += float((s * np.einsum("ni,ni->n", v, d2)).sum())
    hess[1, 0] = hess[0, 1]
    hess[2, 0] = hess[0, 2]
    hess[2, 1] = hess[1, 2]
    return score, grad, hess


def ndt_score(
    x: StateVector,
    new_scan: Scan,
    ref_voxels: list[VoxelStats],
    cfg: NdtConfig | None = None,
    origin: Point2 = Point2(0.0, 0.0),
) -> float:
    """Summed Gaussian score of the transformed scan against reference voxels."""
    cfg = cfg or NdtConfig()
    targets = _Targets(list(ref_voxels), cfg, origin)
    score, _, _ = _score_terms(x, new_scan.xy, targets, want_derivatives=False)
    return score


def ndt_score_gradient_hessian(
    x: StateVector,
    new_scan: Scan,
    ref_voxels: list[VoxelStats],
    cfg: NdtConfig | None = None,
    origin: Point2 = Point2(0.0, 0.0),
) -> tuple[float, np.ndarray, np.ndarray]:
    """Score plus analytic gradient and Hessian of the negative score."""
    cfg = cfg or NdtConfig()
    targets = _Targets(list(ref_voxels), cfg, origin)
    score, grad, hess = _score_terms(x, new_scan.xy, targets, want_derivatives=True)
    return score, grad, hess


def _repair_to_pd(hess: np.ndarray) -> np.ndarray:
    """Add multiples of the identity until Cholesky succeeds."""
    bump = 0.0
    scale = max(float(np.abs(hess).max()), 1e-12)
    while True:
        try:
            np.linalg.cholesky(hess + bump * np.eye(3))
            return hess + bump * np.eye(3)
        except np.linalg.LinAlgError:
            bump = max(2.0 * bump, 1e-9 * scale)


def ndt_match(
    ref_scan: Scan,
    new_scan: Scan,
    cfg: NdtConfig | None = None,
    x0: StateVector | None = None,
    origin: Point2 = Point2(0.0, 0.0),
) -> tuple[StateVector, NdtDiagnostics]:
    """Newton ascent on the NDT score with step halving.

    The accepted score never decreases. Convergence is declared when the
    accepted step falls below the tolerances; running out of iterations
    returns the best iterate with converged=False.
    """
    cfg = cfg or NdtConfig()
    x = x0 or StateVector()
    grid = GridConfig(
        voxel_width=cfg.voxel_width,
        origin=origin,
        min_points=cfg.min_points,
        correspondence_mode="colocated",
    )
    targets = _Targets(build_grid(ref_scan, grid), cfg, origin)

    score, grad, hess = _score_terms(x, new_scan.xy, targets, want_derivatives=True)
    history = [score]
    converged = False
    iterations = 0
    for _ in range(cfg.max_iterations):
        iterations += 1
        hess = _repair_to_pd(hess)
        step = -np.linalg.solve(hess, grad)
        accepted = None
        for _ in range(cfg.max_halvings + 1):
            candidate = StateVector.from_array(x.as_array() + step)
            cand_score, cand_grad, cand_hess = _score_terms(
                candidate, new_scan.xy, targets, want_derivatives=True
            )
            if cand_score >= score:
                accepted = (candidate, cand_score, cand_grad, cand_hess, step)
                break
            step = 0.5 * step
        if accepted is None:
            break
        x, score, grad, hess, step = accepted
        history.append(score)
        if (
            abs(step[0]) < cfg.translation_tol
            and abs(step[1]) < cfg.translation_tol
            and abs(step[2]) < cfg.rotation_tol
        ):
            converged = True
            break

    return x, NdtDiagnostics(
        score=score, iterations=iterations, converged=converged, score_history=tuple(history)
    )


def ndt_solution_to_dict(x: StateVector, diag: NdtDiagnostics) -> dict:
    """Same shape as the ICET solution JSON, with covariance explicitly null."""
    return {
        "estimate": {"x": x.x, "y": x.y, "theta": x.theta},
        "covariance": None,
        "iterations": diag.iterations,
        "converged": diag.converged,
        "used_subspace": False,
        "excluded_directions": [],
        "score": diag.score,
    }
