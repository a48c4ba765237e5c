"""Geometry primitives: 2D points, the rigid-transform state, and scans.

The transform convention used everywhere in this package maps a point p
expressed in the new scan's body frame into the reference frame:

    q = [[cos(t), -sin(t)], [sin(t), cos(t)]] @ p - [x, y]

where the state is (x, y, t) with t in radians. All types are immutable
after construction and safe to share across threads or processes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import DomainError

TAU = 2.0 * math.pi

FRAME_TAGS = ("reference", "new", "transformed")


def normalize_angle(theta: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    a = math.remainder(theta, TAU)
    if a <= -math.pi:
        a += TAU
    return a


def rotation_matrix(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def rotation_derivative(theta: float) -> np.ndarray:
    """d/dtheta of rotation_matrix(theta)."""
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[-s, -c], [c, -s]])


@dataclass(frozen=True)
class Point2:
    """A finite 2D point in simulation length units."""

    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise DomainError(f"point coordinates must be finite, got ({self.x}, {self.y})")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y])


@dataclass(frozen=True)
class StateVector:
    """Rigid 2D transform state (x, y, theta); theta is kept in (-pi, pi]."""

    x: float = 0.0
    y: float = 0.0
    theta: float = 0.0

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.x, self.y, self.theta)):
            raise DomainError("state vector components must be finite")
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "theta", normalize_angle(float(self.theta)))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta])

    @classmethod
    def from_array(cls, v: Sequence[float]) -> "StateVector":
        return cls(float(v[0]), float(v[1]), float(v[2]))


def inverse_transform(s: StateVector) -> StateVector:
    """State that undoes s: theta -> -theta, t -> -R(-theta) t."""
    t = rotation_matrix(-s.theta) @ np.array([s.x, s.y])
    return StateVector(-t[0], -t[1], -s.theta)


@dataclass(frozen=True, eq=False)
class Scan:
    """An immutable ordered point cloud with a frame tag.

    `xy` is an (N, 2) float array; N >= 1. The array is copied on
    construction and marked read-only.
    """

    xy: np.ndarray
    frame_tag: str = "reference"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        pts = np.asarray(self.xy, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] == 0:
            raise DomainError(f"scan requires a non-empty (N, 2) point array, got shape {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise DomainError("scan points must be finite")
        if self.frame_tag not in FRAME_TAGS:
            raise DomainError(f"frame_tag must be one of {FRAME_TAGS}, got {self.frame_tag!r}")
        pts = pts.copy()
        pts.flags.writeable = False
        object.__setattr__(self, "xy", pts)

    def __len__(self) -> int:
        return self.xy.shape[0]

    @property
    def points(self) -> tuple[Point2, ...]:
        return tuple(Point2(float(x), float(y)) for x, y in self.xy)

    @classmethod
    def from_points(cls, points: Iterable[Point2], frame_tag: str = "reference") -> "Scan":
        arr = np.array([[p.x, p.y] for p in points], dtype=float)
        if arr.size == 0:
            raise DomainError("scan requires at least one point")
        return cls(arr, frame_tag)


def apply_transform(p: Point2, s: StateVector) -> Point2:
    """Map a single new-frame point into the reference frame: q = R(theta) p - t."""
    q = rotation_matrix(s.theta) @ p.as_array() - np.array([s.x, s.y])
    return Point2(float(q[0]), float(q[1]))


def transform_points(xy: np.ndarray, s: StateVector) -> np.ndarray:
    """Vectorized q = R(theta) p - t over an (N, 2) array."""
    return xy @ rotation_matrix(s.theta).T - np.array([s.x, s.y])


def transform_scan(scan: Scan, s: StateVector) -> Scan:
    """Transform every point of a scan; order and count are preserved."""
    return Scan(transform_points(scan.xy, s), frame_tag="transformed")


@dataclass(frozen=True, eq=False)
class ReducedCovariance:
    """Covariance restricted to a preserved state subspace.

    `basis` is 3 x n with orthonormal columns spanning the preserved
    directions; `cov` is the n x n covariance of the state expressed in
    those coordinates.
    """

    basis: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        basis = np.asarray(self.basis, dtype=float)
        cov = np.asarray(self.cov, dtype=float)
        n = basis.shape[1]
        if basis.shape[0] != 3 or cov.shape != (n, n):
            raise DomainError("reduced covariance shapes inconsistent")
        gram = basis.T @ basis
        if not np.allclose(gram, np.eye(n), atol=1e-9):
            raise DomainError("reduced-covariance basis columns must be orthonormal")
        _check_symmetric_psd(cov, "reduced covariance")
        basis = basis.copy()
        cov = cov.copy()
        basis.flags.writeable = False
        cov.flags.writeable = False
        object.__setattr__(self, "basis", basis)
        object.__setattr__(self, "cov", cov)


def _check_symmetric_psd(m: np.ndarray, label: str) -> None:
    scale = max(1.0, float(np.abs(m).max()))
    if np.abs(m - m.T).max() > 1e-12 * scale:
        raise DomainError(f"{label} must be symmetric to 1e-12 relative")
    w = np.linalg.eigvalsh(0.5 * (m + m.T))
    if w.min() < -1e-9 * scale:
        raise DomainError(f"{label} must be positive semi-definite (min eigenvalue {w.min()})")


@dataclass(frozen=True, eq=False)
class StateCovariance:
    """3x3 state-error covariance, optionally carrying a reduced-subspace form.

    `reduced` is present exactly when the solution was only computed in a
    well-conditioned subspace of the state space; `matrix` then holds the
    lift basis @ cov @ basis.T, which is singular along excluded directions.
    """

    matrix: np.ndarray
    reduced: ReducedCovariance | None = None

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if m.shape != (3, 3):
            raise DomainError(f"state covariance must be 3x3, got {m.shape}")
        _check_symmetric_psd(m, "state covariance")
        m = 0.5 * (m + m.T)
        m.flags.writeable = False
        object.__setattr__(self, "matrix", m)


def save_scan_csv(scan: Scan, path) -> None:
    """Write a scan as CSV: `# key=value` header lines then one x,y pair per line.

    Floats are written with repr so the round trip is bit-exact.
    """
    with open(path, "w") as fh:
        fh.write(f"# frame_tag={scan.frame_tag}\n")
        for key, value in scan.meta.items():
            fh.write(f"# {key}={value}\n")
        for x, y in scan.xy:
            fh.write(f"{x!r},{y!r}\n")


def load_scan_csv(path) -> Scan:
    frame_tag = "reference"
    meta: dict = {}
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if "=" in body:
                    key, _, value = body.partition("=")
                    key = key.strip()
                    if key == "frame_tag":
                        frame_tag = value.strip()
                    else:
                        meta[key] = value.strip()
                continue
            sx, _, sy = line.partition(",")
            rows.append((float(sx), float(sy)))
    if not rows:
        raise DomainError(f"scan file {path} contains no points")
    return Scan(np.array(rows), frame_tag=frame_tag, meta=meta)
