"""Raycasting 2D lidar simulator with ground-truth scan pairs.

Environments are collections of wall segments (plus interior rectangles
used only for the sensor-inside check). Scans are produced by casting
uniformly spaced beams over a full turn, keeping the nearest wall hit per
beam, expressing hits in the sensor's body frame, and adding independent
Gaussian noise to each Cartesian coordinate. Noise is per-coordinate by
design, not along-range; do not "fix" this.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError
from .geometry import Scan, StateVector, rotation_matrix

_ENDPOINT_SLACK = 1e-12


@dataclass(frozen=True, eq=False)
class Environment:
    """Wall geometry: (S, 4) segment array of [x1, y1, x2, y2] rows.

    `interior` holds (xmin, xmax, ymin, ymax) rectangles whose union is
    the region a sensor may occupy; empty means the check is skipped
    (custom environments may omit it).
    """

    segments: np.ndarray
    kind: str = "custom"
    interior: tuple[tuple[float, float, float, float], ...] = ()

    def __post_init__(self):
        seg = np.asarray(self.segments, dtype=float)
        if seg.ndim != 2 or seg.shape[1] != 4 or seg.shape[0] == 0:
            raise DomainError("environment requires a non-empty (S, 4) segment array")
        lengths = np.hypot(seg[:, 2] - seg[:, 0], seg[:, 3] - seg[:, 1])
        if np.any(lengths <= 0):
            raise DomainError("environment segments must have positive length")
        seg = seg.copy()
        seg.flags.writeable = False
        object.__setattr__(self, "segments", seg)

    def contains(self, x: float, y: float) -> bool:
        if not self.interior:
            return True
        return any(x0 < x < x1 and y0 < y < y1 for (x0, x1, y0, y1) in self.interior)


@dataclass(frozen=True)
class ScanSpec:
    """Beam count, per-axis noise sigma, max range, and the RNG seed."""

    beam_count: int = 4200
    noise_sigma: float = 2.0
    max_range: float = 2000.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.beam_count <= 0:
            raise DomainError("beam_count must be positive")
        if self.noise_sigma < 0:
            raise DomainError("noise_sigma must be non-negative")
        if not self.max_range > 0:
            raise DomainError("max_range must be positive")


@dataclass(frozen=True)
class TrialSpec:
    """Ground-truth transform plus independent noise seeds for each scan."""

    true_transform: StateVector = field(default_factory=lambda: StateVector(5.0, 10.0, 0.1))
    ref_seed: int = 0
    new_seed: int = 1

    def __post_init__(self):
        if self.ref_seed == self.new_seed:
            raise DomainError("ref_seed and new_seed must differ (independent noise per scan)")


def build_environment(kind: str, **params) -> Environment:
    """Construct a named environment.

    tunnel: two parallel walls along the y axis (open ends).
        params: width (default 150), length (default 1200).
    t-intersection: a stem corridor along y meeting a perpendicular cross
        corridor, 6 wall segments, cross-corridor ends open.
        params: width (default 150), stem_length (default 500),
        cross_length (default 800).
    custom: params: segments (required), interior (optional).
    """
    if kind == "tunnel":
        width = float(params.get("width", 150.0))
        length = float(params.get("length", 1200.0))
        if width <= 0 or length <= 0:
            raise DomainError("tunnel dimensions must be positive")
        h = width / 2.0
        half = length / 2.0
        segments = [
            [-h, -half, -h, half],
            [h, -half, h, half],
        ]
        return Environment(
            segments=np.array(segments),
            kind="tunnel",
            interior=((-h, h, -half, half),),
        )
    if kind in ("t-intersection", "t_intersection"):
        width = float(params.get("width", 150.0))
        stem_length = float(params.get("stem_length", 500.0))
        cross_length = float(params.get("cross_length", 800.0))
        if width <= 0 or stem_length <= 0 or cross_length <= 0:
            raise DomainError("t-intersection dimensions must be positive")
        h = width / 2.0
        y_near = h  # near wall of the cross corridor, above the sensor
        y_far = y_near + width
        y_bottom = y_near - stem_length
        x_end = cross_length / 2.0
        if x_end <= h:
            raise DomainError("cross_length must exceed the corridor width")
        segments = [
            [-h, y_bottom, -h, y_near],  # stem left wall
            [h, y_bottom, h, y_near],  # stem right wall
            [-h, y_bottom, h, y_bottom],  # stem end cap
            [-x_end, y_near, -h, y_near],  # cross near wall, left of the junction
            [h, y_near, x_end, y_near],  # cross near wall, right of the junction
            [-x_end, y_far, x_end, y_far],  # cross far wall
        ]
        return Environment(
            segments=np.array(segments),
            kind="t-intersection",
            interior=((-h, h, y_bottom, y_near), (-x_end, x_end, y_near, y_far)),
        )
    if kind == "custom":
        segments = params.get("segments")
        if segments is None:
            raise DomainError("custom environment requires segments")
        interior = tuple(tuple(float(v) for v in rect) for rect in params.get("interior", ()))
        return Environment(segments=np.asarray(segments, dtype=float), kind="custom", interior=interior)
    raise DomainError(f"unknown environment kind {kind!r}")


def sensor_pose_for_transform(truth: StateVector) -> StateVector:
    """World pose of the new-scan sensor for a given frame-to-frame transform.

    Under q = R(theta) p - t with the reference sensor at the world
    origin, the new sensor sits at world position (-x, -y) with heading
    theta. generate_trial_pair and the rigid-fit oracle both rely on this.
    """
    return StateVector(-truth.x, -truth.y, truth.theta)


def raycast_scan(
    env: Environment, sensor_pose: StateVector, spec: ScanSpec, frame_tag: str = "reference"
) -> Scan:
    """Cast spec.beam_count uniformly spaced beams and return body-frame hits.

    Beams that hit nothing or whose nearest hit exceeds max_range are
    dropped. Gaussian noise is added per Cartesian coordinate in the body
    frame after the hit computation; the result is deterministic for a
    fixed seed.
    """
    if not env.contains(sensor_pose.x, sensor_pose.y):
        raise DomainError("sensor pose lies outside the environment interior")
    origin = np.array([sensor_pose.x, sensor_pose.y])
    angles = sensor_pose.theta + 2.0 * math.pi * np.arange(spec.beam_count) / spec.beam_count
    directions = np.column_stack([np.cos(angles), np.sin(angles)])

    seg = env.segments
    a = seg[:, 0:2]  # segment start points
    edge = seg[:, 2:4] - a  # segment direction vectors
    rel = a - origin  # (S, 2)

    # Solve origin + t * d = a + u * edge for each beam/segment pair.
    denom = directions[:, 0:1] * edge[:, 1] - directions[:, 1:2] * edge[:, 0]  # (B, S)
    t_num = rel[:, 0] * edge[:, 1] - rel[:, 1] * edge[:, 0]  # (S,)
    u_num = rel[:, 0] * directions[:, 1:2] - rel[:, 1] * directions[:, 0:1]  # (B, S)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = t_num / denom
        u = u_num / denom
    valid = (
        (np.abs(denom) > 0)
        & (t > 1e-9)
        & (u >= -_ENDPOINT_SLACK)
        & (u <= 1.0 + _ENDPOINT_SLACK)
    )
    t = np.where(valid, t, np.inf)
    nearest = t.min(axis=1)
    hit = nearest <= spec.max_range

    if not np.any(hit):
        raise DomainError("no beam hit any segment within max_range")
    world = origin + nearest[hit, None] * directions[hit]
    body = (world - origin) @ rotation_matrix(sensor_pose.theta)  # R^T applied row-wise
    if spec.noise_sigma > 0:
        rng = np.random.default_rng(spec.rng_seed)
        body = body + rng.normal(0.0, spec.noise_sigma, size=body.shape)
    return Scan(body, frame_tag=frame_tag)


def generate_trial_pair(env: Environment, trial: TrialSpec, spec: ScanSpec) -> tuple[Scan, Scan, StateVector]:
    """Reference scan from the origin pose, new scan from the displaced pose.

    Matching new against ref recovers trial.true_transform. Both scans are
    expressed in their own body frames with independently seeded noise.
    """
    truth = trial.true_transform
    new_pose = sensor_pose_for_transform(truth)
    ref_pose = StateVector(0.0, 0.0, 0.0)
    if not env.contains(new_pose.x, new_pose.y):
        raise DomainError("displaced sensor pose exits the environment")
    ref = raycast_scan(env, ref_pose, _with_seed(spec, trial.ref_seed), frame_tag="reference")
    new = raycast_scan(env, new_pose, _with_seed(spec, trial.new_seed), frame_tag="new")
    return ref, new, truth


def _with_seed(spec: ScanSpec, seed: int) -> ScanSpec:
    return ScanSpec(
        beam_count=spec.beam_count,
        noise_sigma=spec.noise_sigma,
        max_range=spec.max_range,
        rng_seed=seed,
    )


def fit_rigid_transform(new_xy: np.ndarray, ref_xy: np.ndarray) -> StateVector:
    """Closed-form least-squares fit of q = R(theta) p - t over known pairs.

    Test oracle for sign conventions; never used by the solvers. Inputs
    are (N, 2) arrays of corresponding points (new frame, ref frame).
    """
    p = np.asarray(new_xy, dtype=float)
    q = np.asarray(ref_xy, dtype=float)
    if p.shape != q.shape or p.ndim != 2 or p.shape[0] < 2:
        raise DomainError("rigid fit requires two equal (N>=2, 2) point arrays")
    pc = p - p.mean(axis=0)
    qc = q - q.mean(axis=0)
    sin_sum = float(np.sum(pc[:, 0] * qc[:, 1] - pc[:, 1] * qc[:, 0]))
    cos_sum = float(np.sum(pc[:, 0] * qc[:, 0] + pc[:, 1] * qc[:, 1]))
    theta = math.atan2(sin_sum, cos_sum)
    t = rotation_matrix(theta) @ p.mean(axis=0) - q.mean(axis=0)
    return StateVector(float(t[0]), float(t[1]), theta)


def environment_to_dict(env: Environment) -> dict:
    return {
        "kind": env.kind,
        "segments": [[float(v) for v in row] for row in env.segments],
        "interior": [list(rect) for rect in env.interior],
    }


def environment_from_dict(data: dict) -> Environment:
    return Environment(
        segments=np.asarray(data["segments"], dtype=float),
        kind=data.get("kind", "custom"),
        interior=tuple(tuple(float(v) for v in rect) for rect in data.get("interior", ())),
    )


def save_environment(env: Environment, path) -> None:
    with open(path, "w") as fh:
        json.dump(environment_to_dict(env), fh, indent=2, sort_keys=True)


def load_environment(path) -> Environment:
    with open(path) as fh:
        return environment_from_dict(json.load(fh))
