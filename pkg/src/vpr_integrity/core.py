"""Domain types and the synthetic traverse generator.

Indices are 0-based in memory. Anything written for humans (CSV reports,
CLI output) is converted to 1-based at the boundary.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DatasetError, DimensionError


def wrap_angle(theta: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    wrapped = math.pi - math.fmod(math.pi - theta, 2.0 * math.pi)
    if wrapped <= -math.pi:
        wrapped += 2.0 * math.pi
    elif wrapped > math.pi:
        wrapped -= 2.0 * math.pi
    return wrapped


def _wrap_angles(theta: np.ndarray) -> np.ndarray:
    return np.array([wrap_angle(float(t)) for t in theta], dtype=np.float64)


def _frozen(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Pose2D:
    x: float
    y: float
    theta: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y) and math.isfinite(self.theta)):
            raise ConfigError(f"non-finite pose ({self.x}, {self.y}, {self.theta})")
        object.__setattr__(self, "theta", wrap_angle(float(self.theta)))

    def distance_to(self, other: "Pose2D") -> float:
        return math.hypot(self.x - other.x, self.y - other.y)

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta])


class DistanceMode(str, enum.Enum):
    ALONG_TRACK = "along-track"
    EUCLIDEAN = "euclidean"


@dataclass(frozen=True)
class ToleranceConfig:
    tolerance: float = 0.5
    distance_mode: DistanceMode = DistanceMode.ALONG_TRACK

    def __post_init__(self):
        if not (self.tolerance > 0 and math.isfinite(self.tolerance)):
            raise ConfigError(f"tolerance must be positive, got {self.tolerance}")
        object.__setattr__(self, "distance_mode", DistanceMode(self.distance_mode))


def pose_gaps(poses: np.ndarray) -> np.ndarray:
    """Planar Euclidean distance between consecutive poses."""
    d = np.diff(poses[:, :2], axis=0)
    return np.hypot(d[:, 0], d[:, 1])


def odom_from_poses(poses: np.ndarray) -> np.ndarray:
    """Cumulative along-track distance starting at 0."""
    return np.concatenate([[0.0], np.cumsum(pose_gaps(poses))])


class Traverse:
    """Ordered reference map: one pose, odometer reading and feature per image.

    ``poses`` is an (n, 3) array of x, y, theta. ``odom`` is the cumulative
    along-track distance (starts at 0, non-decreasing). ``features`` is
    (n, m) float32. Arrays are made read-only on construction.
    """

    def __init__(self, poses, features, odom=None, label: str = ""):
        poses = np.array(poses, dtype=np.float64, copy=True)
        features = np.array(features, dtype=np.float32, copy=True)
        if poses.ndim != 2 or poses.shape[1] != 3:
            raise DimensionError(f"poses must be (n, 3), got {poses.shape}")
        if features.ndim != 2:
            raise DimensionError(f"features must be (n, m), got {features.shape}")
        n = poses.shape[0]
        if n < 2:
            raise DatasetError(f"a traverse needs at least 2 references, got {n}")
        if features.shape[0] != n or features.shape[1] < 1:
            raise DimensionError(f"{n} poses but features of shape {features.shape}")
        if not np.all(np.isfinite(poses)):
            raise DatasetError("non-finite pose", row=int(np.argwhere(~np.isfinite(poses))[0, 0]))
        if not np.all(np.isfinite(features)):
            raise DatasetError("non-finite feature", row=int(np.argwhere(~np.isfinite(features))[0, 0]))
        poses[:, 2] = _wrap_angles(poses[:, 2])
        if odom is None:
            odom = odom_from_poses(poses)
        else:
            odom = np.array(odom, dtype=np.float64, copy=True)
            if odom.shape != (n,):
                raise DimensionError(f"odom must have length {n}, got {odom.shape}")
            if not np.all(np.isfinite(odom)):
                raise DatasetError("non-finite odometry", row=int(np.argwhere(~np.isfinite(odom))[0, 0]))
            if odom[0] != 0.0:
                raise DatasetError("odometry must start at 0", row=0)
            bad = np.flatnonzero(np.diff(odom) < 0)
            if bad.size:
                raise DatasetError("odometry decreases", row=int(bad[0]) + 1)
        self.poses = _frozen(poses)
        self.features = _frozen(features)
        self.odom = _frozen(odom)
        self.gaps = _frozen(pose_gaps(poses))
        self.label = label

    def __len__(self) -> int:
        return self.poses.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def pose(self, i: int) -> Pose2D:
        x, y, t = self.poses[i]
        return Pose2D(float(x), float(y), float(t))

    def nearest_index(self, pose: Pose2D) -> int:
        """Reference closest (planar Euclidean) to ``pose``; first on ties."""
        d = np.hypot(self.poses[:, 0] - pose.x, self.poses[:, 1] - pose.y)
        return int(np.argmin(d))

    def __eq__(self, other):
        if not isinstance(other, Traverse):
            return NotImplemented
        return (
            self.label == other.label
            and np.array_equal(self.poses, other.poses)
            and np.array_equal(self.odom, other.odom)
            and np.array_equal(self.features, other.features)
        )

    def __repr__(self):
        return f"Traverse(n={len(self)}, m={self.dim}, label={self.label!r})"


@dataclass(frozen=True)
class SynthTruth:
    """Provenance of a synthetic query stream.

    ``gt_index[k]`` is the reference query k was taken at; ``source_index[k]``
    is the reference its feature was built from (differs iff aliased).
    """

    gt_index: np.ndarray
    aliased: np.ndarray
    source_index: np.ndarray

    @property
    def n_aliased(self) -> int:
        return int(self.aliased.sum())


class QueryStream:
    """Ordered query observations with ground truth and odometer readings."""

    def __init__(self, features, gt_poses, odometer, rate_hint: float = 10.0,
                 truth: SynthTruth | None = None):
        features = np.array(features, dtype=np.float32, copy=True)
        gt_poses = np.array(gt_poses, dtype=np.float64, copy=True)
        odometer = np.array(odometer, dtype=np.float64, copy=True)
        if features.ndim != 2 or gt_poses.ndim != 2 or gt_poses.shape[1] != 3:
            raise DimensionError("query features must be (k, m) and poses (k, 3)")
        k = features.shape[0]
        if k < 1 or gt_poses.shape[0] != k or odometer.shape != (k,):
            raise DimensionError("query features, poses and odometer lengths differ")
        for name, arr in (("feature", features), ("pose", gt_poses), ("odometer", odometer)):
            if not np.all(np.isfinite(arr)):
                raise DatasetError(f"non-finite {name}", row=int(np.argwhere(~np.isfinite(arr))[0, 0]))
        bad = np.flatnonzero(np.diff(odometer) < 0)
        if bad.size:
            raise DatasetError("odometer decreases", row=int(bad[0]) + 1)
        gt_poses[:, 2] = _wrap_angles(gt_poses[:, 2])
        self.features = _frozen(features)
        self.gt_poses = _frozen(gt_poses)
        self.odometer = _frozen(odometer)
        self.rate_hint = float(rate_hint)
        self.truth = truth

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def gt_pose(self, k: int) -> Pose2D:
        x, y, t = self.gt_poses[k]
        return Pose2D(float(x), float(y), float(t))

    def __eq__(self, other):
        if not isinstance(other, QueryStream):
            return NotImplemented
        return (
            np.array_equal(self.features, other.features)
            and np.array_equal(self.gt_poses, other.gt_poses)
            and np.array_equal(self.odometer, other.odometer)
        )


@dataclass(frozen=True)
class MatchRecord:
    """VPR outcome for one query. ``best_index`` is 0-based."""

    query_index: int
    distance_vector: np.ndarray = field(repr=False)
    best_index: int
    pose_estimate: Pose2D
    gt_error: float
    label: int

    @property
    def match_distance(self) -> float:
        return float(self.distance_vector[self.best_index])


@dataclass(frozen=True)
class SynthConfig:
    """Synthetic traverse parameters.

    ``alias_residual`` is the fraction of an aliased query's perturbation
    that points back toward its true place (0 gives a pure copy of the
    wrong reference, which no monitor can tell apart from a correct match).
    The total perturbation size of an aliased query matches ordinary
    noise, so aliased matches are as close as correct ones.
    """

    n: int
    m: int
    spacing: float = 0.3
    aliasing_rate: float = 0.2
    noise_sigma: float = 0.05
    seed: int = 0
    alias_residual: float = 0.8
    min_alias_offset: int = 5
    label: str = "synthetic"

    def __post_init__(self):
        if self.n < 2:
            raise ConfigError(f"n must be >= 2, got {self.n}")
        if self.m < 2:
            raise ConfigError(f"m must be >= 2, got {self.m}")
        if not self.spacing > 0:
            raise ConfigError(f"spacing must be positive, got {self.spacing}")
        if not 0.0 <= self.aliasing_rate <= 1.0:
            raise ConfigError(f"aliasing_rate must be in [0, 1], got {self.aliasing_rate}")
        if not self.noise_sigma >= 0:
            raise ConfigError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if not 0.0 <= self.alias_residual < 1.0:
            raise ConfigError(f"alias_residual must be in [0, 1), got {self.alias_residual}")
        if self.aliasing_rate > 0 and self.n < 2 * self.min_alias_offset:
            raise ConfigError(
                f"n={self.n} too small for aliasing offsets >= {self.min_alias_offset}")


def _synthetic_path(n: int, spacing: float, rng: np.random.Generator) -> np.ndarray:
    # Bounded heading oscillation keeps the path from folding back on itself.
    phase = rng.uniform(0.0, 2.0 * np.pi)
    period = rng.uniform(40.0, 80.0)
    k = np.arange(n)
    heading = 0.6 * np.sin(2.0 * np.pi * k / period + phase)
    steps = np.stack([np.cos(heading[:-1]), np.sin(heading[:-1])], axis=1) * spacing
    xy = np.concatenate([[[0.0, 0.0]], np.cumsum(steps, axis=0)])
    return np.column_stack([xy, heading])


def generate_synthetic(config: SynthConfig) -> tuple[Traverse, QueryStream]:
    """Build a reference traverse and a query stream with injected aliasing.

    One query is taken at each reference pose. Its feature is the reference
    feature plus N(0, noise_sigma^2) per component, renormalized. For
    ``floor(aliasing_rate * n)`` seeded queries the feature is instead built
    from a uniformly chosen reference at least ``min_alias_offset`` indices
    away. Provenance is attached as ``queries.truth``.
    """
    cfg = config
    rng = np.random.default_rng(cfg.seed)
    poses = _synthetic_path(cfg.n, cfg.spacing, rng)

    refs = rng.standard_normal((cfg.n, cfg.m))
    refs /= np.linalg.norm(refs, axis=1, keepdims=True)
    refs32 = refs.astype(np.float32)
    refs = refs32.astype(np.float64)

    n_alias = math.floor(cfg.aliasing_rate * cfg.n)
    aliased = np.zeros(cfg.n, dtype=bool)
    aliased[rng.choice(cfg.n, size=n_alias, replace=False)] = True

    source = np.arange(cfg.n)
    queries = np.empty((cfg.n, cfg.m))
    far = cfg.min_alias_offset
    for k in range(cfg.n):
        noise = rng.standard_normal(cfg.m) * cfg.noise_sigma
        if aliased[k]:
            candidates = np.concatenate([np.arange(0, max(0, k - far + 1)), np.arange(k + far, cfg.n)])
            w = int(rng.choice(candidates))
            source[k] = w
            toward = refs[k] - (refs[k] @ refs[w]) * refs[w]
            toward /= np.linalg.norm(toward)
            rho = cfg.alias_residual
            q = refs[w] + rho * np.linalg.norm(noise) * toward + math.sqrt(1.0 - rho * rho) * noise
        else:
            q = refs[k] + noise
        queries[k] = q / np.linalg.norm(q)

    traverse = Traverse(poses, refs32, label=cfg.label)
    truth = SynthTruth(
        gt_index=_frozen(np.arange(cfg.n)),
        aliased=_frozen(aliased),
        source_index=_frozen(source),
    )
    stream = QueryStream(queries.astype(np.float32), poses, traverse.odom, truth=truth)
    return traverse, stream
