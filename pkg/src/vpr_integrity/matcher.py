"""Distance vectors, best-match retrieval and ground-truth tolerance labels."""

from __future__ import annotations

import enum

import numpy as np

from .core import DistanceMode, MatchRecord, Pose2D, QueryStream, ToleranceConfig, Traverse
from .errors import DimensionError


class DistanceMetric(str, enum.Enum):
    EUCLIDEAN = "euclidean"
    COSINE = "cosine"


def _refs(traverse_or_features) -> np.ndarray:
    if isinstance(traverse_or_features, Traverse):
        return traverse_or_features.features.astype(np.float64)
    return np.atleast_2d(np.asarray(traverse_or_features, dtype=np.float64))


def distance_matrix(queries, refs, metric=DistanceMetric.EUCLIDEAN, chunk: int = 64) -> np.ndarray:
    """(k, n) match distances between rows of ``queries`` and ``refs``."""
    metric = DistanceMetric(metric)
    Qm = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    R = _refs(refs)
    if Qm.shape[1] != R.shape[1]:
        raise DimensionError(f"query dimension {Qm.shape[1]} != reference dimension {R.shape[1]}")
    out = np.empty((Qm.shape[0], R.shape[0]))
    if metric is DistanceMetric.EUCLIDEAN:
        # Explicit differences (not the |a|^2 - 2ab + |b|^2 expansion) so that
        # a distance is exactly zero iff the vectors are equal.
        for s in range(0, Qm.shape[0], chunk):
            diff = Qm[s:s + chunk, None, :] - R[None, :, :]
            out[s:s + chunk] = np.sqrt(np.einsum("knm,knm->kn", diff, diff))
    else:
        rn = np.linalg.norm(R, axis=1)
        qn = np.linalg.norm(Qm, axis=1)
        denom = np.outer(qn, rn)
        sim = np.divide(Qm @ R.T, denom, out=np.zeros_like(out), where=denom > 0)
        out[:] = np.clip(1.0 - sim, 0.0, 2.0)
    return out


def distance_vector(query_feature, traverse, metric=DistanceMetric.EUCLIDEAN) -> np.ndarray:
    """Distance from one query feature to every reference feature."""
    q = np.asarray(query_feature, dtype=np.float64)
    if q.ndim != 1:
        raise DimensionError(f"expected a feature vector, got shape {q.shape}")
    return distance_matrix(q[None, :], traverse, metric)[0]


def best_match(distance_vector) -> int:
    """0-based index of the smallest distance; first occurrence on ties."""
    d = np.asarray(distance_vector, dtype=np.float64)
    if d.ndim != 1 or d.size == 0:
        raise DimensionError("best_match needs a non-empty vector")
    return int(np.argmin(d))


def label_match(pose_estimate: Pose2D, ground_truth: Pose2D, traverse: Traverse,
                cfg: ToleranceConfig) -> tuple[float, int]:
    """Position error of an estimate and its in-tolerance label (1 iff error <= tolerance)."""
    if cfg.distance_mode is DistanceMode.ALONG_TRACK:
        a = traverse.odom[traverse.nearest_index(pose_estimate)]
        b = traverse.odom[traverse.nearest_index(ground_truth)]
        err = float(abs(a - b))
    else:
        err = pose_estimate.distance_to(ground_truth)
    return err, int(err <= cfg.tolerance)


def along_track_position(traverse: Traverse, pose: Pose2D) -> float:
    return float(traverse.odom[traverse.nearest_index(pose)])


def match_queries(traverse: Traverse, queries: QueryStream,
                  metric=DistanceMetric.EUCLIDEAN,
                  tolerance: ToleranceConfig = ToleranceConfig()) -> list[MatchRecord]:
    """Run VPR for every query and label each best match against ground truth."""
    if queries.dim != traverse.dim:
        raise DimensionError(f"query dimension {queries.dim} != reference dimension {traverse.dim}")
    D = distance_matrix(queries.features, traverse, metric)
    records = []
    for k in range(len(queries)):
        b = best_match(D[k])
        est = traverse.pose(b)
        err, label = label_match(est, queries.gt_pose(k), traverse, tolerance)
        D[k].flags.writeable = False
        records.append(MatchRecord(k, D[k], b, est, err, label))
    return records
