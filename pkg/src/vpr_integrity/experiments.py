"""Experiment simulators, naive threshold baselines and metrics.

Experiment 1 replays the query stream from sampled start locations toward
goals a fixed along-track distance ahead; the robot declares arrival at
the first acted-upon single-query estimate at or beyond
``goal - arrival_margin``. Experiment 2 runs history-of-queries
localization over the whole stream.

All positions are along-track: cumulative odometry of the reference
traverse at the reference nearest to a pose.
"""

from __future__ import annotations

import csv
import enum
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .core import QueryStream, ToleranceConfig, Traverse
from .errors import ConfigError, DatasetError, VprError
from .featurizer import CATALOGUE_VERSION, featurize_batch
from .localizer import HistoryWindow, hoq_localize, update_history
from .matcher import DistanceMetric, distance_matrix
from .mlp import MlpModel, predict

log = logging.getLogger(__name__)

# Training (precision, recall) of the AP-GeM, NetVLAD and SALAD monitors.
REFERENCE_OPERATING_POINTS = {
    "AP-GeM": (0.916, 0.213),
    "NetVLAD": (0.882, 0.293),
    "SALAD": (0.986, 0.636),
}


# -- per-stream VPR outcomes -------------------------------------------------

@dataclass
class QueryTable:
    """VPR outcome of every query in a stream, computed once and shared by methods."""

    distances: np.ndarray      # (k, n)
    best_index: np.ndarray     # (k,) 0-based reference index
    match_distance: np.ndarray
    est_along: np.ndarray      # along-track position of the best match
    gt_along: np.ndarray       # along-track position of the ground truth
    error: np.ndarray          # along-track or Euclidean error per tolerance mode
    label: np.ndarray          # 1 iff error <= tolerance
    odometer: np.ndarray
    tolerance: ToleranceConfig
    metric: DistanceMetric
    _features: np.ndarray | None = field(default=None, repr=False)
    _query_feats: np.ndarray | None = field(default=None, repr=False)
    _ref_feats: np.ndarray | None = field(default=None, repr=False)

    def __len__(self):
        return self.best_index.shape[0]

    @property
    def features(self) -> np.ndarray:
        """(k, 192) monitor inputs, computed on first use."""
        if self._features is None:
            self._features = featurize_batch(
                self.distances, self._query_feats, self._ref_feats[self.best_index])
        return self._features


def build_query_table(traverse: Traverse, queries: QueryStream,
                      metric=DistanceMetric.EUCLIDEAN,
                      tolerance: ToleranceConfig = ToleranceConfig()) -> QueryTable:
    metric = DistanceMetric(metric)
    D = distance_matrix(queries.features, traverse, metric)
    best = np.argmin(D, axis=1)
    mdist = D[np.arange(len(best)), best]
    # nearest reference to each ground-truth pose
    gx = queries.gt_poses[:, 0][:, None] - traverse.poses[:, 0][None, :]
    gy = queries.gt_poses[:, 1][:, None] - traverse.poses[:, 1][None, :]
    gt_idx = np.argmin(np.hypot(gx, gy), axis=1)
    est_along = traverse.odom[best]
    gt_along = traverse.odom[gt_idx]
    if tolerance.distance_mode.value == "along-track":
        error = np.abs(est_along - gt_along)
    else:
        error = np.hypot(traverse.poses[best, 0] - queries.gt_poses[:, 0],
                         traverse.poses[best, 1] - queries.gt_poses[:, 1])
    label = (error <= tolerance.tolerance).astype(np.int8)
    return QueryTable(D, best, mdist, est_along, gt_along, error, label,
                      np.asarray(queries.odometer, dtype=np.float64), tolerance, metric,
                      _query_feats=queries.features.astype(np.float64),
                      _ref_feats=traverse.features.astype(np.float64))


# -- methods ---------------------------------------------------------------

class MethodKind(str, enum.Enum):
    BASELINE = "baseline"
    THRESHOLD = "threshold"
    VERIFIED = "verified"
    ORACLE = "oracle"


@dataclass(frozen=True)
class Method:
    """How a match is judged: keep all, distance threshold, monitor, or ground truth."""

    kind: MethodKind
    threshold: float | None = None
    model: MlpModel | None = field(default=None, repr=False)
    name: str = ""

    @classmethod
    def baseline(cls):
        return cls(MethodKind.BASELINE, name="baseline")

    @classmethod
    def with_threshold(cls, threshold: float, name: str = "threshold"):
        return cls(MethodKind.THRESHOLD, threshold=float(threshold), name=name)

    @classmethod
    def verified(cls, model: MlpModel):
        return cls(MethodKind.VERIFIED, model=model, name="verified")

    @classmethod
    def oracle(cls):
        return cls(MethodKind.ORACLE, name="oracle")

    @property
    def label(self) -> str:
        return self.name or self.kind.value

    @property
    def filters(self) -> bool:
        return self.kind is not MethodKind.BASELINE


def method_predictions(method: Method, table: QueryTable) -> np.ndarray:
    """Binary in-tolerance prediction per query (all ones for the baseline)."""
    if method.kind is MethodKind.BASELINE:
        return np.ones(len(table), dtype=np.int8)
    if method.kind is MethodKind.THRESHOLD:
        return (table.match_distance <= method.threshold).astype(np.int8)
    if method.kind is MethodKind.ORACLE:
        return table.label.astype(np.int8)
    if method.model is None:
        raise ConfigError("verified method needs a trained model")
    if method.model.catalogue_version != CATALOGUE_VERSION:
        raise ConfigError("model was trained on a different statistic catalogue")
    _, binary = predict(method.model, table.features)
    return binary


# -- records and metrics ---------------------------------------------------

@dataclass(frozen=True)
class QueryOutcome:
    """``status`` is estimate, rejected, declined or warmup; index is 0-based."""

    query: int
    status: str
    index: int | None = None
    error: float | None = None
    in_tolerance: bool | None = None


@dataclass(frozen=True)
class MissionRecord:
    start: int
    start_along: float
    goal_distance: float
    goal_along: float
    arrived: bool
    arrival_query: int | None
    goal_error: float
    complete: bool


@dataclass(frozen=True)
class Stats:
    mean: float
    median: float
    max: float

    @classmethod
    def of(cls, values):
        v = np.asarray(values, dtype=np.float64)
        if v.size == 0:
            return None
        return cls(float(v.mean()), float(np.median(v)), float(v.max()))


@dataclass
class MetricsReport:
    method: str
    n_queries: int
    n_opportunities: int
    n_estimates: int
    n_in_tolerance: int
    n_declined: int
    precision: float | None
    recall: float | None
    localization_error: Stats | None
    mission_completion: float | None = None
    goal_error: Stats | None = None
    n_missions: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def compute_metrics(outcomes, missions=None, method: str = "") -> MetricsReport:
    """Aggregate per-query outcomes (and optionally missions).

    Precision counts in-tolerance estimates among emitted/acted ones.
    Recall divides the same count by every non-warmup query, each being an
    opportunity to localize. Undefined fractions are None.
    """
    outcomes = list(outcomes)
    if not outcomes:
        raise VprError("no records to compute metrics from")
    est = [o for o in outcomes if o.status == "estimate"]
    opportunities = sum(1 for o in outcomes if o.status != "warmup")
    tp = sum(1 for o in est if o.in_tolerance)
    report = MetricsReport(
        method=method,
        n_queries=len(outcomes),
        n_opportunities=opportunities,
        n_estimates=len(est),
        n_in_tolerance=tp,
        n_declined=sum(1 for o in outcomes if o.status == "declined"),
        precision=tp / len(est) if est else None,
        recall=tp / opportunities if opportunities else None,
        localization_error=Stats.of([o.error for o in est]),
    )
    if missions is not None:
        missions = list(missions)
        report.n_missions = len(missions)
        if missions:
            report.mission_completion = sum(m.complete for m in missions) / len(missions)
            report.goal_error = Stats.of([m.goal_error for m in missions])
    return report


# -- Experiment 1 ----------------------------------------------------------

@dataclass(frozen=True)
class Exp1Config:
    n_starts: int = 50
    goal_distances: tuple = (5.0, 10.0, 25.0, 50.0)
    assessment_tolerance: float = 0.5
    arrival_margin: float = 0.10
    seed: int = 0

    def __post_init__(self):
        if self.n_starts < 1 or not self.goal_distances:
            raise ConfigError("need at least one start and one goal distance")
        if min(self.goal_distances) <= 0 or self.assessment_tolerance <= 0 or self.arrival_margin < 0:
            raise ConfigError("goal distances and tolerances must be positive")


@dataclass
class Exp1Result:
    missions: list
    outcomes: list
    metrics: MetricsReport
    skipped: list = field(default_factory=list)


def sample_starts(traverse: Traverse, cfg: Exp1Config) -> np.ndarray:
    """Seeded start indices, uniform over references with room for the longest goal."""
    room = traverse.odom[-1] - max(cfg.goal_distances)
    valid = np.flatnonzero(traverse.odom <= room)
    if valid.size == 0:
        return np.array([], dtype=np.int64)
    rng = np.random.default_rng(cfg.seed)
    replace = valid.size < cfg.n_starts
    return np.sort(rng.choice(valid, size=cfg.n_starts, replace=replace))


def run_exp1(traverse: Traverse, queries: QueryStream, method: Method, cfg: Exp1Config = Exp1Config(),
             tolerance: ToleranceConfig = ToleranceConfig(), metric=DistanceMetric.EUCLIDEAN,
             table: QueryTable | None = None) -> Exp1Result:
    if table is None:
        table = build_query_table(traverse, queries, metric, tolerance)
    acted = method_predictions(method, table).astype(bool)
    outcomes = [
        QueryOutcome(k, "estimate" if acted[k] else "rejected",
                     int(table.best_index[k]) if acted[k] else None,
                     float(table.error[k]) if acted[k] else None,
                     bool(table.label[k]) if acted[k] else None)
        for k in range(len(table))
    ]
    missions, skipped = [], []
    end_along = traverse.odom[-1]
    for s in sample_starts(traverse, cfg):
        start_along = float(traverse.odom[s])
        for g in cfg.goal_distances:
            goal = start_along + g
            if goal > end_along:
                skipped.append({"start": int(s), "goal_distance": g, "reason": "goal beyond traverse"})
                log.warning("skipping mission from %d: goal %.2f m beyond traverse", s, goal)
                continue
            ahead = np.flatnonzero(table.gt_along >= start_along)
            if ahead.size == 0:
                skipped.append({"start": int(s), "goal_distance": g, "reason": "no queries after start"})
                continue
            replay = np.arange(ahead[0], len(table))
            hits = replay[acted[replay] & (table.est_along[replay] >= goal - cfg.arrival_margin)]
            if hits.size:
                k = int(hits[0])
                err = abs(float(table.gt_along[k]) - goal)
                missions.append(MissionRecord(int(s), start_along, float(g), goal, True, k, err,
                                              err <= cfg.assessment_tolerance))
            else:
                err = abs(float(table.gt_along[replay[-1]]) - goal)
                missions.append(MissionRecord(int(s), start_along, float(g), goal, False, None, err, False))
    metrics = compute_metrics(outcomes, missions, method.label)
    return Exp1Result(missions, outcomes, metrics, skipped)


# -- Experiment 2 ----------------------------------------------------------

@dataclass(frozen=True)
class Exp2Config:
    window_d: float = 1.5
    warmup: float | None = None

    def __post_init__(self):
        if not self.window_d > 0:
            raise ConfigError(f"window_d must be positive, got {self.window_d}")
        if self.warmup is not None and self.warmup < 0:
            raise ConfigError("warmup must be non-negative")

    @property
    def warmup_distance(self) -> float:
        return self.window_d if self.warmup is None else self.warmup


@dataclass
class Exp2Result:
    outcomes: list
    metrics: MetricsReport


def run_exp2(traverse: Traverse, queries: QueryStream, method: Method, cfg: Exp2Config = Exp2Config(),
             tolerance: ToleranceConfig = ToleranceConfig(), metric=DistanceMetric.EUCLIDEAN,
             table: QueryTable | None = None) -> Exp2Result:
    if table is None:
        table = build_query_table(traverse, queries, metric, tolerance)
    preds = method_predictions(method, table)
    verified = method.filters
    history = HistoryWindow(window_d=cfg.window_d)
    origin = table.odometer[0]
    outcomes = []
    for k in range(len(table)):
        w = float(table.odometer[k])
        history = update_history(history, int(table.best_index[k]), float(table.match_distance[k]),
                                 w, int(preds[k]))
        if w - origin < cfg.warmup_distance:
            outcomes.append(QueryOutcome(k, "warmup"))
            continue
        res = hoq_localize(history, w, traverse, verified)
        if res.declined:
            outcomes.append(QueryOutcome(k, "declined"))
            continue
        err = abs(float(traverse.odom[res.index]) - float(table.gt_along[k]))
        outcomes.append(QueryOutcome(k, "estimate", res.index, err, err <= tolerance.tolerance))
    return Exp2Result(outcomes, compute_metrics(outcomes, method=method.label))


# -- naive thresholds ------------------------------------------------------

@dataclass(frozen=True)
class ThresholdBaseline:
    kind: str              # "N_P" or "N_R"
    target: float
    threshold: float
    precision: float
    recall: float
    attained: bool = True


def threshold_sweep(distances, labels):
    """(thresholds, precision, recall) for accepting matches with distance <= t.

    Thresholds are the sorted unique match distances.
    """
    d = np.asarray(distances, dtype=np.float64)
    y = np.asarray(labels).astype(np.int64)
    order = np.argsort(d, kind="stable")
    d, y = d[order], y[order]
    tp = np.cumsum(y)
    last = np.r_[np.flatnonzero(d[1:] != d[:-1]), d.size - 1]
    accepted = last + 1
    return d[last], tp[last] / accepted, tp[last] / y.sum()


def calibrate_threshold(training, kind: str, target: float, labels=None) -> ThresholdBaseline:
    """Naive match-distance threshold matching a target precision (N_P) or recall (N_R).

    ``training`` is a list of MatchRecord, or an array of match distances
    with ``labels`` given separately. N_P is the largest threshold whose
    training precision reaches the target; N_R the smallest whose recall
    does. An unreachable target returns the closest operating point with
    ``attained=False``.
    """
    if labels is None:
        distances = [m.match_distance for m in training]
        labels = [m.label for m in training]
    else:
        distances = training
    labels = np.asarray(labels)
    if labels.size == 0 or labels.min() == labels.max():
        raise ConfigError("threshold calibration needs both in- and out-of-tolerance matches")
    t, prec, rec = threshold_sweep(distances, labels)
    if kind == "N_P":
        ok = np.flatnonzero(prec >= target)
        if ok.size:
            i, attained = int(ok[-1]), True
        else:
            best = prec.max()
            i, attained = int(np.flatnonzero(prec == best)[-1]), False
    elif kind == "N_R":
        ok = np.flatnonzero(rec >= target)
        if ok.size:
            i, attained = int(ok[0]), True
        else:
            i, attained = len(t) - 1, False
    else:
        raise ConfigError(f"kind must be N_P or N_R, got {kind!r}")
    if not attained:
        log.warning("%s target %.4f unattainable; using closest operating point", kind, target)
    return ThresholdBaseline(kind, float(target), float(t[i]), float(prec[i]), float(rec[i]), attained)


def monitor_operating_point(model: MlpModel, table: QueryTable) -> tuple[float, float]:
    """Training precision and recall of a monitor on a labelled query table."""
    _, pred = predict(model, table.features)
    tp = int(np.sum((pred == 1) & (table.label == 1)))
    npred = int(pred.sum())
    return (tp / npred if npred else 0.0), tp / int(table.label.sum())


def write_thresholds(path, baselines, extra: dict | None = None) -> None:
    doc = {"thresholds": [asdict(b) for b in baselines]}
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def read_thresholds(path) -> dict:
    doc = json.loads(Path(path).read_text())
    return {b["kind"]: ThresholdBaseline(**b) for b in doc["thresholds"]}


# -- result files ----------------------------------------------------------

def _num(x):
    return "" if x is None else repr(float(x))


def _write_csv(path, header: dict, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("# " + json.dumps(header, sort_keys=True) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        w.writerows(rows)


def read_result_csv(path) -> tuple[dict, list]:
    with open(path, newline="") as fh:
        first = fh.readline()
        if not first.startswith("# "):
            raise DatasetError(f"{path}: missing configuration header line")
        header = json.loads(first[2:])
        rows = list(csv.DictReader(fh))
    return header, rows


def _outcome_rows(outcomes, method):
    return [[o.query + 1, method, o.status, _num(o.error),
             "" if o.index is None else o.index + 1] for o in outcomes]


def write_exp1_results(result: Exp1Result, out_dir, header: dict) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    method = result.metrics.method
    _write_csv(out / "exp1_missions.csv", header,
               ["start", "goal", "method", "arrived", "goal_error"],
               [[m.start + 1, _num(m.goal_distance), method, int(m.arrived), _num(m.goal_error)]
                for m in result.missions])
    _write_csv(out / "exp1_queries.csv", header, ["query", "method", "status", "error", "index"],
               _outcome_rows(result.outcomes, method))
    _write_json(out / "metrics.json", {"config": header, "metrics": result.metrics.to_dict(),
                                       "skipped_missions": result.skipped})


def write_exp2_results(result: Exp2Result, out_dir, header: dict) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    method = result.metrics.method
    _write_csv(out / "exp2_queries.csv", header, ["query", "method", "status", "error", "index"],
               _outcome_rows(result.outcomes, method))
    _write_json(out / "metrics.json", {"config": header, "metrics": result.metrics.to_dict()})


def _write_json(path, doc) -> None:
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _outcomes_from_rows(rows, tolerance):
    outcomes = []
    for r in rows:
        err = float(r["error"]) if r["error"] else None
        idx = int(r["index"]) - 1 if r.get("index") else None
        outcomes.append(QueryOutcome(int(r["query"]) - 1, r["status"], idx, err,
                                     None if err is None else err <= tolerance))
    return outcomes


def metrics_from_results(results_dir) -> MetricsReport:
    """Recompute the metrics of a simulation run from its CSV files."""
    d = Path(results_dir)
    if (d / "exp2_queries.csv").exists():
        header, rows = read_result_csv(d / "exp2_queries.csv")
        method = rows[0]["method"] if rows else header.get("method", "")
        return compute_metrics(_outcomes_from_rows(rows, header["tolerance"]), method=method)
    if (d / "exp1_missions.csv").exists():
        header, mrows = read_result_csv(d / "exp1_missions.csv")
        _, qrows = read_result_csv(d / "exp1_queries.csv")
        tol = header["assessment_tolerance"]
        missions = []
        for r in mrows:
            err = float(r["goal_error"])
            arrived = r["arrived"] == "1"
            missions.append(MissionRecord(int(r["start"]) - 1, math.nan, float(r["goal"]), math.nan,
                                          arrived, None, err, arrived and err <= tol))
        method = qrows[0]["method"] if qrows else header.get("method", "")
        return compute_metrics(_outcomes_from_rows(qrows, header["tolerance"]), missions, method)
    raise DatasetError(f"{d}: no exp1_missions.csv or exp2_queries.csv found")
