"""Single-query verification and history-of-queries (HoQ) localization.

HoQ keeps the best-match index, match distance, odometer reading and
integrity prediction of every query seen in the last ``window_d`` meters.
To localize, it picks the lowest-distance entry (optionally ignoring
entries predicted out-of-tolerance) and extrapolates forward along the
reference poses by the odometer distance travelled since that entry.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import MatchRecord, Pose2D, Traverse
from .errors import ConfigError, EmptyHistoryError


@dataclass(frozen=True)
class HistoryEntry:
    match_index: int
    match_distance: float
    odometer: float
    prediction: int
    pose: Pose2D | None = None


@dataclass(frozen=True)
class HistoryWindow:
    entries: tuple = ()
    window_d: float = 1.5

    def __post_init__(self):
        if not self.window_d >= 0:
            raise ConfigError(f"window_d must be >= 0, got {self.window_d}")

    def __len__(self):
        return len(self.entries)

    @property
    def distances(self) -> np.ndarray:
        return np.array([e.match_distance for e in self.entries], dtype=np.float64)

    @property
    def predictions(self) -> np.ndarray:
        return np.array([e.prediction for e in self.entries], dtype=np.int8)


@dataclass(frozen=True)
class SingleQueryResult:
    accepted: bool
    pose: Pose2D | None
    reference_index: int | None


@dataclass(frozen=True)
class LocalizationResult:
    """``index`` and ``pose`` are None when the window was declined.

    ``best_entry`` is the position in the history window of the match used
    for extrapolation and ``delta`` the odometer distance since it.
    """

    index: int | None
    pose: Pose2D | None
    best_entry: int | None
    delta: float | None
    verified: bool

    @property
    def declined(self) -> bool:
        return self.index is None


def verify_single(match: MatchRecord, prediction, traverse: Traverse | None = None) -> SingleQueryResult:
    """Accept the best-match pose iff the monitor predicts it in-tolerance."""
    binary = getattr(prediction, "binary", prediction)
    if int(binary) == 1:
        pose = traverse.pose(match.best_index) if traverse is not None else match.pose_estimate
        return SingleQueryResult(True, pose, match.best_index)
    return SingleQueryResult(False, None, None)


def update_history(history: HistoryWindow, match_index: int, match_distance: float,
                   odometer: float, prediction: int, pose: Pose2D | None = None) -> HistoryWindow:
    """Append an entry and drop those more than ``window_d`` meters behind it."""
    if history.entries and odometer < history.entries[-1].odometer:
        raise ConfigError(
            f"odometer went backwards: {odometer} < {history.entries[-1].odometer}")
    entry = HistoryEntry(int(match_index), float(match_distance), float(odometer), int(prediction), pose)
    kept = tuple(e for e in history.entries if odometer - e.odometer <= history.window_d)
    return HistoryWindow(kept + (entry,), history.window_d)


def update_history_from_match(history: HistoryWindow, match: MatchRecord, prediction,
                              odometer: float) -> HistoryWindow:
    binary = getattr(prediction, "binary", prediction)
    return update_history(history, match.best_index, match.match_distance, odometer,
                          int(binary), match.pose_estimate)


def hoq_best(history: HistoryWindow, verified: bool) -> int | None:
    """Window position of the lowest-distance entry, or None if declined.

    In verified mode entries predicted out-of-tolerance get distance
    ``1 + max(D)``; if the minimum is still above ``max(D)`` every entry
    was rejected and the window is declined.
    """
    if not history.entries:
        raise EmptyHistoryError("history window is empty")
    D = history.distances
    if not verified:
        return int(np.argmin(D))
    top = D.max()
    D_hat = np.where(history.predictions == 1, D, 1.0 + top)
    b = int(np.argmin(D_hat))
    if D_hat[b] > top:
        return None
    return b


def extrapolate(traverse: Traverse, start: int, delta: float) -> int:
    """Reference index whose along-track distance from ``start`` is closest to ``delta``.

    Along-track distances are running sums of consecutive pose gaps,
    beginning with 0 at ``start``; ties go to the earliest index, and a
    ``delta`` past the end of the traverse lands on the last reference.
    """
    T = np.concatenate([[0.0], traverse.gaps[start:]])
    S = np.cumsum(T)
    return start + int(np.argmin(np.abs(delta - S)))


def hoq_localize(history: HistoryWindow, current_odometer: float, traverse: Traverse,
                 verified: bool) -> LocalizationResult:
    b = hoq_best(history, verified)
    if b is None:
        return LocalizationResult(None, None, None, None, verified)
    entry = history.entries[b]
    delta = current_odometer - entry.odometer
    if delta < 0:
        raise ConfigError(
            f"current odometer {current_odometer} is behind history entry {entry.odometer}")
    q = extrapolate(traverse, entry.match_index, abs(delta))
    return LocalizationResult(q, traverse.pose(q), b, abs(delta), verified)
