"""Hand-crafted statistics turning one query's VPR output into monitor input.

Each of the four vectors D (distances), Q (query feature), R (best-match
reference feature) and V = R - Q is summarized by the same 48 statistics;
the blocks are concatenated in that order into a 192-vector.

Statistics that do not depend on element order are computed from the
ascending sort, so they are bit-identical under any permutation of the
input. All divisions go through a guard that returns 0 when the
denominator magnitude is below ``EPS``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, VersionError

EPS = 1e-12
CATALOGUE_VERSION = 1
N_STATS = 48
N_BLOCKS = 4
N_FEATURES = N_STATS * N_BLOCKS

# (name, formula, order_sensitive). v has length n; s = sort(v) ascending (1-based s1 <= s2 <= ...);
# mu/sd = population mean/std; d = first differences; safe(a, b) = a/b if |b| >= eps else 0.
_DEFINITIONS = [
    # moments
    ("mean", "mu", False),
    ("std", "population standard deviation sd", False),
    ("var", "sd^2", False),
    ("kurtosis", "excess kurtosis m4/sd^4 - 3; 0 if var < eps", False),
    ("skewness", "m3/sd^3; 0 if var < eps", False),
    ("min", "s1", False),
    ("max", "sn", False),
    ("range", "sn - s1", False),
    # order statistics
    ("median", "50th percentile (linear interpolation)", False),
    ("q25", "25th percentile", False),
    ("q75", "75th percentile", False),
    ("iqr", "q75 - q25", False),
    ("p05", "5th percentile", False),
    ("p95", "95th percentile", False),
    ("argmin_frac", "(0-based first index of min) / n", True),
    ("argmax_frac", "(0-based first index of max) / n", True),
    # normalized-shape ratios
    ("mean_over_max", "safe(mu, sn)", False),
    ("min_over_mean", "safe(s1, mu)", False),
    ("max_minus_mean_over_std", "safe(sn - mu, sd); 0 if var < eps", False),
    ("mean_minus_min_over_std", "safe(mu - s1, sd); 0 if var < eps", False),
    ("coef_variation", "safe(sd, mu); 0 if var < eps", False),
    ("median_over_mean", "safe(median, mu)", False),
    ("mean_square", "mean(v^2)", False),
    ("rms", "sqrt(mean(v^2))", False),
    # sorted-gap statistics
    ("gap12", "s2 - s1", False),
    ("gap12_over_range", "safe(s2 - s1, sn - s1 + eps)", False),
    ("s1_over_s2", "safe(s1, s2 + eps)", False),
    ("low5_mean_over_mean", "safe(mean(s1..s5), mu); all entries if n < 5", False),
    ("low5_std", "std(s1..s5); all entries if n < 5", False),
    ("low_decile_contrast", "mean(s1..sk) - mean(s(k+1)..sn), k = max(1, floor(n/10))", False),
    ("s2_over_max", "safe(s2, sn)", False),
    ("argmin_argmin2_sep", "|first argmin - index of second smallest (stable sort)| / n", True),
    # first-difference statistics
    ("diff_mean", "mean(d)", True),
    ("diff_std", "std(d)", True),
    ("diff_abs_mean", "mean(|d|)", True),
    ("diff_abs_max", "max(|d|)", True),
    ("sign_change_frac", "#{i: d_i * d_(i+1) < 0} / max(1, n - 2)", True),
    ("local_min_frac", "#{interior i: v_i < v_(i-1) and v_i < v_(i+1)} / n", True),
    ("local_max_frac", "#{interior i: v_i > v_(i-1) and v_i > v_(i+1)} / n", True),
    ("total_variation", "sum(|d|) / n", True),
    # distribution statistics
    ("hist_entropy", "entropy of 10 equal bins over [s1, sn] / log(10); 0 if range < eps", False),
    ("frac_within_1std", "#{|v - mu| <= sd} / n", False),
    ("frac_below_mean", "#{v < mu} / n", False),
    ("frac_near_min", "#{v - s1 <= 0.05 (sn - s1)} / n", False),
    ("lag1_autocorr", "sum((v_i - mu)(v_(i+1) - mu)) / (n var); 0 if var < eps", True),
    ("gini", "Gini coefficient of v - s1; 0 if sum(v - s1) < eps", False),
    ("peak_to_avg_depth", "safe(max(sn - v), mean(sn - v))", False),
    ("frac_at_min", "#{v - s1 <= eps} / n", False),
]

assert len(_DEFINITIONS) == N_STATS


@dataclass(frozen=True)
class StatCatalogue:
    version: int
    names: tuple
    formulas: tuple
    order_sensitive: tuple

    def __len__(self):
        return len(self.names)

    @property
    def permutation_invariant_mask(self) -> np.ndarray:
        return ~np.array(self.order_sensitive, dtype=bool)

    def to_json(self) -> str:
        doc = {
            "version": self.version,
            "eps": EPS,
            "blocks": ["D", "Q", "R", "V"],
            "statistics": [
                {"index": i + 1, "name": n, "formula": f, "order_sensitive": o}
                for i, (n, f, o) in enumerate(zip(self.names, self.formulas, self.order_sensitive))
            ],
        }
        return json.dumps(doc, indent=2) + "\n"


CATALOGUE = StatCatalogue(
    version=CATALOGUE_VERSION,
    names=tuple(d[0] for d in _DEFINITIONS),
    formulas=tuple(d[1] for d in _DEFINITIONS),
    order_sensitive=tuple(d[2] for d in _DEFINITIONS),
)


def feature_names(catalogue: StatCatalogue = CATALOGUE) -> list[str]:
    return [f"{b}.{n}" for b in ("D", "Q", "R", "V") for n in catalogue.names]


def _safe_div(a, b):
    b = np.asarray(b, dtype=np.float64)
    ok = np.abs(b) >= EPS
    return np.where(ok, a / np.where(ok, b, 1.0), 0.0)


def _sorted_percentile(S, q):
    # Linear interpolation on already-sorted rows (numpy's default method).
    pos = q / 100.0 * (S.shape[1] - 1)
    lo = int(np.floor(pos))
    hi = min(lo + 1, S.shape[1] - 1)
    frac = pos - lo
    return S[:, lo] + frac * (S[:, hi] - S[:, lo])


def _check(X):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise DimensionError(f"expected a 2-D batch, got shape {X.shape}")
    if X.shape[1] < 2:
        raise DimensionError(f"statistics need vectors of length >= 2, got {X.shape[1]}")
    if not np.all(np.isfinite(X)):
        raise DimensionError("statistics need finite input")
    return X


def extract_stats_batch(X, catalogue: StatCatalogue = CATALOGUE) -> np.ndarray:
    """Row-wise statistics of a (k, n) batch, returning (k, 48)."""
    if catalogue.version != CATALOGUE_VERSION:
        raise VersionError(f"unsupported catalogue version {catalogue.version}")
    X = _check(X)
    k, n = X.shape
    out = np.empty((k, N_STATS))
    S = np.sort(X, axis=1)

    # -- moments (from sorted data)
    mu = S.mean(axis=1)
    dev = S - mu[:, None]
    var = np.mean(dev * dev, axis=1)
    sd = np.sqrt(var)
    flat = var < EPS
    safe_var = np.where(flat, 1.0, var)
    m3 = np.mean(dev ** 3, axis=1)
    m4 = np.mean(dev ** 4, axis=1)
    s1, s2, sn = S[:, 0], S[:, 1], S[:, -1]
    rng_ = sn - s1
    out[:, 0] = mu
    out[:, 1] = sd
    out[:, 2] = var
    out[:, 3] = np.where(flat, 0.0, m4 / safe_var ** 2 - 3.0)
    out[:, 4] = np.where(flat, 0.0, m3 / safe_var ** 1.5)
    out[:, 5] = s1
    out[:, 6] = sn
    out[:, 7] = rng_

    # -- order statistics
    q05, q25, q50, q75, q95 = (_sorted_percentile(S, q) for q in (5, 25, 50, 75, 95))
    out[:, 8] = q50
    out[:, 9] = q25
    out[:, 10] = q75
    out[:, 11] = q75 - q25
    out[:, 12] = q05
    out[:, 13] = q95
    amin = np.argmin(X, axis=1)
    out[:, 14] = amin / n
    out[:, 15] = np.argmax(X, axis=1) / n

    # -- normalized-shape ratios
    safe_sd = np.where(flat, 1.0, sd)
    out[:, 16] = _safe_div(mu, sn)
    out[:, 17] = _safe_div(s1, mu)
    out[:, 18] = np.where(flat, 0.0, (sn - mu) / safe_sd)
    out[:, 19] = np.where(flat, 0.0, (mu - s1) / safe_sd)
    out[:, 20] = np.where(flat, 0.0, _safe_div(sd, mu))
    out[:, 21] = _safe_div(q50, mu)
    msq = np.mean(S * S, axis=1)
    out[:, 22] = msq
    out[:, 23] = np.sqrt(msq)

    # -- sorted-gap statistics
    low5 = S[:, :min(5, n)]
    kdec = max(1, n // 10)
    out[:, 24] = s2 - s1
    out[:, 25] = _safe_div(s2 - s1, rng_ + EPS)
    out[:, 26] = _safe_div(s1, s2 + EPS)
    out[:, 27] = _safe_div(low5.mean(axis=1), mu)
    out[:, 28] = low5.std(axis=1)
    out[:, 29] = S[:, :kdec].mean(axis=1) - S[:, kdec:].mean(axis=1)
    out[:, 30] = _safe_div(s2, sn)
    rest = X.copy()
    rest[np.arange(k), amin] = np.inf
    out[:, 31] = np.abs(amin - np.argmin(rest, axis=1)) / n

    # -- first-difference statistics (order-sensitive, unsorted data)
    d = np.diff(X, axis=1)
    ad = np.abs(d)
    out[:, 32] = d.mean(axis=1)
    out[:, 33] = d.std(axis=1)
    out[:, 34] = ad.mean(axis=1)
    out[:, 35] = ad.max(axis=1)
    if n >= 3:
        out[:, 36] = np.sum(d[:, :-1] * d[:, 1:] < 0, axis=1) / (n - 2)
        mid = X[:, 1:-1]
        out[:, 37] = np.sum((mid < X[:, :-2]) & (mid < X[:, 2:]), axis=1) / n
        out[:, 38] = np.sum((mid > X[:, :-2]) & (mid > X[:, 2:]), axis=1) / n
    else:
        out[:, 36:39] = 0.0
    out[:, 39] = ad.sum(axis=1) / n

    # -- distribution statistics
    wide = rng_ >= EPS
    width = np.where(wide, rng_, 1.0)
    bins = np.clip(np.floor((S - s1[:, None]) / width[:, None] * 10.0), 0, 9).astype(np.int64)
    p = np.stack([np.count_nonzero(bins == b, axis=1) for b in range(10)], axis=1) / n
    with np.errstate(divide="ignore", invalid="ignore"):
        ent = -np.sum(np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0), axis=1)
    out[:, 40] = np.where(wide, ent / np.log(10.0), 0.0)
    out[:, 41] = np.mean(np.abs(dev) <= sd[:, None], axis=1)
    out[:, 42] = np.mean(S < mu[:, None], axis=1)
    out[:, 43] = np.mean(S - s1[:, None] <= 0.05 * rng_[:, None], axis=1)
    xdev = X - mu[:, None]
    ac = np.sum(xdev[:, :-1] * xdev[:, 1:], axis=1) / (n * safe_var)
    out[:, 44] = np.where(flat, 0.0, ac)
    shifted = S - s1[:, None]
    tot = shifted.sum(axis=1)
    ranks = 2.0 * np.arange(1, n + 1) - n - 1
    gini = np.sum(ranks * shifted, axis=1) / (n * np.where(tot < EPS, 1.0, tot))
    out[:, 45] = np.where(tot < EPS, 0.0, gini)
    depth = sn[:, None] - S
    out[:, 46] = _safe_div(depth.max(axis=1), depth.mean(axis=1))
    out[:, 47] = np.mean(S - s1[:, None] <= EPS, axis=1)
    return out


def extract_stats(v, catalogue: StatCatalogue = CATALOGUE) -> np.ndarray:
    """The 48 statistics of a single vector, in catalogue order."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise DimensionError(f"expected a vector, got shape {v.shape}")
    return extract_stats_batch(v[None, :], catalogue)[0]


@dataclass(frozen=True)
class FeatureBundle:
    D: np.ndarray
    Q: np.ndarray
    R: np.ndarray

    @property
    def V(self) -> np.ndarray:
        return np.asarray(self.R, dtype=np.float64) - np.asarray(self.Q, dtype=np.float64)


def featurize(bundle: FeatureBundle, catalogue: StatCatalogue = CATALOGUE) -> np.ndarray:
    """192-vector stats(D) | stats(Q) | stats(R) | stats(V)."""
    Q = np.asarray(bundle.Q, dtype=np.float64)
    R = np.asarray(bundle.R, dtype=np.float64)
    if Q.shape != R.shape:
        raise DimensionError(f"Q and R differ in shape: {Q.shape} vs {R.shape}")
    return np.concatenate([
        extract_stats(bundle.D, catalogue),
        extract_stats(Q, catalogue),
        extract_stats(R, catalogue),
        extract_stats(bundle.V, catalogue),
    ])


def featurize_batch(D, Q, R, catalogue: StatCatalogue = CATALOGUE) -> np.ndarray:
    """Featurize k queries at once; D is (k, n), Q and R are (k, m)."""
    D = np.asarray(D, dtype=np.float64)
    Q = np.asarray(Q, dtype=np.float64)
    R = np.asarray(R, dtype=np.float64)
    if Q.shape != R.shape or D.shape[0] != Q.shape[0]:
        raise DimensionError(f"batch shapes disagree: D {D.shape}, Q {Q.shape}, R {R.shape}")
    return np.concatenate([
        extract_stats_batch(D, catalogue),
        extract_stats_batch(Q, catalogue),
        extract_stats_batch(R, catalogue),
        extract_stats_batch(R - Q, catalogue),
    ], axis=1)
