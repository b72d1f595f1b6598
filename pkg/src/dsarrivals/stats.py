"""Summary statistics, outlier cleaning and train/test splitting for count data."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from sklearn.base import BaseEstimator, OutlierMixin
from sklearn.utils.validation import check_is_fitted

from .core import RngStream, check_counts


@dataclass
class SummaryStats:
    marginal_mean: np.ndarray
    marginal_variance: np.ndarray
    past_future_corr: np.ndarray
    # True where an aggregate had zero variance and the correlation was set to 0
    corr_degenerate: np.ndarray

    def as_dict(self) -> dict:
        return {"mean": self.marginal_mean, "variance": self.marginal_variance,
                "past_future_corr": self.past_future_corr}


def past_future_corr(X) -> tuple[np.ndarray, np.ndarray]:
    """Pearson correlation of ``sum(X[:, :j])`` and ``sum(X[:, j:])`` for ``j = 1..p-1``."""
    X = np.asarray(X, dtype=float)
    past = np.cumsum(X, axis=1)[:, :-1]
    future = X.sum(axis=1, keepdims=True) - past
    pc = past - past.mean(axis=0)
    fc = future - future.mean(axis=0)
    sxy = np.einsum("ij,ij->j", pc, fc)
    sxx = np.einsum("ij,ij->j", pc, pc)
    syy = np.einsum("ij,ij->j", fc, fc)
    degenerate = (sxx == 0) | (syy == 0)
    corr = np.zeros(past.shape[1])
    ok = ~degenerate
    corr[ok] = sxy[ok] / np.sqrt(sxx[ok] * syy[ok])
    return np.clip(corr, -1.0, 1.0), degenerate


def summarize(X) -> SummaryStats:
    """Per-interval mean and unbiased variance, plus the past-future correlation curve."""
    X = check_counts(X, min_rows=2).astype(float)
    corr, degenerate = past_future_corr(X)
    return SummaryStats(X.mean(axis=0), X.var(axis=0, ddof=1), corr, degenerate)


# -- cleaning -------------------------------------------------------------------


def _as_fraction(q) -> Fraction:
    # decimal reading, so 0.025 means 1/40 rather than its binary neighbour
    return Fraction(str(q)) if isinstance(q, float) else Fraction(q)


def exact_quantile(sorted_col, q) -> Fraction:
    """Type-7 (linear interpolation) quantile of sorted integers, as an exact fraction."""
    n = len(sorted_col)
    h = (n - 1) * _as_fraction(q)
    lo = math.floor(h)
    hi = min(lo + 1, n - 1)
    x_lo, x_hi = int(sorted_col[lo]), int(sorted_col[hi])
    return x_lo + (h - lo) * (x_hi - x_lo)


def percentile_bounds(X, lower: float = 0.025, upper: float = 0.975):
    """Exact per-column type-7 quantiles as lists of fractions."""
    X = check_counts(X)
    S = np.sort(X, axis=0)
    return ([exact_quantile(S[:, j], lower) for j in range(X.shape[1])],
            [exact_quantile(S[:, j], upper) for j in range(X.shape[1])])


def _outlier_mask(X, lo_q, hi_q) -> np.ndarray:
    # integer x: x < q  <=>  x < ceil(q), and x > q  <=>  x > floor(q)
    lo_int = np.array([math.ceil(q) for q in lo_q], dtype=np.int64)
    hi_int = np.array([math.floor(q) for q in hi_q], dtype=np.int64)
    return np.any((X < lo_int) | (X > hi_int), axis=1)


def clean_outliers(X, lower: float = 0.025, upper: float = 0.975):
    """Drop days with any interval count strictly outside its column's percentile band.

    Returns ``(cleaned, removed_indices)``.
    """
    if not 0 <= lower < upper <= 1:
        raise ValueError("need 0 <= lower < upper <= 1")
    X = check_counts(X)
    if X.shape[0] < 10:
        raise ValueError(f"outlier cleaning needs at least 10 rows, got {X.shape[0]}")
    lo_q, hi_q = percentile_bounds(X, lower, upper)
    out = _outlier_mask(X, lo_q, hi_q)
    if out.all():
        raise ValueError("every row falls outside the percentile band; nothing left")
    return X[~out], np.flatnonzero(out)


class PercentileOutlierFilter(OutlierMixin, BaseEstimator):
    """Estimator form of :func:`clean_outliers`.

    ``predict`` returns +1 for rows inside every column's band and -1 otherwise.
    """

    def __init__(self, lower: float = 0.025, upper: float = 0.975):
        self.lower = lower
        self.upper = upper

    def fit(self, X, y=None):
        X = check_counts(X, min_rows=10)
        self.lower_, self.upper_ = percentile_bounds(X, self.lower, self.upper)
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "lower_")
        X = check_counts(X, p=self.n_features_in_)
        return np.where(_outlier_mask(X, self.lower_, self.upper_), -1, 1)


# -- splitting ---------------------------------------------------------------------


def parse_ratio(ratio) -> tuple[int, int]:
    if isinstance(ratio, str):
        parts = ratio.split(":")
        if len(parts) != 2:
            raise ValueError(f"ratio must look like '2:1', got {ratio!r}")
        a, b = (int(x) for x in parts)
    else:
        a, b = (int(x) for x in ratio)
    if a < 1 or b < 1:
        raise ValueError("ratio parts must be positive integers")
    return a, b


def split(X, ratio="2:1", stream: RngStream | None = None, return_indices: bool = False):
    """Random train/test partition with ``ceil(a n / (a + b))`` training rows.

    Rows keep their original order inside each part.
    """
    X = check_counts(X, min_rows=3)
    a, b = parse_ratio(ratio)
    n = X.shape[0]
    n_train = -(-a * n // (a + b))
    if n_train >= n:
        raise ValueError(f"{n} rows are too few for a {a}:{b} split")
    rng = (stream or RngStream(0)).generator
    perm = rng.permutation(n)
    train_idx = np.sort(perm[:n_train])
    test_idx = np.sort(perm[n_train:])
    if return_indices:
        return X[train_idx], X[test_idx], train_idx, test_idx
    return X[train_idx], X[test_idx]


# -- confidence bands -----------------------------------------------------------------


@dataclass
class Band:
    mean: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    pct_lo: np.ndarray
    pct_hi: np.ndarray


def ci_bands(generator, n_per_rep: int, macro_reps: int = 100,
             stream: RngStream | None = None) -> dict:
    """Bands for each summary statistic over repeated generated data sets.

    ``generator(n_days, stream)`` returns an ``n_days x p`` count matrix; rep
    ``r`` receives ``stream.child(r)``. For every statistic the result holds
    the mean over reps, the normal band ``mean +- 1.96 sd / sqrt(reps)`` and
    the type-7 2.5%/97.5% percentile band.
    """
    if macro_reps < 2:
        raise ValueError("need at least 2 macro-replications")
    stream = stream or RngStream(0)
    reps = [summarize(generator(n_per_rep, stream.child(r))).as_dict() for r in range(macro_reps)]
    out = {}
    for name in reps[0]:
        V = np.stack([r[name] for r in reps])
        m = V.mean(axis=0)
        half = 1.96 * V.std(axis=0, ddof=1) / math.sqrt(macro_reps)
        lo, hi = np.quantile(V, [0.025, 0.975], axis=0, method="linear")
        out[name] = Band(m, m - half, m + half, lo, hi)
    return out


__all__ = [
    "Band",
    "PercentileOutlierFilter",
    "SummaryStats",
    "ci_bands",
    "clean_outliers",
    "exact_quantile",
    "parse_ratio",
    "past_future_corr",
    "percentile_bounds",
    "split",
    "summarize",
]
