"""Run arrival epochs through infinite-server and many-server FCFS queues.

Times are in hours. A replication is one day of epochs; per-day outputs are
grouped into macro-replications and summarised with normal confidence
intervals across groups.
"""

from __future__ import annotations

import bisect
import csv
import heapq
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import Horizon, RngStream, lognormal_params
from .synthetic import RateProfile

SERVICE_DISTRIBUTIONS = ("lognormal", "exponential", "deterministic")


@dataclass(frozen=True)
class ServiceSpec:
    """Service time distribution given by its mean and variance."""

    mean: float
    variance: float = 0.0
    distribution: str = "lognormal"

    def __post_init__(self):
        if self.distribution not in SERVICE_DISTRIBUTIONS:
            raise ValueError(f"unknown service distribution {self.distribution!r}")
        if not self.mean > 0:
            raise ValueError("service mean must be positive")
        if self.distribution == "lognormal" and not self.variance > 0:
            raise ValueError("lognormal service variance must be positive")
        if self.distribution == "exponential":
            object.__setattr__(self, "variance", float(self.mean) ** 2)
        if self.distribution == "deterministic":
            object.__setattr__(self, "variance", 0.0)

    def sample(self, stream: RngStream, n: int) -> np.ndarray:
        rng = stream.generator
        if self.distribution == "lognormal":
            mu, sigma = lognormal_params(self.mean, self.variance)
            return rng.lognormal(mu, sigma, size=n)
        if self.distribution == "exponential":
            return rng.exponential(self.mean, size=n)
        return np.full(n, float(self.mean))

    def to_dict(self) -> dict:
        return {"distribution": self.distribution, "mean": self.mean, "variance": self.variance}


# -- staffing -----------------------------------------------------------------


def _ceil_levels(load, extra):
    s = np.ceil(np.round(load + extra, 9)).astype(np.int64)
    if np.any(s < 1):
        raise ValueError(f"staffing formula gives fewer than one server: {s.min()}")
    return s


def _offered_load(R, es):
    R = np.asarray(R, dtype=float)
    if np.any(~(R > 0)) or not es > 0:
        raise ValueError("arrival volumes and mean service time must be positive")
    return R * es


def staffing_power(R, es: float, beta: float, alpha: float):
    """``ceil(R*es + beta * (R*es)**(1/2 + alpha))`` per interval.

    Scalar ``R`` gives an int, array ``R`` an int64 array.
    """
    if not 0.0 <= alpha <= 0.5:
        raise ValueError("variability exponent alpha must lie in [0, 1/2]")
    load = _offered_load(R, es)
    s = _ceil_levels(load, beta * load ** (0.5 + alpha))
    return int(s) if s.ndim == 0 else s


def staffing_sqrt(R, es: float, beta: float):
    """Square-root staffing ``ceil(R*es + beta * sqrt(R*es))``."""
    load = _offered_load(R, es)
    s = _ceil_levels(load, beta * np.sqrt(load))
    return int(s) if s.ndim == 0 else s


def interval_volumes(rate: RateProfile, horizon: Horizon) -> np.ndarray:
    """``R_i``, the integral of the arrival-rate profile over interval ``i``."""
    return rate.interval_integrals(horizon)


@dataclass
class StaffingPlan:
    """Piecewise constant server counts, one per interval.

    A new level takes effect at the start of its interval; after ``T`` the
    last level stays in force so the system can drain.
    """

    levels: np.ndarray
    horizon: Horizon

    def __post_init__(self):
        levels = np.asarray(self.levels)
        if levels.shape != (self.horizon.p,):
            raise ValueError(f"need {self.horizon.p} staffing levels, got shape {levels.shape}")
        if np.any(levels != np.round(levels)) or np.any(levels < 1):
            raise ValueError("staffing levels must be integers >= 1")
        self.levels = levels.astype(np.int64)
        self._edges = self.horizon.edges.tolist()

    @classmethod
    def constant(cls, servers: int, horizon: Horizon) -> "StaffingPlan":
        return cls(np.full(horizon.p, int(servers)), horizon)

    def index(self, t: float) -> int:
        # same edge array as next_change, so a boundary always maps to the new level
        j = bisect.bisect_right(self._edges, t) - 1
        return min(max(j, 0), self.horizon.p - 1)

    def servers_at(self, t: float) -> int:
        return int(self.levels[self.index(t)])

    def next_change(self, t: float) -> float:
        """First interval boundary strictly after ``t`` (``inf`` past the last one)."""
        if t < 0:
            return 0.0
        j = self.index(t)
        if j >= self.horizon.p - 1:
            return math.inf
        return self._edges[j + 1]

    def to_dict(self) -> dict:
        return {"levels": self.levels.tolist(), "horizon": self.horizon.to_dict()}


# -- simulation -----------------------------------------------------------------


def minute_checkpoints(horizon: Horizon) -> np.ndarray:
    """End of every minute in ``(0, T]`` (hours)."""
    n = int(round(horizon.T * 60))
    return np.arange(1, n + 1) / 60.0


def _check_epochs(epochs) -> np.ndarray:
    a = np.asarray(epochs, dtype=float)
    if a.ndim != 1:
        raise ValueError("epochs must be a 1-D array")
    if a.size and (np.any(np.diff(a) < 0) or a[0] < 0):
        raise ValueError("epochs must be sorted and nonnegative")
    return a


def run_infinite_server(epochs, service: ServiceSpec, checkpoints, stream: RngStream,
                        service_times=None) -> np.ndarray:
    """Number in system ``V(t) = #{k : a_k <= t < a_k + s_k}`` at each checkpoint."""
    a = _check_epochs(epochs)
    s = service.sample(stream, a.size) if service_times is None else np.asarray(service_times)
    t = np.asarray(checkpoints, dtype=float)
    arrived = np.searchsorted(a, t, side="right")
    departed = np.searchsorted(np.sort(a + s), t, side="right")
    return (arrived - departed).astype(np.int64)


def run_many_server(epochs, service: ServiceSpec, plan: StaffingPlan, stream: RngStream,
                    service_times=None) -> np.ndarray:
    """FCFS waiting times with time-varying server count.

    A customer starts once it is at the head of the queue and fewer than
    ``s(t)`` customers are in service. Customers already in service finish
    even when ``s(t)`` drops.
    """
    a = _check_epochs(epochs)
    s = service.sample(stream, a.size) if service_times is None else np.asarray(service_times,
                                                                                dtype=float)
    if s.shape != a.shape:
        raise ValueError("need one service time per arrival")
    waits = np.empty(a.size)
    busy: list = []  # completion times of customers in service
    last_start = -math.inf
    for k in range(a.size):
        t = max(a[k], last_start)
        while True:
            while busy and busy[0] <= t:
                heapq.heappop(busy)
            if len(busy) < plan.servers_at(t):
                break
            nxt = plan.next_change(t)
            if busy and busy[0] < nxt:
                nxt = busy[0]
            t = nxt
        heapq.heappush(busy, t + s[k])
        waits[k] = t - a[k]
        last_start = t
    return waits


def interval_mean_waits(epochs, waits, horizon: Horizon) -> np.ndarray:
    """Average wait of customers arriving in each interval (NaN where none arrived)."""
    a = _check_epochs(epochs)
    idx = np.clip(np.searchsorted(horizon.edges[1:], a, side="left"), 0, horizon.p - 1)
    n = np.bincount(idx, minlength=horizon.p)
    total = np.bincount(idx, weights=waits, minlength=horizon.p)
    out = np.full(horizon.p, np.nan)
    np.divide(total, n, out=out, where=n > 0)
    return out


def erlang_c(arrival_rate: float, service_mean: float, servers: int) -> tuple[float, float]:
    """Probability of waiting and mean wait in a stationary M/M/s queue."""
    load = arrival_rate * service_mean
    if not load < servers:
        raise ValueError("M/M/s queue is unstable (load >= servers)")
    term, total = 1.0, 1.0
    for k in range(1, servers):
        term *= load / k
        total += term
    tail = term * load / servers / (1.0 - load / servers)
    p_wait = tail / (total + tail)
    return p_wait, p_wait * service_mean / (servers - load)


# -- summaries ---------------------------------------------------------------------

STATISTICS = ("mean", "variance", "q80")


@dataclass
class QueueReport:
    """Per-coordinate statistics with 95% confidence half-widths across macro-replications."""

    kind: str
    index: np.ndarray
    values: dict = field(default_factory=dict)
    half_widths: dict = field(default_factory=dict)
    macro_reps: int = 0
    reps_per_macro: int = 0

    def rows(self):
        for name in STATISTICS:
            v, h = self.values[name], self.half_widths[name]
            for i, idx in enumerate(self.index):
                yield idx, name, v[i], v[i] - h[i], v[i] + h[i]

    def write_csv(self, path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        id_name = "checkpoint" if self.kind == "occupancy" else "interval"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([id_name, "statistic", "value", "ci_lo", "ci_hi"])
            for idx, name, *vals in self.rows():
                idx = repr(float(idx)) if self.kind == "occupancy" else int(idx)
                w.writerow([idx, name, *(repr(float(v)) for v in vals)])


def summarize_runs(outputs, kind: str, macro_reps: int, index=None) -> QueueReport:
    """Group replication outputs into macro-replications and summarise.

    ``outputs`` has one row per replication (occupancy at each checkpoint, or
    average wait per interval). Within each macro-replication the mean,
    variance and type-7 80% quantile are taken over its rows, ignoring NaNs.
    """
    if kind not in ("occupancy", "waiting"):
        raise ValueError(f"kind must be 'occupancy' or 'waiting', got {kind!r}")
    X = np.asarray(outputs, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0 or X.shape[1] == 0:
        raise ValueError("need a non-empty (replications x coordinates) array")
    if macro_reps < 2:
        raise ValueError("need at least 2 macro-replications")
    n = X.shape[0] // macro_reps
    if n < 1:
        raise ValueError(f"{X.shape[0]} replications cannot fill {macro_reps} macro-replications")
    groups = X[: n * macro_reps].reshape(macro_reps, n, X.shape[1])
    with warnings.catch_warnings():
        # all-NaN columns (intervals with no arrivals) are expected
        warnings.simplefilter("ignore", RuntimeWarning)
        inner = {
            "mean": np.nanmean(groups, axis=1),
            "variance": (np.nanvar(groups, axis=1, ddof=1) if n > 1
                         else np.full((macro_reps, X.shape[1]), np.nan)),
            "q80": np.nanquantile(groups, 0.8, axis=1, method="linear"),
        }
        values, halves = {}, {}
        for name, per_macro in inner.items():
            m = np.sum(np.isfinite(per_macro), axis=0)
            values[name] = np.nanmean(per_macro, axis=0)
            sd = np.nanstd(per_macro, axis=0, ddof=1)
            # identical macro-replications give exactly zero, not rounding noise
            sd[np.nanmax(per_macro, axis=0) == np.nanmin(per_macro, axis=0)] = 0.0
            halves[name] = 1.96 * sd / np.sqrt(np.maximum(m, 1))
    if index is None:
        index = np.arange(1, X.shape[1] + 1)
    return QueueReport(kind, np.asarray(index), values, halves, macro_reps, n)


__all__ = [
    "QueueReport",
    "ServiceSpec",
    "StaffingPlan",
    "erlang_c",
    "interval_mean_waits",
    "interval_volumes",
    "minute_checkpoints",
    "run_infinite_server",
    "run_many_server",
    "staffing_power",
    "staffing_sqrt",
    "summarize_runs",
]
