"""Arrival epochs from interval counts.

Two reconstructions are provided. The piecewise constant one spreads the
``x_j`` arrivals of interval ``j`` uniformly over it. The piecewise linear one
fits a nonnegative intensity whose integral over every interval equals the
count, then places arrivals by inverting its cumulative intensity.

Intervals are half-open, ``((j-1)T/p, jT/p]``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .core import Horizon, RngStream

log = logging.getLogger(__name__)


def _check_counts_vector(counts, horizon: Horizon) -> np.ndarray:
    x = np.asarray(counts)
    if x.ndim != 1 or x.shape[0] != horizon.p:
        raise ValueError(f"expected a count vector of length {horizon.p}, got shape {x.shape}")
    if x.dtype.kind == "f" and np.any(x != np.round(x)):
        raise ValueError("counts must be integer valued")
    x = x.astype(np.int64)
    if np.any(x < 0):
        raise ValueError("counts must be nonnegative")
    return x


def _open_closed_uniform(rng: np.random.Generator, size) -> np.ndarray:
    """Uniform draws on ``(0, 1]``."""
    return 1.0 - rng.random(size)


def _inside(t: np.ndarray, t0: float, t1: float) -> np.ndarray:
    # rounding can push edge + offset onto (or past) an endpoint
    t = np.minimum(t, t1)
    return np.where(t > t0, t, np.nextafter(t0, np.inf))


def epochs_piecewise_constant(counts, horizon: Horizon, stream: RngStream) -> np.ndarray:
    """Uniform placement of each interval's arrivals within the interval."""
    x = _check_counts_vector(counts, horizon)
    rng = stream.generator
    edges = horizon.edges
    dt = horizon.interval_length
    parts = []
    for j in np.flatnonzero(x):
        t = edges[j] + dt * _open_closed_uniform(rng, int(x[j]))
        parts.append(np.sort(_inside(t, edges[j], edges[j + 1])))
    return np.concatenate(parts) if parts else np.empty(0)


@dataclass
class PWLIntensity:
    """Piecewise linear intensity on a horizon.

    ``left[j]`` and ``right[j]`` are the values at the two ends of interval
    ``j``. For a continuous fit ``right[j] == left[j + 1]`` and ``values``
    holds the ``p + 1`` knot values.
    """

    horizon: Horizon
    left: np.ndarray
    right: np.ndarray
    continuous: bool = True

    def __post_init__(self):
        self.left = np.asarray(self.left, dtype=float)
        self.right = np.asarray(self.right, dtype=float)
        p = self.horizon.p
        if self.left.shape != (p,) or self.right.shape != (p,):
            raise ValueError(f"need {p} left and right values")
        if np.any(self.left < 0) or np.any(self.right < 0):
            raise ValueError("intensity values must be nonnegative")

    @classmethod
    def from_knots(cls, values, horizon: Horizon) -> "PWLIntensity":
        values = np.asarray(values, dtype=float)
        if values.shape != (horizon.p + 1,):
            raise ValueError(f"need {horizon.p + 1} knot values")
        return cls(horizon, values[:-1].copy(), values[1:].copy(), True)

    @property
    def values(self) -> np.ndarray:
        if not self.continuous:
            raise ValueError("intensity is discontinuous at clamped knots; use left/right")
        return np.append(self.left, self.right[-1])

    def interval_integrals(self) -> np.ndarray:
        return 0.5 * (self.left + self.right) * self.horizon.interval_length

    def __call__(self, t) -> np.ndarray:
        """Evaluate at times in ``[0, T]`` (an interval's right end uses that interval)."""
        t = np.asarray(t, dtype=float)
        edges = self.horizon.edges
        j = np.clip(np.searchsorted(edges[1:], t, side="left"), 0, self.horizon.p - 1)
        frac = (t - edges[j]) / self.horizon.interval_length
        return self.left[j] + (self.right[j] - self.left[j]) * frac


def fit_pwl_intensity(counts, horizon: Horizon) -> PWLIntensity:
    """Count-matching piecewise linear intensity with the least total variation of slopes.

    The knots satisfy ``(v_{j-1} + v_j) / 2 * T/p = x_j``. Writing
    ``v_j = (-1)^j v_0 + d_j`` leaves one free value ``v_0``, chosen to
    minimise ``sum_j (v_j - v_{j-1})^2`` over the range keeping every knot
    nonnegative. When that range is empty, negative knots are set to zero
    and each interval's end values are rescaled to match its count.
    """
    x = _check_counts_vector(counts, horizon)
    p = horizon.p
    c = 2.0 * x / horizon.interval_length          # v_{j-1} + v_j = c_j
    d = np.zeros(p + 1)
    for j in range(1, p + 1):
        d[j] = c[j - 1] - d[j - 1]
    sign = np.where(np.arange(p + 1) % 2 == 0, 1.0, -1.0)

    # v_j >= 0: even j gives v_0 >= -d_j, odd j gives v_0 <= d_j
    lo = max(0.0, float(np.max(-d[0::2])))
    hi = float(np.min(d[1::2]))
    # v_j - v_{j-1} = 2 s_j v_0 + (d_j - d_{j-1}) with s_j = sign[j]
    e = np.diff(d)
    v0 = -float(np.sum(sign[1:] * e)) / (2.0 * p)

    if lo <= hi:
        v0 = min(max(v0, lo), hi)
        values = np.maximum(sign * v0 + d, 0.0)
        return PWLIntensity.from_knots(values, horizon)

    v0 = min(max(v0, 0.0), c[0])
    values = np.maximum(sign * v0 + d, 0.0)
    left, right = values[:-1].copy(), values[1:].copy()
    target = 0.5 * c
    have = 0.5 * (left + right)
    nz = have > 0
    ratio = np.ones(p)
    ratio[nz] = target[nz] / have[nz]
    left *= ratio
    right *= ratio
    log.info("count-matching fit infeasible with continuous knots; clamped %d knot(s) "
             "and rescaled per interval", int(np.sum(sign * v0 + d < 0)))
    return PWLIntensity(horizon, left, right, continuous=False)


def _invert_segment(a: float, b: float, dt: float, u: np.ndarray) -> np.ndarray:
    """Offsets ``tau`` in ``[0, dt]`` with ``a*tau + m*tau^2/2 = u``, ``m = (b-a)/dt``.

    Uses ``tau = 2u / (a + sqrt(a^2 + 2mu))``, which equals the usual quadratic
    root and stays accurate as the slope goes to zero.
    """
    m = (b - a) / dt
    disc = np.maximum(a * a + 2.0 * m * u, 0.0)
    tau = 2.0 * u / (a + np.sqrt(disc))
    return np.minimum(tau, dt)


def sample_pwl_epochs(intensity: PWLIntensity, counts, stream: RngStream) -> np.ndarray:
    """Place ``counts[j]`` arrivals in interval ``j`` with density proportional to the intensity."""
    horizon = intensity.horizon
    x = _check_counts_vector(counts, horizon)
    rng = stream.generator
    edges = horizon.edges
    dt = horizon.interval_length
    mass = intensity.interval_integrals()
    parts = []
    for j in np.flatnonzero(x):
        n = int(x[j])
        a, b = float(intensity.left[j]), float(intensity.right[j])
        if mass[j] <= 0:
            log.info("interval %d has %d arrivals but zero fitted intensity; placing uniformly",
                     j + 1, n)
            tau = dt * _open_closed_uniform(rng, n)
        else:
            u = mass[j] * _open_closed_uniform(rng, n)
            tau = _invert_segment(a, b, dt, u)
        parts.append(np.sort(_inside(edges[j] + tau, edges[j], edges[j + 1])))
    return np.concatenate(parts) if parts else np.empty(0)


def epochs_piecewise_linear(counts, horizon: Horizon, stream: RngStream) -> np.ndarray:
    intensity = fit_pwl_intensity(counts, horizon)
    return sample_pwl_epochs(intensity, counts, stream)


def simulate_epochs(counts, horizon: Horizon, stream: RngStream, mode: str = "pwc") -> np.ndarray:
    if mode == "pwc":
        return epochs_piecewise_constant(counts, horizon, stream)
    if mode == "pwl":
        return epochs_piecewise_linear(counts, horizon, stream)
    raise ValueError(f"unknown epochs mode {mode!r} (expected 'pwc' or 'pwl')")


__all__ = [
    "PWLIntensity",
    "epochs_piecewise_constant",
    "epochs_piecewise_linear",
    "fit_pwl_intensity",
    "sample_pwl_epochs",
    "simulate_epochs",
]
