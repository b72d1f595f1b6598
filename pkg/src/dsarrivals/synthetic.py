"""Ground-truth arrival generators with known structure.

* CIR-intensity Cox process: a mean-reverting square-root diffusion around a
  time-of-day profile ``R(t)``, discretised with Euler-Maruyama and turned
  into arrivals by thinning.
* PGnorta: Poisson counts with Gamma busyness factors tied together by a
  Gaussian copula.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .core import Horizon, RngStream, as_stream, sample_gamma, sample_poisson

# Hump-shaped weekday profile (arrivals/hour) for smoke tests and demos only.
DEFAULT_RATE_KNOTS = (
    (0.0, 50.0), (2.0, 100.0), (4.0, 140.0), (5.5, 150.0), (7.0, 140.0), (9.0, 100.0), (11.0, 60.0),
)


@dataclass(frozen=True)
class RateProfile:
    """Piecewise-linear deterministic rate ``R(t)`` given by knots."""

    times: tuple
    values: tuple

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if t.ndim != 1 or t.shape != v.shape or t.size < 1:
            raise ValueError("rate profile needs matching 1-D knot times and values")
        if t.size > 1 and np.any(np.diff(t) <= 0):
            raise ValueError("rate profile knot times must be strictly increasing")
        if np.any(v < 0):
            raise ValueError("rate profile values must be nonnegative")
        object.__setattr__(self, "times", tuple(t.tolist()))
        object.__setattr__(self, "values", tuple(v.tolist()))

    @classmethod
    def constant(cls, value: float, T: float) -> "RateProfile":
        return cls((0.0, float(T)), (float(value), float(value)))

    @classmethod
    def from_knots(cls, knots) -> "RateProfile":
        knots = list(knots)
        return cls(tuple(k[0] for k in knots), tuple(k[1] for k in knots))

    def __call__(self, t):
        return np.interp(t, self.times, self.values)

    def interval_integrals(self, horizon: Horizon) -> np.ndarray:
        """``R_i = integral of R over interval i`` (exact for piecewise-linear R)."""
        edges = horizon.edges
        grid = np.union1d(edges, [t for t in self.times if 0.0 < t < horizon.T])
        vals = self(grid)
        cum = np.concatenate([[0.0], np.cumsum(np.diff(grid) * (vals[1:] + vals[:-1]) / 2.0)])
        at_edges = np.interp(edges, grid, cum)
        return np.diff(at_edges)

    def to_dict(self) -> dict:
        return {"times": list(self.times), "values": list(self.values)}


@dataclass
class CIRConfig:
    """Parameters of ``d lam = kappa (R - lam) dt + sigma R^alpha sqrt(lam) dB``.

    ``lam(0) = R(0) * Gamma(beta, beta)`` unless ``initial_intensity`` is set.
    """

    horizon: Horizon = field(default_factory=lambda: Horizon(11.0, 22))
    kappa: float = 0.2
    sigma: float = 0.4
    alpha: float = 0.3
    beta: float = 100.0
    rate: RateProfile = field(default_factory=lambda: RateProfile.from_knots(DEFAULT_RATE_KNOTS))
    delta: float = 0.001
    initial_intensity: float | None = None

    def __post_init__(self):
        if isinstance(self.rate, dict):
            self.rate = RateProfile(self.rate["times"], self.rate["values"])
        if isinstance(self.horizon, dict):
            self.horizon = Horizon(**self.horizon)
        if self.kappa <= 0 or self.alpha <= 0 or self.beta <= 0:
            raise ValueError("kappa, alpha and beta must be positive")
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")
        if not 0 < self.delta <= self.horizon.interval_length:
            raise ValueError("Euler step delta must lie in (0, interval length]")
        if self.initial_intensity is not None and self.initial_intensity < 0:
            raise ValueError("initial_intensity must be nonnegative")

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon.T / self.delta))

    def to_dict(self) -> dict:
        return {"horizon": self.horizon.to_dict(), "kappa": self.kappa, "sigma": self.sigma,
                "alpha": self.alpha, "beta": self.beta, "rate": self.rate.to_dict(),
                "delta": self.delta, "initial_intensity": self.initial_intensity}

    @classmethod
    def from_dict(cls, d: dict) -> "CIRConfig":
        return cls(**d)


def simulate_cir_paths(config: CIRConfig, stream, n_paths: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Euler-Maruyama paths on the grid ``k * delta``; returns ``(times, paths)``.

    Negative excursions are truncated at zero inside the square root only;
    the returned path keeps the raw Euler values.
    """
    stream = as_stream(stream)
    rng = stream.generator
    steps = config.n_steps
    times = np.arange(steps + 1) * config.delta
    times[-1] = config.horizon.T
    R = config.rate(times)
    lam = np.empty((n_paths, steps + 1))
    if config.initial_intensity is None:
        lam[:, 0] = R[0] * sample_gamma(stream, config.beta, config.beta, size=n_paths)
    else:
        lam[:, 0] = config.initial_intensity
    dt = np.diff(times)
    vol = config.sigma * R[:-1] ** config.alpha * np.sqrt(dt)
    z = rng.standard_normal((n_paths, steps))
    for k in range(steps):
        cur = lam[:, k]
        lam[:, k + 1] = (cur + config.kappa * (R[k] - cur) * dt[k]
                         + vol[k] * np.sqrt(np.maximum(cur, 0.0)) * z[:, k])
    return times, lam


def simulate_cir_path(config: CIRConfig, stream) -> np.ndarray:
    """One discretised intensity path ``lam(k * delta)``."""
    return simulate_cir_paths(config, stream, 1)[1][0]


def thin_path(times, path, stream) -> np.ndarray:
    """Arrival epochs of a Poisson process whose intensity interpolates ``path``.

    Each Euler cell uses its own majorant ``max(lam_k, lam_{k+1})``; negative
    path values count as zero intensity.
    """
    stream = as_stream(stream)
    rng = stream.generator
    lam = np.maximum(np.asarray(path, dtype=float), 0.0)
    left, right = lam[:-1], lam[1:]
    width = np.diff(times)
    bound = np.maximum(left, right)
    n_cand = rng.poisson(bound * width)
    cell = np.repeat(np.arange(len(width)), n_cand)
    u = rng.random(cell.size)
    t = times[cell] + u * width[cell]
    intensity = left[cell] + u * (right[cell] - left[cell])
    keep = rng.random(cell.size) * bound[cell] < intensity
    return np.sort(t[keep])


def simulate_cir_day(config: CIRConfig, stream) -> tuple[np.ndarray, np.ndarray]:
    """``(counts, epochs)`` for one day of the CIR-driven Cox process."""
    stream = as_stream(stream)
    times, paths = simulate_cir_paths(config, stream, 1)
    epochs = thin_path(times, paths[0], stream)
    return config.horizon.bin_epochs(epochs), epochs


def simulate_cir_days(config: CIRConfig, n_days: int, stream, keep_epochs: bool = False,
                      block: int = 256):
    """``n_days`` days from one stream, vectorised over blocks of paths.

    Returns the ``n_days x p`` count matrix, plus the list of per-day epoch
    arrays when ``keep_epochs`` is set.
    """
    if n_days < 1:
        raise ValueError("n_days must be >= 1")
    stream = as_stream(stream)
    counts = np.empty((n_days, config.horizon.p), dtype=np.int64)
    epochs = []
    for start in range(0, n_days, block):
        nb = min(block, n_days - start)
        times, paths = simulate_cir_paths(config, stream, nb)
        for i in range(nb):
            ep = thin_path(times, paths[i], stream)
            counts[start + i] = config.horizon.bin_epochs(ep)
            if keep_epochs:
                epochs.append(ep)
    return (counts, epochs) if keep_epochs else counts


# -- PGnorta ---------------------------------------------------------------------


@dataclass
class PGnortaConfig:
    """Base rates ``lambda_j``, Gamma shapes ``alpha_j`` and copula correlation."""

    base_rates: np.ndarray
    alphas: np.ndarray
    correlation: np.ndarray

    def __post_init__(self):
        self.base_rates = np.asarray(self.base_rates, dtype=float)
        p = self.base_rates.size
        self.alphas = np.broadcast_to(np.asarray(self.alphas, dtype=float), (p,)).copy()
        self.correlation = np.asarray(self.correlation, dtype=float)
        if self.base_rates.ndim != 1 or p < 1:
            raise ValueError("base_rates must be a nonempty vector")
        if np.any(self.base_rates <= 0) or np.any(self.alphas <= 0):
            raise ValueError("base rates and Gamma shapes must be positive")
        R = self.correlation
        if R.shape != (p, p):
            raise ValueError(f"correlation must be {p}x{p}, got {R.shape}")
        if not np.allclose(R, R.T, atol=1e-12) or not np.allclose(np.diag(R), 1.0, atol=1e-12):
            raise ValueError("correlation must be symmetric with unit diagonal")

    @property
    def p(self) -> int:
        return self.base_rates.size

    @classmethod
    def ar1(cls, base_rates, alphas, rho: float) -> "PGnortaConfig":
        """Copula correlation ``rho ** |i - j|``."""
        p = len(base_rates)
        idx = np.arange(p)
        return cls(base_rates, alphas, rho ** np.abs(idx[:, None] - idx[None, :]))

    def to_dict(self) -> dict:
        return {"base_rates": self.base_rates.tolist(), "alphas": self.alphas.tolist(),
                "correlation": self.correlation.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "PGnortaConfig":
        if "rho" in d:
            return cls.ar1(d["base_rates"], d["alphas"], d["rho"])
        return cls(d["base_rates"], d["alphas"], d["correlation"])


def copula_factor(R, jitter: float = 1e-8, max_attempts: int = 10) -> np.ndarray:
    """Lower-triangular factor of ``R``, adding diagonal jitter if needed."""
    R = np.asarray(R, dtype=float)
    for attempt in range(max_attempts + 1):
        try:
            return np.linalg.cholesky(R + attempt * jitter * np.eye(len(R)))
        except np.linalg.LinAlgError:
            continue
    raise np.linalg.LinAlgError(
        f"copula correlation is not positive semidefinite after {max_attempts} jitter attempts")


def gamma_unit_mean_ppf(u, alpha):
    """Inverse CDF of Gamma(alpha, rate=alpha), which has mean one."""
    return special.gammaincinv(alpha, u) / alpha


def simulate_pgnorta_factors(config: PGnortaConfig, n_days: int, stream) -> tuple[np.ndarray, np.ndarray]:
    """Copula normals ``Z`` and busyness factors ``B``, each ``n_days x p``."""
    stream = as_stream(stream)
    L = copula_factor(config.correlation)
    eps = stream.generator.standard_normal((n_days, config.p))
    Z = eps @ L.T
    U = special.ndtr(Z)
    B = gamma_unit_mean_ppf(U, config.alphas)
    return Z, B


def simulate_pgnorta(config: PGnortaConfig, n_days: int, stream) -> np.ndarray:
    """``n_days`` count vectors with ``X_j ~ Poisson(lambda_j B_j)``."""
    if n_days < 1:
        raise ValueError("n_days must be >= 1")
    stream = as_stream(stream)
    _, B = simulate_pgnorta_factors(config, n_days, stream)
    return sample_poisson(stream, config.base_rates * B)


def simulate_pgnorta_day(config: PGnortaConfig, stream) -> np.ndarray:
    return simulate_pgnorta(config, 1, stream)[0]


def pgnorta_moments(config: PGnortaConfig) -> tuple[np.ndarray, np.ndarray]:
    """Exact marginal mean and variance: ``lambda`` and ``lambda + lambda^2 / alpha``."""
    lam = config.base_rates
    return lam.copy(), lam + lam**2 / config.alphas


def relaxation_path(times, lam0: float, R: float, kappa: float) -> np.ndarray:
    """Closed-form noiseless relaxation ``R + (lam0 - R) exp(-kappa t)``."""
    return R + (lam0 - R) * np.exp(-kappa * np.asarray(times, dtype=float))


__all__ = [
    "CIRConfig", "PGnortaConfig", "RateProfile", "DEFAULT_RATE_KNOTS", "copula_factor",
    "gamma_unit_mean_ppf", "pgnorta_moments", "relaxation_path", "simulate_cir_day",
    "simulate_cir_days", "simulate_cir_path", "simulate_cir_paths", "simulate_pgnorta",
    "simulate_pgnorta_day", "simulate_pgnorta_factors", "thin_path",
]
