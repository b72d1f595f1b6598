"""Shared types, random streams, samplers and count-data I/O.

Counts, intensities and epoch lists are plain numpy arrays; the helpers
here validate them at module boundaries.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.utils.validation import check_array


class CountDataError(ValueError):
    """Malformed interval-count input (ragged rows, non-integer cells, ...)."""


@dataclass(frozen=True)
class Horizon:
    """Operating day ``[0, T]`` cut into ``p`` equal intervals."""

    T: float
    p: int

    def __post_init__(self):
        if not (self.T > 0 and math.isfinite(self.T)):
            raise ValueError(f"horizon length T must be positive, got {self.T}")
        if int(self.p) != self.p or self.p < 1:
            raise ValueError(f"number of intervals p must be a positive integer, got {self.p}")
        object.__setattr__(self, "p", int(self.p))
        object.__setattr__(self, "T", float(self.T))

    @property
    def interval_length(self) -> float:
        return self.T / self.p

    @property
    def edges(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.p + 1)

    def bin_epochs(self, epochs) -> np.ndarray:
        """Count epochs per interval using the ``((j-1)T/p, jT/p]`` convention."""
        epochs = np.asarray(epochs, dtype=float)
        idx = np.searchsorted(self.edges[1:], epochs, side="left")
        # t == 0 exactly belongs to no half-open interval; fold it into the first
        idx = np.clip(idx, 0, self.p - 1)
        return np.bincount(idx, minlength=self.p).astype(np.int64)

    def to_dict(self) -> dict:
        return {"T": self.T, "p": self.p}


class RngStream:
    """Reproducible random stream addressed by ``(seed, stream_id)``.

    Built on numpy's splittable seed sequences: distinct stream ids (and
    distinct child paths) give statistically independent generators.
    """

    def __init__(self, seed: int, stream_id: int = 0, _path: tuple = ()):
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        self._path = tuple(int(k) for k in _path)
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id, *self._path))
        self.generator = np.random.Generator(np.random.PCG64DXSM(ss))

    def child(self, key: int) -> "RngStream":
        """Independent sub-stream, e.g. one per simulated day."""
        return RngStream(self.seed, self.stream_id, (*self._path, key))

    def __repr__(self):
        path = f", path={self._path}" if self._path else ""
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id}{path})"


def as_stream(stream) -> RngStream:
    if isinstance(stream, RngStream):
        return stream
    if stream is None:
        return RngStream(0)
    if isinstance(stream, (int, np.integer)):
        return RngStream(int(stream))
    raise TypeError(f"expected RngStream or int seed, got {type(stream).__name__}")


# -- samplers ---------------------------------------------------------------


def sample_uniform_vector(stream: RngStream, p, size=None) -> np.ndarray:
    """Independent Uniform(0,1) coordinates, strictly inside the open interval."""
    if p < 1:
        raise ValueError("p must be >= 1")
    shape = (p,) if size is None else (*np.atleast_1d(size), p)
    u = stream.generator.random(shape)
    # random() is on [0, 1); zero has probability 2**-53 but must be excluded
    while True:
        zero = u == 0.0
        if not zero.any():
            return u
        u[zero] = stream.generator.random(int(zero.sum()))


def sample_poisson(stream: RngStream, rate, size=None):
    """Poisson(rate) counts; ``rate`` may be a scalar or an array."""
    rate_arr = np.asarray(rate, dtype=float)
    if np.any(~(rate_arr >= 0)):
        raise ValueError("Poisson rate must be nonnegative and finite")
    out = stream.generator.poisson(rate_arr, size=size)
    if np.ndim(out) == 0:
        return int(out)
    return out.astype(np.int64, copy=False)


def sample_gamma(stream: RngStream, shape, rate, size=None):
    """Gamma variates with mean ``shape / rate``."""
    shape_arr = np.asarray(shape, dtype=float)
    rate_arr = np.asarray(rate, dtype=float)
    if np.any(~(shape_arr > 0)) or np.any(~(rate_arr > 0)):
        raise ValueError("Gamma shape and rate must be positive")
    out = stream.generator.gamma(shape_arr, 1.0 / rate_arr, size=size)
    return float(out) if np.ndim(out) == 0 else out


def lognormal_params(mean: float, variance: float) -> tuple[float, float]:
    """(mu, sigma) of the underlying normal for a given lognormal mean/variance."""
    if not (mean > 0 and variance > 0):
        raise ValueError("lognormal mean and variance must be positive")
    sigma2 = math.log1p(variance / mean**2)
    return math.log(mean) - sigma2 / 2.0, math.sqrt(sigma2)


def sample_lognormal(stream: RngStream, mean: float, variance: float, size=None):
    mu, sigma = lognormal_params(mean, variance)
    out = stream.generator.lognormal(mu, sigma, size=size)
    return float(out) if np.ndim(out) == 0 else out


# -- count data ---------------------------------------------------------------


def check_counts(X, p: int | None = None, min_rows: int = 1) -> np.ndarray:
    """Validate an ``n x p`` nonnegative integer count matrix.

    Float arrays holding integral values are accepted and converted.
    """
    arr = check_array(X, dtype=None, ensure_2d=True, ensure_min_samples=min_rows,
                      input_name="counts")
    if arr.dtype.kind not in "iuf":
        raise CountDataError(f"counts must be numeric, got dtype {arr.dtype}")
    if arr.dtype.kind == "f":
        if not np.all(np.isfinite(arr)) or np.any(arr != np.round(arr)):
            raise CountDataError("counts must be integer valued")
    if np.any(arr < 0):
        raise CountDataError("counts must be nonnegative")
    if p is not None and arr.shape[1] != p:
        raise CountDataError(f"expected {p} intervals per day, got {arr.shape[1]}")
    return arr.astype(np.int64, copy=False)


def _is_number(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True


def read_counts_csv(path) -> np.ndarray:
    """Read a headerless count CSV (one day per row).

    A header row is tolerated when its first cell is non-numeric.
    """
    rows = []
    width = None
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if lineno == 1 and not _is_number(row[0].strip()):
                continue
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise CountDataError(
                    f"{path}: row {lineno} has {len(row)} columns, expected {width}")
            values = []
            for col, cell in enumerate(row, start=1):
                cell = cell.strip()
                try:
                    v = int(cell)
                except ValueError:
                    try:
                        fv = float(cell)
                    except ValueError:
                        fv = math.nan
                    if not (math.isfinite(fv) and fv == int(fv)):
                        raise CountDataError(
                            f"{path}: row {lineno}, column {col}: {cell!r} is not an integer count"
                        ) from None
                    v = int(fv)
                if v < 0:
                    raise CountDataError(f"{path}: row {lineno}, column {col}: negative count {v}")
                values.append(v)
            rows.append(values)
    if not rows:
        raise CountDataError(f"{path}: no count rows")
    return np.asarray(rows, dtype=np.int64)


def write_counts_csv(path, X) -> None:
    X = np.asarray(X, dtype=np.int64)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerows(X.tolist())


def write_epochs_csv(path, epochs) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for t in np.asarray(epochs, dtype=float).tolist():
            fh.write(f"{t!r}\n")


def read_epochs_csv(path) -> np.ndarray:
    with open(path) as fh:
        vals = [float(line.split(",")[0]) for line in fh if line.strip()]
    return np.asarray(vals, dtype=float)


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


@dataclass
class RunConfig:
    """Top-level JSON run configuration shared by the CLI commands."""

    horizon: Horizon | None = None
    seed: int = 0
    sections: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        h = d.pop("horizon", None)
        seed = int(d.pop("seed", 0))
        return cls(Horizon(**h) if h else None, seed, d)

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def section(self, name: str) -> dict:
        return dict(self.sections.get(name) or {})

    def to_dict(self) -> dict:
        out = {"seed": self.seed, **self.sections}
        if self.horizon is not None:
            out["horizon"] = self.horizon.to_dict()
        return out
