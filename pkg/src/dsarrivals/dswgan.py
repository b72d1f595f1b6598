"""DS-WGAN: a neural generator of Poisson intensities trained adversarially.

The simulator is ``h(g(Y))``: uniform noise ``Y`` goes through a ReLU
generator ``g`` that outputs one intensity per interval, and ``h`` draws
independent Poisson counts at those intensities. A scalar ReLU critic ``f``
scores count vectors; the pair is trained with a Wasserstein objective and a
gradient penalty on the critic.

Sign convention: the critic is pushed to score generated days high and real
days low, maximising ``sum f(fake) - sum f(real) - penalty``; the generator
minimises ``sum f(fake)``. Losses are sums over the batch, not means.

Back-propagating into the generator needs a derivative of the Poisson draw
with respect to its rate. The sample-path derivative is zero almost
everywhere, so it is replaced by ``1 + (count - rate) / (2 rate)`` (the
Gaussian approximation ``count ~ rate + sqrt(rate) Z`` differentiated along
the path), clipped to a bounded range.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import __version__
from .core import (Horizon, RngStream, as_stream, check_counts, config_hash, sample_poisson,
                   sample_uniform_vector)
from .nn import (MLPParams, backward_params, forward, grad_input, grad_penalty_params,
                 init_params)

log = logging.getLogger(__name__)

MODEL_FORMAT = "dsarrivals-dswgan/1"


class TrainingDivergedError(FloatingPointError):
    """A loss or gradient became NaN/Inf; ``diagnostics`` holds the iteration state."""

    def __init__(self, message, diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics


@dataclass
class TrainingConfig:
    generator_hidden: tuple = (512, 512, 512)
    critic_hidden: tuple | None = None  # None -> same as generator_hidden
    penalty_coef: float = 0.5
    batch_size: int = 256
    n_critic: int = 10
    adam_beta1: float = 0.5
    adam_beta2: float = 0.9
    adam_eps: float = 1e-8
    iterations: int = 50_000
    lr_start: float = 1e-4
    lr_end: float = 1e-6
    lambda_min: float = 1e-3
    surrogate_clip: tuple = (0.0, 5.0)
    standardize: bool = True
    weight_init_var: float = 0.1
    bias_init: float = 3.0
    dtype: str = "float32"
    seed: int = 0

    def __post_init__(self):
        self.generator_hidden = tuple(int(w) for w in self.generator_hidden)
        if self.critic_hidden is not None:
            self.critic_hidden = tuple(int(w) for w in self.critic_hidden)
        self.surrogate_clip = tuple(float(c) for c in self.surrogate_clip)
        problems = []
        if self.penalty_coef < 0:
            problems.append("penalty_coef must be >= 0")
        if self.batch_size < 1:
            problems.append("batch_size must be >= 1")
        if self.n_critic < 1:
            problems.append("n_critic must be >= 1")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            problems.append("Adam betas must lie in [0, 1)")
        if not (self.lr_start >= self.lr_end > 0):
            problems.append("need lr_start >= lr_end > 0")
        if self.iterations < 0:
            problems.append("iterations must be >= 0")
        if not self.lambda_min > 0:
            problems.append("lambda_min must be positive")
        lo, hi = self.surrogate_clip
        if not lo <= hi:
            problems.append("surrogate_clip must be (low, high) with low <= high")
        if self.weight_init_var <= 0:
            problems.append("weight_init_var must be positive")
        if self.dtype not in ("float32", "float64"):
            problems.append("dtype must be 'float32' or 'float64'")
        if problems:
            raise ValueError("invalid training config: " + "; ".join(problems))

    @property
    def critic_widths(self) -> tuple:
        return self.generator_hidden if self.critic_hidden is None else self.critic_hidden

    def lr_at(self, iteration: int) -> float:
        """Continuous exponential decay from ``lr_start`` to ``lr_end``."""
        if self.iterations <= 1:
            return self.lr_start
        frac = iteration / self.iterations
        return self.lr_start * (self.lr_end / self.lr_start) ** frac

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("generator_hidden", "critic_hidden", "surrogate_clip"):
            if d[k] is not None:
                d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainingConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**d)


class Adam:
    """Adam with bias correction; ``step`` moves parameters *down* the gradient."""

    def __init__(self, params: list, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params: list, grads: list, lr: float) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= (lr / bc1) * m / (np.sqrt(v / bc2) + self.eps)


@dataclass
class DSWGANModel:
    generator: MLPParams
    discriminator: MLPParams
    horizon: Horizon | None = None
    lambda_min: float = 1e-3
    surrogate_clip: tuple = (0.0, 5.0)
    input_mean: np.ndarray | None = None
    input_scale: np.ndarray | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        p = self.generator.layer_widths[-1]
        if self.generator.layer_widths[0] != p:
            raise ValueError("generator noise dimension must equal its output dimension p")
        if self.discriminator.layer_widths[0] != p or self.discriminator.layer_widths[-1] != 1:
            raise ValueError(f"discriminator must map R^{p} to a scalar, "
                             f"got widths {self.discriminator.layer_widths}")
        if self.horizon is not None and self.horizon.p != p:
            raise ValueError(f"horizon has p={self.horizon.p} but generator outputs {p}")
        if (self.input_mean is None) != (self.input_scale is None):
            raise ValueError("input_mean and input_scale must be given together")
        if self.discriminator.dtype != self.generator.dtype:
            raise ValueError("generator and discriminator must share a dtype")
        if self.input_mean is not None:
            self.input_mean = np.asarray(self.input_mean, dtype=self.dtype)
            self.input_scale = np.asarray(self.input_scale, dtype=self.dtype)

    @property
    def p(self) -> int:
        return self.generator.layer_widths[-1]

    @property
    def dtype(self):
        return self.generator.dtype

    def embed(self, counts) -> np.ndarray:
        """Map count vectors to critic inputs (optional affine standardisation)."""
        x = np.asarray(counts, dtype=self.dtype)
        if self.input_mean is None:
            return x
        return (x - self.input_mean) / self.input_scale

    def critic(self, counts) -> np.ndarray:
        return forward(self.discriminator, self.embed(counts)).output[..., 0]

    # -- persistence ---------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "format": MODEL_FORMAT,
            "p": self.p,
            "horizon": self.horizon.to_dict() if self.horizon else None,
            "lambda_min": self.lambda_min,
            "surrogate_clip": list(self.surrogate_clip),
            "standardization": None if self.input_mean is None else {
                "mean": self.input_mean.tolist(), "scale": self.input_scale.tolist()},
            "generator": self.generator.to_dict(),
            "discriminator": self.discriminator.to_dict(),
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DSWGANModel":
        if d.get("format") != MODEL_FORMAT:
            raise ValueError(f"unsupported model format {d.get('format')!r}")
        std = d.get("standardization")
        return cls(
            generator=MLPParams.from_dict(d["generator"]),
            discriminator=MLPParams.from_dict(d["discriminator"]),
            horizon=Horizon(**d["horizon"]) if d.get("horizon") else None,
            lambda_min=float(d["lambda_min"]),
            surrogate_clip=tuple(d.get("surrogate_clip", (0.0, 5.0))),
            input_mean=None if std is None else std["mean"],
            input_scale=None if std is None else std["scale"],
            metadata=d.get("metadata", {}),
        )

    def save(self, path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "DSWGANModel":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


# -- simulator ---------------------------------------------------------------


def _generator_rates(model, y, scale=1.0):
    trace = forward(model.generator, y)
    return trace, np.maximum(scale * trace.output, model.lambda_min)


def simulate_intensity(model: DSWGANModel, stream, size=None) -> np.ndarray:
    """Intensity vector(s) ``max(g(Y), lambda_min)`` with uniform noise ``Y``."""
    stream = as_stream(stream)
    y = sample_uniform_vector(stream, model.p, size)
    _, rates = _generator_rates(model, y)
    return rates[0] if y.ndim == 1 else rates


def simulate_counts(model: DSWGANModel, stream, size=None) -> np.ndarray:
    """Count vector(s): Poisson draws at freshly generated intensities."""
    stream = as_stream(stream)
    rates = simulate_intensity(model, stream, size)
    return sample_poisson(stream, rates)


def sample(model: DSWGANModel, n_days: int, scale: float = 1.0, stream=None,
           chunk: int = 8192) -> np.ndarray:
    """Draw ``n_days`` count vectors with intensities multiplied by ``scale``.

    Scaling acts on the intensity before the Poisson draw, so counts stay
    conditionally Poisson (variance grows like ``scale``, not ``scale**2``).
    """
    if not scale > 0:
        raise ValueError(f"scale must be positive, got {scale}")
    if n_days < 0:
        raise ValueError("n_days must be >= 0")
    stream = as_stream(stream)
    out = np.empty((n_days, model.p), dtype=np.int64)
    for start in range(0, n_days, chunk):
        stop = min(start + chunk, n_days)
        y = sample_uniform_vector(stream, model.p, stop - start)
        _, rates = _generator_rates(model, y, scale)
        out[start:stop] = sample_poisson(stream, rates)
    return out


# -- gradients -----------------------------------------------------------------


def surrogate_poisson_grad(rate, count, lambda_min: float = 1e-3, clip=(0.0, 5.0)):
    """Replacement for d Poisson(rate) / d rate: ``1 + (count - rate) / (2 rate)``."""
    rate_arr = np.asarray(rate, dtype=float)
    if np.any(rate_arr < lambda_min):
        raise ValueError(f"surrogate gradient needs rate >= lambda_min={lambda_min}; "
                         "clamp intensities before the Poisson step")
    raw = 1.0 + (np.asarray(count, dtype=float) - rate_arr) / (2.0 * rate_arr)
    out = np.clip(raw, clip[0], clip[1])
    return float(out) if out.ndim == 0 else out


def _generator_grad_from_trace(model, trace, rates, counts, critic_input_grad):
    surrogate = surrogate_poisson_grad(rates, counts, model.lambda_min, model.surrogate_clip)
    raw = 1.0 + (counts - rates) / (2.0 * rates)
    clipped = int(np.count_nonzero((raw < model.surrogate_clip[0]) | (raw > model.surrogate_clip[1])))
    # the clamp at lambda_min belongs to the simulator, whose derivative the
    # surrogate replaces, so the upstream passes straight through it
    upstream = critic_input_grad * surrogate
    return backward_params(model.generator, trace, upstream), clipped


def generator_grad(model: DSWGANModel, y, counts, critic_input_grad) -> MLPParams:
    """Generator parameter gradient of ``sum_i f(h(g(y_i)))``.

    ``counts`` are the Poisson draws made on this sample path and
    ``critic_input_grad`` is ``grad_x f`` at those counts (in count units).
    """
    y = np.atleast_2d(np.asarray(y, dtype=float))
    counts = np.atleast_2d(np.asarray(counts, dtype=float))
    gx = np.atleast_2d(np.asarray(critic_input_grad, dtype=float))
    if not (y.shape == counts.shape == gx.shape) or y.shape[1] != model.p:
        raise ValueError(f"shape mismatch: noise {y.shape}, counts {counts.shape}, "
                         f"critic gradient {gx.shape}, p={model.p}")
    trace, rates = _generator_rates(model, y)
    grads, _ = _generator_grad_from_trace(model, trace, rates, counts, gx)
    return grads


def critic_input_grad(model: DSWGANModel, counts) -> np.ndarray:
    """``grad_x f`` in count units (chain rule through the standardisation)."""
    trace = forward(model.discriminator, model.embed(counts))
    g = grad_input(model.discriminator, trace)
    return g if model.input_scale is None else g / model.input_scale


# -- training ------------------------------------------------------------------


@dataclass
class TrainingLog:
    columns: tuple = ("iteration", "lr", "loss_critic", "loss_generator", "penalty",
                      "clip_fraction", "critic_grad_norm", "generator_grad_norm",
                      "degenerate_penalty")
    rows: list = field(default_factory=list)

    def append(self, **row):
        self.rows.append(tuple(row[c] for c in self.columns))

    def __len__(self):
        return len(self.rows)

    def column(self, name) -> np.ndarray:
        i = self.columns.index(name)
        return np.array([r[i] for r in self.rows])

    def write_csv(self, path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as fh:
            fh.write(",".join(self.columns) + "\n")
            for r in self.rows:
                fh.write(",".join(repr(float(v)) if isinstance(v, (float, np.floating))
                                  else str(int(v)) for v in r) + "\n")


def _global_norm(grads: MLPParams) -> float:
    return math.sqrt(sum(float(np.vdot(a, a)) for a in grads.arrays()))


def init_model(p: int, config: TrainingConfig, stream: RngStream, horizon=None,
               data=None) -> DSWGANModel:
    gen = init_params((p, *config.generator_hidden, p), stream,
                      config.weight_init_var, config.bias_init, config.dtype)
    disc = init_params((p, *config.critic_widths, 1), stream,
                       config.weight_init_var, config.bias_init, config.dtype)
    mean = scale = None
    if config.standardize and data is not None:
        mean = data.mean(axis=0)
        scale = data.std(axis=0)
        scale = np.where(scale > 1e-8, scale, 1.0)
    return DSWGANModel(gen, disc, horizon, config.lambda_min, config.surrogate_clip, mean, scale,
                       metadata={"p": p, "seed": config.seed, "config_hash": config_hash(config.to_dict()),
                                 "training_config": config.to_dict(), "version": __version__})


def _check_finite(iteration, **values):
    bad = {k: v for k, v in values.items() if not np.all(np.isfinite(v))}
    if bad:
        diag = {"iteration": iteration,
                **{k: (float(v) if np.ndim(v) == 0 else np.asarray(v).tolist()) for k, v in values.items()}}
        raise TrainingDivergedError(
            f"non-finite {', '.join(sorted(bad))} at iteration {iteration}", diag)


def train(data, config: TrainingConfig, horizon: Horizon | None = None,
          callback=None) -> tuple[DSWGANModel, TrainingLog]:
    """Fit the generator/critic pair to interval-count data.

    Each iteration runs ``n_critic`` critic updates on fresh real/fake batches
    (real rows drawn uniformly with replacement) followed by one generator
    update. ``callback(iteration, model, log)`` is called after every
    iteration when given.
    """
    X = check_counts(data, p=None if horizon is None else horizon.p).astype(float)
    n, p = X.shape
    model = init_model(p, config, RngStream(config.seed, 0), horizon, X)
    X = X.astype(model.dtype)
    history = TrainingLog()
    if config.iterations == 0:
        return model, history

    stream = RngStream(config.seed, 1)
    rng = stream.generator
    m = config.batch_size
    zeta = config.penalty_coef
    G, D = model.generator, model.discriminator
    g_params, d_params = G.arrays(), D.arrays()
    g_opt = Adam(g_params, config.adam_beta1, config.adam_beta2, config.adam_eps)
    d_opt = Adam(d_params, config.adam_beta1, config.adam_beta2, config.adam_eps)
    sign = np.concatenate([np.ones(m), -np.ones(m)])[:, None].astype(model.dtype)

    for it in range(config.iterations):
        lr = config.lr_at(it)
        for _ in range(config.n_critic):
            real = X[rng.integers(0, n, size=m)]
            y = sample_uniform_vector(stream, p, m)
            _, rates = _generator_rates(model, y)
            fake = sample_poisson(stream, rates).astype(model.dtype)
            eps = rng.random((m, 1)).astype(model.dtype)
            x_hat = eps * real + (1.0 - eps) * fake

            trace = forward(D, model.embed(np.vstack([real, fake])))
            out = trace.output[:, 0]
            # descend on sum f(real) - sum f(fake) + penalty
            d_grads = backward_params(D, trace, sign)
            penalty, p_grads, n_degen = grad_penalty_params(D, model.embed(x_hat), zeta,
                                                            return_info=True)
            grads = [a + b for a, b in zip(d_grads.arrays(), p_grads.arrays())]
            loss_critic = float(out[m:].sum(dtype=float) - out[:m].sum(dtype=float) + penalty)
            d_norm = math.sqrt(sum(float(np.vdot(g, g)) for g in grads))
            _check_finite(it, loss_critic=loss_critic, penalty=penalty, critic_grad_norm=d_norm)
            d_opt.step(d_params, grads, lr)

        y = sample_uniform_vector(stream, p, m)
        g_trace, rates = _generator_rates(model, y)
        fake = sample_poisson(stream, rates).astype(model.dtype)
        d_trace = forward(D, model.embed(fake))
        loss_gen = float(d_trace.output.sum(dtype=float))
        gx = grad_input(D, d_trace)
        if model.input_scale is not None:
            gx = gx / model.input_scale
        g_grads, clipped = _generator_grad_from_trace(model, g_trace, rates, fake, gx)
        g_norm = _global_norm(g_grads)
        _check_finite(it, loss_generator=loss_gen, generator_grad_norm=g_norm)
        g_opt.step(g_params, g_grads.arrays(), lr)

        history.append(iteration=it, lr=lr, loss_critic=loss_critic, loss_generator=loss_gen,
                       penalty=penalty, clip_fraction=clipped / fake.size,
                       critic_grad_norm=d_norm, generator_grad_norm=g_norm,
                       degenerate_penalty=n_degen)
        if callback is not None:
            callback(it, model, history)
    return model, history


class DSWGAN(BaseEstimator):
    """Estimator wrapper: ``fit`` on an ``n_days x p`` count matrix, then ``sample``.

    Hyper-parameters mirror :class:`TrainingConfig`; ``random_state`` is its
    seed. After fitting, ``model_`` holds the trained :class:`DSWGANModel` and
    ``training_log_`` the per-iteration diagnostics.
    """

    def __init__(self, generator_hidden=(512, 512, 512), critic_hidden=None, penalty_coef=0.5,
                 batch_size=256, n_critic=10, adam_beta1=0.5, adam_beta2=0.9, adam_eps=1e-8,
                 iterations=50_000, lr_start=1e-4, lr_end=1e-6, lambda_min=1e-3,
                 surrogate_clip=(0.0, 5.0), standardize=True, weight_init_var=0.1,
                 bias_init=3.0, dtype="float32", horizon=None, random_state=0):
        self.generator_hidden = generator_hidden
        self.critic_hidden = critic_hidden
        self.penalty_coef = penalty_coef
        self.batch_size = batch_size
        self.n_critic = n_critic
        self.adam_beta1 = adam_beta1
        self.adam_beta2 = adam_beta2
        self.adam_eps = adam_eps
        self.iterations = iterations
        self.lr_start = lr_start
        self.lr_end = lr_end
        self.lambda_min = lambda_min
        self.surrogate_clip = surrogate_clip
        self.standardize = standardize
        self.weight_init_var = weight_init_var
        self.bias_init = bias_init
        self.dtype = dtype
        self.horizon = horizon
        self.random_state = random_state

    def training_config(self) -> TrainingConfig:
        params = self.get_params()
        params.pop("horizon")
        seed = params.pop("random_state")
        return TrainingConfig(**params, seed=0 if seed is None else int(seed))

    def fit(self, X, y=None, callback=None):
        X = check_counts(X)
        self.n_features_in_ = X.shape[1]
        self.model_, self.training_log_ = train(X, self.training_config(), self.horizon, callback)
        return self

    def sample(self, n_days=1, scale=1.0, random_state=None):
        check_is_fitted(self, "model_")
        return sample(self.model_, n_days, scale, as_stream(random_state))

    def simulate_intensity(self, n_days=1, random_state=None):
        check_is_fitted(self, "model_")
        return simulate_intensity(self.model_, as_stream(random_state), n_days)

    @classmethod
    def from_model(cls, model: DSWGANModel) -> "DSWGAN":
        cfg = model.metadata.get("training_config", {})
        est = cls(**{k: v for k, v in cfg.items() if k != "seed"},
                  random_state=cfg.get("seed", 0), horizon=model.horizon)
        est.model_ = model
        est.n_features_in_ = model.p
        est.training_log_ = TrainingLog()
        return est
