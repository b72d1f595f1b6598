"""Fully connected ReLU networks with hand-written reverse-mode gradients.

Inputs are batched row-wise: ``x`` has shape ``(batch, n0)`` (a 1-D vector is
treated as a batch of one). Layer ``l`` computes ``z_l = a_{l-1} @ W_l.T + b_l``
and every layer except the last applies ``max(z, 0)``.

Since the network is piecewise linear, the input gradient of a scalar network
depends on the parameters only through products of weight matrices and the
ReLU masks. Holding the masks fixed therefore gives an exact (almost
everywhere) parameter gradient of any function of the input gradient, which
is all the Wasserstein gradient penalty needs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import RngStream

DEGENERATE_GRAD_NORM = 1e-12


@dataclass
class MLPParams:
    """Weights ``W_l`` (``n_l x n_{l-1}``) and biases ``b_l`` (``n_l``)."""

    weights: list
    biases: list

    def __post_init__(self):
        if len(self.weights) < 1 or len(self.weights) != len(self.biases):
            raise ValueError("need L >= 1 layers with one bias per weight matrix")
        for l, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.ndim != 2 or b.shape != (W.shape[0],):
                raise ValueError(f"layer {l + 1}: weight {W.shape} / bias {b.shape} mismatch")
            if l > 0 and W.shape[1] != self.weights[l - 1].shape[0]:
                raise ValueError(f"layer {l + 1} expects input width {W.shape[1]}, "
                                 f"previous layer has {self.weights[l - 1].shape[0]}")

    @property
    def layer_widths(self) -> tuple:
        return (self.weights[0].shape[1], *(W.shape[0] for W in self.weights))

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def arrays(self) -> list:
        """Flat list ``[W_1, b_1, ..., W_L, b_L]`` (views, not copies)."""
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def copy(self) -> "MLPParams":
        return MLPParams([W.copy() for W in self.weights], [b.copy() for b in self.biases])

    @classmethod
    def zeros_like(cls, other: "MLPParams") -> "MLPParams":
        return cls([np.zeros_like(W) for W in other.weights],
                   [np.zeros_like(b) for b in other.biases])

    @property
    def dtype(self):
        return self.weights[0].dtype

    def to_dict(self) -> dict:
        return {
            "layer_widths": list(self.layer_widths),
            "dtype": self.dtype.name,
            "weights": [W.tolist() for W in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MLPParams":
        dtype = np.dtype(d.get("dtype", "float64"))
        params = cls([np.asarray(W, dtype=dtype) for W in d["weights"]],
                     [np.asarray(b, dtype=dtype) for b in d["biases"]])
        if "layer_widths" in d and tuple(d["layer_widths"]) != params.layer_widths:
            raise ValueError(f"layer_widths {d['layer_widths']} disagree with weight shapes "
                             f"{params.layer_widths}")
        return params


def init_params(layer_widths, stream: RngStream, weight_var: float = 0.1,
                bias: float = 3.0, dtype=np.float64) -> MLPParams:
    """Gaussian weights with the given variance, constant biases."""
    widths = [int(w) for w in layer_widths]
    if len(widths) < 2 or min(widths) < 1:
        raise ValueError(f"invalid layer widths {layer_widths}")
    sd = np.sqrt(weight_var)
    rng = stream.generator
    weights = [rng.normal(0.0, sd, size=(n_out, n_in)).astype(dtype)
               for n_in, n_out in zip(widths, widths[1:])]
    biases = [np.full(n_out, float(bias), dtype=dtype) for n_out in widths[1:]]
    return MLPParams(weights, biases)


@dataclass
class ForwardTrace:
    x: np.ndarray
    pre: list       # z_1..z_L
    post: list      # a_1..a_{L-1}
    masks: list     # D_1..D_{L-1}, boolean
    output: np.ndarray
    squeeze: bool = False

    @property
    def activations(self):
        """Inputs to each layer: ``a_0 = x, a_1, ..., a_{L-1}``."""
        return [self.x, *self.post]


def _as_batch(x, n0, dtype=float):
    x = np.asarray(x, dtype=dtype)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != n0:
        raise ValueError(f"network expects inputs of width {n0}, got shape {np.shape(x)}")
    return x, squeeze


def forward(params: MLPParams, x) -> ForwardTrace:
    x, squeeze = _as_batch(x, params.layer_widths[0], params.weights[0].dtype)
    pre, post, masks = [], [], []
    a = x
    L = params.n_layers
    for l, (W, b) in enumerate(zip(params.weights, params.biases), start=1):
        z = a @ W.T
        z += b
        pre.append(z)
        if l < L:
            mask = z > 0  # tie at 0 -> inactive
            a = np.maximum(z, 0)
            masks.append(mask)
            post.append(a)
    return ForwardTrace(x, pre, post, masks, pre[-1], squeeze)


def predict(params: MLPParams, x) -> np.ndarray:
    trace = forward(params, x)
    return trace.output[0] if trace.squeeze else trace.output


def _upstream(trace: ForwardTrace, upstream):
    g = np.asarray(upstream, dtype=trace.output.dtype)
    if g.ndim == 1 and trace.squeeze:
        g = g[None, :]
    if g.shape != trace.output.shape:
        raise ValueError(f"upstream shape {g.shape} != output shape {trace.output.shape}")
    return g


def backward(params: MLPParams, trace: ForwardTrace, upstream, need_input=False):
    """Gradients of ``sum_i <upstream_i, output_i>``.

    Returns ``(param_grads, input_grad)``; ``input_grad`` is ``None`` unless
    requested.
    """
    delta = _upstream(trace, upstream)
    acts = trace.activations
    gW = [None] * params.n_layers
    gb = [None] * params.n_layers
    for l in range(params.n_layers - 1, -1, -1):
        gW[l] = delta.T @ acts[l]
        gb[l] = delta.sum(axis=0)
        if l > 0 or need_input:
            delta = delta @ params.weights[l]
            if l > 0:
                delta *= trace.masks[l - 1]
    grads = MLPParams(gW, gb)
    if not need_input:
        return grads, None
    return grads, (delta[0] if trace.squeeze else delta)


def backward_params(params: MLPParams, trace: ForwardTrace, upstream) -> MLPParams:
    """Parameter gradient of ``<upstream, output>`` with the trace's masks."""
    return backward(params, trace, upstream)[0]


def _input_grad_chain(params: MLPParams, trace: ForwardTrace):
    """Backward signals ``delta_l = d f / d z_l`` (per sample) and ``d f / d x``."""
    if params.layer_widths[-1] != 1:
        raise ValueError("input gradient requires a scalar-output network (n_L = 1)")
    batch = trace.x.shape[0]
    delta = np.ones((batch, 1), dtype=trace.output.dtype)
    deltas = [None] * params.n_layers
    for l in range(params.n_layers - 1, -1, -1):
        deltas[l] = delta
        delta = delta @ params.weights[l]
        if l > 0:
            delta *= trace.masks[l - 1]
    return deltas, delta


def grad_input(params: MLPParams, trace: ForwardTrace) -> np.ndarray:
    """``grad_x f`` for a scalar-output network, one row per sample."""
    _, gx = _input_grad_chain(params, trace)
    return gx[0] if trace.squeeze else gx


def grad_penalty_params(params: MLPParams, x_hat, zeta: float, return_info: bool = False):
    """Penalty ``zeta * (||grad_x f(x_hat)|| - 1)^2`` summed over the batch.

    Returns ``(value, grads)`` where ``grads`` is the parameter gradient with
    ReLU masks fixed at their forward-pass values. Bias gradients are zero
    because the input gradient does not depend on biases once masks are fixed.
    Samples whose input gradient norm is below 1e-12 contribute ``zeta`` to
    the value and nothing to the gradient; with ``return_info=True`` their
    count is returned as a third element.
    """
    if zeta < 0:
        raise ValueError("penalty coefficient must be nonnegative")
    trace = forward(params, x_hat)
    deltas, gx = _input_grad_chain(params, trace)
    norms = np.sqrt(np.einsum("ij,ij->i", gx, gx))
    degenerate = norms < DEGENERATE_GRAD_NORM
    value = float(zeta * np.sum((norms.astype(float) - 1.0) ** 2))

    safe = np.where(degenerate, 1.0, norms)
    coef = np.where(degenerate, 0.0, 2.0 * zeta * (norms - 1.0) / safe)
    # u = d penalty / d (grad_x f), one row per sample
    u = gx * coef[:, None].astype(gx.dtype)

    # Push u forward through the masked linear maps: q_0 = u, q_l = D_l W_l q_{l-1}.
    # Then d<u, grad_x f>/dW_l = delta_l^T q_{l-1} summed over the batch.
    gW = []
    q = u
    for l in range(params.n_layers):
        gW.append(deltas[l].T @ q)
        if l < params.n_layers - 1:
            q = q @ params.weights[l].T
            q *= trace.masks[l]
    gb = [np.zeros_like(b) for b in params.biases]
    grads = MLPParams(gW, gb)
    if return_info:
        return value, grads, int(degenerate.sum())
    return value, grads
