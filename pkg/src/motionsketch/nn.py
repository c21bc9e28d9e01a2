"""Positional encoding, small MLPs and the Adam optimizer."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad


@dataclass
class EncoderConfig:
    """Frequency counts for the sin/cos positional encoder."""
    l_spatial: int = 10
    l_temporal: int = 10

    def __post_init__(self):
        if self.l_spatial < 1 or self.l_temporal < 1:
            raise ValueError("frequency counts must be >= 1")


def positional_encode(x, num_freqs):
    """Lift each component p to (sin(2^l pi p), cos(2^l pi p)) for l = 0..L-1.

    Input shape (..., d) maps to (..., d * 2L); per component the order is
    sin l=0, cos l=0, sin l=1, cos l=1, ...  The raw input is not appended.
    """
    if num_freqs < 1:
        raise ValueError("num_freqs must be >= 1")
    parts = []
    for l in range(num_freqs):
        arg = x * (np.pi * (2.0 ** l))
        parts.append(ad.sin(arg))
        parts.append(ad.cos(arg))
    # (..., d, 2L) then flatten the last two axes, keeping components grouped
    stacked = ad.stack(parts, axis=-1)
    shape = ad.value_of(x).shape
    if len(shape) == 0:
        raise ValueError("positional_encode expects at least a 1-D input")
    return stacked.reshape(shape[:-1] + (shape[-1] * 2 * num_freqs,))


@dataclass
class Mlp:
    """Fully connected net: ReLU hidden layers, linear output, optional skip."""
    weights: list
    biases: list
    skip_at: int | None = None
    in_dim: int = 0

    @property
    def out_dim(self):
        return self.weights[-1].shape[1]

    def parameters(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def copy(self):
        return Mlp([w.copy() for w in self.weights],
                   [b.copy() for b in self.biases], self.skip_at, self.in_dim)

    def architecture(self):
        return ([w.shape for w in self.weights], self.skip_at)


def mlp_init(in_dim, out_dim, hidden=256, depth=8, skip_at=4, seed=0, zero_final=False):
    """Seeded uniform fan-in initialization; `zero_final` zeroes the last layer.

    `depth` counts hidden layers.  A skip connection re-concatenates the input
    at hidden layer `skip_at` (None to disable).
    """
    rng = np.random.default_rng(seed)
    if skip_at is not None and not (0 < skip_at < depth):
        skip_at = None
    dims_in = []
    dims_out = []
    cur = in_dim
    for i in range(depth):
        if skip_at is not None and i == skip_at:
            cur += in_dim
        dims_in.append(cur)
        dims_out.append(hidden)
        cur = hidden
    dims_in.append(cur)
    dims_out.append(out_dim)
    weights, biases = [], []
    for di, do in zip(dims_in, dims_out):
        bound = 1.0 / np.sqrt(di)
        weights.append(rng.uniform(-bound, bound, size=(di, do)))
        biases.append(rng.uniform(-bound, bound, size=(do,)))
    if zero_final:
        weights[-1][:] = 0.0
        biases[-1][:] = 0.0
    return Mlp(weights, biases, skip_at, in_dim)


def mlp_forward(net, x, tape=None, params=None):
    """Forward pass; `params` (alternating W, b Vars) overrides stored weights.

    Passing Var inputs or params records the computation for backprop; plain
    ndarrays run forward-only.
    """
    if params is None:
        params = net.parameters()
    xv = ad.value_of(x)
    if xv.shape[-1] != net.in_dim:
        raise ValueError(f"input dim {xv.shape[-1]} != expected {net.in_dim}")
    h = x
    inp = x
    n_layers = len(net.weights)
    for i in range(n_layers):
        if net.skip_at is not None and i == net.skip_at:
            h = ad.concatenate([h, inp], axis=-1)
        w, b = params[2 * i], params[2 * i + 1]
        h = ad.matmul(h, w) + b
        if i < n_layers - 1:
            h = ad.relu(h)
    return h


@dataclass
class AdamState:
    """Per-parameter moment accumulators for the Adam update."""
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(params, grads, state):
    """Standard bias-corrected Adam update, applied to `params` in place."""
    if len(params) != len(grads):
        raise ValueError("params/grads length mismatch")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    state.step += 1
    t = state.step
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            g = np.zeros_like(p)
        g = np.asarray(g)
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        state.m[i] = state.beta1 * state.m[i] + (1 - state.beta1) * g
        state.v[i] = state.beta2 * state.v[i] + (1 - state.beta2) * g * g
        m_hat = state.m[i] / (1 - state.beta1 ** t)
        v_hat = state.v[i] / (1 - state.beta2 ** t)
        p -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params, state


def wrap_params(net, tape):
    """Var views over a net's parameters, sharing the underlying arrays."""
    return [ad.Var(p, tape=tape) for p in net.parameters()]
