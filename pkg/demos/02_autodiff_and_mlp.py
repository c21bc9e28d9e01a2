"""
Autodiff tape, positional encoding, and Adam
============================================

Check an analytic gradient against finite differences, then fit a tiny
positionally encoded MLP to a 1D target function.
"""

import numpy as np

from motionsketch import GradTape, Var, grad_check
from motionsketch import nn
from motionsketch.autodiff import mean, sin, value_of

# gradient check of a small composite expression
def f(x):
    tape = GradTape()
    v = Var(x, tape=tape)
    loss = mean(sin(v) * v * v)
    tape.backward(loss)
    return float(value_of(loss)), v.grad

report = grad_check(f, np.random.default_rng(0).normal(size=8))
print("grad check", report)

# fit y = sin(2 pi x) with a 2x32 MLP on encoded inputs
rng = np.random.default_rng(1)
freqs = 6
xs = rng.uniform(0.0, 1.0, size=(256, 1))
ys = np.sin(2.0 * np.pi * xs)
net = nn.mlp_init(in_dim=2 * freqs, out_dim=1, depth=2, hidden=32,
                  skip_at=None, seed=2)
adam = nn.AdamState(lr=1e-2)
feats = nn.positional_encode(xs, freqs)
for step in range(300):
    tape = GradTape()
    params = nn.wrap_params(net, tape)
    pred = nn.mlp_forward(net, feats, params=params)
    loss = mean((pred - ys) * (pred - ys))
    tape.backward(loss)
    nn.adam_step(net.parameters(), [p.grad for p in params], adam)
print("final mse", float(value_of(loss)))
