"""Reverse-mode autodiff on numpy arrays with an explicit gradient tape.

Only the operations needed by the optimization pipeline are provided.
Functions in this module accept either plain ndarrays (forward-only) or
``Var`` nodes; mixing the two treats the ndarray as a constant.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit


class GradTape:
    """Records forward operations so gradients can be propagated once, in reverse."""

    def __init__(self):
        self._nodes = []

    def var(self, value):
        """Create a leaf variable (trainable parameter or input) on this tape."""
        return Var(np.asarray(value, dtype=np.float64), tape=self)

    def _record(self, node):
        self._nodes.append(node)

    def zero_grad(self):
        for n in self._nodes:
            n.grad = None

    def backward(self, loss, release=True):
        """Seed d(loss)/d(loss)=1 and visit every recorded node exactly once.

        With `release` (the default) the tape breaks its node references and
        backward closures afterwards, so the graph's reference cycles do not
        linger until a garbage collection pass.  Leaf gradients stay readable
        on the Vars the caller holds.
        """
        if loss.tape is not self:
            raise ValueError("loss was not recorded on this tape")
        loss.grad = np.ones_like(loss.value)
        for node in reversed(self._nodes):
            if node.grad is None or node._backward is None:
                continue
            node._backward(node.grad)
        if release:
            self.release()

    def release(self):
        """Drop recorded closures and parent links; the tape becomes inert."""
        for n in self._nodes:
            n._backward = None
            n._parents = ()
        self._nodes.clear()


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape` (inverse of numpy broadcasting)."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Var:
    """A value plus the closure that routes its adjoint to its parents."""

    __slots__ = ("value", "grad", "tape", "_parents", "_backward")
    __array_priority__ = 100  # take precedence over ndarray operators

    def __init__(self, value, tape=None, parents=(), backward=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.tape = tape
        self._parents = parents
        self._backward = backward
        if tape is not None:
            tape._record(self)

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def _accum(self, g):
        g = _unbroadcast(np.asarray(g, dtype=np.float64), self.value.shape)
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64)
        else:
            self.grad = self.grad + g

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other):
        return _binary(self, other, lambda a, b: a + b,
                       lambda g, a, b: g, lambda g, a, b: g)

    __radd__ = __add__

    def __sub__(self, other):
        return _binary(self, other, lambda a, b: a - b,
                       lambda g, a, b: g, lambda g, a, b: -g)

    def __rsub__(self, other):
        return _binary(self, other, lambda a, b: b - a,
                       lambda g, a, b: -g, lambda g, a, b: g)

    def __mul__(self, other):
        return _binary(self, other, lambda a, b: a * b,
                       lambda g, a, b: g * b, lambda g, a, b: g * a)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return _binary(self, other, lambda a, b: a / b,
                       lambda g, a, b: g / b, lambda g, a, b: -g * a / (b * b))

    def __rtruediv__(self, other):
        return _binary(self, other, lambda a, b: b / a,
                       lambda g, a, b: -g * b / (a * a), lambda g, a, b: g / a)

    def __neg__(self):
        return _unary(self, lambda a: -a, lambda g, a, out: -g)

    def __pow__(self, p):
        if not np.isscalar(p):
            raise TypeError("only constant exponents are supported")
        return _unary(self, lambda a: a ** p,
                      lambda g, a, out: g * p * a ** (p - 1))

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        def bwd(g, a, out):
            full = np.zeros_like(a)
            np.add.at(full, idx, g)
            return full
        return _unary(self, lambda a: a[idx], bwd)

    # -- shape / reductions -------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        orig = self.value.shape
        return _unary(self, lambda a: a.reshape(shape),
                      lambda g, a, out: g.reshape(orig))

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def detach(self):
        """Value as a constant: gradients do not flow past this point."""
        return self.value.copy()

    def __repr__(self):
        return f"Var(shape={self.value.shape})"


def _tape_of(*xs):
    for x in xs:
        if isinstance(x, Var) and x.tape is not None:
            return x.tape
    return None


def _unary(x, fwd, bwd):
    if not isinstance(x, Var):
        return fwd(np.asarray(x, dtype=np.float64))
    out_val = fwd(x.value)
    out = Var(out_val, tape=x.tape, parents=(x,))
    a = x.value

    def _backward(g):
        x._accum(bwd(g, a, out_val))
    out._backward = _backward
    return out


def _binary(x, y, fwd, bwd_a, bwd_b):
    if not isinstance(x, Var) and not isinstance(y, Var):
        return fwd(np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64))
    av = x.value if isinstance(x, Var) else np.asarray(x, dtype=np.float64)
    bv = y.value if isinstance(y, Var) else np.asarray(y, dtype=np.float64)
    out = Var(fwd(av, bv), tape=_tape_of(x, y), parents=(x, y))

    def _backward(g):
        if isinstance(x, Var):
            x._accum(bwd_a(g, av, bv))
        if isinstance(y, Var):
            y._accum(bwd_b(g, av, bv))
    out._backward = _backward
    return out


def value_of(x):
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=np.float64)


def detach(x):
    return x.detach() if isinstance(x, Var) else np.asarray(x, dtype=np.float64)


# -- elementwise functions --------------------------------------------------

def exp(x):
    return _unary(x, np.exp, lambda g, a, out: g * out)


def sin(x):
    return _unary(x, np.sin, lambda g, a, out: g * np.cos(a))


def cos(x):
    return _unary(x, np.cos, lambda g, a, out: -g * np.sin(a))


def absolute(x):
    # subgradient 0 at the kink
    return _unary(x, np.abs, lambda g, a, out: g * np.sign(a))


def relu(x):
    return _unary(x, lambda a: np.maximum(a, 0.0),
                  lambda g, a, out: g * (a > 0))


def sigmoid(x):
    return _unary(x, expit, lambda g, a, out: g * out * (1.0 - out))


def safe_sqrt(x):
    """sqrt with zero gradient at 0 (subgradient convention)."""
    def bwd(g, a, out):
        denom = np.where(out > 0, out, 1.0)
        return np.where(out > 0, 0.5 * g / denom, 0.0)
    return _unary(x, np.sqrt, bwd)


def clip_lower(x, lo):
    """max(x, lo) against a constant; gradient passes only where x > lo."""
    return _unary(x, lambda a: np.maximum(a, lo),
                  lambda g, a, out: g * (a > lo))


def maximum(x, y):
    """Elementwise max; at ties the gradient goes to the first argument."""
    return _binary(x, y, np.maximum,
                   lambda g, a, b: g * (a >= b),
                   lambda g, a, b: g * (a < b))


# -- reductions -------------------------------------------------------------

def reduce_sum(x, axis=None, keepdims=False):
    if not isinstance(x, Var):
        return np.sum(x, axis=axis, keepdims=keepdims)
    shape = x.value.shape

    def bwd(g, a, out):
        if axis is None:
            return np.broadcast_to(g, shape)
        gg = g if keepdims else np.expand_dims(g, axis)
        return np.broadcast_to(gg, shape)
    return _unary(x, lambda a: np.sum(a, axis=axis, keepdims=keepdims), bwd)


def mean(x, axis=None, keepdims=False):
    if not isinstance(x, Var):
        return np.mean(x, axis=axis, keepdims=keepdims)
    if axis is None:
        n = x.value.size
    elif isinstance(axis, tuple):
        n = int(np.prod([x.value.shape[a] for a in axis]))
    else:
        n = x.value.shape[axis]
    return reduce_sum(x, axis=axis, keepdims=keepdims) / float(n)


def _reduce_extreme(x, axis, keepdims, np_fn):
    if not isinstance(x, Var):
        return np_fn(x, axis=axis, keepdims=keepdims)

    def bwd(g, a, out):
        m = np_fn(a, axis=axis, keepdims=True)
        mask = (a == m).astype(np.float64)
        mask /= mask.sum(axis=axis, keepdims=True) if axis is not None else mask.sum()
        gg = g if (keepdims or axis is None) else np.expand_dims(g, axis)
        return mask * gg
    return _unary(x, lambda a: np_fn(a, axis=axis, keepdims=keepdims), bwd)


def reduce_max(x, axis=None, keepdims=False):
    return _reduce_extreme(x, axis, keepdims, np.max)


def reduce_min(x, axis=None, keepdims=False):
    return _reduce_extreme(x, axis, keepdims, np.min)


def norm(x, axis=None, keepdims=False):
    """Euclidean norm with zero subgradient at the origin."""
    return safe_sqrt(reduce_sum(x * x, axis=axis, keepdims=keepdims))


# -- structural ops ---------------------------------------------------------

def matmul(x, y):
    """Matrix product; supports batched operands of ndim >= 2."""
    def bwd_a(g, a, b):
        return _unbroadcast(g @ np.swapaxes(b, -1, -2), a.shape)

    def bwd_b(g, a, b):
        return _unbroadcast(np.swapaxes(a, -1, -2) @ g, b.shape)
    return _binary(x, y, np.matmul, bwd_a, bwd_b)


def concatenate(xs, axis=0):
    if not any(isinstance(x, Var) for x in xs):
        return np.concatenate([np.asarray(x, dtype=np.float64) for x in xs], axis=axis)
    vals = [value_of(x) for x in xs]
    sizes = [v.shape[axis] for v in vals]
    out = Var(np.concatenate(vals, axis=axis), tape=_tape_of(*xs), parents=tuple(xs))
    offsets = np.cumsum([0] + sizes)

    def _backward(g):
        for x, lo, hi in zip(xs, offsets[:-1], offsets[1:]):
            if isinstance(x, Var):
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                x._accum(g[tuple(sl)])
    out._backward = _backward
    return out


def stack(xs, axis=0):
    if not any(isinstance(x, Var) for x in xs):
        return np.stack([np.asarray(x, dtype=np.float64) for x in xs], axis=axis)
    vals = [value_of(x) for x in xs]
    out = Var(np.stack(vals, axis=axis), tape=_tape_of(*xs), parents=tuple(xs))

    def _backward(g):
        slices = np.moveaxis(g, axis, 0)
        for x, gx in zip(xs, slices):
            if isinstance(x, Var):
                x._accum(gx)
    out._backward = _backward
    return out


# -- finite-difference oracle -----------------------------------------------

class GradCheckReport:
    """Outcome of comparing analytic gradients with central differences."""

    def __init__(self, max_rel_err, rel_errs, failing, tolerance):
        self.max_rel_err = max_rel_err
        self.rel_errs = rel_errs
        self.failing = failing
        self.tolerance = tolerance

    @property
    def passed(self):
        return len(self.failing) == 0

    @property
    def fraction_ok(self):
        if self.rel_errs.size == 0:
            return 1.0
        return 1.0 - len(self.failing) / self.rel_errs.size

    def __repr__(self):
        return (f"GradCheckReport(max_rel_err={self.max_rel_err:.3e}, "
                f"failing={len(self.failing)}/{self.rel_errs.size})")


def grad_check(f, point, step=1e-5, tolerance=1e-5):
    """Compare analytic gradients of `f` against central finite differences.

    `f` maps an ndarray to `(scalar value, gradient ndarray)`; the gradient
    is typically produced by running `f` on a fresh tape.
    """
    point = np.asarray(point, dtype=np.float64)
    _, analytic = f(point)
    analytic = np.asarray(analytic, dtype=np.float64).ravel()
    flat = point.ravel()
    numeric = np.empty_like(flat)
    for i in range(flat.size):
        xp = flat.copy()
        xm = flat.copy()
        xp[i] += step
        xm[i] -= step
        fp, _ = f(xp.reshape(point.shape))
        fm, _ = f(xm.reshape(point.shape))
        numeric[i] = (fp - fm) / (2.0 * step)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1.0)
    rel = np.abs(analytic - numeric) / denom
    failing = [int(i) for i in np.nonzero(rel > tolerance)[0]]
    return GradCheckReport(float(rel.max()) if rel.size else 0.0, rel, failing, tolerance)
