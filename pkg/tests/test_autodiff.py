import numpy as np
import pytest

from motionsketch import autodiff as ad


def _fd_grad(f, x, step=1e-6):
    """Central-difference gradient oracle for scalar-valued f."""
    x = np.asarray(x, dtype=np.float64)
    g = np.empty_like(x)
    flat = x.ravel()
    gf = g.ravel()
    for i in range(flat.size):
        xp, xm = flat.copy(), flat.copy()
        xp[i] += step
        xm[i] -= step
        gf[i] = (f(xp.reshape(x.shape)) - f(xm.reshape(x.shape))) / (2 * step)
    return g


def test_quadratic_matches_finite_differences():
    # f(x) = x^2 at x = 1 has gradient 2
    def run(x):
        tape = ad.GradTape()
        v = tape.var(x)
        loss = ad.reduce_sum(v * v)
        tape.backward(loss)
        return float(loss.value), v.grad
    rep = ad.grad_check(run, np.array([1.0]), step=1e-4, tolerance=1e-7)
    assert rep.passed
    _, g = run(np.array([1.0]))
    assert abs(g[0] - 2.0) < 1e-10


def test_elementwise_ops_against_oracle():
    rng = np.random.default_rng(1)
    x0 = rng.uniform(0.2, 1.5, size=(3, 4))

    def composite(xv):
        return float(np.sum(np.exp(-xv) * np.sin(xv) + np.sqrt(xv) / (1 + xv ** 2)))

    tape = ad.GradTape()
    v = tape.var(x0)
    loss = ad.reduce_sum(ad.exp(-v) * ad.sin(v) + ad.safe_sqrt(v) / (1 + v ** 2))
    tape.backward(loss)
    assert np.allclose(loss.value, composite(x0))
    assert np.allclose(v.grad, _fd_grad(composite, x0), atol=1e-7)


def test_broadcasting_unbroadcast():
    rng = np.random.default_rng(2)
    a0 = rng.normal(size=(3, 1))
    b0 = rng.normal(size=(1, 4))
    tape = ad.GradTape()
    a = tape.var(a0)
    b = tape.var(b0)
    loss = ad.reduce_sum((a + b) * (a * b))
    tape.backward(loss)
    assert a.grad.shape == (3, 1)
    assert b.grad.shape == (1, 4)
    fa = _fd_grad(lambda x: float(np.sum((x + b0) * (x * b0))), a0)
    assert np.allclose(a.grad, fa, atol=1e-7)


def test_matmul_batched():
    rng = np.random.default_rng(3)
    a0 = rng.normal(size=(5, 2, 3))
    b0 = rng.normal(size=(3, 2))
    tape = ad.GradTape()
    a = tape.var(a0)
    b = tape.var(b0)
    loss = ad.reduce_sum(ad.matmul(a, b) ** 2)
    tape.backward(loss)
    fb = _fd_grad(lambda x: float(np.sum((a0 @ x) ** 2)), b0)
    assert np.allclose(b.grad, fb, atol=1e-6)


def test_reductions_and_norm():
    rng = np.random.default_rng(4)
    x0 = rng.normal(size=(6, 3))
    tape = ad.GradTape()
    v = tape.var(x0)
    loss = ad.reduce_sum(ad.norm(v, axis=1)) + ad.mean(v) + ad.reduce_max(v)
    tape.backward(loss)
    oracle = _fd_grad(
        lambda x: float(np.sum(np.linalg.norm(x, axis=1)) + np.mean(x) + np.max(x)), x0)
    assert np.allclose(v.grad, oracle, atol=1e-6)


def test_reduce_max_splits_ties():
    tape = ad.GradTape()
    v = tape.var(np.array([2.0, 2.0, 1.0]))
    loss = ad.reduce_max(v)
    tape.backward(loss)
    assert np.allclose(v.grad, [0.5, 0.5, 0.0])


def test_getitem_concatenate_stack():
    rng = np.random.default_rng(5)
    x0 = rng.normal(size=(4, 3))
    tape = ad.GradTape()
    v = tape.var(x0)
    parts = ad.concatenate([v[:2], v[2:]], axis=0)
    s = ad.stack([parts[:, 0], parts[:, 1]], axis=0)
    loss = ad.reduce_sum(s * s)
    tape.backward(loss)
    expect = 2 * x0
    expect[:, 2] = 0.0
    assert np.allclose(v.grad, expect)


def test_safe_sqrt_zero_subgradient():
    tape = ad.GradTape()
    v = tape.var(np.array([0.0, 4.0]))
    loss = ad.reduce_sum(ad.safe_sqrt(v))
    tape.backward(loss)
    assert v.grad[0] == 0.0
    assert abs(v.grad[1] - 0.25) < 1e-12


def test_relu_abs_subgradient_zero_at_kink():
    tape = ad.GradTape()
    v = tape.var(np.array([0.0]))
    loss = ad.reduce_sum(ad.relu(v) + ad.absolute(v))
    tape.backward(loss)
    assert v.grad[0] == 0.0


def test_detach_blocks_gradient():
    tape = ad.GradTape()
    v = tape.var(np.array([3.0]))
    loss = ad.reduce_sum(v * v.detach())
    tape.backward(loss)
    # only the live factor contributes
    assert np.allclose(v.grad, [3.0])


def test_backward_releases_tape():
    tape = ad.GradTape()
    v = tape.var(np.ones(4))
    loss = ad.reduce_sum(v * v)
    tape.backward(loss)
    assert tape._nodes == []
    assert np.allclose(v.grad, 2 * np.ones(4))


def test_backward_wrong_tape_raises():
    t1, t2 = ad.GradTape(), ad.GradTape()
    v = t1.var(np.ones(2))
    loss = ad.reduce_sum(v)
    with pytest.raises(ValueError):
        t2.backward(loss)


def test_plain_ndarrays_pass_through():
    x = np.array([1.0, 2.0])
    assert isinstance(ad.relu(x), np.ndarray)
    assert isinstance(ad.reduce_sum(x * x), float) or np.isscalar(ad.reduce_sum(x * x)) \
        or isinstance(ad.reduce_sum(x * x), np.floating)


def test_grad_check_reports_bad_gradient():
    def broken(x):
        return float(np.sum(x ** 2)), 3.0 * x  # wrong gradient on purpose
    rep = ad.grad_check(broken, np.array([1.0, 2.0]), step=1e-5, tolerance=1e-5)
    assert not rep.passed
    assert rep.max_rel_err > 0.1
