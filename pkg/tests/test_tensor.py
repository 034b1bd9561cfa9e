"""Tensor engine: forward values, backward gradients vs finite differences, SGD."""

import numpy as np
import pytest

import robustprune.tensor as T
from robustprune.optim import CosineSchedule, SgdState, sgd_step
from robustprune.tensor import Tensor, backward, forward_op

from helpers import finite_difference, grad_close, rel_err


def test_relu_definition():
    out = forward_op("relu", Tensor([-1.0, 0.0, 2.0]))
    assert np.array_equal(out.values, [0.0, 0.0, 2.0])


def test_add_identity():
    x = Tensor([[1.5, -2.0], [0.25, 3.0]])
    out = forward_op("add", x, Tensor(np.zeros((2, 2))))
    assert np.array_equal(out.values, x.values)


def test_conv2d_hand_sum():
    # 3x3 ones kernel over a 3x3 ones input, no padding: single output of 9
    x = Tensor(np.ones((1, 1, 3, 3)))
    w = Tensor(np.ones((1, 1, 3, 3)))
    out = forward_op("conv2d", x, w)
    assert out.shape == (1, 1, 1, 1)
    assert out.values.item() == 9.0


def test_shape_mismatch_names_op():
    with pytest.raises(T.ShapeError, match="matmul"):
        forward_op("matmul", Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
    with pytest.raises(T.ShapeError, match="conv2d"):
        forward_op("conv2d", Tensor(np.ones((1, 2, 4, 4))), Tensor(np.ones((3, 1, 3, 3))))


def test_backward_square_sum():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with T.scoped_tape():
        loss = T.tensor_sum(T.mul(x, x))
        backward(loss)
    assert np.array_equal(x.grad, [2.0, 4.0])


def test_backward_constant_gives_zero_grads():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with T.scoped_tape():
        loss = T.mul(T.tensor_sum(x), Tensor(0.0))
        backward(loss)
    assert np.array_equal(x.grad, [0.0, 0.0])


def test_backward_rejects_nonscalar():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with T.scoped_tape():
        y = T.mul(x, x)
        with pytest.raises(T.ShapeError):
            backward(y)


def test_backward_linearity():
    rng = np.random.default_rng(3)
    vals = rng.normal(size=4)

    def run(parts):
        x = Tensor(vals, requires_grad=True)
        with T.scoped_tape():
            terms = []
            if "square" in parts:
                terms.append(T.tensor_sum(T.mul(x, x)))
            if "sig" in parts:
                terms.append(T.tensor_sum(T.sigmoid(x)))
            loss = terms[0] if len(terms) == 1 else T.add(terms[0], terms[1])
            backward(loss)
        return x.grad

    combined = run({"square", "sig"})
    assert np.allclose(combined, run({"square"}) + run({"sig"}), atol=1e-12)


@pytest.mark.parametrize("seed", range(4))
def test_mlp_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    w1 = rng.uniform(-2, 2, size=(6, 5))
    w2 = rng.uniform(-2, 2, size=(5, 3))
    x = rng.uniform(-2, 2, size=(7, 6))
    y = rng.integers(0, 3, size=7)

    def loss_fn(w1v, w2v):
        h = np.maximum(x @ w1v, 0.0)
        z = h @ w2v
        zs = z - z.max(axis=1, keepdims=True)
        logp = zs - np.log(np.exp(zs).sum(axis=1, keepdims=True))
        return -logp[np.arange(7), y].mean()

    t1, t2 = Tensor(w1, requires_grad=True), Tensor(w2, requires_grad=True)
    with T.scoped_tape():
        h = T.relu(T.matmul(Tensor(x), t1))
        loss = T.softmax_cross_entropy(T.matmul(h, t2), y)
        backward(loss)
    fd1 = finite_difference(lambda w: loss_fn(w, w2), w1.copy())
    fd2 = finite_difference(lambda w: loss_fn(w1, w), w2.copy())
    assert grad_close(t1.grad, fd1)
    assert grad_close(t2.grad, fd2)


@pytest.mark.parametrize("op,builder", [
    ("sigmoid", lambda x: T.tensor_sum(T.sigmoid(x))),
    ("relu", lambda x: T.tensor_sum(T.mul(T.relu(x), x))),
    ("mean", lambda x: T.tensor_mean(T.mul(x, x))),
    ("clamp", lambda x: T.tensor_sum(T.mul(T.clamp(x, -1.0, 1.0), x))),
])
def test_elementwise_gradients_match_fd(op, builder):
    rng = np.random.default_rng(hash(op) % 2**32)
    vals = rng.uniform(-2, 2, size=12)
    # keep clamp/relu away from their kinks, where FD is one-sided
    vals = vals[np.minimum(np.abs(vals - 1), np.minimum(np.abs(vals + 1), np.abs(vals))) > 1e-3]
    x = Tensor(vals, requires_grad=True)
    with T.scoped_tape():
        backward(builder(x))

    def scalar(v):
        t = Tensor(v)
        with T.scoped_tape(), T.no_grad():
            return builder(t).item()

    fd = finite_difference(scalar, vals.copy())
    assert rel_err(x.grad, fd) < 1e-5


def test_conv_and_pool_gradients_match_fd():
    rng = np.random.default_rng(11)
    x = rng.uniform(-2, 2, size=(2, 2, 6, 6))
    w = rng.uniform(-2, 2, size=(2, 3, 3, 3))

    def run(xv, wv, record=True):
        xt = Tensor(xv, requires_grad=True)
        wt = Tensor(wv, requires_grad=True)
        with T.scoped_tape():
            h = T.max_pool2d(T.relu(T.conv2d(xt, wt, padding=1)))
            loss = T.tensor_sum(T.mul(h, h))
            if record:
                backward(loss)
        return loss.item(), xt.grad, wt.grad

    _, gx, gw = run(x, w)
    fd_x = finite_difference(lambda v: run(v, w, record=False)[0], x.copy())
    fd_w = finite_difference(lambda v: run(x, v, record=False)[0], w.copy())
    assert grad_close(gx, fd_x)
    assert grad_close(gw, fd_w)


def test_kl_gradients_match_fd():
    rng = np.random.default_rng(5)
    p = rng.uniform(-2, 2, size=(4, 3))
    q = rng.uniform(-2, 2, size=(4, 3))

    def kl(pv, qv):
        def logsoft(z):
            zs = z - z.max(axis=1, keepdims=True)
            return zs - np.log(np.exp(zs).sum(axis=1, keepdims=True))
        lp, lq = logsoft(pv), logsoft(qv)
        return (np.exp(lp) * (lp - lq)).sum(axis=1).mean()

    pt, qt = Tensor(p, requires_grad=True), Tensor(q, requires_grad=True)
    with T.scoped_tape():
        backward(T.kl_divergence(pt, qt))
    assert grad_close(pt.grad, finite_difference(lambda v: kl(v, q), p.copy()))
    assert grad_close(qt.grad, finite_difference(lambda v: kl(p, v), q.copy()))
    assert T.kl_divergence(Tensor(p), Tensor(q)).item() >= 0.0


def test_forward_determinism():
    def build():
        rng = np.random.default_rng(42)
        x = Tensor(rng.uniform(-2, 2, size=(3, 2, 4, 4)), requires_grad=True)
        w = Tensor(rng.uniform(-2, 2, size=(2, 2, 3, 3)), requires_grad=True)
        with T.scoped_tape():
            loss = T.tensor_mean(T.conv2d(x, w, padding=1))
            backward(loss)
        return loss.item(), x.grad.copy(), w.grad.copy()

    l1, gx1, gw1 = build()
    l2, gx2, gw2 = build()
    assert l1 == l2
    assert np.array_equal(gx1, gx2) and np.array_equal(gw1, gw2)


def test_unknown_op_rejected():
    with pytest.raises(ValueError, match="unknown op"):
        forward_op("transpose", Tensor([1.0]))


# --- SGD ---


def test_sgd_plain_step():
    p = Tensor(np.array([1.0]), requires_grad=True)
    p.grad = np.array([1.0])
    sgd_step(SgdState(learning_rate=0.1), [p])
    assert p.values[0] == pytest.approx(0.9)
    assert p.grad is None


def test_sgd_zero_grad_no_motion():
    p = Tensor(np.array([2.5]), requires_grad=True)
    p.grad = np.array([0.0])
    sgd_step(SgdState(learning_rate=0.1, momentum=0.9), [p])
    assert p.values[0] == 2.5


def test_sgd_missing_grad_raises():
    p = Tensor(np.array([1.0]), requires_grad=True)
    with pytest.raises(ValueError, match="no gradient"):
        sgd_step(SgdState(learning_rate=0.1), [p])


def test_sgd_momentum_accumulates():
    p = Tensor(np.array([0.0]), requires_grad=True)
    state = SgdState(learning_rate=1.0, momentum=0.5)
    p.grad = np.array([1.0])
    sgd_step(state, [p])  # v=1, p=-1
    p.grad = np.array([1.0])
    sgd_step(state, [p])  # v=1.5, p=-2.5
    assert p.values[0] == pytest.approx(-2.5)


def test_decoupled_weight_decay():
    p = Tensor(np.array([2.0]), requires_grad=True)
    p.grad = np.array([0.0])
    sgd_step(SgdState(learning_rate=0.1, weight_decay=0.5), [p])
    # decay shrinks by lr*wd even with zero gradient
    assert p.values[0] == pytest.approx(2.0 * (1 - 0.1 * 0.5))


def test_cosine_schedule_midpoint_and_monotone():
    sched = CosineSchedule(base=0.4, total_epochs=10)
    assert sched.rate(0) == pytest.approx(0.4)
    assert sched.rate(5) == pytest.approx(0.2)
    assert sched.rate(10) == pytest.approx(0.0)
    rates = [sched.rate(e) for e in range(11)]
    assert all(a >= b for a, b in zip(rates, rates[1:]))
