import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ginar import autodiff as ad
from ginar.autodiff import Tensor


def p(arr, name=None):
    return Tensor(np.asarray(arr, dtype=np.float64), requires_grad=True, name=name)


finite = st.floats(-5, 5, allow_nan=False, allow_infinity=False)


# ---------------------------------------------------------------- forward values


def test_matmul_identity():
    out = ad.matmul(Tensor(np.eye(2)), Tensor([[3.0], [4.0]]))
    np.testing.assert_array_equal(out.data, [[3.0], [4.0]])


def test_hadamard():
    np.testing.assert_array_equal((Tensor([1.0, 2.0, 3.0]) * Tensor([0.0, 1.0, 2.0])).data, [0.0, 2.0, 6.0])


def test_concat_shapes_and_split_gradient():
    rng = np.random.default_rng(0)
    a, b = p(rng.normal(size=(4, 2)), "a"), p(rng.normal(size=(4, 3)), "b")
    w = Tensor(rng.normal(size=(4, 5)))
    out = ad.concat([a, b], axis=-1)
    assert out.shape == (4, 5)
    ad.backward(ad.sum(out * w))
    np.testing.assert_array_equal(a.grad, w.data[:, :2])
    np.testing.assert_array_equal(b.grad, w.data[:, 2:])
    rep = ad.grad_check(lambda: ad.sum(ad.square(ad.concat([a, b], axis=-1)) * w), [a, b])
    assert rep.passed, rep


def test_relu_values():
    np.testing.assert_array_equal(ad.relu(Tensor([-1.0, 0.0, 2.0])).data, [0.0, 0.0, 2.0])


def test_elu_continuous_at_origin():
    x = p([0.0])
    y = ad.elu(x)
    assert y.data[0] == 0.0
    ad.backward(ad.sum(y))
    assert x.grad[0] == pytest.approx(1.0)
    # right-hand slope
    h = 1e-7
    assert (ad.elu(Tensor([h])).data[0] - 0.0) / h == pytest.approx(1.0, rel=1e-6)


def test_gelu_tanh_value():
    x = 1.0
    expected = 0.5 * x * (1 + math.tanh(math.sqrt(2 / math.pi) * (x + 0.044715 * x**3)))
    got = ad.gelu(Tensor([x])).data[0]
    assert got == pytest.approx(expected, abs=1e-12)
    assert got == pytest.approx(0.8412, abs=1e-4)


def test_leaky_relu_slope():
    np.testing.assert_allclose(ad.leaky_relu(Tensor([-2.0, 3.0])).data, [-0.02, 3.0])


def test_softmax_values():
    np.testing.assert_allclose(ad.softmax(Tensor([0.0, 0.0])).data, [0.5, 0.5])
    mp = [mpmath.exp(v) for v in (1, 2, 3)]
    z = sum(mp)
    oracle = [float(v / z) for v in mp]
    got = ad.softmax(Tensor([1.0, 2.0, 3.0])).data
    np.testing.assert_allclose(got, oracle, atol=1e-15)
    np.testing.assert_allclose(got, [0.0900, 0.2447, 0.6652], atol=5e-5)


def test_layer_norm_examples():
    np.testing.assert_array_equal(ad.layer_norm(Tensor([1.0, 1.0, 1.0]), p([1.0] * 3), p([0.0] * 3)).data, [0, 0, 0])
    np.testing.assert_allclose(ad.layer_norm(Tensor([-1.0, 1.0]), p([1.0, 1.0]), p([0.0, 0.0]), eps=0.0).data, [-1, 1])
    np.testing.assert_allclose(ad.layer_norm(Tensor([-1.0, 1.0]), p([1.0, 1.0]), p([0.0, 0.0])).data, [-1, 1], atol=1e-5)


def test_layer_norm_zero_extent():
    with pytest.raises(ad.ShapeError):
        ad.layer_norm(Tensor(np.zeros((3, 0))))


def test_shape_error_names_op_and_shapes():
    with pytest.raises(ad.ShapeError, match=r"matmul.*\(2, 3\).*\(2, 3\)"):
        ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
    with pytest.raises(ad.ShapeError, match="hadamard"):
        Tensor(np.ones(3)) * Tensor(np.ones(4))
    with pytest.raises(ad.ShapeError, match="concat"):
        ad.concat([Tensor(np.ones((2, 2))), Tensor(np.ones((3, 2)))], axis=-1)


def test_non_finite_is_an_error():
    with pytest.raises(ad.NonFiniteError):
        ad.log(Tensor([-1.0]))
    with pytest.raises(ad.NonFiniteError):
        ad.exp(Tensor([1000.0]))


# ---------------------------------------------------------------- backward contract


def test_backward_linear_grad_is_broadcast_input():
    x = np.array([1.0, -2.0, 0.5])
    W = p(np.ones((2, 3)))
    ad.backward(ad.sum(W @ Tensor(x[:, None])))
    np.testing.assert_array_equal(W.grad, np.broadcast_to(x, (2, 3)))


def test_backward_requires_scalar():
    with pytest.raises(ad.ShapeError):
        ad.backward(p([1.0, 2.0]) * 2.0)


def test_backward_accumulates_until_zero_grad():
    w = p([2.0])
    loss = ad.sum(w * w)
    ad.backward(loss)
    ad.backward(loss)
    assert w.grad[0] == pytest.approx(8.0)
    ad.zero_grad([w])
    ad.backward(loss)
    assert w.grad[0] == pytest.approx(4.0)


def test_unreachable_params_get_zero_grad():
    a, b = p([1.0, 2.0]), p([[3.0]])
    ad.backward(ad.sum(a), [a, b])
    np.testing.assert_array_equal(b.grad, [[0.0]])


def test_tape_visits_each_node_once():
    x = p([1.0, 2.0])
    y = x * x
    z = ad.sum(y + y * x)
    tape = ad.Tape.from_output(z)
    ids = [n.node_id for n in tape.nodes]
    assert len(ids) == len(set(ids))
    pos = {n.node_id: i for i, n in enumerate(tape.nodes)}
    for n in tape.nodes:
        for par in n._parents:
            if par.requires_grad:
                assert pos[par.node_id] < pos[n.node_id]


def test_no_grad_records_nothing():
    x = p([1.0])
    with ad.no_grad():
        y = x * 2.0
    assert not y.requires_grad and y.is_leaf


def test_dropout_eval_is_identity():
    x = Tensor(np.ones((3, 4)))
    assert ad.dropout(x, 0.5, None, training=False) is x
    y = ad.dropout(x, 0.5, np.random.default_rng(0))
    assert set(np.unique(y.data)) <= {0.0, 2.0}


def test_replay_determinism():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(4, 5))

    def run():
        t = Tensor(x)
        return ad.layer_norm(ad.gelu(t @ Tensor(x.T)), None, None).data

    assert np.array_equal(run(), run())


# ---------------------------------------------------------------- grad_check


def test_grad_check_square():
    x = p([3.0], "x")
    x.grad = None
    ad.backward(ad.sum(ad.square(x)))
    assert x.grad[0] == pytest.approx(6.0)
    rep = ad.grad_check(lambda: ad.sum(ad.square(x)), [x])
    assert rep.passed


def test_grad_check_softmax_cross_entropy():
    rng = np.random.default_rng(1)
    W = p(rng.normal(size=(3, 4)), "W")
    X = Tensor(rng.normal(size=(5, 3)))
    onehot = np.eye(4)[rng.integers(0, 4, size=5)]

    def f():
        return ad.scale(ad.sum(ad.log_softmax(X @ W, axis=-1) * onehot), -1.0 / 5)

    assert ad.grad_check(f, [W]).passed


def test_grad_check_reports_failures():
    x = p([1.0], "x")
    bad = Tensor([0.0])

    # a deliberately wrong backward: claims zero derivative
    def f():
        out = ad._make(x.data * 3.0, (x,), lambda g: (g * 0.0,), "bogus")
        return ad.sum(out + bad)

    rep = ad.grad_check(f, {"x": x})
    assert not rep.passed
    assert rep.max_rel_error["x"] == pytest.approx(3.0 / 3.0, rel=1e-6)


def _primitive_cases(rng):
    a = rng.normal(size=(3, 4))
    b = rng.normal(size=(3, 4))
    m = rng.normal(size=(4, 2))
    bm = rng.normal(size=(2, 3, 4))
    pos = rng.uniform(0.5, 2.0, size=(3, 4))
    # keep kinks away from zero so central differences are well-defined
    away = np.where(np.abs(a) < 0.05, 0.3, a)
    w = rng.normal(size=(3, 4))
    return {
        "add": (lambda A, B: A + B, [a, b[0]]),
        "sub": (lambda A, B: A - B, [a, b]),
        "hadamard": (lambda A, B: A * B, [a, b]),
        "div": (lambda A, B: A / B, [a, pos]),
        "matmul": (lambda A, B: A @ B, [a, m]),
        "batched_matmul": (lambda A, B: A @ B, [bm, m]),
        "concat": (lambda A, B: ad.concat([A, B], axis=0), [a, b]),
        "transpose": (lambda A: ad.transpose(A) @ Tensor(w), [a]),
        "scale": (lambda A: ad.scale(A, -1.7), [a]),
        "reshape": (lambda A: ad.reshape(A, (4, 3)), [a]),
        "take": (lambda A: ad.take(A, [2, 0, 2], axis=0), [a]),
        "getitem": (lambda A: A[..., 1:3], [a]),
        "sum_axis": (lambda A: ad.sum(A, axis=0), [a]),
        "mean": (lambda A: ad.mean(A, axis=-1, keepdims=True), [a]),
        "abs": (lambda A: ad.abs(A), [away]),
        "exp": (lambda A: ad.exp(A), [a]),
        "log": (lambda A: ad.log(A), [pos]),
        "relu": (lambda A: ad.relu(A), [away]),
        "leaky_relu": (lambda A: ad.leaky_relu(A), [away]),
        "elu": (lambda A: ad.elu(A), [away]),
        "gelu": (lambda A: ad.gelu(A), [a]),
        "sigmoid": (lambda A: ad.sigmoid(A), [a]),
        "tanh": (lambda A: ad.tanh(A), [a]),
        "softmax": (lambda A: ad.softmax(A, axis=-1), [a]),
        "softmax_axis0": (lambda A: ad.softmax(A, axis=0), [a]),
        "log_softmax": (lambda A: ad.log_softmax(A, axis=-1), [a]),
        "layer_norm": (lambda A, G, B: ad.layer_norm(A, G, B), [a, rng.normal(size=4), rng.normal(size=4)]),
        "layer_norm_grouped": (lambda A, G, B: ad.layer_norm(A, G, B), [bm, rng.normal(size=(3, 4)), rng.normal(size=(3, 4))]),
        "linear_scan": (lambda A, F, C: ad.linear_scan(A, F, C, axis=1), [bm, rng.uniform(-1, 1, (2, 3, 4)), rng.normal(size=(2, 4))]),
    }


PRIMS = sorted(_primitive_cases(np.random.default_rng(0)))


@pytest.mark.parametrize("name", PRIMS)
@pytest.mark.parametrize("seed", range(20))
def test_primitive_gradients(name, seed):
    rng = np.random.default_rng(1000 + seed)
    fn, arrays_ = _primitive_cases(rng)[name]
    ins = [p(a, f"in{i}") for i, a in enumerate(arrays_)]
    probe = Tensor(rng.normal(size=fn(*ins).shape))
    rep = ad.grad_check(lambda: ad.sum(fn(*ins) * probe), ins, eps=1e-5, tol=1e-4)
    assert rep.passed, f"{name}: {rep}"


# ---------------------------------------------------------------- properties


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 6)), elements=finite), finite)
def test_softmax_sums_to_one_and_is_shift_invariant(x, c):
    s = ad.softmax(Tensor(x), axis=-1).data
    assert np.all(s > 0) and np.all(s < 1 + 1e-12)
    np.testing.assert_allclose(s.sum(axis=-1), 1.0, atol=1e-6)
    np.testing.assert_allclose(ad.softmax(Tensor(x + c), axis=-1).data, s, atol=1e-6)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(2, 8)), elements=finite))
def test_layer_norm_moments(x):
    # well-separated slices: eps contributes at most eps / var to the variance error
    x = x[x.var(axis=-1) >= 0.1]
    if x.size == 0:
        return
    y = ad.layer_norm(Tensor(x), None, None).data
    assert np.all(np.abs(y.mean(axis=-1)) <= 1e-5)
    assert np.all(np.abs(y.var(axis=-1) - 1) <= 1e-4)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, 5, elements=finite))
def test_activation_dispatch(x):
    for kind, fn in (("ReLU", ad.relu), ("GeLU", ad.gelu), ("ELU", ad.elu), ("LeakyReLU", ad.leaky_relu)):
        np.testing.assert_array_equal(ad.activation(Tensor(x), kind).data, fn(Tensor(x)).data)


@pytest.mark.parametrize("seed", range(5))
def test_linear_scan_matches_loop(seed):
    rng = np.random.default_rng(seed)
    a, f, c0 = rng.normal(size=(5, 2, 3)), rng.uniform(-1, 1, (5, 2, 3)), rng.normal(size=(2, 3))
    c, want = c0, []
    for t in range(5):
        c = a[t] + f[t] * c
        want.append(c)
    np.testing.assert_allclose(ad.linear_scan(Tensor(a), Tensor(f), Tensor(c0)).data, np.stack(want), atol=1e-14)
    moved = ad.linear_scan(Tensor(np.moveaxis(a, 0, 1)), Tensor(np.moveaxis(f, 0, 1)), Tensor(c0), axis=1).data
    np.testing.assert_allclose(np.moveaxis(moved, 1, 0), np.stack(want), atol=1e-14)


def test_linear_scan_shape_errors():
    with pytest.raises(ad.ShapeError, match="linear_scan"):
        ad.linear_scan(Tensor(np.ones((3, 2))), Tensor(np.ones((3, 2))), Tensor(np.ones(3)))
    with pytest.raises(ad.ShapeError):
        ad.linear_scan(Tensor(np.ones((3, 2))), Tensor(np.ones((2, 3))), Tensor(np.ones(2)))
