import gc

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from conftest import grad_errors, leaf
from usm import tensor as T
from usm.tensor import (ActivationTracker, GraphError, NonFiniteError, ShapeError, Tensor,
                        backward, finite_diff_grad)

GRAD_TOL = 1e-6
POINTS = range(10)


# ---------------------------------------------------------------- forward examples

def test_silu_zero():
    assert T.silu(Tensor([0.0])).data[0] == 0.0


def test_layer_norm_constant_row():
    out = T.layer_norm(Tensor([1.0, 1.0, 1.0, 1.0]))
    assert np.array_equal(out.data, np.zeros(4))


def test_matmul_identity():
    a = np.arange(6.0).reshape(2, 3)
    eye = np.eye(3)
    assert np.array_equal(T.matmul(Tensor(a), Tensor(eye)).data, a)


def test_shape_errors_name_op_and_shapes():
    with pytest.raises(ShapeError, match=r"add.*\(2, 3\).*\(4,\)"):
        T.add(Tensor(np.zeros((2, 3))), Tensor(np.zeros(4)))
    with pytest.raises(ShapeError, match="matmul"):
        T.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))
    with pytest.raises(ShapeError, match="linear"):
        T.linear(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 2))))
    with pytest.raises(ShapeError, match="split"):
        T.split(Tensor(np.zeros((2, 5))), [2, 2])


def test_broadcast_leading_axes_only():
    out = T.mul(Tensor(np.ones((3, 4))), Tensor(np.arange(4.0)))
    assert out.shape == (3, 4)
    with pytest.raises(ShapeError):
        T.mul(Tensor(np.ones((3, 4))), Tensor(np.ones(3)))


def test_debug_mode_rejects_nonfinite():
    T.set_debug(True)
    try:
        with pytest.raises(NonFiniteError, match="log"), np.errstate(invalid="ignore"):
            T.log(Tensor([-1.0]))
    finally:
        T.set_debug(False)


# ---------------------------------------------------------------- convolutions

def test_conv_down_zero_kernel_gives_bias():
    b = np.array([0.5, -1.0, 2.0])
    out = T.conv_down(Tensor(np.random.default_rng(0).standard_normal((2, 2, 3))),
                      Tensor(np.zeros((2, 2, 3, 3))), Tensor(b))
    assert out.shape == (1, 1, 3)
    assert np.array_equal(out.data[0, 0], b)


def test_conv_down_patch_sum():
    x = np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(2, 2, 1)
    out = T.conv_down(Tensor(x), Tensor(np.ones((2, 2, 1, 1))), Tensor(np.zeros(1)))
    assert out.data.reshape(-1).tolist() == [10.0]


def test_conv_down_shapes_and_odd_error():
    out = T.conv_down(Tensor(np.zeros((16, 16, 2))), Tensor(np.zeros((2, 2, 2, 2))), Tensor(np.zeros(2)))
    assert out.shape == (8, 8, 2)
    assert out.shape[0] * out.shape[1] * 4 == 256
    with pytest.raises(ShapeError, match="even"):
        T.conv_down(Tensor(np.zeros((3, 4, 2))), Tensor(np.zeros((2, 2, 2, 2))), Tensor(np.zeros(2)))


def test_conv_up_places_input_at_even_positions():
    x = np.arange(1.0, 17.0).reshape(4, 4, 1)
    k = np.zeros((2, 2, 1, 1))
    k[0, 0] = 1.0
    out = T.conv_up(Tensor(x), Tensor(k), Tensor(np.zeros(1))).data[..., 0]
    assert out.shape == (8, 8)
    assert np.array_equal(out[::2, ::2], x[..., 0])
    mask = np.ones((8, 8), bool)
    mask[::2, ::2] = False
    assert np.all(out[mask] == 0.0)


def test_conv_up_zero_input_is_bias():
    b = np.array([1.0, 2.0])
    out = T.conv_up(Tensor(np.zeros((3, 2, 2))), Tensor(np.ones((2, 2, 2, 2))), Tensor(b))
    assert out.shape == (6, 4, 2)
    assert np.array_equal(out.data, np.broadcast_to(b, (6, 4, 2)))


def test_conv_round_trip_shape():
    x = Tensor(np.zeros((8, 4, 3)))
    k, b = Tensor(np.zeros((2, 2, 3, 3))), Tensor(np.zeros(3))
    assert T.conv_down(T.conv_up(x, k, b), k, b).shape == x.shape


# ---------------------------------------------------------------- backward contract

def test_backward_sum_is_ones(rng):
    x = leaf(rng, 3, 2, 4)
    g = backward(T.sum(x))
    assert np.array_equal(g[x], np.ones(x.shape))


def test_backward_square_sum():
    x = Tensor([1.0, 2.0], requires_grad=True)
    g = backward(T.sum(T.mul(x, x)))
    assert g[x].tolist() == [2.0, 4.0]


def test_backward_errors(rng):
    x = leaf(rng, 3)
    with pytest.raises(ShapeError, match="scalar"):
        backward(T.mul(x, 2.0))
    with pytest.raises(GraphError, match="not connected"):
        backward(T.sum(Tensor(np.ones(3))))
    loss = T.sum(T.exp(x))
    backward(loss)
    with pytest.raises(GraphError, match="consumed"):
        backward(loss)


def test_leaf_grads_accumulate(rng):
    x = leaf(rng, 4)
    backward(T.sum(x))
    backward(T.sum(T.scale(x, 3.0)))
    assert np.allclose(x.grad, 4.0)


def test_reverse_insertion_order():
    order = []
    x = Tensor([1.0], requires_grad=True)

    def tap(t, name):
        return T._result(t.data.copy(), (t,), lambda g: (order.append(name) or g,), name)

    a = tap(x, "first")
    b = tap(a, "second")
    c = tap(b, "third")
    backward(T.sum(c))
    assert order == ["third", "second", "first"]


def test_no_grad_records_nothing(rng):
    x = leaf(rng, 3)
    with T.no_grad():
        y = T.exp(x)
    assert y._node is None and not y.requires_grad


def test_finite_diff_examples():
    x = Tensor(np.random.default_rng(0).standard_normal((2, 3)))
    assert np.allclose(finite_diff_grad(lambda t: T.sum(t), x, 1e-6), 1.0, atol=1e-9)
    q = Tensor([3.0])
    g = finite_diff_grad(lambda t: T.sum(T.mul(t, t)), q, 1e-5)
    assert abs(g[0] - 6.0) < 1e-8
    with pytest.raises(ValueError):
        finite_diff_grad(lambda t: T.sum(t), q, 0.0)


def test_activation_tracker_counts_live_elements():
    with ActivationTracker() as tr:
        a = T.exp(Tensor(np.zeros(10)))
        b = T.exp(Tensor(np.zeros(5)))
        assert tr.live == 15
        del a, b
        gc.collect()
    assert tr.live == 0 and tr.peak == 15


def test_default_dtype_float32_path():
    T.set_default_dtype(np.float32)
    try:
        x = Tensor(np.ones(3), requires_grad=True)
        assert x.dtype == np.float32
        g = backward(T.sum(T.silu(x)))
        assert g[x].dtype == np.float32
    finally:
        T.set_default_dtype(np.float64)


# ---------------------------------------------------------------- gradient checks

UNARY = {
    "exp": T.exp,
    "neg": T.neg,
    "square": T.square,
    "sigmoid": T.sigmoid,
    "softplus": T.softplus,
    "silu": T.silu,
    "softmax": T.softmax,
    "layer_norm": T.layer_norm,
    "scale": lambda x: T.scale(x, -1.7),
    "sum_axis": lambda x: T.sum(x, axis=1),
    "mean_axis": lambda x: T.mean(x, axis=0, keepdims=True),
    "reshape": lambda x: T.reshape(x, (4, 3)),
    "transpose": lambda x: T.transpose(x, (1, 0)),
    "permute_rows": lambda x: T.permute_rows(x, [2, 0, 1], axis=0),
    "gather_rows": lambda x: T.permute_rows(x, [1, 1, 0, 2], axis=0),
}


@pytest.mark.parametrize("name", sorted(UNARY))
@pytest.mark.parametrize("point", POINTS)
def test_unary_grad(name, point):
    rng = np.random.default_rng(point)
    x = leaf(rng, 3, 4)
    w = rng.standard_normal(UNARY[name](Tensor(x.data)).shape)
    err = grad_errors(lambda ins: T.sum(T.mul(UNARY[name](ins[0]), w)), [x])
    assert err < GRAD_TOL


def test_log_grad():
    for point in POINTS:
        rng = np.random.default_rng(point)
        x = leaf(rng, 3, 4, positive=True)
        assert grad_errors(lambda ins: T.sum(T.log(ins[0])), [x]) < GRAD_TOL


BINARY = {
    "add": (T.add, (3, 4), (4,)),
    "sub": (T.sub, (2, 3, 4), (3, 4)),
    "mul": (T.mul, (3, 4), (3, 1)),
    "div": (T.div, (3, 4), (4,)),
    "matmul": (T.matmul, (2, 3, 4), (4, 5)),
    "concat": (lambda a, b: T.concat([a, b], axis=-1), (3, 2), (3, 4)),
}


@pytest.mark.parametrize("name", sorted(BINARY))
@pytest.mark.parametrize("point", POINTS)
def test_binary_grad(name, point):
    fn, sa, sb = BINARY[name]
    rng = np.random.default_rng(100 + point)
    a = leaf(rng, *sa)
    b = leaf(rng, *sb, positive=name == "div")
    w = rng.standard_normal(fn(Tensor(a.data), Tensor(b.data)).shape)
    assert grad_errors(lambda ins: T.sum(T.mul(fn(*ins), w)), [a, b]) < GRAD_TOL


@pytest.mark.parametrize("point", POINTS)
def test_linear_grad(point):
    rng = np.random.default_rng(200 + point)
    x, W, b = leaf(rng, 2, 3, 4), leaf(rng, 4, 5), leaf(rng, 5)
    w = rng.standard_normal((2, 3, 5))
    assert grad_errors(lambda ins: T.sum(T.mul(T.linear(*ins), w)), [x, W, b]) < GRAD_TOL


@pytest.mark.parametrize("point", POINTS)
def test_layer_norm_affine_grad(point):
    rng = np.random.default_rng(300 + point)
    x, g, b = leaf(rng, 3, 6), leaf(rng, 6), leaf(rng, 6)
    w = rng.standard_normal((3, 6))
    assert grad_errors(lambda ins: T.sum(T.mul(T.layer_norm(*ins), w)), [x, g, b]) < GRAD_TOL


@pytest.mark.parametrize("point", POINTS)
def test_split_grad(point):
    rng = np.random.default_rng(400 + point)
    x = leaf(rng, 3, 7)
    w1, w2 = rng.standard_normal((3, 3)), rng.standard_normal((3, 4))

    def f(ins):
        p, q = T.split(ins[0], [3, 4])
        return T.add(T.sum(T.mul(p, w1)), T.sum(T.mul(q, w2)))

    assert grad_errors(f, [x]) < GRAD_TOL


@pytest.mark.parametrize("op", ["conv_down", "conv_up"])
@pytest.mark.parametrize("point", POINTS)
def test_conv_grads(op, point):
    rng = np.random.default_rng(500 + point)
    fn = getattr(T, op)
    x, k, b = leaf(rng, 2, 4, 4, 3), leaf(rng, 2, 2, 3, 2), leaf(rng, 2)
    w = rng.standard_normal(fn(Tensor(x.data), Tensor(k.data), Tensor(b.data)).shape)
    assert grad_errors(lambda ins: T.sum(T.mul(fn(*ins), w)), [x, k, b]) < GRAD_TOL


# ---------------------------------------------------------------- properties

small = hnp.arrays(np.float64, hnp.array_shapes(min_dims=1, max_dims=3, max_side=5),
                   elements=st.floats(-10, 10))


@given(small)
def test_add_sub_roundtrip(a):
    x, y = Tensor(a), Tensor(a[::-1].copy() if a.ndim == 1 else a)
    assert np.allclose(T.sub(T.add(x, y), y).data, a, atol=1e-12)


@given(small)
def test_softmax_rows_sum_to_one(a):
    p = T.softmax(Tensor(a)).data
    assert np.all(p >= 0)
    assert np.allclose(p.sum(axis=-1), 1.0)


@given(small)
def test_sum_grad_is_ones_for_any_shape(a):
    x = Tensor(a, requires_grad=True)
    assert np.array_equal(backward(T.sum(x))[x], np.ones(a.shape))


@settings(max_examples=50)
@given(st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_permute_rows_inverse(n, seed):
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    x = rng.standard_normal((n, 3))
    y = T.permute_rows(T.permute_rows(Tensor(x), perm, axis=0), np.argsort(perm), axis=0)
    assert np.array_equal(y.data, x)


@given(small)
def test_determinism(a):
    x = Tensor(a)
    assert np.array_equal(T.silu(T.layer_norm(x)).data, T.silu(T.layer_norm(x)).data)
