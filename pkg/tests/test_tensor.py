import threading

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hnmt import tensor as T
from hnmt.errors import ContractError, DimensionError
from hnmt.tensor import Parameter, Tape, grad_check


def grads_of(fn, *params):
    for p in params:
        p.zero_grad()
    with Tape() as tape:
        loss = fn()
    tape.backward(loss)
    return [p.grad for p in params]


def test_float32_default_and_finite_forward():
    x = T.Tensor([[1, 2], [3, 4]])
    assert x.data.dtype == np.float32
    y = T.tanh(T.matmul(x, T.Tensor(np.eye(2))))
    assert np.isfinite(y.data).all()


def test_matmul_shape_error():
    with pytest.raises(DimensionError):
        T.matmul(T.Tensor(np.ones((2, 3))), T.Tensor(np.ones((2, 3))))


def test_elementwise_shape_error_and_dispatch():
    with pytest.raises(DimensionError):
        T.add(T.Tensor(np.ones(3)), T.Tensor(np.ones(4)))
    np.testing.assert_allclose(T.elementwise("mul", T.Tensor([2.0]), T.Tensor([3.0])).data, [6.0])
    np.testing.assert_allclose(T.elementwise("sigmoid", T.Tensor([0.0])).data, [0.5])
    with pytest.raises(ContractError):
        T.elementwise("pow", T.Tensor([1.0]), T.Tensor([1.0]))


def test_linear_loss_gradient():
    x = Parameter("x", 3.0)
    (g,) = grads_of(lambda: T.scale(x, 2.0), x)
    assert float(g) == 2.0


def test_grad_of_sum_softmax_is_zero():
    x = Parameter("x", np.array([0.3, -1.2, 2.0]))
    (g,) = grads_of(lambda: T.sum(T.softmax(x)), x)
    np.testing.assert_allclose(g, 0.0, atol=1e-7)


def test_backward_twice_is_contract_error():
    x = Parameter("x", np.array([1.0, 2.0]))
    with Tape() as tape:
        loss = T.sum(T.mul(x, x))
    tape.backward(loss)
    with pytest.raises(ContractError):
        tape.backward(loss)


def test_backward_non_scalar_is_contract_error():
    x = Parameter("x", np.array([1.0, 2.0]))
    with Tape() as tape:
        y = T.mul(x, x)
    with pytest.raises(ContractError):
        tape.backward(y)


def test_backward_without_tape_is_contract_error():
    x = Parameter("x", np.array([1.0]))
    with pytest.raises(ContractError):
        T.backward(T.sum(x))


def test_tape_is_single_use():
    tape = Tape()
    x = Parameter("x", np.array([1.0]))
    with tape:
        loss = T.sum(x)
    tape.backward(loss)
    with pytest.raises(ContractError):
        with tape:
            pass


def test_gradients_accumulate_until_zeroed():
    x = Parameter("x", np.array([1.0, -2.0]))
    for _ in range(2):
        with Tape() as tape:
            loss = T.sum(T.scale(x, 3.0))
        tape.backward(loss)
    np.testing.assert_allclose(x.grad, [6.0, 6.0])
    x.zero_grad()
    assert not x.grad.any()


def test_reused_node_gets_summed_gradient():
    x = Parameter("x", np.array([2.0]))

    def f():
        y = T.tanh(x)
        return T.sum(T.add(T.mul(y, y), y))

    (g,) = grads_of(f, x)
    y = np.tanh(2.0)
    np.testing.assert_allclose(g, (2 * y + 1) * (1 - y * y), rtol=1e-6)


def test_tapes_in_different_threads_are_independent():
    results = {}

    def work(k):
        p = Parameter(f"p{k}", np.full(3, float(k + 1)))
        with Tape() as tape:
            loss = T.sum(T.mul(p, p))
        tape.backward(loss)
        results[k] = p.grad.copy()

    threads = [threading.Thread(target=work, args=(k,)) for k in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    for k in range(4):
        np.testing.assert_allclose(results[k], 2.0 * (k + 1))


# -- layer norm --------------------------------------------------------------


def test_layer_norm_constant_vector_maps_to_bias():
    out = T.layer_norm(T.Tensor(np.full(6, 4.2)), T.Tensor(np.ones(6)), T.Tensor(np.arange(6.0)))
    np.testing.assert_allclose(out.data, np.arange(6.0), atol=1e-6)


def test_layer_norm_standardised_input_is_fixed_point():
    v = np.array([1.0, -1.0, 1.0, -1.0])
    out = T.layer_norm(T.Tensor(v), T.Tensor(np.ones(4)), T.Tensor(np.zeros(4)))
    np.testing.assert_allclose(out.data, v, atol=1e-5)


def test_layer_norm_matches_direct_formula():
    rng = np.random.default_rng(3)
    x = rng.normal(size=8)
    g, b = rng.normal(size=8), rng.normal(size=8)
    ref = (x - x.mean()) / np.sqrt(x.var() + 1e-5) * g + b
    out = T.layer_norm(T.Tensor(x), T.Tensor(g), T.Tensor(b))
    np.testing.assert_allclose(out.data, ref, atol=1e-5)


def test_layer_norm_rejects_bad_epsilon():
    with pytest.raises(ContractError):
        T.layer_norm(T.Tensor(np.ones(3)), T.Tensor(np.ones(3)), T.Tensor(np.zeros(3)), epsilon=0)


# -- grad_check --------------------------------------------------------------


def test_grad_check_square():
    x = Parameter("x", 3.0)
    report = grad_check(lambda: T.mul(x, x), [x])
    assert report.max_rel_error <= 1e-4
    assert x.data.dtype == np.float32  # restored


def test_grad_check_detects_nondeterminism():
    rng = np.random.default_rng(0)
    x = Parameter("x", np.array([1.0]))
    with pytest.raises(ContractError):
        grad_check(lambda: T.sum(T.scale(x, rng.random())), [x])


def test_grad_check_flags_a_wrong_gradient():
    x = Parameter("x", np.array([0.5, 1.5]))

    def bad_square(a):
        y = a.data * a.data
        return T._result(y, (a,), lambda g: (g * a.data,))  # missing factor 2

    report = grad_check(lambda: T.sum(bad_square(x)), [x])
    assert not report.ok(1e-3)
    assert report.worst == "x"


OPS = {
    "tanh": lambda a, b: T.tanh(a),
    "sigmoid": lambda a, b: T.sigmoid(a),
    "exp": lambda a, b: T.exp(T.scale(a, 0.3)),
    "mul": lambda a, b: T.mul(a, b),
    "sub": lambda a, b: T.sub(a, b),
    "softmax": lambda a, b: T.mul(T.softmax(a), b),
    "masked_softmax": lambda a, b: T.mul(T.softmax(a, mask=np.array([[1, 1, 0], [1, 0, 1]], bool)), b),
    "log_softmax": lambda a, b: T.mul(T.log_softmax(a), b),
    "concat": lambda a, b: T.concat([a, b], axis=0),
    "narrow": lambda a, b: T.narrow(a, 1, 3),
    "stack": lambda a, b: T.stack([a, b], axis=1),
    "where": lambda a, b: T.where(np.array([[True], [False]]), a, b),
    "layer_norm": lambda a, b: T.layer_norm(a, T.index(b, 0), T.index(b, 1)),
    "log": lambda a, b: T.log(T.add(T.mul(a, a), 1.0)),
}


@pytest.mark.parametrize("name", sorted(OPS))
def test_op_gradients_match_finite_differences(name):
    rng = np.random.default_rng(hash(name) % 1000)
    a = Parameter("a", rng.normal(size=(2, 3)))
    b = Parameter("b", rng.normal(size=(2, 3)))
    w = rng.normal(size=OPS[name](T.Tensor(a.data), T.Tensor(b.data)).shape)
    report = grad_check(lambda: T.sum(T.mul(OPS[name](a, b), T.Tensor(w))), [a, b])
    assert report.ok(1e-3), report


def test_matmul_take_and_attention_primitives_gradients():
    rng = np.random.default_rng(11)
    A = Parameter("A", rng.normal(size=(2, 3, 4)))
    B = Parameter("B", rng.normal(size=(4, 5)))
    E = Parameter("E", rng.normal(size=(6, 4)))
    q = Parameter("q", rng.normal(size=(2, 4)))
    w = Parameter("w", rng.normal(size=(2, 3)))
    ids = np.array([[1, 5, 1], [0, 2, 2]])

    def f():
        p = T.expand_add(T.add(A, T.take(E, ids)), q)
        ctx = T.weighted_sum(T.softmax(w), p)
        y = T.matmul(T.tanh(ctx), B)
        return T.mean(T.bias_add(y, T.Tensor(np.arange(5.0))))

    assert grad_check(f, [A, B, E, q, w]).ok(1e-3)


def test_cross_entropy_value_and_gradient():
    rng = np.random.default_rng(5)
    L = Parameter("L", rng.normal(size=(4, 6)))
    t = np.array([0, 5, 2, 2])
    m = np.array([1.0, 1.0, 0.0, 1.0])
    loss = T.cross_entropy(T.Tensor(L.data), t, m)
    z = L.data - L.data.max(1, keepdims=True)
    lp = z - np.log(np.exp(z).sum(1, keepdims=True))
    ref = -(lp[[0, 1, 3], [0, 5, 2]]).mean()
    np.testing.assert_allclose(loss.item(), ref, rtol=1e-5)
    assert grad_check(lambda: T.cross_entropy(L, t, m), [L]).ok(1e-3)


def test_cross_entropy_rejects_all_zero_weights():
    with pytest.raises(ContractError):
        T.cross_entropy(T.Tensor(np.zeros((2, 3))), [0, 1], [0, 0])


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 5)),
              elements=st.floats(-30, 30, allow_nan=False)))
def test_softmax_rows_sum_to_one_and_finite(x):
    y = T.softmax(T.Tensor(x)).data
    assert np.isfinite(y).all()
    np.testing.assert_allclose(y.sum(-1), 1.0, atol=1e-5)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_tanh_mlp_gradient_property(seed):
    rng = np.random.default_rng(seed)
    W = Parameter("W", rng.normal(size=(3, 2)))
    x = T.Tensor(rng.normal(size=(4, 3)))
    assert grad_check(lambda: T.sum(T.tanh(T.matmul(x, W))), [W]).ok(1e-3)
