import threading

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ranklsd import tensor as T
from ranklsd.tensor import Tensor


@pytest.fixture(autouse=True)
def fresh_tape():
    with T.new_tape() as tape:
        yield tape


def leaf(a):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=True)


def test_sigmoid_at_zero():
    assert T.sigmoid(Tensor(0.0)).item() == 0.5


def test_sigmoid_grad_at_zero(fresh_tape):
    x = leaf(0.0)
    fresh_tape.backward(T.sigmoid(x))
    assert x.grad == pytest.approx(0.25, abs=1e-15)


def test_sum_grad_is_ones(fresh_tape):
    x = leaf([1.0, -2.0, 3.5])
    fresh_tape.backward(T.sum_(x))
    np.testing.assert_array_equal(x.grad, np.ones(3))


def test_bilinear_integer_point_returns_stored_value():
    m = Tensor(np.arange(12.0).reshape(3, 4))
    v = T.bilinear_sample(m, Tensor([[2.0, 1.0]]))  # x=2, y=1
    assert v.data.reshape(-1)[0] == 6.0


def test_bilinear_midpoint_of_four_cells():
    m = Tensor(np.array([[0.0, 1.0], [0.0, 1.0]]))
    v = T.bilinear_sample(m, Tensor([[0.5, 0.5]]))
    assert v.data.reshape(-1)[0] == pytest.approx(0.5, abs=1e-15)


def test_bilinear_clamps_outside_points():
    m = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]))
    v = T.bilinear_sample(m, Tensor([[-5.0, -5.0], [9.0, 9.0], [9.0, -1.0]]))
    np.testing.assert_array_equal(v.data.reshape(-1), [1.0, 4.0, 2.0])


def test_bilinear_multichannel_shape():
    m = Tensor(np.random.default_rng(0).random((3, 5, 5)))
    v = T.bilinear_sample(m, Tensor(np.zeros((7, 2))))
    assert v.shape[0] == 7
    np.testing.assert_array_equal(v.data.reshape(7, 3)[0], m.data[:, 0, 0])


def test_second_backward_raises(fresh_tape):
    x = leaf([1.0, 2.0])
    loss = T.sum_(T.mul(x, x))
    fresh_tape.backward(loss)
    with pytest.raises(T.TapeError):
        fresh_tape.backward(loss)


def test_non_scalar_backward_raises(fresh_tape):
    x = leaf([1.0, 2.0])
    with pytest.raises(T.TapeError):
        fresh_tape.backward(T.mul(x, 2.0))


def test_detached_loss_raises():
    with pytest.raises(T.TapeError):
        T.backward(Tensor(1.0))


def test_shape_error_names_op_and_shapes():
    with pytest.raises(T.ShapeError) as err:
        T.add(Tensor(np.zeros(3)), Tensor(np.zeros(4)))
    msg = str(err.value)
    assert "add" in msg and "(3,)" in msg and "(4,)" in msg


def test_matmul_shape_error():
    with pytest.raises(T.ShapeError):
        T.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))


def test_non_finite_input_raises():
    with pytest.raises(T.NonFiniteError):
        T.relu(Tensor([1.0, np.nan]))
    with pytest.raises(T.NonFiniteError):
        T.sigmoid(Tensor([np.inf]))


def test_unused_leaf_gets_zero_grad(fresh_tape):
    x, y = leaf([1.0, 2.0]), leaf([3.0])
    z = T.mul(y, 2.0)
    fresh_tape.backward(T.sum_(T.mul(x, x)))
    np.testing.assert_array_equal(x.grad, [2.0, 4.0])
    assert z.requires_grad  # recorded, but unreachable from the loss
    assert y.grad is not None and np.all(y.grad == 0)


def test_gradient_accumulates_over_reuse(fresh_tape):
    x = leaf([2.0])
    loss = T.sum_(T.add(T.mul(x, x), T.mul(x, 3.0)))
    fresh_tape.backward(loss)
    assert x.grad[0] == 7.0


def test_no_grad_records_nothing(fresh_tape):
    x = leaf([1.0])
    with T.no_grad():
        y = T.mul(x, 2.0)
    assert len(fresh_tape) == 0 and not y.requires_grad


def test_reset_clears_records(fresh_tape):
    x = leaf([1.0])
    fresh_tape.backward(T.sum_(T.mul(x, x)))
    fresh_tape.reset()
    assert len(fresh_tape) == 0
    fresh_tape.backward(T.sum_(T.mul(x, x)))  # usable again


def test_tape_is_thread_local():
    seen = []

    def work():
        seen.append(T.get_tape())

    t = threading.Thread(target=work)
    t.start()
    t.join()
    assert seen[0] is not T.get_tape()


def test_backward_visits_in_reverse_order(fresh_tape):
    order = []
    x = leaf([1.0])
    a = T.mul(x, 2.0)
    b = T.add(a, 1.0)
    c = T.sum_(b)
    for rec in fresh_tape.records:
        fn = rec.backward
        rec.backward = (lambda f, op: (lambda g: (order.append(op), f(g))[1]))(fn, rec.op)
    fresh_tape.backward(c)
    assert order == [r.op for r in reversed(fresh_tape.records)]


def test_softmax_rows_sum_to_one():
    x = Tensor(np.random.default_rng(1).normal(size=(4, 6)) * 30)
    np.testing.assert_allclose(T.softmax(x, axis=-1).data.sum(-1), 1.0, atol=1e-12)


def test_layer_norm_statistics():
    x = Tensor(np.random.default_rng(2).normal(3.0, 2.0, size=(5, 8)))
    y = T.layer_norm(x, Tensor(np.ones(8)), Tensor(np.zeros(8))).data
    np.testing.assert_allclose(y.mean(-1), 0.0, atol=1e-12)
    np.testing.assert_allclose(y.var(-1), 1.0, atol=1e-4)


def test_norms():
    d = Tensor(np.array([[3.0, 0.0], [0.0, -4.0]]))
    assert T.l1_norm(d).item() == 7.0
    assert T.l2_norm(d).item() == 5.0


def test_conv2d_matches_direct_loop():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(2, 3, 6, 6))
    w = rng.normal(size=(4, 3, 3, 3))
    b = rng.normal(size=4)
    y = T.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=2, padding=1).data
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    ref = np.zeros((2, 4, 3, 3))
    for n in range(2):
        for o in range(4):
            for i in range(3):
                for j in range(3):
                    ref[n, o, i, j] = np.sum(xp[n, :, 2 * i : 2 * i + 3, 2 * j : 2 * j + 3] * w[o]) + b[o]
    np.testing.assert_allclose(y.reshape(ref.shape), ref, atol=1e-12)


def test_rot90_round_trip_is_exact():
    x = Tensor(np.random.default_rng(4).random((2, 5, 5)))
    back = T.rot90(T.rot90(x, 1), -1)
    assert np.array_equal(back.data, x.data)


def test_serialization_round_trip():
    x = Tensor(np.random.default_rng(5).normal(size=(2, 3, 4)))
    buf = T.to_bytes(x)
    assert buf[:4] == b"RLT1"
    y, end = T.from_bytes(buf)
    assert end == len(buf)
    assert np.array_equal(x.data, y.data) and y.shape == x.shape


def test_serialization_rejects_bad_magic():
    with pytest.raises(T.TensorError):
        T.from_bytes(b"XXXX" + b"\0" * 12)


def test_ops_are_bitwise_deterministic():
    rng = np.random.default_rng(6)
    x, w = rng.normal(size=(1, 2, 8, 8)), rng.normal(size=(3, 2, 3, 3))
    a = T.conv2d(Tensor(x), Tensor(w), padding=1).data
    b = T.conv2d(Tensor(x), Tensor(w), padding=1).data
    assert a.tobytes() == b.tobytes()


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-20, 20), min_size=1, max_size=8))
def test_sigmoid_range_and_symmetry(vals):
    x = np.array(vals)
    s = T.sigmoid(Tensor(x)).data
    assert np.all((s >= 0) & (s <= 1))
    np.testing.assert_allclose(s + T.sigmoid(Tensor(-x)).data, 1.0, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.floats(0, 3), st.floats(0, 3))
def test_bilinear_is_convex_combination(px, py):
    m = np.random.default_rng(7).random((4, 4))
    v = T.bilinear_sample(Tensor(m), Tensor([[px, py]])).data.reshape(-1)[0]
    assert m.min() - 1e-12 <= v <= m.max() + 1e-12
