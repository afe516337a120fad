import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tenext import autograd as ag
from tenext.gradcheck import check_fn

F64 = np.float64


def T(a, grad=True):
    return ag.Tensor(np.array(a, dtype=F64), requires_grad=grad)


# --- forward values ---------------------------------------------------------

def test_matmul_examples_and_shape_error(rng):
    B = rng.standard_normal((2, 4))
    np.testing.assert_array_equal(ag.matmul(np.eye(2), B).data, B)
    assert ag.matmul([[1.0, 2.0], [3.0, 4.0]], [[5.0], [6.0]]).data.tolist() == [[17.0], [39.0]]
    with pytest.raises(ValueError, match="shape mismatch"):
        ag.matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_layer_norm_examples(rng):
    one, zero = np.ones(4), np.zeros(4)
    np.testing.assert_array_equal(ag.layer_norm([[3.0, 3, 3, 3]], one, zero).data, [[0, 0, 0, 0]])
    np.testing.assert_allclose(ag.layer_norm([[1.0, -1.0]], np.ones(2), np.zeros(2), eps=0.0).data, [[1, -1]])
    y = ag.layer_norm(rng.standard_normal((4, 8)), np.ones(8), np.zeros(8)).data
    assert np.all(np.abs(y.mean(axis=1)) < 1e-6)
    assert np.all(np.abs(y.var(axis=1) - 1) < 1e-4)


def test_activation_values():
    assert ag.gelu(T([0.0])).data[0] == 0.0
    assert ag.sigmoid(T([0.0])).data[0] == 0.5
    assert ag.relu(T([-2.0])).data[0] == 0.0
    x = 3.0
    expect = 0.5 * x * (1 + math.tanh(math.sqrt(2 / math.pi) * (x + 0.044715 * x ** 3)))
    assert ag.gelu(T([x])).data[0] == pytest.approx(expect, abs=1e-12)
    assert ag.gelu(T([x])).data[0] == pytest.approx(2.9964, abs=1e-4)


def test_gelu_close_to_exact_erf():
    x = np.linspace(-6, 6, 2001)
    exact = 0.5 * x * (1 + np.vectorize(math.erf)(x / math.sqrt(2)))
    assert np.max(np.abs(ag.gelu(T(x)).data - exact)) < 1e-3


def test_sigmoid_stable_for_large_inputs():
    y = ag.sigmoid(T([-1000.0, 1000.0])).data
    assert np.all(np.isfinite(y)) and y[0] == 0.0 and y[1] == 1.0


@pytest.mark.parametrize("op", [ag.gelu, ag.relu, ag.sigmoid])
def test_elementwise_preserve_shape(op, rng):
    x = rng.standard_normal((3, 5))
    assert op(T(x)).shape == (3, 5)


def test_bce_examples():
    assert float(ag.bce_loss(T([[0.5]]), [1]).data) == pytest.approx(math.log(2), abs=1e-12)
    perfect = ag.bce_loss(T([[1.0], [0.0]]), [1, 0]).data
    assert float(perfect) <= -math.log(1 - 1e-7) + 1e-12
    with pytest.raises(ValueError, match="expected 0 or 1"):
        ag.bce_loss(T([[0.5], [0.5]]), [1, 2])
    w = float(ag.bce_loss(T([[0.25]]), [1], weight_pos=3.0).data)
    assert w == pytest.approx(-3 * math.log(0.25))


def test_gather_scatter_examples():
    x = T([[1.0, 2.0], [3.0, 4.0]])
    assert ag.gather(x, [0, 0]).data.tolist() == [[1, 2], [1, 2]]
    s = ag.scatter_add(T([[1.0], [2.0]]), [0, 0], 1)
    assert s.data.tolist() == [[3.0]]
    with pytest.raises(IndexError):
        ag.gather(x, [2])
    with pytest.raises(IndexError):
        ag.scatter_add(x, [0, 5], 3)


# --- gradients ----------------------------------------------------------------

def test_matmul_gradient_at_spec_tolerance(rng):
    r = check_fn("matmul", ag.matmul, [rng.standard_normal((7, 5)), rng.standard_normal((5, 3))], eps=1e-3)
    assert r.max_rel_err < 1e-4


@pytest.mark.parametrize("op", [ag.gelu, ag.relu, ag.sigmoid])
def test_activation_gradients_on_random_scalars(op, rng):
    x = rng.standard_normal((100, 1)) * 3
    if op is ag.relu:
        x = x[np.abs(x[:, 0]) > 1e-3]
    r = check_fn(op.__name__, op, [x], eps=1e-5)
    assert r.max_rel_err < 1e-5


def test_bce_gradient_random_batch(rng):
    lab = rng.integers(0, 2, 64)
    r = check_fn("bce", lambda p: ag.bce_loss(p, lab, 1.3), [rng.uniform(0.02, 0.98, (64, 1))],
                 eps=1e-5)
    assert r.max_rel_err < 1e-5


def test_gather_sum_pipeline_gradient(rng):
    rows = rng.integers(0, 6, 20)

    def f(x, w):
        g = ag.gather(x, rows)
        return ag.scatter_add(ag.mul(g, ag.gather(w, rows)), rows[::-1].copy(), 6)

    r = check_fn("gather-sum", f, [rng.standard_normal((6, 3)), rng.standard_normal((6, 3))],
                 eps=1e-5)
    assert r.max_rel_err < 1e-5


def test_layer_norm_and_concat_gradients(rng):
    r = check_fn("ln", ag.layer_norm, [rng.standard_normal((5, 6)), rng.uniform(0.5, 2, 6), rng.standard_normal(6)],
                 eps=1e-5)
    assert r.max_rel_err < 1e-5
    r = check_fn("concat", lambda a, b: ag.concat([a, ag.relu(b)], axis=1),
                 [rng.standard_normal((4, 2)), rng.uniform(0.1, 1, (4, 3))], eps=1e-5)
    assert r.max_rel_err < 1e-5


def test_backward_accumulates(rng):
    a = T(rng.standard_normal((3, 4)))
    b = T(rng.standard_normal((4, 2)))
    loss = ag.sum_all(ag.matmul(a, b))
    loss.backward()
    ga, gb = a.grad.copy(), b.grad.copy()
    loss.backward()
    np.testing.assert_allclose(a.grad, 2 * ga, rtol=0, atol=1e-12)
    np.testing.assert_allclose(b.grad, 2 * gb, rtol=0, atol=1e-12)
    a.zero_grad()
    assert np.all(a.grad == 0) and a.grad.shape == a.shape


def test_diamond_graph_gradient():
    # y = x*x + x: both paths must be summed before x's rule fires
    x = T([[2.0]])
    y = ag.add(ag.mul(x, x), x)
    y.backward(np.ones((1, 1)))
    assert x.grad.tolist() == [[5.0]]


def test_no_grad_records_nothing():
    x = T([[1.0]])
    with ag.no_grad():
        y = ag.mul(x, x)
    assert not y.requires_grad and y._parents == ()
    assert ag.is_grad_enabled()


def test_backward_needs_seed_for_non_scalar():
    with pytest.raises(ValueError):
        ag.mul(T([[1.0, 2.0]]), T([[1.0, 1.0]])).backward()


# --- drop path ------------------------------------------------------------------

def test_drop_path_identity_cases(rng):
    x = T(rng.standard_normal((6, 3)))
    b = np.array([0, 0, 1, 1, 2, 2])
    assert ag.drop_path(x, b, 0.0, True, rng) is x
    assert ag.drop_path(x, b, 0.5, False, None) is x
    with pytest.raises(ValueError):
        ag.drop_path(x, b, 1.0, True, rng)


def test_drop_path_monte_carlo_keep_rate():
    rng = np.random.default_rng(7)
    x = T(np.ones((1, 1)), grad=False)
    outs = np.array([float(ag.drop_path(x, [0], 0.5, True, rng).data[0, 0]) for _ in range(10000)])
    kept = outs[outs != 0]
    assert abs(len(kept) / len(outs) - 0.5) < 0.02
    assert np.all(kept == 2.0)


def test_drop_path_is_per_sample_and_reproducible(rng):
    x = T(np.ones((9, 2)), grad=False)
    b = np.repeat(np.arange(3), 3)
    y1 = ag.drop_path(x, b, 0.5, True, np.random.default_rng(5)).data
    y2 = ag.drop_path(x, b, 0.5, True, np.random.default_rng(5)).data
    np.testing.assert_array_equal(y1, y2)
    for s in range(3):
        rows = y1[b == s]
        assert np.all(rows == rows[0])


@given(st.integers(1, 6), st.integers(1, 5), st.integers(0, 2 ** 31 - 1))
def test_elementwise_ops_preserve_shape_property(n, c, seed):
    x = np.random.default_rng(seed).standard_normal((n, c))
    for op in (ag.gelu, ag.relu, ag.sigmoid):
        assert op(T(x)).shape == (n, c)
    assert ag.layer_norm(x, np.ones(c), np.zeros(c)).shape == (n, c)
