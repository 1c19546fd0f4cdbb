import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from routine_rl import autodiff as ad
from routine_rl.autodiff import Tape, Tensor
from routine_rl.errors import ConfigError, UsageError
from routine_rl.params import ParameterSet, finite_diff_check


def grad_of(fn, *values):
    leaves = [Tensor(np.array(v, dtype=float), requires_grad=True) for v in values]
    with Tape() as tape:
        out = fn(*leaves)
        tape.backward(out)
    return out, [leaf.grad for leaf in leaves]


def test_matmul_identity():
    m = np.array([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(ad.matmul(m, np.eye(2)).data, m)


def test_sigmoid_at_zero():
    assert ad.sigmoid(np.array(0.0)).item() == 0.5


@pytest.mark.parametrize("x", [-1.0, 0.0, 2.5])
def test_log_exp_inverse(x):
    assert abs(ad.log(ad.exp(np.array(x))).item() - x) < 1e-12


def test_square_gradient_at_three():
    _, (g,) = grad_of(lambda x: ad.square(x), 3.0)
    assert g == 6.0


def test_tanh_layer_matches_finite_differences(rng):
    x = rng.standard_normal(5)
    ps = ParameterSet({"W": rng.standard_normal((3, 5))})
    err = finite_diff_check(lambda: ad.tsum(ad.tanh(ad.matmul(ps["W"], x[:, None]))), ps, samples=15)
    assert err < 1e-4


def test_unreachable_parameter_gets_zero_gradient():
    ps = ParameterSet({"used": np.ones(3), "unused": np.ones(2)})
    with Tape() as tape:
        tape.backward(ad.tsum(ps["used"] * 2.0))
    np.testing.assert_array_equal(ps["unused"].grad, 0.0)
    np.testing.assert_array_equal(ps["used"].grad, 2.0)


def test_backward_rejects_non_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with Tape() as tape, pytest.raises(UsageError):
        tape.backward(x * 2.0)


@pytest.mark.parametrize("op, a, b", [
    (ad.matmul, np.ones((2, 3)), np.ones((2, 3))),
    (ad.add, np.ones((2, 3)), np.ones((3, 2))),
    (lambda a, b: ad.linear(a, b, np.zeros(4)), np.ones((2, 3)), np.ones((3, 5))),
])
def test_shape_mismatch_is_config_error_naming_op(op, a, b):
    with pytest.raises(ConfigError, match=r"\(2, 3\)"):
        op(a, b)


def test_no_grad_records_nothing():
    w = Tensor(np.ones(2), requires_grad=True)
    with Tape() as tape:
        with ad.no_grad():
            out = ad.tanh(w * 3.0)
    assert not out.requires_grad and tape.nodes == []


def test_backward_visits_each_node_once():
    w = Tensor(np.array([0.3, -0.2]), requires_grad=True)
    with Tape() as tape:
        h = ad.tanh(w)
        loss = ad.tsum(h * h + h)  # h is used twice
        tape.backward(loss)
    assert tape.backward_visits == len(tape.nodes)
    expected = (2 * np.tanh(w.data) + 1) * (1 - np.tanh(w.data) ** 2)
    np.testing.assert_allclose(w.grad, expected, rtol=1e-12)


def _scalar_fns():
    return {
        "tanh": (ad.tanh, lambda x: 1 - np.tanh(x) ** 2),
        "sigmoid": (ad.sigmoid, lambda x: np.exp(-x) / (1 + np.exp(-x)) ** 2),
        "softplus": (ad.softplus, lambda x: 1 / (1 + np.exp(-x))),
        "exp": (ad.exp, np.exp),
        "square": (ad.square, lambda x: 2 * x),
    }


@pytest.mark.parametrize("name", list(_scalar_fns()))
@settings(max_examples=25, deadline=None)
@given(x=arrays(np.float64, 4, elements=st.floats(-4, 4)))
def test_elementwise_gradients(name, x):
    fn, deriv = _scalar_fns()[name]
    _, (g,) = grad_of(lambda t: ad.tsum(fn(t)), x)
    np.testing.assert_allclose(g, deriv(x), rtol=1e-9, atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(rows=st.integers(1, 4), cols=st.integers(1, 4), seed=st.integers(0, 2**16))
def test_broadcast_add_mul_gradients_sum_over_rows(rows, cols, seed):
    r = np.random.default_rng(seed)
    a, b = r.standard_normal((rows, cols)), r.standard_normal(cols)
    _, (ga, gb) = grad_of(lambda x, y: ad.tsum(x * y + y), a, b)
    np.testing.assert_allclose(ga, np.broadcast_to(b, a.shape))
    np.testing.assert_allclose(gb, a.sum(axis=0) + rows)


@settings(max_examples=20, deadline=None)
@given(x=arrays(np.float64, (3, 4), elements=st.floats(-3, 3)))
def test_forward_values_stay_finite(x):
    out = ad.tsum(ad.softplus(ad.tanh(x) * 50.0) + ad.sigmoid(x * 100.0))
    assert np.isfinite(out.data).all()


def test_structural_ops_against_finite_differences(rng):
    ps = ParameterSet({"a": rng.standard_normal((3, 4)), "b": rng.standard_normal((4, 2, 5)),
                       "c": rng.standard_normal((3, 2))})

    def loss():
        a, b, c = ps["a"], ps["b"], ps["c"]
        e = ad.einsum("nl,lhg->nhg", a, b)                      # (3, 2, 5)
        cs = ad.cumsum(e, axis=2)
        cat = ad.concat([ad.reshape(cs, (3, 10)), c], axis=1)   # (3, 12)
        picked = cat[:, 2:9] / (1.5 + ad.sigmoid(cat[:, :7]))
        masked = ad.where(picked.data > 0, picked, ad.clip(picked, -0.5, 0.5))
        return ad.mean(ad.log(1.0 + ad.square(masked))) - ad.tsum(ad.broadcast_to(c[0], (2, 2)))

    assert finite_diff_check(loss, ps, samples=200) < 1e-6


def test_getitem_fancy_index_accumulates_repeats():
    _, (g,) = grad_of(lambda x: ad.tsum(x[np.array([0, 0, 2])]), [1.0, 2.0, 3.0])
    np.testing.assert_array_equal(g, [2.0, 0.0, 1.0])


def test_tensor_shape_invariant():
    t = Tensor([[1.0, 2.0, 3.0]])
    assert t.shape == (1, 3) and t.data.size == int(np.prod(t.shape)) and t.data.dtype == np.float64


def test_numpy_on_left_of_operator_returns_tensor():
    w = Tensor(np.ones(2), requires_grad=True)
    with Tape() as tape:
        out = np.array([2.0, 3.0]) * w
        tape.backward(ad.tsum(out))
    assert isinstance(out, Tensor)
    np.testing.assert_array_equal(w.grad, [2.0, 3.0])
