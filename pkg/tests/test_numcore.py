import numpy as np
import pytest

from shagcl import numcore as nc
from shagcl.errors import ShapeError
from shagcl.gradcheck import check_gradients, relative_error
from shagcl.layers import Embedding, LayerNorm, Linear


def leaf(rng, *shape):
    return nc.Tensor(rng.normal(size=shape), requires_grad=True)


def test_zero_sized_dimension_rejected():
    with pytest.raises(ShapeError):
        nc.Tensor(np.zeros((0, 3)))


def test_backward_requires_scalar(rng):
    x = leaf(rng, 3)
    with pytest.raises(ShapeError):
        nc.backward(nc.mul(x, x))


def test_broadcast_only_over_trailing_suffix(rng):
    a = leaf(rng, 2, 3)
    nc.add(a, leaf(rng, 3))  # fine
    with pytest.raises(ShapeError):
        nc.add(a, leaf(rng, 2))


def test_broadcast_gradient_sums_leading_axes(rng):
    a, b = leaf(rng, 4, 3), leaf(rng, 3)
    nc.backward(nc.sum(nc.mul(a, b)))
    np.testing.assert_allclose(b.grad, a.data.sum(axis=0))
    np.testing.assert_allclose(a.grad, np.broadcast_to(b.data, (4, 3)))


def test_gradients_accumulate_across_backward_calls(rng):
    x = leaf(rng, 3)
    nc.backward(nc.sum(nc.mul(x, x)))
    nc.backward(nc.sum(nc.mul(x, x)))
    np.testing.assert_allclose(x.grad, 4 * x.data)


def test_shared_subexpression_gradient(rng):
    x = leaf(rng, 3)
    y = nc.exp(x)
    nc.backward(nc.sum(nc.add(y, y)))
    np.testing.assert_allclose(x.grad, 2 * np.exp(x.data))


def test_no_grad_records_nothing(rng):
    x = leaf(rng, 3)
    with nc.no_grad():
        y = nc.mul(x, x)
    assert y.is_leaf and not y.requires_grad
    assert nc.grad_enabled()


def test_softmax_rows_sum_to_one_and_resist_overflow():
    x = nc.Tensor([[1000.0, 1001.0, 1002.0], [-5.0, 0.0, 5.0]])
    p = nc.softmax(x).data
    np.testing.assert_allclose(p.sum(axis=1), 1.0)
    assert np.isfinite(nc.log_softmax(x).data).all()


def test_matmul_batched_against_numpy(rng):
    a, b = leaf(rng, 2, 3, 4), leaf(rng, 2, 4, 5)
    np.testing.assert_allclose(nc.matmul(a, b).data, a.data @ b.data)
    with pytest.raises(ShapeError):
        nc.matmul(a, leaf(rng, 3, 5))


OPS = {
    "exp": lambda x, w: nc.sum(nc.mul(nc.exp(x), w)),
    "log": lambda x, w: nc.sum(nc.mul(nc.log(nc.add(nc.mul(x, x), nc.Tensor(1.0))), w)),
    "relu": lambda x, w: nc.sum(nc.mul(nc.relu(x), w)),
    "log_softmax": lambda x, w: nc.sum(nc.mul(nc.log_softmax(x), w)),
    "transpose": lambda x, w: nc.sum(nc.mul(nc.transpose(x), nc.transpose(w))),
    "narrow": lambda x, w: nc.sum(nc.mul(nc.narrow(x, 2), nc.narrow(w, 2))),
    "pick": lambda x, w: nc.sum(nc.pick(nc.mul(x, w), np.array([0, 3, 1]))),
    "take_rows": lambda x, w: nc.sum(nc.mul(nc.take_rows(x, np.array([2, 0, 2])), w)),
    "mean_axis": lambda x, w: nc.sum(nc.mul(nc.mean(x, axis=0), nc.reshape(nc.take_rows(w, np.array([1])), (4,)))),
    "concat": lambda x, w: nc.sum(nc.mul(nc.concat([x, x], axis=0), nc.concat([w, w], axis=0))),
}


@pytest.mark.parametrize("name", sorted(OPS))
def test_op_gradients(name):
    rng = np.random.default_rng(7)
    x = leaf(rng, 3, 4)
    w = nc.Tensor(rng.normal(size=(3, 4)))
    res = check_gradients(lambda: OPS[name](x, w), [x])
    assert res.passed(), (name, res.max_rel_error)


def test_layer_norm_gradient(rng):
    x = leaf(rng, 2, 5)
    norm = LayerNorm(5)
    norm.gamma.data[:] = rng.normal(size=5)
    w = nc.Tensor(rng.normal(size=(2, 5)))
    res = check_gradients(lambda: nc.sum(nc.mul(norm(x), w)), [x] + norm.parameters())
    assert res.passed(), res.max_rel_error


def test_linear_and_embedding(rng):
    lin = Linear(3, 2, rng)
    assert lin.in_dim == 3 and lin.out_dim == 2
    with pytest.raises(ShapeError):
        lin(leaf(rng, 4, 4))
    emb = Embedding(5, 3, rng)
    out = emb(np.array([[0, 4], [1, 1]]))
    assert out.shape == (2, 2, 3)
    np.testing.assert_array_equal(out.data[1, 0], out.data[1, 1])


def test_module_state_roundtrip(rng):
    a, b = Linear(3, 2, rng), Linear(3, 2, rng)
    b.load_state_dict(a.state_dict())
    for (na, pa), (nb, pb) in zip(a.named_parameters(), b.named_parameters()):
        assert na == nb
        np.testing.assert_array_equal(pa.data, pb.data)
    bad = a.state_dict()
    bad["weight"] = np.zeros((2, 2))
    with pytest.raises(ShapeError):
        b.load_state_dict(bad)


def test_relative_error_floor():
    assert relative_error(np.array([0.0]), np.array([1e-9]))[0] < 1e-4
    assert relative_error(np.array([1.0]), np.array([1.1]))[0] == pytest.approx(0.1 / 1.1)
