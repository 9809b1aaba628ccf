import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from flowvla import numerics as nx
from flowvla.numerics import Graph, NonFiniteError, ShapeError, Tensor


def param(rng, *shape):
    return Tensor(rng.standard_normal(shape), requires_grad=True)


def test_kernel_set():
    assert set(nx.kernels()) == {
        "matmul", "add", "mul", "softmax", "rms_norm", "swish", "gelu",
        "embedding_gather", "concat", "slice", "sinusoidal_encode", "rotary_apply",
    }


def test_softmax_uniform_and_rows_sum_to_one():
    np.testing.assert_allclose(nx.softmax(Tensor(np.zeros(3))).data, np.full(3, 1 / 3))
    x = Tensor(np.random.default_rng(0).standard_normal((5, 7)) * 10)
    assert np.max(np.abs(nx.softmax(x).data.sum(-1) - 1)) < 1e-12


def test_swish_zero():
    assert nx.swish(Tensor(np.zeros(1))).data[0] == 0.0


def test_sinusoidal_zero_layout():
    np.testing.assert_array_equal(nx.sinusoidal_encode(0.0, 4).data, [0, 0, 1, 1])


def test_sinusoidal_frequency_range():
    f = nx.ops.sinusoidal_frequencies(16)
    assert f[0] == 1.0 and np.isclose(f[-1], 1e4)


def test_rms_norm_unit_rms():
    x = Tensor(np.random.default_rng(1).standard_normal((4, 32)) * 5)
    rms = np.sqrt((nx.rms_norm(x).data ** 2).mean(-1))
    assert np.max(np.abs(rms - 1)) < 1e-6


def test_matmul_shape_error_names_kernel_and_shapes():
    with pytest.raises(ShapeError, match=r"matmul.*\(2, 3\).*\(4, 5\)"):
        nx.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 5))))


def test_add_shape_error():
    with pytest.raises(ShapeError, match="add"):
        nx.add(Tensor(np.ones((2, 3))), Tensor(np.ones((4,))))


def test_embedding_out_of_range():
    with pytest.raises(IndexError):
        nx.embedding_gather(Tensor(np.ones((4, 2))), np.array([4]))


def test_non_finite_is_hard_error():
    with pytest.raises(NonFiniteError, match="mul"), np.errstate(over="ignore"):
        nx.mul(Tensor(np.array([1e300])), Tensor(np.array([1e300])))


def test_grad_check_square():
    x = Tensor(np.array([3.0]), requires_grad=True)
    assert nx.grad_check(lambda: nx.sum(x * x), x) < 1e-8
    x.zero_grad()
    (x * x).sum().backward()
    assert x.grad[0] == pytest.approx(6.0)


def test_grad_check_rejects_bad_step_and_nonscalar():
    x = Tensor(np.ones(2), requires_grad=True)
    with pytest.raises(ValueError):
        nx.grad_check(lambda: nx.sum(x), x, h=1e-2)
    with pytest.raises(ShapeError):
        nx.grad_check(lambda: x * 2.0, x)


def test_grad_check_requires_float64():
    x = Tensor(np.ones(2, dtype=np.float32), requires_grad=True)
    with pytest.raises(TypeError):
        nx.grad_check(lambda: nx.sum(x), x)


def _kernel_losses(rng):
    a, b = param(rng, 3, 4), param(rng, 4, 2)
    table, t = param(rng, 5, 3), Tensor(rng.random(3), requires_grad=True)
    cos, sin = nx.rotary_tables(np.arange(3), 4)
    w = rng.standard_normal((3, 4))
    return {
        "matmul": (lambda: nx.sum(nx.matmul(a, b) * rng_fixed(3, 2)), [a, b]),
        "add": (lambda: nx.sum(nx.add(a, b[:, 0].reshape(4)) * w), [a, b]),
        "mul": (lambda: nx.sum(nx.mul(a, a) * w), [a]),
        "softmax": (lambda: nx.sum(nx.softmax(a) * w), [a]),
        "rms_norm": (lambda: nx.sum(nx.rms_norm(a) * w), [a]),
        "swish": (lambda: nx.sum(nx.swish(a) * w), [a]),
        "gelu": (lambda: nx.sum(nx.gelu(a) * w), [a]),
        "embedding_gather": (lambda: nx.sum(nx.embedding_gather(table, np.array([0, 2, 2, 4])) * rng_fixed(4, 3)), [table]),
        "concat": (lambda: nx.sum(nx.concat([a, a * 2.0], axis=0) * rng_fixed(6, 4)), [a]),
        "slice": (lambda: nx.sum(nx.slice(a, (slice(0, 2), [1, 1, 3])) * rng_fixed(2, 3)), [a]),
        "sinusoidal_encode": (lambda: nx.sum(nx.sinusoidal_encode(t, 8) * rng_fixed(3, 8)), [t]),
        "rotary_apply": (lambda: nx.sum(nx.rotary_apply(a, cos, sin) * w), [a]),
    }


_FIXED = {}


def rng_fixed(*shape):
    if shape not in _FIXED:
        _FIXED[shape] = np.random.default_rng(len(_FIXED) + 7).standard_normal(shape)
    return _FIXED[shape]


@pytest.mark.parametrize("kernel", sorted(nx.kernels()))
def test_every_kernel_matches_finite_differences(kernel):
    fn, params = _kernel_losses(np.random.default_rng(3))[kernel]
    err = nx.grad_check(fn, {str(i): p for i, p in enumerate(params)}, h=1e-6)
    assert err < 1e-4, f"{kernel}: {err}"


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 4), st.integers(1, 5), st.integers(1, 4), st.integers(0, 2**31))
def test_batched_matmul_gradients(batch, n, m, seed):
    rng = np.random.default_rng(seed)
    a, b = param(rng, batch, n, 3), param(rng, 3, m)
    w = rng.standard_normal((batch, n, m))
    assert nx.grad_check(lambda: nx.sum(nx.matmul(a, b) * w), {"a": a, "b": b}) < 1e-4


def test_single_attention_layer_gradients():
    rng = np.random.default_rng(0)
    x = param(rng, 1, 2, 8)
    wq, wk, wv = param(rng, 8, 8), param(rng, 8, 8), param(rng, 8, 8)
    target = rng.standard_normal((1, 2, 8))

    def loss():
        q, k, v = nx.matmul(x, wq), nx.matmul(x, wk), nx.matmul(x, wv)
        att = nx.softmax(nx.matmul(q, nx.transpose(k, (0, 2, 1))) * (1 / np.sqrt(8)))
        out = nx.matmul(att, v)
        d = out - target
        return nx.sum(d * d)

    assert nx.grad_check(loss, {"x": x, "wq": wq, "wk": wk, "wv": wv}) < 1e-4


def test_graph_is_topological_and_backward_reverses_it():
    rng = np.random.default_rng(0)
    a, b = param(rng, 2, 2), param(rng, 2, 2)
    out = nx.sum(nx.matmul(a, b) * a)
    g = Graph(out)
    pos = {id(n): i for i, n in enumerate(g.nodes)}
    for n in g.nodes:
        for parent in n._parents:
            assert pos[id(parent)] < pos[id(n)]
    visited = g.backward(np.ones(()))
    order = [pos[id(n)] for n in visited]
    assert order == sorted(order, reverse=True)
    assert a.grad.shape == a.shape and b.grad.shape == b.shape


def test_forward_is_bit_deterministic():
    rng = np.random.default_rng(0)
    a, b = param(rng, 4, 6), param(rng, 6, 3)
    f = lambda: nx.softmax(nx.gelu(nx.matmul(a, b))).data  # noqa: E731
    assert np.array_equal(f(), f())


def test_no_grad_records_nothing():
    a = Tensor(np.ones(3), requires_grad=True)
    with nx.no_grad():
        y = a * 2.0
    assert y._parents == () or not y.requires_grad
