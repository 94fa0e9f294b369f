import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gres_rela import numcore as nc
from gres_rela.errors import CompatibilityError, ContractError, DimensionError


def naive_matmul(a, b):
    m, k = a.shape
    _, n = b.shape
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            s = 0.0
            for t in range(k):
                s += a[i, t] * b[t, j]
            out[i, j] = s
    return out


def test_matmul_identity_and_scalar():
    b = np.arange(12.0).reshape(3, 4)
    assert np.array_equal(nc.matmul(nc.Tensor(np.eye(3)), nc.Tensor(b)).data, b)
    assert nc.matmul(nc.Tensor([[2.0]]), nc.Tensor([[3.0]])).data.tolist() == [[6.0]]


def test_matmul_against_triple_loop():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(4, 5)), rng.normal(size=(5, 3))
    np.testing.assert_allclose(nc.matmul(nc.Tensor(a), nc.Tensor(b)).data, naive_matmul(a, b), atol=1e-12)


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
        nc.matmul(nc.Tensor(np.zeros((2, 3))), nc.Tensor(np.zeros((2, 3))))


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 8), st.integers(1, 8), st.integers(1, 8), st.integers(0, 2**31 - 1))
def test_matmul_random_shapes(m, k, n, seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(m, k)), rng.normal(size=(k, n))
    np.testing.assert_allclose(nc.matmul(nc.Tensor(a), nc.Tensor(b)).data, naive_matmul(a, b), atol=1e-10)


def test_softmax_examples():
    out = nc.softmax_rows(nc.Tensor([[0.0, 0.0, 0.0, 0.0], [100.0, 0.0, 0.0, 0.0], [1.0, 2.0, 3.0, 0.0]])).data
    np.testing.assert_allclose(out[0], [0.25] * 4)
    assert abs(out[1, 0] - 1.0) < 1e-10 and np.all(out[1, 1:] < 1e-10)
    e = [math.exp(v) for v in (1.0, 2.0, 3.0, 0.0)]
    np.testing.assert_allclose(out[2], [v / sum(e) for v in e], atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 6), st.integers(1, 9), st.integers(0, 2**31 - 1))
def test_softmax_rows_sum_to_one(m, n, seed):
    x = np.random.default_rng(seed).uniform(-50, 50, size=(m, n))
    y = nc.softmax_rows(nc.Tensor(x)).data
    assert np.all(y >= 0)
    np.testing.assert_allclose(y.sum(axis=1), 1.0, atol=1e-9)


def test_gelu_values():
    out = nc.gelu(nc.Tensor([0.0, -10.0, 1.0])).data
    assert out[0] == 0.0
    assert abs(out[1]) < 1e-6
    assert out[2] == pytest.approx(0.5 * (1.0 + math.erf(1.0 / math.sqrt(2.0))), abs=1e-15)


def test_sigmoid_values():
    out = nc.sigmoid(nc.Tensor([0.0, 40.0, 1.0, -800.0])).data
    assert out[0] == 0.5
    assert abs(out[1] - 1.0) < 1e-15
    assert out[2] == pytest.approx(1.0 / (1.0 + math.exp(-1.0)), abs=1e-15)
    assert np.all(np.isfinite(out))


def test_bce_values():
    t = np.array([1.0, 0.0, 1.0])
    assert nc.bce(nc.Tensor(t), t, 1e-7).item() < 1e-6
    assert nc.bce(nc.Tensor(np.full(3, 0.5)), t, 1e-7).item() == pytest.approx(math.log(2.0), abs=1e-6)
    eps = 1e-7
    oracle = -(math.log(0.9 + eps) + math.log(1.0 - 0.2 + eps)) / 2.0
    assert nc.bce(nc.Tensor([0.9, 0.2]), [1.0, 0.0], eps).item() == pytest.approx(oracle, abs=1e-15)
    with pytest.raises(DimensionError):
        nc.bce(nc.Tensor([0.5]), [1.0, 0.0])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 1), st.floats(0, 1)), min_size=1, max_size=10))
def test_bce_non_negative(pairs):
    p = np.array([a for a, _ in pairs])
    t = np.array([b for _, b in pairs])
    assert nc.bce(nc.Tensor(p), t).item() >= 0.0


def test_backward_linear_and_quadratic():
    w = nc.Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    nc.backward(nc.sum_all(w))
    assert np.array_equal(w.grad, np.ones((2, 3)))

    v = nc.Tensor(np.arange(6.0).reshape(3, 2) - 2.5, requires_grad=True)
    nc.backward(nc.sum_all(nc.mul(v, v)))
    np.testing.assert_allclose(v.grad, 2 * v.data)


def test_backward_accumulates_across_calls():
    w = nc.Tensor(np.ones(3), requires_grad=True)
    nc.backward(nc.sum_all(w))
    nc.backward(nc.sum_all(nc.scale(w, 2.0)))
    np.testing.assert_allclose(w.grad, np.full(3, 3.0))


def test_backward_rejects_non_scalar():
    with pytest.raises(ContractError):
        nc.backward(nc.Tensor(np.ones(2), requires_grad=True))


def test_graph_freed_after_backward():
    w = nc.Tensor(np.ones((2, 2)), requires_grad=True)
    h = nc.gelu(w)
    loss = nc.sum_all(h)
    nc.backward(loss)
    assert h._parents == () and loss._parents == ()


def _random_projection_check(build, inputs, seed=0):
    rng = np.random.default_rng(seed)
    tensors = [nc.Tensor(x, requires_grad=True) for x in inputs]
    proj = rng.normal(size=build(*tensors).shape)

    def loss():
        out = build(*tensors)
        return nc.sum_all(nc.mul(out, nc.Tensor(proj))) if out.shape else nc.scale(out, 1.0)

    errs = nc.check_gradients(loss, tensors, 1e-4)
    return max(errs.values())


@pytest.mark.parametrize(
    "name,build,shapes",
    [
        ("matmul", nc.matmul, [(3, 4), (4, 2)]),
        ("transpose", nc.transpose, [(3, 4)]),
        ("reshape", lambda a: nc.reshape(a, (6, 2)), [(3, 4)]),
        ("add", nc.add, [(2, 3), (2, 3)]),
        ("sub", nc.sub, [(2, 3), (2, 3)]),
        ("mul", nc.mul, [(2, 3), (2, 3)]),
        ("add_row", nc.add_row, [(4, 3), (3,)]),
        ("mul_row", nc.mul_row, [(4, 3), (3,)]),
        ("scale", lambda a: nc.scale(a, -1.7), [(3, 3)]),
        ("add_const", lambda a: nc.add_const(a, 0.3), [(3,)]),
        ("div_scalar", lambda a, s: nc.div_scalar(a, nc.add_const(nc.mul(s, s), 1.0)), [(2, 3), ()]),
        ("gelu", nc.gelu, [(3, 4)]),
        ("sigmoid", nc.sigmoid, [(3, 4)]),
        ("softmax_rows", nc.softmax_rows, [(3, 5)]),
        ("sum_all", nc.sum_all, [(3, 2)]),
        ("mean_rows", nc.mean_rows, [(4, 3)]),
        ("embed", lambda t: nc.embed(t, [2, 0, 2, 1]), [(4, 3)]),
        ("bce", lambda a: nc.bce(nc.sigmoid(a), np.array([1.0, 0.0, 0.3, 1.0])), [(4,)]),
        ("minimum_const", lambda a: nc.minimum_const(a, 0.25), [(3, 3)]),
    ],
)
def test_op_gradients_match_finite_differences(name, build, shapes):
    rng = np.random.default_rng(len(name))
    inputs = [rng.normal(size=s) for s in shapes]
    if name == "minimum_const":
        # keep entries away from the kink
        inputs[0] = np.where(np.abs(inputs[0] - 0.25) < 0.05, 0.6, inputs[0])
    assert _random_projection_check(build, inputs) < 1e-3


def test_paramset_names_unique():
    ps = nc.ParamSet()
    ps.bias("a.b", 3)
    with pytest.raises(ContractError):
        ps.bias("a.b", 2)


def test_glorot_bounds_and_determinism():
    w1 = nc.glorot_uniform(np.random.default_rng(5), (10, 6))
    w2 = nc.glorot_uniform(np.random.default_rng(5), (10, 6))
    assert np.array_equal(w1, w2)
    assert np.abs(w1).max() <= math.sqrt(6.0 / 16.0)


def test_checkpoint_layout_and_roundtrip(tmp_path):
    arrays = {"z.w": np.arange(6.0).reshape(2, 3), "a.b": np.array([1.5, -2.0]), "s": np.array(3.25)}
    path = tmp_path / "m.ckpt"
    nc.write_checkpoint(path, arrays)
    raw = path.read_bytes()
    assert raw.startswith(b"GRELA1\na.b 1 2\n")
    payload = raw[len(b"GRELA1\na.b 1 2\n") :][:16]
    assert np.frombuffer(payload, "<f8").tolist() == [1.5, -2.0]
    assert b"s 0\n" in raw and raw.index(b"s 0\n") < raw.index(b"z.w 2 2 3\n")
    back = nc.read_checkpoint(path)
    assert list(back) == ["a.b", "s", "z.w"]
    for k, v in arrays.items():
        assert np.array_equal(back[k], v)


def test_checkpoint_bad_magic(tmp_path):
    p = tmp_path / "x"
    p.write_bytes(b"NOPE\n")
    with pytest.raises(CompatibilityError):
        nc.read_checkpoint(p)


def test_load_state_requires_same_names():
    ps = nc.ParamSet()
    ps.bias("a", 2)
    with pytest.raises(CompatibilityError):
        ps.load_state({"b": np.zeros(2)})
