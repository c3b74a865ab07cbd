"""Gradient checks for the tensor engine, layers, and optimizer."""

import zlib

import numpy as np
import pytest

from indoorpop.nn import (
    AdamState,
    GRU_PARAM_KEYS,
    NonFiniteError,
    Tensor,
    adam_step,
    add,
    backward,
    concat,
    gcn_layer,
    gcn_propagation,
    gru_cell,
    gru_params,
    hadamard,
    init_uniform,
    matmul,
    regroup_rows,
    relu,
    reshape,
    row_softmax,
    scale,
    self_attention,
    sigmoid,
    slice_rows,
    square,
    sub,
    tanh,
    tensor_sum,
    transpose,
    zero_grad,
)

REL_TOL = 1e-4


def fd_grad(build_loss, param, h=1e-6):
    """Central finite differences of build_loss w.r.t. one parameter tensor."""
    grad = np.zeros_like(param.data)
    flat, out = param.data.ravel(), grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = build_loss().item()
        flat[i] = orig - h
        down = build_loss().item()
        flat[i] = orig
        out[i] = (up - down) / (2.0 * h)
    return grad


def assert_grads_match(build_loss, params, rel_tol=REL_TOL):
    loss = build_loss()
    # a zero loss would pass any gradient check vacuously
    assert loss.item() > 0.0
    zero_grad(params)
    backward(loss)
    analytic = [p.grad.copy() for p in params]
    for p, an in zip(params, analytic):
        fd = fd_grad(build_loss, p)
        denom = np.maximum(1.0, np.maximum(np.abs(fd), np.abs(an)))
        worst = np.max(np.abs(an - fd) / denom)
        assert worst < rel_tol, f"{p.name or 'param'}: rel err {worst:.2e}"


def leaf(rng, *shape, name=""):
    return Tensor(rng.standard_normal(shape), requires_grad=True, name=name)


def off_kink_leaf(rng, *shape):
    """A trainable leaf with every entry at least 0.2 from zero (relu kink)."""
    raw = rng.standard_normal(shape)
    return Tensor(np.where(raw >= 0, raw + 0.2, raw - 0.2), requires_grad=True, name="a")


# -- per-op gradient checks ------------------------------------------------------


def scalarize(t):
    return tensor_sum(square(t))


OP_CASES = {
    "matmul": lambda rng: (
        lambda a, b: scalarize(matmul(a, b)),
        [leaf(rng, 3, 4, name="a"), leaf(rng, 4, 2, name="b")],
    ),
    "add": lambda rng: (
        lambda a, b: scalarize(add(a, b)),
        [leaf(rng, 3, 4, name="a"), leaf(rng, 3, 4, name="b")],
    ),
    "add_broadcast_row": lambda rng: (
        lambda a, b: scalarize(add(a, b)),
        [leaf(rng, 3, 4, name="a"), leaf(rng, 1, 4, name="b")],
    ),
    "sub": lambda rng: (
        lambda a, b: scalarize(sub(a, b)),
        [leaf(rng, 2, 5, name="a"), leaf(rng, 2, 5, name="b")],
    ),
    "hadamard": lambda rng: (
        lambda a, b: scalarize(hadamard(a, b)),
        [leaf(rng, 3, 3, name="a"), leaf(rng, 3, 3, name="b")],
    ),
    "scale": lambda rng: (
        lambda a: scalarize(scale(a, -2.5)),
        [leaf(rng, 2, 3, name="a")],
    ),
    "concat_rows": lambda rng: (
        lambda a, b: scalarize(concat([a, b], axis=0)),
        [leaf(rng, 2, 3, name="a"), leaf(rng, 4, 3, name="b")],
    ),
    "concat_cols": lambda rng: (
        lambda a, b: scalarize(concat([a, b], axis=1)),
        [leaf(rng, 3, 2, name="a"), leaf(rng, 3, 5, name="b")],
    ),
    "sigmoid": lambda rng: (
        lambda a: scalarize(sigmoid(a)),
        [leaf(rng, 3, 4, name="a")],
    ),
    "tanh": lambda rng: (
        lambda a: scalarize(tanh(a)),
        [leaf(rng, 3, 4, name="a")],
    ),
    "relu": lambda rng: (
        # entries sit off the kink, where finite differences are meaningless
        lambda a: scalarize(relu(a)),
        [off_kink_leaf(rng, 3, 4)],
    ),
    "row_softmax": lambda rng: (
        lambda a: scalarize(row_softmax(a)),
        [leaf(rng, 3, 5, name="a")],
    ),
    "square": lambda rng: (
        lambda a: tensor_sum(square(a)),
        [leaf(rng, 4, 2, name="a")],
    ),
    "tensor_sum": lambda rng: (
        lambda a: square(tensor_sum(a)),
        [leaf(rng, 3, 3, name="a")],
    ),
    "transpose": lambda rng: (
        lambda a: scalarize(matmul(transpose(a), a)),
        [leaf(rng, 4, 2, name="a")],
    ),
    "reshape": lambda rng: (
        lambda a: scalarize(reshape(a, (2, 6))),
        [leaf(rng, 3, 4, name="a")],
    ),
    "regroup_rows": lambda rng: (
        lambda a: scalarize(regroup_rows(a, 3, 2)),
        [leaf(rng, 6, 4, name="a")],
    ),
    "slice_rows": lambda rng: (
        lambda a: scalarize(slice_rows(a, 1, 3)),
        [leaf(rng, 5, 3, name="a")],
    ),
}


@pytest.mark.parametrize("op_name", sorted(OP_CASES))
def test_op_gradients(op_name):
    rng = np.random.default_rng(zlib.crc32(op_name.encode()))
    make_loss, params = OP_CASES[op_name](rng)
    assert_grads_match(lambda: make_loss(*params), params)


# -- graph mechanics ------------------------------------------------------------


def test_diamond_graph_accumulates_once():
    x = Tensor([[3.0]], requires_grad=True)
    loss = add(x, x)  # d(2x)/dx = 2
    zero_grad([x])
    backward(loss)
    np.testing.assert_allclose(x.grad, [[2.0]])


def test_backward_requires_scalar():
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    with pytest.raises(ValueError, match="scalar"):
        backward(add(x, x))


def test_backward_requires_trainable_ancestor():
    x = Tensor([[1.0]])
    with pytest.raises(ValueError, match="trainable"):
        backward(add(x, x))


def test_unreachable_param_keeps_zero_grad():
    x = Tensor([[2.0]], requires_grad=True, name="x")
    unused = Tensor([[7.0]], requires_grad=True, name="unused")
    zero_grad([x, unused])
    grads = backward(square(x))
    np.testing.assert_allclose(x.grad, [[4.0]])
    np.testing.assert_allclose(unused.grad, [[0.0]])
    assert unused not in grads


def test_grad_accumulates_across_backwards():
    x = Tensor([[1.0]], requires_grad=True)
    backward(square(x))
    backward(square(x))
    np.testing.assert_allclose(x.grad, [[4.0]])
    zero_grad([x])
    np.testing.assert_allclose(x.grad, [[0.0]])


def test_non_finite_input_rejected():
    with pytest.raises(NonFiniteError):
        Tensor([[np.inf]])
    with pytest.raises(NonFiniteError):
        Tensor([[np.nan]], requires_grad=True)


def test_matmul_is_two_dimensional_only():
    a = Tensor(np.ones((2, 2, 2)))
    with pytest.raises(ValueError):
        matmul(a, a)


def test_sigmoid_saturates_stably():
    big = Tensor([[1000.0, -1000.0]], requires_grad=True)
    out = sigmoid(big)
    np.testing.assert_allclose(out.data, [[1.0, 0.0]], atol=1e-12)
    zero_grad([big])
    backward(tensor_sum(out))
    assert np.all(np.isfinite(big.grad))


def test_regroup_rows_inverts_itself():
    rng = np.random.default_rng(0)
    a = Tensor(rng.standard_normal((6, 3)))
    there = regroup_rows(a, 2, 3)  # (o, i) -> row i*2 + o
    back = regroup_rows(there, 3, 2)
    np.testing.assert_array_equal(back.data, a.data)


def test_slice_rows_values():
    a = Tensor(np.arange(12.0).reshape(4, 3))
    np.testing.assert_array_equal(slice_rows(a, 1, 3).data, a.data[1:3])


# -- layers ---------------------------------------------------------------------


def test_gru_params_keys_and_shapes():
    rng = np.random.default_rng(1)
    params = gru_params(rng, input_dim=3, hidden_dim=5, prefix="t.")
    assert set(params) == set(GRU_PARAM_KEYS)
    assert params["W_z"].shape == (3, 5)
    assert params["U_z"].shape == (5, 5)
    assert params["b_z"].shape == (1, 5)
    np.testing.assert_array_equal(params["b_z"].data, 0.0)
    assert all(p.requires_grad for p in params.values())


def test_gru_zero_params_halve_state():
    """With all-zero weights: z = 1/2, candidate = 0, so h' = h/2."""
    params = {
        key: Tensor(np.zeros((3, 3) if key.startswith(("W", "U")) else (1, 3)))
        for key in GRU_PARAM_KEYS
    }
    params["W_z"] = Tensor(np.zeros((2, 3)))
    params["W_r"] = Tensor(np.zeros((2, 3)))
    params["W_c"] = Tensor(np.zeros((2, 3)))
    x = Tensor(np.ones((4, 2)))
    h = Tensor(np.full((4, 3), 0.8))
    out = gru_cell(x, h, params)
    np.testing.assert_allclose(out.data, 0.4)


def test_gru_gradients():
    rng = np.random.default_rng(3)
    params = gru_params(rng, input_dim=2, hidden_dim=3)
    x = Tensor(rng.standard_normal((2, 2)))
    h0 = Tensor(np.zeros((2, 3)))

    def loss():
        h = gru_cell(x, h0, params)
        h = gru_cell(x, h, params)  # unrolled twice: checks reuse of weights
        return tensor_sum(square(h))

    assert_grads_match(loss, list(params.values()))


def test_gcn_propagation_two_node_oracle():
    prop = gcn_propagation(np.array([[0.0, 1.0], [1.0, 0.0]]))
    np.testing.assert_allclose(prop, np.full((2, 2), 0.5))


def test_gcn_propagation_requires_square():
    with pytest.raises(ValueError, match="square"):
        gcn_propagation(np.ones((2, 3)))


def test_gcn_propagation_properties(demo_topo):
    from indoorpop.topology import adjacency_matrix

    A = adjacency_matrix(demo_topo)
    prop = gcn_propagation(A)
    np.testing.assert_allclose(prop, prop.T, atol=1e-12)
    # spectral radius of the renormalized operator is at most 1
    eigs = np.linalg.eigvalsh(prop)
    assert np.max(np.abs(eigs)) <= 1.0 + 1e-9
    # isolated-free graph: every row mixes in some neighbour mass
    assert np.all(prop.sum(axis=1) > 0)


def test_gcn_layer_gradients():
    rng = np.random.default_rng(6)
    prop_np = gcn_propagation(np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], dtype=float))
    prop = Tensor(prop_np)
    h = leaf(rng, 3, 4, name="h")
    w = leaf(rng, 4, 2, name="w")
    pre = prop_np @ h.data @ w.data
    assert np.min(np.abs(pre)) > 0.02  # FD step must stay clear of the relu kink
    assert np.max(pre) > 0.0  # and the loss must not be vacuously zero
    assert_grads_match(lambda: scalarize(gcn_layer(prop, h, w)), [h, w])


def test_self_attention_shape_and_gradients():
    rng = np.random.default_rng(5)
    z = leaf(rng, 1, 4, name="z")
    w_q = leaf(rng, 4, 3, name="w_q")
    w_k = leaf(rng, 4, 3, name="w_k")
    w_v = leaf(rng, 4, 3, name="w_v")
    out = self_attention(z, w_q, w_k, w_v, key_dim=3)
    assert out.shape == (1, 3)
    assert_grads_match(
        lambda: scalarize(self_attention(z, w_q, w_k, w_v, key_dim=3)),
        [z, w_q, w_k, w_v],
    )


# -- optimizer --------------------------------------------------------------------


def test_adam_matches_reference_updates():
    x = Tensor([[5.0]], requires_grad=True, name="x")
    state = AdamState(params=[x], lr=0.01)
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    m = v = 0.0
    ref = 5.0
    for t, g in enumerate([1.0, 2.0, 0.5], start=1):
        x.grad[...] = g
        adam_step(state)
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        ref -= 0.01 * (m / (1 - beta1**t)) / (np.sqrt(v / (1 - beta2**t)) + eps)
        assert x.data[0, 0] == pytest.approx(ref, abs=1e-12)


def test_adam_rejects_non_finite_grad():
    x = Tensor([[1.0]], requires_grad=True)
    state = AdamState(params=[x])
    x.grad[...] = np.nan
    with pytest.raises(NonFiniteError):
        adam_step(state)


def test_adam_descends_quadratic():
    x = Tensor([[4.0]], requires_grad=True)
    state = AdamState(params=[x], lr=0.1)
    for _ in range(300):
        zero_grad([x])
        backward(square(x))
        adam_step(state)
    assert abs(x.data[0, 0]) < 0.1


def test_init_uniform_bounds():
    rng = np.random.default_rng(6)
    t = init_uniform(rng, (50, 50), fan_in=25)
    assert t.requires_grad
    assert np.all(np.abs(t.data) <= 1.0 / 5.0)
    assert np.std(t.data) > 0.05  # actually random, not degenerate
