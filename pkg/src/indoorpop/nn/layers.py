"""Recurrent, graph-convolution, and attention building blocks.

All layers are functions from tensors (plus a parameter dict) to tensors, so
the same code path serves training and inference. Rows are the batch axis
throughout: inputs multiply parameter matrices from the left (``x @ W``).
"""

from __future__ import annotations

import numpy as np

from .tensor import (
    Tensor,
    add,
    hadamard,
    matmul,
    relu,
    row_softmax,
    scale,
    sigmoid,
    sub,
    tanh,
    transpose,
)

GRU_PARAM_KEYS = ("W_z", "U_z", "b_z", "W_r", "U_r", "b_r", "W_c", "U_h", "b_c")


def gru_params(rng: np.random.Generator, input_dim: int, hidden_dim: int, prefix: str = "") -> dict[str, Tensor]:
    """Gated-recurrent-cell parameters, uniformly initialized by fan-in."""
    from .optim import init_uniform

    params: dict[str, Tensor] = {}
    for gate in ("z", "r"):
        params[f"W_{gate}"] = init_uniform(rng, (input_dim, hidden_dim), input_dim, name=f"{prefix}W_{gate}")
        params[f"U_{gate}"] = init_uniform(rng, (hidden_dim, hidden_dim), hidden_dim, name=f"{prefix}U_{gate}")
        params[f"b_{gate}"] = Tensor(np.zeros((1, hidden_dim)), requires_grad=True, name=f"{prefix}b_{gate}")
    params["W_c"] = init_uniform(rng, (input_dim, hidden_dim), input_dim, name=f"{prefix}W_c")
    params["U_h"] = init_uniform(rng, (hidden_dim, hidden_dim), hidden_dim, name=f"{prefix}U_h")
    params["b_c"] = Tensor(np.zeros((1, hidden_dim)), requires_grad=True, name=f"{prefix}b_c")
    return params


def gru_cell(x: Tensor, h_prev: Tensor, params: dict[str, Tensor]) -> Tensor:
    """One recurrent update of a gated cell.

    z = sigmoid(x W_z + h U_z + b_z)          (update gate)
    r = sigmoid(x W_r + h U_r + b_r)          (reset gate)
    c = tanh(x W_c + (r * h) U_h + b_c)       (candidate state)
    h' = (1 - z) * h + z * c
    """
    z = sigmoid(add(add(matmul(x, params["W_z"]), matmul(h_prev, params["U_z"])), params["b_z"]))
    r = sigmoid(add(add(matmul(x, params["W_r"]), matmul(h_prev, params["U_r"])), params["b_r"]))
    c = tanh(add(add(matmul(x, params["W_c"]), matmul(hadamard(r, h_prev), params["U_h"])), params["b_c"]))
    one_minus_z = sub(Tensor(np.ones_like(z.data)), z)
    return add(hadamard(one_minus_z, h_prev), hadamard(z, c))


def gcn_propagation(adjacency: np.ndarray) -> np.ndarray:
    """Symmetric-normalized propagation matrix D^{-1/2} (A + I) D^{-1/2}.

    Computed once per venue graph; self-loops are added here, so pass the
    plain 0/1 adjacency.
    """
    a = np.asarray(adjacency, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"adjacency must be square, got {a.shape}")
    a_hat = a + np.eye(a.shape[0])
    inv_sqrt_deg = 1.0 / np.sqrt(a_hat.sum(axis=1))
    return (a_hat * inv_sqrt_deg[:, None]) * inv_sqrt_deg[None, :]


def gcn_layer(prop: Tensor, h: Tensor, w: Tensor) -> Tensor:
    """One graph-convolution layer: relu(P @ H @ W)."""
    return relu(matmul(matmul(prop, h), w))


def self_attention(z: Tensor, w_q: Tensor, w_k: Tensor, w_v: Tensor, key_dim: int) -> Tensor:
    """Scaled dot-product self-attention over a single flattened row.

    ``z`` is (1, F); the three projections map it to (1, K''). The score
    softmax(K^T Q / sqrt(K'')) re-weights V, giving a (1, K'') summary.
    """
    q = matmul(z, w_q)
    k = matmul(z, w_k)
    v = matmul(z, w_v)
    scores = row_softmax(scale(matmul(transpose(k), q), 1.0 / np.sqrt(key_dim)))
    return matmul(v, scores)
