"""Parameterized building blocks: affine map, GRU cell and sequence, two-layer graph convolution."""
from __future__ import annotations

import numpy as np

from . import tensor as T
from .params import ParamStore
from .tensor import DimensionError, Tensor, as_tensor


def affine_forward(x, w, b) -> Tensor:
    """``x @ w + b`` with ``b`` broadcast over rows."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if x.shape[-1] != w.shape[0]:
        raise DimensionError(f"affine: x has {x.shape[-1]} columns, w has {w.shape[0]} rows")
    if b.shape[-1] != w.shape[1]:
        raise DimensionError(f"affine: bias width {b.shape[-1]} != output width {w.shape[1]}")
    return T.add(T.matmul(x, w), b)


def init_affine(params: ParamStore, prefix: str, n_in: int, n_out: int,
                rng: np.random.Generator) -> None:
    params.uniform(f"{prefix}.w", n_in, n_out, rng, fan_in=n_in)
    params.zeros(f"{prefix}.b", 1, n_out)


def affine(params: ParamStore, prefix: str, x) -> Tensor:
    return affine_forward(x, params[f"{prefix}.w"], params[f"{prefix}.b"])


def init_mlp(params: ParamStore, prefix: str, sizes: list[int], rng: np.random.Generator) -> None:
    for k, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        init_affine(params, f"{prefix}.{k}", a, b, rng)


def mlp_forward(params: ParamStore, prefix: str, x, n_layers: int) -> Tensor:
    """Affine layers with tanh between them and a linear output."""
    h = as_tensor(x)
    for k in range(n_layers):
        h = affine(params, f"{prefix}.{k}", h)
        if k < n_layers - 1:
            h = T.tanh(h)
    return h


# --- GRU -------------------------------------------------------------------

GATES = ("r", "u", "c")


def init_gru(params: ParamStore, prefix: str, n_in: int, n_hidden: int,
             rng: np.random.Generator, scale: float | None = None) -> None:
    """W_* map input, U_* map hidden state, b_* are biases (zero)."""
    for g in GATES:
        if scale is None:
            params.uniform(f"{prefix}.W_{g}", n_in, n_hidden, rng, fan_in=n_in)
            params.uniform(f"{prefix}.U_{g}", n_hidden, n_hidden, rng, fan_in=n_hidden)
        else:
            params.add(f"{prefix}.W_{g}", rng.uniform(-scale, scale, (n_in, n_hidden)))
            params.add(f"{prefix}.U_{g}", rng.uniform(-scale, scale, (n_hidden, n_hidden)))
        params.zeros(f"{prefix}.b_{g}", 1, n_hidden)


def gru_cell_forward(x_t, h_prev, params: ParamStore, prefix: str = "gru") -> Tensor:
    """One GRU step.

    r = sigma(x W_r + h U_r + b_r)
    u = sigma(x W_u + h U_u + b_u)
    c = tanh(x W_c + (r * h) U_c + b_c)
    h' = u * h + (1 - u) * c
    """
    x_t, h_prev = as_tensor(x_t), as_tensor(h_prev)
    W_r = params[f"{prefix}.W_r"]
    if x_t.shape[-1] != W_r.shape[0]:
        raise DimensionError(f"GRU input width {x_t.shape[-1]} != {W_r.shape[0]}")
    if h_prev.shape[-1] != W_r.shape[1]:
        raise DimensionError(f"GRU hidden width {h_prev.shape[-1]} != {W_r.shape[1]}")
    p = {k: params[f"{prefix}.{k}"] for k in
         ("W_r", "U_r", "b_r", "W_u", "U_u", "b_u", "W_c", "U_c", "b_c")}
    r = T.sigmoid(x_t @ p["W_r"] + h_prev @ p["U_r"] + p["b_r"])
    u = T.sigmoid(x_t @ p["W_u"] + h_prev @ p["U_u"] + p["b_u"])
    c = T.tanh(x_t @ p["W_c"] + T.mul(r, h_prev) @ p["U_c"] + p["b_c"])
    return T.mul(u, h_prev) + T.mul(1.0 - u, c)


def gru_unrolled(xs, params: ParamStore, prefix: str = "gru", h0=None) -> Tensor:
    """Composition of ``gru_cell_forward`` over time; slow but transparent."""
    xs = np.asarray(xs.data if isinstance(xs, Tensor) else xs, dtype=np.float64)
    if xs.ndim != 3:
        raise DimensionError("gru_unrolled expects (rows, steps, features)")
    hidden = params[f"{prefix}.U_r"].shape[0]
    h = as_tensor(np.zeros((xs.shape[0], hidden)) if h0 is None else h0)
    for t in range(xs.shape[1]):
        h = gru_cell_forward(xs[:, t, :], h, params, prefix)
    return h


def _sig(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def gru_sequence(xs, params: ParamStore, prefix: str = "gru", h0=None) -> Tensor:
    """Last GRU state for ``xs`` of shape (rows, steps, n_in) as a single graph node.

    Same recurrence as ``gru_cell_forward``; the backward pass is unrolled
    through time by hand instead of through one node per gate, which keeps
    the graph small.  ``xs`` is treated as a constant.
    """
    xs = np.asarray(xs.data if isinstance(xs, Tensor) else xs, dtype=np.float64)
    if xs.ndim != 3:
        raise DimensionError("gru_sequence expects (rows, steps, features)")
    names = ("W_r", "U_r", "b_r", "W_u", "U_u", "b_u", "W_c", "U_c", "b_c")
    P = [params[f"{prefix}.{k}"] for k in names]
    Wr, Ur, br, Wu, Uu, bu, Wc, Uc, bc = (t.data for t in P)
    rows, steps, n_in = xs.shape
    if n_in != Wr.shape[0]:
        raise DimensionError(f"GRU input width {n_in} != {Wr.shape[0]}")
    hidden = Ur.shape[0]
    h0t = as_tensor(np.zeros((rows, hidden)) if h0 is None else h0)
    if h0t.shape != (rows, hidden):
        raise DimensionError(f"GRU initial state {h0t.shape} != {(rows, hidden)}")
    xr, xu, xc = xs @ Wr + br, xs @ Wu + bu, xs @ Wc + bc        # (rows, steps, hidden)
    H = np.empty((steps + 1, rows, hidden))
    R, Ug, C = (np.empty((steps, rows, hidden)) for _ in range(3))
    H[0] = h0t.data
    for t in range(steps):
        h = H[t]
        R[t] = _sig(xr[:, t] + h @ Ur)
        Ug[t] = _sig(xu[:, t] + h @ Uu)
        C[t] = np.tanh(xc[:, t] + (R[t] * h) @ Uc)
        H[t + 1] = Ug[t] * h + (1.0 - Ug[t]) * C[t]

    def back(g):
        gh = np.array(g, dtype=np.float64)
        gar, gau, gac = (np.empty((steps, rows, hidden)) for _ in range(3))
        gUr, gUu, gUc = np.zeros_like(Ur), np.zeros_like(Uu), np.zeros_like(Uc)
        for t in reversed(range(steps)):
            h, r, u, c = H[t], R[t], Ug[t], C[t]
            ac = gh * (1.0 - u) * (1.0 - c * c)
            au = gh * (h - c) * u * (1.0 - u)
            rh = r * h
            gs = ac @ Uc.T
            ar = gs * h * r * (1.0 - r)
            gUc += rh.T @ ac
            gUr += h.T @ ar
            gUu += h.T @ au
            gh = gh * u + gs * r + ar @ Ur.T + au @ Uu.T
            gar[t], gau[t], gac[t] = ar, au, ac
        flat_x = xs.transpose(1, 0, 2).reshape(steps * rows, n_in)

        def wb(ga):
            ga = ga.reshape(steps * rows, hidden)
            return flat_x.T @ ga, ga.sum(axis=0, keepdims=True)

        gWr, gbr = wb(gar)
        gWu, gbu = wb(gau)
        gWc, gbc = wb(gac)
        return (gWr, gUr, gbr, gWu, gUu, gbu, gWc, gUc, gbc, gh)

    return Tensor.from_op(H[steps], P + [h0t], back, "gru_sequence")


# --- graph convolution -----------------------------------------------------

def gcn_forward(X, A, W1, W2, activation: str | None = None) -> Tensor:
    """Two propagation steps in the order ``A[(A X) W1] W2``.

    ``X`` may be (n, D) or batched (B, n, D) with ``A`` of matching leading
    shape.  ``activation='relu'`` inserts a ReLU after the first layer.
    """
    X, A, W1, W2 = as_tensor(X), as_tensor(A), as_tensor(W1), as_tensor(W2)
    if A.shape[-1] != X.shape[-2] or A.shape[-2] != A.shape[-1]:
        raise DimensionError(f"adjacency {A.shape} incompatible with features {X.shape}")
    if W1.shape[0] != X.shape[-1] or W2.shape[0] != W1.shape[1]:
        raise DimensionError(f"GCN weights {W1.shape}, {W2.shape} incompatible with {X.shape}")
    h = (A @ X) @ W1
    if activation == "relu":
        h = T.relu(h)
    elif activation is not None:
        raise ValueError(f"unknown activation {activation!r}")
    return (A @ h) @ W2
