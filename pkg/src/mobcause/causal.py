"""Treatment encoding, similarity bins, inference / re-weighting heads and losses."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import N_INTENTIONS, EventRecord, Sample, World
from .numerics import ParamStore, Tensor, gru_sequence, mlp_forward, ops
from .numerics.tensor import DimensionError

BIN_WIDTH = 0.1


# --- treatment sequences ---------------------------------------------------

def treatment_sequences(samples: Sequence[Sample], world: World, mode: str = "intent"
                        ) -> np.ndarray:
    """(B, n, t_in + t_out, f) per-slot treatments.

    ``mode='intent'`` stores intention scores / 100 (co-occurring events are
    averaged); ``mode='presence'`` stores a single 0/1 indicator.
    """
    if not samples:
        raise ValueError("no samples")
    n = world.n
    L = samples[0].t_in + samples[0].t_out
    feat = N_INTENTIONS if mode == "intent" else 1
    out = np.zeros((len(samples), n, L, feat))
    for b, s in enumerate(samples):
        slots = s.events
        if not slots:
            continue
        acc: dict[tuple[int, int], list[np.ndarray]] = {}
        for slot in slots:
            acc.setdefault((slot.region, slot.offset), []).append(
                world.events[slot.event].intentions.as_array())
        for (r, o), vecs in acc.items():
            out[b, r, o] = np.mean(vecs, axis=0) if mode == "intent" else 1.0
    return out


def single_event_sequence(intentions, t_in: int, t_out: int, offset: int,
                          mode: str = "intent") -> np.ndarray:
    """(L, f) sequence holding one event's scores at ``offset``."""
    feat = N_INTENTIONS if mode == "intent" else 1
    seq = np.zeros((t_in + t_out, feat))
    if intentions is not None:
        arr = intentions.as_array() if hasattr(intentions, "as_array") else np.asarray(intentions)
        if mode == "intent":
            seq[offset] = arr
        elif np.any(arr):
            seq[offset] = 1.0
    return seq


# --- encoder and bins ------------------------------------------------------

def encode_treatment(seq, params: ParamStore, prefix: str = "gru") -> Tensor:
    """Final GRU state for each treatment sequence: (rows, L, f) -> (rows, h_T)."""
    seq = np.asarray(seq, dtype=np.float64)
    if seq.ndim == 2:
        seq = seq[None]
    expected = params[f"{prefix}.W_r"].shape[0]
    if seq.shape[-1] != expected:
        raise DimensionError(f"treatment width {seq.shape[-1]} != encoder input {expected}")
    return gru_sequence(seq, params, prefix)


def baseline_treatment(params: ParamStore, length: int, prefix: str = "gru") -> Tensor:
    feat = params[f"{prefix}.W_r"].shape[0]
    return encode_treatment(np.zeros((1, length, feat)), params, prefix)


def n_bins(width: float = BIN_WIDTH) -> int:
    return int(round(2.0 / width))


def cosine_similarity(rep, baseline) -> np.ndarray:
    """Row-wise cosine against one baseline; zero-norm rows count as similarity 1."""
    rep = np.atleast_2d(np.asarray(rep, dtype=np.float64))
    base = np.asarray(baseline, dtype=np.float64).reshape(-1)
    nr = np.linalg.norm(rep, axis=1)
    nb = np.linalg.norm(base)
    sims = np.ones(rep.shape[0])
    ok = (nr > 0) & (nb > 0)
    sims[ok] = (rep[ok] @ base) / (nr[ok] * nb)
    return np.clip(sims, -1.0, 1.0)


def similarity_bin(sim, width: float = BIN_WIDTH) -> np.ndarray:
    J = n_bins(width)
    idx = np.floor((np.asarray(sim) + 1.0) / width + 1e-9).astype(int)
    return np.clip(idx, 0, J - 1)


def cosine_bin(rep, baseline, width: float = BIN_WIDTH):
    """(similarity, bin) for a single representation."""
    sim = cosine_similarity(rep, baseline)
    return float(sim[0]), int(similarity_bin(sim, width)[0])


def bin_interval(j: int, width: float = BIN_WIDTH) -> tuple[float, float]:
    lo = -1.0 + j * width
    return round(lo, 10), round(lo + width, 10)


# --- heads -----------------------------------------------------------------

def infer(z, rep, params: ParamStore, prefix: str = "inf", n_layers: int = 2) -> Tensor:
    """Future flows (normalized) from confounder rows and treatment rows."""
    x = ops.concat([z, rep], axis=-1) if rep is not None else ops.as_tensor(z)
    if x.shape[-1] != params[f"{prefix}.0.w"].shape[0]:
        raise DimensionError(f"head input width {x.shape[-1]} != "
                             f"{params[f'{prefix}.0.w'].shape[0]}")
    return mlp_forward(params, prefix, x, n_layers)


def reweight(z, rep, params: ParamStore, prefix: str = "rwt", n_layers: int = 2) -> Tensor:
    """Positive sample weights ``1 + softplus(MLP)``, rescaled to mean 1 over the batch."""
    raw = ops.add(ops.softplus(infer(z, rep, params, prefix, n_layers)), 1.0)
    return ops.mul(raw, ops.reciprocal(ops.mean(raw)))


def factual_loss(y_hat, y, w=None) -> Tensor:
    """mean_i w_i * mean_h (y_hat - y)^2."""
    y_hat = ops.as_tensor(y_hat)
    y = np.asarray(y.data if isinstance(y, Tensor) else y, dtype=np.float64)
    if y_hat.shape != y.shape:
        raise DimensionError(f"prediction shape {y_hat.shape} != target shape {y.shape}")
    per_row = ops.mean(ops.square(ops.sub(y_hat, y)), axis=-1, keepdims=True)
    if w is not None:
        w = ops.as_tensor(w)
        if w.data.size != per_row.data.size:
            raise DimensionError(f"{w.data.size} weights for {per_row.data.size} rows")
        per_row = ops.mul(per_row, ops.reshape(w, per_row.shape))
    return ops.mean(per_row)


# --- MMD -------------------------------------------------------------------

def _sqdist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * (a @ b.T)
    return np.maximum(d, 0.0)


def _median_from_sqdist(d2: np.ndarray) -> float:
    iu = np.triu_indices(len(d2), k=1)
    med = float(np.median(np.sqrt(d2[iu])))
    return med if med > 1e-12 else 1.0


def median_bandwidth(x: np.ndarray, y: np.ndarray) -> float:
    """Median pairwise Euclidean distance over the union of both sets."""
    u = np.concatenate([x, y])
    return _median_from_sqdist(_sqdist(u, u))


def mmd_parts(x: np.ndarray, y: np.ndarray, bandwidth: float | None = None,
              wx: np.ndarray | None = None, wy: np.ndarray | None = None,
              sqdists: tuple[np.ndarray, np.ndarray, np.ndarray] | None = None):
    """Weighted biased V-statistic of squared MMD with an RBF kernel.

    ``sqdists`` optionally supplies precomputed (xx, yy, xy) squared
    distances.  Returns (value, bandwidth, kernels) so callers can reuse the
    pieces.
    """
    m, k = len(x), len(y)
    a = np.full(m, 1.0 / m) if wx is None else np.asarray(wx, float) / np.sum(wx)
    b = np.full(k, 1.0 / k) if wy is None else np.asarray(wy, float) / np.sum(wy)
    if sqdists is None:
        sqdists = (_sqdist(x, x), _sqdist(y, y), _sqdist(x, y))
    dxx, dyy, dxy = sqdists
    if bandwidth is None:
        bandwidth = _median_from_sqdist(np.block([[dxx, dxy], [dxy.T, dyy]]))
    s2 = 2.0 * bandwidth * bandwidth
    kxx, kyy, kxy = np.exp(-dxx / s2), np.exp(-dyy / s2), np.exp(-dxy / s2)
    val = a @ kxx @ a + b @ kyy @ b - 2.0 * (a @ kxy @ b)
    return max(float(val), 0.0), bandwidth, (a, b, kxx, kyy, kxy)


def mmd(set_a, set_b, bandwidth: float | None = None, weights_b=None,
        sqdists: tuple[np.ndarray, np.ndarray, np.ndarray] | None = None) -> Tensor:
    """Squared MMD between two sets of row vectors (differentiable in both sets).

    Bandwidth defaults to the median heuristic and is held constant for the
    gradient.  Optional ``weights_b`` re-weight the second set; passing a
    Tensor makes the value differentiable in the weights as well.
    """
    xa, xb = ops.as_tensor(set_a), ops.as_tensor(set_b)
    wt = weights_b if isinstance(weights_b, Tensor) else None
    if wt is not None:
        weights_b = wt.data.reshape(-1)
    if xa.ndim != 2 or xb.ndim != 2 or xa.shape[1] != xb.shape[1]:
        raise DimensionError(f"mmd needs two (m, d) sets, got {xa.shape} and {xb.shape}")
    if len(xa.data) < 2 or len(xb.data) < 2:
        raise ValueError("mmd needs at least two vectors per set")
    x, y = xa.data, xb.data
    val, bw, (a, b, kxx, kyy, kxy) = mmd_parts(x, y, bandwidth, None, weights_b, sqdists)
    inv = 1.0 / (bw * bw)

    def back(g):
        g = float(g)
        ka, kb = kxx @ a, kyy @ b
        gx = -2.0 * inv * a[:, None] * (x * ka[:, None] - kxx @ (a[:, None] * x))
        gx += 2.0 * inv * a[:, None] * (x * (kxy @ b)[:, None] - kxy @ (b[:, None] * y))
        gy = -2.0 * inv * b[:, None] * (y * kb[:, None] - kyy @ (b[:, None] * y))
        gy += 2.0 * inv * b[:, None] * (y * (kxy.T @ a)[:, None] - kxy.T @ (a[:, None] * x))
        if wt is None:
            return g * gx, g * gy
        # b = w / sum(w): push d val / d b through the normalization
        gb = 2.0 * (kyy @ b) - 2.0 * (kxy.T @ a)
        gw = (gb - gb @ b) / float(np.sum(weights_b))
        return g * gx, g * gy, (g * gw).reshape(wt.shape)

    parents = (xa, xb) if wt is None else (xa, xb, wt)
    return Tensor.from_op(np.array(val), parents, back, "mmd")


def counterfactual_loss(z, bins, min_members: int = 2, weights=None,
                        normalizer: str = "bins", bandwidth: float | None = None) -> Tensor:
    """Average over occupied bins of the largest MMD to any other occupied bin.

    Bins with fewer than ``min_members`` rows are skipped; fewer than two
    occupied bins gives 0.  ``normalizer='rows'`` divides by the row count
    instead of the number of occupied bins.  A fixed ``bandwidth`` replaces
    the per-pair median heuristic.
    """
    z = ops.as_tensor(z)
    bins = np.asarray(bins)
    if z.data.ndim != 2 or len(bins) != z.shape[0]:
        raise DimensionError("counterfactual_loss needs (rows, d) z and one bin per row")
    groups = [j for j in np.unique(bins) if (bins == j).sum() >= min_members]
    if len(groups) < 2:
        return Tensor(0.0)
    members = {j: np.flatnonzero(bins == j) for j in groups}
    w_node = weights if isinstance(weights, Tensor) else None
    w = None if weights is None else np.asarray(
        weights.data if w_node is not None else weights).reshape(-1)
    d2 = _sqdist(z.data, z.data)
    within = {j: d2[np.ix_(members[j], members[j])] for j in groups}
    tri = {j: within[j][np.triu_indices(len(members[j]), k=1)] for j in groups}
    cross: dict[tuple[int, int], np.ndarray] = {}

    def blocks(j, i):
        dxy = cross[(j, i)] if (j, i) in cross else cross[(i, j)].T
        return within[j], within[i], dxy

    bandwidths: dict[tuple[int, int], float] = {}
    values: dict[tuple[int, int], float] = {}
    for ii, i in enumerate(groups):
        for j in groups[ii + 1:]:
            cross[(j, i)] = d2[np.ix_(members[j], members[i])]
            # union pairs = pairs inside each bin plus every cross pair
            med = float(np.median(np.sqrt(np.concatenate(
                [tri[j], tri[i], cross[(j, i)].ravel()]))))
            bw = bandwidth if bandwidth is not None else (med if med > 1e-12 else 1.0)
            bandwidths[(j, i)] = bandwidths[(i, j)] = bw
            wi = None if w is None else w[members[i]]
            wj = None if w is None else w[members[j]]
            zj, zi = z.data[members[j]], z.data[members[i]]
            # ordered pairs differ only when the conditional side is re-weighted
            values[(j, i)] = mmd_parts(zj, zi, bw, wy=wi, sqdists=blocks(j, i))[0]
            values[(i, j)] = (values[(j, i)] if w is None else
                              mmd_parts(zi, zj, bw, wy=wj, sqdists=blocks(i, j))[0])
    terms = []
    for i in groups:
        j_star = max((j for j in groups if j != i), key=lambda j: (values[(j, i)], -j))
        wi = None if w is None else w[members[i]]
        if w_node is not None:
            wi = ops.index(ops.reshape(w_node, (-1,)), members[i])
        terms.append(mmd(ops.index(z, members[j_star]), ops.index(z, members[i]),
                         bandwidth=bandwidths[(j_star, i)], weights_b=wi,
                         sqdists=blocks(j_star, i)))
    total = terms[0]
    for t in terms[1:]:
        total = ops.add(total, t)
    denom = len(groups) if normalizer == "bins" else z.shape[0]
    return ops.mul(total, 1.0 / denom)


def total_loss(l_f, l_cf, alpha: float) -> Tensor:
    l_f = ops.as_tensor(l_f)
    if alpha == 0:
        return l_f
    return ops.add(l_f, ops.mul(ops.as_tensor(l_cf), float(alpha)))


@dataclass
class BatchLosses:
    total: Tensor
    factual: Tensor
    counterfactual: Tensor
    weights: np.ndarray
    bins: np.ndarray | None
