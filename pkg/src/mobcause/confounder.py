"""Regional confounder: time-reweighted POI features, concatenation, GCN + residual."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .data import Sample
from .numerics import ParamStore, Tensor, gcn_forward, ops
from .numerics.tensor import DimensionError


def input_dim(t_in: int, n_categories: int, d_region: int) -> int:
    return t_in + 2 * n_categories + d_region


def init_confounder(params: ParamStore, n_regions: int, n_categories: int, t_in: int,
                    d_region: int, hidden: int, rng: np.random.Generator) -> None:
    D = input_dim(t_in, n_categories, d_region)
    params.uniform("time.hour", 24, n_categories, rng, fan_in=n_categories)
    params.uniform("time.dow", 7, n_categories, rng, fan_in=n_categories)
    params.uniform("region.emb", n_regions, d_region, rng, fan_in=d_region)
    params.uniform("gcn.W1", D, hidden, rng, fan_in=D)
    params.uniform("gcn.W2", hidden, D, rng, fan_in=hidden)


def poi_reweight(mean_time_emb, poi) -> Tensor:
    """Elementwise product of the window-mean time embedding and the POI share."""
    mean_time_emb, poi = ops.as_tensor(mean_time_emb), ops.as_tensor(poi)
    if mean_time_emb.shape[-1] != poi.shape[-1]:
        raise DimensionError(
            f"time embedding width {mean_time_emb.shape[-1]} != POI width {poi.shape[-1]}")
    return ops.mul(mean_time_emb, poi)


def mean_time_embedding(params: ParamStore, hour_of_day, day_of_week) -> Tensor:
    """(B, t_in) calendar indices -> (B, c) window mean of hour + weekday embeddings."""
    steps = ops.add(ops.gather_rows(params["time.hour"], hour_of_day),
                    ops.gather_rows(params["time.dow"], day_of_week))
    return ops.mean(steps, axis=-2)


def assemble_input(samples: Sequence[Sample], poi_share: np.ndarray,
                   params: ParamStore) -> Tensor:
    """Batch of (n, D) rows in the order flow | reweighted POI | time | region."""
    for name in ("time.hour", "time.dow", "region.emb"):
        if name not in params:
            raise KeyError(f"missing embedding table {name!r}")
    B = len(samples)
    n, c = poi_share.shape
    flows = np.stack([s.input_flows for s in samples])
    hod = np.stack([s.hour_of_day for s in samples])
    dow = np.stack([s.day_of_week for s in samples])
    x_bar = mean_time_embedding(params, hod, dow)                   # (B, c)
    x_bar3 = ops.reshape(x_bar, (B, 1, c))
    x_poi = poi_reweight(x_bar3, poi_share[None, :, :])             # (B, n, c)
    x_time = ops.broadcast_to(x_bar3, (B, n, c))
    reg = params["region.emb"]
    if reg.shape[0] != n:
        raise DimensionError(f"region table has {reg.shape[0]} rows for {n} regions")
    x_reg = ops.broadcast_to(ops.reshape(reg, (1, n, reg.shape[1])), (B, n, reg.shape[1]))
    return ops.concat([flows, x_poi, x_time, x_reg], axis=-1)


def confounder_from_input(x_hat: Tensor, adjacency: np.ndarray, params: ParamStore,
                          activation: str | None = None) -> Tensor:
    """z = f_GCN(X_hat, A) + X_hat."""
    return ops.add(gcn_forward(x_hat, adjacency, params["gcn.W1"], params["gcn.W2"],
                               activation=activation), x_hat)


def confounder_forward(samples: Sequence[Sample], poi_share: np.ndarray, params: ParamStore,
                       activation: str | None = None) -> Tensor:
    """(B, n, D) confounders for a batch, using each sample's window-mean adjacency."""
    x_hat = assemble_input(samples, poi_share, params)
    adj = np.stack([s.adjacency for s in samples])
    return confounder_from_input(x_hat, adj, params, activation)
