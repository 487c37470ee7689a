"""The full predictor: confounder network, treatment encoder and the two heads."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import causal
from .confounder import confounder_forward, init_confounder, input_dim
from .data import N_INTENTIONS, Sample, World
from .numerics import ParamStore, Tensor, init_gru, init_mlp, make_rng, ops


@dataclass(frozen=True)
class ModelDims:
    n_regions: int
    n_categories: int
    t_in: int
    t_out: int
    hidden: int = 64
    treatment_hidden: int = 64
    d_region: int = 16
    use_events: bool = True
    treatment_mode: str = "intent"     # "intent" or "presence"
    use_reweight: bool = True
    gcn_activation: str | None = None

    @property
    def D(self) -> int:
        return input_dim(self.t_in, self.n_categories, self.d_region)

    @property
    def seq_len(self) -> int:
        return self.t_in + self.t_out

    @property
    def treatment_features(self) -> int:
        return N_INTENTIONS if self.treatment_mode == "intent" else 1


@dataclass
class Forward:
    z: Tensor             # (rows, D)
    rep: Tensor | None    # (rows, h_T)
    baseline: Tensor | None
    y_hat: Tensor         # (rows, t_out)
    weights: Tensor | None


class CausalMobilityModel:
    def __init__(self, dims: ModelDims, seed: int):
        self.dims = dims
        self.seed = seed
        rng = make_rng(seed)
        self.params = ParamStore()
        d = dims
        init_confounder(self.params, d.n_regions, d.n_categories, d.t_in, d.d_region,
                        d.hidden, rng)
        head_in = d.D
        if d.use_events:
            init_gru(self.params, "gru", d.treatment_features, d.treatment_hidden, rng)
            head_in += d.treatment_hidden
        init_mlp(self.params, "inf", [head_in, d.hidden, d.t_out], rng)
        if d.use_events and d.use_reweight:
            init_mlp(self.params, "rwt", [head_in, d.hidden, 1], rng)

    # -- pieces -------------------------------------------------------------
    def confounder(self, samples: Sequence[Sample], poi_share: np.ndarray) -> Tensor:
        z = confounder_forward(samples, poi_share, self.params, self.dims.gcn_activation)
        B, n, D = z.shape
        return ops.reshape(z, (B * n, D))

    def sequences(self, samples: Sequence[Sample], world: World) -> np.ndarray:
        seq = causal.treatment_sequences(samples, world, self.dims.treatment_mode)
        B, n, L, f = seq.shape
        return seq.reshape(B * n, L, f)

    def encode(self, seq: np.ndarray) -> Tensor:
        return causal.encode_treatment(seq, self.params)

    def baseline(self) -> Tensor:
        return causal.baseline_treatment(self.params, self.dims.seq_len)

    def heads(self, z: Tensor, rep: Tensor | None):
        y_hat = causal.infer(z, rep, self.params)
        w = None
        if rep is not None and self.dims.use_reweight:
            w = causal.reweight(z, rep, self.params)
        return y_hat, w

    def encode_unique(self, seq: np.ndarray) -> tuple[Tensor, Tensor]:
        """Encode each distinct sequence once; row 0 is always the all-zero baseline.

        Returns (per-row representations, baseline).
        """
        rows, L, f = seq.shape
        flat = np.ascontiguousarray(seq.reshape(rows, L * f)) + 0.0   # folds -0.0 into 0.0
        idx = np.zeros(rows, dtype=np.int64)
        seen: dict[bytes, int] = {}
        distinct = [np.zeros(L * f)]
        for r in np.flatnonzero(np.any(flat != 0, axis=1)):
            key = flat[r].tobytes()
            if key not in seen:
                seen[key] = len(distinct)
                distinct.append(flat[r])
            idx[r] = seen[key]
        enc = self.encode(np.stack(distinct).reshape(-1, L, f))
        return ops.index(enc, idx), ops.index(enc, np.zeros(1, dtype=np.int64))

    def forward(self, samples: Sequence[Sample], world: World, seq: np.ndarray | None = None
                ) -> Forward:
        z = self.confounder(samples, world.regions.poi_share())
        rep = base = None
        if self.dims.use_events:
            if seq is None:
                seq = self.sequences(samples, world)
            rep, base = self.encode_unique(seq)
        y_hat, w = self.heads(z, rep)
        return Forward(z, rep, base, y_hat, w)

    def losses(self, samples: Sequence[Sample], world: World, alpha: float,
               use_cf_loss: bool = True, weighted_ipm: bool = False,
               cf_normalizer: str = "bins", weight_objective: str = "factual",
               cf_bandwidth: float | None = None) -> causal.BatchLosses:
        """Batch objective.

        ``weight_objective='factual'`` lets the factual loss train the weight
        head; ``'balance'`` holds the weights constant there and trains them
        only through the weighted counterfactual term.
        """
        fw = self.forward(samples, world)
        y = np.concatenate([s.target for s in samples], axis=0)
        balance = weight_objective == "balance" and fw.weights is not None
        w_fact = Tensor(fw.weights.data) if balance else fw.weights
        l_f = causal.factual_loss(fw.y_hat, y, w_fact)
        l_cf: Tensor = Tensor(0.0)
        bins = None
        if fw.rep is not None:
            sims = causal.cosine_similarity(fw.rep.data, fw.baseline.data)
            bins = causal.similarity_bin(sims)
            if use_cf_loss and alpha != 0:
                l_cf = causal.counterfactual_loss(
                    fw.z, bins, weights=fw.weights if (weighted_ipm or balance) else None,
                    normalizer=cf_normalizer, bandwidth=cf_bandwidth)
        total = causal.total_loss(l_f, l_cf, alpha if use_cf_loss else 0.0)
        w = fw.weights.data.reshape(-1) if fw.weights is not None else np.ones(len(y))
        return causal.BatchLosses(total, l_f, l_cf, w, bins)

    def predict(self, samples: Sequence[Sample], world: World, seq: np.ndarray | None = None
                ) -> np.ndarray:
        """(B, n, t_out) normalized predictions."""
        fw = self.forward(samples, world, seq)
        return fw.y_hat.data.reshape(len(samples), world.n, self.dims.t_out)
