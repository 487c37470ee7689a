"""Training loop, metrics, multi-seed protocol, ablation matrix and checkpoints."""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .data import FlowScaler, Sample, World, load_world, make_samples, normalize_flows, split_samples
from .model import CausalMobilityModel, ModelDims
from .numerics import Adam, NonFiniteError, backward, read_container, write_container

log = logging.getLogger(__name__)

TASKS = {"short": (6, 1), "medium": (12, 6), "long": (24, 24)}
DEFAULT_SEEDS = (1111, 2222, 3333, 4444, 5555)
CHECKPOINT_FORMAT = 1


class TrainingDiverged(RuntimeError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    t_in: int = 12
    t_out: int = 6
    lr: float = 0.001
    lr_decay: float = 0.5
    batch: int = 24
    hidden: int = 64
    treatment_hidden: int = 64
    d_region: int = 16
    alpha: float = 1.0
    max_epochs: int = 300
    early_stop_threshold: float = 9e-6
    patience: int = 10
    seeds: tuple[int, ...] = DEFAULT_SEEDS
    split_seed: int = 0
    split: tuple[float, float, float] = (0.8, 0.1, 0.1)
    stride: int = 1
    use_events: bool = True
    use_llm_intentions: bool = True
    use_reweight: bool = True
    use_cf_loss: bool = True
    weighted_ipm: bool = False
    cf_normalizer: str = "rows"
    weight_objective: str = "balance"
    task: str = "medium"

    def __post_init__(self):
        if self.t_in < 1 or self.t_out < 1:
            raise ValueError("window lengths must be positive")
        if self.batch < 1:
            raise ValueError("batch must be at least 1")
        if self.max_epochs < 1 or self.patience < 1:
            raise ValueError("max_epochs and patience must be positive")
        if self.cf_normalizer not in ("bins", "rows"):
            raise ValueError(f"unknown cf_normalizer {self.cf_normalizer!r}")
        if self.weight_objective not in ("factual", "balance"):
            raise ValueError(f"unknown weight_objective {self.weight_objective!r}")
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        object.__setattr__(self, "split", tuple(float(s) for s in self.split))

    @classmethod
    def for_task(cls, task: str, **overrides) -> "TrainConfig":
        if task not in TASKS:
            raise ValueError(f"unknown task {task!r}; choose from {sorted(TASKS)}")
        t_in, t_out = TASKS[task]
        return cls.from_json({"t_in": t_in, "t_out": t_out, **overrides, "task": task})

    def to_json(self) -> dict:
        d = asdict(self)
        d["seeds"] = list(self.seeds)
        d["split"] = list(self.split)
        return d

    @classmethod
    def from_json(cls, obj: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**obj)

    def digest(self) -> str:
        """sha256 over the canonical JSON of every field that shapes the model or data."""
        d = self.to_json()
        d.pop("seeds")   # the run seed is stored separately
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    @property
    def treatment_mode(self) -> str:
        return "intent" if self.use_llm_intentions else "presence"

    def dims(self, world: World) -> ModelDims:
        return ModelDims(
            n_regions=world.n, n_categories=world.regions.n_categories,
            t_in=self.t_in, t_out=self.t_out, hidden=self.hidden,
            treatment_hidden=self.treatment_hidden, d_region=self.d_region,
            use_events=self.use_events, treatment_mode=self.treatment_mode,
            use_reweight=self.use_reweight)


# --- data ------------------------------------------------------------------

@dataclass
class Dataset:
    raw_world: World
    world: World                 # flows z-scored with ``scaler``
    scaler: FlowScaler
    train: list[Sample]
    val: list[Sample]
    test: list[Sample]
    raw_test: list[Sample]       # same anchors as ``test`` on the raw scale
    raw_val: list[Sample]
    samples: list[Sample] = field(default_factory=list)       # every window, normalized
    raw_samples: list[Sample] = field(default_factory=list)
    split_index: dict[str, np.ndarray] = field(default_factory=dict)

    def by_anchor(self, anchor: int) -> tuple[Sample, Sample]:
        """(normalized, raw) sample whose first output hour is ``anchor``."""
        pos = self._positions().get(int(anchor))
        if pos is None:
            raise KeyError(f"no sample with anchor {anchor}")
        return self.samples[pos], self.raw_samples[pos]

    def split_of(self, anchor: int) -> str:
        pos = self._positions().get(int(anchor))
        for name, idx in self.split_index.items():
            if pos is not None and pos in set(idx.tolist()):
                return name
        raise KeyError(f"no sample with anchor {anchor}")

    def _positions(self) -> dict[int, int]:
        return {s.anchor: i for i, s in enumerate(self.samples)}


def prepare_dataset(world: World, config: TrainConfig) -> Dataset:
    raw = make_samples(world, config.t_in, config.t_out, config.stride, config.use_events)
    tr, va, te = split_samples(len(raw), config.split, config.split_seed)
    if len(tr) == 0 or len(va) == 0 or len(te) == 0:
        raise ValueError(f"{len(raw)} samples are too few for a train/val/test split")
    scaler, normed = normalize_flows(world, [raw[i] for i in tr])
    samples = make_samples(normed, config.t_in, config.t_out, config.stride, config.use_events)
    pick = lambda seq, idx: [seq[i] for i in idx]  # noqa: E731
    return Dataset(world, normed, scaler, pick(samples, tr), pick(samples, va),
                   pick(samples, te), pick(raw, te), pick(raw, va), samples, raw,
                   {"train": tr, "val": va, "test": te})


# --- metrics ---------------------------------------------------------------

def regression_metrics(pred, target) -> dict[str, float]:
    """RMSE, MAE and MAPE (%) on raw flows; MAPE skips zero targets."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"prediction shape {pred.shape} != target shape {target.shape}")
    if pred.size == 0:
        raise ValueError("empty evaluation split")
    err = pred - target
    nz = target != 0
    mape = float(np.mean(np.abs(err[nz]) / np.abs(target[nz])) * 100.0) if nz.any() else math.nan
    return {"rmse": float(np.sqrt(np.mean(err * err))), "mae": float(np.mean(np.abs(err))),
            "mape": mape}


def predict_raw(model: CausalMobilityModel, dataset: Dataset, samples: Sequence[Sample],
                batch: int = 64) -> np.ndarray:
    """(B, n, t_out) predictions mapped back to raw flow units."""
    out = []
    for i in range(0, len(samples), batch):
        chunk = samples[i:i + batch]
        z = model.predict(chunk, dataset.world)
        out.append(np.stack([dataset.scaler.inverse(p) for p in z]))
    return np.concatenate(out)


def evaluate(model: CausalMobilityModel, dataset: Dataset, split: str = "test") -> dict[str, float]:
    if split == "test":
        samples, raw = dataset.test, dataset.raw_test
    elif split == "val":
        samples, raw = dataset.val, dataset.raw_val
    else:
        raise ValueError(f"unknown split {split!r}")
    if not samples:
        raise ValueError(f"empty {split} split")
    pred = predict_raw(model, dataset, samples)
    return regression_metrics(pred, np.stack([s.target for s in raw]))


def validation_mse(model: CausalMobilityModel, dataset: Dataset, batch: int = 64) -> float:
    """Unweighted MSE on the normalized validation targets (drives scheduling)."""
    sq, count = 0.0, 0
    for i in range(0, len(dataset.val), batch):
        chunk = dataset.val[i:i + batch]
        pred = model.predict(chunk, dataset.world)
        tgt = np.stack([s.target for s in chunk])
        sq += float(np.sum((pred - tgt) ** 2))
        count += tgt.size
    return sq / count


# --- training --------------------------------------------------------------

def epoch_rng(seed: int, epoch: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), int(epoch)])))


@dataclass
class TrainState:
    epoch: int = 0                 # completed epochs
    lr: float = 0.001
    best_val: float = math.inf
    best_epoch: int = 0
    since_best: int = 0            # epochs without a threshold-sized improvement
    since_decay: int = 0
    decayed: bool = False
    best_params: dict[str, np.ndarray] | None = None
    history: list[dict] = field(default_factory=list)
    stopped: bool = False


@dataclass
class TrainResult:
    model: CausalMobilityModel
    dataset: Dataset
    config: TrainConfig
    seed: int
    state: TrainState
    metrics: dict[str, float]
    wall_seconds: float

    def metrics_record(self) -> dict:
        return {"task": self.config.task, "seed": self.seed, **self.metrics,
                "epochs": self.state.epoch, "wall_seconds": self.wall_seconds}


def _scheduler_update(state: TrainState, val: float, config: TrainConfig,
                      params_state: Callable[[], dict]) -> None:
    """Track the best model, decay the rate on plateau and decide on early stop.

    A plateau of ``patience`` epochs halves the rate; the run stops once a
    further ``patience`` epochs at the reduced rate bring no improvement.
    """
    if val < state.best_val:
        # any improvement updates the kept checkpoint
        improved_enough = val < state.best_val - config.early_stop_threshold
        state.best_val = val
        state.best_epoch = state.epoch
        state.best_params = params_state()
        if improved_enough:
            state.since_best = 0
            state.since_decay = 0
            return
    state.since_best += 1
    state.since_decay += 1
    if state.since_decay >= config.patience:
        if state.decayed and state.since_best >= config.patience:
            state.stopped = True
            return
        state.lr *= config.lr_decay
        state.decayed = True
        state.since_decay = 0
        state.since_best = 0


def train_epoch(model: CausalMobilityModel, dataset: Dataset, config: TrainConfig,
                seed: int, state: TrainState, opt: Adam) -> dict:
    order = epoch_rng(seed, state.epoch).permutation(len(dataset.train))
    totals, facts, cfs = [], [], []
    opt.lr = state.lr
    for step, start in enumerate(range(0, len(order), config.batch)):
        batch = [dataset.train[i] for i in order[start:start + config.batch]]
        try:
            losses = model.losses(batch, dataset.world, config.alpha, config.use_cf_loss,
                                  config.weighted_ipm, config.cf_normalizer,
                                  config.weight_objective)
            backward(losses.total, model.params)
            opt.step()
        except NonFiniteError as exc:
            raise TrainingDiverged(
                f"non-finite value at epoch {state.epoch + 1}, step {step}: {exc}") from exc
        totals.append(losses.total.item())
        facts.append(losses.factual.item())
        cfs.append(losses.counterfactual.item())
    return {"epoch": state.epoch + 1, "loss": float(np.mean(totals)),
            "factual": float(np.mean(facts)), "cf": float(np.mean(cfs)), "lr": state.lr}


def train(dataset: Dataset, config: TrainConfig, seed: int, *,
          checkpoint: str | Path | None = None, resume: str | Path | None = None,
          max_epochs: int | None = None, on_epoch: Callable[[dict], None] | None = None
          ) -> TrainResult:
    """Train one model; restores the best-validation parameters before testing.

    ``checkpoint`` is rewritten after every epoch with the full resumable
    state; ``resume`` continues from such a file.  ``max_epochs`` caps this
    call without changing the config (useful for interrupt/resume).
    """
    t0 = time.perf_counter()
    model = CausalMobilityModel(config.dims(dataset.world), seed)
    state = TrainState(lr=config.lr)
    if resume is not None:
        model, state = load_checkpoint(resume, config, dataset.world, expect_seed=seed)
    opt = Adam(model.params, state.lr)
    limit = config.max_epochs if max_epochs is None else min(config.max_epochs, max_epochs)
    while not state.stopped and state.epoch < limit:
        rec = train_epoch(model, dataset, config, seed, state, opt)
        val = validation_mse(model, dataset)
        if not math.isfinite(val):
            raise TrainingDiverged(f"validation MSE is {val} at epoch {state.epoch + 1}")
        rec["val_mse"] = val
        state.epoch += 1
        _scheduler_update(state, val, config, model.params.state)
        state.history.append(rec)
        log.info("seed %d epoch %d loss %.5f val %.5f lr %.2e", seed, state.epoch,
                 rec["loss"], val, rec["lr"])
        if on_epoch is not None:
            on_epoch(rec)
        if checkpoint is not None:
            save_checkpoint(checkpoint, model, state, config, dataset.scaler)
    if state.best_params is not None:
        model.params.load_state(state.best_params)
    metrics = evaluate(model, dataset, "test")
    return TrainResult(model, dataset, config, seed, state, metrics, time.perf_counter() - t0)


# --- checkpoints -----------------------------------------------------------

def _payload_digest(arrays: dict[str, np.ndarray]) -> str:
    h = hashlib.sha256()
    for name, arr in arrays.items():
        h.update(name.encode())
        h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return h.hexdigest()


def save_checkpoint(path, model: CausalMobilityModel, state: TrainState, config: TrainConfig,
                    scaler: FlowScaler) -> None:
    p = model.params
    arrays: dict[str, np.ndarray] = {}
    for name, t in p.items():
        arrays[f"param/{name}"] = t.data
    for name in p:
        arrays[f"adam1/{name}"] = p.moment1[name]
        arrays[f"adam2/{name}"] = p.moment2[name]
    if state.best_params is not None:
        for name, v in state.best_params.items():
            arrays[f"best/{name}"] = v
    header = {
        "format": CHECKPOINT_FORMAT,
        "config": config.to_json(),
        "config_hash": config.digest(),
        "dims": asdict(model.dims),
        "seed": model.seed,
        "scaler": scaler.to_json(),
        "adam_steps": p.step_count,
        "state": {k: v for k, v in state.__dict__.items() if k != "best_params"},
        "payload_sha256": _payload_digest(arrays),
    }
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(str(path) + ".tmp")
    write_container(tmp, header, arrays)
    tmp.replace(path)


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    header, arrays = read_container(path)
    if header.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path}: unsupported checkpoint format {header.get('format')}")
    if _payload_digest(arrays) != header.get("payload_sha256"):
        raise CheckpointError(f"{path}: payload digest mismatch (corrupted file)")
    return header, arrays


def load_checkpoint(path, config: TrainConfig | None = None, world: World | None = None,
                    expect_seed: int | None = None
                    ) -> tuple[CausalMobilityModel, TrainState]:
    """Rebuild a model and its training state; refuses on any mismatch."""
    header, arrays = read_checkpoint(path)
    stored = TrainConfig.from_json(header["config"])
    if stored.digest() != header["config_hash"]:
        raise CheckpointError(f"{path}: stored config does not match its hash")
    if config is not None and config.digest() != header["config_hash"]:
        raise CheckpointError(f"{path}: config hash mismatch; checkpoint was trained "
                              f"with a different configuration")
    dims = ModelDims(**header["dims"])
    if world is not None:
        want = stored.dims(world)
        if want != dims:
            raise CheckpointError(f"{path}: checkpoint dimensions {dims} do not fit this "
                                  f"world ({want})")
    if expect_seed is not None and header["seed"] != expect_seed:
        raise CheckpointError(f"{path}: checkpoint seed {header['seed']} != {expect_seed}")
    model = CausalMobilityModel(dims, header["seed"])
    p = model.params
    try:
        p.load_state({n: arrays[f"param/{n}"] for n in p})
        for n in p:
            p.moment1[n] = arrays[f"adam1/{n}"].copy()
            p.moment2[n] = arrays[f"adam2/{n}"].copy()
    except KeyError as exc:
        raise CheckpointError(f"{path}: missing tensor {exc}") from exc
    except ValueError as exc:
        raise CheckpointError(f"{path}: {exc}") from exc
    p.step_count = int(header["adam_steps"])
    st = dict(header["state"])
    best = {n: arrays[f"best/{n}"] for n in p if f"best/{n}" in arrays}
    state = TrainState(**st, best_params=best or None)
    return model, state


def checkpoint_scaler(path) -> FlowScaler:
    header, _ = read_checkpoint(path)
    return FlowScaler.from_json(header["scaler"])


def checkpoint_config(path) -> TrainConfig:
    header, _ = read_checkpoint(path)
    return TrainConfig.from_json(header["config"])


def export_best(result: TrainResult, path) -> None:
    """Write a checkpoint whose live parameters are the restored best ones."""
    save_checkpoint(path, result.model, result.state, result.config, result.dataset.scaler)


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# --- multi-seed protocol and ablations --------------------------------------

def format_mean_std(values: Sequence[float]) -> str:
    """'mean/std' with two decimals; std uses the n-1 denominator."""
    v = np.asarray(values, dtype=np.float64)
    std = float(np.std(v, ddof=1)) if len(v) > 1 else 0.0
    return f"{float(np.mean(v)):.2f}/{std:.2f}"


def run_seeds(dataset: Dataset, config: TrainConfig, out_dir: str | Path | None = None,
              seeds: Sequence[int] | None = None, label: str = "full") -> list[dict]:
    records = []
    for seed in (config.seeds if seeds is None else seeds):
        run_dir = None if out_dir is None else Path(out_dir) / label / f"seed{seed}"
        res = train(dataset, config, seed)
        rec = res.metrics_record()
        rec["variant"] = label
        records.append(rec)
        if run_dir is not None:
            run_dir.mkdir(parents=True, exist_ok=True)
            export_best(res, run_dir / "checkpoint.bin")
            (run_dir / "metrics.json").write_text(json.dumps(
                {k: rec[k] for k in ("task", "seed", "rmse", "mae", "mape", "epochs",
                                     "wall_seconds")}, indent=2))
    return records


def summary_rows(records: Sequence[dict]) -> list[dict]:
    """One row per (variant, task) with 'mean/std' strings for each metric."""
    groups: dict[tuple[str, str], list[dict]] = {}
    for r in records:
        groups.setdefault((r.get("variant", "full"), r["task"]), []).append(r)
    rows = []
    for (variant, task), rs in groups.items():
        rows.append({"variant": variant, "task": task, "n_seeds": len(rs),
                     **{m: format_mean_std([r[m] for r in rs]) for m in ("rmse", "mae", "mape")}})
    return rows


VARIANT_LABELS = {
    "naive": "Ours (Naive)", "wo_llm": "Ours (wo LLM)", "wo_r": "Ours (wo R)",
    "wo_lcf": "Ours (wo L_cf)", "full": "Ours",
}


def write_table(records: Sequence[dict], path) -> list[list[str]]:
    """Table with one row per variant and RMSE/MAE/MAPE columns per task."""
    rows = summary_rows(records)
    tasks = [t for t in TASKS if any(r["task"] == t for r in rows)]
    variants = [v for v in VARIANT_LABELS if any(r["variant"] == v for r in rows)]
    variants += sorted({r["variant"] for r in rows} - set(variants))
    header = ["Model"] + [f"{t} {m}" for t in tasks for m in ("RMSE", "MAE", "MAPE")]
    out = [header]
    for v in variants:
        line = [VARIANT_LABELS.get(v, v)]
        for t in tasks:
            hit = [r for r in rows if r["variant"] == v and r["task"] == t]
            line += ([hit[0]["rmse"], hit[0]["mae"], hit[0]["mape"]] if hit else ["", "", ""])
        out.append(line)
    with open(path, "w", newline="") as fh:
        csv.writer(fh).writerows(out)
    return out


def ablation_configs(base: TrainConfig) -> dict[str, TrainConfig]:
    return {
        "naive": replace(base, use_events=False),
        "wo_llm": replace(base, use_llm_intentions=False),
        "wo_r": replace(base, use_reweight=False),
        "wo_lcf": replace(base, alpha=0.0),
        "full": base,
    }


@dataclass
class AblationResult:
    records: list[dict]
    naive_trace: list[str]
    table: list[list[str]] | None = None


def run_ablation_matrix(world_dir, base: TrainConfig, out_dir: str | Path | None = None,
                        variants: Sequence[str] | None = None,
                        seeds: Sequence[int] | None = None) -> AblationResult:
    """Train every variant over every seed on the world stored in ``world_dir``.

    The Naive variant loads its own copy of the world without the events file;
    the files it opened are returned for instrumentation.
    """
    cfgs = ablation_configs(base)
    chosen = list(cfgs) if variants is None else list(variants)
    unknown = set(chosen) - set(cfgs)
    if unknown:
        raise ValueError(f"unknown variants {sorted(unknown)}")
    records: list[dict] = []
    naive_trace: list[str] = []
    full_world = None
    for name in chosen:
        cfg = cfgs[name]
        if name == "naive":
            world = load_world(world_dir, load_events_file=False, trace=naive_trace)
        else:
            full_world = full_world or load_world(world_dir)
            world = full_world
        ds = prepare_dataset(world, cfg)
        records += run_seeds(ds, cfg, out_dir, seeds, label=name)
    table = None
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        table = write_table(records, Path(out_dir) / "table.csv")
        (Path(out_dir) / "runs.json").write_text(json.dumps(records, indent=2))
    return AblationResult(records, naive_trace, table)
