"""Counterfactual analyses on a trained model.

Every function here reads model parameters and never writes them; effects
are differences between two predictions on the same confounder that differ
only in the treatment representation.
"""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import causal
from .data import EventRecord, IntentionVector, Sample, format_timestamp
from .extract.quadrant import categorize_event
from .model import CausalMobilityModel
from .numerics import Tensor
from .training import Dataset


class AnalysisError(ValueError):
    pass


def _require_events(model: CausalMobilityModel) -> None:
    if not model.dims.use_events:
        raise AnalysisError("model was trained without treatments; effects are undefined")


def _confounder(model: CausalMobilityModel, sample: Sample, dataset: Dataset) -> Tensor:
    return model.confounder([sample], dataset.world.regions.poi_share())


def _predict_rows(model: CausalMobilityModel, z: Tensor, reps: np.ndarray) -> np.ndarray:
    return causal.infer(z, Tensor(reps), model.params).data


def _event_rows(event: EventRecord, dataset: Dataset) -> list[int]:
    index = dataset.world.regions.index
    rows = [index[c] for c in event.region_codes if c in index]
    if not rows:
        raise AnalysisError(f"event {event.article_id!r} has no region in this world")
    return rows


def _check_event(event: EventRecord) -> None:
    if not event.valid or event.intentions is None:
        raise AnalysisError(f"event {event.article_id!r} is invalid: {event.error}")


def event_offset(event: EventRecord, sample: Sample, dataset: Dataset) -> int:
    """Slot of the event inside the sample's treatment sequence."""
    h = dataset.world.mobility.hour_index(event.event_time.replace(minute=0, second=0,
                                                                   microsecond=0))
    if h is None:
        raise AnalysisError(f"event {event.article_id!r} lies outside the series")
    off = h - (sample.anchor - sample.t_in)
    if not 0 <= off < sample.t_in + sample.t_out:
        raise AnalysisError(f"event {event.article_id!r} is outside window at anchor "
                            f"{sample.anchor}")
    return off


def treatment_effect(model: CausalMobilityModel, dataset: Dataset, sample: Sample,
                     treatments: dict[int, np.ndarray]) -> np.ndarray:
    """(n, t_out) raw-scale change when the given region rows receive ``treatments``.

    ``treatments`` maps a region row to an (L, f) sequence; all other rows keep
    the baseline.  The baseline and treated passes share shapes and inputs
    outside the treated rows, so untouched rows differ by exactly zero.
    """
    _require_events(model)
    n, L, f = dataset.world.n, model.dims.seq_len, model.dims.treatment_features
    seq = np.zeros((n, L, f))
    for r, s in treatments.items():
        seq[r] = s
    rep, base = model.encode_unique(seq)
    z = _confounder(model, sample, dataset)
    y_t = _predict_rows(model, z, rep.data)
    y_b = _predict_rows(model, z, np.repeat(base.data, n, axis=0))
    return dataset.scaler.inverse_delta(y_t - y_b)


def _rep_effect(model: CausalMobilityModel, dataset: Dataset, sample: Sample,
                rows: Sequence[int], rep: np.ndarray) -> np.ndarray:
    """Like ``treatment_effect`` but substitutes an already-encoded representation."""
    n = dataset.world.n
    base = model.baseline().data
    reps = np.repeat(base, n, axis=0)
    reps[list(rows)] = rep
    z = _confounder(model, sample, dataset)
    y_t = _predict_rows(model, z, reps)
    y_b = _predict_rows(model, z, np.repeat(base, n, axis=0))
    return dataset.scaler.inverse_delta(y_t - y_b)


# --- ATE ---------------------------------------------------------------------

@dataclass
class AteReport:
    event_id: str
    anchor: int
    regions: list[str]
    hours: list[str]                 # output timestamps
    tau: np.ndarray                  # (len(regions), t_out), raw flow units

    @property
    def total(self) -> float:
        return float(self.tau.sum())

    @property
    def mean(self) -> float:
        return float(self.tau.mean())

    def to_json(self) -> dict:
        return {"event_id": self.event_id, "anchor": self.anchor, "regions": self.regions,
                "hours": self.hours, "tau": self.tau.tolist(), "total": self.total,
                "mean": self.mean}


def _output_stamps(dataset: Dataset, sample: Sample) -> list[str]:
    ts = dataset.world.mobility.timestamps
    return [format_timestamp(ts[h]) for h in range(sample.anchor, sample.anchor + sample.t_out)]


def estimate_ate(model: CausalMobilityModel, dataset: Dataset, sample: Sample,
                 event: EventRecord, offset: int | None = None) -> AteReport:
    """Effect of ``event`` alone versus the baseline treatment on one window."""
    _check_event(event)
    rows = _event_rows(event, dataset)
    off = event_offset(event, sample, dataset) if offset is None else offset
    seq = causal.single_event_sequence(event.intentions, sample.t_in, sample.t_out, off,
                                       model.dims.treatment_mode)
    eff = treatment_effect(model, dataset, sample, {r: seq for r in rows})
    ids = dataset.world.regions.region_ids
    return AteReport(event.article_id, sample.anchor, [ids[r] for r in rows],
                     _output_stamps(dataset, sample), eff[rows])


# --- counterfactual response -----------------------------------------------

@dataclass
class ResponseCurve:
    region: str
    anchor: int
    offset: int
    hours: list[str]
    delta: np.ndarray                # (t_out,) raw flow units

    def to_json(self) -> dict:
        return {"region": self.region, "anchor": self.anchor, "offset": self.offset,
                "hours": self.hours, "delta": self.delta.tolist()}


def counterfactual_response(model: CausalMobilityModel, dataset: Dataset, region: str | int,
                            anchor: int, intentions, offset: int | None = None
                            ) -> ResponseCurve:
    """Per-hour change at one region when a hypothetical event is inserted.

    ``offset`` defaults to the first output hour.
    """
    sample, _ = dataset.by_anchor(anchor)
    r = dataset.world.regions.index[region] if isinstance(region, str) else int(region)
    if isinstance(intentions, EventRecord):
        _check_event(intentions)
        intentions = intentions.intentions
    elif not isinstance(intentions, IntentionVector):
        intentions = IntentionVector(tuple(int(v) for v in intentions))
    off = sample.t_in if offset is None else offset
    seq = causal.single_event_sequence(intentions, sample.t_in, sample.t_out, off,
                                       model.dims.treatment_mode)
    eff = treatment_effect(model, dataset, sample, {r: seq})
    return ResponseCurve(dataset.world.regions.region_ids[r], anchor, off,
                         _output_stamps(dataset, sample), eff[r])


# --- similarity-interval profile ---------------------------------------------

@dataclass
class TreatmentBank:
    """Encoded training treatments grouped by cosine-similarity bin."""
    reps: np.ndarray
    bins: np.ndarray
    similarity: np.ndarray

    def centroids(self) -> dict[int, np.ndarray]:
        return {int(j): self.reps[self.bins == j].mean(axis=0) for j in np.unique(self.bins)}

    def counts(self) -> dict[int, int]:
        return {int(j): int((self.bins == j).sum()) for j in np.unique(self.bins)}


def collect_treatments(model: CausalMobilityModel, dataset: Dataset,
                       samples: Sequence[Sample] | None = None) -> TreatmentBank:
    """Distinct non-baseline treatment representations met in training windows."""
    _require_events(model)
    samples = dataset.train if samples is None else samples
    seq = model.sequences(samples, dataset.world)
    keep = np.any(seq.reshape(len(seq), -1) != 0, axis=1)
    if not keep.any():
        raise AnalysisError("no treated rows in the training windows")
    uniq = np.unique(seq[keep].reshape(int(keep.sum()), -1), axis=0)
    reps = model.encode(uniq.reshape(len(uniq), *seq.shape[1:])).data
    sims = causal.cosine_similarity(reps, model.baseline().data)
    return TreatmentBank(reps, causal.similarity_bin(sims), sims)


@dataclass
class IntervalProfile:
    day: str
    regions: list[str]
    hours: list[str]
    bins: list[int]
    intervals: list[tuple[float, float]]
    counts: list[int]
    change: np.ndarray               # (bins, regions, hours) raw flow units

    def trend(self) -> float:
        """Correlation between bin similarity (centre) and mean absolute change."""
        centres = np.array([(lo + hi) / 2 for lo, hi in self.intervals])
        mag = np.abs(self.change).mean(axis=(1, 2))
        if len(centres) < 3 or np.std(mag) == 0:
            return float("nan")
        return float(np.corrcoef(centres, mag)[0, 1])

    def to_json(self) -> dict:
        return {"day": self.day, "regions": self.regions, "hours": self.hours,
                "bins": self.bins, "intervals": [list(i) for i in self.intervals],
                "counts": self.counts, "change": self.change.tolist()}


def day_anchors(dataset: Dataset, day: str, t_out: int) -> list[int]:
    """Anchors whose output windows tile the given calendar day."""
    ts = dataset.world.mobility.timestamps
    start = next((i for i, t in enumerate(ts) if t.strftime("%Y-%m-%d") == day), None)
    if start is None:
        raise AnalysisError(f"day {day} is not in the series")
    anchors = []
    for a in range(start, start + 24, t_out):
        try:
            dataset.by_anchor(a)
        except KeyError:
            continue
        anchors.append(a)
    if not anchors:
        raise AnalysisError(f"no complete windows on {day}")
    return anchors


def interval_profile(model: CausalMobilityModel, dataset: Dataset, day: str,
                     regions: Sequence[str] | None = None, bank: TreatmentBank | None = None,
                     min_members: int = 1) -> IntervalProfile:
    """Mean predicted change per similarity bin when its centroid replaces the baseline."""
    bank = collect_treatments(model, dataset) if bank is None else bank
    ids = dataset.world.regions.region_ids
    chosen = list(ids) if regions is None else list(regions)
    rows = [dataset.world.regions.index[r] for r in chosen]
    anchors = day_anchors(dataset, day, model.dims.t_out)
    cents, counts = bank.centroids(), bank.counts()
    bins = [j for j in sorted(cents) if counts[j] >= min_members]
    change, hours = [], []
    for a in anchors:
        sample, _ = dataset.by_anchor(a)
        hours += _output_stamps(dataset, sample)
    for j in bins:
        per_anchor = []
        for a in anchors:
            sample, _ = dataset.by_anchor(a)
            per_anchor.append(_rep_effect(model, dataset, sample, rows, cents[j])[rows])
        change.append(np.concatenate(per_anchor, axis=1))
    return IntervalProfile(day, chosen, hours, bins, [causal.bin_interval(j) for j in bins],
                           [counts[j] for j in bins], np.array(change))


# --- case comparison -------------------------------------------------------

@dataclass
class CaseComparison:
    anchor: int
    regions: list[str]
    hours: list[str]
    pred_with: np.ndarray            # (regions, t_out)
    pred_without: np.ndarray
    truth: np.ndarray
    err_with: np.ndarray
    err_without: np.ndarray

    @property
    def improvement(self) -> np.ndarray:
        return self.err_without - self.err_with

    def to_json(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, np.ndarray):
                d[k] = v.tolist()
        d["improvement"] = self.improvement.tolist()
        return d

    @classmethod
    def from_json(cls, obj: dict) -> "CaseComparison":
        arr = ("pred_with", "pred_without", "truth", "err_with", "err_without")
        kw = {k: (np.asarray(obj[k], dtype=np.float64) if k in arr else obj[k])
              for k in ("anchor", "regions", "hours") + arr}
        return cls(**kw)


def case_compare(model: CausalMobilityModel, dataset: Dataset, anchor: int,
                 regions: Sequence[str] | None = None) -> CaseComparison:
    """Errors with the window's real treatments versus an all-zero treatment mask."""
    _require_events(model)
    sample, raw = dataset.by_anchor(anchor)
    if raw.target is None or raw.target.size == 0:
        raise AnalysisError(f"no ground truth for anchor {anchor}")
    seq = model.sequences([sample], dataset.world)
    with_t = dataset.scaler.inverse(model.predict([sample], dataset.world, seq)[0])
    without = dataset.scaler.inverse(
        model.predict([sample], dataset.world, np.zeros_like(seq))[0])
    ids = dataset.world.regions.region_ids
    chosen = list(ids) if regions is None else list(regions)
    rows = [dataset.world.regions.index[r] for r in chosen]
    truth = raw.target[rows]
    return CaseComparison(anchor, chosen, _output_stamps(dataset, sample), with_t[rows],
                          without[rows], truth, np.abs(with_t[rows] - truth),
                          np.abs(without[rows] - truth))


# --- embedding export ------------------------------------------------------

def treatment_embeddings(model: CausalMobilityModel, events: Sequence[EventRecord],
                         offset: int | None = None) -> list[dict]:
    """One row per valid event: id, quadrant, category label and encoded floats.

    Each event is encoded alone at ``offset`` (default: last input hour).
    """
    _require_events(model)
    d = model.dims
    off = d.t_in - 1 if offset is None else offset
    valid = [e for e in events if e.valid and e.intentions is not None]
    if not valid:
        return []
    seqs = np.stack([causal.single_event_sequence(e.intentions, d.t_in, d.t_out, off,
                                                  d.treatment_mode) for e in valid])
    reps = model.encode(seqs).data
    return [{"id": e.article_id, "quadrant": categorize_event(e), "label": e.category,
             "rep": reps[i]} for i, e in enumerate(valid)]


def export_treatment_embeddings(model: CausalMobilityModel, events: Sequence[EventRecord],
                                path, offset: int | None = None) -> int:
    rows = treatment_embeddings(model, events, offset)
    width = model.dims.treatment_hidden
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["id", "quadrant", "label"] + [f"h{k}" for k in range(width)])
        for r in rows:
            wr.writerow([r["id"], r["quadrant"], r["label"]] + [repr(float(v)) for v in r["rep"]])
    return len(rows)


def write_json(obj, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(obj, indent=1))
