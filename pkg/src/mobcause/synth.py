"""Synthetic city with injected, exactly known event effects.

Each region gets a POI profile, a base volume and a daily/weekly rhythm.  OD
counts follow a gravity model.  Events carry an intention vector; the
additive effect on the listed regions is

    delta(t) = base(t) * (A / 100) * (Q3 - Q1 + 0.3 * (Q2 - 50) * sign(Q3 - Q1))
               * exp(-lam * |t - t_event|)            for |t - t_event| <= 12 h

so high interest raises counts, high danger lowers them, and the stay score
strengthens whichever direction dominates.  The counterfactual series (no
events) is retained for the oracle but never written next to the training
files.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np

from .data import (HOUR, EventRecord, IntentionVector, MobilityTensor, RegionFrame, World,
                   format_timestamp)
from .extract.mock import mock_extract, render_article
from .extract.quadrant import quadrant_of
from .numerics import make_rng

log = logging.getLogger(__name__)

STAY_WEIGHT = 0.3
TRUNCATION_HOURS = 12


@dataclass
class WorldSpec:
    n_regions: int = 20
    days: int = 60
    seed: int = 0
    poi_concentration: float = 0.6
    gravity_decay: float = 3.0
    base_volume: tuple[float, float] = (300.0, 3000.0)
    noise_scale: float = 0.03
    event_rate: float = 0.05
    effect_amplitude: float = 0.6
    decay: float = 0.25
    daily_amplitude: float = 0.35
    weekend_step: float = 0.15
    predictable_fraction: float = 0.75
    od_share: float = 0.05
    n_categories: int = 17
    start: str = "2023-04-01 00:00:00"

    def __post_init__(self):
        self.base_volume = tuple(self.base_volume)
        if self.n_regions < 2:
            raise ValueError("need at least two regions")
        positive = dict(days=self.days, poi_concentration=self.poi_concentration,
                        gravity_decay=self.gravity_decay, noise_scale=self.noise_scale,
                        event_rate=self.event_rate, effect_amplitude=self.effect_amplitude,
                        decay=self.decay, n_categories=self.n_categories)
        for name, v in positive.items():
            if not v > 0:
                raise ValueError(f"{name} must be positive, got {v}")
        lo, hi = self.base_volume
        if not 0 < lo <= hi:
            raise ValueError("base_volume must be an increasing positive range")
        if not 0 <= self.daily_amplitude + self.weekend_step < 1:
            raise ValueError("daily_amplitude + weekend_step must stay below 1")


@dataclass
class GroundTruthEffect:
    event_id: str
    region: str
    event_hour: int          # slot index of the event
    offsets: list[int]       # hour offsets relative to event_hour
    delta: list[float]       # additive effect at each offset (pre-clipping)

    def to_json(self) -> dict:
        return asdict(self)


# (name, category, predictable, Q1..Q10)
EVENT_TEMPLATES = [
    ("fireworks festival", "Cultural", True, (0, 20, 85, 20, 0, 0, 0, 0, 0, 60)),
    ("professional baseball game", "Sports", True, (0, 10, 70, 40, 0, 30, 0, 0, 0, 30)),
    ("live concert", "Cultural", True, (0, 10, 60, 30, 0, 20, 0, 0, 0, 20)),
    ("marathon", "Sports", True, (5, 15, 55, 30, 10, 60, 0, 20, 0, 40)),
    ("typhoon approach", "Weather", True, (80, 20, 0, 0, 40, 70, 80, 60, 30, 50)),
    ("heavy rain warning", "Weather", True, (60, 40, 0, 20, 30, 60, 50, 40, 20, 40)),
    ("court ruling protest", "Crime/Justice", True, (35, 20, 5, 50, 10, 20, 20, 30, 0, 10)),
    ("council election", "Politics", True, (0, 0, 5, 90, 0, 0, 0, 0, 0, 10)),
    ("earthquake", "Disaster/Accident", False, (70, 30, 0, 10, 40, 50, 60, 50, 40, 30)),
    ("traffic accident", "Disaster/Accident", False, (40, 10, 0, 50, 10, 50, 30, 10, 0, 10)),
    ("building fire", "Disaster/Accident", False, (55, 10, 0, 40, 20, 30, 50, 20, 10, 10)),
]


def effect_coefficient(q: IntentionVector, amplitude: float) -> float:
    diff = q[2] - q[0]
    return (amplitude / 100.0) * (diff + STAY_WEIGHT * (q[1] - 50) * float(np.sign(diff)))


def decay_profile(decay: float, truncation: int = TRUNCATION_HOURS) -> np.ndarray:
    k = np.arange(-truncation, truncation + 1)
    return np.exp(-decay * np.abs(k))


def _jitter(rng, template) -> IntentionVector:
    name, _, _, q = template
    q = np.asarray(q, dtype=float)
    strength = rng.uniform(0.4, 1.15)
    noisy = q * strength + rng.normal(0.0, 6.0, size=q.size) * (q > 0)
    out = np.clip(np.rint(noisy), 0, 100).astype(int)
    # keep the template's sign of interest vs danger
    if q[2] > q[0] and out[2] <= out[0]:
        out[2] = min(100, out[0] + 5)
    if q[2] < q[0] and out[2] >= out[0]:
        out[0] = min(100, out[2] + 5)
    return IntentionVector(tuple(int(v) for v in out))


@dataclass
class SynthWorld:
    spec: WorldSpec
    world: World                     # factual, raw scale
    counterfactual: np.ndarray       # (n, T) flows without any event
    base: np.ndarray                 # (n, T) noiseless rhythm the effects scale with
    effects: list[GroundTruthEffect]
    articles: list[dict]
    labels: dict[str, str] = field(default_factory=dict)   # event id -> generation quadrant
    clipped: int = 0

    def effect_index(self) -> dict[str, list[GroundTruthEffect]]:
        out: dict[str, list[GroundTruthEffect]] = {}
        for e in self.effects:
            out.setdefault(e.event_id, []).append(e)
        return out

    def oracle_ate(self, event_id: str, horizon, region: str | None = None) -> np.ndarray:
        """Injected effect of one event at the given absolute hour slots."""
        effs = self.effect_index().get(event_id)
        if not effs:
            raise KeyError(f"unknown event id {event_id!r}")
        if region is not None:
            effs = [e for e in effs if e.region == region]
            if not effs:
                raise KeyError(f"event {event_id!r} does not touch region {region!r}")
        eff = effs[0]
        lookup = {eff.event_hour + o: d for o, d in zip(eff.offsets, eff.delta)}
        return np.array([lookup.get(int(h), 0.0) for h in horizon])

    def observed_effect(self, region: int, horizon) -> np.ndarray:
        """Factual minus counterfactual flows (all events, after clipping)."""
        h = np.asarray(list(horizon), dtype=int)
        return self.world.mobility.flows[region, h] - self.counterfactual[region, h]


def generate_world(spec: WorldSpec) -> SynthWorld:
    rng = make_rng(spec.seed)
    n, c = spec.n_regions, spec.n_categories
    T = spec.days * 24
    start = datetime.strptime(spec.start, "%Y-%m-%d %H:%M:%S")
    stamps = [start + k * HOUR for k in range(T)]

    ids = [f"R{k:03d}" for k in range(n)]
    names = [f"Synthetic ward {k}" for k in range(n)]
    shares = rng.dirichlet(np.full(c, spec.poi_concentration), size=n)
    totals = rng.integers(50, 800, size=n)
    poi = np.rint(shares * totals[:, None])
    regions = RegionFrame(ids, names, poi)

    coords = rng.uniform(0.0, 10.0, size=(n, 2))
    lo, hi = spec.base_volume
    scale = rng.uniform(lo, hi, size=n)
    amp = spec.daily_amplitude * rng.uniform(0.6, 1.0, size=n)
    phase = rng.uniform(-2.0, 2.0, size=n)
    weekend = spec.weekend_step * rng.uniform(-1.0, 1.0, size=n)

    hours = np.array([ts.hour for ts in stamps], dtype=float)
    is_weekend = np.array([ts.weekday() >= 5 for ts in stamps], dtype=float)
    daily = np.sin(2 * np.pi * (hours[None, :] - 9.0 - phase[:, None]) / 24.0)
    base = scale[:, None] * (1.0 + amp[:, None] * daily + weekend[:, None] * is_weekend[None, :])
    noise = rng.normal(0.0, 1.0, size=(n, T)) * (spec.noise_scale * scale[:, None])
    counterfactual = np.maximum(base + noise, 0.0)

    # events: region propensity depends on the POI mix (selection bias)
    leisure = shares[:, : max(1, c // 4)].sum(axis=1)
    propensity = 0.5 + leisure / max(leisure.mean(), 1e-12) * 0.5
    p_event = np.clip(spec.event_rate * propensity, 0.0, 1.0)
    predictable_t = [t for t in EVENT_TEMPLATES if t[2]]
    unpredictable_t = [t for t in EVENT_TEMPLATES if not t[2]]
    dist = np.linalg.norm(coords[:, None, :] - coords[None, :, :], axis=-1)

    delta_total = np.zeros((n, T))
    profile = decay_profile(spec.decay)
    effects: list[GroundTruthEffect] = []
    articles: list[dict] = []
    labels: dict[str, str] = {}
    ev_counter = 0
    for day in range(spec.days):
        for i in range(n):
            if rng.random() >= p_event[i]:
                continue
            predictable = rng.random() < spec.predictable_fraction
            pool = predictable_t if predictable else unpredictable_t
            template = pool[int(rng.integers(len(pool)))]
            q = _jitter(rng, template)
            hour = int(rng.integers(8, 22)) if predictable else int(rng.integers(0, 24))
            t_slot = day * 24 + hour
            event_time = stamps[t_slot] + timedelta(minutes=int(rng.integers(60)),
                                                    seconds=int(rng.integers(60)))
            if predictable:
                release = event_time - timedelta(hours=float(rng.uniform(2.0, 30.0)))
            else:
                release = event_time + timedelta(hours=float(rng.uniform(0.1, 2.0)))
            release = release.replace(microsecond=0)
            region_idx = [i]
            if rng.random() < 0.15:
                region_idx.append(int(np.argsort(dist[i])[1]))
            ev_id = f"ev{ev_counter:05d}"
            ev_counter += 1
            coeff = effect_coefficient(q, spec.effect_amplitude)
            for r in region_idx:
                offsets, deltas = [], []
                for k, w in zip(range(-TRUNCATION_HOURS, TRUNCATION_HOURS + 1), profile):
                    t = t_slot + k
                    if 0 <= t < T:
                        d = float(base[r, t] * coeff * w)
                        offsets.append(k)
                        deltas.append(d)
                        delta_total[r, t] += d
                effects.append(GroundTruthEffect(ev_id, ids[r], t_slot, offsets, deltas))
            labels[ev_id] = quadrant_of(q, predictable)
            articles.append(_article(ev_id, template, q, predictable, event_time, release,
                                     [ids[r] for r in region_idx], rng))

    factual_raw = counterfactual + delta_total
    clipped = int((factual_raw < 0).sum())
    if clipped:
        log.info("clipped %d negative factual cells to zero", clipped)
    factual = np.maximum(factual_raw, 0.0)

    # gravity-model OD: trips from i split over destinations by mass * exp(-d / rho)
    attract = scale[None, :] * np.exp(-dist / spec.gravity_decay)
    np.fill_diagonal(attract, 0.0)
    attract /= attract.sum(axis=1, keepdims=True)
    rates = spec.od_share * factual.T[:, :, None] * attract[None, :, :]
    od = rng.poisson(rates).astype(np.float64)

    events = [mock_extract(a["text"], datetime.strptime(a["release_time"], "%Y-%m-%d %H:%M:%S"),
                           article_id=a["article_id"], region_codes=a["region_codes"],
                           category=a["category"]) for a in articles]
    world = World(regions, MobilityTensor(stamps, factual, od), events)
    return SynthWorld(spec, world, counterfactual, base, effects, articles, labels, clipped)


def _article(ev_id, template, q: IntentionVector, predictable, event_time, release, codes, rng):
    name, category, _, _ = template
    where = ", ".join(codes)
    when = format_timestamp(event_time)
    if rng.random() < 0.5:
        a2 = json.dumps({"event time": when})
    else:
        a2 = when
    answers = {
        "1": f"The most influential event is a {name} affecting {where}.",
        "2": a2,
        "3": (f"Where: around {where}.\nWho: residents and visitors of {where}.\n"
              f"When: {when}.\nHow: follow local guidance and use public transport."),
        "4": "No." if predictable else "Yes.",
        "5": "[" + ", ".join(str(v) for v in q.scores) + "]",
    }
    title = f"{name.capitalize()} reported in {where}"
    body = (f"Local media report a {name} in {where}. "
            f"The article was released at {format_timestamp(release)}.")
    return {"article_id": ev_id, "release_time": format_timestamp(release),
            "title": title, "text": render_article(title, body, answers),
            "region_codes": codes, "category": category}


# --- export ----------------------------------------------------------------

def _fmt(v: float) -> str:
    return repr(float(v))


def export_fixture(synth: SynthWorld, out_dir) -> tuple[Path, Path]:
    """Write ``<out>/world`` (training inputs) and ``<out>/oracle`` (ground truth)."""
    out = Path(out_dir)
    world_dir, oracle_dir = out / "world", out / "oracle"
    (world_dir / "od").mkdir(parents=True, exist_ok=True)
    oracle_dir.mkdir(parents=True, exist_ok=True)
    w = synth.world
    write_world(w, world_dir)
    with open(world_dir / "articles.jsonl", "w") as fh:
        for a in synth.articles:
            fh.write(json.dumps(a, sort_keys=True) + "\n")
    with open(oracle_dir / "ground_truth.jsonl", "w") as fh:
        for e in synth.effects:
            fh.write(json.dumps(e.to_json(), sort_keys=True) + "\n")
    with open(oracle_dir / "counterfactual_flows.csv", "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["region_id", "timestamp", "count"])
        for j, ts in enumerate(w.mobility.timestamps):
            stamp = ts.strftime("%Y-%m-%dT%H:%M:%S")
            for i, rid in enumerate(w.regions.region_ids):
                wr.writerow([rid, stamp, _fmt(synth.counterfactual[i, j])])
    meta = {"spec": asdict(synth.spec), "labels": synth.labels, "clipped": synth.clipped}
    (oracle_dir / "meta.json").write_text(json.dumps(meta, sort_keys=True, indent=1))
    return world_dir, oracle_dir


def write_world(world: World, world_dir) -> None:
    world_dir = Path(world_dir)
    (world_dir / "od").mkdir(parents=True, exist_ok=True)
    reg = world.regions
    with open(world_dir / "regions.csv", "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["region_id", "name"] + [f"poi_c{k + 1}" for k in range(reg.n_categories)])
        for i, rid in enumerate(reg.region_ids):
            wr.writerow([rid, reg.names[i]] + [_fmt(v) for v in reg.poi[i]])
    mob = world.mobility
    with open(world_dir / "flows.csv", "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["region_id", "timestamp", "count"])
        for j, ts in enumerate(mob.timestamps):
            stamp = ts.strftime("%Y-%m-%dT%H:%M:%S")
            for i, rid in enumerate(reg.region_ids):
                wr.writerow([rid, stamp, _fmt(mob.flows[i, j])])
    for j, ts in enumerate(mob.timestamps):
        nz = np.argwhere(mob.od[j] > 0)
        if nz.size == 0:
            continue
        with open(world_dir / "od" / f"{ts.strftime('%Y-%m-%dT%H')}.csv", "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["origin_id", "dest_id", "count"])
            for a, b in nz:
                wr.writerow([reg.region_ids[a], reg.region_ids[b], _fmt(mob.od[j, a, b])])
    with open(world_dir / "events.jsonl", "w") as fh:
        for ev in world.events:
            fh.write(json.dumps(ev.to_json(), sort_keys=True) + "\n")


def load_ground_truth(oracle_dir) -> list[GroundTruthEffect]:
    out = []
    with open(Path(oracle_dir) / "ground_truth.jsonl") as fh:
        for line in fh:
            if line.strip():
                out.append(GroundTruthEffect(**json.loads(line)))
    return out
