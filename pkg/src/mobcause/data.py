"""Regions, hourly mobility, OD networks and event records; windowed samples.

On-disk layout of a world directory::

    regions.csv      region_id,name,poi_c1..poi_cK
    flows.csv        region_id,timestamp,count
    od/<ts>.csv      origin_id,dest_id,count   (absent pair = 0)
    events.jsonl     one event record per line
"""
from __future__ import annotations

import csv
import json
import logging
import math
import warnings
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

N_INTENTIONS = 10
N_POI_CATEGORIES = 17
TIME_FORMAT = "%Y-%m-%d %H:%M:%S"
HOUR = timedelta(hours=1)
INTENTION_LABELS = ("danger", "stay", "interest", "routine", "economy",
                    "transport", "health", "government", "services", "duration")


class WorldValidationError(ValueError):
    """Input files violate the world schema; message carries file:line."""


def _fail(path, line, msg):
    where = f"{path}:{line}" if line is not None else str(path)
    raise WorldValidationError(f"{where}: {msg}")


def parse_timestamp(text: str) -> datetime:
    """Accept ``yyyy-mm-dd hh:mm:ss``, ISO ``T`` forms and the ``yyyy-mm-ddThh`` file stem."""
    text = text.strip()
    for fmt in (TIME_FORMAT, "%Y-%m-%dT%H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%dT%H",
                "%Y-%m-%d %H:%M"):
        try:
            return datetime.strptime(text, fmt)
        except ValueError:
            continue
    raise ValueError(f"unparseable timestamp {text!r}")


def format_timestamp(ts: datetime) -> str:
    return ts.strftime(TIME_FORMAT)


# --- domain types ----------------------------------------------------------

@dataclass(frozen=True)
class IntentionVector:
    scores: tuple[int, ...]

    def __post_init__(self):
        s = tuple(self.scores)
        if len(s) != N_INTENTIONS:
            raise ValueError(f"intention vector needs {N_INTENTIONS} scores, got {len(s)}")
        for q in s:
            if isinstance(q, bool) or not isinstance(q, (int, np.integer)) or not 0 <= q <= 100:
                raise ValueError(f"intention score {q!r} outside integer range [0, 100]")
        object.__setattr__(self, "scores", tuple(int(q) for q in s))

    def __getitem__(self, k):
        return self.scores[k]

    def as_array(self) -> np.ndarray:
        """Scores rescaled to [0, 1]."""
        return np.asarray(self.scores, dtype=np.float64) / 100.0

    @property
    def danger(self) -> int:
        return self.scores[0]

    @property
    def interest(self) -> int:
        return self.scores[2]

    @classmethod
    def zeros(cls) -> "IntentionVector":
        return cls((0,) * N_INTENTIONS)


@dataclass
class EventRecord:
    article_id: str
    release_time: datetime
    event_time: datetime
    region_codes: list[str]
    category: str
    predictable: bool
    intentions: IntentionVector | None
    answers: dict[str, str] = field(default_factory=dict)
    valid: bool = True
    error: str | None = None
    transcript: list[dict] | None = None

    def to_json(self) -> dict:
        return {
            "article_id": self.article_id,
            "release_time": format_timestamp(self.release_time),
            "event_time": format_timestamp(self.event_time),
            "region_codes": list(self.region_codes),
            "category": self.category,
            "predictable": bool(self.predictable),
            "intentions": list(self.intentions.scores) if self.intentions else None,
            "answers": dict(self.answers),
            "valid": bool(self.valid),
            "error": self.error,
            # transcripts are kept for audit of failed extractions only
            **({"transcript": self.transcript}
               if self.transcript is not None and not self.valid else {}),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "EventRecord":
        req = ("article_id", "release_time", "event_time", "region_codes", "category",
               "predictable", "intentions")
        missing = [k for k in req if k not in obj]
        if missing:
            raise ValueError(f"missing field(s) {', '.join(missing)}")
        valid = bool(obj.get("valid", True))
        intents = obj["intentions"]
        if valid and intents is None:
            raise ValueError("valid record without intentions")
        if not isinstance(obj["region_codes"], list):
            raise ValueError("region_codes must be a list")
        if not isinstance(obj["predictable"], bool):
            raise ValueError("predictable must be a boolean")
        return cls(
            article_id=str(obj["article_id"]),
            release_time=datetime.strptime(obj["release_time"], TIME_FORMAT),
            event_time=datetime.strptime(obj["event_time"], TIME_FORMAT),
            region_codes=[str(c) for c in obj["region_codes"]],
            category=str(obj["category"]),
            predictable=obj["predictable"],
            intentions=IntentionVector(tuple(intents)) if intents is not None else None,
            answers={str(k): str(v) for k, v in (obj.get("answers") or {}).items()},
            valid=valid,
            error=obj.get("error"),
            transcript=obj.get("transcript"),
        )


@dataclass
class RegionFrame:
    region_ids: list[str]
    names: list[str]
    poi: np.ndarray  # (n, c) raw non-negative counts

    def __post_init__(self):
        self.poi = np.asarray(self.poi, dtype=np.float64)
        if len(set(self.region_ids)) != len(self.region_ids):
            raise WorldValidationError("region ids are not unique")
        if self.poi.ndim != 2 or self.poi.shape[0] != len(self.region_ids):
            raise WorldValidationError("POI table must have one row per region")
        if (self.poi < 0).any():
            raise WorldValidationError("POI counts must be non-negative")
        self.index = {rid: k for k, rid in enumerate(self.region_ids)}

    @property
    def n(self) -> int:
        return len(self.region_ids)

    @property
    def n_categories(self) -> int:
        return self.poi.shape[1]

    def poi_share(self) -> np.ndarray:
        """POI profile normalized to unit sum per region (uniform for empty regions)."""
        tot = self.poi.sum(axis=1, keepdims=True)
        safe = np.where(tot > 0, tot, 1.0)
        share = self.poi / safe
        share[tot[:, 0] == 0] = 1.0 / self.n_categories
        return share


def renormalize_adjacency(raw_od) -> np.ndarray:
    """Self-loop and symmetric degree scaling: D^-1/2 (A + I) D^-1/2.

    Works on a single (n, n) matrix or a (T, n, n) stack.  Degrees are row
    sums of ``A + I``.
    """
    a = np.asarray(raw_od, dtype=np.float64)
    if a.shape[-1] != a.shape[-2]:
        raise ValueError(f"adjacency must be square, got {a.shape}")
    if (a < 0).any():
        raise ValueError("OD counts must be non-negative")
    a_hat = a + np.eye(a.shape[-1])
    d = a_hat.sum(axis=-1)
    inv = 1.0 / np.sqrt(d)
    return inv[..., :, None] * a_hat * inv[..., None, :]


@dataclass
class MobilityTensor:
    timestamps: list[datetime]
    flows: np.ndarray      # (n, T)
    od: np.ndarray         # (T, n, n) raw counts
    adjacency: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.flows = np.asarray(self.flows, dtype=np.float64)
        self.od = np.asarray(self.od, dtype=np.float64)
        if (self.flows < 0).any():
            raise WorldValidationError("flows must be non-negative")
        for a, b in zip(self.timestamps, self.timestamps[1:]):
            if b - a != HOUR:
                raise WorldValidationError(f"timestamps not hourly at {a} -> {b}")
        if self.flows.shape[1] != len(self.timestamps):
            raise WorldValidationError("flow columns must match timestamps")
        self.adjacency = renormalize_adjacency(self.od)

    @property
    def T(self) -> int:
        return len(self.timestamps)

    def hour_index(self, ts: datetime) -> int | None:
        """Slot holding ``ts`` (floored to the hour), or None outside the series."""
        k = math.floor((ts - self.timestamps[0]) / HOUR)
        return k if 0 <= k < self.T else None


@dataclass
class World:
    regions: RegionFrame
    mobility: MobilityTensor
    events: list[EventRecord]

    @property
    def n(self) -> int:
        return self.regions.n

    @property
    def T(self) -> int:
        return self.mobility.T

    def with_flows(self, flows: np.ndarray) -> "World":
        mob = MobilityTensor.__new__(MobilityTensor)
        mob.timestamps = self.mobility.timestamps
        mob.flows = np.asarray(flows, dtype=np.float64)
        mob.od = self.mobility.od
        mob.adjacency = self.mobility.adjacency
        return replace(self, mobility=mob)


# --- loading ---------------------------------------------------------------

def _read_csv(path: Path, trace):
    if trace is not None:
        trace.append(str(path))
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        _fail(path, None, "empty file")
    return rows[0], rows[1:]


def load_regions(path: Path, trace=None) -> RegionFrame:
    header, rows = _read_csv(path, trace)
    if header[:2] != ["region_id", "name"] or len(header) < 3:
        _fail(path, 1, "header must be region_id,name,poi_c1..poi_cK")
    c = len(header) - 2
    ids, names, poi = [], [], []
    for k, row in enumerate(rows, start=2):
        if len(row) != c + 2:
            _fail(path, k, f"expected {c + 2} fields, got {len(row)}")
        try:
            vals = [float(v) for v in row[2:]]
        except ValueError:
            _fail(path, k, "POI counts must be numeric")
        if any(v < 0 or not math.isfinite(v) for v in vals):
            _fail(path, k, f"negative or non-finite POI count for region {row[0]!r}")
        if row[0] in ids:
            _fail(path, k, f"duplicate region id {row[0]!r}")
        ids.append(row[0])
        names.append(row[1])
        poi.append(vals)
    if not ids:
        _fail(path, None, "no regions")
    return RegionFrame(ids, names, np.array(poi))


def load_flows(path: Path, regions: RegionFrame, trace=None):
    header, rows = _read_csv(path, trace)
    if header != ["region_id", "timestamp", "count"]:
        _fail(path, 1, "header must be region_id,timestamp,count")
    cells: dict[tuple[int, datetime], float] = {}
    for k, row in enumerate(rows, start=2):
        if len(row) != 3:
            _fail(path, k, f"expected 3 fields, got {len(row)}")
        rid, ts_text, cnt = row
        if rid not in regions.index:
            _fail(path, k, f"unknown region code {rid!r}")
        try:
            ts = parse_timestamp(ts_text)
            val = float(cnt)
        except ValueError as exc:
            _fail(path, k, str(exc))
        if ts.minute or ts.second or ts.microsecond:
            _fail(path, k, f"timestamp {ts_text!r} is not on the hour")
        if val < 0 or not math.isfinite(val):
            _fail(path, k, f"invalid count {cnt!r}")
        key = (regions.index[rid], ts)
        if key in cells:
            _fail(path, k, f"duplicate entry for {rid} at {ts_text}")
        cells[key] = val
    stamps = sorted({ts for _, ts in cells})
    if not stamps:
        _fail(path, None, "no flow rows")
    for a, b in zip(stamps, stamps[1:]):
        if b - a != HOUR:
            _fail(path, None, f"non-hourly timestamps: gap between {a} and {b}")
    pos = {ts: j for j, ts in enumerate(stamps)}
    flows = np.full((regions.n, len(stamps)), np.nan)
    for (i, ts), v in cells.items():
        flows[i, pos[ts]] = v
    if np.isnan(flows).any():
        i, j = map(int, np.argwhere(np.isnan(flows))[0])
        _fail(path, None, f"missing count for region {regions.region_ids[i]!r} at {stamps[j]}")
    return stamps, flows


def load_od(od_dir: Path, regions: RegionFrame, stamps: list[datetime], trace=None) -> np.ndarray:
    n = regions.n
    od = np.zeros((len(stamps), n, n))
    if not od_dir.is_dir():
        return od
    pos = {ts: j for j, ts in enumerate(stamps)}
    for path in sorted(od_dir.glob("*.csv")):
        try:
            ts = parse_timestamp(path.stem)
        except ValueError:
            _fail(path, None, f"file name {path.name!r} is not a timestamp")
        if ts not in pos:
            _fail(path, None, f"OD timestamp {path.stem} outside the flow series")
        header, rows = _read_csv(path, trace)
        if header != ["origin_id", "dest_id", "count"]:
            _fail(path, 1, "header must be origin_id,dest_id,count")
        t = pos[ts]
        for k, row in enumerate(rows, start=2):
            if len(row) != 3:
                _fail(path, k, f"expected 3 fields, got {len(row)}")
            o, d, cnt = row
            for code in (o, d):
                if code not in regions.index:
                    _fail(path, k, f"unknown region code {code!r}")
            try:
                val = float(cnt)
            except ValueError:
                _fail(path, k, f"invalid count {cnt!r}")
            if val < 0 or not math.isfinite(val):
                _fail(path, k, f"invalid count {cnt!r}")
            od[t, regions.index[o], regions.index[d]] += val
    return od


def load_events(path: Path, regions: RegionFrame, trace=None) -> list[EventRecord]:
    if not path.exists():
        return []
    if trace is not None:
        trace.append(str(path))
    events = []
    with open(path) as fh:
        for k, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = EventRecord.from_json(json.loads(line))
            except (ValueError, TypeError, KeyError) as exc:
                _fail(path, k, f"schema violation: {exc}")
            if rec.valid:
                if not rec.region_codes:
                    _fail(path, k, "valid record has no region codes")
                for code in rec.region_codes:
                    if code not in regions.index:
                        _fail(path, k, f"unknown region code {code!r}")
            events.append(rec)
    return events


def load_world(dir_path, load_events_file: bool = True, trace: list | None = None) -> World:
    """Read and validate a world directory.

    ``trace`` (if given) collects every file path opened.
    """
    root = Path(dir_path)
    regions = load_regions(root / "regions.csv", trace)
    stamps, flows = load_flows(root / "flows.csv", regions, trace)
    od = load_od(root / "od", regions, stamps, trace)
    events = load_events(root / "events.jsonl", regions, trace) if load_events_file else []
    return World(regions, MobilityTensor(stamps, flows, od), events)


# --- samples ---------------------------------------------------------------

@dataclass
class EventSlot:
    event: int     # index into world.events
    region: int
    offset: int    # position in the T_in + T_out treatment sequence


@dataclass
class Sample:
    anchor: int             # index of the first output hour
    t_in: int
    t_out: int
    input_flows: np.ndarray         # (n, t_in)
    adjacency: np.ndarray           # (n, n) mean of the input-window A_t
    hour_of_day: np.ndarray         # (t_in,)
    day_of_week: np.ndarray         # (t_in,)
    input_events: list[EventSlot]
    output_events: list[EventSlot]
    target: np.ndarray              # (n, t_out)

    @property
    def events(self) -> list[EventSlot]:
        return self.input_events + self.output_events


def event_slots(world: World) -> dict[int, list[tuple[int, int]]]:
    """hour index -> [(event index, region index)] for valid events in range."""
    by_hour: dict[int, list[tuple[int, int]]] = {}
    for e_idx, ev in enumerate(world.events):
        if not ev.valid or ev.intentions is None:
            continue
        h = world.mobility.hour_index(ev.event_time)
        if h is None:
            continue
        for code in ev.region_codes:
            by_hour.setdefault(h, []).append((e_idx, world.regions.index[code]))
    return by_hour


def make_samples(world: World, t_in: int, t_out: int, stride: int = 1,
                 use_events: bool = True) -> list[Sample]:
    """Sliding windows; output-window events are kept only when predictable."""
    if t_in < 1 or t_out < 1 or stride < 1:
        raise ValueError("window lengths and stride must be positive")
    T = world.T
    if t_in + t_out > T:
        raise ValueError(f"window {t_in}+{t_out} larger than series length {T}")
    mob = world.mobility
    hod = np.array([ts.hour for ts in mob.timestamps])
    dow = np.array([ts.weekday() for ts in mob.timestamps])
    by_hour = event_slots(world) if use_events else {}
    samples = []
    for a in range(t_in, T - t_out + 1, stride):
        ins, outs = [], []
        for h in range(a - t_in, a + t_out):
            for e_idx, r in by_hour.get(h, ()):
                slot = EventSlot(e_idx, r, h - (a - t_in))
                if h < a:
                    ins.append(slot)
                elif world.events[e_idx].predictable:
                    outs.append(slot)
        samples.append(Sample(
            anchor=a, t_in=t_in, t_out=t_out,
            input_flows=mob.flows[:, a - t_in:a].copy(),
            adjacency=mob.adjacency[a - t_in:a].mean(axis=0),
            hour_of_day=hod[a - t_in:a], day_of_week=dow[a - t_in:a],
            input_events=ins, output_events=outs,
            target=mob.flows[:, a:a + t_out].copy(),
        ))
    return samples


def split_samples(n_samples: int, fractions=(0.8, 0.1, 0.1), seed: int = 0):
    """Random train/val/test index arrays over samples."""
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError("split fractions must sum to 1")
    perm = np.random.Generator(np.random.PCG64(seed)).permutation(n_samples)
    n_tr = int(math.floor(fractions[0] * n_samples))
    n_va = int(math.floor(fractions[1] * n_samples))
    return (np.sort(perm[:n_tr]), np.sort(perm[n_tr:n_tr + n_va]),
            np.sort(perm[n_tr + n_va:]))


@dataclass
class FlowScaler:
    mean: np.ndarray   # (n,)
    std: np.ndarray    # (n,)

    def transform(self, flows: np.ndarray) -> np.ndarray:
        return (flows - self.mean[:, None]) / self.std[:, None]

    def inverse(self, z: np.ndarray) -> np.ndarray:
        return z * self.std[:, None] + self.mean[:, None]

    def inverse_delta(self, dz: np.ndarray) -> np.ndarray:
        """Map a difference in normalized units back to raw flow units."""
        return dz * self.std[:, None]

    def to_json(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_json(cls, obj: dict) -> "FlowScaler":
        return cls(np.asarray(obj["mean"], dtype=np.float64),
                   np.asarray(obj["std"], dtype=np.float64))


def train_hours(samples: list[Sample]) -> np.ndarray:
    hours = set()
    for s in samples:
        hours.update(range(s.anchor - s.t_in, s.anchor + s.t_out))
    return np.array(sorted(hours), dtype=np.int64)


def normalize_flows(world: World, train_samples: list[Sample]) -> tuple[FlowScaler, World]:
    """Per-region z-score fitted on the hours covered by the training windows."""
    if not train_samples:
        raise ValueError("need training samples to fit the scaler")
    cols = world.mobility.flows[:, train_hours(train_samples)]
    mean = cols.mean(axis=1)
    std = cols.std(axis=1)
    flat = std <= 1e-12
    if flat.any():
        bad = [world.regions.region_ids[i] for i in np.flatnonzero(flat)]
        warnings.warn(f"zero-variance flows in regions {bad}; using unit variance")
        std = np.where(flat, 1.0, std)
    scaler = FlowScaler(mean, std)
    return scaler, world.with_flows(scaler.transform(world.mobility.flows))
