from __future__ import annotations

import csv
import json
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np
import pytest

START = datetime(2023, 7, 1, 0, 0, 0)


def event_json(article_id="a1", event_time="2023-07-01 12:00:00",
               release_time="2023-07-01 08:25:00", regions=("A",), predictable=True,
               intentions=(0, 20, 85, 20, 0, 0, 0, 0, 0, 60), category="Cultural"):
    return {"article_id": article_id, "release_time": release_time, "event_time": event_time,
            "region_codes": list(regions), "category": category, "predictable": predictable,
            "intentions": list(intentions) if intentions is not None else None,
            "answers": {}, "valid": True, "error": None}


def write_fixture(root: Path, n_hours: int = 48, regions=("A", "B"), poi=None, flows=None,
                  events=(), od=None, n_poi: int = 17) -> Path:
    """Hand-written world directory; defaults to two regions over 48 hours."""
    root = Path(root)
    (root / "od").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(0)
    if poi is None:
        poi = rng.integers(0, 20, size=(len(regions), n_poi))
    if flows is None:
        flows = rng.integers(10, 200, size=(len(regions), n_hours))
    with open(root / "regions.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["region_id", "name"] + [f"poi_c{k + 1}" for k in range(len(poi[0]))])
        for rid, row in zip(regions, poi):
            wr.writerow([rid, f"ward {rid}"] + [str(v) for v in row])
    with open(root / "flows.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["region_id", "timestamp", "count"])
        for t in range(n_hours):
            stamp = (START + timedelta(hours=t)).strftime("%Y-%m-%dT%H:%M:%S")
            for i, rid in enumerate(regions):
                wr.writerow([rid, stamp, str(flows[i][t])])
    for t, triplets in (od or {}).items():
        stamp = (START + timedelta(hours=t)).strftime("%Y-%m-%dT%H")
        with open(root / "od" / f"{stamp}.csv", "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["origin_id", "dest_id", "count"])
            for o, d, c in triplets:
                wr.writerow([o, d, str(c)])
    with open(root / "events.jsonl", "w") as fh:
        for ev in events:
            fh.write(json.dumps(ev) + "\n")
    return root


@pytest.fixture
def minimal_world(tmp_path):
    return write_fixture(tmp_path / "world", events=[event_json()],
                         od={3: [("A", "B", 5), ("B", "A", 2)]})


@pytest.fixture(scope="session")
def small_synth(tmp_path_factory):
    """A small synthetic world exported to disk (shared across tests)."""
    from mobcause.synth import WorldSpec, export_fixture, generate_world
    synth = generate_world(WorldSpec(n_regions=6, days=14, seed=3, event_rate=0.15))
    out = tmp_path_factory.mktemp("synth")
    world_dir, oracle_dir = export_fixture(synth, out)
    return synth, world_dir, oracle_dir


TYPHOON_ANSWERS = {
    "1": "Key event: a strong typhoon is forecast to pass close to Okinawa on August 3.",
    "2": "2023-08-03 06:00:00",
    "3": "Where: indoors.\nWho: residents and tourists.\nWhen: early on August 3.\n"
         "How: avoid travel.",
    "4": "No. ",
    "5": "[80, 20, 0, 0, 40, 70, 80, 60, 30, 50]",
}
FIREWORK_ANSWERS = {
    "1": "Key event: the riverside fireworks show returns after several years off.",
    "2": "2023-07-29 19:07:04",
    "3": "Where: along the river.\nWho: spectators.\nWhen: the evening of July 29.\n"
         "How: take trains and expect crowds.",
    "4": "No. ",
    "5": "[0, 20, 85, 20, 0, 0, 0, 0, 0, 60]",
}


def fuzz_corpus(n: int = 1000, seed: int = 0) -> list[str]:
    """Deterministic mix of well-formed, near-miss and hostile answer strings."""
    rng = np.random.default_rng(seed)
    pieces = [
        '{"event time": "2023-08-03 06:00:00"}', '{"event time": "2023-13-40 99:00:00"}',
        '{"event time": 5}', '{"a": 1} {"b": 2}', "{", "}", "{{{{", '{"event time": "',
        "[1, 2, 3]", "[80, 20, 0, 0, 40, 70, 80, 60, 30, 50]", "[0,0,0,0,0,0,0,0,0,0]",
        "[101, 0, 0, 0, 0, 0, 0, 0, 0, 0]", "[-1, 0, 0, 0, 0, 0, 0, 0, 0, 0]",
        "[1.5, 2, 3, 4, 5, 6, 7, 8, 9, 10]", "[]", "[[", "]]", "Yes", "No.", "yes, because",
        "maybe", "NO", "  no  ", "2023-07-29 19:07:04", "2023-02-30 10:00:00", "null",
        "\x00", "☃", "��", "\\", '"', "'", "\n\n", "\t", "NaN", "Infinity",
        "1e309", "9" * 400, "[" + ", ".join(["50"] * 11) + "]", "Here is the JSON:",
        "```json", "```", "<think>", "</think>", " ", "", "💥", "YES!", "No way",
    ]
    out = []
    for _ in range(n):
        k = int(rng.integers(1, 5))
        parts = [pieces[int(rng.integers(len(pieces)))] for _ in range(k)]
        if rng.random() < 0.2:
            raw = rng.integers(0, 0x2FFF, size=int(rng.integers(1, 30)))
            parts.append("".join(chr(int(c)) for c in raw if not 0xD800 <= c <= 0xDFFF))
        out.append(" ".join(parts) if rng.random() < 0.7 else "".join(parts))
    return out


def pytest_terminal_summary(terminalreporter):
    """Repeat the acceptance PASS/FAIL lines at the end of the session."""
    import sys
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])
