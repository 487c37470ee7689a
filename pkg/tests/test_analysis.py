from __future__ import annotations

import csv

import numpy as np
import pytest

from mobcause import analysis, causal
from mobcause.data import EventRecord, IntentionVector, load_world
from mobcause.extract import categorize_event
from mobcause.training import TrainConfig, ablation_configs, export_best, file_sha256, \
    prepare_dataset, train

SMALL = dict(t_in=6, t_out=3, hidden=8, treatment_hidden=6, d_region=4, max_epochs=3)


@pytest.fixture(scope="module")
def trained(small_synth, tmp_path_factory):
    _, world_dir, _ = small_synth
    cfg = TrainConfig(**SMALL)
    ds = prepare_dataset(load_world(world_dir), cfg)
    res = train(ds, cfg, seed=1111)
    # non-zero GRU biases so that the baseline is not the zero vector
    rng = np.random.default_rng(0)
    for g in ("r", "u", "c"):
        b = res.model.params[f"gru.b_{g}"]
        b.data = b.data + rng.uniform(-0.3, 0.3, size=b.shape)
    path = tmp_path_factory.mktemp("ck") / "checkpoint.bin"
    export_best(res, path)
    return res.model, ds, path


def zero_event(ev: EventRecord) -> EventRecord:
    return EventRecord(ev.article_id, ev.release_time, ev.event_time, ev.region_codes,
                       ev.category, ev.predictable, IntentionVector((0,) * 10))


def event_window(ds):
    """First test sample with an event and the event record itself."""
    for s in ds.samples:
        if s.events:
            return s, ds.world.events[s.events[0].event]
    raise AssertionError("no event-bearing window")


def test_zero_event_has_exactly_zero_effect(trained):
    model, ds, _ = trained
    sample, ev = event_window(ds)
    rep = analysis.estimate_ate(model, ds, sample, zero_event(ev))
    assert not rep.tau.any() and rep.total == 0.0


def test_ate_touches_only_event_regions(trained):
    model, ds, _ = trained
    sample, ev = event_window(ds)
    rows = [ds.world.regions.index[c] for c in ev.region_codes]
    off = analysis.event_offset(ev, sample, ds)
    seq = causal.single_event_sequence(ev.intentions, sample.t_in, sample.t_out, off)
    eff = analysis.treatment_effect(model, ds, sample, {r: seq for r in rows})
    others = [r for r in range(ds.world.n) if r not in rows]
    assert not eff[others].any()
    rep = analysis.estimate_ate(model, ds, sample, ev)
    assert np.array_equal(rep.tau, eff[rows])
    assert rep.regions == list(ev.region_codes) and len(rep.hours) == sample.t_out


def test_invalid_event_and_naive_model_are_refused(trained, small_synth):
    model, ds, _ = trained
    sample, ev = event_window(ds)
    bad = EventRecord("bad", ev.release_time, ev.event_time, ev.region_codes, ev.category,
                      ev.predictable, None, valid=False, error="parse")
    with pytest.raises(analysis.AnalysisError):
        analysis.estimate_ate(model, ds, sample, bad)
    from mobcause.model import CausalMobilityModel
    naive = CausalMobilityModel(ablation_configs(TrainConfig(**SMALL))["naive"].dims(ds.world), 0)
    with pytest.raises(analysis.AnalysisError):
        analysis.case_compare(naive, ds, ds.test[0].anchor)


def test_counterfactual_response_matches_ate(trained):
    model, ds, _ = trained
    sample = ds.test[0]
    fw = IntentionVector((0, 20, 85, 20, 0, 0, 0, 0, 0, 60))
    curve = analysis.counterfactual_response(model, ds, 0, sample.anchor, fw)
    assert curve.offset == sample.t_in and curve.delta.shape == (sample.t_out,)
    ev = EventRecord("h", ds.world.mobility.timestamps[sample.anchor],
                     ds.world.mobility.timestamps[sample.anchor],
                     [ds.world.regions.region_ids[0]], "Cultural", True, fw)
    rep = analysis.estimate_ate(model, ds, sample, ev)
    assert np.array_equal(rep.tau[0], curve.delta)
    listed = analysis.counterfactual_response(model, ds, ds.world.regions.region_ids[0],
                                              sample.anchor, list(fw.scores))
    assert np.array_equal(listed.delta, curve.delta)


def test_analyses_leave_checkpoint_untouched(trained, tmp_path):
    model, ds, path = trained
    before = file_sha256(path)
    snapshot = {n: model.params[n].data.copy() for n in model.params.names()}
    sample, ev = event_window(ds)
    analysis.estimate_ate(model, ds, sample, ev)
    analysis.case_compare(model, ds, ds.test[0].anchor)
    day = ds.world.mobility.timestamps[24].strftime("%Y-%m-%d")
    analysis.interval_profile(model, ds, day)
    analysis.export_treatment_embeddings(model, ds.world.events, tmp_path / "e.csv")
    assert file_sha256(path) == before
    for n, v in snapshot.items():
        assert np.array_equal(model.params[n].data, v)


def test_embeddings_export(trained, tmp_path):
    model, ds, _ = trained
    events = list(ds.world.events)
    events.append(events[0])   # identical event encodes to an identical row
    dest = tmp_path / "emb.csv"
    n = analysis.export_treatment_embeddings(model, events, dest)
    rows = list(csv.reader(open(dest)))
    valid = [e for e in events if e.valid]
    assert n == len(valid) == len(rows) - 1
    assert rows[0][:3] == ["id", "quadrant", "label"] and len(rows[0]) == 3 + 6
    assert rows[1][3:] == rows[-1][3:]
    for ev, row in zip(valid, rows[1:]):
        assert row[0] == ev.article_id and row[1] == categorize_event(ev)
        assert row[2] == ev.category


def test_case_round_trip_and_event_free_window(trained):
    model, ds, _ = trained
    event_free = next(s for s in ds.samples if not s.events)
    case = analysis.case_compare(model, ds, event_free.anchor)
    assert not case.improvement.any()
    again = analysis.CaseComparison.from_json(case.to_json())
    for k in ("pred_with", "pred_without", "truth", "err_with", "err_without"):
        assert np.array_equal(getattr(again, k), getattr(case, k))
    assert again.hours == case.hours and again.regions == case.regions


def test_case_errors_are_absolute_errors(trained):
    model, ds, _ = trained
    sample, _ = event_window(ds)
    case = analysis.case_compare(model, ds, sample.anchor, ds.world.regions.region_ids[:2])
    assert case.truth.shape == (2, sample.t_out)
    assert np.array_equal(case.err_with, np.abs(case.pred_with - case.truth))
    assert np.array_equal(case.improvement, case.err_without - case.err_with)


def test_interval_profile_is_deterministic_and_well_formed(trained):
    model, ds, _ = trained
    day = ds.world.mobility.timestamps[30].strftime("%Y-%m-%d")
    a = analysis.interval_profile(model, ds, day)
    b = analysis.interval_profile(model, ds, day)
    assert np.array_equal(a.change, b.change) and a.bins == b.bins
    assert all(0 <= j < causal.n_bins() for j in a.bins)
    assert a.change.shape == (len(a.bins), ds.world.n, len(a.hours))
    for j, (lo, hi) in zip(a.bins, a.intervals):
        assert (lo, hi) == causal.bin_interval(j)
    with pytest.raises(analysis.AnalysisError):
        analysis.interval_profile(model, ds, "1999-01-01")


def test_baseline_centroid_gives_no_change(trained):
    model, ds, _ = trained
    base = model.baseline().data
    bank = analysis.TreatmentBank(base.copy(), np.array([19]), np.array([1.0]))
    day = ds.world.mobility.timestamps[30].strftime("%Y-%m-%d")
    prof = analysis.interval_profile(model, ds, day, bank=bank)
    assert prof.bins == [19] and not prof.change.any()


def test_event_outside_window_is_refused(trained):
    model, ds, _ = trained
    sample, ev = event_window(ds)
    far = next(s for s in ds.samples if s.anchor > sample.anchor + 48)
    with pytest.raises(analysis.AnalysisError):
        analysis.estimate_ate(model, ds, far, ev)
