"""Command-line entry point.

Exit codes: 0 success, 2 invalid input (world files, config, arguments,
checkpoints), 3 runtime failure (divergence, endpoint errors, I/O).
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from . import analysis
from .data import WorldValidationError, load_events, load_world, parse_timestamp
from .extract import EndpointError, LlmEndpointConfig, extract_many, mock_extract
from .synth import WorldSpec, export_fixture, generate_world
from .training import (VARIANT_LABELS, CheckpointError, Dataset, TrainConfig, TrainingDiverged,
                       ablation_configs, checkpoint_config, checkpoint_scaler, evaluate,
                       export_best, load_checkpoint, prepare_dataset, run_ablation_matrix, train)

log = logging.getLogger("mobcause")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 2, 3


class UsageError(ValueError):
    pass


# --- config and shared helpers ---------------------------------------------

def read_config(path: str | None) -> dict:
    """JSON object with optional ``train``, ``world`` and ``endpoint`` sections."""
    if path is None:
        return {}
    try:
        obj = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(obj, dict):
        raise UsageError(f"{path}: top level must be an object")
    unknown = set(obj) - {"train", "world", "endpoint"}
    if unknown:
        raise UsageError(f"{path}: unknown sections {sorted(unknown)}")
    return obj


def train_config(args, cfg: dict) -> TrainConfig:
    section = dict(cfg.get("train", {}))
    task = getattr(args, "task", None) or section.pop("task", "medium")
    section.pop("task", None)
    base = TrainConfig.for_task(task, **section)
    if getattr(args, "max_epochs", None):
        base = replace(base, max_epochs=args.max_epochs)
    variant = getattr(args, "variant", "full")
    return ablation_configs(base)[variant]


def out_dir(args) -> Path:
    p = Path(args.out)
    p.mkdir(parents=True, exist_ok=True)
    return p


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2) + "\n")


def write_rows(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        wr.writerows(rows)


def open_checkpoint(args) -> tuple:
    """Model and dataset for an analysis; the checkpoint file is only read."""
    cfg = checkpoint_config(args.checkpoint)
    world = load_world(args.world, load_events_file=cfg.use_events)
    model, _ = load_checkpoint(args.checkpoint, cfg, world)
    dataset = prepare_dataset(world, cfg)
    stored = checkpoint_scaler(args.checkpoint)
    if not (np.array_equal(stored.mean, dataset.scaler.mean)
            and np.array_equal(stored.std, dataset.scaler.std)):
        raise CheckpointError("world flows differ from the ones the checkpoint was trained on")
    return model, dataset


def find_event(dataset: Dataset, event_id: str):
    for ev in dataset.world.events:
        if ev.article_id == event_id:
            return ev
    raise UsageError(f"no event with id {event_id!r}")


def anchor_arg(dataset: Dataset, args) -> int:
    if args.anchor is not None:
        return args.anchor
    if args.at is not None:
        h = dataset.world.mobility.hour_index(parse_timestamp(args.at))
        if h is None:
            raise UsageError(f"{args.at} is not in the series")
        return h
    raise UsageError("give --anchor or --at")


# --- subcommands -----------------------------------------------------------

def cmd_generate(args, cfg) -> int:
    spec_kw = dict(cfg.get("world", {}))
    for k in ("n_regions", "days", "event_rate"):
        if getattr(args, k) is not None:
            spec_kw[k] = getattr(args, k)
    if args.seed is not None:
        spec_kw["seed"] = args.seed
    known = {f.name for f in fields(WorldSpec)}
    if set(spec_kw) - known:
        raise UsageError(f"unknown world keys {sorted(set(spec_kw) - known)}")
    synth = generate_world(WorldSpec(**spec_kw))
    world_dir, oracle_dir = export_fixture(synth, out_dir(args))
    print(f"world: {world_dir}\noracle: {oracle_dir}\nevents: {len(synth.world.events)} "
          f"(clipped cells: {synth.clipped})")
    return EXIT_OK


def cmd_extract(args, cfg) -> int:
    articles = []
    with open(args.inp) as fh:
        for line in fh:
            if line.strip():
                articles.append(json.loads(line))
    ep = dict(cfg.get("endpoint", {}))
    if args.endpoint:
        ep["base_url"] = args.endpoint
    if args.model:
        ep["model"] = args.model
    endpoint = LlmEndpointConfig(**ep)
    records = extract_many(articles, endpoint, endpoint.max_concurrent,
                           extractor=mock_extract if args.mock else None)
    dest = out_dir(args) / "events.jsonl"
    with open(dest, "w") as fh:
        for r in records:
            fh.write(json.dumps(r.to_json(), sort_keys=True) + "\n")
    n_bad = sum(not r.valid for r in records)
    print(f"{len(records)} records -> {dest} ({n_bad} invalid)")
    if records and all((r.error or "").startswith("endpoint failure") for r in records):
        print("failed: the endpoint did not answer for any article", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_train(args, cfg) -> int:
    config = train_config(args, cfg)
    seed = args.seed if args.seed is not None else config.seeds[0]
    world = load_world(args.world, load_events_file=config.use_events)
    dataset = prepare_dataset(world, config)
    out = out_dir(args)
    result = train(dataset, config, seed, checkpoint=out / "resume.bin",
                   resume=args.resume)
    export_best(result, out / "checkpoint.bin")
    rec = result.metrics_record()
    write_json(out / "metrics.json", rec)
    hist = result.state.history
    if hist:
        write_rows(out / "history.csv", list(hist[0]), [list(h.values()) for h in hist])
    print(json.dumps(rec))
    return EXIT_OK


def cmd_evaluate(args, cfg) -> int:
    model, dataset = open_checkpoint(args)
    metrics = evaluate(model, dataset, args.split)
    write_json(out_dir(args) / f"metrics_{args.split}.json", metrics)
    print(json.dumps(metrics))
    return EXIT_OK


def cmd_ablate(args, cfg) -> int:
    base = train_config(args, cfg)
    seeds = [args.seed] if args.seed is not None else None
    res = run_ablation_matrix(args.world, base, out_dir(args), args.variants, seeds)
    for line in res.table:
        print(",".join(line))
    if args.figures:
        from .plots import plot_table
        plot_table(res.records, Path(args.out) / "table_rmse.png")
    return EXIT_OK


def cmd_ate(args, cfg) -> int:
    model, dataset = open_checkpoint(args)
    ev = find_event(dataset, args.event)
    if args.anchor is None and args.at is None:
        h = dataset.world.mobility.hour_index(ev.event_time.replace(minute=0, second=0))
        anchor = h - model.dims.t_out // 2 if ev.predictable else h + 1
    else:
        anchor = anchor_arg(dataset, args)
    sample, _ = dataset.by_anchor(anchor)
    rep = analysis.estimate_ate(model, dataset, sample, ev)
    out = out_dir(args)
    write_json(out / "ate.json", rep.to_json())
    write_rows(out / "ate.csv", ["region", "timestamp", "tau"],
               [[r, h, repr(float(rep.tau[i, k]))] for i, r in enumerate(rep.regions)
                for k, h in enumerate(rep.hours)])
    print(json.dumps({"event_id": rep.event_id, "total": rep.total, "mean": rep.mean}))
    return EXIT_OK


def cmd_profile(args, cfg) -> int:
    model, dataset = open_checkpoint(args)
    prof = analysis.interval_profile(model, dataset, args.day, args.regions)
    out = out_dir(args)
    write_json(out / "profile.json", prof.to_json())
    rows = []
    for b, (lo, hi) in enumerate(prof.intervals):
        for i, r in enumerate(prof.regions):
            for k, h in enumerate(prof.hours):
                rows.append([prof.bins[b], lo, hi, r, h, repr(float(prof.change[b, i, k]))])
    write_rows(out / "profile.csv", ["bin", "lo", "hi", "region", "timestamp", "change"], rows)
    if args.figures:
        from .plots import plot_profile
        plot_profile(prof, out / "profile.png")
    print(json.dumps({"bins": prof.bins, "trend": prof.trend()}))
    return EXIT_OK


def _intentions(args, dataset: Dataset):
    if args.event:
        return find_event(dataset, args.event)
    if args.intentions:
        try:
            return [int(v) for v in args.intentions.split(",")]
        except ValueError as exc:
            raise UsageError("--intentions needs 10 comma-separated integers") from exc
    raise UsageError("give --event or --intentions")


def cmd_counterfactual(args, cfg) -> int:
    model, dataset = open_checkpoint(args)
    anchor = anchor_arg(dataset, args)
    curve = analysis.counterfactual_response(model, dataset, args.region, anchor,
                                             _intentions(args, dataset), args.offset)
    out = out_dir(args)
    write_json(out / "response.json", curve.to_json())
    write_rows(out / "response.csv", ["timestamp", "delta"],
               [[h, repr(float(d))] for h, d in zip(curve.hours, curve.delta)])
    if args.figures:
        from .plots import plot_response
        plot_response({curve.region: curve}, out / "response.png")
    print(json.dumps({"region": curve.region, "sum": float(curve.delta.sum())}))
    return EXIT_OK


def cmd_case(args, cfg) -> int:
    model, dataset = open_checkpoint(args)
    anchor = anchor_arg(dataset, args)
    case = analysis.case_compare(model, dataset, anchor, args.regions)
    out = out_dir(args)
    write_json(out / "case.json", case.to_json())
    rows = []
    for i, r in enumerate(case.regions):
        for k, h in enumerate(case.hours):
            rows.append([r, h] + [repr(float(a[i, k])) for a in
                                  (case.truth, case.pred_with, case.pred_without,
                                   case.err_with, case.err_without, case.improvement)])
    write_rows(out / "case.csv", ["region", "timestamp", "truth", "pred_with", "pred_without",
                                  "err_with", "err_without", "improvement"], rows)
    if args.figures:
        from .plots import plot_case
        plot_case(case, out / "case.png")
    print(json.dumps({"anchor": anchor, "mean_improvement": float(case.improvement.mean())}))
    return EXIT_OK


def cmd_export_emb(args, cfg) -> int:
    model, dataset = open_checkpoint(args)
    events = (load_events(Path(args.events), dataset.world.regions) if args.events
              else dataset.world.events)
    dest = out_dir(args) / "embeddings.csv"
    n = analysis.export_treatment_embeddings(model, events, dest, args.offset)
    print(f"{n} rows -> {dest}")
    return EXIT_OK


# --- parser ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with train/world/endpoint sections")
    common.add_argument("--seed", type=int, help="run seed (world seed for generate)")
    common.add_argument("--out", default="out", help="output directory (default: out)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="mobcause", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", parents=[common], help="write a synthetic world + oracle")
    g.add_argument("--n-regions", dest="n_regions", type=int)
    g.add_argument("--days", type=int)
    g.add_argument("--event-rate", dest="event_rate", type=float)
    g.set_defaults(fn=cmd_generate)

    e = sub.add_parser("extract", parents=[common], help="articles.jsonl -> events.jsonl")
    e.add_argument("--in", dest="inp", required=True, help="articles JSONL")
    e.add_argument("--endpoint", help="chat-completions base URL")
    e.add_argument("--model")
    e.add_argument("--mock", action="store_true",
                   help="answer from the articles' embedded answer blocks (no network)")
    e.set_defaults(fn=cmd_extract)

    def world_arg(sp):
        sp.add_argument("--world", required=True, help="world directory")

    def ckpt_args(sp):
        world_arg(sp)
        sp.add_argument("--checkpoint", required=True)

    t = sub.add_parser("train", parents=[common], help="train one model")
    world_arg(t)
    t.add_argument("--task", choices=["short", "medium", "long"])
    t.add_argument("--variant", choices=list(VARIANT_LABELS), default="full")
    t.add_argument("--max-epochs", dest="max_epochs", type=int)
    t.add_argument("--resume", help="continue from a resume.bin written by an earlier run")
    t.set_defaults(fn=cmd_train)

    ev = sub.add_parser("evaluate", parents=[common], help="metrics of a checkpoint")
    ckpt_args(ev)
    ev.add_argument("--split", choices=["test", "val"], default="test")
    ev.set_defaults(fn=cmd_evaluate)

    a = sub.add_parser("ablate", parents=[common], help="variants x seeds comparison table")
    world_arg(a)
    a.add_argument("--task", choices=["short", "medium", "long"])
    a.add_argument("--variants", nargs="+", choices=list(VARIANT_LABELS))
    a.add_argument("--max-epochs", dest="max_epochs", type=int)
    a.add_argument("--figures", action="store_true", help="also render PNG figures")
    a.set_defaults(fn=cmd_ablate)

    at = sub.add_parser("ate", parents=[common], help="effect of one event vs baseline")
    ckpt_args(at)
    at.add_argument("--event", required=True, help="event (article) id")
    at.add_argument("--anchor", type=int, help="first output hour index of the window")
    at.add_argument("--at", help="first output timestamp of the window")
    at.set_defaults(fn=cmd_ate)

    pr = sub.add_parser("profile", parents=[common], help="similarity-interval profile")
    ckpt_args(pr)
    pr.add_argument("--day", required=True, help="YYYY-MM-DD")
    pr.add_argument("--regions", nargs="+")
    pr.add_argument("--figures", action="store_true")
    pr.set_defaults(fn=cmd_profile)

    cf = sub.add_parser("counterfactual", parents=[common], help="response to a hypothetical event")
    ckpt_args(cf)
    cf.add_argument("--region", required=True)
    cf.add_argument("--anchor", type=int)
    cf.add_argument("--at")
    cf.add_argument("--event")
    cf.add_argument("--intentions", help="10 comma-separated scores")
    cf.add_argument("--offset", type=int, help="treatment slot (default: first output hour)")
    cf.add_argument("--figures", action="store_true")
    cf.set_defaults(fn=cmd_counterfactual)

    c = sub.add_parser("case", parents=[common], help="errors with vs without intentions")
    ckpt_args(c)
    c.add_argument("--anchor", type=int)
    c.add_argument("--at")
    c.add_argument("--regions", nargs="+")
    c.add_argument("--figures", action="store_true")
    c.set_defaults(fn=cmd_case)

    x = sub.add_parser("export-emb", parents=[common], help="encoded treatments as CSV")
    ckpt_args(x)
    x.add_argument("--events", help="events JSONL (default: the world's events)")
    x.add_argument("--offset", type=int)
    x.set_defaults(fn=cmd_export_emb)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = read_config(args.config)
        return args.fn(args, cfg)
    except (WorldValidationError, CheckpointError, UsageError, analysis.AnalysisError,
            KeyError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (TrainingDiverged, EndpointError, RuntimeError, OSError) as exc:
        print(f"failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
