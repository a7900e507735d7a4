"""Command-line entry point: generate, train, sweep and report.

Exit codes: 0 success, 1 runtime failure, 2 usage error (bad flags,
unknown config keys). Every command writes a JSON run manifest as its
final artifact; all other outputs are byte-stable given identical flags
and seeds, so reruns are idempotent (manifests carry timestamps and are
excluded from that guarantee).
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys
import time

import numpy as np

from . import __version__, datagen
from .datagen import GeneratorConfig, load_jsonl, save_jsonl, split
from .evaluation import (
    TradeoffPoint,
    frontier_auc,
    pareto_frontier,
    run_rollouts,
    stopping_time_histogram,
)
from .sttransformer import save_checkpoint
from .trainer import TrainConfig, sweep, train
from . import svg as svgmod


class CliError(Exception):
    def __init__(self, message, code=1):
        super().__init__(message)
        self.code = code


GENERATORS = {
    "paired": datagen.generate_paired_dataset,
    "structured-arrival": datagen.generate_structured_arrival_dataset,
}

_GEN_FIELDS = {f.name: f for f in dataclasses.fields(GeneratorConfig)}
_TRAIN_FIELDS = {f.name: f for f in dataclasses.fields(TrainConfig)}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None,
                        help="overrides any config-file seed (default 0)")
    common.add_argument("--config", help="flat key=value config file")
    common.add_argument("--out-dir", default=".")
    common.add_argument("--workers", type=int, default=1)

    parser = argparse.ArgumentParser(
        prog="earlyseq", description="Early classification of multimodal sequences"
    )
    parser.add_argument("--version", action="version", version=__version__)
    commands = parser.add_subparsers(dest="command", required=True)

    gen = commands.add_parser("generate", parents=[common],
                              help="write a synthetic JSONL dataset")
    gen.add_argument("--task", required=True, choices=sorted(GENERATORS))
    gen.add_argument("--n", type=int, default=1000)
    gen.add_argument("-o", "--output", required=True)
    gen.set_defaults(func=cmd_generate)

    tr = commands.add_parser("train", parents=[common],
                             help="train one model and log tradeoff points")
    _add_train_flags(tr)
    tr.set_defaults(func=cmd_train)

    sw = commands.add_parser("sweep", parents=[common],
                             help="train a (mu, trial) grid of models")
    _add_train_flags(sw)
    sw.add_argument("--mu-list", default="1e-5,1e-4,1e-3,1e-2,1e-1",
                    help="comma-separated time penalties")
    sw.add_argument("--trials", type=int, default=3)
    sw.set_defaults(func=cmd_sweep)

    rp = commands.add_parser("report", parents=[common],
                             help="frontiers, AUC summary and histograms from CSVs")
    rp.add_argument("--points", action="append", required=True, metavar="[METHOD=]PATH",
                    help="tradeoff points CSV, may repeat")
    rp.add_argument("--rollouts", action="append", default=[], metavar="[METHOD=]PATH",
                    help="rollouts CSV for stopping-time histograms, may repeat")
    rp.add_argument("--t-end", type=int, required=True)
    rp.add_argument("--chance-level", type=float, default=0.5)
    rp.add_argument("--svg", action="store_true", help="also write SVG plots")
    rp.set_defaults(func=cmd_report)
    return parser


def _add_train_flags(sub):
    sub.add_argument("--data", required=True, help="JSONL dataset path")
    sub.add_argument("--objective", choices=("cis", "larm"), default=None,
                     help="flag wins over a config-file objective (default cis)")
    sub.add_argument("--mu", type=float)
    sub.add_argument("--epochs", type=int)
    sub.add_argument("--lr", type=float, dest="learning_rate")
    sub.add_argument("--batch-size", type=int)
    sub.add_argument("--holdout", type=float, default=0.1)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 2
    try:
        return args.func(args)
    except CliError as err:
        print(f"error: {err}", file=sys.stderr)
        return err.code
    except (OSError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


def entrypoint():
    sys.exit(main())


# ---------------------------------------------------------------------------
# config plumbing


def _read_config(path, allowed, label) -> dict:
    """Parse a flat key=value file, validating keys against a dataclass."""
    values = {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as err:
        raise CliError(f"cannot read config: {err}", code=1)
    for lineno, line in enumerate(lines, start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise CliError(f"config line {lineno} is not key=value", code=2)
        key, _, raw = stripped.partition("=")
        key = key.strip()
        if key not in allowed:
            raise CliError(f"unknown {label} config key: {key}", code=2)
        values[key] = _parse_value(raw.strip())
    return values


def _parse_value(raw):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def _coerce_config(cls, values: dict):
    coerced = {}
    for key, value in values.items():
        if isinstance(value, list):
            value = _untangle(value)
        coerced[key] = value
    try:
        return cls(**coerced)
    except (TypeError, ValueError) as err:
        raise CliError(f"bad config: {err}", code=2)


def _untangle(value):
    if value and isinstance(value[0], list):
        return tuple(_untangle(v) for v in value)
    return tuple(value)


def _write_manifest(out_dir, command, snapshot, artifacts, started):
    manifest = {
        "command": command,
        "config": snapshot,
        "artifacts": sorted(os.path.basename(a) for a in artifacts),
        "started": started,
        "finished": time.time(),
        "version": __version__,
    }
    path = os.path.join(out_dir, f"manifest_{command}.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return path


def _write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


# ---------------------------------------------------------------------------
# generate


def cmd_generate(args) -> int:
    started = time.time()
    overrides = {}
    if args.config:
        overrides = _read_config(args.config, _GEN_FIELDS, "generator")
    if args.seed is not None:
        overrides["seed"] = args.seed
    overrides.setdefault("seed", 0)
    overrides["n_samples"] = args.n
    cfg = _coerce_config(GeneratorConfig, overrides)
    data = GENERATORS[args.task](cfg)
    try:
        save_jsonl(data, args.output)
    except OSError as err:
        raise CliError(f"cannot write dataset: {err}", code=1)
    manifest = {
        "command": "generate",
        "config": {"task": args.task, **dataclasses.asdict(cfg)},
        "artifacts": [os.path.basename(args.output)],
        "started": started,
        "finished": time.time(),
        "version": __version__,
    }
    with open(args.output + ".manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    print(f"wrote {len(data)} sequences to {args.output}")
    return 0


# ---------------------------------------------------------------------------
# train / sweep


def _load_train_config(args) -> TrainConfig:
    overrides = {}
    if args.config:
        overrides = _read_config(args.config, _TRAIN_FIELDS, "train")
    for key in ("objective", "mu", "epochs", "learning_rate", "batch_size"):
        flag = getattr(args, key, None)
        if flag is not None:
            overrides[key] = flag
    if args.seed is not None:
        overrides["seed"] = args.seed
    overrides.setdefault("seed", 0)
    return _coerce_config(TrainConfig, overrides)


def _load_split(args, seed):
    if not os.path.exists(args.data):
        raise CliError(f"dataset not found: {args.data}", code=1)
    data = load_jsonl(args.data)
    if not data:
        raise CliError(f"dataset is empty: {args.data}", code=1)
    return split(data, args.holdout, seed=seed)


def _points_rows(points):
    return [
        (repr(p.mu), p.trial, p.epoch, repr(p.mean_t), repr(p.accuracy))
        for p in points
    ]


def _log_rows(result):
    rows = []
    by_epoch = {p.epoch: p for p in result.points}
    for epoch, loss in enumerate(result.epoch_losses):
        point = by_epoch.get(epoch)
        rows.append((
            epoch,
            repr(loss),
            repr(point.mean_t) if point else "",
            repr(point.accuracy) if point else "",
        ))
    return rows


def _rollout_rows(records, mu, trial):
    return [
        (repr(mu), trial, r.stop_t, int(r.correct), "|".join(r.signature))
        for r in records
    ]


def _final_rollouts(model, val_data, config: TrainConfig):
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0xE7A1]))
    return run_rollouts(model, val_data, config.objective, rng)


def cmd_train(args) -> int:
    started = time.time()
    config = _load_train_config(args)
    train_data, val_data = _load_split(args, config.seed)
    os.makedirs(args.out_dir, exist_ok=True)
    try:
        result = train(train_data, val_data, config)
    except Exception as err:
        raise CliError(str(err), code=1)
    tag = config.objective
    artifacts = []

    ckpt = os.path.join(args.out_dir, f"checkpoint_{tag}.json")
    save_checkpoint(result.model, ckpt)
    artifacts.append(ckpt)

    log_path = os.path.join(args.out_dir, f"train_log_{tag}.csv")
    _write_csv(log_path, ("epoch", "loss", "mean_T", "accuracy"), _log_rows(result))
    artifacts.append(log_path)

    points_path = os.path.join(args.out_dir, f"points_{tag}.csv")
    _write_csv(points_path, ("mu", "trial", "epoch", "mean_T", "accuracy"),
               _points_rows(result.points))
    artifacts.append(points_path)

    rollouts_path = os.path.join(args.out_dir, f"rollouts_{tag}.csv")
    records = _final_rollouts(result.model, val_data, config)
    _write_csv(rollouts_path, ("mu", "trial", "T", "correct", "signature"),
               _rollout_rows(records, config.mu, config.trial))
    artifacts.append(rollouts_path)

    _write_manifest(args.out_dir, "train", _config_snapshot(config), artifacts, started)
    print(f"trained {tag}: {len(result.points)} tradeoff points -> {points_path}")
    return 0


def cmd_sweep(args) -> int:
    started = time.time()
    config = _load_train_config(args)
    try:
        mu_list = [float(v) for v in args.mu_list.split(",") if v.strip()]
    except ValueError:
        raise CliError(f"bad --mu-list: {args.mu_list}", code=2)
    train_data, val_data = _load_split(args, config.seed)
    os.makedirs(args.out_dir, exist_ok=True)
    cells = sweep(train_data, val_data, config, mu_list, args.trials,
                  workers=args.workers)
    tag = config.objective
    artifacts = []
    pooled_points = []
    pooled_rollouts = []
    failures = []
    for cell in cells:
        if cell.error is not None:
            failures.append(f"mu={cell.mu:g} trial={cell.trial}: {cell.error}")
            continue
        result = cell.result
        name = f"{tag}_mu{cell.mu:g}_trial{cell.trial}"
        ckpt = os.path.join(args.out_dir, f"checkpoint_{name}.json")
        save_checkpoint(result.model, ckpt)
        artifacts.append(ckpt)
        log_path = os.path.join(args.out_dir, f"train_log_{name}.csv")
        _write_csv(log_path, ("epoch", "loss", "mean_T", "accuracy"),
                   _log_rows(result))
        artifacts.append(log_path)
        pooled_points.extend(result.points)
        cell_config = dataclasses.replace(config, mu=cell.mu, trial=cell.trial)
        records = _final_rollouts(result.model, val_data, cell_config)
        pooled_rollouts.extend(_rollout_rows(records, cell.mu, cell.trial))

    points_path = os.path.join(args.out_dir, f"points_{tag}.csv")
    _write_csv(points_path, ("mu", "trial", "epoch", "mean_T", "accuracy"),
               _points_rows(pooled_points))
    artifacts.append(points_path)
    rollouts_path = os.path.join(args.out_dir, f"rollouts_{tag}.csv")
    _write_csv(rollouts_path, ("mu", "trial", "T", "correct", "signature"),
               pooled_rollouts)
    artifacts.append(rollouts_path)

    _write_manifest(args.out_dir, "sweep", {
        **_config_snapshot(config), "mu_list": mu_list, "trials": args.trials,
    }, artifacts, started)
    if failures:
        for failure in failures:
            print(f"cell failed: {failure}", file=sys.stderr)
        return 1
    print(f"swept {len(cells)} cells -> {points_path}")
    return 0


def _config_snapshot(config) -> dict:
    return dataclasses.asdict(config)


# ---------------------------------------------------------------------------
# report


def _parse_labeled(entries):
    labeled = []
    for entry in entries:
        if "=" in entry:
            label, _, path = entry.partition("=")
        else:
            path = entry
            label = os.path.splitext(os.path.basename(entry))[0]
        labeled.append((label, path))
    return labeled


def _read_points_csv(path) -> list[TradeoffPoint]:
    points = []
    try:
        fh = open(path, "r", encoding="utf-8", newline="")
    except OSError as err:
        raise CliError(str(err), code=1)
    with fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or set(reader.fieldnames) < {
            "mu", "trial", "epoch", "mean_T", "accuracy",
        }:
            raise CliError(f"malformed CSV {path} at line 1: bad header", code=1)
        for lineno, row in enumerate(reader, start=2):
            try:
                points.append(TradeoffPoint(
                    mean_t=float(row["mean_T"]), accuracy=float(row["accuracy"]),
                    mu=float(row["mu"]), trial=int(row["trial"]),
                    epoch=int(row["epoch"]),
                ))
            except (TypeError, ValueError, KeyError):
                raise CliError(f"malformed CSV {path} at line {lineno}", code=1)
    return points


class _ReportRecord:
    """Minimal rollout row for histogram/flow aggregation."""

    __slots__ = ("stop_t", "signature")

    def __init__(self, stop_t, signature):
        self.stop_t = stop_t
        self.signature = signature


def _read_rollouts_csv(path):
    rows = []
    try:
        fh = open(path, "r", encoding="utf-8", newline="")
    except OSError as err:
        raise CliError(str(err), code=1)
    with fh:
        reader = csv.DictReader(fh)
        for lineno, row in enumerate(reader, start=2):
            try:
                rows.append((int(row["T"]), tuple(row["signature"].split("|"))))
            except (TypeError, ValueError, KeyError):
                raise CliError(f"malformed CSV {path} at line {lineno}", code=1)
    return rows


def cmd_report(args) -> int:
    started = time.time()
    os.makedirs(args.out_dir, exist_ok=True)
    artifacts = []
    summary_rows = []
    frontier_series = {}
    for method, path in _parse_labeled(args.points):
        points = _read_points_csv(path)
        if not points:
            raise CliError(f"no points in {path}", code=1)
        trials = sorted({p.trial for p in points})
        frontier_rows = []
        aucs = []
        for trial in trials:
            frontier = pareto_frontier([p for p in points if p.trial == trial])
            frontier.auc = frontier_auc(frontier, args.t_end, args.chance_level)
            aucs.append((trial, frontier.auc))
            frontier_rows.extend(
                (trial, repr(p.mean_t), repr(p.accuracy)) for p in frontier.points
            )
            frontier_series.setdefault(method, []).extend(
                (p.mean_t, p.accuracy) for p in frontier.points
            )
        frontier_path = os.path.join(args.out_dir, f"frontier_{method}.csv")
        _write_csv(frontier_path, ("trial", "mean_T", "accuracy"), frontier_rows)
        artifacts.append(frontier_path)
        mean_auc = float(np.mean([a for _, a in aucs]))
        summary_rows.extend(
            (method, trial, repr(auc), repr(mean_auc)) for trial, auc in aucs
        )

    summary_path = os.path.join(args.out_dir, "auc_summary.csv")
    _write_csv(summary_path, ("method", "trial", "auc", "mean_auc"), summary_rows)
    artifacts.append(summary_path)

    histograms = {}
    for method, path in _parse_labeled(args.rollouts):
        rows = _read_rollouts_csv(path)
        if not rows:
            continue
        histogram, flows = stopping_time_histogram(
            [_ReportRecord(t, sig) for t, sig in rows]
        )
        histograms[method] = histogram
        hist_path = os.path.join(args.out_dir, f"histogram_{method}.csv")
        _write_csv(hist_path, ("T", "count"),
                   [(t, histogram[t]) for t in sorted(histogram)])
        artifacts.append(hist_path)
        flow_path = os.path.join(args.out_dir, f"flow_{method}.csv")
        _write_csv(flow_path, ("signature", "T", "count"),
                   [("|".join(sig), t, flows[(sig, t)])
                    for sig, t in sorted(flows)])
        artifacts.append(flow_path)

    if args.svg:
        scatter_path = os.path.join(args.out_dir, "frontiers.svg")
        with open(scatter_path, "w", encoding="utf-8") as fh:
            fh.write(svgmod.scatter_svg(frontier_series, xlabel="mean classification time",
                                        ylabel="accuracy", title="Pareto frontiers"))
        artifacts.append(scatter_path)
        for method, histogram in histograms.items():
            bar_path = os.path.join(args.out_dir, f"histogram_{method}.svg")
            with open(bar_path, "w", encoding="utf-8") as fh:
                fh.write(svgmod.bars_svg(histogram, xlabel="stopping time T",
                                         ylabel="count",
                                         title=f"stopping times ({method})"))
            artifacts.append(bar_path)

    _write_manifest(args.out_dir, "report", {
        "points": args.points, "rollouts": args.rollouts,
        "t_end": args.t_end, "chance_level": args.chance_level, "svg": args.svg,
    }, artifacts, started)
    print(f"report written to {args.out_dir}")
    return 0


if __name__ == "__main__":
    entrypoint()
