"""Command-line surface: corpus synthesis, training, embedding, probing,
reporting, and gridsearch orchestration.

Configuration precedence is CLI flag > config-file value > built-in default.
Every run directory receives a ``run.json`` echoing the fully resolved
configuration; that file is itself a valid ``--config`` input. Exit codes:
0 success, 1 runtime or contract failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import fcntl
import itertools
import json
import os
import sys
import threading
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from .augment import AugmentSpec, Strategy
from .errors import ContractError, SulcalError
from .network import HeadKind, load_checkpoint, save_checkpoint
from .probe import (
    evaluate_report,
    fit_linear_probe,
    make_report,
    predict_scores,
    read_split,
    stratified_split,
    write_report_json,
    write_split,
)
from .probe import auc as auc_of
from .skeleton import load_corpus, read_manifest
from .synth import SynthConfig, generate_corpus
from .training import (
    EmbeddingSet,
    TrainConfig,
    embed,
    read_embeddings,
    train,
    write_embeddings,
    write_loss_curve,
)

# Single source of truth for every RunConfig key. A config file may set any
# subset of these; unknown keys are rejected as usage errors.
DEFAULTS: dict = {
    # synthetic corpus
    "n": 100,
    "prevalence": 0.3,
    "dims": [17, 40, 38],
    "target_sparsity": 0.04,
    "jitter_mm": 1.0,
    # training
    "lr": 4e-4,
    "batch_size": 16,
    "tau": 0.5,
    "epochs": 100,
    "latent_dim": 10,
    "head": "linear",
    "augment": "branch_clip",
    "cutout_frac": 0.55,
    "clip_frac": 0.40,
    "max_rotation_deg": 6.0,
    "keep_bottom": None,
    "dropout": 0.05,
    "seed": 0,
    "channels": [16, 32, 64, 128, 256, 256],
    "strides": [1, 2, 1, 2, 1, 2],
    # probe / report
    "c": 1.0,
    "split_frac": 0.5,
    "split_seed": 0,
    "apply_head": False,
    # paths
    "corpus": None,
    "out": None,
    "run_id": None,
    # gridsearch
    "axes": {},
    "repeats": 1,
}

# Gridsearch axis menu: name -> (config key, caster, allowed values).
GRID_AXES: dict = {
    "lr": ("lr", float, (2e-4, 4e-4)),
    "batch": ("batch_size", int, (16, 32)),
    "cutout_frac": ("cutout_frac", float, (0.30, 0.45, 0.55)),
    "clip_frac": ("clip_frac", float, (0.30, 0.40, 0.50)),
    "dropout": ("dropout", float, (0.0, 0.05, 0.1)),
    "latent": ("latent_dim", int, (4, 10, 30)),
    "head": ("head", str, ("linear", "nonlinear")),
    "augment": ("augment", str, ("cutout", "branch_clip")),
}

RESULTS_NAME = "results.csv"


# ---------------------------------------------------------------------------
# Configuration resolution
# ---------------------------------------------------------------------------


def _check_config_value(key: str, value, error) -> None:
    """Shallow type check; domain validation happens in the dataclasses."""
    default = DEFAULTS[key]
    if key in ("corpus", "out", "run_id"):
        ok = value is None or isinstance(value, str)
    elif key == "keep_bottom":
        ok = value is None or isinstance(value, bool)
    elif key == "apply_head":
        ok = isinstance(value, bool)
    elif key == "axes":
        ok = isinstance(value, dict)
    elif isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    elif isinstance(default, list):
        ok = isinstance(value, list)
    else:
        ok = isinstance(value, str)
    if not ok:
        error(f"config key {key!r}: unexpected value {value!r}")


def _load_config_file(path: str, error) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            loaded = json.load(fh)
    except OSError as e:
        error(f"cannot read config file: {e}")
    except json.JSONDecodeError as e:
        error(f"config file {path}: not valid JSON: {e}")
    if not isinstance(loaded, dict):
        error(f"config file {path}: top level must be a JSON object")
    unknown = sorted(set(loaded) - set(DEFAULTS))
    if unknown:
        error(f"config file {path}: unknown keys: {', '.join(unknown)}")
    for key, value in loaded.items():
        _check_config_value(key, value, error)
    if "axes" in loaded:
        loaded["axes"] = _validate_axes(loaded["axes"], error)
    return loaded


def _validate_axes(raw: dict, error) -> dict:
    """Check axis names and values against the fixed menu."""
    axes: dict = {}
    for name in sorted(raw):
        if name not in GRID_AXES:
            error(f"unknown grid axis {name!r}; choose from {', '.join(sorted(GRID_AXES))}")
        _, cast, allowed = GRID_AXES[name]
        values = raw[name]
        if not isinstance(values, (list, tuple)) or len(values) == 0:
            error(f"axis {name!r}: need a non-empty list of values")
        out = []
        for v in values:
            try:
                cv = cast(v)
            except (TypeError, ValueError):
                error(f"axis {name!r}: cannot parse value {v!r}")
            if cv not in allowed:
                error(f"axis {name!r}: value {v!r} not in menu {allowed}")
            if cv in out:
                error(f"axis {name!r}: duplicate value {v!r}")
            out.append(cv)
        axes[name] = out
    return axes


def _parse_axis_flags(entries: list[str], error) -> dict:
    raw: dict = {}
    for entry in entries:
        name, sep, values = entry.partition("=")
        if not sep or not values:
            error(f"--axis expects NAME=V1,V2,...  got {entry!r}")
        if name in raw:
            error(f"--axis {name!r} given twice")
        raw[name] = values.split(",")
    return _validate_axes(raw, error)


def _resolve(args: argparse.Namespace, parser: argparse.ArgumentParser) -> dict:
    """DEFAULTS, overlaid by --config file, overlaid by explicit flags."""
    cfg = dict(DEFAULTS)
    if getattr(args, "config", None):
        cfg.update(_load_config_file(args.config, parser.error))
    for key in DEFAULTS:
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    flag = getattr(args, "keep_bottom_flag", None)
    if flag is not None:  # tri-state: "auto" must be able to override a config bool
        cfg["keep_bottom"] = {"auto": None, "on": True, "off": False}[flag]
    if getattr(args, "axis", None):
        cfg["axes"] = _parse_axis_flags(args.axis, parser.error)
    return cfg


def _require(cfg: dict, key: str, flag: str, parser: argparse.ArgumentParser) -> str:
    if cfg[key] is None:
        parser.error(f"{flag} is required (flag or config file)")
    return cfg[key]


def _write_run_json(cfg: dict, path: Path) -> None:
    resolved = {k: cfg[k] for k in DEFAULTS}
    payload = json.dumps(resolved, sort_keys=True, indent=2) + "\n"
    path.write_text(payload, encoding="utf-8")


# ---------------------------------------------------------------------------
# Config -> dataclass builders
# ---------------------------------------------------------------------------


def _synth_config(cfg: dict) -> SynthConfig:
    return SynthConfig(
        n_subjects=cfg["n"],
        prevalence=cfg["prevalence"],
        seed=cfg["seed"],
        dims=tuple(cfg["dims"]),
        target_sparsity=cfg["target_sparsity"],
        jitter_mm=cfg["jitter_mm"],
    )


def _augment_spec(cfg: dict) -> AugmentSpec:
    return AugmentSpec(
        strategy=Strategy(cfg["augment"]),
        cutout_frac=cfg["cutout_frac"],
        clip_frac=cfg["clip_frac"],
        max_rotation_deg=cfg["max_rotation_deg"],
        keep_bottom=cfg["keep_bottom"],
    )


def _train_config(cfg: dict) -> TrainConfig:
    return TrainConfig(
        lr=cfg["lr"],
        batch_size=cfg["batch_size"],
        tau=cfg["tau"],
        epochs=cfg["epochs"],
        latent_dim=cfg["latent_dim"],
        head=HeadKind(cfg["head"]),
        augment=_augment_spec(cfg),
        dropout_p=cfg["dropout"],
        seed=cfg["seed"],
        channels=tuple(cfg["channels"]),
        strides=tuple(cfg["strides"]),
    )


def _load_split(cfg: dict, args: argparse.Namespace, manifest):
    if getattr(args, "split", None):
        return read_split(args.split)
    return stratified_split(manifest, cfg["split_frac"], cfg["split_seed"])


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_synth(args, parser) -> int:
    cfg = _resolve(args, parser)
    out = Path(_require(cfg, "out", "--out", parser))
    manifest = generate_corpus(_synth_config(cfg), out)
    counts = {0: 0, 1: 0}
    for row in manifest.rows:
        counts[row.label] += 1
    print(f"corpus: {out} ({len(manifest)} crops, {counts[1]} positive, {counts[0]} negative)")
    return 0


def cmd_train(args, parser) -> int:
    cfg = _resolve(args, parser)
    corpus_dir = _require(cfg, "corpus", "--corpus", parser)
    out = Path(_require(cfg, "out", "--out", parser))
    if cfg["run_id"] is None:
        cfg["run_id"] = f"train-seed{cfg['seed']}"
    run_dir = out / cfg["run_id"]
    run_dir.mkdir(parents=True, exist_ok=True)

    _manifest, crops = load_corpus(corpus_dir)
    _write_run_json(cfg, run_dir / "run.json")
    tc = _train_config(cfg)

    def on_epoch(epoch: int, loss: float) -> None:
        print(f"epoch {epoch}/{tc.epochs} loss {loss:.6f}", flush=True)

    params, curve = train(crops, tc, on_epoch=on_epoch)
    save_checkpoint(params, run_dir / "checkpoint.sslf")
    write_loss_curve(curve, run_dir / "loss.csv")
    print(f"checkpoint: {run_dir / 'checkpoint.sslf'} (final loss {curve[-1]:.6f})")
    return 0


def cmd_embed(args, parser) -> int:
    cfg = _resolve(args, parser)
    corpus_dir = _require(cfg, "corpus", "--corpus", parser)
    out = Path(_require(cfg, "out", "--out", parser))
    params = load_checkpoint(args.checkpoint)
    _manifest, crops = load_corpus(corpus_dir)
    es = embed(params, crops, source=str(args.checkpoint), apply_head=cfg["apply_head"])
    out.parent.mkdir(parents=True, exist_ok=True)
    write_embeddings(es, out)
    print(f"embeddings: {out} ({len(es.entries)} subjects, dim {es.dim})")
    return 0


def cmd_probe(args, parser) -> int:
    cfg = _resolve(args, parser)
    corpus_dir = _require(cfg, "corpus", "--corpus", parser)
    out = Path(_require(cfg, "out", "--out", parser))
    manifest = read_manifest(corpus_dir)
    es = read_embeddings(args.embeddings)
    split = _load_split(cfg, args, manifest)
    labels = manifest.labels()
    missing = [s for s in (*split.part1, *split.part2) if s not in es.entries]
    if missing:
        raise ContractError(f"split subjects missing from embeddings: {missing[:3]}...")

    fit_set = EmbeddingSet(entries={s: es.entries[s] for s in split.part1}, source=es.source)
    model = fit_linear_probe(fit_set, labels, C=cfg["c"])
    test_set = EmbeddingSet(entries={s: es.entries[s] for s in split.part2}, source=es.source)
    scores = predict_scores(model, test_set)
    value = auc_of([scores[s] for s in split.part2], [labels[s] for s in split.part2])

    out.parent.mkdir(parents=True, exist_ok=True)
    write_report_json(make_report([value]), out)
    if args.save_split:
        write_split(split, args.save_split)
    print(f"auc {value:.6f} (fit n={len(split.part1)}, test n={len(split.part2)})")
    return 0


def cmd_report(args, parser) -> int:
    cfg = _resolve(args, parser)
    corpus_dir = _require(cfg, "corpus", "--corpus", parser)
    out = Path(_require(cfg, "out", "--out", parser))
    manifest, crops = load_corpus(corpus_dir)
    split = _load_split(cfg, args, manifest)
    checkpoints = [load_checkpoint(p) for p in args.checkpoints]
    report = evaluate_report(checkpoints, crops, split, C=cfg["c"], apply_head=cfg["apply_head"])
    out.parent.mkdir(parents=True, exist_ok=True)
    write_report_json(report, out)
    print(f"auc mean {report.mean:.4f} sd {report.sd:.4f} (n={report.n})")
    return 0


# ---------------------------------------------------------------------------
# Gridsearch
# ---------------------------------------------------------------------------


def _fmt_value(v) -> str:
    return repr(v) if isinstance(v, float) else str(v)


def _worker_count(n_jobs: int, error) -> int:
    raw = os.environ.get("SULCAL_SSL_THREADS", "1")
    try:
        cap = int(raw)
    except ValueError:
        error(f"SULCAL_SSL_THREADS={raw!r} is not an integer")
    return max(1, min(n_jobs, cap))


def _append_result_row(results_path: Path, lock_path: Path, line: str) -> None:
    # exclusive lock: concurrent workers (or processes) serialize appends
    with open(lock_path, "w") as lk:
        fcntl.flock(lk, fcntl.LOCK_EX)
        with open(results_path, "a", encoding="utf-8", newline="") as fh:
            fh.write(line)


def cmd_gridsearch(args, parser) -> int:
    cfg = _resolve(args, parser)
    corpus_dir = _require(cfg, "corpus", "--corpus", parser)
    out = Path(_require(cfg, "out", "--out", parser))
    axes = cfg["axes"]
    if not axes:
        parser.error("empty grid: give at least one --axis NAME=V1,V2,... (or config axes)")
    if cfg["repeats"] < 1:
        parser.error(f"--repeats must be >= 1, got {cfg['repeats']}")

    out.mkdir(parents=True, exist_ok=True)
    _write_run_json(cfg, out / "run.json")
    manifest, crops = load_corpus(corpus_dir)
    split = _load_split(cfg, args, manifest)

    names = sorted(axes)
    jobs = []  # (cell_id, {config key: value}, {axis name: value}, repeat)
    for combo in itertools.product(*(axes[n] for n in names)):
        for rep in range(cfg["repeats"]):
            cell_id = "_".join(
                [f"{n}-{_fmt_value(v)}" for n, v in zip(names, combo)] + [f"rep-{rep}"]
            )
            overrides = {GRID_AXES[n][0]: v for n, v in zip(names, combo)}
            jobs.append((cell_id, overrides, dict(zip(names, combo)), rep))

    results_path = out / RESULTS_NAME
    lock_path = out / (RESULTS_NAME + ".lock")
    header = "cell_id," + ",".join(names) + ",repeat,auc\n"
    if not results_path.exists():
        results_path.write_text(header, encoding="utf-8")

    print_lock = threading.Lock()

    def run_cell(job) -> tuple[str, float, bool]:
        cell_id, overrides, _axis_values, rep = job
        cell_dir = out / "cells" / cell_id
        result_path = cell_dir / "result.json"
        if result_path.exists():
            try:
                value = float(json.loads(result_path.read_text(encoding="utf-8"))["auc"])
                with print_lock:
                    print(f"{cell_id}: cached auc {value:.6f}", flush=True)
                return cell_id, value, True
            except (json.JSONDecodeError, KeyError, TypeError, ValueError):
                pass  # unreadable marker: retrain the cell
        cell_cfg = dict(cfg)
        cell_cfg.update(overrides)
        cell_cfg["seed"] = cfg["seed"] + rep  # repeats differ only by seed
        cell_cfg["run_id"] = cell_id
        cell_cfg["axes"] = {}
        cell_dir.mkdir(parents=True, exist_ok=True)
        _write_run_json(cell_cfg, cell_dir / "run.json")
        params, curve = train(crops, _train_config(cell_cfg))
        save_checkpoint(params, cell_dir / "checkpoint.sslf")
        write_loss_curve(curve, cell_dir / "loss.csv")
        report = evaluate_report(
            [params], crops, split, C=cfg["c"], apply_head=cfg["apply_head"]
        )
        value = report.aucs[0]
        payload = {
            "auc": value,
            "cell_id": cell_id,
            "repeat": rep,
            "seed": cell_cfg["seed"],
        }
        tmp = result_path.with_suffix(".json.tmp")
        tmp.write_text(json.dumps(payload, sort_keys=True) + "\n", encoding="utf-8")
        tmp.replace(result_path)
        with print_lock:
            print(f"{cell_id}: auc {value:.6f}", flush=True)
        return cell_id, value, False

    workers = _worker_count(len(jobs), parser.error)
    aucs: dict[str, float] = {}
    if workers == 1:
        outcomes = map(run_cell, jobs)
    else:
        pool = ThreadPoolExecutor(max_workers=workers)
        outcomes = pool.map(run_cell, jobs)
    for job, (cell_id, value, cached) in zip(jobs, outcomes):
        aucs[cell_id] = value
        if not cached:  # cached rows are already on disk from the earlier run
            _append_result_row(results_path, lock_path, _result_line(job, value))
    if workers > 1:
        pool.shutdown()

    # rewrite in job order so the final table is byte-identical regardless of
    # completion order or resume history
    lines = [header] + [_result_line(job, aucs[job[0]]) for job in jobs]
    results_path.write_text("".join(lines), encoding="utf-8")
    print(f"results: {results_path} ({len(jobs)} rows)")
    return 0


def _result_line(job, value: float) -> str:
    cell_id, _overrides, axis_values, rep = job
    fields = [cell_id]
    fields += [_fmt_value(axis_values[n]) for n in sorted(axis_values)]
    fields += [str(rep), "%.17g" % value]
    return ",".join(fields) + "\n"


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", metavar="FILE", help="JSON config file (flags win)")


def _add_train_flags(sub: argparse.ArgumentParser) -> None:
    d = DEFAULTS
    sub.add_argument("--lr", type=float, help=f"learning rate (default {d['lr']})")
    sub.add_argument("--batch-size", dest="batch_size", type=int,
                     help=f"crops per batch (default {d['batch_size']})")
    sub.add_argument("--tau", type=float, help=f"softmax temperature (default {d['tau']})")
    sub.add_argument("--epochs", type=int, help=f"training epochs (default {d['epochs']})")
    sub.add_argument("--latent-dim", dest="latent_dim", type=int,
                     help=f"backbone output dimension (default {d['latent_dim']})")
    sub.add_argument("--head", choices=["linear", "nonlinear"],
                     help=f"projection head (default {d['head']})")
    sub.add_argument("--augment", choices=["cutout", "branch_clip"],
                     help=f"view strategy (default {d['augment']})")
    sub.add_argument("--cutout-frac", dest="cutout_frac", type=float,
                     help=f"cutout block edge fraction (default {d['cutout_frac']})")
    sub.add_argument("--clip-frac", dest="clip_frac", type=float,
                     help=f"branch-clip removal quota (default {d['clip_frac']})")
    sub.add_argument("--max-rotation-deg", dest="max_rotation_deg", type=float,
                     help=f"rotation range per axis (default {d['max_rotation_deg']})")
    sub.add_argument("--keep-bottom", dest="keep_bottom_flag",
                     choices=["auto", "on", "off"],
                     help="bottom-voxel handling; auto = strategy default (default auto)")
    sub.add_argument("--dropout", type=float,
                     help=f"dropout probability (default {d['dropout']})")
    sub.add_argument("--seed", type=int, help=f"run seed (default {d['seed']})")
    sub.add_argument("--channels", type=int, nargs=6, metavar="C",
                     help=f"conv channels per layer (default {d['channels']})")
    sub.add_argument("--strides", type=int, nargs=6, metavar="S",
                     help=f"conv strides per layer (default {d['strides']})")


def _add_eval_flags(sub: argparse.ArgumentParser) -> None:
    d = DEFAULTS
    sub.add_argument("--c", type=float, help=f"probe regularization strength (default {d['c']})")
    sub.add_argument("--split", metavar="FILE", help="existing split CSV (overrides frac/seed)")
    sub.add_argument("--split-frac", dest="split_frac", type=float,
                     help=f"part1 fraction for the stratified split (default {d['split_frac']})")
    sub.add_argument("--split-seed", dest="split_seed", type=int,
                     help=f"stratified split seed (default {d['split_seed']})")
    sub.add_argument("--apply-head", dest="apply_head", action="store_true", default=None,
                     help="evaluate projection-head outputs instead of backbone latents")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sulcal-ssl",
        description="Self-supervised contrastive learning on sparse 3D skeleton crops.",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("synth", help="generate a synthetic labelled corpus")
    _add_common(p)
    p.add_argument("--n", type=int, help=f"number of subjects (default {DEFAULTS['n']})")
    p.add_argument("--prevalence", type=float,
                   help=f"positive-label fraction (default {DEFAULTS['prevalence']})")
    p.add_argument("--seed", type=int, help=f"corpus seed (default {DEFAULTS['seed']})")
    p.add_argument("--dims", type=int, nargs=3, metavar="D",
                   help=f"crop grid dimensions (default {DEFAULTS['dims']})")
    p.add_argument("--target-sparsity", dest="target_sparsity", type=float,
                   help=f"occupied-voxel fraction (default {DEFAULTS['target_sparsity']})")
    p.add_argument("--jitter-mm", dest="jitter_mm", type=float,
                   help=f"surface jitter in mm (default {DEFAULTS['jitter_mm']})")
    p.add_argument("--out", help="corpus output directory")
    p.set_defaults(func=cmd_synth)

    p = subs.add_parser("train", help="train one contrastive model")
    _add_common(p)
    p.add_argument("--corpus", help="corpus directory (from synth)")
    p.add_argument("--out", help="output root; artifacts land in out/<run-id>/")
    p.add_argument("--run-id", dest="run_id", help="run directory name (default train-seed<seed>)")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = subs.add_parser("embed", help="embed a corpus with a trained checkpoint")
    _add_common(p)
    p.add_argument("--checkpoint", required=True, help="checkpoint file (.sslf)")
    p.add_argument("--corpus", help="corpus directory")
    p.add_argument("--out", help="embeddings CSV path")
    p.add_argument("--apply-head", dest="apply_head", action="store_true", default=None,
                   help="embed projection-head outputs instead of backbone latents")
    p.set_defaults(func=cmd_embed)

    p = subs.add_parser("probe", help="fit a linear probe on part1, report AUC on part2")
    _add_common(p)
    p.add_argument("--embeddings", required=True, help="embeddings CSV (from embed)")
    p.add_argument("--corpus", help="corpus directory (labels come from its manifest)")
    p.add_argument("--out", help="report JSON path")
    p.add_argument("--save-split", dest="save_split", metavar="FILE",
                   help="also write the split used to FILE")
    _add_eval_flags(p)
    p.set_defaults(func=cmd_probe)

    p = subs.add_parser("report", help="probe several checkpoints, report mean and sd AUC")
    _add_common(p)
    p.add_argument("--checkpoints", nargs="+", required=True, metavar="CKPT",
                   help="checkpoint files to evaluate")
    p.add_argument("--corpus", help="corpus directory")
    p.add_argument("--out", help="report JSON path")
    _add_eval_flags(p)
    p.set_defaults(func=cmd_report)

    p = subs.add_parser(
        "gridsearch",
        help="train one model per grid cell and tabulate validation AUCs",
        description="Cells are resumable: a cell with a readable result.json is "
        "not retrained. SULCAL_SSL_THREADS caps worker parallelism (default 1).",
    )
    _add_common(p)
    p.add_argument("--corpus", help="corpus directory")
    p.add_argument("--out", help="gridsearch output root")
    p.add_argument("--axis", action="append", metavar="NAME=V1,V2",
                   help="grid axis; repeatable; names: " + ", ".join(sorted(GRID_AXES)))
    p.add_argument("--repeats", type=int,
                   help=f"models per cell, seeds seed+0..k-1 (default {DEFAULTS['repeats']})")
    _add_train_flags(p)
    _add_eval_flags(p)
    p.set_defaults(func=cmd_gridsearch)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args, parser)
    except SulcalError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
