"""Command-line entry points.

Every command accepts ``--config``, ``--seed`` and ``--out``, writes its
artifacts only inside ``--out`` and finishes by writing a run manifest
with content hashes.  Exit codes: 2 config error, 3 data error,
4 numeric failure, 1 anything else.
"""

from __future__ import annotations

import csv
import functools
import json
import sys
import time
from pathlib import Path

import click
import numpy as np

from . import autoencoder as ae
from . import capture, classify, continual, plots
from . import data as data_mod
from .config import SchemaView, load_yaml_with_lines, parse_arch, parse_hyper, snapshot
from .errors import FlashcardsError
from .manifest import write_manifest
from .metrics import MetricsMatrix
from .patterns import PatternSpec, generate_patterns


def guarded(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except FlashcardsError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(exc.exit_code)

    return wrapper


def _view(config_path, extra_seed=None):
    if config_path:
        raw, lines = load_yaml_with_lines(config_path)
        view = SchemaView(raw, lines, str(config_path))
    else:
        view = SchemaView({}, {}, "<flags>")
    return view


def _resolve_seed(view, flag_seed):
    seed = view.get("seed", int, 0)
    return flag_seed if flag_seed is not None else seed


def _out_dir(out, command) -> Path:
    path = Path(out) if out else Path("runs") / command
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_history_csv(path, history):
    keys = sorted({k for h in history for k in h})
    keys = ["epoch"] + [k for k in keys if k != "epoch"]
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=keys)
        writer.writeheader()
        writer.writerows(history)


common_options = [
    click.option("--config", "config_path", type=click.Path(), default=None,
                 help="YAML experiment config."),
    click.option("--seed", type=int, default=None,
                 help="Override the config seed."),
    click.option("--out", type=click.Path(), default=None,
                 help="Run directory (default runs/<command>)."),
    click.option("--data-dir", type=click.Path(), default=None,
                 help="Dataset cache directory (or set FLASHCARDS_DATA_DIR)."),
]


def with_common(fn):
    for opt in reversed(common_options):
        fn = opt(fn)
    return fn


@click.group()
def main():
    """Knowledge capture and replay experiments."""


@main.command("train-ae")
@with_common
@guarded
def cmd_train_ae(config_path, seed, out, data_dir):
    """Train an autoencoder on one dataset; emit checkpoint + reports."""
    t0 = time.time()
    view = _view(config_path)
    dataset = view.get("dataset", str, required=True)
    limit = view.get("limit", int)
    test_limit = view.get("test_limit", int)
    arch = parse_arch(view.get("arch", (str, dict)), view)
    noise_factor = view.get("noise_factor", float, 0.0)
    val_fraction = view.get("val_fraction", float, 0.1)
    hyper = parse_hyper(view)
    run_seed = _resolve_seed(view, seed)
    hyper.seed = run_seed
    view.reject_unknown()

    out_path = _out_dir(out, "train-ae")
    full = data_mod.load_dataset(dataset, "train", limit, data_dir)
    train, val = data_mod.train_val_split(full, val_fraction, run_seed)
    test = data_mod.load_dataset(dataset, "test", test_limit, data_dir)

    model = ae.build_ae(arch, seed=run_seed)
    noise = (data_mod.NoiseSpec(noise_factor, seed=run_seed)
             if noise_factor > 0 else None)
    report = ae.train_ae(model, train.images, val.images, hyper, noise=noise,
                         bounds_batch=test.images)

    test_in = test.images if noise is None else data_mod.add_noise(
        test.images, data_mod.NoiseSpec(noise_factor, seed=run_seed + 999))
    test_mae = ae.evaluate_mae(model, test_in, test.images)

    config_snapshot = {
        "dataset": dataset, "limit": limit, "test_limit": test_limit,
        "arch": snapshot(arch), "hyper": snapshot(hyper),
        "noise_factor": noise_factor, "val_fraction": val_fraction,
        "seed": run_seed,
    }
    ckpt = out_path / "checkpoint.ckpt"
    ae.save_checkpoint(ckpt, model, arch.to_dict(), report.history,
                       meta={"recon_bounds": list(report.recon_bounds),
                             "test_mae": test_mae,
                             "dataset": dataset})
    _write_history_csv(out_path / "history.csv", report.history)
    outputs = {"checkpoint": "checkpoint.ckpt", "history": "history.csv"}
    grid = plots.save_recon_grid(out_path / "recon_grid.png", test.images[:8],
                                 ae.forward(model, test.images[:8]),
                                 title=f"{dataset} test reconstructions")
    if grid:
        outputs["recon_grid"] = "recon_grid.png"
    write_manifest(out_path, "train-ae", config_snapshot, run_seed, outputs,
                   {"total": time.time() - t0})
    click.echo(json.dumps({"out": str(out_path), "test_mae": test_mae,
                           "best_epoch": report.best_epoch}))


@main.command("make-patterns")
@with_common
@click.option("--kind", default=None)
@click.option("--count", type=int, default=None)
@click.option("--cell-size", type=int, default=None)
@click.option("--grayscale", is_flag=True, default=False)
@guarded
def cmd_make_patterns(config_path, seed, out, data_dir, kind, count,
                      cell_size, grayscale):
    """Dump a pattern batch to the tensor format and an image grid."""
    t0 = time.time()
    view = _view(config_path)
    spec = PatternSpec(
        kind=kind or view.get("kind", str, "maze"),
        count=count or view.get("count", int, 64),
        cell_size=cell_size if cell_size is not None else view.get("cell_size", int),
        colorize=not grayscale and view.get("colorize", bool, True),
        seed=_resolve_seed(view, seed),
    )
    view.reject_unknown()
    out_path = _out_dir(out, "make-patterns")
    batch = generate_patterns(spec)
    from .tensorio import write_tensor
    write_tensor(out_path / "patterns.fct", batch)
    outputs = {"patterns": "patterns.fct"}
    if plots.save_image_grid(out_path / "patterns.png", batch[:64],
                             title=f"{spec.kind} patterns"):
        outputs["grid"] = "patterns.png"
    write_manifest(out_path, "make-patterns",
                   {"kind": spec.kind, "count": spec.count,
                    "cell_size": spec.cell_size, "colorize": spec.colorize,
                    "seed": spec.seed},
                   spec.seed, outputs, {"total": time.time() - t0})
    click.echo(json.dumps({"out": str(out_path), "count": spec.count}))


@main.command("make-flashcards")
@with_common
@click.option("--checkpoint", type=click.Path(), default=None)
@click.option("--count", "n_flashcards", type=int, default=None)
@click.option("--iterations", "-r", type=int, default=None)
@guarded
def cmd_make_flashcards(config_path, seed, out, data_dir, checkpoint,
                        n_flashcards, iterations):
    """Construct a flashcard set from a trained checkpoint."""
    t0 = time.time()
    view = _view(config_path)
    ckpt_path = checkpoint or view.get("checkpoint", str, required=True)
    n = n_flashcards or view.get("n_flashcards", int, 1000)
    r = iterations if iterations is not None else view.get("iterations", int, 10)
    pv = view.sub("pattern")
    run_seed = _resolve_seed(view, seed)
    spec = PatternSpec(
        kind=pv.get("kind", str, "maze"),
        cell_size=pv.get("cell_size", int),
        colorize=pv.get("colorize", bool, True),
        seed=run_seed,
    )
    pv.reject_unknown()
    view.reject_unknown()

    model, _, _ = ae.load_checkpoint(ckpt_path)
    cards = capture.construct_flashcards(
        model, capture.FlashcardConfig(n_flashcards=n, iterations=r,
                                       pattern=spec))
    out_path = _out_dir(out, "make-flashcards")
    cards.save(out_path / "flashcards.fct")
    outputs = {"flashcards": "flashcards.fct",
               "sidecar": "flashcards.fct.meta.json"}
    if plots.save_image_grid(out_path / "flashcards.png", cards.images[:64],
                             title=f"flashcards r={r}"):
        outputs["grid"] = "flashcards.png"
    summary = {"out": str(out_path), "count": len(cards), "r": r,
               "source_model_id": cards.source_model_id}
    if cards.delta_mae is not None:
        summary["delta_bounds"] = list(cards.bounds)
    write_manifest(out_path, "make-flashcards",
                   {"checkpoint": str(ckpt_path), "n_flashcards": n,
                    "iterations": r, "pattern": snapshot(vars(spec)),
                    "seed": run_seed},
                   run_seed, outputs, {"total": time.time() - t0})
    click.echo(json.dumps(summary))


@main.command("sweep-r")
@with_common
@click.option("--checkpoint", type=click.Path(), default=None)
@click.option("--dataset", default=None)
@click.option("--r-max", type=int, default=None)
@guarded
def cmd_sweep_r(config_path, seed, out, data_dir, checkpoint, dataset, r_max):
    """Latent-distance and per-pass-change curves over recursion depth."""
    t0 = time.time()
    view = _view(config_path)
    ckpt_path = checkpoint or view.get("checkpoint", str, required=True)
    ds = dataset or view.get("dataset", str, required=True)
    limit = view.get("limit", int, 2000)
    rmx = r_max or view.get("r_max", int, 50)
    n_patterns = view.get("n_patterns", int, 500)
    run_seed = _resolve_seed(view, seed)
    pv = view.sub("pattern")
    spec = PatternSpec(kind=pv.get("kind", str, "maze"),
                       cell_size=pv.get("cell_size", int),
                       colorize=pv.get("colorize", bool, True),
                       seed=run_seed)
    pv.reject_unknown()
    view.reject_unknown()

    model, _, _ = ae.load_checkpoint(ckpt_path)
    meta = ae.read_checkpoint_meta(ckpt_path)
    eps1 = (meta or {}).get("recon_bounds", [None])[0]
    reference = data_mod.load_dataset(ds, "train", limit, data_dir)
    report = capture.sweep_r(
        model,
        capture.FlashcardConfig(n_flashcards=n_patterns, iterations=rmx,
                                pattern=spec),
        reference.images, rmx, epsilon1=eps1,
    )
    out_path = _out_dir(out, "sweep-r")
    report.to_csv(out_path / "sweep.csv")
    outputs = {"sweep": "sweep.csv"}
    if plots.save_sweep_plot(out_path / "sweep.png", report,
                             title=f"recursion sweep vs {ds}"):
        outputs["plot"] = "sweep.png"
    write_manifest(out_path, "sweep-r",
                   {"checkpoint": str(ckpt_path), "dataset": ds,
                    "limit": limit, "r_max": rmx, "n_patterns": n_patterns,
                    "seed": run_seed},
                   run_seed, outputs, {"total": time.time() - t0})
    click.echo(json.dumps({
        "out": str(out_path), "recommended_r": report.recommended_r,
        "p1_satisfied": report.p1_satisfied,
        "p2_flsd_ratio": report.p2_flsd_ratio,
    }))


def _parse_tasks(view):
    raw_tasks = view.get("tasks", list, required=True)
    tasks = []
    for i, item in enumerate(raw_tasks):
        if isinstance(item, str):
            tasks.append(continual.TaskSpec(item))
        elif isinstance(item, dict):
            tasks.append(continual.TaskSpec(
                dataset=item.get("dataset"),
                limit=item.get("limit"),
                test_limit=item.get("test_limit"),
            ))
        else:
            view.error(f"tasks[{i}]", "expected a dataset name or mapping")
        if tasks[-1].dataset is None:
            view.error(f"tasks[{i}]", "missing dataset")
    return tasks


@main.command("run-sequence")
@with_common
@guarded
def cmd_run_sequence(config_path, seed, out, data_dir):
    """Train a task sequence under one or more strategies."""
    t0 = time.time()
    view = _view(config_path)
    tasks = _parse_tasks(view)
    strategies = view.get("strategy", (str, list), "flashcards")
    if isinstance(strategies, str):
        strategies = [s.strip() for s in strategies.split(",")]
    run_seed = _resolve_seed(view, seed)
    arch = parse_arch(view.get("arch", (str, dict)), view)
    hyper = parse_hyper(view)
    base = dict(
        tasks=tasks,
        replay_weight=view.get("replay_weight", float, 1.0),
        n_flashcards=view.get("n_flashcards", int),
        flashcard_fraction=view.get("flashcard_fraction", float, 0.1),
        flashcard_r=view.get("flashcard_r", int, 10),
        pattern_kind=view.get("pattern_kind", str, "maze"),
        coreset_size=view.get("coreset_size", int, 0),
        noise_factor=view.get("noise_factor", float, 0.0),
        val_fraction=view.get("val_fraction", float, 0.1),
        arch=arch,
        hyper=hyper,
        seed=run_seed,
        cache_dir=data_dir,
    )
    view.reject_unknown()

    out_path = _out_dir(out, "run-sequence")
    config_snapshot = snapshot({**base, "strategy": strategies,
                                "tasks": [vars(t) for t in tasks]})
    (out_path / "config.json").write_text(json.dumps(config_snapshot, indent=2))
    outputs = {"config": "config.json"}
    summaries = {}
    for strategy in strategies:
        cfg = continual.SequenceConfig(strategy=strategy, **base)
        run_dir = out_path / strategy
        result = continual.train_sequence(cfg, out_dir=run_dir)
        result.matrix.to_csv(out_path / f"metrics_{strategy}.csv")
        outputs[f"metrics_{strategy}"] = f"metrics_{strategy}.csv"
        for ckpt in result.checkpoints:
            outputs[f"{strategy}/{ckpt.stem}"] = str(ckpt)
        summaries[strategy] = result.summary
        summaries[strategy]["storage_ledger"] = result.ledger.entries
    (out_path / "summary.json").write_text(json.dumps(summaries, indent=2))
    outputs["summary"] = "summary.json"
    write_manifest(out_path, "run-sequence", config_snapshot, run_seed,
                   outputs, {"total": time.time() - t0})
    click.echo(json.dumps({"out": str(out_path),
                           "summaries": {k: {m: v[m] for m in
                                             ("avg_mae", "bwt", "fwt")}
                                         for k, v in summaries.items()}}))


@main.command("task-il")
@with_common
@guarded
def cmd_task_il(config_path, seed, out, data_dir):
    """Task-incremental classification with flashcard distillation."""
    t0 = time.time()
    view = _view(config_path)
    raw_tasks = view.get("tasks", list, required=True)
    run_seed = _resolve_seed(view, seed)
    opts = classify.TaskILOptions(
        iterations=view.get("iterations", int, 5000),
        ae_iterations=view.get("ae_iterations", int),
        batch_size=view.get("batch_size", int, 256),
        learning_rate=view.get("learning_rate", float, 1e-4),
        distill_weight=view.get("distill_weight", float, 1.0),
        n_flashcards=view.get("n_flashcards", int, 1000),
        flashcard_r=view.get("flashcard_r", int, 10),
        pattern_kind=view.get("pattern_kind", str, "maze"),
        seed=run_seed,
    )
    view.reject_unknown()

    pairs = []
    for i, item in enumerate(raw_tasks):
        if not isinstance(item, dict) or "dataset" not in item:
            view.error(f"tasks[{i}]", "expected a mapping with a dataset")
        train = data_mod.load_dataset(item["dataset"], "train",
                                      item.get("limit"), data_dir)
        test = data_mod.load_dataset(item["dataset"], "test",
                                     item.get("test_limit"), data_dir)
        classes = item.get("classes")
        if classes is not None:
            train = data_mod.select_classes(train, classes)
            test = data_mod.select_classes(test, classes)
        pairs.append((train, test))

    report = classify.train_task_il(pairs, classify.ClassifierConfig(), opts)
    out_path = _out_dir(out, "task-il")
    report.with_id.to_csv(out_path / "accuracy_with_id.csv")
    report.without_id.to_csv(out_path / "accuracy_without_id.csv")
    outputs = {"with_id": "accuracy_with_id.csv",
               "without_id": "accuracy_without_id.csv"}
    if plots.save_accuracy_plot(out_path / "accuracy.png", report.without_id,
                                title="accuracy without task id"):
        outputs["plot"] = "accuracy.png"
    write_manifest(out_path, "task-il",
                   {"tasks": raw_tasks, "options": snapshot(vars(opts))},
                   run_seed, outputs, {"total": time.time() - t0})
    click.echo(json.dumps({
        "out": str(out_path),
        "final_without_id": report.without_id.values[-1].tolist(),
    }))


@main.command("st-nil")
@with_common
@guarded
def cmd_st_nil(config_path, seed, out, data_dir):
    """Single-task new-instance learning over jittered sessions."""
    t0 = time.time()
    view = _view(config_path)
    dataset = view.get("dataset", str, required=True)
    limit = view.get("limit", int)
    test_limit = view.get("test_limit", int)
    sessions_raw = view.get("sessions", list, required=True)
    strategies = view.get("strategy", (str, list), "flashcards")
    if isinstance(strategies, str):
        strategies = [s.strip() for s in strategies.split(",")]
    run_seed = _resolve_seed(view, seed)
    opts_kw = dict(
        epochs=view.get("epochs", int, 20),
        batch_size=view.get("batch_size", int, 64),
        learning_rate=view.get("learning_rate", float, 1e-3),
        replay_weight=view.get("replay_weight", float, 1.0),
        n_flashcards=view.get("n_flashcards", int, 1000),
        flashcard_r=view.get("flashcard_r", int, 10),
        ae_config=parse_arch(view.get("ae_arch", (str, dict)), view, "ae_arch"),
        ae_epochs=view.get("ae_epochs", int, 20),
        seed=run_seed,
    )
    view.reject_unknown()

    train = data_mod.load_dataset(dataset, "train", limit, data_dir)
    test = data_mod.load_dataset(dataset, "test", test_limit, data_dir)
    sessions = [data_mod.SessionJitter(*pair) for pair in sessions_raw]

    out_path = _out_dir(out, "st-nil")
    results = {}
    for strategy in strategies:
        opts = classify.STNILOptions(use_flashcards=strategy == "flashcards",
                                     **opts_kw)
        results[strategy] = classify.train_st_nil(
            train, test, sessions, classify.ClassifierConfig(), opts)
    with open(out_path / "sessions.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["after_session[accuracy]"] + list(results))
        for i in range(len(sessions)):
            writer.writerow(
                [f"session_{i + 1}"]
                + [f"{results[s]['accuracies'][i]:.2f}" for s in results])
    outputs = {"sessions": "sessions.csv"}
    plt_path = plots.save_session_plot(
        out_path / "sessions.png",
        {s: r["accuracies"] for s, r in results.items()},
        title=f"{dataset}: accuracy over sessions")
    if plt_path:
        outputs["plot"] = "sessions.png"
    write_manifest(out_path, "st-nil",
                   {"dataset": dataset, "limit": limit,
                    "sessions": sessions_raw, "strategy": strategies,
                    "options": snapshot(opts_kw), "seed": run_seed},
                   run_seed, outputs, {"total": time.time() - t0})
    click.echo(json.dumps({"out": str(out_path),
                           "accuracies": {k: v["accuracies"]
                                          for k, v in results.items()}}))


@main.command("eval")
@with_common
@click.option("--checkpoint", type=click.Path(), default=None)
@click.option("--dataset", default=None)
@click.option("--split", default="test")
@click.option("--limit", type=int, default=None)
@click.option("--noise-factor", type=float, default=0.0)
@guarded
def cmd_eval(config_path, seed, out, data_dir, checkpoint, dataset, split,
             limit, noise_factor):
    """Score a checkpoint on a dataset; prints a single JSON line."""
    view = _view(config_path)
    ckpt_path = checkpoint or view.get("checkpoint", str, required=True)
    ds = dataset or view.get("dataset", str, required=True)
    run_seed = _resolve_seed(view, seed)
    model, _, _ = ae.load_checkpoint(ckpt_path)
    data = data_mod.load_dataset(ds, split, limit, data_dir)
    inputs = data.images
    if noise_factor > 0:
        inputs = data_mod.add_noise(
            data.images, data_mod.NoiseSpec(noise_factor, seed=run_seed))
    result = {"checkpoint": str(ckpt_path), "dataset": ds, "split": split,
              "count": len(data),
              "mae": ae.evaluate_mae(model, inputs, data.images)}
    if out:
        out_path = _out_dir(out, "eval")
        (out_path / "eval.json").write_text(json.dumps(result))
        write_manifest(out_path, "eval", result, run_seed,
                       {"eval": "eval.json"}, {})
    click.echo(json.dumps(result))


if __name__ == "__main__":
    main()
