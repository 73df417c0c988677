"""Command-line frontend: ``omad <subcommand> [--config cfg.json] [--seed N] [--out DIR]``."""

from __future__ import annotations

import argparse
import contextlib
import csv
import fcntl
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import dataset, dsp, featsel, prune
from . import pipeline as P
from .config import ConfigError, PipelineConfig
from .evaluate import (
    COMPRESSION_COLUMNS,
    SETTINGS_COLUMNS,
    SWEEP_COLUMNS,
    bench_batch,
    confusion_metrics,
    latency_bench,
    write_csv,
    write_sweep,
)

log = logging.getLogger("omad")


class OutputLocked(RuntimeError):
    pass


@contextlib.contextmanager
def output_lock(out: Path):
    """Advisory lock so two processes never write the same output directory."""
    out.mkdir(parents=True, exist_ok=True)
    fh = open(out / ".omad.lock", "w")
    try:
        try:
            fcntl.flock(fh, fcntl.LOCK_EX | fcntl.LOCK_NB)
        except BlockingIOError:
            raise OutputLocked(f"another omad process is writing to {out}") from None
        yield
    finally:
        fcntl.flock(fh, fcntl.LOCK_UN)
        fh.close()


# --------------------------------------------------------------------------
# shared helpers


def _load_config(args) -> PipelineConfig:
    cfg = PipelineConfig.load(args.config)
    for item in args.set or []:
        key, sep, raw = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        cfg = cfg.override(key, value)
    if args.seed is not None:
        cfg = cfg.override("seed", args.seed)
    return cfg


def _main_data(cfg: PipelineConfig, seed: int):
    recs, _ = P.load_main(cfg, seed)
    mw = P.main_windows(recs, cfg)
    return recs, mw


def _read_tags(path: str | Path, mw: P.MainWindows) -> np.ndarray:
    """Removal mask aligned with `mw` from a tags CSV."""
    removed = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            removed[(row["subject"], int(row["trial"]), int(row["offset"]))] = row["removed"] == "true"
    try:
        return np.array([removed[(k[0], k[1], int(o))] for k, o in zip(mw.keys, mw.offsets)])
    except KeyError as exc:
        raise ValueError(f"{path} does not cover window {exc.args[0]}; re-run `omad tag`") from None


def _model_inputs(prep: P.Preprocessor, mw: P.MainWindows) -> np.ndarray:
    return P.main_features(mw).values if prep.kind == "column" else mw.x


def _evaluation_rows(prep: P.Preprocessor, mw: P.MainWindows, cfg: PipelineConfig, seed: int):
    """(train mask, test mask) after the removal recorded with the model, if any."""
    test = P.trial_split(mw, cfg, seed)
    keep = np.ones(len(mw), dtype=bool)
    if prep.extra.get("tags"):
        keep = ~_read_tags(prep.extra["tags"], mw)
    return keep & ~test, keep & test


def _run_csv(out: Path, stem: str, columns, rows) -> Path:
    return write_csv(out / "runs" / f"{stem}.csv", columns, rows)


# --------------------------------------------------------------------------
# subcommands


def cmd_parse(args, cfg, out):
    rec = dataset.read_rd(args.file)
    doc = {
        "subject_id": rec.subject_id,
        "group": rec.group.value,
        "condition": rec.condition.value,
        "trial_number": rec.trial_number,
        "sample_rate_hz": rec.sample_rate_hz,
        "channels": len(rec.channels),
        "samples": rec.n_samples,
        "declared_samples": rec.declared_samples,
    }
    print(json.dumps(doc, indent=2))


def cmd_gen_artifacts(args, cfg, out):
    recs = P.load_artifacts(cfg.override("data.artifact_dir", None), cfg.seed)
    target = out / "artifacts"
    for r in recs:
        dataset.save_artifact_recording(r, target)
    log.info("wrote %d artifact recordings to %s", len(recs), target)


def cmd_gen_main(args, cfg, out):
    recs, blinks = P.load_main(cfg.override("data.main_dir", None), cfg.seed)
    target = out / "main"
    for r in recs:
        dataset.write_rd(r, target / f"{r.subject_id}.rd.{r.trial_number:03d}.gz")
    with open(out / "main_blinks.csv", "w") as fh:
        fh.write("subject,trial\n")
        for s, t in sorted(blinks):
            fh.write(f"{s},{t}\n")
    log.info("wrote %d recordings (%d with blinks) to %s", len(recs), len(blinks), target)


def cmd_train_artifact(args, cfg, out):
    det = P.train_detector(P.load_artifacts(cfg, cfg.seed), cfg, cfg.seed, with_pruning=args.prune)
    P.save_model(det.net, det.prep, out / "detector.omad")
    if det.pruned is not None:
        P.save_model(det.pruned, det.prep, out / "detector_pruned.omad")
    rows = P.report_rows(det.reports, "compression")
    _run_csv(out, f"compression_detector_seed{cfg.seed}", COMPRESSION_COLUMNS, rows)
    for r in det.reports:
        print(f"artifact_mlp pruned={str(r.pruned).lower()} accuracy={r.accuracy:.4f} f1={r.f1:.4f} "
              f"size={r.model_size_bytes} latency_ms={r.latency_ms_per_minibatch:.4f}")


def cmd_tag(args, cfg, out):
    det_path = Path(args.detector or out / "detector.omad")
    if not det_path.exists():
        raise P.MissingDetector(f"no detector at {det_path}; run `omad train-artifact` first")
    net, prep = P.load_model(det_path)
    recs, mw = _main_data(cfg, cfg.seed)
    tags = P.tag_windows(net, prep, recs, mw, cfg, args.threshold)
    path = out / "tags.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["subject", "trial", "offset", "flagged_fraction", "removed"])
        for (s, t), o, f, r in zip(mw.keys, mw.offsets, tags.flagged_fraction, tags.removed):
            w.writerow([s, t, int(o), f"{f:.4f}", str(bool(r)).lower()])
    summary = {"windows": len(mw), "removed": tags.n_removed, "kept": len(mw) - tags.n_removed,
               "threshold": cfg.artifact.channel_fraction_threshold if args.threshold is None else args.threshold}
    (out / "tags_summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(f"windows={summary['windows']} removed={summary['removed']} kept={summary['kept']}")


def cmd_features(args, cfg, out):
    _, mw = _main_data(cfg, cfg.seed)
    if args.tags:
        mw = mw.select(~_read_tags(args.tags, mw))
    fm = P.main_features(mw)
    fm.to_csv(out / "features.csv")
    print(f"rows={fm.shape[0]} columns={fm.shape[1]}")


def cmd_select(args, cfg, out):
    _, mw = _main_data(cfg, cfg.seed)
    keep = ~_read_tags(args.tags, mw) if args.tags else np.ones(len(mw), dtype=bool)
    train = keep & ~P.trial_split(mw, cfg, cfg.seed)
    fm = P.main_features(mw)
    sel = featsel.select_features(fm.values[train], mw.group[train], cfg.features.corr_threshold,
                                  cfg.features.p_threshold, fm.names)
    sel.to_json(out / "selection.json")
    print(f"kept={len(sel.kept_indices)} dropped_by_correlation={len(sel.dropped_by_correlation)} "
          f"dropped_by_ttest={len(sel.dropped_by_ttest)}")


def cmd_train(args, cfg, out):
    kind = args.model or cfg.model.kind
    _, mw = _main_data(cfg, cfg.seed)
    test = P.trial_split(mw, cfg, cfg.seed)
    keep = ~_read_tags(args.tags, mw) if args.tags else np.ones(len(mw), dtype=bool)
    tr, te = keep & ~test, keep & test
    if args.selection:
        fm = P.main_features(mw)
        sel = featsel.SelectionResult.from_json(args.selection, fm.names)
        tm = P.fit_main_nn(kind, fm.values[tr], mw.group[tr], cfg, cfg.seed, columns=sel.kept_indices)
        x_test = fm.values[te]
    else:
        tm = P.fit_main_nn(kind, mw.x[tr], mw.group[tr], cfg, cfg.seed)
        x_test = mw.x[te]
    if args.tags:
        tm.prep.extra["tags"] = str(Path(args.tags).resolve())
    name = "MLP7" if kind == "mlp" else "CNN"
    path = out / f"model_{kind}.omad"
    P.save_model(tm.net, tm.prep, path)
    rep = P._nn_report(tm.net, tm.prep, x_test, mw.group[te], name, cfg, False, cfg.seed)
    pred = tm.net.predict_proba(tm.prep.apply(x_test)).argmax(axis=1)
    votes, order = P.majority_vote(pred, [mw.keys[i] for i in np.flatnonzero(te)])
    truth = dict(zip(mw.keys, mw.group))
    trial = confusion_metrics(votes, np.array([truth[k] for k in order]))
    _run_csv(out, f"compression_{kind}_dense_seed{cfg.seed}", COMPRESSION_COLUMNS, P.report_rows([rep], "compression"))
    print(f"{name} accuracy={rep.accuracy:.4f} f1={rep.f1:.4f} trial_accuracy={trial.accuracy:.4f} "
          f"size={rep.model_size_bytes} -> {path}")


def cmd_prune(args, cfg, out):
    net, prep = P.load_model(args.model)
    _, mw = _main_data(cfg, cfg.seed)
    tr, te = _evaluation_rows(prep, mw, cfg, cfg.seed)
    x = _model_inputs(prep, mw)
    s = cfg.pruning.final_sparsity if args.sparsity is None else args.sparsity
    pruned = P.prune_finetune(net, prep.apply(x[tr]), mw.group[tr], s, cfg, cfg.seed)
    stem = Path(args.model).name.removesuffix(".omad")
    path = out / f"{stem}_pruned{round(s * 100):02d}.omad"
    P.save_model(pruned, prep, path)
    name = "CNN" if len(net.input_shape) == 2 else "MLP7"
    rep = P._nn_report(pruned, prep, x[te], mw.group[te], name, cfg, True, cfg.seed, sparse=True)
    _run_csv(out, f"compression_{stem}_pruned{round(s * 100):02d}_seed{cfg.seed}", COMPRESSION_COLUMNS,
             P.report_rows([rep], "compression"))
    print(f"{name} sparsity={prune.model_sparsity(pruned):.4f} accuracy={rep.accuracy:.4f} "
          f"size={rep.model_size_bytes} -> {path}")


def cmd_bench(args, cfg, out):
    _, mw = _main_data(cfg, cfg.seed)
    rows = []
    for mpath in args.model:
        net, prep = P.load_model(mpath)
        _, te = _evaluation_rows(prep, mw, cfg, cfg.seed)
        xt = prep.apply(_model_inputs(prep, mw)[te])
        pruned = prune.model_sparsity(net) > 0
        engine = prune.SparseNetwork(net) if pruned else net
        m = confusion_metrics(engine.predict_proba(xt).argmax(axis=1), mw.group[te])
        fwd = engine.forward if pruned else (lambda v, n=net: n.forward(v)[0])
        b = latency_bench(fwd, bench_batch(xt, cfg.eval.batch, cfg.seed), cfg.eval.warmup, cfg.eval.reps)
        rows.append({"model": "CNN" if len(net.input_shape) == 2 else "MLP7", "pruned": pruned,
                     "size_bytes": Path(mpath).stat().st_size, "latency_ms": b.median_ms,
                     "accuracy": m.accuracy, "f1": m.f1})
        print(f"{mpath}: size={rows[-1]['size_bytes']} latency_ms={b.median_ms:.4f} "
              f"iqr/median={b.relative_iqr:.3f} accuracy={m.accuracy:.4f}")
        print(f"  hardware: {b.hardware}")
    _run_csv(out, f"compression_bench_seed{cfg.seed}", COMPRESSION_COLUMNS, rows)


def cmd_sweep(args, cfg, out):
    net, prep = P.load_model(args.model)
    if prune.model_sparsity(net) > 0:
        raise ValueError("sweep starts from a dense (unpruned) model")
    _, mw = _main_data(cfg, cfg.seed)
    tr, te = _evaluation_rows(prep, mw, cfg, cfg.seed)
    x = _model_inputs(prep, mw)
    tm = P.TrainedMain(net, prep, prep.apply(x[tr]), mw.group[tr])
    sparsities = args.sparsities if args.sparsities is not None else cfg.eval.sweep
    rows = P.run_sweep(tm, x[te], mw.group[te], cfg, cfg.seed, sparsities)
    stem = Path(args.model).name.removesuffix(".omad")
    write_sweep(out / "runs" / f"sweep_{stem}_seed{cfg.seed}.csv", rows)
    for r in rows:
        print(f"sparsity={r.sparsity:.2f} size={r.size_bytes} latency_ms={r.latency_ms:.4f} "
              f"accuracy={r.accuracy:.4f}{'  ERROR ' + r.error if r.error else ''}")
    if any(r.error for r in rows):
        raise RuntimeError("some sweep points failed")


def cmd_settings(args, cfg, out):
    det_path = Path(args.detector or out / "detector.omad")
    recs, mw = _main_data(cfg, cfg.seed)
    tags = None
    if det_path.exists():
        net, prep = P.load_model(det_path)
        tags = P.tag_windows(net, prep, recs, mw, cfg)
    feats = P.main_features(mw)
    test = P.trial_split(mw, cfg, cfg.seed)
    settings = [P.Setting(s) for s in args.setting] if args.setting else list(P.Setting)
    reports = []
    for s in settings:
        reports += P.run_setting(s, mw, feats, test, cfg, cfg.seed, tags, models=args.models or P.MODELS)
    _run_csv(out, f"settings_seed{cfg.seed}", SETTINGS_COLUMNS, P.report_rows(reports, "settings"))
    for r in reports:
        print(f"{r.setting} {r.model} accuracy={r.accuracy:.4f} f1={r.f1:.4f}")


def cmd_report(args, cfg, out):
    runs = out / "runs"
    targets = {"settings": ("results_settings.csv", SETTINGS_COLUMNS),
               "compression": ("results_compression.csv", COMPRESSION_COLUMNS),
               "sweep": ("sweep.csv", SWEEP_COLUMNS)}
    for prefix, (name, columns) in targets.items():
        rows = []
        for p in sorted(runs.glob(f"{prefix}_*.csv")):
            with open(p, newline="") as fh:
                rows += [{c: r[c] for c in columns} for r in csv.DictReader(fh)]
        write_csv(out / name, columns, rows)
        print(f"{name}: {len(rows)} rows")


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    def global_flags(suppress: bool) -> argparse.ArgumentParser:
        # subcommands repeat the global flags with suppressed defaults so a flag
        # given before the subcommand is not reset by the subparser
        p = argparse.ArgumentParser(add_help=False)
        kw = {"default": argparse.SUPPRESS} if suppress else {}
        p.add_argument("--config", help="JSON pipeline config", **kw)
        p.add_argument("--seed", type=int, help="overrides the config seed", **kw)
        p.add_argument("--out", help="output directory (default: omad_out)",
                       **(kw or {"default": "omad_out"}))
        p.add_argument("--quiet", action="store_true", help="only log warnings and errors", **kw)
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config key, e.g. --set training.epochs=20 (repeatable)", **kw)
        return p

    common = global_flags(suppress=True)
    parser = argparse.ArgumentParser(prog="omad", description=__doc__, parents=[global_flags(suppress=False)])
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        p = sub.add_parser(name, parents=[common], help=help_)
        p.set_defaults(func=func)
        return p

    p = add("parse", cmd_parse, "parse one .rd file and print its header fields")
    p.add_argument("file")
    add("gen-artifacts", cmd_gen_artifacts, "write the synthetic artifact corpus as CSV")
    add("gen-main", cmd_gen_main, "write the synthetic main corpus as gzipped .rd files")
    p = add("train-artifact", cmd_train_artifact, "train the per-channel artifact detector")
    p.add_argument("--prune", action="store_true", help="also prune-train a sparse twin")
    p = add("tag", cmd_tag, "tag main-corpus windows with the artifact detector")
    p.add_argument("--detector", help="detector model (default: OUT/detector.omad)")
    p.add_argument("--threshold", type=float, help="overrides artifact.channel_fraction_threshold")
    p = add("features", cmd_features, "export the window feature matrix as CSV")
    p.add_argument("--tags", help="tags CSV; removed windows are dropped")
    p = add("select", cmd_select, "correlation + t-test selection on training rows")
    p.add_argument("--tags", help="tags CSV; removed windows are dropped")
    p = add("train", cmd_train, "train MLP-7 or the CNN on main-corpus windows")
    p.add_argument("--model", choices=("mlp", "cnn"), help="overrides model.kind")
    p.add_argument("--tags", help="tags CSV; removed windows are dropped")
    p.add_argument("--selection", help="selection JSON; the MLP then consumes selected features")
    p = add("prune", cmd_prune, "prune-train a copy of a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--sparsity", type=float, help="overrides pruning.final_sparsity")
    p = add("bench", cmd_bench, "size, single-thread latency and accuracy of saved models")
    p.add_argument("--model", required=True, action="append")
    p = add("sweep", cmd_sweep, "prune-train a dense model at each sweep sparsity")
    p.add_argument("--model", required=True)
    p.add_argument("--sparsities", type=float, nargs="+")
    p = add("settings", cmd_settings, "run the three artifact-removal/feature settings")
    p.add_argument("--detector", help="detector model (default: OUT/detector.omad)")
    p.add_argument("--setting", action="append", choices=[s.value for s in P.Setting])
    p.add_argument("--models", nargs="+", choices=P.MODELS)
    add("report", cmd_report, "merge per-run CSVs into the three result tables")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    out = Path(args.out)
    try:
        cfg = _load_config(args)
        if args.command == "parse":
            args.func(args, cfg, out)
            return 0
        with output_lock(out):
            (out / "config.json").write_text(cfg.to_json())
            args.func(args, cfg, out)
    except (ConfigError, OutputLocked, P.MissingDetector, FileNotFoundError, ValueError, RuntimeError,
            dataset.RdParseError, dataset.EmptyCorpus, prune.FormatError, dsp.TooShort) as exc:
        log.error("%s", exc)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
