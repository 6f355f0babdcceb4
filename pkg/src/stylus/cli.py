"""Command-line entry point orchestrating the full pipeline."""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import subprocess
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import augment as augment_mod
from . import classifier, concepts, corpus, features, interpret
from . import representations, synthetic

log = logging.getLogger("stylus")

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_IO = 2
EXIT_USAGE = 64

COMMANDS = ("ingest", "split", "extract", "train", "search", "evaluate",
            "importance", "correlate", "pca", "rolls", "augment",
            "concepts", "report", "gen-synthetic")


@dataclass
class RunConfig:
    """Pipeline defaults; every value matches the published analysis."""
    grid: float = 0.1
    n_values: tuple = (3, 4, 5, 6, 7)
    min_df: int = 10
    max_df: int = 1000
    C: float = 1.0
    class_weight: str = "balanced"
    penalty: str = "L2"
    top_k: int = 2000
    n_permutations: int = 1000
    n_importance: int = 1000
    n_concept_iterations: int = 10
    bonferroni_m: int = 20
    search_iterations: int = 1000
    n_bootstrap: int = 1000
    hop: float = 30.0
    min_chord_notes: int = 3
    mask_by_pitch: bool = True


def _setup_logging():
    level = os.environ.get("STYLUS_LOG", "warn").lower()
    levels = {"error": logging.ERROR, "warn": logging.WARNING,
              "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(level=levels.get(level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def _git_describe() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty"],
                             capture_output=True, text=True, timeout=10)
        return out.stdout.strip()
    except OSError:
        return ""


def _write_run_info(out_dir: Path, command: str, args, config: RunConfig,
                    started: float) -> None:
    payload = {
        "command": command,
        "seed": args.seed,
        "config": asdict(config),
        "manifest": getattr(args, "manifest", None),
        "git_describe": _git_describe(),
        "wall_time_seconds": time.time() - started,
    }
    with open(out_dir / "run.json", "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)


def _load_config(args) -> RunConfig:
    config = RunConfig()
    if getattr(args, "config", None):
        with open(args.config, encoding="utf-8") as fh:
            overrides = json.load(fh)
        known = set(asdict(config))
        unknown = set(overrides) - known
        if unknown:
            raise corpus.ValidationError(
                f"unknown config keys: {sorted(unknown)}")
        config = replace(config, **{k: tuple(v) if isinstance(v, list) else v
                                    for k, v in overrides.items()})
    return config


def _parallel_map(fn, items, threads: int):
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _load_transcriptions(manifest, threads: int):
    def load(entry):
        return corpus.parse_note_events(entry.path, entry.recording_id,
                                        entry.performer, entry.dataset_tag)
    return _parallel_map(load, manifest, threads)


def _require(path: Path, what: str):
    if not path.exists():
        raise corpus.ValidationError(
            f"{what} not found at {path}; run the producing subcommand first")
    return path


def _load_features(out_dir: Path):
    rids, counts = features.read_feature_counts(
        _require(out_dir / "features.csv", "feature dump"))
    vocab = features.read_vocabulary(
        _require(out_dir / "vocabulary.csv", "vocabulary"))
    return rids, counts, vocab


def _feature_matrix(counts, vocab):
    return features.tfidf(features.count_matrix(counts, vocab))


def _vocab_hash(vocab) -> str:
    digest = hashlib.sha256()
    for (kind, feat), df in zip(vocab.features, vocab.document_frequency):
        digest.update(f"{kind}:{features.feature_string(feat)}:{df};"
                      .encode())
    return digest.hexdigest()


def _split_rows(rids, split_map, split):
    return [i for i, r in enumerate(rids) if split_map.get(r) == split]


def cmd_gen_synthetic(args, config):
    sconfig = synthetic.SyntheticConfig(seed=args.seed)
    manifest = synthetic.write_corpus(args.out, sconfig)
    print(f"wrote synthetic corpus manifest to {manifest}")


def cmd_ingest(args, config):
    manifest = corpus.read_manifest(args.manifest)
    transcriptions = _load_transcriptions(manifest, args.threads)
    out = Path(args.out)
    with open(out / "ingest.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["recording_id", "performer", "dataset_tag",
                         "n_notes", "duration"])
        for t in transcriptions:
            writer.writerow([t.recording_id, t.performer, t.dataset_tag,
                             len(t.notes), repr(t.duration)])
    print(f"ingested {len(transcriptions)} recordings")


def cmd_split(args, config):
    manifest = corpus.read_manifest(args.manifest)
    assignment = corpus.assign_splits(manifest, args.seed)
    corpus.write_splits(Path(args.out) / "splits.csv", assignment)
    counts = {s: sum(1 for v in assignment.values() if v == s)
              for s in corpus.SPLITS}
    print(f"split {len(assignment)} recordings: {counts}")


def cmd_extract(args, config):
    manifest = corpus.read_manifest(args.manifest)
    transcriptions = _load_transcriptions(manifest, args.threads)
    counts = _parallel_map(
        lambda t: features.extract_recording(t, config.grid,
                                             config.n_values),
        transcriptions, args.threads)
    rids = [t.recording_id for t in transcriptions]
    vocab = features.build_vocabulary(counts, config.min_df, config.max_df)
    out = Path(args.out)
    features.write_feature_counts(out / "features.csv", rids, counts)
    features.write_vocabulary(out / "vocabulary.csv", vocab)
    print(f"extracted {len(vocab)} vocabulary features "
          f"from {len(rids)} recordings")


def _labels_for(rids, manifest):
    by_id = {e.recording_id: e for e in manifest}
    return ([by_id[r].performer for r in rids],
            [by_id[r].dataset_tag for r in rids])


def cmd_train(args, config):
    manifest = corpus.read_manifest(args.manifest)
    out = Path(args.out)
    rids, counts, vocab = _load_features(out)
    split_map = corpus.read_splits(_require(out / "splits.csv", "splits"))
    X = _feature_matrix(counts, vocab)
    y, _ = _labels_for(rids, manifest)
    rows = _split_rows(rids, split_map, "train")
    if not rows:
        raise corpus.ValidationError("no training recordings in split")
    lr_config = classifier.LRConfig(C=config.C,
                                    class_weight=config.class_weight,
                                    penalty=config.penalty)
    model = classifier.fit(X[rows], [y[i] for i in rows], lr_config)
    classifier.write_model(out / "model.json", model, _vocab_hash(vocab))
    print(f"trained on {len(rows)} recordings "
          f"({len(model.class_labels)} classes, converged={model.converged})")


def cmd_search(args, config):
    manifest = corpus.read_manifest(args.manifest)
    out = Path(args.out)
    rids, counts, vocab = _load_features(out)
    split_map = corpus.read_splits(_require(out / "splits.csv", "splits"))
    X = _feature_matrix(counts, vocab)
    y, _ = _labels_for(rids, manifest)
    tr = _split_rows(rids, split_map, "train")
    va = _split_rows(rids, split_map, "validation")
    space = classifier.SearchSpace(iterations=config.search_iterations,
                                   seed=args.seed)
    best, acc, trials = classifier.random_search(
        space, X[tr], [y[i] for i in tr], X[va], [y[i] for i in va])
    classifier.write_trial_log(out / "trials.csv", trials)
    with open(out / "best_config.json", "w", encoding="utf-8") as fh:
        json.dump({"C": best.C, "class_weight": best.class_weight,
                   "penalty": best.penalty, "val_top1": acc}, fh)
    print(f"best config C={best.C:.3f} class_weight={best.class_weight} "
          f"penalty={best.penalty} (val top-1 {acc:.3f})")


def cmd_evaluate(args, config):
    manifest = corpus.read_manifest(args.manifest)
    out = Path(args.out)
    rids, counts, vocab = _load_features(out)
    split_map = corpus.read_splits(_require(out / "splits.csv", "splits"))
    model = classifier.read_model(_require(out / "model.json", "model"))
    X = _feature_matrix(counts, vocab)
    y, _ = _labels_for(rids, manifest)
    rows = _split_rows(rids, split_map, "test")
    if not rows:
        raise corpus.ValidationError("no test recordings in split")
    probs = classifier.predict_proba(model, X[rows])
    y_test = [y[i] for i in rows]
    result = {f"top{k}": classifier.top_k_accuracy(probs, y_test,
                                                   model.class_labels, k)
              for k in (1, 2, 3, 5) if k <= len(model.class_labels)}
    with open(out / "evaluation.json", "w", encoding="utf-8") as fh:
        json.dump(result, fh, indent=2)
    print(" ".join(f"{k}={v:.3f}" for k, v in result.items()))


def cmd_importance(args, config):
    manifest = corpus.read_manifest(args.manifest)
    out = Path(args.out)
    rids, counts, vocab = _load_features(out)
    split_map = corpus.read_splits(_require(out / "splits.csv", "splits"))
    model = classifier.read_model(_require(out / "model.json", "model"))
    X = _feature_matrix(counts, vocab)
    y, _ = _labels_for(rids, manifest)
    rows = _split_rows(rids, split_map, "test")
    X_test, y_test = X[rows], [y[i] for i in rows]
    reports = []
    for kind in (features.KIND_MELODY, features.KIND_HARMONY):
        cols = vocab.columns_of_kind(kind)
        reports.append(interpret.permutation_importance(
            model, X_test, y_test, cols, config.n_importance, args.seed,
            group=kind))
        k = min(config.top_k, cols.size)
        reports.append(interpret.subset_importance(
            model, X_test, y_test, cols, k, config.n_importance, args.seed,
            group=f"{kind}-subset-{k}"))
    with open(out / "importance.csv", "w", newline="",
              encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["group", "mean_accuracy_loss", "sd", "iterations"])
        for r in reports:
            writer.writerow([r.group, repr(r.mean_accuracy_loss),
                             repr(r.sd), r.iterations])
    for r in reports:
        print(f"{r.group}: loss {r.mean_accuracy_loss:.3f} (sd {r.sd:.3f})")


def cmd_correlate(args, config):
    manifest = corpus.read_manifest(args.manifest)
    out = Path(args.out)
    rids, counts, vocab = _load_features(out)
    X = _feature_matrix(counts, vocab)
    y, tags = _labels_for(rids, manifest)
    lr_config = classifier.LRConfig(C=config.C,
                                    class_weight=config.class_weight,
                                    penalty=config.penalty)
    full = classifier.fit(X, y, lr_config)
    rows_out = []
    for kind in (features.KIND_MELODY, features.KIND_HARMONY):
        cols = vocab.columns_of_kind(kind)
        k = min(config.top_k, cols.size)
        top = cols[interpret.top_k_features(full.W[:, cols], k)]
        report = interpret.dataset_weight_correlation(
            X, y, tags, top, lr_config, config.n_permutations, args.seed)
        for performer in sorted(report.r):
            rows_out.append([kind, performer, repr(report.r[performer]),
                             repr(report.p[performer]),
                             report.corrected_alpha_factor])
    with open(out / "correlations.csv", "w", newline="",
              encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["feature_kind", "performer", "r", "p",
                         "corrected_alpha_factor"])
        writer.writerows(rows_out)
    print(f"wrote correlations for {len(rows_out)} performer/kind pairs")


def cmd_pca(args, config):
    manifest = corpus.read_manifest(args.manifest)
    out = Path(args.out)
    rids, counts, vocab = _load_features(out)
    y, _ = _labels_for(rids, manifest)
    cols = np.array([i for i, (kind, feat) in enumerate(vocab.features)
                     if kind == features.KIND_MELODY and len(feat) == 4],
                    dtype=int)
    if cols.size < 2:
        raise corpus.ValidationError(
            "need at least two length-4 melody features for PCA")
    X4 = _feature_matrix(counts, vocab)[:, cols]
    model = interpret.pca_fit(X4)
    performers = sorted(set(y))
    means = np.vstack([
        X4[[i for i, lab in enumerate(y) if lab == p]].mean(axis=0)
        for p in performers])
    coords = interpret.pca_project(model, means)
    with open(out / "pca_components.csv", "w", newline="",
              encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["component", "explained_variance"]
                        + [features.feature_string(vocab.features[c][1])
                           for c in cols])
        for i, (var, comp) in enumerate(zip(model.explained_variance,
                                            model.components)):
            writer.writerow([i, repr(float(var))]
                            + [repr(float(v)) for v in comp])
    with open(out / "pca_projection.csv", "w", newline="",
              encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        n_dims = min(4, coords.shape[1])
        writer.writerow(["performer"]
                        + [f"component_{i}" for i in range(n_dims)])
        for p, row in zip(performers, coords):
            writer.writerow([p] + [repr(float(v)) for v in row[:n_dims]])
    print(f"PCA over {cols.size} length-4 melody features, "
          f"{len(performers)} performers projected")


def cmd_rolls(args, config):
    manifest = corpus.read_manifest(args.manifest)
    transcriptions = _load_transcriptions(manifest, args.threads)
    out = Path(args.out)
    roll_dir = out / "rolls"
    roll_dir.mkdir(parents=True, exist_ok=True)
    index = {}
    for t in transcriptions:
        for clip in corpus.segment_clips(t, config.hop):
            key = f"{clip.parent_id}_{int(clip.start)}"
            paths = {"unified": str(roll_dir / f"{key}.roll")}
            corpus.write_roll(paths["unified"], corpus.to_piano_roll(clip))
            rolls = representations.factorise(clip, args.seed,
                                              config.min_chord_notes)
            for name in ("melody", "harmony", "rhythm", "dynamics"):
                path = roll_dir / f"{key}.{name}.roll"
                corpus.write_roll(path, getattr(rolls, name))
                paths[name] = str(path)
            index[key] = paths
    with open(out / "rolls.json", "w", encoding="utf-8") as fh:
        json.dump(index, fh, indent=2)
    print(f"wrote {len(index)} clips x 5 rolls to {roll_dir}")


def cmd_augment(args, config):
    manifest = corpus.read_manifest(args.manifest)
    transcriptions = _load_transcriptions(manifest, args.threads)
    out = Path(args.out)
    preview_dir = out / "augment_preview"
    preview_dir.mkdir(parents=True, exist_ok=True)
    aconfig = augment_mod.AugmentConfig(seed=args.seed)
    audit = []
    for t in transcriptions:
        for clip in corpus.segment_clips(t, config.hop):
            key = f"{clip.parent_id}_{int(clip.start)}"
            result = augment_mod.augment(clip, aconfig, parent=t)
            corpus.write_note_events(preview_dir / f"{key}.before.jsonl",
                                     clip.notes)
            corpus.write_note_events(preview_dir / f"{key}.after.jsonl",
                                     result.clip.notes)
            audit.append({"clip": key, "applied": result.applied,
                          "pitch_shift": result.pitch_shift,
                          "dilation": result.dilation,
                          "refill_missing": result.refill_missing})
    with open(out / "augment_audit.json", "w", encoding="utf-8") as fh:
        json.dump(audit, fh, indent=2)
    print(f"previewed augmentation for {len(audit)} clips")


def cmd_concepts(args, config):
    manifest = corpus.read_manifest(args.manifest)
    out = Path(args.out)
    exercises = concepts.read_concept_exercises(
        _require(Path(args.exercises), "concept exercise file"))
    split_map = corpus.read_splits(_require(out / "splits.csv", "splits"))
    variants: dict = {}
    for e in exercises:
        variants.setdefault(e.concept_id, []).extend(
            concepts.expand_concept(e, min_chord_notes=config.min_chord_notes))
    held_out = {e.recording_id for e in manifest
                if split_map.get(e.recording_id) in ("validation", "test")}
    transcriptions = [t for t in _load_transcriptions(manifest, args.threads)
                      if t.recording_id in held_out]
    clips_by_performer: dict = {}
    for t in transcriptions:
        for clip in corpus.segment_clips(t, 30.0):
            clips_by_performer.setdefault(t.performer, []).append(
                corpus.to_piano_roll(clip))
    embedder = concepts.default_embedder()
    matrix = concepts.sign_count_experiment(
        clips_by_performer, variants, embedder,
        config.n_concept_iterations, args.seed)
    concepts.write_sign_counts(out / "sign_counts.csv", matrix)
    means, corrected = concepts.summarise_sign_counts(
        matrix, config.bonferroni_m)
    concepts.write_tested_sign_counts(out / "sign_counts_tested.csv",
                                      matrix, means, corrected)
    if len(matrix.performers) >= 2:
        flat = matrix.observed.reshape(len(matrix.performers), -1)
        dendrogram = concepts.cluster(flat, matrix.performers)
        concepts.write_dendrogram(out / "dendrogram.json", dendrogram)
    print(f"concept analysis: {len(matrix.performers)} performers x "
          f"{len(matrix.concepts)} concepts x "
          f"{matrix.observed.shape[2]} iterations")


def cmd_report(args, config):
    manifest = corpus.read_manifest(args.manifest)
    out = Path(args.out)
    rids, counts, vocab = _load_features(out)
    X = _feature_matrix(counts, vocab)
    y, _ = _labels_for(rids, manifest)
    lr_config = classifier.LRConfig(C=config.C,
                                    class_weight=config.class_weight,
                                    penalty=config.penalty)
    model = classifier.fit(X, y, lr_config)
    sds = interpret.bootstrap_weight_sd(X, y, lr_config,
                                        config.n_bootstrap, args.seed)
    melody_cols = vocab.columns_of_kind(features.KIND_MELODY)
    with open(out / "weights_topbottom.csv", "w", newline="",
              encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["performer", "rank", "feature_string", "weight",
                         "sd"])
        for ci, performer in enumerate(model.class_labels):
            weights = model.W[ci, melody_cols]
            order = np.argsort(-weights, kind="stable")
            picks = ([("top", i) for i in order[:5]]
                     + [("bottom", i) for i in order[-5:]])
            for label, i in picks:
                col = melody_cols[i]
                writer.writerow([performer, label,
                                 features.feature_string(
                                     vocab.features[col][1]),
                                 repr(float(model.W[ci, col])),
                                 repr(float(sds[ci, col]))])
    print(f"wrote top/bottom melody weights for "
          f"{len(model.class_labels)} performers")


HANDLERS = {
    "gen-synthetic": cmd_gen_synthetic,
    "ingest": cmd_ingest,
    "split": cmd_split,
    "extract": cmd_extract,
    "train": cmd_train,
    "search": cmd_search,
    "evaluate": cmd_evaluate,
    "importance": cmd_importance,
    "correlate": cmd_correlate,
    "pca": cmd_pca,
    "rolls": cmd_rolls,
    "augment": cmd_augment,
    "concepts": cmd_concepts,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stylus",
        description="Deconstruct performance style from note-event "
                    "transcriptions")
    sub = parser.add_subparsers(dest="command")
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--manifest", help="corpus manifest CSV")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--threads", type=int, default=os.cpu_count() or 1)
        p.add_argument("--config", help="JSON file with config overrides")
        p.add_argument("--format", choices=("csv", "json"), default="csv")
        if name == "concepts":
            p.add_argument("--exercises",
                           help="concept exercise JSONL file")
    return parser


NEEDS_MANIFEST = set(COMMANDS) - {"gen-synthetic"}


def main(argv=None) -> int:
    _setup_logging()
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    if not argv or argv[0] in ("-h", "--help"):
        parser.print_help()
        return EXIT_OK
    if argv[0] not in COMMANDS:
        parser.print_usage(sys.stderr)
        print(f"stylus: unknown subcommand {argv[0]!r}", file=sys.stderr)
        return EXIT_USAGE
    args = parser.parse_args(argv)
    started = time.time()
    out_dir = Path(args.out)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        config = _load_config(args)
        if args.command in NEEDS_MANIFEST and not args.manifest:
            raise corpus.ValidationError(
                f"{args.command} requires --manifest")
        HANDLERS[args.command](args, config)
        _write_run_info(out_dir, args.command, args, config, started)
    except (corpus.ValidationError, corpus.ParseError, ValueError) as exc:
        print(f"stylus: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"stylus: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
