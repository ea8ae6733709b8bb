"""Command-line entry point.

Batch subcommands wire corpus synthesis, feature extraction, statistics,
training, and evaluation into reproducible experiments. Exit codes form a
stable contract: 0 success, 1 usage or configuration problem, 2 data
problem, 3 numerical failure. Failures print a one-line JSON error record
to stderr. Primary outputs (reports, checkpoints, caches) carry no
timestamps, so a rerun with identical arguments is byte-identical.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from .audio import load_wav
from .corpus import (DROP, LabelMap, UtteranceRecord, apply_label_map,
                     cohen_kappa, corpus_stats, downsample_neutral,
                     load_manifest, oversample_balance, records_for_speakers,
                     resolve_audio_path)
from .errors import ConfigError, DataError, NumericsError, SerkitError
from .evaluate import (chop_records, crossval, cross_corpus, evaluate_groups,
                       groups_for, make_model_predictor)
from .features import (FeatureStats, featurize_signal, read_feature_cache,
                       write_feature_cache)
from .gradcheck import run_gradcheck
from .model import (EmotionRecognizer, default_2d_spec, default_temporal_spec,
                    load_checkpoint, save_checkpoint)
from .segments import ChopConfig
from .synth import generate_synthetic_corpus
from .train import OptimizerConfig, fit

OUT_ENV_VAR = "SERKIT_OUT"

# Default label presets by task size; --map entries override per source.
_PRESET_ENTRIES = {
    4: {"anger": "anger", "fear": "fear", "positive": "positive",
        "neutral": "neutral"},
    3: {"anger": "anger", "positive": "positive", "neutral": "neutral",
        "fear": DROP},
    2: {"anger": "anger", "neutral": "neutral", "fear": DROP,
        "positive": DROP},
}

_SHARE_PRESETS = {
    "equal": {"anger": 0.25, "fear": 0.25, "positive": 0.25, "neutral": 0.25},
    # Emergency-call-like skew: neutral speech dominates heavily.
    "cemo-like": {"anger": 0.14, "fear": 0.06, "positive": 0.10,
                  "neutral": 0.70},
}


class _Parser(argparse.ArgumentParser):
    """Routes argparse usage failures through the exit-code-1 error path."""

    def error(self, message: str):
        raise ConfigError(message)


# --- shared argument plumbing -------------------------------------------------


def _resolve_out(arg_out: str | None, command: str) -> Path:
    if arg_out:
        return Path(arg_out)
    root = os.environ.get(OUT_ENV_VAR)
    if not root:
        raise ConfigError(f"--out is required (or set {OUT_ENV_VAR})")
    return Path(root) / command


def parse_map_flag(text: str) -> tuple[str, list[str]]:
    """'target=src1+src2' -> (target, [src1, src2]).

    DROP is valid only as a target (write DROP=label to discard a label).
    """
    target, sep, sources_text = text.partition("=")
    target = target.strip()
    sources = [s.strip() for s in sources_text.split("+")]
    if not sep or not target or any(not s for s in sources):
        raise ConfigError(f"--map expects TARGET=SRC1+SRC2..., got {text!r}")
    if DROP in sources:
        raise ConfigError(f"{DROP} cannot be a source label; "
                          f"write {DROP}={target} to discard {target!r}")
    return target, sources


def resolve_label_map(n_classes: int, map_flags: list[str]) -> LabelMap:
    try:
        entries = dict(_PRESET_ENTRIES[n_classes])
    except KeyError:
        raise ConfigError(f"--classes must be one of "
                          f"{sorted(_PRESET_ENTRIES)}, got {n_classes}") from None
    for flag in map_flags:
        target, sources = parse_map_flag(flag)
        for source in sources:
            entries[source] = target
    return LabelMap(entries=entries)


def parse_shares(text: str) -> dict[str, float]:
    if text in _SHARE_PRESETS:
        return dict(_SHARE_PRESETS[text])
    shares = {}
    for part in text.split(","):
        name, sep, value = part.partition("=")
        if not sep or not name.strip():
            raise ConfigError(f"--shares expects a preset "
                              f"({', '.join(_SHARE_PRESETS)}) or "
                              f"name=fraction pairs, got {text!r}")
        try:
            shares[name.strip()] = float(value)
        except ValueError:
            raise ConfigError(f"bad share value {value!r} in {text!r}") from None
    return shares


def _load_records(manifest: Path, label_map: LabelMap | None) -> list[UtteranceRecord]:
    records = load_manifest(manifest)
    return apply_label_map(records, label_map) if label_map else records


def load_features(records: list[UtteranceRecord], manifest: Path,
                  features_dir: Path | None, n_mels: int,
                  use_deltas: bool) -> dict[str, np.ndarray]:
    """Read cached features or compute them from audio on the fly."""
    expected = n_mels * (3 if use_deltas else 1)
    out = {}
    for rec in records:
        if features_dir is not None:
            mat = read_feature_cache(features_dir / f"{rec.id}.serf")
        else:
            mat = featurize_signal(load_wav(resolve_audio_path(manifest, rec)),
                                   n_mels=n_mels, use_deltas=use_deltas)
        if mat.shape[1] != expected:
            raise DataError(
                f"record {rec.id!r} has {mat.shape[1]} feature dims, expected "
                f"{expected} (mels={n_mels}, deltas "
                f"{'on' if use_deltas else 'off'})"
            )
        out[rec.id] = mat
    return out


def _split_speakers(records: list[UtteranceRecord], val_fraction: float,
                    seed: int) -> tuple[list[str], list[str]]:
    if not 0.0 < val_fraction < 1.0:
        raise ConfigError(f"--val-fraction must be in (0, 1), got {val_fraction}")
    speakers = sorted({r.speaker_id for r in records})
    if len(speakers) < 2:
        raise DataError("need at least 2 speakers to hold out validation data")
    rng = np.random.default_rng(seed)
    order = [speakers[i] for i in rng.permutation(len(speakers))]
    n_val = min(max(1, int(round(val_fraction * len(speakers)))),
                len(speakers) - 1)
    return order[n_val:], order[:n_val]


def _optimizer_from_args(args: argparse.Namespace) -> OptimizerConfig:
    return OptimizerConfig(lr0=args.lr0, batch_size=args.batch,
                           max_epochs=args.epochs)


def _spec_fn(arch: str):
    if arch == "temporal":
        return default_temporal_spec
    if arch == "2d":
        return default_2d_spec
    raise ConfigError(f"--arch must be 'temporal' or '2d', got {arch!r}")


def _write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, ensure_ascii=False) + "\n",
                    encoding="utf-8")


def _write_jsonl(path: Path, rows: list[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as handle:
        for row in rows:
            handle.write(json.dumps(row, ensure_ascii=False) + "\n")


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        writer.writerows(rows)


def _emit(payload: dict) -> None:
    print(json.dumps(payload, indent=2, ensure_ascii=False))


# --- subcommands ----------------------------------------------------------------


def cmd_synth(args: argparse.Namespace) -> int:
    out = _resolve_out(args.out, "synth")
    shares = parse_shares(args.shares) if args.shares else None
    records = generate_synthetic_corpus(
        out, seed=args.seed, n_speakers=args.speakers,
        segments_per_speaker=args.per_speaker, class_shares=shares,
        duration_range_s=(args.duration_min, args.duration_max),
        sample_rate_hz=args.rate, band_shift=args.band_shift,
        annotator_noise=args.annotator_noise)
    _emit({"manifest": str(out / "manifest.jsonl"), "records": len(records),
           "speakers": args.speakers})
    return 0


def cmd_featurize(args: argparse.Namespace) -> int:
    manifest = Path(args.manifest)
    records = load_manifest(manifest)
    out = _resolve_out(args.out, "features")
    out.mkdir(parents=True, exist_ok=True)
    written, skipped, errors = 0, 0, []
    for rec in records:
        cache = out / f"{rec.id}.serf"
        try:
            wav_path = resolve_audio_path(manifest, rec)
            if (not args.force and cache.exists()
                    and cache.stat().st_mtime >= wav_path.stat().st_mtime):
                skipped += 1
                continue
            feats = featurize_signal(load_wav(wav_path), n_mels=args.mels,
                                     use_deltas=args.deltas)
            write_feature_cache(cache, feats)
            written += 1
        except (SerkitError, OSError) as exc:
            errors.append({"id": rec.id, "error": str(exc)})
    _emit({"out": str(out), "written": written, "skipped": skipped,
           "failed": len(errors), "mels": args.mels, "deltas": args.deltas,
           "errors": errors})
    return 2 if errors else 0


def cmd_stats(args: argparse.Namespace) -> int:
    manifest = Path(args.manifest)
    records = load_manifest(manifest)
    out = _resolve_out(args.out, "stats")
    stats = corpus_stats(records, neutral_label=args.neutral_label)
    dual = [r for r in records if r.ann_a and r.ann_b]
    if dual:
        # Agreement is scored on each annotator's primary (first) label.
        stats["annotator_agreement"] = {
            "n_dual": len(dual),
            "kappa": cohen_kappa([r.ann_a[0] for r in dual],
                                 [r.ann_b[0] for r in dual]),
        }
    _write_json(out / "stats.json", stats)
    classes = stats["classes"]
    _write_csv(out / "class_counts.csv", ["class", "count", "share"],
               [[c, stats["class_counts"][c], stats["class_shares"][c]]
                for c in classes])
    _write_csv(out / "speakers_per_class.csv", ["class", "speakers", "pct"],
               [[c, stats["speakers_per_class"][c],
                 stats["speakers_per_class_pct"][c]] for c in classes])
    hist = stats["emotions_per_speaker"]
    _write_csv(out / "emotions_per_speaker.csv", ["n_emotions", "speakers"],
               [[k, hist[k]] for k in sorted(hist)])
    _emit({"out": str(out), "n_records": stats["n_records"],
           "n_speakers": stats["n_speakers"]})
    return 0


def _feature_meta(args: argparse.Namespace, stats: FeatureStats,
                  label_map: LabelMap, class_names: list[str],
                  extras: dict) -> dict:
    meta = {
        "classes": class_names,
        "label_map": dict(label_map.entries),
        "feature": {"mels": args.mels, "deltas": args.deltas},
        "stats": {"mean": stats.mean.tolist(), "std": stats.std.tolist()},
        "arch": args.arch,
        "multitask": args.multitask,
        "seed": args.seed,
    }
    meta.update(extras)
    return meta


def cmd_train(args: argparse.Namespace) -> int:
    manifest = Path(args.manifest)
    out = _resolve_out(args.out, "train")
    label_map = resolve_label_map(args.classes, args.maps)
    records = _load_records(manifest, label_map)
    class_names = label_map.task_classes
    features_dir = Path(args.features) if args.features else None
    feats = load_features(records, manifest, features_dir, args.mels, args.deltas)

    train_speakers, val_speakers = _split_speakers(records, args.val_fraction,
                                                   args.seed)
    train_records = records_for_speakers(records, train_speakers)
    val_records = records_for_speakers(records, val_speakers)
    if args.neutral_fraction is not None:
        train_records = downsample_neutral(train_records, args.neutral_fraction,
                                           seed=args.seed,
                                           neutral_label=args.neutral_label)
    stats = FeatureStats.from_matrices([feats[r.id] for r in train_records])
    chop_cfg = ChopConfig()
    chopped = chop_records(train_records + val_records, feats, stats, chop_cfg)
    train_subsegs = oversample_balance(
        [s for rec in train_records for s in chopped[rec.id]], seed=args.seed)
    val_groups = groups_for(val_records, chopped)

    input_dims = next(iter(feats.values())).shape[1]
    spec = _spec_fn(args.arch)(input_dims=input_dims,
                               input_frames=chop_cfg.window_frames,
                               n_emotions=len(class_names),
                               multitask=args.multitask)
    model = EmotionRecognizer(spec, seed=args.seed)
    result = fit(model, train_subsegs, val_groups, _optimizer_from_args(args),
                 class_names=class_names, seed=args.seed)
    model.set_params(result.best_params)

    meta = _feature_meta(args, stats, label_map, class_names, {
        "strategy": result.best_strategy,
        "best_epoch": result.best_epoch,
        "best_val_ua": result.best_val_ua,
        "best_val_wa": result.best_val_wa,
        "train_speakers": sorted(train_speakers),
        "val_speakers": sorted(val_speakers),
    })
    checkpoint = out / "checkpoint.serm"
    save_checkpoint(checkpoint, model, meta)
    _write_jsonl(out / "train_log.jsonl", result.log)
    report = evaluate_groups(make_model_predictor(model), val_groups,
                             class_names, result.best_strategy or "majority")
    report["split"] = {"train_speakers": sorted(train_speakers),
                       "val_speakers": sorted(val_speakers)}
    _write_json(out / "report.json", report)
    _emit({"checkpoint": str(checkpoint), "best_epoch": result.best_epoch,
           "best_val_ua": result.best_val_ua, "strategy": result.best_strategy})
    return 0


def _confusion_rows(report: dict) -> tuple[list[str], list[list]]:
    names = report["class_names"]
    header = ["true\\predicted"] + list(names)
    rows = [[name] + list(counts)
            for name, counts in zip(names, report["confusion"])]
    return header, rows


def cmd_eval(args: argparse.Namespace) -> int:
    out = _resolve_out(args.out, "eval")
    model, meta = load_checkpoint(args.checkpoint)
    manifest = Path(args.manifest)
    label_map = LabelMap(entries=dict(meta["label_map"]))
    records = _load_records(manifest, label_map)
    features_dir = Path(args.features) if args.features else None
    feats = load_features(records, manifest, features_dir,
                          meta["feature"]["mels"], meta["feature"]["deltas"])
    stats = FeatureStats(mean=np.asarray(meta["stats"]["mean"]),
                         std=np.asarray(meta["stats"]["std"]))
    chopped = chop_records(records, feats, stats, ChopConfig())
    groups = groups_for(records, chopped)
    report = evaluate_groups(make_model_predictor(model), groups,
                             meta["classes"], meta["strategy"])
    report["checkpoint"] = str(args.checkpoint)
    _write_json(out / "report.json", report)
    header, rows = _confusion_rows(report)
    _write_csv(out / "confusion.csv", header, rows)
    _emit({"out": str(out), "ua": report["ua"], "wa": report["wa"],
           "n_segments": report["n_segments"]})
    return 0


_COMPARISON_KEY = ["task", "deltas", "multitask", "arch", "k", "seed"]
_COMPARISON_FIELDS = _COMPARISON_KEY + ["mean_ua", "mean_wa", "best_ua",
                                        "best_wa", "pooled_ua", "pooled_wa"]


def _upsert_comparison(path: Path, row: dict) -> None:
    """Insert or replace this condition's row; the file accumulates one row
    per experimental condition across invocations."""
    row = {k: str(v) for k, v in row.items()}
    rows = []
    if path.exists():
        with open(path, newline="", encoding="utf-8") as handle:
            rows = [r for r in csv.DictReader(handle)
                    if {k: r.get(k) for k in _COMPARISON_KEY}
                    != {k: row[k] for k in _COMPARISON_KEY}]
    rows.append(row)
    rows.sort(key=lambda r: [r.get(k, "") for k in _COMPARISON_KEY])
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.DictWriter(handle, fieldnames=_COMPARISON_FIELDS)
        writer.writeheader()
        writer.writerows(rows)


def cmd_crossval(args: argparse.Namespace) -> int:
    manifest = Path(args.manifest)
    out = _resolve_out(args.out, "crossval")
    label_map = resolve_label_map(args.classes, args.maps)
    records = _load_records(manifest, label_map)
    class_names = label_map.task_classes
    features_dir = Path(args.features) if args.features else None
    feats = load_features(records, manifest, features_dir, args.mels, args.deltas)
    fold_indices = None
    if args.folds:
        try:
            fold_indices = [int(part) for part in args.folds.split(",")]
        except ValueError:
            raise ConfigError(f"--folds expects comma-separated integers, "
                              f"got {args.folds!r}") from None
    result = crossval(records, feats, class_names,
                      opt=_optimizer_from_args(args),
                      model_spec_fn=_spec_fn(args.arch), k=args.k,
                      seed=args.seed, multitask=args.multitask,
                      neutral_fraction=args.neutral_fraction,
                      neutral_label=args.neutral_label,
                      fold_indices=fold_indices)

    for outcome in result.folds:
        fold_dir = out / f"fold_{outcome.fold_index}"
        _write_json(fold_dir / "report.json", outcome.report)
        _write_jsonl(fold_dir / "log.jsonl", outcome.log)
        if outcome.params is not None and outcome.model_spec is not None:
            fold_model = EmotionRecognizer(outcome.model_spec, seed=0)
            fold_model.set_params(outcome.params)
            stats = FeatureStats.from_matrices(
                [feats[r.id] for r in records_for_speakers(
                    records, outcome.split.train_speakers)])
            meta = _feature_meta(args, stats, label_map, class_names, {
                "strategy": outcome.strategy,
                "fold": outcome.fold_index,
                "test_speakers": sorted(outcome.split.test_speakers),
            })
            save_checkpoint(fold_dir / "checkpoint.serm", fold_model, meta)

    pooled = dict(result.pooled)
    pooled["seed"] = args.seed
    pooled["task"] = "+".join(class_names)
    _write_json(out / "report.json", pooled)
    _upsert_comparison(out / "comparison.csv", {
        "task": "+".join(class_names), "deltas": args.deltas,
        "multitask": args.multitask, "arch": args.arch, "k": args.k,
        "seed": args.seed, "mean_ua": pooled["mean_ua"],
        "mean_wa": pooled["mean_wa"], "best_ua": pooled["best_ua"],
        "best_wa": pooled["best_wa"], "pooled_ua": pooled["pooled_ua"],
        "pooled_wa": pooled["pooled_wa"]})
    _emit({"out": str(out), "mean_ua": pooled["mean_ua"],
           "best_ua": pooled["best_ua"], "folds": len(result.folds)})
    return 0


def cmd_crosscorpus(args: argparse.Namespace) -> int:
    out = _resolve_out(args.out, "crosscorpus")
    label_map = resolve_label_map(args.classes, args.maps)
    class_names = label_map.task_classes
    train_manifest = Path(args.train_manifest)
    test_manifest = Path(args.test_manifest)
    train_records = _load_records(train_manifest, label_map)
    test_records = _load_records(test_manifest, label_map)
    train_feats = load_features(
        train_records, train_manifest,
        Path(args.train_features) if args.train_features else None,
        args.mels, args.deltas)
    test_feats = load_features(
        test_records, test_manifest,
        Path(args.test_features) if args.test_features else None,
        args.mels, args.deltas)
    report = cross_corpus(train_records, train_feats, test_records, test_feats,
                          class_names, opt=_optimizer_from_args(args),
                          model_spec_fn=_spec_fn(args.arch), seed=args.seed,
                          multitask=args.multitask,
                          val_fraction=args.val_fraction)
    _write_json(out / "report.json", report)
    header, rows = _confusion_rows(report)
    _write_csv(out / "confusion.csv", header, rows)
    _emit({"out": str(out), "ua": report["ua"], "wa": report["wa"]})
    return 0


def cmd_gradcheck(args: argparse.Namespace) -> int:
    report = run_gradcheck(seed=args.seed)
    if args.out:
        _write_json(Path(args.out) / "gradcheck.json", report)
    _emit(report)
    return 0 if report["pass"] else 3


# --- parser construction -----------------------------------------------------------


def _add_task_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--classes", type=int, default=4,
                        help="task size preset: 4, 3, or 2 (default 4)")
    parser.add_argument("--map", action="append", default=[], dest="maps",
                        metavar="TARGET=SRC1+SRC2",
                        help="override label mapping; DROP removes sources; "
                             "repeatable")


def _add_feature_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--mels", type=int, default=40,
                        help="mel bands per frame (default 40)")
    parser.add_argument("--deltas", default=True,
                        action=argparse.BooleanOptionalAction,
                        help="append first/second temporal derivatives")


def _add_model_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--arch", choices=("temporal", "2d"),
                        default="temporal", help="convolution stack flavor")
    parser.add_argument("--multitask", default=True,
                        action=argparse.BooleanOptionalAction,
                        help="train the auxiliary gender head")


def _add_optimizer_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--lr0", type=float, default=1e-4,
                        help="initial learning rate (default 1e-4)")
    parser.add_argument("--batch", type=int, default=32,
                        help="minibatch size (default 32)")
    parser.add_argument("--epochs", type=int, default=100,
                        help="training epochs (default 100)")


def build_parser() -> _Parser:
    parser = _Parser(prog="serkit",
                     description="speech emotion recognition experiments")
    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic labeled corpus")
    p.add_argument("--out", help=f"output directory (default ${OUT_ENV_VAR}/synth)")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--speakers", type=int, default=24)
    p.add_argument("--per-speaker", type=int, default=40,
                   help="segments per speaker")
    p.add_argument("--shares", help="class shares: preset name "
                   f"({', '.join(_SHARE_PRESETS)}) or name=frac,... pairs")
    p.add_argument("--duration-min", type=float, default=1.0)
    p.add_argument("--duration-max", type=float, default=4.0)
    p.add_argument("--rate", type=int, default=8000, choices=(8000, 16000))
    p.add_argument("--band-shift", type=float, default=0.0,
                   help="shift class carrier bands (fraction of Nyquist)")
    p.add_argument("--annotator-noise", type=float, default=0.0,
                   help="probability of a dissenting second annotation")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("featurize", help="write feature caches for a corpus")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", help=f"cache directory (default ${OUT_ENV_VAR}/features)")
    p.add_argument("--force", action="store_true",
                   help="rewrite caches even when up to date")
    _add_feature_args(p)
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("stats", help="corpus statistics report")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", help=f"output directory (default ${OUT_ENV_VAR}/stats)")
    p.add_argument("--neutral-label", default="neutral")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("train", help="train one model on a speaker split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--features", help="feature cache directory (else compute)")
    p.add_argument("--out", help=f"output directory (default ${OUT_ENV_VAR}/train)")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--val-fraction", type=float, default=0.2,
                   help="fraction of speakers held out for validation")
    p.add_argument("--neutral-fraction", type=float, default=None,
                   help="downsample the neutral class to about this share")
    p.add_argument("--neutral-label", default="neutral")
    _add_task_args(p)
    _add_feature_args(p)
    _add_model_args(p)
    _add_optimizer_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a corpus")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--features", help="feature cache directory (else compute)")
    p.add_argument("--out", help=f"output directory (default ${OUT_ENV_VAR}/eval)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("crossval",
                       help="speaker-independent k-fold cross-validation")
    p.add_argument("--manifest", required=True)
    p.add_argument("--features", help="feature cache directory (else compute)")
    p.add_argument("--out", help=f"output directory (default ${OUT_ENV_VAR}/crossval)")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--folds", help="run only these fold indices, e.g. 0,2")
    p.add_argument("--neutral-fraction", type=float, default=None)
    p.add_argument("--neutral-label", default="neutral")
    _add_task_args(p)
    _add_feature_args(p)
    _add_model_args(p)
    _add_optimizer_args(p)
    p.set_defaults(func=cmd_crossval)

    p = sub.add_parser("crosscorpus",
                       help="train on corpus A, evaluate on corpus B")
    p.add_argument("--train-manifest", required=True)
    p.add_argument("--test-manifest", required=True)
    p.add_argument("--train-features")
    p.add_argument("--test-features")
    p.add_argument("--out",
                   help=f"output directory (default ${OUT_ENV_VAR}/crosscorpus)")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--val-fraction", type=float, default=0.2)
    _add_task_args(p)
    _add_feature_args(p)
    _add_model_args(p)
    _add_optimizer_args(p)
    p.set_defaults(func=cmd_crosscorpus)

    p = sub.add_parser("gradcheck",
                       help="finite-difference check of every gradient")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="also write gradcheck.json here")
    p.set_defaults(func=cmd_gradcheck)

    return parser


_EXIT_CODES = ((ConfigError, 1), (NumericsError, 3), (DataError, 2))


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except SerkitError as exc:
        code = next((c for cls, c in _EXIT_CODES if isinstance(exc, cls)), 2)
        record = {"error": type(exc).__name__, "message": str(exc),
                  "exit_code": code}
        print(json.dumps(record, ensure_ascii=False), file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
