"""Command-line surface: every subcommand end to end on a small corpus,
exit codes, artifact schemas, and byte-identical reruns.
"""

import json
import subprocess
import sys
from pathlib import Path

import jsonschema
import numpy as np
import pytest

import serkit
from serkit.cli import main, parse_map_flag, parse_shares, resolve_label_map
from serkit.errors import ConfigError

SCHEMA_DIR = Path(serkit.__file__).parent / "schemas"


def load_schema(name):
    return json.loads((SCHEMA_DIR / name).read_text())


def validate_file(path, schema_name):
    jsonschema.validate(json.loads(Path(path).read_text()),
                        load_schema(schema_name))


def run_cli(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """A small synthesized corpus with cached features, shared per module."""
    root = tmp_path_factory.mktemp("cli")
    assert run_cli("synth", "--out", root / "corpus", "--seed", 29,
                   "--speakers", 6, "--per-speaker", 8,
                   "--duration-min", 0.5, "--duration-max", 1.0,
                   "--annotator-noise", 0.2) == 0
    assert run_cli("featurize", "--manifest", root / "corpus/manifest.jsonl",
                   "--out", root / "feats", "--mels", 20, "--no-deltas") == 0
    return root


# --- flag parsing --------------------------------------------------------------


def test_parse_map_flag():
    assert parse_map_flag("negative=anger+fear") == ("negative", ["anger", "fear"])
    assert parse_map_flag("DROP=positive") == ("DROP", ["positive"])
    with pytest.raises(ConfigError):
        parse_map_flag("no-equals-sign")
    with pytest.raises(ConfigError):
        parse_map_flag("=anger")
    with pytest.raises(ConfigError):
        parse_map_flag("positive=DROP")  # DROP is only valid as a target


def test_resolve_label_map_presets():
    four = resolve_label_map(4, [])
    assert four.task_classes == ["anger", "fear", "positive", "neutral"]
    three = resolve_label_map(3, [])
    assert three.task_classes == ["anger", "positive", "neutral"]
    assert three.entries["fear"] == "DROP"
    two = resolve_label_map(2, [])
    assert two.task_classes == ["anger", "neutral"]
    merged = resolve_label_map(4, ["negative=anger+fear"])
    assert merged.entries["anger"] == "negative"
    assert merged.entries["fear"] == "negative"
    assert merged.task_classes == ["negative", "positive", "neutral"]
    with pytest.raises(ConfigError):
        resolve_label_map(5, [])


def test_parse_shares():
    assert parse_shares("equal") == {"anger": 0.25, "fear": 0.25,
                                     "positive": 0.25, "neutral": 0.25}
    cemo = parse_shares("cemo-like")
    assert cemo == {"anger": 0.14, "fear": 0.06, "positive": 0.10,
                    "neutral": 0.70}
    assert abs(sum(cemo.values()) - 1.0) < 1e-12
    custom = parse_shares("a=0.5,b=0.5")
    assert custom == {"a": 0.5, "b": 0.5}
    with pytest.raises(ConfigError):
        parse_shares("nonsense")


# --- synth / featurize / stats ----------------------------------------------------


def test_synth_writes_valid_manifest(workspace):
    manifest = workspace / "corpus/manifest.jsonl"
    schema = load_schema("manifest_record.json")
    lines = manifest.read_text().splitlines()
    assert len(lines) == 48
    for line in lines:
        jsonschema.validate(json.loads(line), schema)
    assert (workspace / "corpus/wav").is_dir()


def test_synth_is_deterministic(tmp_path):
    for sub in ("a", "b"):
        assert run_cli("synth", "--out", tmp_path / sub, "--seed", 7,
                       "--speakers", 2, "--per-speaker", 4,
                       "--duration-min", 0.5, "--duration-max", 0.8) == 0
    assert (tmp_path / "a/manifest.jsonl").read_bytes() == \
        (tmp_path / "b/manifest.jsonl").read_bytes()
    wavs = sorted(p.name for p in (tmp_path / "a/wav").iterdir())
    for name in wavs:
        assert (tmp_path / "a/wav" / name).read_bytes() == \
            (tmp_path / "b/wav" / name).read_bytes()


def test_synth_rejects_bad_shares(tmp_path, capsys):
    assert run_cli("synth", "--out", tmp_path, "--seed", 1,
                   "--shares", "a=0.7,b=0.7") == 1
    err = json.loads(capsys.readouterr().err.strip())
    jsonschema.validate(err, load_schema("error_record.json"))
    assert err["error"] == "ConfigError"


def test_featurize_cache_contents(workspace):
    from serkit.features import read_feature_cache
    feats = read_feature_cache(workspace / "feats" / "spk000-0000.serf")
    # 20 mel bands without deltas; at most 98 frames for a 1 s clip.
    assert feats.shape[1] == 20
    assert 40 <= feats.shape[0] <= 100
    serfs = list((workspace / "feats").glob("*.serf"))
    assert len(serfs) == 48


def test_featurize_is_idempotent(workspace, capsys):
    assert run_cli("featurize", "--manifest", workspace / "corpus/manifest.jsonl",
                   "--out", workspace / "feats", "--mels", 20, "--no-deltas") == 0
    summary = json.loads(capsys.readouterr().out)
    jsonschema.validate(summary, load_schema("featurize_summary.json"))
    assert summary["written"] == 0
    assert summary["skipped"] == 48
    assert summary["failed"] == 0


def test_featurize_reports_corrupt_audio(tmp_path, capsys):
    run_cli("synth", "--out", tmp_path / "c", "--seed", 3, "--speakers", 2,
            "--per-speaker", 2, "--duration-min", 0.5, "--duration-max", 0.8)
    capsys.readouterr()
    victim = next((tmp_path / "c/wav").iterdir())
    victim.write_bytes(b"garbage")
    assert run_cli("featurize", "--manifest", tmp_path / "c/manifest.jsonl",
                   "--out", tmp_path / "f") == 2
    summary = json.loads(capsys.readouterr().out)
    assert summary["failed"] == 1
    assert summary["errors"][0]["id"] == victim.stem


def test_stats_artifacts(workspace, capsys):
    out = workspace / "stats"
    assert run_cli("stats", "--manifest", workspace / "corpus/manifest.jsonl",
                   "--out", out) == 0
    capsys.readouterr()
    validate_file(out / "stats.json", "stats_report.json")
    stats = json.loads((out / "stats.json").read_text())
    assert stats["n_records"] == 48
    assert stats["n_speakers"] == 6
    # The generator wrote dual annotations, so agreement is reported.
    assert stats["annotator_agreement"]["n_dual"] == 48
    assert stats["annotator_agreement"]["kappa"] <= 1.0
    for name in ("class_counts.csv", "speakers_per_class.csv",
                 "emotions_per_speaker.csv"):
        lines = (out / name).read_text().splitlines()
        assert len(lines) >= 2


# --- train / eval -----------------------------------------------------------------


@pytest.fixture(scope="module")
def trained(workspace):
    out = workspace / "run"
    code = run_cli("train", "--manifest", workspace / "corpus/manifest.jsonl",
                   "--features", workspace / "feats", "--out", out,
                   "--seed", 2, "--mels", 20, "--no-deltas",
                   "--epochs", 2, "--batch", 64, "--lr0", "2e-3")
    assert code == 0
    return out


def test_train_artifacts(trained):
    validate_file(trained / "report.json", "eval_report.json")
    log_lines = (trained / "train_log.jsonl").read_text().splitlines()
    assert len(log_lines) == 2
    schema = load_schema("training_log_record.json")
    for line in log_lines:
        jsonschema.validate(json.loads(line), schema)
    meta = json.loads((trained / "checkpoint.serm.json").read_text())
    assert meta["meta"]["feature"] == {"mels": 20, "deltas": False}
    assert meta["meta"]["classes"] == ["anger", "fear", "positive", "neutral"]
    assert set(meta["meta"]["train_speakers"]) | set(meta["meta"]["val_speakers"]) \
        == {f"spk{i:03d}" for i in range(6)}


def test_train_reruns_are_byte_identical(workspace):
    outs = []
    for sub in ("rerun_a", "rerun_b"):
        out = workspace / sub
        assert run_cli("train", "--manifest", workspace / "corpus/manifest.jsonl",
                       "--features", workspace / "feats", "--out", out,
                       "--seed", 2, "--mels", 20, "--no-deltas",
                       "--epochs", 1, "--batch", 64, "--lr0", "2e-3") == 0
        outs.append(out)
    for name in ("checkpoint.serm", "checkpoint.serm.json", "train_log.jsonl",
                 "report.json"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes(), name


def test_eval_roundtrip(workspace, trained, capsys):
    out = workspace / "eval"
    assert run_cli("eval", "--checkpoint", trained / "checkpoint.serm",
                   "--manifest", workspace / "corpus/manifest.jsonl",
                   "--features", workspace / "feats", "--out", out) == 0
    capsys.readouterr()
    validate_file(out / "report.json", "eval_report.json")
    report = json.loads((out / "report.json").read_text())
    assert report["n_segments"] == 48
    confusion = (out / "confusion.csv").read_text().splitlines()
    assert confusion[0].startswith("true\\pred")
    assert len(confusion) == 5


def test_eval_missing_checkpoint(workspace, capsys):
    assert run_cli("eval", "--checkpoint", workspace / "nope.serm",
                   "--manifest", workspace / "corpus/manifest.jsonl",
                   "--out", workspace / "eval_missing") == 2
    err = json.loads(capsys.readouterr().err.strip())
    assert err["error"] == "DataError"


# --- crossval / crosscorpus ----------------------------------------------------------


def test_crossval_artifacts_and_comparison(workspace, capsys):
    out = workspace / "cv"
    assert run_cli("crossval", "--manifest", workspace / "corpus/manifest.jsonl",
                   "--features", workspace / "feats", "--out", out,
                   "--seed", 4, "--k", 2, "--mels", 20, "--no-deltas",
                   "--map", "negative=anger+fear", "--map", "DROP=positive",
                   "--epochs", 1, "--batch", 64, "--lr0", "2e-3") == 0
    capsys.readouterr()
    validate_file(out / "report.json", "crossval_report.json")
    report = json.loads((out / "report.json").read_text())
    assert report["k"] == 2
    assert report["class_names"] == ["negative", "neutral"]
    assert report["task"] == "negative+neutral"
    for fold in range(2):
        fold_dir = out / f"fold_{fold}"
        validate_file(fold_dir / "report.json", "eval_report.json")
        assert (fold_dir / "checkpoint.serm").exists()
        assert (fold_dir / "checkpoint.serm.json").exists()
        assert (fold_dir / "log.jsonl").read_text().count("\n") == 1
    rows = (out / "comparison.csv").read_text().splitlines()
    assert rows[0].split(",")[:4] == ["task", "deltas", "multitask", "arch"]
    assert len(rows) == 2

    # A second condition appends a row; rerunning it upserts in place.
    assert run_cli("crossval", "--manifest", workspace / "corpus/manifest.jsonl",
                   "--features", workspace / "feats", "--out", out,
                   "--seed", 4, "--k", 2, "--mels", 20, "--no-deltas",
                   "--map", "negative=anger+fear", "--map", "DROP=positive",
                   "--no-multitask", "--epochs", 1, "--batch", 64,
                   "--lr0", "2e-3") == 0
    capsys.readouterr()
    rows = (out / "comparison.csv").read_text().splitlines()
    assert len(rows) == 3
    assert run_cli("crossval", "--manifest", workspace / "corpus/manifest.jsonl",
                   "--features", workspace / "feats", "--out", out,
                   "--seed", 4, "--k", 2, "--mels", 20, "--no-deltas",
                   "--map", "negative=anger+fear", "--map", "DROP=positive",
                   "--no-multitask", "--epochs", 1, "--batch", 64,
                   "--lr0", "2e-3") == 0
    capsys.readouterr()
    assert len((out / "comparison.csv").read_text().splitlines()) == 3


def test_crossval_bad_fold_spec(workspace, capsys):
    assert run_cli("crossval", "--manifest", workspace / "corpus/manifest.jsonl",
                   "--features", workspace / "feats",
                   "--out", workspace / "cv_bad", "--seed", 4, "--k", 2,
                   "--folds", "0,x", "--mels", 20, "--no-deltas") == 1
    err = json.loads(capsys.readouterr().err.strip())
    assert err["exit_code"] == 1


def test_crosscorpus_and_degenerate_rejection(workspace, tmp_path, capsys):
    assert run_cli("synth", "--out", tmp_path / "other", "--seed", 31,
                   "--speakers", 6, "--per-speaker", 8,
                   "--duration-min", 0.5, "--duration-max", 1.0,
                   "--band-shift", 0.1) == 0
    capsys.readouterr()
    out = tmp_path / "cc"
    assert run_cli("crosscorpus",
                   "--train-manifest", workspace / "corpus/manifest.jsonl",
                   "--test-manifest", tmp_path / "other/manifest.jsonl",
                   "--out", out, "--seed", 6, "--mels", 20, "--no-deltas",
                   "--epochs", 1, "--batch", 64, "--lr0", "2e-3") == 0
    capsys.readouterr()
    validate_file(out / "report.json", "eval_report.json")
    report = json.loads((out / "report.json").read_text())
    assert report["direction"] == "train-on-A/test-on-B"
    assert report["n_segments"] == 48
    assert run_cli("crosscorpus",
                   "--train-manifest", workspace / "corpus/manifest.jsonl",
                   "--test-manifest", workspace / "corpus/manifest.jsonl",
                   "--out", tmp_path / "cc_same", "--seed", 6,
                   "--mels", 20, "--no-deltas", "--epochs", 1) == 2
    err = json.loads(capsys.readouterr().err.strip())
    assert err["error"] == "DataError"


# --- gradcheck / plumbing -------------------------------------------------------------


def test_gradcheck_command(tmp_path, capsys):
    assert run_cli("gradcheck", "--seed", 0, "--out", tmp_path) == 0
    capsys.readouterr()
    validate_file(tmp_path / "gradcheck.json", "gradcheck_report.json")


def test_out_env_fallback(workspace, tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("SERKIT_OUT", str(tmp_path / "root"))
    assert run_cli("stats", "--manifest", workspace / "corpus/manifest.jsonl") == 0
    capsys.readouterr()
    assert (tmp_path / "root/stats/stats.json").exists()
    monkeypatch.delenv("SERKIT_OUT")
    assert run_cli("stats", "--manifest", workspace / "corpus/manifest.jsonl") == 1


def test_usage_errors_exit_one(capsys):
    assert main(["synth"]) == 1          # missing required --seed
    capsys.readouterr()
    assert main(["no-such-command"]) == 1
    capsys.readouterr()
    assert main([]) == 1
    err = json.loads(capsys.readouterr().err.strip())
    jsonschema.validate(err, load_schema("error_record.json"))


def test_console_entry_point(tmp_path):
    # The installed script and module entry behave like main().
    proc = subprocess.run([sys.executable, "-m", "serkit.cli", "gradcheck",
                           "--seed", "0"], capture_output=True, text=True)
    assert proc.returncode == 0
    report = json.loads(proc.stdout)
    assert report["pass"] is True
    proc = subprocess.run([sys.executable, "-m", "serkit.cli", "train",
                           "--manifest", str(tmp_path / "missing.jsonl"),
                           "--out", str(tmp_path), "--seed", "1"],
                          capture_output=True, text=True)
    assert proc.returncode == 2
    err = json.loads(proc.stderr.strip())
    assert err["error"] == "ManifestError"
