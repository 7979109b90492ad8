"""Command-line front end.

Subcommands: ``synth``, ``train``, ``evaluate``, ``predict``, ``features``,
``segment``. Every run is driven by a flat key=value config file with
section headers (INI style); each key can be overridden by a same-named
command-line flag. All randomness flows from the single ``seed`` key through
named sub-streams, and outputs are written atomically (temp file + rename).

Exit codes: 0 success, 2 config error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import configparser
import logging
import os
import sys
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .beats import LengthPolicy, rescale_states, segment_beats, normalize_duration, write_beats, zero_pad
from .core import Label
from .dsp import preprocess
from .ensemble import load_model, predict, save_model
from .errors import ConfigError, DataError, NumericError, PcgError
from .features import KIND_MFCC, KIND_TVAR, feature_map_for, write_feature_maps
from .io import DatasetManifest, Split, build_manifest, load_annotations, load_manifest, load_wav
from .metrics import CSV_HEADER
from .pipeline import (
    FEATURE_RAW,
    MODEL_NAMES,
    collect_beats,
    evaluate_classifier,
    train_classifier,
)
from .synth import SynthConfig, write_synth_dataset

log = logging.getLogger("pcgkit")

_POLICY_BY_NAME = {"norm1000": LengthPolicy.NORM_1000, "zpad1200": LengthPolicy.ZPAD_1200}

# (section, key, type, default, help); keys are globally unique, so the
# config stays a flat key=value namespace and every key maps to one flag.
_SCHEMA = [
    ("data", "root", str, "", "dataset directory (wav + csv + labels.csv)"),
    ("data", "synth", bool, False, "generate a synthetic dataset instead of reading root"),
    ("data", "n_recordings", int, 60, "synthetic recordings per class"),
    ("data", "beats_per_recording", int, 8, "complete beats per synthetic recording"),
    ("data", "heart_rate_lo", float, 55.0, "synthetic heart rate lower bound (bpm)"),
    ("data", "heart_rate_hi", float, 80.0, "synthetic heart rate upper bound (bpm)"),
    ("data", "murmur_amplitude", float, 0.2, "systolic murmur RMS amplitude (abnormal class)"),
    ("data", "noise_std", float, 0.02, "white noise standard deviation"),
    ("data", "synth_rate", int, 2000, "synthetic sample rate (Hz)"),
    ("data", "test_fraction", float, 0.5, "fraction of recordings per class in TEST"),
    ("pipeline", "beat_policy", str, "norm1000", "beat length policy: norm1000 | zpad1200"),
    ("pipeline", "features", str, "", "feature kind: raw | mfcc | tvar (default per model)"),
    ("model", "model", str, "cnn2d", "classifier: cnn1d | cnn2d | ecnn | hmm"),
    ("train", "learning_rate", float, 0.0, "Adam learning rate (0 = per-model tuned default)"),
    ("train", "batch_size", int, 128, "mini-batch size"),
    ("train", "epochs", int, 50, "maximum training epochs"),
    ("train", "patience", int, 10, "early-stop patience on validation MAcc"),
    ("train", "val_fraction", float, 0.1, "fraction of training beats held out for validation"),
    ("train", "class_weight_normal", float, 0.0, "loss weight of NORMAL (0 = inverse frequency)"),
    ("train", "class_weight_abnormal", float, 0.0, "loss weight of ABNORMAL (0 = inverse frequency)"),
    ("train", "hmm_iters", int, 50, "maximum Baum-Welch iterations"),
    ("train", "hmm_tol", float, 1e-5, "Baum-Welch relative log-likelihood tolerance"),
    ("output", "out", str, "runs/out", "output directory"),
    ("output", "seed", int, 0, "master seed; all sub-streams derive from it"),
]

_SPLIT_STREAM = 0x51
_SYNTH_STREAM = 0x52
_TRAIN_STREAM = 0x53


def _substream(seed: int, stream: int) -> int:
    return int(np.random.SeedSequence((seed, stream)).generate_state(1)[0])


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


@dataclass
class RunConfig:
    values: dict

    def __getattr__(self, key):
        try:
            return self.values[key]
        except KeyError:
            raise AttributeError(key) from None

    @property
    def beat_policy_enum(self) -> LengthPolicy:
        name = self.values["beat_policy"]
        if name not in _POLICY_BY_NAME:
            raise ConfigError(f"beat_policy must be norm1000 or zpad1200, got {name!r}")
        return _POLICY_BY_NAME[name]

    @property
    def feature_kind(self) -> str:
        configured = self.values["features"]
        if configured == "":
            return FEATURE_RAW if self.values["model"] == "cnn1d" else KIND_MFCC
        if configured not in (FEATURE_RAW, KIND_MFCC, KIND_TVAR):
            raise ConfigError(f"features must be raw, mfcc, or tvar, got {configured!r}")
        return configured

    @property
    def class_weights(self) -> tuple[float, float] | None:
        w0 = self.values["class_weight_normal"]
        w1 = self.values["class_weight_abnormal"]
        if w0 == 0.0 and w1 == 0.0:
            return None
        if w0 <= 0.0 or w1 <= 0.0:
            raise ConfigError("class weights must both be positive when set")
        return (w0, w1)

    def validate(self) -> None:
        if self.values["model"] not in MODEL_NAMES:
            raise ConfigError(f"model must be one of {MODEL_NAMES}, got {self.values['model']!r}")
        if self.values["root"] and self.values["synth"]:
            raise ConfigError("configure exactly one data source: root or synth, not both")
        model = self.values["model"]
        feature = self.feature_kind
        if model == "cnn1d" and feature != FEATURE_RAW:
            raise ConfigError("cnn1d consumes raw beats; set features=raw")
        if model in ("cnn2d", "ecnn", "hmm") and feature == FEATURE_RAW:
            raise ConfigError(f"{model} needs mfcc or tvar features")
        _ = self.beat_policy_enum
        _ = self.class_weights

    def synth_config(self) -> SynthConfig:
        return SynthConfig(
            n_recordings=self.values["n_recordings"],
            beats_per_recording=self.values["beats_per_recording"],
            heart_rate_bpm_range=(self.values["heart_rate_lo"], self.values["heart_rate_hi"]),
            murmur_amplitude=self.values["murmur_amplitude"],
            noise_std=self.values["noise_std"],
            seed=_substream(self.values["seed"], _SYNTH_STREAM),
            sample_rate_hz=self.values["synth_rate"],
        )


def load_config(path: str | None, overrides: dict) -> RunConfig:
    values = {key: default for _, key, _, default, _ in _SCHEMA}
    if path:
        parser = configparser.ConfigParser()
        read = parser.read(path)
        if not read:
            raise ConfigError(f"config file not found: {path}")
        known = {key: kind for _, key, kind, _, _ in _SCHEMA}
        for section in parser.sections():
            for key, raw in parser.items(section):
                if key not in known:
                    raise ConfigError(f"{path}: unknown config key {key!r}")
                kind = known[key]
                try:
                    values[key] = _parse_bool(raw) if kind is bool else kind(raw)
                except ValueError:
                    raise ConfigError(f"{path}: bad value for {key}: {raw!r}") from None
    for key, value in overrides.items():
        if value is not None:
            values[key] = value
    config = RunConfig(values)
    config.validate()
    return config


def _atomic_write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _atomic_save_model(model, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    os.close(fd)
    try:
        save_model(model, tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _resolve_manifest(config: RunConfig) -> DatasetManifest:
    if config.values["synth"]:
        dataset_dir = Path(config.values["out"]) / "dataset"
        log.info("synthesizing dataset into %s", dataset_dir)
        return write_synth_dataset(
            config.synth_config(),
            dataset_dir,
            split_seed=_substream(config.values["seed"], _SPLIT_STREAM),
            test_fraction=config.values["test_fraction"],
        )
    root = config.values["root"]
    if not root:
        raise ConfigError("no data source: set root=DIR or synth=true")
    root = Path(root)
    manifest_path = root / "manifest.tsv"
    if manifest_path.is_file():
        manifest = load_manifest(manifest_path)
        manifest.validate_paths()
        return manifest
    return build_manifest(
        root,
        split_seed=_substream(config.values["seed"], _SPLIT_STREAM),
        test_fraction=config.values["test_fraction"],
    )


_HISTORY_COLUMNS = [
    "model", "epoch", "train_loss", "val_loss", "val_accuracy",
    "val_sensitivity", "val_specificity", "val_macc", "loglik",
]


def _history_csv(rows: list[dict]) -> str:
    out = [",".join(_HISTORY_COLUMNS)]
    for row in rows:
        out.append(
            ",".join(
                "" if row.get(col) is None else (repr(row[col]) if isinstance(row.get(col), float) else str(row[col]))
                for col in _HISTORY_COLUMNS
            )
        )
    return "\n".join(out) + "\n"


def cmd_synth(config: RunConfig) -> int:
    out = Path(config.values["out"])
    manifest = write_synth_dataset(
        config.synth_config(),
        out,
        split_seed=_substream(config.values["seed"], _SPLIT_STREAM),
        test_fraction=config.values["test_fraction"],
    )
    n_train = len(manifest.subset(Split.TRAIN))
    n_test = len(manifest.subset(Split.TEST))
    print(f"wrote {len(manifest.entries)} recordings to {out} ({n_train} train / {n_test} test)")
    return 0


def cmd_train(config: RunConfig) -> int:
    manifest = _resolve_manifest(config)
    out = Path(config.values["out"])
    lr = config.values["learning_rate"]
    result = train_classifier(
        config.values["model"],
        manifest,
        beat_policy=config.beat_policy_enum,
        feature_kind=config.feature_kind,
        seed=_substream(config.values["seed"], _TRAIN_STREAM),
        epochs=config.values["epochs"],
        batch_size=config.values["batch_size"],
        learning_rate=None if lr == 0.0 else lr,
        class_weights=config.class_weights,
        val_fraction=config.values["val_fraction"],
        patience=config.values["patience"],
        hmm_iters=config.values["hmm_iters"],
        hmm_tol=config.values["hmm_tol"],
    )
    model_path = out / "model.pcgm"
    _atomic_save_model(result.model, model_path)
    _atomic_write_text(out / "history.csv", _history_csv(result.history))
    print(f"trained {config.values['model']} on {len(manifest.subset(Split.TRAIN))} recordings")
    print(f"model:   {model_path}")
    print(f"history: {out / 'history.csv'}")
    return 0


def cmd_evaluate(config: RunConfig, model_file: str) -> int:
    model = load_model(model_file)
    manifest = _resolve_manifest(config)
    evaluation = evaluate_classifier(model, manifest, Split.TEST)
    out = Path(config.values["out"])
    report = evaluation.report
    model_name = config.values["model"]
    feature = config.feature_kind
    text = (
        f"classifier: {model_name}\nfeatures: {feature}\n"
        f"test beats: {report.total}\n{report.to_text()}\n"
    )
    _atomic_write_text(out / "eval_report.txt", text)
    _atomic_write_text(
        out / "eval_report.csv",
        CSV_HEADER + "\n" + report.to_csv_row(model_name, feature) + "\n",
    )
    print(text, end="")
    print(f"reports under {out}")
    return 0


def cmd_predict(config: RunConfig, model_file: str, wav: str, annotations: str) -> int:
    model = load_model(model_file)
    raw = load_wav(wav)
    states = load_annotations(annotations)
    processed = preprocess(raw)
    states = rescale_states(states, raw.sample_rate_hz, processed.sample_rate_hz)

    from .pipeline import _model_beat_policy, _model_feature_kind  # shared dispatch

    policy = _model_beat_policy(model)
    feature_kind = _model_feature_kind(model)
    rows = []
    for beat in segment_beats(processed, states, Label.NORMAL, Path(wav).stem):
        sized = normalize_duration(beat) if policy is LengthPolicy.NORM_1000 else zero_pad(beat)
        if sized is None:
            continue
        fmap = feature_map_for(sized, feature_kind) if feature_kind else None
        scores = predict(model, sized, fmap).normalized()
        rows.append((beat.beat_index, scores.p_normal, scores.p_abnormal, scores.predicted.name))

    lines = ["beat_index,p_normal,p_abnormal,label"]
    lines += [f"{i},{p0!r},{p1!r},{name}" for i, p0, p1, name in rows]
    out = Path(config.values["out"])
    _atomic_write_text(out / "predictions.csv", "\n".join(lines) + "\n")
    print("\n".join(lines))
    print(f"wrote {out / 'predictions.csv'}")
    return 0


def cmd_features(config: RunConfig) -> int:
    manifest = _resolve_manifest(config)
    kind = config.feature_kind
    if kind == FEATURE_RAW:
        raise ConfigError("the features command needs features=mfcc or features=tvar")
    out = Path(config.values["out"])
    out.mkdir(parents=True, exist_ok=True)
    for split in (Split.TRAIN, Split.TEST):
        beats, _, _ = collect_beats(manifest, split, LengthPolicy.NORM_1000)
        records = [(feature_map_for(b, kind), b.label, b.recording_id) for b in beats]
        path = out / f"features_{split.lower()}.bin"
        write_feature_maps(path, records)
        print(f"{split}: {len(records)} {kind} maps -> {path}")
    return 0


def cmd_segment(config: RunConfig) -> int:
    manifest = _resolve_manifest(config)
    policy = config.beat_policy_enum
    out = Path(config.values["out"])
    out.mkdir(parents=True, exist_ok=True)
    for split in (Split.TRAIN, Split.TEST):
        beats, n_complete, n_discarded = collect_beats(manifest, split, policy)
        path = out / f"beats_{split.lower()}.bin"
        write_beats(path, beats)
        print(
            f"{split}: {n_complete} complete beats, {len(beats)} kept "
            f"({n_discarded} discarded) -> {path}"
        )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pcgkit", description="Heartbeat-level heart sound classification pipeline."
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p: argparse.ArgumentParser):
        p.add_argument("--config", help="key=value config file with section headers")
        p.add_argument("--model", choices=MODEL_NAMES, dest="model")
        p.add_argument("--features", choices=[FEATURE_RAW, KIND_MFCC, KIND_TVAR], dest="features")
        p.add_argument("--beat-policy", choices=sorted(_POLICY_BY_NAME), dest="beat_policy")
        for _, key, kind, _, help_text in _SCHEMA:
            if key in ("model", "features", "beat_policy"):
                continue
            flag = "--" + key.replace("_", "-")
            if kind is bool:
                p.add_argument(flag, dest=key, action="store_const", const=True, help=help_text)
            else:
                p.add_argument(flag, dest=key, type=kind, help=help_text)

    p_synth = sub.add_parser("synth", help="generate a synthetic labeled dataset")
    add_common(p_synth)
    p_train = sub.add_parser("train", help="train a classifier on the TRAIN split")
    add_common(p_train)
    p_eval = sub.add_parser("evaluate", help="evaluate a trained model on the TEST split")
    p_eval.add_argument("model_file")
    add_common(p_eval)
    p_pred = sub.add_parser("predict", help="per-beat scores for one recording")
    p_pred.add_argument("model_file")
    p_pred.add_argument("wav")
    p_pred.add_argument("annotations")
    add_common(p_pred)
    p_feat = sub.add_parser("features", help="dump feature maps for both splits")
    add_common(p_feat)
    p_seg = sub.add_parser("segment", help="dump segmented beats for both splits")
    add_common(p_seg)
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    overrides = {
        key: getattr(args, key, None) for _, key, _, _, _ in _SCHEMA if hasattr(args, key)
    }
    try:
        config = load_config(args.config, overrides)
        if args.command == "synth":
            return cmd_synth(config)
        if args.command == "train":
            return cmd_train(config)
        if args.command == "evaluate":
            return cmd_evaluate(config, args.model_file)
        if args.command == "predict":
            return cmd_predict(config, args.model_file, args.wav, args.annotations)
        if args.command == "features":
            return cmd_features(config)
        if args.command == "segment":
            return cmd_segment(config)
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 4
    except PcgError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
