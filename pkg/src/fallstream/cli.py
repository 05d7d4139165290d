"""Command-line entry point: prepare, train, evaluate, replay, serve.

prepare   dataset dir -> feature CSV (58 columns + label_code,label_class)
train     feature CSV -> model artifact (scaler fit on the train split only)
evaluate  feature CSV + artifact -> accuracy and confusion matrices
replay    trial file through the pipeline, paced or at max speed
serve     live TCP listener feeding the pipeline until SIGINT/SIGTERM

Diagnostics go to stderr; data goes to files, stdout sinks, or --out
paths. Exit code 0 means the command completed.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import signal
import sys
import threading
from collections import Counter
from pathlib import Path

import numpy as np

from .errors import (
    ArtifactError,
    ConfigError,
    InsufficientData,
    MissingLabel,
    ParseError,
    SchemaMismatch,
    UnknownActivity,
)
from .features import SCHEMA_V1, extract_features, fit_scaler, scale_values
from .ingest import BinaryClass, load_mapping, parse_trial_path
from .model import (
    ModelArtifact,
    TrainConfig,
    evaluate,
    init_model,
    load_artifact,
    save_artifact,
    stratified_split,
    train,
)
from .stream import (
    PipelineConfig,
    ReplaySpec,
    SocketSpec,
    run_pipeline,
)
from .windowing import WindowAssembler, WindowConfig

DEFAULT_SEED = 1234
FEATURE_HEADER = list(SCHEMA_V1.names) + ["label_code", "label_class"]


def _err(msg: str) -> None:
    print(f"error: {msg}", file=sys.stderr)


def _info(msg: str) -> None:
    print(msg, file=sys.stderr)


def write_feature_csv(path: str | Path, vectors) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(FEATURE_HEADER)
        for fv in vectors:
            row = [repr(float(v)) for v in fv.values]
            row.append(fv.label_code or "")
            row.append(fv.label_class.value if fv.label_class else "")
            writer.writerow(row)


def read_feature_csv(path: str | Path):
    """Feature matrix plus label code/class columns of a prepare output."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != FEATURE_HEADER:
            raise SchemaMismatch(
                f"{path}: header does not match feature schema v{SCHEMA_V1.version}"
            )
        values, codes, classes = [], [], []
        for row in reader:
            if not row:
                continue
            if len(row) != len(FEATURE_HEADER):
                raise ParseError(f"{path}: row with {len(row)} columns")
            values.append([float(v) for v in row[:58]])
            codes.append(row[58])
            classes.append(BinaryClass(row[59]) if row[59] else None)
    X = np.asarray(values, dtype=np.float64)
    return X, codes, classes


def _labels_to_targets(classes) -> np.ndarray:
    targets = []
    for cls in classes:
        if cls is None:
            raise MissingLabel("feature CSV contains unlabeled rows")
        targets.append(1.0 if cls is BinaryClass.FALL else 0.0)
    return np.asarray(targets, dtype=np.float64)


def cmd_prepare(args) -> int:
    mapping = load_mapping(args.mapping)
    dataset = Path(args.dataset_dir)
    if not dataset.is_dir():
        raise ParseError(f"dataset directory {dataset} does not exist")
    files = sorted(p for p in dataset.rglob(args.pattern) if p.is_file())
    if not files:
        raise ParseError(f"no trial files matching {args.pattern!r} in {dataset}")

    window = WindowConfig(size=args.window_size, stride=args.stride)
    vectors = []
    samples_total = malformed = regressions = partial = 0
    label_codes: Counter = Counter()
    label_classes: Counter = Counter()
    for path in files:
        samples, report = parse_trial_path(path, mapping)
        samples_total += report.rows
        malformed += report.malformed
        regressions += report.timestamp_regressions
        assembler = WindowAssembler(window, mapping.extra_activities)
        for sample in samples:
            for win in assembler.push(sample):
                fv = extract_features(
                    win, extra_activities=mapping.extra_activities)
                if fv.label_class is None:
                    raise MissingLabel(
                        f"{path}: unlabeled windows; prepare needs a mapping "
                        "with a label column"
                    )
                vectors.append(fv)
                label_codes[fv.label_code] += 1
                label_classes[fv.label_class.value] += 1
        partial += assembler.finish()

    write_feature_csv(args.out, vectors)
    _info(f"trials        : {len(files)}")
    _info(f"rows          : {samples_total} ({malformed} malformed, "
          f"{regressions} timestamp regressions)")
    _info(f"windows       : {len(vectors)} ({partial} samples in dropped "
          f"partial windows)")
    _info(f"class counts  : {dict(sorted(label_classes.items()))}")
    _info(f"code counts   : {dict(sorted(label_codes.items()))}")
    _info(f"features written to {args.out}")
    return 0


def cmd_train(args) -> int:
    csv_path = Path(args.features_csv)
    X, codes, classes = read_feature_csv(csv_path)
    if X.shape[0] == 0:
        raise InsufficientData(f"{csv_path} holds no feature rows")
    y = _labels_to_targets(classes)

    seed = args.seed
    config = TrainConfig(
        epochs=args.epochs,
        learning_rate=args.learning_rate,
        batch_size=args.batch_size,
        shuffle_seed=seed + 1,
        test_fraction=args.test_fraction,
        split_seed=seed + 2,
    )
    train_idx, test_idx = stratified_split(y, config.test_fraction,
                                           config.split_seed)
    scaler = fit_scaler(X[train_idx])
    Xn = scale_values(X, scaler)

    model = init_model(dims=(58, args.hidden[0], args.hidden[1], 1), seed=seed)
    history = train(model, Xn[train_idx], y[train_idx], config)
    for entry in history:
        _info(f"epoch {entry.epoch:>3}/{config.epochs} "
              f"loss={entry.loss:.6f} acc={entry.accuracy:.4f}")

    train_metrics = evaluate(model, Xn[train_idx], y[train_idx])
    test_metrics = evaluate(model, Xn[test_idx], y[test_idx])
    metadata = {
        "epochs": config.epochs,
        "learning_rate": config.learning_rate,
        "batch_size": config.batch_size,
        "seed": seed,
        "shuffle_seed": config.shuffle_seed,
        "split_seed": config.split_seed,
        "test_fraction": config.test_fraction,
        "dataset_digest": hashlib.sha256(csv_path.read_bytes()).hexdigest(),
        "n_train": int(train_idx.size),
        "n_test": int(test_idx.size),
        "train_accuracy": train_metrics.accuracy,
        "test_accuracy": test_metrics.accuracy,
    }
    artifact = ModelArtifact(model=model, scaler=scaler, metadata=metadata)
    digest = save_artifact(artifact, args.artifact)
    _info(f"train accuracy: {train_metrics.accuracy:.4f} "
          f"({train_idx.size} windows)")
    _info(f"test accuracy : {test_metrics.accuracy:.4f} "
          f"({test_idx.size} windows)")
    _info(f"artifact written to {args.artifact} (sha256 {digest[:16]}...)")
    return 0


def cmd_evaluate(args) -> int:
    artifact = load_artifact(args.artifact)
    X, codes, classes = read_feature_csv(args.features_csv)
    if X.shape[0] == 0:
        raise InsufficientData(f"{args.features_csv} holds no feature rows")
    y = _labels_to_targets(classes)

    if args.split != "all":
        meta = artifact.metadata
        digest = hashlib.sha256(Path(args.features_csv).read_bytes()).hexdigest()
        if digest != meta.get("dataset_digest"):
            _info("warning: CSV digest differs from the artifact's training "
                  "set; --split selects rows as if it were the same file")
        train_idx, test_idx = stratified_split(
            y, meta["test_fraction"], meta["split_seed"])
        idx = train_idx if args.split == "train" else test_idx
        X, y = X[idx], y[idx]

    Xn = scale_values(X, artifact.scaler)
    metrics = evaluate(artifact.model, Xn, y)
    print(metrics.format_table())
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(metrics.to_dict(), fh, indent=2)
            fh.write("\n")
        _info(f"metrics written to {args.out}")
    return 0


def _load_config_file(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"config {path} must hold a JSON object")
    return doc


def _pick(flag, cfg: dict, key: str, default):
    if flag is not None:
        return flag
    return cfg.get(key, default)


def _build_window(args, cfg: dict) -> WindowConfig:
    wcfg = cfg.get("window", {})
    return WindowConfig(
        size=int(_pick(args.window_size, wcfg, "size", 200)),
        stride=int(_pick(args.stride, wcfg, "stride", 200)),
    )


def _parse_speed(raw) -> float:
    if isinstance(raw, (int, float)):
        return float(raw)
    if str(raw).lower() in ("max", "inf"):
        return math.inf
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(f"--speed must be a number or 'max', got {raw!r}")


def _parse_listen(raw: str) -> tuple[str, int]:
    host, sep, port = str(raw).rpartition(":")
    if not sep or not host:
        raise ConfigError(f"--listen must look like host:port, got {raw!r}")
    try:
        return host, int(port)
    except ValueError:
        raise ConfigError(f"bad port in --listen value {raw!r}")


def cmd_replay(args) -> int:
    cfg = _load_config_file(args.config)
    src_cfg = cfg.get("source", {})
    mapping_path = _pick(args.mapping, src_cfg, "mapping", None)
    if mapping_path is None:
        raise ConfigError("replay needs --mapping (or source.mapping in --config)")
    mapping = load_mapping(mapping_path)
    samples, report = parse_trial_path(args.trial_file, mapping)
    if report.malformed:
        _info(f"note: {report.malformed} malformed rows skipped while parsing")

    source = ReplaySpec(
        samples=samples,
        rate_hz=float(_pick(args.rate_hz, src_cfg, "rate_hz", 20.0)),
        speed=_parse_speed(_pick(args.speed, src_cfg, "speed", math.inf)),
    )
    config = PipelineConfig(
        source=source,
        artifact_path=_pick(args.artifact, cfg, "artifact", None),
        window=_build_window(args, cfg),
        sinks=tuple(_pick(args.sink or None, cfg, "sinks", ["stdout"])),
        queue_capacity=int(_pick(args.queue_capacity, cfg, "queue_capacity", 1024)),
        overflow=_pick(args.overflow, cfg, "overflow", "block"),
        extra_activities=mapping.extra_activities,
    )
    if config.artifact_path is None:
        raise ConfigError("replay needs --artifact (or artifact in --config)")
    stats = run_pipeline(config)
    stats.malformed += report.malformed
    stats.timestamp_regressions += report.timestamp_regressions
    _info(stats.format_line())
    return 0


def cmd_serve(args) -> int:
    cfg = _load_config_file(args.config)
    src_cfg = cfg.get("source", {})
    listen = _pick(args.listen, src_cfg, "listen", None)
    if listen is None:
        raise ConfigError("serve needs --listen (or source.listen in --config)")
    host, port = _parse_listen(listen)

    config = PipelineConfig(
        source=SocketSpec(host=host, port=port),
        artifact_path=_pick(args.artifact, cfg, "artifact", None),
        window=_build_window(args, cfg),
        sinks=tuple(_pick(args.sink or None, cfg, "sinks", ["stdout"])),
        queue_capacity=int(_pick(args.queue_capacity, cfg, "queue_capacity", 1024)),
        overflow=_pick(args.overflow, cfg, "overflow", "drop_oldest"),
        stats_interval_s=float(
            _pick(args.stats_interval, cfg, "stats_interval_s", 10.0)),
    )
    if config.artifact_path is None:
        raise ConfigError("serve needs --artifact (or artifact in --config)")

    shutdown = threading.Event()

    def _handle(signum, frame):
        shutdown.set()

    signal.signal(signal.SIGINT, _handle)
    signal.signal(signal.SIGTERM, _handle)
    _info(f"listening on {host}:{port}")
    stats = run_pipeline(config, shutdown=shutdown)
    _info(stats.format_line())
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fallstream",
        description="Fall detection over accelerometer streams.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="dataset directory to feature CSV")
    p.add_argument("dataset_dir")
    p.add_argument("--mapping", required=True, help="column mapping JSON")
    p.add_argument("--out", required=True, help="output feature CSV path")
    p.add_argument("--pattern", default="*.csv", help="trial filename glob")
    p.add_argument("--window-size", type=int, default=200)
    p.add_argument("--stride", type=int, default=200)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="feature CSV to model artifact")
    p.add_argument("features_csv")
    p.add_argument("--artifact", required=True, help="output artifact path")
    p.add_argument("--epochs", type=int, default=150)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--learning-rate", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--hidden", type=_parse_hidden, default=(64, 32),
                   help="hidden layer sizes as H1,H2")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="metrics of an artifact on a CSV")
    p.add_argument("features_csv")
    p.add_argument("--artifact", required=True)
    p.add_argument("--split", choices=("all", "train", "test"), default="all")
    p.add_argument("--out", help="write metrics JSON here")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("replay", help="stream a trial file through the pipeline")
    p.add_argument("trial_file")
    p.add_argument("--mapping")
    p.add_argument("--artifact")
    p.add_argument("--config", help="pipeline config JSON")
    p.add_argument("--speed", help="pacing factor or 'max'")
    p.add_argument("--rate-hz", type=float)
    p.add_argument("--window-size", type=int)
    p.add_argument("--stride", type=int)
    p.add_argument("--queue-capacity", type=int)
    p.add_argument("--overflow", choices=("block", "drop_oldest"))
    p.add_argument("--sink", action="append",
                   help="stdout | file:<path> | webhook:<url> (repeatable)")
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("serve", help="listen for live samples and classify")
    p.add_argument("--listen", help="host:port")
    p.add_argument("--artifact")
    p.add_argument("--config", help="pipeline config JSON")
    p.add_argument("--window-size", type=int)
    p.add_argument("--stride", type=int)
    p.add_argument("--queue-capacity", type=int)
    p.add_argument("--overflow", choices=("block", "drop_oldest"))
    p.add_argument("--stats-interval", type=float)
    p.add_argument("--sink", action="append",
                   help="stdout | file:<path> | webhook:<url> (repeatable)")
    p.set_defaults(func=cmd_serve)
    return parser


def _parse_hidden(raw: str) -> tuple[int, int]:
    parts = raw.split(",")
    if len(parts) != 2:
        raise argparse.ArgumentTypeError("expected two sizes, e.g. 64,32")
    return int(parts[0]), int(parts[1])


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ParseError, ConfigError, ArtifactError, SchemaMismatch,
            MissingLabel, UnknownActivity, InsufficientData) as exc:
        _err(str(exc))
        return 2
    except OSError as exc:
        _err(str(exc))
        return 2


if __name__ == "__main__":
    sys.exit(main())
