"""The running pipeline: source -> windower -> features -> model -> sinks.

Two execution contexts: the source (replay thread or socket reader
threads) feeds one bounded queue of sample batches; the consumer loop
assembles windows, classifies them, and delivers detections to every sink
in per-device order. Overflow policy ``block`` gives lossless backpressure
(replay default); ``drop_oldest`` sheds the oldest queued batch and counts
the shed samples (live default).

Detections serialize to one JSON line with a fixed key order:
``device_id, t_start_ms, t_end_ms, p_fall, class, seq, model_digest``.
p_fall is printed with 18 significant digits so the parsed value is
bit-identical to the computed one.
"""

from __future__ import annotations

import json
import math
import sys
import threading
import urllib.error
import urllib.request
from collections import deque
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Iterable, Union

from .errors import ConfigError
from .features import apply_scaler, extract_features
from .ingest import BinaryClass, Sample, SocketSource, replay_source
from .model import ModelArtifact, forward, load_artifact
from .windowing import Window, WindowAssembler, WindowConfig

QUEUE_CLOSED = object()
_TIMEOUT = object()

REPLAY_CHUNK = 512
WEBHOOK_TIMEOUT_S = 2.0


@dataclass(frozen=True)
class Detection:
    """One classified window; class is FALL exactly when p_fall >= 0.5."""

    device_id: str
    t_start_ms: int
    t_end_ms: int
    p_fall: float
    predicted: BinaryClass
    model_digest: str
    seq: int


def detection_line(d: Detection) -> str:
    """The bit-exact wire form of one detection."""
    return (
        '{"device_id": %s, "t_start_ms": %d, "t_end_ms": %d, "p_fall": %s, '
        '"class": %s, "seq": %d, "model_digest": %s}'
        % (
            json.dumps(d.device_id),
            d.t_start_ms,
            d.t_end_ms,
            format(d.p_fall, ".17e"),
            json.dumps(d.predicted.value),
            d.seq,
            json.dumps(d.model_digest),
        )
    )


@dataclass
class PipelineStats:
    samples_in: int = 0
    malformed: int = 0
    timestamp_regressions: int = 0
    windows: int = 0
    partial_window_drops: int = 0
    detections: int = 0
    sink_failures: int = 0
    overflow_drops: int = 0

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def format_line(self) -> str:
        return "stats " + " ".join(
            f"{k}={v}" for k, v in self.to_dict().items()
        )


@dataclass
class ReplaySpec:
    """Replay an in-memory sample sequence, optionally paced."""

    samples: list[Sample]
    rate_hz: float = 20.0
    speed: float = math.inf  # math.inf = as fast as the consumer accepts


@dataclass
class SocketSpec:
    host: str = "127.0.0.1"
    port: int = 0


@dataclass
class PipelineConfig:
    source: Union[ReplaySpec, SocketSpec]
    artifact_path: str | Path
    window: WindowConfig = field(default_factory=WindowConfig)
    sinks: tuple[str, ...] = ("stdout",)
    queue_capacity: int = 1024
    overflow: str = "block"
    stats_interval_s: float | None = None
    extra_activities: dict | None = None

    def __post_init__(self):
        if not self.sinks:
            raise ConfigError("pipeline needs at least one sink")
        if self.queue_capacity < 1:
            raise ConfigError("queue capacity must be >= 1")
        if self.overflow not in ("block", "drop_oldest"):
            raise ConfigError(
                f"overflow must be 'block' or 'drop_oldest', got {self.overflow!r}"
            )


class BoundedQueue:
    """Thread-safe bounded queue of sample batches with two full-queue modes."""

    def __init__(self, capacity: int, policy: str, stats: PipelineStats):
        self._capacity = capacity
        self._block = policy == "block"
        self._stats = stats
        self._items: deque = deque()
        self._cond = threading.Condition()
        self._closed = False

    def put(self, batch: list) -> None:
        with self._cond:
            if self._block:
                while len(self._items) >= self._capacity and not self._closed:
                    self._cond.wait(0.1)
            elif len(self._items) >= self._capacity:
                shed = self._items.popleft()
                self._stats.overflow_drops += len(shed)
            if self._closed:
                # arrivals racing a shutdown are shed, not lost silently
                self._stats.overflow_drops += len(batch)
                return
            self._items.append(batch)
            self._cond.notify_all()

    def get(self, timeout: float):
        """A batch, _TIMEOUT when nothing arrived, QUEUE_CLOSED when drained."""
        with self._cond:
            if not self._items and not self._closed:
                self._cond.wait(timeout)
            if self._items:
                item = self._items.popleft()
                self._cond.notify_all()
                return item
            return QUEUE_CLOSED if self._closed else _TIMEOUT

    def close(self) -> None:
        with self._cond:
            self._closed = True
            self._cond.notify_all()


class StdoutSink:
    def __init__(self, stream=None):
        self._stream = stream if stream is not None else sys.stdout

    def emit(self, line: str) -> None:
        self._stream.write(line + "\n")
        self._stream.flush()

    def close(self) -> None:
        pass


class FileSink:
    def __init__(self, path: str | Path):
        self._fh = open(path, "a", encoding="utf-8")

    def emit(self, line: str) -> None:
        self._fh.write(line + "\n")
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()


class WebhookSink:
    """POSTs each detection line; any non-2xx, timeout, or transport error
    raises so the pipeline's single retry applies."""

    def __init__(self, url: str, timeout_s: float = WEBHOOK_TIMEOUT_S):
        self.url = url
        self.timeout_s = timeout_s

    def emit(self, line: str) -> None:
        req = urllib.request.Request(
            self.url,
            data=line.encode("utf-8"),
            headers={"Content-Type": "application/json"},
            method="POST",
        )
        with urllib.request.urlopen(req, timeout=self.timeout_s) as resp:
            if not 200 <= resp.status < 300:
                raise OSError(f"webhook answered {resp.status}")

    def close(self) -> None:
        pass


def build_sink(spec: str):
    if spec == "stdout":
        return StdoutSink()
    if spec.startswith("file:"):
        return FileSink(spec[len("file:"):])
    if spec.startswith("webhook:"):
        return WebhookSink(spec[len("webhook:"):])
    raise ConfigError(f"unknown sink spec {spec!r}")


def classify_window(
    artifact: ModelArtifact,
    window: Window,
    seq: int,
    extra_activities: dict | None = None,
) -> Detection:
    fv = extract_features(window, extra_activities=extra_activities)
    scaled = apply_scaler(fv, artifact.scaler)
    p = forward(artifact.model, scaled.values)
    return Detection(
        device_id=window.device_id,
        t_start_ms=window.t_start,
        t_end_ms=window.t_end,
        p_fall=p,
        predicted=BinaryClass.FALL if p >= 0.5 else BinaryClass.ADL,
        model_digest=artifact.digest or "",
        seq=seq,
    )


def classify_samples(
    artifact: ModelArtifact,
    samples: Iterable[Sample],
    window: WindowConfig | None = None,
    extra_activities: dict | None = None,
) -> list[Detection]:
    """Batch-mode classification; the same code path the pipeline runs."""
    assembler = WindowAssembler(window or WindowConfig(), extra_activities)
    seqs: dict[str, int] = {}
    detections = []
    for sample in samples:
        for win in assembler.push(sample):
            seq = seqs.get(win.device_id, 0)
            seqs[win.device_id] = seq + 1
            detections.append(
                classify_window(artifact, win, seq, extra_activities)
            )
    return detections


def _replay_producer(spec: ReplaySpec, queue: BoundedQueue,
                     stats: PipelineStats, stop: threading.Event) -> None:
    try:
        if math.isinf(spec.speed):
            batch: list[Sample] = []
            for sample in spec.samples:
                if stop.is_set():
                    break
                stats.samples_in += 1
                batch.append(sample)
                if len(batch) >= REPLAY_CHUNK:
                    queue.put(batch)
                    batch = []
            if batch:
                queue.put(batch)
        else:
            for sample in replay_source(spec.samples, spec.rate_hz, spec.speed):
                if stop.is_set():
                    break
                stats.samples_in += 1
                queue.put([sample])
    finally:
        queue.close()


def _deliver(line: str, sinks: list, stats: PipelineStats) -> None:
    for sink in sinks:
        try:
            sink.emit(line)
        except Exception:
            try:
                sink.emit(line)
            except Exception:
                stats.sink_failures += 1


def run_pipeline(
    config: PipelineConfig, shutdown: threading.Event | None = None
) -> PipelineStats:
    """Run until the source ends or the shutdown event fires; drains what is
    already queued before returning. Artifact, sink, and bind problems are
    fatal at startup; everything after that only moves counters."""
    artifact = load_artifact(config.artifact_path)
    stats = PipelineStats()
    sinks = [build_sink(s) for s in config.sinks]
    queue = BoundedQueue(config.queue_capacity, config.overflow, stats)
    stop_source = threading.Event()

    socket_source = None
    if isinstance(config.source, ReplaySpec):
        producer = threading.Thread(
            target=_replay_producer,
            args=(config.source, queue, stats, stop_source),
            daemon=True,
        )
        producer.start()
    else:
        socket_source = SocketSource(
            config.source.host, config.source.port, emit=queue.put, stats=stats
        )
        socket_source.start()

    reporter_stop = threading.Event()
    if config.stats_interval_s:
        def _report():
            while not reporter_stop.wait(config.stats_interval_s):
                print(stats.format_line(), file=sys.stderr, flush=True)
        threading.Thread(target=_report, daemon=True).start()

    assembler = WindowAssembler(config.window, config.extra_activities)
    seqs: dict[str, int] = {}
    stopping = False
    try:
        while True:
            if shutdown is not None and shutdown.is_set() and not stopping:
                stopping = True
                stop_source.set()
                if socket_source is not None:
                    # close the queue first so blocked reader threads can exit
                    queue.close()
                    socket_source.stop()
            batch = queue.get(timeout=0.2)
            if batch is QUEUE_CLOSED:
                break
            if batch is _TIMEOUT:
                continue
            for sample in batch:
                for window in assembler.push(sample):
                    stats.windows += 1
                    seq = seqs.get(window.device_id, 0)
                    seqs[window.device_id] = seq + 1
                    detection = classify_window(
                        artifact, window, seq, config.extra_activities
                    )
                    stats.detections += 1
                    _deliver(detection_line(detection), sinks, stats)
    finally:
        stop_source.set()
        if socket_source is not None and not stopping:
            socket_source.stop()
        reporter_stop.set()
        stats.partial_window_drops += assembler.finish()
        for sink in sinks:
            try:
                sink.close()
            except Exception:
                pass
    return stats
