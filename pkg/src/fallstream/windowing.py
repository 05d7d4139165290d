"""Count-based windowing with majority-vote labels.

Windows hold exactly ``size`` consecutive samples of one device; the
default is tumbling 200-sample blocks. Grouping is by count, never by
wall clock, so timestamp gaps do not split windows (they are only counted
when a gap threshold is configured). Trailing partial groups are dropped
and counted.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

from .errors import ConfigError, MissingLabel
from .ingest import BinaryClass, Sample, map_activity_to_class


@dataclass(frozen=True)
class WindowConfig:
    size: int = 200
    stride: int = 200
    gap_threshold_ms: int | None = None  # diagnostics only

    def __post_init__(self):
        if self.size < 1:
            raise ConfigError(f"window size must be >= 1, got {self.size}")
        if not 1 <= self.stride <= self.size:
            raise ConfigError(
                f"stride must satisfy 1 <= stride <= size, got {self.stride}"
            )


@dataclass(frozen=True)
class Window:
    """A full run of samples from one device plus its majority label."""

    device_id: str
    samples: tuple[Sample, ...]
    majority_code: str | None = None

    @property
    def n(self) -> int:
        return len(self.samples)

    @property
    def t_start(self) -> int:
        return self.samples[0].t_ms

    @property
    def t_end(self) -> int:
        return self.samples[-1].t_ms


def majority_label(
    samples, extra: dict[str, BinaryClass] | None = None
) -> str:
    """Most frequent activity code of a labeled sample run.

    Ties break safety-first: a tied fall code wins over a tied ADL code;
    within one class the lexicographically smallest code wins. Determinism
    here is what keeps stream and batch runs identical.
    """
    codes = []
    for s in samples:
        if s.label is None:
            raise MissingLabel(f"sample at t={s.t_ms} has no label")
        codes.append(s.label)
    if not codes:
        raise MissingLabel("empty sample run")
    counts = Counter(codes)
    top = max(counts.values())
    tied = [c for c, k in counts.items() if k == top]
    fall_tied = [
        c for c in tied
        if map_activity_to_class(c, extra) is BinaryClass.FALL
    ]
    return min(fall_tied) if fall_tied else min(tied)


@dataclass
class WindowStats:
    windows: int = 0
    partial_drops: int = 0
    gaps: int = 0


class WindowAssembler:
    """Per-device buffers; emits a Window every time one fills.

    Windows get a majority label when their samples are labeled; fully
    unlabeled windows (live mode) get None; a mix raises MissingLabel.
    """

    def __init__(self, config: WindowConfig,
                 extra_activities: dict[str, BinaryClass] | None = None):
        self.config = config
        self.extra_activities = extra_activities
        self.stats = WindowStats()
        self._buffers: dict[str, list[Sample]] = {}
        self._last_t: dict[str, int] = {}

    def push(self, sample: Sample) -> list[Window]:
        cfg = self.config
        buf = self._buffers.setdefault(sample.device_id, [])
        if cfg.gap_threshold_ms is not None:
            prev = self._last_t.get(sample.device_id)
            if prev is not None and sample.t_ms - prev > cfg.gap_threshold_ms:
                self.stats.gaps += 1
            self._last_t[sample.device_id] = sample.t_ms
        buf.append(sample)
        out = []
        if len(buf) == cfg.size:
            run = tuple(buf)
            code = None
            if any(s.label is not None for s in run):
                code = majority_label(run, self.extra_activities)
            out.append(Window(sample.device_id, run, code))
            self.stats.windows += 1
            del buf[: cfg.stride]
        return out

    def pending(self) -> int:
        """Samples sitting in partial buffers right now."""
        return sum(len(b) for b in self._buffers.values())

    def finish(self) -> int:
        """Drop and count all partial buffers; returns the drop count."""
        dropped = self.pending()
        self.stats.partial_drops += dropped
        self._buffers.clear()
        return dropped


def assemble_windows(stream, config: WindowConfig | None = None,
                     stats: WindowStats | None = None):
    """Generator over complete windows of a sample stream.

    The trailing partial group per device is dropped; pass a WindowStats
    to observe the drop count.
    """
    assembler = WindowAssembler(config or WindowConfig())
    for sample in stream:
        yield from assembler.push(sample)
    assembler.finish()
    if stats is not None:
        stats.windows += assembler.stats.windows
        stats.partial_drops += assembler.stats.partial_drops
        stats.gaps += assembler.stats.gaps
