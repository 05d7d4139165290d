"""Dataset and live-socket sample sources.

Trial files are delimiter-separated text whose layout differs per dataset,
so the column roles, delimiter, units, and label vocabulary extensions all
live in a ColumnMapping (usually loaded from a JSON file). Everything is
converted to one canonical unit regime: m/s^2, integer milliseconds.

The live wire protocol is newline-delimited UTF-8 text, one sample per
line: ``device_id,t_ms,ax,ay,az`` (no label). device_id must match
``[A-Za-z0-9_-]{1,64}``, t_ms is a base-10 integer, accelerations are
decimal floats.
"""

from __future__ import annotations

import json
import math
import re
import socket
import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from queue import Queue
from typing import Callable, Iterable, Iterator

from .errors import ConfigError, ParseError, UnknownActivity

STANDARD_GRAVITY_MS2 = 9.80665

WIRE_DEVICE_RE = re.compile(r"^[A-Za-z0-9_-]{1,64}$")


class BinaryClass(Enum):
    FALL = "FALL"
    ADL = "ADL"


# Activity vocabulary: 4 fall codes, 9 daily-living codes.
MOBIACT_ACTIVITIES: dict[str, BinaryClass] = {
    "FOL": BinaryClass.FALL,  # forward-lying
    "FKL": BinaryClass.FALL,  # front-knees-lying
    "SDL": BinaryClass.FALL,  # sideward-lying
    "BSC": BinaryClass.FALL,  # back-sitting-chair
    "STD": BinaryClass.ADL,   # standing
    "WAL": BinaryClass.ADL,   # walking
    "JOG": BinaryClass.ADL,   # jogging
    "JUM": BinaryClass.ADL,   # jumping
    "STU": BinaryClass.ADL,   # stairs up
    "STN": BinaryClass.ADL,   # stairs down
    "SCH": BinaryClass.ADL,   # sit chair
    "CSI": BinaryClass.ADL,   # car step in
    "CSO": BinaryClass.ADL,   # car step out
}


@dataclass(frozen=True, slots=True)
class Sample:
    """One tri-axial accelerometer reading in m/s^2."""

    device_id: str
    t_ms: int
    ax: float
    ay: float
    az: float
    label: str | None = None


def map_activity_to_class(
    code: str, extra: dict[str, BinaryClass] | None = None
) -> BinaryClass:
    """Binary class of an activity code; extra entries cover non-MobiAct codes."""
    token = code.strip().upper()
    cls = MOBIACT_ACTIVITIES.get(token)
    if cls is None and extra:
        cls = extra.get(token)
    if cls is None:
        raise UnknownActivity(f"unknown activity code {code!r}")
    return cls


def convert_adc_to_g(bits: int, range_g: float, resolution_bits: int) -> float:
    """Raw converter counts to g: bits * (2 * range_g / 2**resolution_bits)."""
    if not 8 <= resolution_bits <= 16:
        raise ConfigError(f"resolution_bits must be in [8, 16], got {resolution_bits}")
    return bits * (2.0 * range_g / (1 << resolution_bits))


_UNITS = ("m/s2", "g", "adc_bits")
_TIME_UNITS = {"ms": 1.0, "s": 1000.0, "us": 1e-3, "ns": 1e-6}


@dataclass
class ColumnMapping:
    """Layout of one dataset's trial files.

    Column roles are integer indices, or names when ``header`` is true.
    ``timestamp=None`` synthesizes timestamps from the sample index at
    ``synthetic_rate_hz`` (for datasets that store no clock at all);
    ``label=None`` yields unlabeled samples.
    """

    ax: int | str
    ay: int | str
    az: int | str
    timestamp: int | str | None = None
    label: int | str | None = None
    delimiter: str = ","
    header: bool = False
    unit: str = "m/s2"
    time_unit: str = "ms"
    synthetic_rate_hz: float | None = None
    adc_range_g: float = 16.0
    adc_resolution_bits: int = 13
    extra_activities: dict[str, BinaryClass] = field(default_factory=dict)

    def __post_init__(self):
        roles = [
            c for c in (self.timestamp, self.ax, self.ay, self.az, self.label)
            if c is not None
        ]
        if len(set(roles)) != len(roles):
            raise ConfigError("column roles must map to distinct columns")
        if self.unit not in _UNITS:
            raise ConfigError(f"unit must be one of {_UNITS}, got {self.unit!r}")
        if self.time_unit not in _TIME_UNITS:
            raise ConfigError(f"time_unit must be one of {sorted(_TIME_UNITS)}")
        if self.timestamp is None:
            if not self.synthetic_rate_hz or self.synthetic_rate_hz <= 0:
                raise ConfigError(
                    "timestamp=None requires a positive synthetic_rate_hz"
                )
        if any(isinstance(c, str) for c in roles) and not self.header:
            raise ConfigError("name-based columns require header=true")
        if self.unit == "adc_bits" and not 8 <= self.adc_resolution_bits <= 16:
            raise ConfigError("adc_resolution_bits must be in [8, 16]")

    @classmethod
    def from_dict(cls, d: dict) -> "ColumnMapping":
        extra = {
            code.upper(): BinaryClass(value)
            for code, value in d.get("extra_activities", {}).items()
        }
        known = {
            k: d[k]
            for k in (
                "ax", "ay", "az", "timestamp", "label", "delimiter", "header",
                "unit", "time_unit", "synthetic_rate_hz", "adc_range_g",
                "adc_resolution_bits",
            )
            if k in d
        }
        return cls(extra_activities=extra, **known)


def load_mapping(path: str | Path) -> ColumnMapping:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            d = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"cannot read mapping file {path}: {exc}") from exc
    if not isinstance(d, dict):
        raise ParseError(f"mapping file {path} must hold a JSON object")
    try:
        return ColumnMapping.from_dict(d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad mapping file {path}: {exc}") from exc


@dataclass
class ParseReport:
    rows: int = 0
    malformed: int = 0
    timestamp_regressions: int = 0


def _resolve_columns(mapping: ColumnMapping, header_fields: list[str] | None):
    def resolve(col):
        if col is None or isinstance(col, int):
            return col
        if header_fields is None:
            raise ParseError(f"column {col!r} is a name but the file has no header")
        try:
            return header_fields.index(col)
        except ValueError:
            raise ParseError(f"column {col!r} not found in header") from None
    return tuple(
        resolve(c)
        for c in (mapping.timestamp, mapping.ax, mapping.ay, mapping.az, mapping.label)
    )


def parse_trial_file(
    data: bytes, mapping: ColumnMapping, device_id: str = "trial"
) -> tuple[list[Sample], ParseReport]:
    """Parse one trial file into samples; malformed rows are skipped and counted.

    Raises ParseError when the input is unreadable or more than half of the
    data rows are malformed (which signals a wrong mapping).
    """
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ParseError(f"trial file is not UTF-8 text: {exc}") from exc

    lines = text.splitlines()
    header_fields = None
    if mapping.header:
        if not lines:
            return [], ParseReport()
        header_fields = [f.strip() for f in lines[0].split(mapping.delimiter)]
        lines = lines[1:]

    t_col, x_col, y_col, z_col, label_col = _resolve_columns(mapping, header_fields)
    time_factor = _TIME_UNITS[mapping.time_unit]
    if mapping.unit == "m/s2":
        accel_factor = 1.0
    elif mapping.unit == "g":
        accel_factor = STANDARD_GRAVITY_MS2
    else:  # adc_bits: counts -> g -> m/s^2
        accel_factor = (
            convert_adc_to_g(1, mapping.adc_range_g, mapping.adc_resolution_bits)
            * STANDARD_GRAVITY_MS2
        )

    report = ParseReport()
    samples: list[Sample] = []
    prev_t: int | None = None
    for line in lines:
        if not line.strip():
            continue
        report.rows += 1
        fields = [f.strip() for f in line.split(mapping.delimiter)]
        try:
            if mapping.unit == "adc_bits":
                ax = float(int(fields[x_col])) * accel_factor
                ay = float(int(fields[y_col])) * accel_factor
                az = float(int(fields[z_col])) * accel_factor
            else:
                ax = float(fields[x_col]) * accel_factor
                ay = float(fields[y_col]) * accel_factor
                az = float(fields[z_col]) * accel_factor
            if not (math.isfinite(ax) and math.isfinite(ay) and math.isfinite(az)):
                raise ValueError("non-finite acceleration")
            if t_col is None:
                t_ms = round(len(samples) * 1000.0 / mapping.synthetic_rate_hz)
            else:
                t_ms = round(float(fields[t_col]) * time_factor)
            label = None
            if label_col is not None:
                label = fields[label_col].upper()
                if not label:
                    raise ValueError("empty label field")
        except (ValueError, IndexError, OverflowError):
            report.malformed += 1
            continue
        if prev_t is not None and t_ms < prev_t:
            report.timestamp_regressions += 1
        prev_t = t_ms
        samples.append(Sample(device_id, t_ms, ax, ay, az, label))

    if report.rows and report.malformed * 2 > report.rows:
        raise ParseError(
            f"{report.malformed}/{report.rows} rows malformed; mapping is likely wrong"
        )
    return samples, report


def parse_trial_path(
    path: str | Path, mapping: ColumnMapping, device_id: str | None = None
) -> tuple[list[Sample], ParseReport]:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise ParseError(f"cannot read trial file {path}: {exc}") from exc
    return parse_trial_file(data, mapping, device_id or path.stem)


def replay_source(
    samples: Iterable[Sample],
    rate_hz: float = 20.0,
    speed_factor: float = 1.0,
) -> Iterator[Sample]:
    """Yield samples in order, paced at rate_hz * speed_factor.

    speed_factor=math.inf disables pacing entirely. Pacing never changes
    which samples come out, only when.
    """
    if rate_hz <= 0:
        raise ConfigError(f"rate_hz must be positive, got {rate_hz}")
    if not (speed_factor > 0):
        raise ConfigError(f"speed_factor must be positive or inf, got {speed_factor}")
    if math.isinf(speed_factor):
        yield from samples
        return
    interval = 1.0 / (rate_hz * speed_factor)
    start = time.monotonic()
    for i, sample in enumerate(samples):
        deadline = start + i * interval
        delay = deadline - time.monotonic()
        if delay > 0:
            time.sleep(delay)
        yield sample


def parse_wire_line(line: str) -> Sample | None:
    """One protocol line to a Sample, or None when malformed."""
    fields = line.rstrip("\r").split(",")
    if len(fields) != 5:
        return None
    device_id, t_raw, x_raw, y_raw, z_raw = fields
    if not WIRE_DEVICE_RE.match(device_id):
        return None
    try:
        t_ms = int(t_raw)
        ax, ay, az = float(x_raw), float(y_raw), float(z_raw)
    except ValueError:
        return None
    if not (math.isfinite(ax) and math.isfinite(ay) and math.isfinite(az)):
        return None
    return Sample(device_id, t_ms, ax, ay, az)


class _NullStats:
    samples_in = 0
    malformed = 0
    timestamp_regressions = 0


class SocketSource:
    """TCP listener turning protocol lines into a single sample stream.

    Each connection is read by its own thread, so lines are never reordered
    within a connection. Parsed samples flow to ``emit(list_of_samples)``
    (the pipeline's queue) or, without an emit callback, to an internal
    queue consumed by iterating the source. ``stats`` may be any object
    with integer samples_in / malformed / timestamp_regressions attributes.
    """

    def __init__(self, host: str, port: int, emit: Callable | None = None,
                 stats=None):
        self.host = host
        self.port = port
        self._emit = emit
        self.stats = stats if stats is not None else _NullStats()
        self._iter_queue: Queue | None = Queue() if emit is None else None
        self._listener: socket.socket | None = None
        self._threads: list[threading.Thread] = []
        self._conns: list[socket.socket] = []
        self._lock = threading.Lock()
        # counter and last-timestamp updates come from one thread per
        # connection; serialize them so no increment is lost
        self._stats_lock = threading.Lock()
        self._stopping = threading.Event()
        self._last_t: dict[str, int] = {}

    def start(self) -> None:
        """Bind and start accepting; bind failures propagate (fatal)."""
        listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        listener.bind((self.host, self.port))
        listener.listen()
        self.port = listener.getsockname()[1]
        self._listener = listener
        t = threading.Thread(target=self._accept_loop, daemon=True)
        t.start()
        self._threads.append(t)

    def _accept_loop(self) -> None:
        while not self._stopping.is_set():
            try:
                conn, _addr = self._listener.accept()
            except OSError:
                break
            with self._lock:
                if self._stopping.is_set():
                    conn.close()
                    break
                self._conns.append(conn)
                t = threading.Thread(
                    target=self._read_conn, args=(conn,), daemon=True
                )
                t.start()
                self._threads.append(t)

    def _deliver(self, sample: Sample) -> None:
        prev = self._last_t.get(sample.device_id)
        if prev is not None and sample.t_ms < prev:
            self.stats.timestamp_regressions += 1
        self._last_t[sample.device_id] = sample.t_ms
        if self._emit is not None:
            self._emit([sample])
        else:
            self._iter_queue.put(sample)

    def _read_conn(self, conn: socket.socket) -> None:
        buf = b""
        try:
            while not self._stopping.is_set():
                chunk = conn.recv(4096)
                if not chunk:
                    break
                buf += chunk
                while b"\n" in buf:
                    raw, buf = buf.split(b"\n", 1)
                    self._handle_line(raw)
        except OSError:
            pass
        finally:
            # an unterminated tail at disconnect is an incomplete record
            if buf.strip():
                self.stats.samples_in += 1
                self.stats.malformed += 1
            conn.close()

    def _handle_line(self, raw: bytes) -> None:
        self.stats.samples_in += 1
        try:
            line = raw.decode("utf-8")
        except UnicodeDecodeError:
            self.stats.malformed += 1
            return
        sample = parse_wire_line(line)
        if sample is None:
            self.stats.malformed += 1
            return
        self._deliver(sample)

    def stop(self) -> None:
        self._stopping.set()
        if self._listener is not None:
            self._listener.close()
        with self._lock:
            for conn in self._conns:
                try:
                    conn.shutdown(socket.SHUT_RDWR)
                except OSError:
                    pass
                conn.close()
        for t in self._threads:
            t.join(timeout=5.0)
        if self._iter_queue is not None:
            self._iter_queue.put(None)

    def __iter__(self) -> Iterator[Sample]:
        if self._iter_queue is None:
            raise RuntimeError("source was started with an emit callback")
        while True:
            item = self._iter_queue.get()
            if item is None:
                return
            yield item
