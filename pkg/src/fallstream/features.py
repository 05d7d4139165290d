"""The 58-value statistical window summary, min-max scaling, and the
C2/C3/C8/C9/C13 sliding-buffer characteristics.

Schema v1 layout (58 names, order fixed):
  21  mean/median/SD/skew/kurtosis/min/max per raw axis x, y, z
  21  the same seven statistics per absolute axis |x|, |y|, |z|
   2  slope over raw axes and over absolute axes
   4  mean/SD/skew/kurtosis of the per-sample tilt angle asin(y/|a|)
   6  mean/SD/min/max/range/zero-crossing-rate of the magnitude |a|
   3  average absolute difference per axis
   1  average resultant acceleration (identical to the magnitude mean)

Conventions, fixed by the schema version: SD uses the n-1 denominator;
skew and kurtosis use bias-uncorrected population moments, kurtosis is
excess; degenerate inputs (zero variance, zero magnitude, zero range) all
yield 0 so every output is finite on any finite input.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, replace

import numpy as np

from .errors import InsufficientData, NotReady, SchemaMismatch
from .ingest import BinaryClass, map_activity_to_class
from .windowing import Window

_SEVEN = ("mean", "median", "sd", "skew", "kurt", "min", "max")


@dataclass(frozen=True)
class FeatureSchema:
    version: str
    names: tuple[str, ...]
    groups: tuple[tuple[str, int], ...]

    def __post_init__(self):
        if len(self.names) != sum(n for _, n in self.groups):
            raise SchemaMismatch("group sizes do not add up to the name count")
        if len(set(self.names)) != len(self.names):
            raise SchemaMismatch("feature names must be unique")


def _build_schema_v1() -> FeatureSchema:
    names: list[str] = []
    for axis in ("x", "y", "z"):
        names += [f"{axis}_{s}" for s in _SEVEN]
    for axis in ("x", "y", "z"):
        names += [f"abs_{axis}_{s}" for s in _SEVEN]
    names += ["slope_raw", "slope_abs"]
    names += [f"tilt_{s}" for s in ("mean", "sd", "skew", "kurt")]
    names += [f"mag_{s}" for s in ("mean", "sd", "min", "max", "range", "zcr")]
    names += ["aad_x", "aad_y", "aad_z"]
    names += ["avg_resultant_acc"]
    groups = (
        ("axis_stats", 21),
        ("abs_axis_stats", 21),
        ("slope", 2),
        ("tilt", 4),
        ("magnitude", 6),
        ("avg_abs_diff", 3),
        ("avg_resultant", 1),
    )
    return FeatureSchema(version="1", names=tuple(names), groups=groups)


SCHEMA_V1 = _build_schema_v1()
assert len(SCHEMA_V1.names) == 58


@dataclass(frozen=True)
class FeatureVector:
    schema_version: str
    values: np.ndarray  # shape (58,), float64, all finite
    device_id: str = ""
    t_start_ms: int = 0
    t_end_ms: int = 0
    label_code: str | None = None
    label_class: BinaryClass | None = None


@dataclass(frozen=True)
class AxisStats:
    mean: float
    median: float
    sd: float
    skew: float
    kurt: float
    min: float
    max: float

    def as_tuple(self):
        return (self.mean, self.median, self.sd, self.skew, self.kurt,
                self.min, self.max)


def axis_stats(values: np.ndarray) -> AxisStats:
    """Seven summary statistics of one value series, n >= 2.

    Hand-rolled rather than scipy so the conventions stay pinned. An
    exactly-constant series short-circuits: in exact arithmetic its
    central moments are zero, but a rounded mean would leak tiny spread
    values, so constancy is detected by min == max rather than m2 == 0.
    The standardized-moment form of skew/kurtosis also keeps tiny-variance
    windows away from 0/0.
    """
    v = np.asarray(values, dtype=np.float64)
    n = v.size
    if n < 2:
        raise InsufficientData(f"need at least 2 values, got {n}")
    srt = np.sort(v)
    lo, hi = float(srt[0]), float(srt[-1])
    if lo == hi:
        return AxisStats(mean=lo, median=lo, sd=0.0, skew=0.0, kurt=0.0,
                         min=lo, max=hi)
    mean = float(v.mean())
    dev = v - mean
    sq = float(dev @ dev)
    m2 = sq / n
    if m2 == 0.0:
        skew = kurt = 0.0
    else:
        z = dev / math.sqrt(m2)
        z2 = z * z
        skew = float((z2 * z).mean())
        kurt = float((z2 * z2).mean()) - 3.0
    mid = n // 2
    median = float(srt[mid]) if n % 2 else float((srt[mid - 1] + srt[mid]) / 2.0)
    return AxisStats(
        mean=mean,
        median=median,
        sd=math.sqrt(sq / (n - 1)),
        skew=skew,
        kurt=kurt,
        min=lo,
        max=hi,
    )


def slope(window: Window, use_abs: bool = False) -> float:
    """Euclidean norm of the per-axis ranges of the window."""
    xs, ys, zs = window_axes(window)
    if use_abs:
        xs, ys, zs = np.abs(xs), np.abs(ys), np.abs(zs)
    return math.sqrt(
        float(np.ptp(xs)) ** 2 + float(np.ptp(ys)) ** 2 + float(np.ptp(zs)) ** 2
    )


def tilt_angle(ax: float, ay: float, az: float) -> float:
    """Angle between gravity axis and y: asin(y/|a|); 0 for a zero vector."""
    mag = math.sqrt(ax * ax + ay * ay + az * az)
    if mag == 0.0:
        return 0.0
    return math.asin(max(-1.0, min(1.0, ay / mag)))


def magnitude(ax: float, ay: float, az: float) -> float:
    return math.sqrt(ax * ax + ay * ay + az * az)


def zero_crossing_rate(values: np.ndarray) -> float:
    """Strict sign changes of the de-meaned series over n-1 pairs.

    Exact zeros of the de-meaned series carry the previous nonzero sign,
    so the count equals the alternations of the nonzero-sign subsequence.
    """
    v = np.asarray(values, dtype=np.float64)
    if v.size < 2:
        raise InsufficientData(f"need at least 2 values, got {v.size}")
    signs = np.sign(v - np.mean(v))
    signs = signs[signs != 0]
    if signs.size < 2:
        return 0.0
    changes = int(np.count_nonzero(signs[1:] != signs[:-1]))
    return changes / (v.size - 1)


def average_absolute_difference(values: np.ndarray) -> float:
    v = np.asarray(values, dtype=np.float64)
    if v.size < 1:
        raise InsufficientData("need at least 1 value")
    if float(np.min(v)) == float(np.max(v)):
        return 0.0
    return float(np.mean(np.abs(v - np.mean(v))))


def average_resultant_acceleration(window: Window) -> float:
    xs, ys, zs = window_axes(window)
    return float(np.mean(np.sqrt(xs**2 + ys**2 + zs**2)))


def window_axes(window: Window) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    n = window.n
    xs = np.fromiter((s.ax for s in window.samples), dtype=np.float64, count=n)
    ys = np.fromiter((s.ay for s in window.samples), dtype=np.float64, count=n)
    zs = np.fromiter((s.az for s in window.samples), dtype=np.float64, count=n)
    return xs, ys, zs


def extract_features(
    window: Window,
    schema: FeatureSchema = SCHEMA_V1,
    extra_activities: dict[str, BinaryClass] | None = None,
) -> FeatureVector:
    """The full 58-value vector of one window, in schema order."""
    if schema.version != SCHEMA_V1.version:
        raise SchemaMismatch(f"unsupported schema version {schema.version!r}")
    xs, ys, zs = window_axes(window)

    out: list[float] = []
    raw_stats = [axis_stats(axis) for axis in (xs, ys, zs)]
    abs_stats = [axis_stats(np.abs(axis)) for axis in (xs, ys, zs)]
    for st in raw_stats:
        out.extend(st.as_tuple())
    for st in abs_stats:
        out.extend(st.as_tuple())

    def ranges_norm(stats):
        return math.sqrt(sum((st.max - st.min) ** 2 for st in stats))

    out.append(ranges_norm(raw_stats))
    out.append(ranges_norm(abs_stats))

    mag = np.sqrt(xs**2 + ys**2 + zs**2)
    with np.errstate(invalid="ignore"):
        ratio = np.where(mag > 0.0, ys / np.where(mag > 0.0, mag, 1.0), 0.0)
    tilt = np.arcsin(np.clip(ratio, -1.0, 1.0))
    t_stats = axis_stats(tilt)
    out.extend([t_stats.mean, t_stats.sd, t_stats.skew, t_stats.kurt])

    m_stats = axis_stats(mag)
    out.extend([
        m_stats.mean, m_stats.sd, m_stats.min, m_stats.max,
        m_stats.max - m_stats.min, zero_crossing_rate(mag),
    ])

    out.append(average_absolute_difference(xs))
    out.append(average_absolute_difference(ys))
    out.append(average_absolute_difference(zs))
    # identical to the magnitude mean by definition; write the same float
    out.append(m_stats.mean)

    values = np.asarray(out, dtype=np.float64)
    label_class = None
    if window.majority_code is not None:
        label_class = map_activity_to_class(window.majority_code, extra_activities)
    return FeatureVector(
        schema_version=schema.version,
        values=values,
        device_id=window.device_id,
        t_start_ms=window.t_start,
        t_end_ms=window.t_end,
        label_code=window.majority_code,
        label_class=label_class,
    )


@dataclass(frozen=True)
class Scaler:
    """Per-feature min and max learned from a fit set."""

    schema_version: str
    minimum: np.ndarray
    maximum: np.ndarray


def fit_scaler(matrix: np.ndarray, schema_version: str = SCHEMA_V1.version) -> Scaler:
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] < 1:
        raise InsufficientData("scaler fit needs a non-empty 2-D feature matrix")
    return Scaler(
        schema_version=schema_version,
        minimum=np.min(m, axis=0),
        maximum=np.max(m, axis=0),
    )


def scale_values(values: np.ndarray, scaler: Scaler) -> np.ndarray:
    """(v - min) / (max - min) per feature; constant features map to 0.

    Values outside the fit range are not clamped.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.shape[-1] != scaler.minimum.shape[0]:
        raise SchemaMismatch(
            f"vector length {values.shape[-1]} != scaler length "
            f"{scaler.minimum.shape[0]}"
        )
    span = scaler.maximum - scaler.minimum
    safe = np.where(span == 0.0, 1.0, span)
    scaled = (values - scaler.minimum) / safe
    return np.where(span == 0.0, 0.0, scaled)


def apply_scaler(fv: FeatureVector, scaler: Scaler) -> FeatureVector:
    if fv.schema_version != scaler.schema_version:
        raise SchemaMismatch(
            f"vector schema {fv.schema_version!r} != scaler schema "
            f"{scaler.schema_version!r}"
        )
    return replace(fv, values=scale_values(fv.values, scaler))


@dataclass(frozen=True)
class SisFallFeatures:
    c2: float
    c3: float
    c8: float
    c9: float
    c13: float


class SlidingBuffer:
    """The most recent ``capacity`` tri-axial samples at period dt seconds."""

    def __init__(self, capacity: int = 256, dt_s: float = 1.0 / 200.0):
        if capacity < 2:
            raise InsufficientData("sliding buffer needs capacity >= 2")
        self.capacity = capacity
        self.dt_s = dt_s
        self._rows: deque[tuple[float, float, float]] = deque(maxlen=capacity)

    def push(self, ax: float, ay: float, az: float) -> None:
        self._rows.append((ax, ay, az))

    @property
    def full(self) -> bool:
        return len(self._rows) == self.capacity

    def axes(self) -> np.ndarray:
        return np.asarray(self._rows, dtype=np.float64)


def sisfall_characteristics(buf: SlidingBuffer) -> SisFallFeatures:
    """C2, C3, C8, C9, C13 over one full buffer.

    C3 is the RMS across the three per-axis ranges; C13 discretizes its
    integral as a left Riemann sum times dt.
    """
    if not buf.full:
        raise NotReady(
            f"buffer holds {len(buf._rows)} of {buf.capacity} samples"
        )
    a = buf.axes()
    xs, ys, zs = a[:, 0], a[:, 1], a[:, 2]
    c2 = math.sqrt(xs[-1] ** 2 + zs[-1] ** 2)
    ranges = np.array([np.ptp(xs), np.ptp(ys), np.ptp(zs)])
    c3 = math.sqrt(float(np.mean(ranges**2)))

    def sd(axis, rng):
        # constant axes are exactly zero-spread (see axis_stats)
        return 0.0 if rng == 0.0 else float(np.std(axis, ddof=1))

    sx, sy, sz = (sd(v, r) for v, r in zip((xs, ys, zs), ranges))
    c8 = math.sqrt(sx * sx + sz * sz)
    c9 = math.sqrt(sx * sx + sy * sy + sz * sz)
    c13 = float(np.sum(np.sqrt(xs**2 + zs**2))) * buf.dt_s
    return SisFallFeatures(c2=c2, c3=c3, c8=c8, c9=c9, c13=c13)
