"""Synthetic accelerometer trials and separable feature clusters.

Used by the test suite and the experiment scripts: real datasets need a
license click-through, so end-to-end runs, throughput checks, and the
stream/batch equivalence tests all work on generated trials instead.
Fall trials open with 200 standing samples (one clean ADL window) and
then a labeled fall: a free-fall dip, an impact spike, and a lying phase
with gravity rotated off the y axis.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .ingest import STANDARD_GRAVITY_MS2 as G
from .ingest import ColumnMapping, Sample

SYNTH_MAPPING = ColumnMapping(
    timestamp=0, ax=1, ay=2, az=3, label=4, delimiter=",", header=False,
    unit="m/s2", time_unit="ms",
)

FALL_CODES = ("FOL", "FKL", "SDL", "BSC")
ADL_CODES = ("WAL", "JOG", "STD")


def separable_clusters(
    n: int, dim: int = 58, seed: int = 0, margin: float = 8.0
) -> tuple[np.ndarray, np.ndarray]:
    """Two unit-variance Gaussian clusters split by ``margin`` along a
    random direction; labels are 1.0 / 0.0."""
    rng = np.random.default_rng(seed)
    direction = rng.normal(size=dim)
    direction /= np.linalg.norm(direction)
    y = (np.arange(n) % 2).astype(np.float64)
    X = rng.normal(size=(n, dim))
    X += np.outer(np.where(y == 1.0, margin / 2, -margin / 2), direction)
    return X, y


def _walk_segment(rng, n, rate_hz, code):
    t = np.arange(n) / rate_hz
    freq = rng.uniform(1.5, 2.5)
    amp = rng.uniform(1.0, 3.0)
    ax = amp * np.sin(2 * np.pi * freq * t) + rng.normal(0, 0.3, n)
    ay = G + amp * 0.5 * np.sin(2 * np.pi * 2 * freq * t) + rng.normal(0, 0.3, n)
    az = amp * 0.7 * np.cos(2 * np.pi * freq * t) + rng.normal(0, 0.3, n)
    return ax, ay, az, [code] * n


def _still_segment(rng, n, code, gravity_axis="y"):
    ax = rng.normal(0, 0.15, n)
    ay = rng.normal(0, 0.15, n)
    az = rng.normal(0, 0.15, n)
    if gravity_axis == "y":
        ay += G
    elif gravity_axis == "x":
        ax += G
    else:
        az += G
    return ax, ay, az, [code] * n


def _fall_segment(rng, n, rate_hz, code):
    """Free-fall dip, impact spike, then lying with gravity off-axis."""
    n_dip = max(3, int(0.3 * rate_hz))
    n_spike = max(2, int(0.15 * rate_hz))
    n_lying = n - n_dip - n_spike
    ax = np.concatenate([
        rng.normal(0, 0.4, n_dip),
        rng.uniform(25.0, 55.0, n_spike) * rng.choice([-1, 1], n_spike),
        G + rng.normal(0, 0.2, n_lying),
    ])
    ay = np.concatenate([
        rng.normal(0, 0.4, n_dip),  # near weightless
        rng.uniform(20.0, 45.0, n_spike),
        rng.normal(0, 0.2, n_lying),
    ])
    az = np.concatenate([
        rng.normal(0, 0.4, n_dip),
        rng.uniform(15.0, 40.0, n_spike) * rng.choice([-1, 1], n_spike),
        rng.normal(0, 0.2, n_lying),
    ])
    return ax, ay, az, [code] * n


def make_trial(
    kind: str,
    n_samples: int = 450,
    seed: int = 0,
    rate_hz: float = 20.0,
    device_id: str = "synth",
) -> list[Sample]:
    """A labeled trial of ``kind`` 'fall' or 'adl'."""
    rng = np.random.default_rng(seed)
    if kind == "fall":
        code = FALL_CODES[int(rng.integers(len(FALL_CODES)))]
        n_pre = min(200, n_samples // 2)
        pre = _still_segment(rng, n_pre, "STD")
        fall = _fall_segment(rng, n_samples - n_pre, rate_hz, code)
        parts = (pre, fall)
    elif kind == "adl":
        code = ADL_CODES[int(rng.integers(len(ADL_CODES)))]
        if code == "STD":
            parts = (_still_segment(rng, n_samples, code),)
        else:
            parts = (_walk_segment(rng, n_samples, rate_hz, code),)
    else:
        raise ValueError(f"kind must be 'fall' or 'adl', got {kind!r}")

    samples = []
    i = 0
    for ax, ay, az, labels in parts:
        for x, y, z, label in zip(ax, ay, az, labels):
            t_ms = round(i * 1000.0 / rate_hz)
            samples.append(Sample(device_id, t_ms, float(x), float(y),
                                  float(z), label))
            i += 1
    return samples


def write_trial_csv(samples: list[Sample], path: str | Path) -> None:
    """Write a trial in the SYNTH_MAPPING layout: t_ms,ax,ay,az,label."""
    with open(path, "w", encoding="utf-8") as fh:
        for s in samples:
            fh.write(f"{s.t_ms},{s.ax!r},{s.ay!r},{s.az!r},{s.label}\n")


def make_dataset(
    directory: str | Path,
    n_trials: int = 12,
    seed: int = 0,
    rate_hz: float = 20.0,
) -> list[Path]:
    """Write alternating fall/ADL trial files; returns the file paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    paths = []
    for i in range(n_trials):
        kind = "fall" if i % 2 == 0 else "adl"
        n_samples = int(rng.integers(420, 1050))
        samples = make_trial(kind, n_samples, seed=seed * 1000 + i,
                             rate_hz=rate_hz, device_id=f"trial_{i:03d}")
        path = directory / f"{kind}_{i:03d}.csv"
        write_trial_csv(samples, path)
        paths.append(path)
    return paths
