"""Hourly outdoor-temperature forecasts and measurements for the building case.

File format: header ``timestamp,forecast_c,measured_c`` followed by hourly
rows with ISO-8601 timestamps. Prediction errors ``measured - forecast``
become disturbance scenarios through stride-1 windows of length ``H``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np

from ..scenarios import ScenarioSet, sliding_windows

__all__ = [
    "WEATHER_HEADER",
    "WeatherRecord",
    "SyntheticClimate",
    "read_weather",
    "write_weather",
    "ingest_weather",
    "synthetic_weather",
]

WEATHER_HEADER = ("timestamp", "forecast_c", "measured_c")
_HOUR = timedelta(hours=1)


@dataclass
class WeatherRecord:
    """Aligned hourly series."""

    timestamps: list
    forecast: np.ndarray
    measured: np.ndarray

    def __post_init__(self):
        self.forecast = np.asarray(self.forecast, dtype=float).ravel()
        self.measured = np.asarray(self.measured, dtype=float).ravel()
        if not (len(self.timestamps) == self.forecast.size == self.measured.size):
            raise ValueError("timestamps, forecast and measured must have equal length")

    def __len__(self) -> int:
        return self.forecast.size

    @property
    def errors(self) -> np.ndarray:
        return self.measured - self.forecast

    def slice(self, start: int, stop: int) -> "WeatherRecord":
        return WeatherRecord(self.timestamps[start:stop], self.forecast[start:stop],
                             self.measured[start:stop])

    def summary(self) -> dict:
        e = self.errors
        return {"hours": len(self), "error_mean": float(e.mean()), "error_std": float(e.std()),
                "error_min": float(e.min()), "error_max": float(e.max())}


def _gaps(stamps) -> list[tuple[str, str]]:
    out = []
    for a, b in zip(stamps[:-1], stamps[1:]):
        if b - a != _HOUR:
            out.append((a.isoformat(), b.isoformat()))
    return out


def read_weather(path) -> WeatherRecord:
    """Parse a weather CSV; any break in the hourly grid is an error listing every gap."""
    stamps, fc, ms = [], [], []
    with open(Path(path), newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd, None)
        if header is None or tuple(h.strip() for h in header) != WEATHER_HEADER:
            raise ValueError(f"{path}: header must be {','.join(WEATHER_HEADER)}")
        for lineno, rec in enumerate(rd, start=2):
            if not rec:
                continue
            if len(rec) != 3:
                raise ValueError(f"{path}: row {lineno} has {len(rec)} fields, expected 3")
            try:
                stamps.append(datetime.fromisoformat(rec[0].strip()))
                fc.append(float(rec[1]))
                ms.append(float(rec[2]))
            except ValueError as exc:
                raise ValueError(f"{path}: row {lineno}: {exc}") from None
    if not stamps:
        raise ValueError(f"{path}: no data rows")
    gaps = _gaps(stamps)
    if gaps:
        listing = "; ".join(f"{a} -> {b}" for a, b in gaps)
        raise ValueError(f"{path}: {len(gaps)} gap(s) in the hourly series: {listing}")
    return WeatherRecord(stamps, fc, ms)


def write_weather(rec: WeatherRecord, path) -> None:
    with open(Path(path), "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(WEATHER_HEADER)
        for t, f, m in zip(rec.timestamps, rec.forecast, rec.measured):
            wr.writerow([t.isoformat(), repr(float(f)), repr(float(m))])


def ingest_weather(source, H: int) -> ScenarioSet:
    """Windowed prediction errors from a weather file or :class:`WeatherRecord`."""
    rec = source if isinstance(source, WeatherRecord) else read_weather(source)
    return ScenarioSet(sliding_windows(rec.errors, H), H, 1)


@dataclass(frozen=True)
class SyntheticClimate:
    """Generator parameters for a synthetic hourly temperature record.

    The measured temperature is a daily sinusoid peaking at ``peak_hour`` plus
    a slowly varying AR(1) day-to-day anomaly. Forecast errors are an hourly
    AR(1) process, optionally skewed through ``error_skew``.
    """

    mean_c: float = 21.0
    daily_amplitude_c: float = 4.0
    peak_hour: int = 15
    anomaly_std_c: float = 1.0
    anomaly_rho: float = 0.99
    error_std_c: float = 0.8
    error_rho: float = 0.8
    error_skew: float = 0.0


def synthetic_weather(hours: int, climate: SyntheticClimate | None = None, seed: int = 0,
                      start: datetime | None = None) -> WeatherRecord:
    """Deterministic synthetic record of ``hours`` consecutive hours."""
    if hours < 1:
        raise ValueError("hours must be >= 1")
    c = climate or SyntheticClimate()
    rng = np.random.default_rng(seed)
    start = start or datetime(2017, 1, 1)
    h = np.arange(hours)
    hod = (start.hour + h) % 24
    base = c.mean_c + c.daily_amplitude_c * np.cos(2 * np.pi * (hod - c.peak_hour) / 24)
    anomaly = np.empty(hours)
    anomaly[0] = c.anomaly_std_c * rng.standard_normal()
    s_a = c.anomaly_std_c * np.sqrt(1 - c.anomaly_rho ** 2)
    e = np.empty(hours)
    e[0] = rng.standard_normal()
    s_e = np.sqrt(1 - c.error_rho ** 2)
    for t in range(1, hours):
        anomaly[t] = c.anomaly_rho * anomaly[t - 1] + s_a * rng.standard_normal()
        e[t] = c.error_rho * e[t - 1] + s_e * rng.standard_normal()
    # standardized skew: e + k (e^2 - 1), rescaled to unit variance
    k = c.error_skew
    err = (e + k * (e ** 2 - 1.0)) / np.sqrt(1.0 + 2.0 * k ** 2)
    measured = base + anomaly
    forecast = measured - c.error_std_c * err
    stamps = [start + t * _HOUR for t in range(hours)]
    return WeatherRecord(stamps, forecast, measured)
