"""Synthetic prosumer profiles, CSV I/O, community aggregation and train/test splits."""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.signal import lfilter

from .model import INTERVALS_PER_DAY, RESOLUTION, InvalidInputError, TecError, TimeSeries

DEFAULT_YEAR = 2018
CSV_HEADER = ("timestamp", "kw")
MONTHS = {"january": 1, "february": 2, "march": 3, "april": 4, "may": 5, "june": 6, "july": 7,
          "august": 8, "september": 9, "october": 10, "november": 11, "december": 12}


class AlignmentError(TecError, ValueError):
    pass


class CsvFormatError(TecError, ValueError):
    pass


class SpanError(TecError, ValueError):
    pass


@dataclass(frozen=True)
class BuildingProfileParams:
    """Knobs of one synthetic prosumer.

    ``seasonal_amp`` (fraction of base load, peaking mid-summer) and
    ``noise_corr`` (lag-one correlation of the noise) default to zero, which
    gives the plain base + daily peak + white noise profile.
    """

    base_load: float
    daily_peak_amp: float
    peak_hour: float
    noise_sigma: float
    pv_capacity: float
    cloudiness: float
    seed: int = 0
    seasonal_amp: float = 0.0
    noise_corr: float = 0.0
    latitude: float = 32.7

    def __post_init__(self):
        for name in ("base_load", "daily_peak_amp", "noise_sigma", "pv_capacity"):
            if getattr(self, name) < 0:
                raise InvalidInputError(f"{name} must be >= 0")
        if not 0.0 <= self.peak_hour < 24.0:
            raise InvalidInputError("peak_hour must lie in [0, 24)")
        if not 0.0 <= self.cloudiness <= 1.0:
            raise InvalidInputError("cloudiness must lie in [0, 1]")
        if not 0.0 <= self.noise_corr < 1.0:
            raise InvalidInputError("noise_corr must lie in [0, 1)")


def _timestamps(start, n: int) -> np.ndarray:
    return np.datetime64(start, "m") + np.arange(n) * RESOLUTION


def solar_elevation_sine(timestamps: np.ndarray, latitude: float) -> np.ndarray:
    """Sine of the solar elevation angle (clock time taken as solar time)."""
    ts = np.asarray(timestamps, dtype="datetime64[m]")
    year_start = ts.astype("datetime64[Y]").astype("datetime64[m]")
    minutes = (ts - year_start).astype(np.int64)
    doy = minutes // (24 * 60) + 1
    hour = (minutes % (24 * 60)) / 60.0
    decl = np.deg2rad(23.45) * np.sin(2.0 * np.pi * (284 + doy) / 365.0)
    omega = np.deg2rad(15.0 * (hour - 12.0))
    phi = np.deg2rad(latitude)
    return np.sin(phi) * np.sin(decl) + np.cos(phi) * np.cos(decl) * np.cos(omega)


def gen_building(params: BuildingProfileParams, days: int,
                 start=f"{DEFAULT_YEAR}-01-01") -> tuple[TimeSeries, TimeSeries]:
    """Demand and PV generation of one building, ``96 * days`` points each, deterministic per seed."""
    if days < 1:
        raise InvalidInputError("days must be >= 1")
    n = INTERVALS_PER_DAY * days
    ts = _timestamps(start, n)
    rng = np.random.default_rng(params.seed)
    noise_rng, cloud_rng = rng.spawn(2)

    minutes = (ts - ts.astype("datetime64[D]").astype("datetime64[m]")).astype(np.int64)
    hour = minutes / 60.0
    doy = (ts.astype("datetime64[D]") - ts.astype("datetime64[Y]").astype("datetime64[D]")).astype(np.int64)

    peak = params.daily_peak_amp * 0.5 * (1.0 + np.cos(2.0 * np.pi * (hour - params.peak_hour) / 24.0))
    season = params.base_load * params.seasonal_amp * np.cos(2.0 * np.pi * (doy - 200) / 365.0)
    white = noise_rng.standard_normal(n) * params.noise_sigma
    if params.noise_corr > 0.0:
        # stationary AR(1) with the same marginal spread as the white noise
        rho = params.noise_corr
        noise = lfilter([math.sqrt(1.0 - rho * rho)], [1.0, -rho], white)
    else:
        noise = white
    demand = np.maximum(params.base_load + season + peak + noise, 0.0)

    sun = np.maximum(solar_elevation_sine(ts, params.latitude), 0.0)
    daily_cloud = cloud_rng.uniform(0.0, 1.0, size=days)
    attenuation = 1.0 - params.cloudiness * np.repeat(daily_cloud, INTERVALS_PER_DAY)
    generation = np.maximum(params.pv_capacity * sun * attenuation, 0.0)
    return TimeSeries(ts, demand), TimeSeries(ts, generation)


def random_building_params(rng: np.random.Generator, n: int) -> list[BuildingProfileParams]:
    """Heterogeneous residential prosumers, all with rooftop PV."""
    out = []
    for _ in range(n):
        out.append(BuildingProfileParams(
            base_load=float(rng.uniform(0.3, 1.2)),
            daily_peak_amp=float(rng.uniform(0.5, 2.5)),
            peak_hour=float(rng.uniform(17.0, 21.0)),
            noise_sigma=float(rng.uniform(0.05, 0.3)),
            pv_capacity=float(rng.uniform(2.0, 6.0)),
            cloudiness=float(rng.uniform(0.1, 0.6)),
            seed=int(rng.integers(0, 2**31 - 1)),
            seasonal_amp=float(rng.uniform(0.1, 0.4)),
            noise_corr=float(rng.uniform(0.6, 0.95)),
        ))
    return out


def _check_aligned(series: Sequence[TimeSeries]) -> None:
    first = series[0]
    for s in series[1:]:
        if len(s) != len(first):
            raise AlignmentError(f"series lengths differ: {len(first)} vs {len(s)}")
        if not s.aligned_with(first):
            raise AlignmentError("series timestamps are not aligned")


def net_demand(demand: TimeSeries, generation: TimeSeries) -> TimeSeries:
    _check_aligned([demand, generation])
    return TimeSeries(demand.timestamps, demand.values - generation.values)


def aggregate_community(buildings: Sequence[TimeSeries]) -> TimeSeries:
    if not buildings:
        raise InvalidInputError("need at least one building series")
    _check_aligned(list(buildings))
    total = np.sum([b.values for b in buildings], axis=0)
    return TimeSeries(buildings[0].timestamps, total)


# -- splitting -----------------------------------------------------------------

class SplitMode(str, enum.Enum):
    FULL_HISTORY = "full-history"
    SCARCE = "scarce-28-day"


@dataclass(frozen=True)
class SplitSpec:
    test_month: int
    mode: SplitMode = SplitMode.FULL_HISTORY

    def __post_init__(self):
        month = self.test_month
        if isinstance(month, str):
            month = MONTHS.get(month.strip().lower())
            if month is None:
                raise InvalidInputError(f"unknown month {self.test_month!r}")
        if not 1 <= int(month) <= 12:
            raise InvalidInputError(f"test_month must be 1..12, got {month}")
        object.__setattr__(self, "test_month", int(month))
        object.__setattr__(self, "mode", SplitMode(self.mode))


SCARCE_TRAIN_DAYS = 28


def month_bounds(year: int, month: int) -> tuple[np.datetime64, np.datetime64]:
    lo = np.datetime64(f"{year:04d}-{month:02d}", "M")
    return lo.astype("datetime64[m]"), (lo + 1).astype("datetime64[m]")


def split(series: TimeSeries, spec: SplitSpec, year: int | None = None) -> tuple[TimeSeries, TimeSeries]:
    """Chronological train/test split around a test month.

    ``full-history`` trains on everything before the month and tests on the
    whole month; ``scarce-28-day`` trains on days 1-28 of the month and
    tests on the rest of it.
    """
    if len(series) == 0:
        raise SpanError("empty series")
    if year is None:
        year = int(series.timestamps[0].astype("datetime64[Y]").astype(int)) + 1970
    lo, hi = month_bounds(year, spec.test_month)
    first, last = series.timestamps[0], series.timestamps[-1]
    if first > lo or last < hi - RESOLUTION:
        raise SpanError(f"series {first}..{last} does not cover test month {year}-{spec.test_month:02d}")
    if spec.mode is SplitMode.FULL_HISTORY:
        if first >= lo:
            raise SpanError("no history before the test month")
        return series.window(first, lo), series.window(lo, hi)
    cut = lo + np.timedelta64(SCARCE_TRAIN_DAYS, "D")
    return series.window(lo, cut), series.window(cut, hi)


# -- CSV -------------------------------------------------------------------------

def write_csv(series: TimeSeries, path, comments: Sequence[str] = ()) -> None:
    """Write ``timestamp,kw`` rows; floats use ``repr`` so the round-trip is exact."""
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        for c in comments:
            fh.write(f"# {c}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for t, v in zip(series.timestamps, series.values):
            w.writerow([str(t), repr(float(v))])


def load_csv(path) -> TimeSeries:
    """Read a ``timestamp,kw`` file; leading ``#`` lines are provenance comments."""
    stamps, values = [], []
    header_seen = False
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.rstrip("\r\n")
            if not header_seen:
                if line.startswith("#"):
                    continue
                if tuple(c.strip() for c in line.split(",")) != CSV_HEADER:
                    raise CsvFormatError(f"{path}:{lineno}: expected header 'timestamp,kw', got {line!r}")
                header_seen = True
                continue
            if not line.strip():
                continue
            parts = line.split(",")
            if len(parts) != 2:
                raise CsvFormatError(f"{path}:{lineno}: expected 2 fields, got {len(parts)}")
            try:
                values.append(float(parts[1]))
            except ValueError as exc:
                raise CsvFormatError(f"{path}:{lineno}: {exc}") from None
            stamps.append((lineno, parts[0].strip()))
    if not header_seen:
        raise CsvFormatError(f"{path}: missing header 'timestamp,kw'")
    try:
        ts = np.array([s for _, s in stamps], dtype="datetime64[m]")
    except ValueError:
        # parse one by one only to report the offending line
        for lineno, s in stamps:
            try:
                np.datetime64(s, "m")
            except ValueError as exc:
                raise CsvFormatError(f"{path}:{lineno}: {exc}") from None
        raise
    try:
        return TimeSeries(ts, np.array(values, dtype=float))
    except InvalidInputError as exc:
        raise CsvFormatError(f"{path}: {exc}") from None


# -- communities -----------------------------------------------------------------

@dataclass(frozen=True)
class Building:
    id: str
    demand: TimeSeries
    generation: TimeSeries

    @property
    def net(self) -> TimeSeries:
        return net_demand(self.demand, self.generation)


def generate_community(prefix: str, n: int, days: int, seed: int,
                       start=f"{DEFAULT_YEAR}-01-01") -> list[Building]:
    rng = np.random.default_rng(seed)
    out = []
    for k, params in enumerate(random_building_params(rng, n)):
        d, g = gen_building(params, days, start)
        out.append(Building(f"{prefix}{k + 1:03d}", d, g))
    return out
