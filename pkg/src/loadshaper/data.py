"""Dataset ingestion and synthetic household generation.

Two CSV shapes are understood: a narrow per-channel file
(``timestamp_unix_s,power_w``) and a wide aligned file
(``timestamp,aggregate_w,<appliance>_w,...``). Power is stored internally in
kW on a 1-minute grid; timestamps are local-naive epoch seconds. Synthetic
households are base load plus seeded rectangular appliance pulses plus
clamped Gaussian measurement noise.
"""
from __future__ import annotations

import csv
import datetime as dt
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import seeding
from .errors import ConfigError, DataError
from .nilm import ON_THRESHOLD_KW

log = logging.getLogger(__name__)

SECONDS_PER_DAY = 86400
MINUTES_PER_DAY = 1440

NARROW_HEADER = ("timestamp_unix_s", "power_w")


@dataclass
class ChannelSeries:
    """One metering channel: strictly increasing timestamps, power in kW."""

    name: str
    timestamps: np.ndarray  # int64 epoch seconds
    power_kw: np.ndarray    # float64, >= 0

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=np.int64)
        self.power_kw = np.asarray(self.power_kw, dtype=np.float64)
        if self.timestamps.shape != self.power_kw.shape or self.timestamps.ndim != 1:
            raise DataError(f"{self.name}: timestamps/power shape mismatch")
        if self.timestamps.size == 0:
            raise DataError(f"{self.name}: empty channel")
        if np.any(np.diff(self.timestamps) <= 0):
            raise DataError(f"{self.name}: timestamps must be strictly increasing")
        if not np.all(np.isfinite(self.power_kw)) or np.any(self.power_kw < 0):
            raise DataError(f"{self.name}: power must be finite and >= 0")


@dataclass
class Household:
    """Aggregate plus appliance channels aligned to one 1-minute grid."""

    aggregate: ChannelSeries
    appliances: dict[str, ChannelSeries]

    def __post_init__(self):
        for name, ch in self.appliances.items():
            if not np.array_equal(ch.timestamps, self.aggregate.timestamps):
                raise DataError(f"channel {name} is not aligned with the aggregate")
        if self.appliances:
            peak = np.max([ch.power_kw for ch in self.appliances.values()], axis=0)
            ok = np.mean(self.aggregate.power_kw >= peak - 1e-9)
            if ok < 0.99:
                raise DataError(
                    f"aggregate below the largest appliance at {(1 - ok):.1%} of minutes")

    def day_indices(self) -> list[int]:
        """Epoch-day indices fully covered by the 1-minute grid."""
        days = np.unique(self.aggregate.timestamps // SECONDS_PER_DAY)
        out = []
        for d in days:
            lo = d * SECONDS_PER_DAY
            covered = np.sum((self.aggregate.timestamps >= lo)
                             & (self.aggregate.timestamps < lo + SECONDS_PER_DAY))
            if covered == MINUTES_PER_DAY:
                out.append(int(d))
        return out


@dataclass
class DayData:
    """One aligned day: demand plus per-appliance power and on/off truth."""

    day: int
    demand: np.ndarray                      # (1440,) kW aggregate
    appliance_kw: dict[str, np.ndarray]
    appliance_on: dict[str, np.ndarray]     # strict > threshold labels


def _parse_float(text: str) -> float:
    value = float(text)
    if not np.isfinite(value):
        raise ValueError(f"non-finite value {text!r}")
    return value


def load_csv(path: str | Path, column: str | None = None) -> ChannelSeries:
    """Load one channel from a narrow or wide CSV.

    Narrow files hold (timestamp_unix_s, power_w); wide files hold a
    timestamp column plus one ``<name>_w`` column per channel, selected via
    ``column``. Watts are converted to kW, rows sorted by time, duplicate
    timestamps collapsed by their mean.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty file")

    header = rows[0]
    if column is not None or (len(header) > 2 and header[0] == "timestamp"):
        return _parse_wide(path, rows, column)
    return _parse_narrow(path, rows)


def _parse_narrow(path: Path, rows: list[list[str]]) -> ChannelSeries:
    start = 1 if rows[0] == list(NARROW_HEADER) else 0
    ts, pw, bad = [], [], []
    for lineno, row in enumerate(rows[start:], start=start + 1):
        if not row:
            continue
        try:
            if len(row) != 2:
                raise ValueError(f"expected 2 columns, got {len(row)}")
            ts.append(int(float(row[0])))
            pw.append(_parse_float(row[1]) / 1000.0)
        except ValueError as exc:
            bad.append(f"line {lineno}: {exc}")
    if bad:
        shown = "; ".join(bad[:5])
        raise DataError(f"{path}: {len(bad)} malformed row(s): {shown}")
    if not ts:
        raise DataError(f"{path}: no data rows")
    return _collapse(path.stem, np.array(ts, dtype=np.int64), np.array(pw))


def _parse_wide(path: Path, rows: list[list[str]], column: str | None) -> ChannelSeries:
    header = rows[0]
    if not header or header[0] != "timestamp":
        raise DataError(f"{path}: wide CSV must start with a 'timestamp' column")
    if column is None:
        raise DataError(f"{path}: wide CSV needs an explicit column name")
    wanted = f"{column}_w"
    if wanted not in header:
        raise DataError(f"{path}: no column {wanted!r}; available: {header[1:]}")
    j = header.index(wanted)
    ts, pw, bad = [], [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        try:
            if len(row) != len(header):
                raise ValueError(f"expected {len(header)} columns, got {len(row)}")
            ts.append(int(float(row[0])))
            pw.append(_parse_float(row[j]) / 1000.0)
        except ValueError as exc:
            bad.append(f"line {lineno}: {exc}")
    if bad:
        shown = "; ".join(bad[:5])
        raise DataError(f"{path}: {len(bad)} malformed row(s): {shown}")
    if not ts:
        raise DataError(f"{path}: no data rows")
    return _collapse(column, np.array(ts, dtype=np.int64), np.array(pw))


def _collapse(name: str, ts: np.ndarray, power_kw: np.ndarray) -> ChannelSeries:
    """Sort by time; average rows sharing a timestamp."""
    order = np.argsort(ts, kind="stable")
    ts, power_kw = ts[order], power_kw[order]
    uniq, inverse, counts = np.unique(ts, return_inverse=True, return_counts=True)
    sums = np.zeros(uniq.size)
    np.add.at(sums, inverse, power_kw)
    return ChannelSeries(name=name, timestamps=uniq, power_kw=sums / counts)


def resample_1min(series: ChannelSeries, max_ffill_gap_min: int = 5) -> ChannelSeries:
    """Average samples into 1-minute buckets between first and last sample.

    Empty buckets form gaps: runs up to ``max_ffill_gap_min`` minutes are
    forward-filled from the last observation, longer runs are zero-filled
    (logged as a warning, since they usually mean a logger outage).
    """
    minutes = series.timestamps // 60
    first, last = int(minutes[0]), int(minutes[-1])
    n = last - first + 1
    sums = np.zeros(n)
    counts = np.zeros(n)
    np.add.at(sums, minutes - first, series.power_kw)
    np.add.at(counts, minutes - first, 1)

    power = np.zeros(n)
    covered = counts > 0
    power[covered] = sums[covered] / counts[covered]

    # Walk gap runs; the first bucket is always covered.
    i = 0
    while i < n:
        if covered[i]:
            i += 1
            continue
        j = i
        while j < n and not covered[j]:
            j += 1
        run = j - i
        if run <= max_ffill_gap_min:
            power[i:j] = power[i - 1]
        else:
            log.warning("%s: zero-filling a %d-minute gap at minute offset %d",
                        series.name, run, i)
        i = j
    return ChannelSeries(
        name=series.name,
        timestamps=(np.arange(first, last + 1, dtype=np.int64)) * 60,
        power_kw=power,
    )


def _epoch_day(day: int | dt.date) -> int:
    if isinstance(day, dt.date):
        return (day - dt.date(1970, 1, 1)).days
    return int(day)


def make_day(household: Household, day: int | dt.date,
             on_threshold_kw: float = ON_THRESHOLD_KW) -> DayData:
    """Extract one fully covered day; labels use the strict on-threshold."""
    d = _epoch_day(day)
    lo = d * SECONDS_PER_DAY
    expected = lo + 60 * np.arange(MINUTES_PER_DAY, dtype=np.int64)

    def slice_channel(ch: ChannelSeries) -> np.ndarray:
        idx = np.searchsorted(ch.timestamps, expected)
        if np.any(idx >= ch.timestamps.size) \
                or not np.array_equal(ch.timestamps[idx], expected):
            raise DataError(f"channel {ch.name!r} does not cover day {d}")
        return ch.power_kw[idx].copy()

    demand = slice_channel(household.aggregate)
    appliance_kw = {name: slice_channel(ch) for name, ch in household.appliances.items()}
    appliance_on = {name: kw > on_threshold_kw for name, kw in appliance_kw.items()}
    return DayData(day=d, demand=demand, appliance_kw=appliance_kw,
                   appliance_on=appliance_on)


@dataclass(frozen=True)
class PulseSpec:
    """Rectangular appliance pulse: power for a few minutes, a few times a day."""

    name: str
    power_kw: float
    duration_min: int
    daily_count: int
    window: tuple[int, int] = (360, 1320)  # allowed start..end minutes of day

    def __post_init__(self):
        if self.power_kw < 0:
            raise ConfigError(f"{self.name}: power must be >= 0")
        if self.duration_min < 1:
            raise ConfigError(f"{self.name}: duration must be >= 1 minute")
        if self.daily_count < 0:
            raise ConfigError(f"{self.name}: daily_count must be >= 0")
        lo, hi = self.window
        if not (0 <= lo < hi <= MINUTES_PER_DAY):
            raise ConfigError(f"{self.name}: bad time-of-day window {self.window}")
        if self.duration_min > hi - lo:
            raise ConfigError(
                f"{self.name}: pulse of {self.duration_min} min cannot fit in "
                f"window {self.window}")
        if self.daily_count * self.duration_min > hi - lo:
            raise ConfigError(
                f"{self.name}: {self.daily_count} non-overlapping pulses of "
                f"{self.duration_min} min cannot fit in window {self.window}")


@dataclass(frozen=True)
class SyntheticSpec:
    base_load_kw: float = 0.25
    appliances: tuple[PulseSpec, ...] = (
        PulseSpec(name="kettle", power_kw=2.5, duration_min=3, daily_count=2),
        PulseSpec(name="toaster", power_kw=1.2, duration_min=4, daily_count=2),
    )
    noise_sigma_kw: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.base_load_kw < 0:
            raise ConfigError("base_load_kw must be >= 0")
        if self.noise_sigma_kw < 0:
            raise ConfigError("noise_sigma_kw must be >= 0")


def _place_pulses(rng: np.random.Generator, spec: PulseSpec) -> list[int]:
    """Non-overlapping start minutes within the allowed window."""
    lo, hi = spec.window
    starts: list[int] = []
    attempts = 0
    while len(starts) < spec.daily_count:
        s = int(rng.integers(lo, hi - spec.duration_min + 1))
        if all(s + spec.duration_min <= t or t + spec.duration_min <= s for t in starts):
            starts.append(s)
        attempts += 1
        if attempts > 1000 * max(spec.daily_count, 1):
            raise DataError(f"{spec.name}: could not place non-overlapping pulses")
    return sorted(starts)


def generate_synthetic(spec: SyntheticSpec, days: int) -> Household:
    """Seeded synthetic household over ``days`` days starting at epoch day 0."""
    if days < 1:
        raise ConfigError(f"days must be >= 1, got {days}")
    pulse_rng = seeding.substream(spec.seed, "synth")
    noise_rng = seeding.substream(spec.seed, "env-noise")

    n = days * MINUTES_PER_DAY
    timestamps = 60 * np.arange(n, dtype=np.int64)
    appliances: dict[str, np.ndarray] = {p.name: np.zeros(n) for p in spec.appliances}
    for d in range(days):
        base_idx = d * MINUTES_PER_DAY
        for pulse in spec.appliances:
            for s in _place_pulses(pulse_rng, pulse):
                sl = slice(base_idx + s, base_idx + s + pulse.duration_min)
                appliances[pulse.name][sl] = pulse.power_kw

    aggregate = np.full(n, spec.base_load_kw)
    for series in appliances.values():
        aggregate = aggregate + series
    if spec.noise_sigma_kw > 0:
        aggregate = aggregate + noise_rng.normal(0.0, spec.noise_sigma_kw, size=n)
    aggregate = np.maximum(aggregate, 0.0)

    return Household(
        aggregate=ChannelSeries("aggregate", timestamps, aggregate),
        appliances={name: ChannelSeries(name, timestamps, kw)
                    for name, kw in appliances.items()},
    )


def save_wide_csv(household: Household, path: str | Path) -> None:
    """Write the aligned wide CSV (watts, shortest round-trip floats)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = sorted(household.appliances)
    header = ["timestamp", "aggregate_w"] + [f"{n}_w" for n in names]
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        agg = household.aggregate
        for i in range(agg.timestamps.size):
            row = [int(agg.timestamps[i]), repr(float(agg.power_kw[i] * 1000.0))]
            row += [repr(float(household.appliances[n].power_kw[i] * 1000.0))
                    for n in names]
            writer.writerow(row)


def load_wide_csv(path: str | Path) -> Household:
    """Load a wide CSV back into a Household."""
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty file")
    header = rows[0]
    if len(header) < 2 or header[0] != "timestamp" or header[1] != "aggregate_w":
        raise DataError(f"{path}: expected header timestamp,aggregate_w,..., got {header}")
    names = [c[:-2] for c in header[1:]]
    channels = {name: load_csv(path, column=name) for name in names}
    aggregate = channels.pop("aggregate")
    return Household(aggregate=aggregate, appliances=channels)


def slice_day(household: Household, day: int | dt.date) -> Household:
    """A new Household restricted to one fully covered day."""
    d = _epoch_day(day)
    lo = d * SECONDS_PER_DAY
    mask = (household.aggregate.timestamps >= lo) \
        & (household.aggregate.timestamps < lo + SECONDS_PER_DAY)
    if int(np.sum(mask)) != MINUTES_PER_DAY:
        raise DataError(f"day {d} is not fully covered")
    ts = household.aggregate.timestamps[mask]
    return Household(
        aggregate=ChannelSeries("aggregate", ts, household.aggregate.power_kw[mask]),
        appliances={name: ChannelSeries(name, ts, ch.power_kw[mask])
                    for name, ch in household.appliances.items()},
    )


def concat_households(parts: list[Household]) -> Household:
    """Concatenate time-ordered household blocks into a single one."""
    if not parts:
        raise DataError("nothing to concatenate")
    names = set(parts[0].appliances)
    for p in parts[1:]:
        if set(p.appliances) != names:
            raise DataError(f"appliance channels differ across blocks: "
                            f"{sorted(names)} vs {sorted(p.appliances)}")
    ts = np.concatenate([p.aggregate.timestamps for p in parts])
    return Household(
        aggregate=ChannelSeries(
            "aggregate", ts, np.concatenate([p.aggregate.power_kw for p in parts])),
        appliances={
            name: ChannelSeries(
                name, ts, np.concatenate([p.appliances[name].power_kw for p in parts]))
            for name in names
        },
    )


def load_dataset(data_dir: str | Path) -> Household:
    """Load every day_*.csv in a dataset directory into one Household."""
    data_dir = Path(data_dir)
    files = sorted(data_dir.glob("day_*.csv"))
    if not files:
        raise DataError(f"no day_*.csv files in {data_dir}")
    return concat_households([load_wide_csv(f) for f in files])


def concat_days(household: Household, days: list[int]) -> DayData:
    """Concatenate several days into one contiguous pseudo-day block.

    Used for adversary training, where the series is treated as one long
    stream; the ``day`` field of the result is the first day index.
    """
    if not days:
        raise ConfigError("need at least one day")
    parts = [make_day(household, d) for d in days]
    return DayData(
        day=parts[0].day,
        demand=np.concatenate([p.demand for p in parts]),
        appliance_kw={name: np.concatenate([p.appliance_kw[name] for p in parts])
                      for name in parts[0].appliance_kw},
        appliance_on={name: np.concatenate([p.appliance_on[name] for p in parts])
                      for name in parts[0].appliance_on},
    )
