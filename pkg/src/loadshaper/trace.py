"""Per-minute episode record and its CSV serialisation.

One row per simulated minute, carrying everything the evaluation needs:
physics (demand, action, battery, masked load, price) and the reward
breakdown. Floats are written with shortest round-trip repr so a written
trace reloads bit-exactly.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .errors import DataError

FLOAT_COLUMNS = (
    "demand_kw",
    "requested_kw",
    "applied_kw",
    "delta_b_kwh",
    "masked_kw",
    "battery_kwh",
    "price_gbp_per_kwh",
    "privacy_raw",
    "cost_raw",
    "system_raw",
    "battery_raw",
    "privacy_norm",
    "cost_norm",
    "system_norm",
    "reward_total",
    "tau_kw",
    "threshold_kw",
)

COLUMNS = ("minute",) + FLOAT_COLUMNS + ("privacy_case",)


@dataclass
class EpisodeTrace:
    """Column-wise record of one episode; ``battery_kwh`` is the post-step level."""

    minute: np.ndarray
    demand_kw: np.ndarray
    requested_kw: np.ndarray
    applied_kw: np.ndarray
    delta_b_kwh: np.ndarray
    masked_kw: np.ndarray
    battery_kwh: np.ndarray
    price_gbp_per_kwh: np.ndarray
    privacy_raw: np.ndarray
    cost_raw: np.ndarray
    system_raw: np.ndarray
    battery_raw: np.ndarray
    privacy_norm: np.ndarray
    cost_norm: np.ndarray
    system_norm: np.ndarray
    reward_total: np.ndarray
    tau_kw: np.ndarray
    threshold_kw: np.ndarray
    privacy_case: np.ndarray

    def __len__(self) -> int:
        return int(self.minute.size)

    def column(self, name: str) -> np.ndarray:
        return getattr(self, name)

    def to_csv(self, path: str | Path) -> None:
        path = Path(path)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(COLUMNS)
            for i in range(len(self)):
                row = [int(self.minute[i])]
                row += [repr(float(self.column(c)[i])) for c in FLOAT_COLUMNS]
                row.append(int(self.privacy_case[i]))
                writer.writerow(row)

    @classmethod
    def from_csv(cls, path: str | Path) -> "EpisodeTrace":
        path = Path(path)
        with path.open(newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != list(COLUMNS):
                raise DataError(f"{path}: unexpected trace header {header}")
            rows = list(reader)
        if not rows:
            raise DataError(f"{path}: empty trace")
        cols: dict[str, np.ndarray] = {}
        data = list(zip(*rows))
        cols["minute"] = np.array([int(x) for x in data[0]], dtype=np.int64)
        for j, name in enumerate(FLOAT_COLUMNS, start=1):
            cols[name] = np.array([float(x) for x in data[j]], dtype=np.float64)
        cols["privacy_case"] = np.array([int(x) for x in data[-1]], dtype=np.int64)
        return cls(**cols)


class TraceBuilder:
    """Accumulates step records and finalises them into an EpisodeTrace."""

    def __init__(self):
        self._rows: list[tuple] = []

    def append(self, *, state, result, breakdown) -> None:
        self._rows.append((
            state.minute,
            state.demand,
            result.requested_action,
            result.applied_action,
            result.delta_b,
            result.masked_load,
            result.next_state.battery,
            result.price,
            breakdown.privacy_raw,
            breakdown.cost_raw,
            breakdown.system_raw,
            breakdown.battery_raw,
            breakdown.privacy_norm,
            breakdown.cost_norm,
            breakdown.system_norm,
            breakdown.total,
            breakdown.tau,
            breakdown.delta_t,
            int(breakdown.case),
        ))

    def build(self) -> EpisodeTrace:
        if not self._rows:
            raise DataError("cannot build an empty trace")
        data = list(zip(*self._rows))
        kwargs = {}
        names = [f.name for f in fields(EpisodeTrace)]
        for name, values in zip(names, data):
            dtype = np.int64 if name in ("minute", "privacy_case") else np.float64
            kwargs[name] = np.array(values, dtype=dtype)
        return EpisodeTrace(**kwargs)
