"""Evaluation metrics and figure-data export.

Everything needed to fill one results row: on/off classification quality of
the adversary (precision/recall/F1), daily battery cost, remaining battery,
and the battery-compensated cost that makes runs with different final charge
comparable.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .env import BatteryConfig, TariffSchedule
from .errors import DataError
from .nilm import NilmModel, attack
from .trace import EpisodeTrace


@dataclass(frozen=True)
class ClassificationReport:
    tp: int
    fp: int
    fn: int
    tn: int
    precision: float
    recall: float
    f1: float

    def as_dict(self) -> dict:
        return {
            "tp": self.tp, "fp": self.fp, "fn": self.fn, "tn": self.tn,
            "precision": self.precision, "recall": self.recall, "f1": self.f1,
        }


def f1_from_precision_recall(precision: float, recall: float) -> float:
    """Harmonic mean, 0 when both sides are 0."""
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def classification_report(predicted: np.ndarray, truth: np.ndarray) -> ClassificationReport:
    predicted = np.asarray(predicted, dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    if predicted.shape != truth.shape:
        raise DataError(f"length mismatch: {predicted.shape} vs {truth.shape}")
    tp = int(np.sum(predicted & truth))
    fp = int(np.sum(predicted & ~truth))
    fn = int(np.sum(~predicted & truth))
    tn = int(np.sum(~predicted & ~truth))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    return ClassificationReport(
        tp=tp, fp=fp, fn=fn, tn=tn,
        precision=precision, recall=recall,
        f1=f1_from_precision_recall(precision, recall),
    )


@dataclass(frozen=True)
class CostReport:
    battery_cost_gbp: float       # sum of delta_b * price; charging positive
    bill_gbp: float               # sum of masked * dt * price (auxiliary)
    remaining_fraction: float     # final battery / b_max
    compensated_cost_gbp: float   # battery cost + refill-to-full at peak price

    def as_dict(self) -> dict:
        return {
            "battery_cost_gbp": self.battery_cost_gbp,
            "bill_gbp": self.bill_gbp,
            "remaining_fraction": self.remaining_fraction,
            "compensated_cost_gbp": self.compensated_cost_gbp,
        }


def battery_compensated_cost(battery_cost: float, final_battery_kwh: float,
                             b_max: float, peak_price: float) -> float:
    """Daily battery cost plus the cost of recharging to full at peak rate."""
    return battery_cost + (b_max - final_battery_kwh) * peak_price


def cost_report(trace: EpisodeTrace, tariff: TariffSchedule, cfg: BatteryConfig) -> CostReport:
    battery_cost = float(np.sum(trace.delta_b_kwh * trace.price_gbp_per_kwh))
    bill = float(np.sum(trace.masked_kw * cfg.dt_hours * trace.price_gbp_per_kwh))
    final = float(trace.battery_kwh[-1])
    return CostReport(
        battery_cost_gbp=battery_cost,
        bill_gbp=bill,
        remaining_fraction=final / cfg.b_max,
        compensated_cost_gbp=battery_compensated_cost(
            battery_cost, final, cfg.b_max, tariff.peak_price),
    )


def privacy_leak_summary(
    trace: EpisodeTrace,
    models: dict[str, NilmModel],
    truth: dict[str, np.ndarray],
) -> dict[str, ClassificationReport]:
    """Attack the masked meter series and score it against the day's truth."""
    out = {}
    for name, model in models.items():
        if name not in truth:
            raise DataError(f"no ground-truth labels for appliance {name!r}")
        predicted = attack(model, trace.masked_kw)
        out[name] = classification_report(predicted, truth[name])
    return out


@dataclass
class DisaggSeries:
    """Per-minute disaggregation overlay for one appliance."""

    true_kw: np.ndarray
    predicted_kw: np.ndarray
    predicted_on: np.ndarray


def export_figures(trace: EpisodeTrace, disagg: dict[str, DisaggSeries],
                   out_dir: str | Path) -> list[Path]:
    """Write tidy figure-data CSVs; returns the written paths.

    load_curves.csv: minute, demand_kw, masked_kw
    disagg_<appliance>.csv: minute, true_kw, predicted_kw, predicted_on
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    curves = out_dir / "load_curves.csv"
    with curves.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["minute", "demand_kw", "masked_kw"])
        for i in range(len(trace)):
            writer.writerow([int(trace.minute[i]),
                             repr(float(trace.demand_kw[i])),
                             repr(float(trace.masked_kw[i]))])
    written.append(curves)

    for name, series in sorted(disagg.items()):
        path = out_dir / f"disagg_{name}.csv"
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["minute", "true_kw", "predicted_kw", "predicted_on"])
            for i in range(len(trace)):
                writer.writerow([int(trace.minute[i]),
                                 repr(float(series.true_kw[i])),
                                 repr(float(series.predicted_kw[i])),
                                 int(series.predicted_on[i])])
        written.append(path)
    return written
