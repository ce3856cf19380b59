"""Sequence-to-point energy disaggregation attacker.

A small 1-d CNN maps a window of aggregate meter readings to the target
appliance's power at the window centre; a fixed threshold turns the
regression into an on/off classifier. This is the adversary the defense is
measured against.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

from . import seeding
from .errors import CheckpointError, ConfigError, TrainingDiverged
from .serialize import load_checkpoint, save_checkpoint

ON_THRESHOLD_KW = 0.5


@dataclass(frozen=True)
class Seq2PointSpec:
    sequence_length: int = 5
    conv_channels: tuple[int, int] = (16, 32)
    kernel_size: int = 5
    stride: int = 1
    padding: int = 2

    def __post_init__(self):
        if self.sequence_length < 1 or self.sequence_length % 2 == 0:
            raise ConfigError(
                f"sequence_length must be odd and >= 1, got {self.sequence_length}")
        if len(self.conv_channels) != 2 or min(self.conv_channels) < 1:
            raise ConfigError(f"need two positive conv channel counts")


@dataclass(frozen=True)
class NilmTrainConfig:
    iterations: int = 100_000
    lr_initial: float = 0.005
    lr_final: float = 0.001
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 1:
            raise ConfigError(f"iterations must be >= 1, got {self.iterations}")
        if self.lr_initial <= 0 or self.lr_final <= 0:
            raise ConfigError("learning rates must be positive")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")


class Seq2PointNet(nn.Module):
    """conv -> ReLU -> conv -> ReLU -> global average pool -> linear head."""

    def __init__(self, spec: Seq2PointSpec):
        super().__init__()
        c1, c2 = spec.conv_channels
        self.conv1 = nn.Conv1d(1, c1, spec.kernel_size, stride=spec.stride,
                               padding=spec.padding)
        self.conv2 = nn.Conv1d(c1, c2, spec.kernel_size, stride=spec.stride,
                               padding=spec.padding)
        self.head = nn.Linear(c2, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        # x: (batch, window) -> (batch,)
        h = torch.relu(self.conv1(x.unsqueeze(1)))
        h = torch.relu(self.conv2(h))
        h = h.mean(dim=2)  # global average pooling over the window axis
        return self.head(h).squeeze(1)


@dataclass
class NilmModel:
    net: Seq2PointNet
    spec: Seq2PointSpec
    input_scale: float     # kW; training-set max aggregate
    output_scale: float    # kW; training-set max appliance power
    threshold_kw: float
    seed: int
    loss_history: np.ndarray | None = None


def make_windows(series: np.ndarray, m: int) -> np.ndarray:
    """One window per sample, centred on it, edges replicated.

    Returns an (n, m) array where row t covers series indices
    t-(m-1)/2 .. t+(m-1)/2.
    """
    if m < 1 or m % 2 == 0:
        raise ConfigError(f"window length must be odd and >= 1, got {m}")
    series = np.asarray(series, dtype=np.float64)
    if series.ndim != 1 or series.size < 1:
        raise ConfigError("series must be a non-empty 1-d array")
    half = (m - 1) // 2
    padded = np.pad(series, half, mode="edge")
    return np.lib.stride_tricks.sliding_window_view(padded, m).copy()


def predict(model: NilmModel, window: np.ndarray) -> float:
    """Predicted appliance power (kW) at the centre of one window."""
    window = np.asarray(window, dtype=np.float64)
    if window.shape != (model.spec.sequence_length,):
        raise ConfigError(
            f"window length {window.shape} != {model.spec.sequence_length}")
    return float(predict_series_windows(model, window[None, :])[0])


def predict_series_windows(model: NilmModel, windows: np.ndarray) -> np.ndarray:
    """Batch prediction over pre-built windows, denormalised to kW."""
    x = torch.as_tensor(windows / model.input_scale, dtype=torch.float32)
    with torch.inference_mode():
        out = model.net(x)
    return out.numpy().astype(np.float64) * model.output_scale


def predict_series(model: NilmModel, series: np.ndarray) -> np.ndarray:
    """Per-sample appliance power prediction for a whole aggregate series."""
    windows = make_windows(series, model.spec.sequence_length)
    return predict_series_windows(model, windows)


def classify(prediction_kw: float | np.ndarray,
             threshold_kw: float = ON_THRESHOLD_KW):
    """On/off decision: on iff the prediction strictly exceeds the threshold."""
    return np.asarray(prediction_kw) > threshold_kw


def attack(model: NilmModel, masked_series: np.ndarray) -> np.ndarray:
    """Infer per-minute on/off states of the appliance from a meter series."""
    return classify(predict_series(model, masked_series), model.threshold_kw)


def train_nilm(
    aggregate_series: np.ndarray,
    appliance_series: np.ndarray,
    spec: Seq2PointSpec,
    cfg: NilmTrainConfig,
) -> NilmModel:
    """Fit the regressor by minibatch MSE descent with a linear LR decay."""
    aggregate = np.asarray(aggregate_series, dtype=np.float64)
    appliance = np.asarray(appliance_series, dtype=np.float64)
    if aggregate.shape != appliance.shape or aggregate.ndim != 1:
        raise ConfigError("aggregate and appliance series must be aligned 1-d arrays")

    torch.set_num_threads(1)
    torch.manual_seed(seeding.derived_seed(cfg.seed, "nilm-init"))
    batch_rng = seeding.substream(cfg.seed, "nilm-batch")

    input_scale = float(np.max(aggregate)) or 1.0
    output_scale = float(np.max(appliance)) or 1.0
    windows = make_windows(aggregate, spec.sequence_length) / input_scale
    targets = appliance / output_scale
    windows_t = torch.as_tensor(windows, dtype=torch.float32)
    targets_t = torch.as_tensor(targets, dtype=torch.float32)

    net = Seq2PointNet(spec)
    optimizer = torch.optim.Adam(net.parameters(), lr=cfg.lr_initial)
    losses = np.empty(cfg.iterations, dtype=np.float64)
    n = windows_t.shape[0]
    for it in range(cfg.iterations):
        frac = it / (cfg.iterations - 1) if cfg.iterations > 1 else 0.0
        lr = cfg.lr_initial + (cfg.lr_final - cfg.lr_initial) * frac
        for group in optimizer.param_groups:
            group["lr"] = lr
        idx = torch.as_tensor(batch_rng.integers(0, n, size=cfg.batch_size))
        pred = net(windows_t[idx])
        loss = torch.mean((pred - targets_t[idx]) ** 2)
        optimizer.zero_grad(set_to_none=True)
        loss.backward()
        optimizer.step()
        value = float(loss.detach())
        if not math.isfinite(value):
            raise TrainingDiverged(f"non-finite NILM loss at iteration {it}")
        losses[it] = value

    return NilmModel(
        net=net,
        spec=spec,
        input_scale=input_scale,
        output_scale=output_scale,
        threshold_kw=ON_THRESHOLD_KW,
        seed=cfg.seed,
        loss_history=losses,
    )


# --- checkpoint I/O ---------------------------------------------------------

NILM_KIND = "nilm-seq2point"


def save_nilm(path: str | Path, model: NilmModel) -> None:
    state = {k: v.detach().numpy() for k, v in sorted(model.net.state_dict().items())}
    payload = {
        "state_dict": state,
        "spec": _spec_dict(model.spec),
        "input_scale": model.input_scale,
        "output_scale": model.output_scale,
        "threshold_kw": model.threshold_kw,
        "seed": model.seed,
    }
    save_checkpoint(path, NILM_KIND, payload)


def _spec_dict(spec: Seq2PointSpec) -> dict:
    d = asdict(spec)
    d["conv_channels"] = list(spec.conv_channels)
    return d


def load_nilm(path: str | Path) -> NilmModel:
    payload = load_checkpoint(path, NILM_KIND)
    spec_d = dict(payload["spec"])
    spec_d["conv_channels"] = tuple(spec_d["conv_channels"])
    spec = Seq2PointSpec(**spec_d)
    net = Seq2PointNet(spec)
    try:
        net.load_state_dict({k: torch.as_tensor(v) for k, v in payload["state_dict"].items()})
    except (KeyError, RuntimeError) as exc:
        raise CheckpointError(f"{path}: incompatible network weights: {exc}") from exc
    return NilmModel(
        net=net,
        spec=spec,
        input_scale=float(payload["input_scale"]),
        output_scale=float(payload["output_scale"]),
        threshold_kw=float(payload["threshold_kw"]),
        seed=int(payload["seed"]),
    )
