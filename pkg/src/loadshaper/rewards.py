"""Composite step reward for the load-shaping agent.

Four terms: a privacy term driven by a sliding-window signature detector,
an electricity-cost term, a terminal battery-consistency bonus, and a
penalty for requesting physically infeasible actions. Privacy, cost and
penalty are each normalised to [0, 1] against the running min/max of all
values observed so far in the run; the battery bonus is added raw.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .errors import ConfigError


class PrivacyCase(IntEnum):
    """Which branch of the privacy reward fired for a step."""

    SIGNATURE_HIDDEN = 1      # real signature present, meter shows none
    SIGNATURE_LEAKED = 2      # real signature present and visible
    SIGNATURE_INVENTED = 3    # no real signature, meter shows one
    IDLE = 4                  # nothing to hide, nothing shown


@dataclass(frozen=True)
class RewardConfig:
    lam: float = 1.0                   # privacy-vs-cost trade-off weight, [0, 1]
    noise_threshold_delta: float = 0.5  # kW, floor under the detector threshold
    sigma_multiplier: float = 3.0
    battery_bonus_scale: float = 10.0
    window_length: int = 5

    def __post_init__(self):
        if not (0.0 <= self.lam <= 1.0):
            raise ConfigError(f"lam must be in [0, 1], got {self.lam}")
        if self.noise_threshold_delta <= 0.0:
            raise ConfigError(
                f"noise_threshold_delta must be positive, got {self.noise_threshold_delta}")
        if self.window_length < 1:
            raise ConfigError(f"window_length must be >= 1, got {self.window_length}")


@dataclass(frozen=True)
class SlidingWindow:
    """Fixed-length buffer of recent demand values, oldest first."""

    values: tuple[float, ...]

    def __post_init__(self):
        if len(self.values) < 1:
            raise ConfigError("window must hold at least one value")
        if any(not math.isfinite(v) or v < 0.0 for v in self.values):
            raise ConfigError("window entries must be finite and >= 0")

    @classmethod
    def filled(cls, length: int, value: float) -> "SlidingWindow":
        return cls(values=(float(value),) * length)

    @property
    def mean(self) -> float:
        return float(np.mean(self.values))

    @property
    def std(self) -> float:
        # Population std: the window is the whole population of interest.
        return float(np.std(self.values))


def threshold(window: SlidingWindow, sigma_multiplier: float = 3.0) -> float:
    """Signature detection threshold: window mean + multiplier * population std."""
    return window.mean + sigma_multiplier * window.std


def update_window(window: SlidingWindow, demand: float, tau: float) -> SlidingWindow:
    """Slide the window over a new demand sample.

    A sample above the threshold is a suspected signature and is replaced by
    the pre-update window mean, so spikes never contaminate the baseline;
    ordinary samples enter as-is.
    """
    if not math.isfinite(demand) or demand < 0.0:
        raise ConfigError(f"demand must be finite and >= 0, got {demand}")
    appended = window.mean if demand > tau else demand
    return SlidingWindow(values=window.values[1:] + (appended,))


def privacy_case(demand: float, masked: float, tau: float, delta: float) -> PrivacyCase:
    """Which of the four signature outcomes applies to this step."""
    delta_t = max(delta, tau)
    real = demand >= delta_t
    shown = masked >= delta_t
    if real and not shown:
        return PrivacyCase.SIGNATURE_HIDDEN
    if real and shown:
        return PrivacyCase.SIGNATURE_LEAKED
    if not real and shown:
        return PrivacyCase.SIGNATURE_INVENTED
    return PrivacyCase.IDLE


def privacy_reward(demand: float, masked: float, tau: float, delta: float) -> float:
    """Reward for this step's signature outcome.

    Hiding a real signature pays best, leaking one costs most; inventing an
    artificial signature earns a smaller bonus and doing neither a small
    penalty. The sloped terms grow with the distance from the detector
    threshold.
    """
    case = privacy_case(demand, masked, tau, delta)
    if case is PrivacyCase.SIGNATURE_HIDDEN:
        return 100.0 + 0.05 * (demand - tau)
    if case is PrivacyCase.SIGNATURE_LEAKED:
        return -50.0 - 0.05 * (masked - tau)
    if case is PrivacyCase.SIGNATURE_INVENTED:
        return 20.0 + 0.05 * (masked - tau)
    return -20.0


def cost_reward(requested_action: float, dt_hours: float, eta: float, price: float) -> float:
    """Electricity-cost term: negative when buying energy to charge."""
    return -requested_action * dt_hours * eta * price


def battery_reward(
    battery_after_action: float,
    minute: int,
    horizon: int,
    b_min: float,
    b_max: float,
    scale: float = 10.0,
) -> float:
    """Terminal bonus proportional to the battery level left at the horizon."""
    if minute > horizon:
        raise ConfigError(f"minute {minute} past horizon {horizon}")
    if minute == horizon:
        return scale * battery_after_action / (b_max - b_min)
    return 0.0


def system_penalty(requested_action: float, a_min: float, a_max: float) -> float:
    """Penalty for requesting an action outside the feasible interval."""
    if a_min > a_max:
        raise ConfigError(f"empty feasible interval [{a_min}, {a_max}]")
    if requested_action > a_max:
        return -(requested_action - a_max)
    if requested_action < a_min:
        return -(a_min - requested_action)
    return 0.0


class RunningNormalizer:
    """Min/max tracker mapping raw values onto [0, 1] as they stream in."""

    def __init__(self):
        self.low: float | None = None
        self.high: float | None = None

    def observe(self, raw: float) -> float:
        """Fold ``raw`` into the tracked range, then normalise it."""
        if not math.isfinite(raw):
            raise ConfigError(f"cannot normalise non-finite value {raw}")
        if self.low is None:
            self.low = self.high = raw
        else:
            self.low = min(self.low, raw)
            self.high = max(self.high, raw)
        if self.high == self.low:
            return 0.5  # degenerate range: unbiased midpoint
        return (raw - self.low) / (self.high - self.low)


@dataclass(frozen=True)
class RewardBreakdown:
    privacy_raw: float
    cost_raw: float
    system_raw: float
    battery_raw: float
    privacy_norm: float
    cost_norm: float
    system_norm: float
    total: float
    tau: float        # kW, detector threshold this step
    delta_t: float    # kW, max(noise floor, tau)
    case: PrivacyCase


class RewardEngine:
    """Stateful reward composer for one training or evaluation run.

    Holds the per-episode sliding window and the per-run normalizers. The
    normalizers persist across episodes: the normalisation range is the set
    of all values observed so far in the run.
    """

    def __init__(self, cfg: RewardConfig, dt_hours: float, eta: float,
                 b_min: float, b_max: float):
        self.cfg = cfg
        self.dt_hours = dt_hours
        self.eta = eta
        self.b_min = b_min
        self.b_max = b_max
        self.window: SlidingWindow | None = None
        self._norm = {
            "privacy": RunningNormalizer(),
            "cost": RunningNormalizer(),
            "system": RunningNormalizer(),
        }

    def begin_episode(self, first_demand: float) -> None:
        # Seeding the window with the first sample keeps the threshold alive;
        # an all-zero window would reject every positive sample forever.
        self.window = SlidingWindow.filled(self.cfg.window_length, first_demand)

    def compose(
        self,
        *,
        demand: float,
        masked_load: float,
        requested_action: float,
        feasible_min: float,
        feasible_max: float,
        battery_after: float,
        minute: int,
        horizon: int,
        price: float,
    ) -> RewardBreakdown:
        """Score one step. Does not advance the window; call advance_window after."""
        if self.window is None:
            raise ConfigError("call begin_episode() before compose")
        tau = threshold(self.window, self.cfg.sigma_multiplier)
        delta_t = max(self.cfg.noise_threshold_delta, tau)
        privacy_raw = privacy_reward(demand, masked_load, tau, self.cfg.noise_threshold_delta)
        cost_raw = cost_reward(requested_action, self.dt_hours, self.eta, price)
        system_raw = system_penalty(requested_action, feasible_min, feasible_max)
        battery_raw = battery_reward(
            battery_after, minute, horizon, self.b_min, self.b_max,
            scale=self.cfg.battery_bonus_scale)
        privacy_norm = self._norm["privacy"].observe(privacy_raw)
        cost_norm = self._norm["cost"].observe(cost_raw)
        system_norm = self._norm["system"].observe(system_raw)
        lam = self.cfg.lam
        total = lam * privacy_norm + (1.0 - lam) * cost_norm + system_norm + battery_raw
        return RewardBreakdown(
            privacy_raw=privacy_raw,
            cost_raw=cost_raw,
            system_raw=system_raw,
            battery_raw=battery_raw,
            privacy_norm=privacy_norm,
            cost_norm=cost_norm,
            system_norm=system_norm,
            total=total,
            tau=tau,
            delta_t=delta_t,
            case=privacy_case(demand, masked_load, tau, self.cfg.noise_threshold_delta),
        )

    def advance_window(self, demand: float) -> None:
        """Slide the detector window over the step's demand sample."""
        if self.window is None:
            raise ConfigError("call begin_episode() before advance_window")
        tau = threshold(self.window, self.cfg.sigma_multiplier)
        self.window = update_window(self.window, demand, tau)

    def raw_total(self, breakdown: RewardBreakdown) -> float:
        """Unnormalised counterpart of ``breakdown.total`` (for logging)."""
        lam = self.cfg.lam
        return (lam * breakdown.privacy_raw + (1.0 - lam) * breakdown.cost_raw
                + breakdown.system_raw + breakdown.battery_raw)
