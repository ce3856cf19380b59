"""Time-discrete battery/household simulator.

One step is one metering interval (default: one minute). The household draws
``demand`` kW; the battery superposes its charging/discharging power on the
meter reading. Bookkeeping is done in energy units:

    delta_b  = applied_action * dt_hours * eta      [kWh]
    battery' = battery + delta_b                    [kWh]
    masked   = demand + delta_b / dt_hours          [kW]

i.e. the meter sees demand plus the battery's average power over the
interval. Reverse power flow to the grid is not modelled, so the masked load
is constrained to be non-negative; together with the capacity limits this
yields the feasible action interval computed by :func:`feasible_action_bounds`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError
from .rewards import RewardEngine
from .trace import EpisodeTrace, TraceBuilder

MINUTES_PER_DAY = 1440


@dataclass(frozen=True)
class BatteryConfig:
    """Physical battery parameters plus the sampling interval."""

    b_min: float = 0.0        # kWh
    b_max: float = 1.5        # kWh
    e_max: float = 5.0        # kW, symmetric charge/discharge limit
    eta: float = 1.0          # charge/discharge efficiency, (0, 1]
    b_initial: float = 1.5    # kWh, start-of-episode level
    dt_hours: float = 1.0 / 60.0

    def __post_init__(self):
        if not (0.0 <= self.b_min < self.b_max):
            raise ConfigError(f"need 0 <= b_min < b_max, got [{self.b_min}, {self.b_max}]")
        if self.e_max <= 0.0:
            raise ConfigError(f"e_max must be positive, got {self.e_max}")
        if not (0.0 < self.eta <= 1.0):
            raise ConfigError(f"eta must be in (0, 1], got {self.eta}")
        if not (self.b_min <= self.b_initial <= self.b_max):
            raise ConfigError(f"b_initial {self.b_initial} outside [{self.b_min}, {self.b_max}]")
        if self.dt_hours <= 0.0:
            raise ConfigError(f"dt_hours must be positive, got {self.dt_hours}")


@dataclass(frozen=True)
class TariffSchedule:
    """Two-rate day tariff on a 0-based minute-of-day grid.

    Peak applies to minutes-of-day in [peak_start_minute, peak_end_minute),
    off-peak everywhere else. Defaults are the UK Economy 7 rates with the
    peak span covering 07:00-24:00.
    """

    peak_price: float = 0.304        # GBP/kWh
    offpeak_price: float = 0.132     # GBP/kWh
    peak_start_minute: int = 420
    peak_end_minute: int = MINUTES_PER_DAY

    def __post_init__(self):
        if not (0.0 <= self.offpeak_price <= self.peak_price):
            raise ConfigError(
                f"need 0 <= offpeak <= peak, got {self.offpeak_price}, {self.peak_price}")
        if not (0 <= self.peak_start_minute < self.peak_end_minute <= MINUTES_PER_DAY):
            raise ConfigError(
                f"bad peak span [{self.peak_start_minute}, {self.peak_end_minute})")


@dataclass(frozen=True)
class EnvState:
    """Observation of the simulator: demand (kW), battery (kWh), 1-based minute."""

    demand: float
    battery: float
    minute: int

    def __post_init__(self):
        if not math.isfinite(self.demand) or self.demand < 0.0:
            raise ConfigError(f"demand must be finite and >= 0, got {self.demand}")
        if not math.isfinite(self.battery):
            raise ConfigError(f"battery must be finite, got {self.battery}")
        if self.minute < 1:
            raise ConfigError(f"minute must be >= 1, got {self.minute}")


@dataclass(frozen=True)
class ActionSpace:
    """Discrete, symmetric grid of charging (+) / discharging (-) rates in kW."""

    levels: tuple[float, ...]

    def __post_init__(self):
        lv = self.levels
        if len(lv) < 2:
            raise ConfigError("need at least two action levels")
        if any(not math.isfinite(x) for x in lv):
            raise ConfigError("action levels must be finite")
        if any(b <= a for a, b in zip(lv, lv[1:])):
            raise ConfigError("action levels must be strictly increasing")
        if not any(x == 0.0 for x in lv):
            raise ConfigError("action levels must contain 0")
        if any(abs(a + b) > 1e-9 for a, b in zip(lv, reversed(lv))):
            raise ConfigError("action levels must be symmetric about 0")

    @classmethod
    def uniform(cls, e_max: float = 5.0, n_levels: int = 21) -> "ActionSpace":
        if n_levels < 3 or n_levels % 2 == 0:
            raise ConfigError(f"n_levels must be odd and >= 3, got {n_levels}")
        grid = np.linspace(-e_max, e_max, n_levels)
        grid[n_levels // 2] = 0.0  # exact zero midpoint
        return cls(levels=tuple(float(x) for x in grid))

    @property
    def n(self) -> int:
        return len(self.levels)

    def index_of(self, level: float) -> int:
        for i, x in enumerate(self.levels):
            if abs(x - level) <= 1e-9:
                return i
        raise ConfigError(f"{level} is not an action level")


@dataclass(frozen=True)
class StepResult:
    masked_load: float       # kW, what the meter reports
    delta_b: float           # kWh, battery energy exchange this step
    next_state: EnvState
    applied_action: float    # kW, after clipping to feasible bounds
    requested_action: float  # kW, what the agent asked for
    price: float             # GBP/kWh at the current minute
    done: bool


def feasible_action_bounds(state: EnvState, cfg: BatteryConfig) -> tuple[float, float]:
    """Feasible charging-rate interval [a_min, a_max] in kW for this state.

    Discharge is limited by the non-negative-meter constraint (the battery
    cannot push out more power than the house consumes) and by the energy
    left above b_min; charge by the headroom below b_max. Both are clamped
    to the converter limit e_max. Zero is always feasible.
    """
    denom = cfg.dt_hours * cfg.eta
    a_min = max(-state.demand / cfg.eta, (cfg.b_min - state.battery) / denom, -cfg.e_max)
    a_max = min((cfg.b_max - state.battery) / denom, cfg.e_max)
    # Guard against ulp-level drift of the battery level past its bounds;
    # adding 0.0 normalises a signed zero.
    return min(a_min, 0.0) + 0.0, max(a_max, 0.0) + 0.0


def price_at(minute: int, tariff: TariffSchedule) -> float:
    """Tariff lookup for 1-based minute k, covering wall clock [k-1, k)."""
    if not 1 <= minute <= MINUTES_PER_DAY:
        raise ConfigError(f"minute must be in [1, {MINUTES_PER_DAY}], got {minute}")
    minute_of_day = minute - 1
    if tariff.peak_start_minute <= minute_of_day < tariff.peak_end_minute:
        return tariff.peak_price
    return tariff.offpeak_price


def step(
    state: EnvState,
    requested_action: float,
    cfg: BatteryConfig,
    tariff: TariffSchedule,
    next_demand: float,
    horizon: int,
) -> StepResult:
    """Apply one action: clip to feasible bounds, move energy, advance time.

    ``horizon`` is the episode length T; the step taken at minute T is
    terminal. The requested action may be infeasible (it is clipped and the
    reward engine penalises the request), but it must be physically
    meaningful: finite and within the converter limit.
    """
    if not math.isfinite(requested_action) or abs(requested_action) > cfg.e_max + 1e-9:
        raise ConfigError(
            f"requested action {requested_action} outside [-{cfg.e_max}, {cfg.e_max}]")
    if not math.isfinite(next_demand) or next_demand < 0.0:
        raise ConfigError(f"next_demand must be finite and >= 0, got {next_demand}")

    a_min, a_max = feasible_action_bounds(state, cfg)
    applied = min(max(requested_action, a_min), a_max)
    delta_b = applied * cfg.dt_hours * cfg.eta
    battery_next = state.battery + delta_b
    # Snap ulp-level overshoot back onto the capacity bounds and keep the
    # bookkeeping identity battery' = battery + delta_b exact.
    if battery_next > cfg.b_max:
        battery_next = cfg.b_max
        delta_b = battery_next - state.battery
    elif battery_next < cfg.b_min:
        battery_next = cfg.b_min
        delta_b = battery_next - state.battery
    masked = max(state.demand + delta_b / cfg.dt_hours, 0.0)

    done = state.minute >= horizon
    next_state = EnvState(demand=next_demand, battery=battery_next, minute=state.minute + 1)
    return StepResult(
        masked_load=masked,
        delta_b=delta_b,
        next_state=next_state,
        applied_action=applied,
        requested_action=requested_action,
        price=price_at(state.minute, tariff),
        done=done,
    )


class HouseholdEnv:
    """One household day bound to a demand series; steps minute by minute."""

    def __init__(
        self,
        demand_series: Sequence[float] | np.ndarray,
        cfg: BatteryConfig,
        tariff: TariffSchedule,
        space: ActionSpace,
    ):
        demand = np.asarray(demand_series, dtype=float)
        if demand.ndim != 1 or demand.size < 1:
            raise ConfigError("demand series must be a non-empty 1-d array")
        if not np.all(np.isfinite(demand)) or np.any(demand < 0):
            raise ConfigError("demand series must be finite and non-negative")
        if demand.size > MINUTES_PER_DAY:
            raise ConfigError(f"episodes longer than {MINUTES_PER_DAY} minutes unsupported")
        if max(abs(space.levels[0]), abs(space.levels[-1])) > cfg.e_max + 1e-9:
            raise ConfigError("action levels exceed the battery's e_max")
        self.demand = demand
        self.cfg = cfg
        self.tariff = tariff
        self.space = space
        self.T = int(demand.size)
        self.state: EnvState | None = None

    def reset(self) -> EnvState:
        self.state = EnvState(demand=float(self.demand[0]), battery=self.cfg.b_initial, minute=1)
        return self.state

    def step_level(self, level: float) -> StepResult:
        if self.state is None:
            raise ConfigError("call reset() before step")
        self.space.index_of(level)  # membership check
        t = self.state.minute
        next_demand = float(self.demand[t]) if t < self.T else float(self.demand[-1])
        result = step(self.state, level, self.cfg, self.tariff, next_demand, self.T)
        self.state = result.next_state
        return result

    def step_index(self, action_index: int) -> StepResult:
        return self.step_level(self.space.levels[action_index])


def run_episode(
    policy: Callable[[EnvState], float],
    demand_series: Sequence[float] | np.ndarray,
    cfg: BatteryConfig,
    tariff: TariffSchedule,
    reward_engine: RewardEngine,
    space: ActionSpace | None = None,
) -> EpisodeTrace:
    """Roll one full episode under ``policy`` and record every step.

    The policy maps an :class:`EnvState` to an action level in kW. Rows are
    appended in minute order; the resulting trace is the substrate for all
    evaluation metrics.
    """
    space = space or ActionSpace.uniform(e_max=cfg.e_max)
    env = HouseholdEnv(demand_series, cfg, tariff, space)
    state = env.reset()
    reward_engine.begin_episode(state.demand)
    builder = TraceBuilder()
    done = False
    while not done:
        level = float(policy(state))
        a_min, a_max = feasible_action_bounds(state, cfg)
        result = env.step_level(level)
        breakdown = reward_engine.compose(
            demand=state.demand,
            masked_load=result.masked_load,
            requested_action=result.requested_action,
            feasible_min=a_min,
            feasible_max=a_max,
            battery_after=result.next_state.battery,
            minute=state.minute,
            horizon=env.T,
            price=result.price,
        )
        reward_engine.advance_window(state.demand)
        builder.append(state=state, result=result, breakdown=breakdown)
        state = result.next_state
        done = result.done
    return builder.build()
