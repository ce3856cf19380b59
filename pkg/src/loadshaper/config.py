"""Experiment configuration: YAML parsing, profiles, validation, hashing.

A config file is a declarative key-value document; everything has a default,
so an empty file is a valid desk-scale experiment. The ``desk`` profile is
sized for minutes-scale laptop runs, ``paper`` for full-scale training.
Relative paths are resolved against the config file's directory.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, asdict
from pathlib import Path

import yaml

from .agent import TrainConfig
from .env import ActionSpace, BatteryConfig, TariffSchedule
from .errors import ConfigError
from .nilm import NilmTrainConfig, Seq2PointSpec
from .rewards import RewardConfig
from .serialize import canonical_json

PROFILES = {
    "desk": {"agent_episodes": 200, "nilm_iterations": 10_000},
    "paper": {"agent_episodes": 1500, "nilm_iterations": 100_000},
}

_TOP_KEYS = {
    "out_dir", "data_dir", "profile", "seed", "seeds", "lambdas", "lambda",
    "appliances", "days", "holdout_day", "n_action_levels",
    "battery", "tariff", "reward", "agent", "nilm", "synthetic",
}


def _build(cls, kwargs: dict, section: str):
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"section {section!r}: {exc}") from exc


@dataclass
class ExperimentConfig:
    out_dir: Path = Path("runs/experiment")
    data_dir: Path | None = None          # default: <out_dir>/data
    profile: str = "desk"
    seed: int = 0
    seeds: tuple[int, ...] = (0, 1, 2)
    lambdas: tuple[float, ...] = (0.0, 0.3, 0.7, 1.0)
    lam: float = 1.0
    appliances: tuple[str, ...] = ("kettle", "toaster")
    days: int = 11
    holdout_day: int = 10
    n_action_levels: int = 21
    battery: BatteryConfig = field(default_factory=BatteryConfig)
    tariff: TariffSchedule = field(default_factory=TariffSchedule)
    reward: RewardConfig = field(default_factory=RewardConfig)
    agent_overrides: dict = field(default_factory=dict)
    nilm_spec: Seq2PointSpec = field(default_factory=Seq2PointSpec)
    nilm_overrides: dict = field(default_factory=dict)
    synthetic_raw: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.profile not in PROFILES:
            raise ConfigError(f"unknown profile {self.profile!r}; choose from {sorted(PROFILES)}")
        if self.days < 2:
            raise ConfigError("need at least 2 days (training plus a held-out env day)")
        if not (0 <= self.holdout_day < self.days):
            raise ConfigError(f"holdout_day {self.holdout_day} outside 0..{self.days - 1}")
        if not (0.0 <= self.lam <= 1.0):
            raise ConfigError(f"lambda must be in [0, 1], got {self.lam}")
        if any(not (0.0 <= x <= 1.0) for x in self.lambdas):
            raise ConfigError(f"all sweep lambdas must be in [0, 1], got {self.lambdas}")
        if not self.appliances:
            raise ConfigError("need at least one appliance")
        if self.data_dir is None:
            self.data_dir = self.out_dir / "data"

    # --- derived component configs ---------------------------------------

    def action_space(self) -> ActionSpace:
        return ActionSpace.uniform(self.battery.e_max, self.n_action_levels)

    def reward_config(self, lam: float) -> RewardConfig:
        base = asdict(self.reward)
        base["lam"] = lam
        return RewardConfig(**base)

    def agent_config(self, seed: int) -> TrainConfig:
        kwargs = {
            "episodes": PROFILES[self.profile]["agent_episodes"],
            "steps_per_episode": 1440,
            "seed": seed,
        }
        kwargs.update(self.agent_overrides)
        if "hidden_sizes" in kwargs:
            kwargs["hidden_sizes"] = tuple(kwargs["hidden_sizes"])
        return _build(TrainConfig, kwargs, "agent")

    def nilm_config(self, seed: int) -> NilmTrainConfig:
        kwargs = {
            "iterations": PROFILES[self.profile]["nilm_iterations"],
            "seed": seed,
        }
        kwargs.update(self.nilm_overrides)
        return _build(NilmTrainConfig, kwargs, "nilm")

    def synthetic_spec(self, seed: int):
        from .data import PulseSpec, SyntheticSpec  # local import to keep layering flat

        raw = dict(self.synthetic_raw)
        pulses = raw.pop("appliances", None)
        kwargs = dict(raw)
        if pulses is not None:
            specs = []
            for p in pulses:
                p = dict(p)
                if "window" in p:
                    p["window"] = tuple(p["window"])
                specs.append(_build(PulseSpec, p, "synthetic.appliances"))
            kwargs["appliances"] = tuple(specs)
        kwargs["seed"] = seed
        return _build(SyntheticSpec, kwargs, "synthetic")

    # --- provenance -------------------------------------------------------

    def resolved_dict(self) -> dict:
        """Plain-data view of the fully resolved config (for hashing/manifests)."""
        from dataclasses import asdict as dc

        return {
            "profile": self.profile,
            "seed": self.seed,
            "seeds": list(self.seeds),
            "lambdas": list(self.lambdas),
            "lambda": self.lam,
            "appliances": list(self.appliances),
            "days": self.days,
            "holdout_day": self.holdout_day,
            "n_action_levels": self.n_action_levels,
            "battery": dc(self.battery),
            "tariff": dc(self.tariff),
            "reward": dc(self.reward),
            "agent": {**dc(self.agent_config(self.seed))},
            "nilm_spec": {**dc(self.nilm_spec)},
            "nilm_train": {**dc(self.nilm_config(self.seed))},
            "synthetic": _plain(dc(self.synthetic_spec(self.seed))),
        }

    def config_hash(self) -> str:
        return hashlib.sha256(canonical_json(self.resolved_dict()).encode()).hexdigest()


def _plain(node):
    if isinstance(node, dict):
        return {k: _plain(v) for k, v in node.items()}
    if isinstance(node, (list, tuple)):
        return [_plain(v) for v in node]
    return node


def load_config(path: str | Path | None, **overrides) -> ExperimentConfig:
    """Parse a YAML config file and apply CLI overrides on top.

    ``overrides`` accepts: profile, seed, lam, out_dir. Unknown file keys are
    rejected so typos fail loudly instead of silently using defaults.
    """
    raw: dict = {}
    base = Path.cwd()
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        loaded = yaml.safe_load(path.read_text())
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        raw = loaded
        base = path.parent.resolve()

    unknown = set(raw) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")

    def resolve(p) -> Path:
        p = Path(p)
        return p if p.is_absolute() else base / p

    kwargs: dict = {}
    if "out_dir" in raw:
        kwargs["out_dir"] = resolve(raw["out_dir"])
    if "data_dir" in raw:
        kwargs["data_dir"] = resolve(raw["data_dir"])
    for key in ("profile", "seed", "days", "holdout_day", "n_action_levels"):
        if key in raw:
            kwargs[key] = raw[key]
    if "lambda" in raw:
        kwargs["lam"] = float(raw["lambda"])
    if "seeds" in raw:
        kwargs["seeds"] = tuple(int(s) for s in raw["seeds"])
    if "lambdas" in raw:
        kwargs["lambdas"] = tuple(float(x) for x in raw["lambdas"])
    if "appliances" in raw:
        kwargs["appliances"] = tuple(str(a) for a in raw["appliances"])

    battery_raw = dict(raw.get("battery", {}))
    if "dt_minutes" in battery_raw:  # friendlier than writing 0.01666... in YAML
        battery_raw["dt_hours"] = float(battery_raw.pop("dt_minutes")) / 60.0
    kwargs["battery"] = _build(BatteryConfig, battery_raw, "battery")
    kwargs["tariff"] = _build(TariffSchedule, dict(raw.get("tariff", {})), "tariff")

    reward_raw = dict(raw.get("reward", {}))
    reward_raw.setdefault("lam", kwargs.get("lam", 1.0))
    kwargs["reward"] = _build(RewardConfig, reward_raw, "reward")

    nilm_raw = dict(raw.get("nilm", {}))
    spec_keys = {"sequence_length", "conv_channels", "kernel_size", "stride", "padding"}
    spec_raw = {k: v for k, v in nilm_raw.items() if k in spec_keys}
    if "conv_channels" in spec_raw:
        spec_raw["conv_channels"] = tuple(spec_raw["conv_channels"])
    kwargs["nilm_spec"] = _build(Seq2PointSpec, spec_raw, "nilm")
    kwargs["nilm_overrides"] = {k: v for k, v in nilm_raw.items() if k not in spec_keys}
    kwargs["agent_overrides"] = dict(raw.get("agent", {}))
    kwargs["synthetic_raw"] = dict(raw.get("synthetic", {}))

    for key, value in overrides.items():
        if value is None:
            continue
        if key == "lam":
            kwargs["lam"] = float(value)
            kwargs["reward"] = RewardConfig(**{**asdict(kwargs["reward"]), "lam": float(value)})
        elif key == "out_dir":
            kwargs["out_dir"] = Path(value)
            if "data_dir" not in raw:
                kwargs.pop("data_dir", None)
        elif key in ("profile", "seed"):
            kwargs[key] = value
        else:
            raise ConfigError(f"unknown override {key!r}")

    cfg = ExperimentConfig(**kwargs)
    # Touch the derived configs so invalid values fail at validation time.
    cfg.agent_config(cfg.seed)
    cfg.nilm_config(cfg.seed)
    cfg.synthetic_spec(cfg.seed)
    cfg.action_space()
    return cfg
