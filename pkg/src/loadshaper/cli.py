"""Command-line entry point wiring the whole pipeline.

Subcommands: gen-synthetic, train-nilm, train-agent, evaluate, sweep, report.
Exit codes: 0 success, 2 configuration/validation error, 3 runtime or
numerical failure.
"""
from __future__ import annotations

import argparse
import datetime as dt
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__, agent, data, metrics, nilm
from .config import ExperimentConfig, load_config
from .env import HouseholdEnv, run_episode
from .errors import CheckpointError, ConfigError, DataError, TrainingDiverged
from .rewards import RewardEngine
from .serialize import atomic_write_text, canonical_json

log = logging.getLogger("loadshaper")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

RESULTS_SCHEMA_VERSION = 1


def _write_manifest(out_dir: Path, command: str, cfg: ExperimentConfig,
                    started: str, artifacts: list[Path]) -> Path:
    manifest = {
        "command": command,
        "config_hash": cfg.config_hash(),
        "code_version": __version__,
        "seed": cfg.seed,
        "started_utc": started,
        "finished_utc": dt.datetime.now(dt.timezone.utc).isoformat(),
        "artifacts": sorted(str(p) for p in artifacts),
    }
    path = out_dir / f"manifest_{command}.json"
    atomic_write_text(path, canonical_json(manifest) + "\n")
    return path


def _now() -> str:
    return dt.datetime.now(dt.timezone.utc).isoformat()


def _make_engine(cfg: ExperimentConfig, lam: float) -> RewardEngine:
    return RewardEngine(
        cfg.reward_config(lam),
        dt_hours=cfg.battery.dt_hours,
        eta=cfg.battery.eta,
        b_min=cfg.battery.b_min,
        b_max=cfg.battery.b_max,
    )


# --- subcommands --------------------------------------------------------


def cmd_gen_synthetic(cfg: ExperimentConfig) -> int:
    started = _now()
    spec = cfg.synthetic_spec(cfg.seed)
    missing = [a for a in cfg.appliances if a not in {p.name for p in spec.appliances}]
    if missing:
        raise ConfigError(f"synthetic spec lacks configured appliance(s): {missing}")
    household = data.generate_synthetic(spec, cfg.days)
    cfg.data_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for d in household.day_indices():
        path = cfg.data_dir / f"day_{d:03d}.csv"
        data.save_wide_csv(data.slice_day(household, d), path)
        written.append(path)
    log.info("wrote %d day files to %s", len(written), cfg.data_dir)
    _write_manifest(cfg.out_dir, "gen-synthetic", cfg, started, written)
    return EXIT_OK


def cmd_train_nilm(cfg: ExperimentConfig) -> int:
    started = _now()
    household = data.load_dataset(cfg.data_dir)
    missing = [a for a in cfg.appliances if a not in household.appliances]
    if missing:
        raise ConfigError(f"dataset lacks appliance column(s): {missing}")
    days = household.day_indices()
    train_days = [d for d in days if d != cfg.holdout_day]
    if not train_days:
        raise ConfigError("no training days left after excluding the holdout day")
    block = data.concat_days(household, train_days)

    nilm_dir = cfg.out_dir / "nilm"
    nilm_dir.mkdir(parents=True, exist_ok=True)
    train_cfg = cfg.nilm_config(cfg.seed)
    artifacts = []
    for name in cfg.appliances:
        log.info("training NILM model for %s on %d days", name, len(train_days))
        model = nilm.train_nilm(block.demand, block.appliance_kw[name],
                                cfg.nilm_spec, train_cfg)
        ckpt = nilm_dir / f"nilm_{name}.json"
        nilm.save_nilm(ckpt, model)
        loss_csv = nilm_dir / f"nilm_{name}_loss.csv"
        lines = ["iteration,loss"]
        lines += [f"{i},{repr(float(v))}" for i, v in enumerate(model.loss_history)]
        loss_csv.write_text("\n".join(lines) + "\n")
        artifacts += [ckpt, loss_csv]
    _write_manifest(cfg.out_dir, "train-nilm", cfg, started, artifacts)
    return EXIT_OK


def cmd_train_agent(cfg: ExperimentConfig, lam: float | None = None,
                    seed: int | None = None) -> int:
    started = _now()
    lam = cfg.lam if lam is None else lam
    seed = cfg.seed if seed is None else seed
    household = data.load_dataset(cfg.data_dir)
    day = data.make_day(household, cfg.holdout_day)

    env = HouseholdEnv(day.demand, cfg.battery, cfg.tariff, cfg.action_space())
    engine = _make_engine(cfg, lam)
    result = agent.train(env, engine, cfg.agent_config(seed))

    agent_dir = cfg.out_dir / "agent"
    agent_dir.mkdir(parents=True, exist_ok=True)
    tag = f"lam{lam:g}_seed{seed}"
    ckpt = agent_dir / f"policy_{tag}.json"
    agent.save_policy(ckpt, result)
    log_csv = agent_dir / f"training_log_{tag}.csv"
    agent.write_training_log(log_csv, result.log)
    log.info("trained policy %s (%d episodes)", tag, len(result.log))
    _write_manifest(cfg.out_dir, "train-agent", cfg, started, [ckpt, log_csv])
    return EXIT_OK


def _evaluate_to_dir(cfg: ExperimentConfig, policy_path: Path | None,
                     nilm_dir: Path, eval_dir: Path, lam: float | None,
                     seed: int, baseline: bool) -> Path:
    household = data.load_dataset(cfg.data_dir)
    day = data.make_day(household, cfg.holdout_day)

    models = {}
    for name in cfg.appliances:
        ckpt = nilm_dir / f"nilm_{name}.json"
        if not ckpt.exists():
            raise CheckpointError(f"missing adversary checkpoint {ckpt}")
        models[name] = nilm.load_nilm(ckpt)

    if baseline:
        policy = agent.constant_policy(0.0)
    else:
        if policy_path is None:
            raise ConfigError("evaluate needs --policy unless --baseline is set")
        loaded = agent.load_policy(policy_path)
        if loaded.battery != cfg.battery:
            raise ConfigError(
                f"policy checkpoint battery {asdict(loaded.battery)} does not match "
                f"the configured battery {asdict(cfg.battery)}")
        if loaded.levels != cfg.action_space().levels:
            raise ConfigError("policy checkpoint action levels do not match the config")
        policy = loaded.policy

    engine = _make_engine(cfg, cfg.lam if lam is None else lam)
    trace = run_episode(policy, day.demand, cfg.battery, cfg.tariff, engine,
                        cfg.action_space())

    eval_dir.mkdir(parents=True, exist_ok=True)
    trace.to_csv(eval_dir / "trace.csv")

    masked_reports = metrics.privacy_leak_summary(trace, models, day.appliance_on)
    appliance_payload = {}
    disagg = {}
    for name, model in models.items():
        unmasked_pred = nilm.predict_series(model, day.demand)
        unmasked = metrics.classification_report(
            nilm.classify(unmasked_pred, model.threshold_kw), day.appliance_on[name])
        masked_pred = nilm.predict_series(model, trace.masked_kw)
        appliance_payload[name] = {
            "masked": masked_reports[name].as_dict(),
            "unmasked": unmasked.as_dict(),
        }
        disagg[name] = metrics.DisaggSeries(
            true_kw=day.appliance_kw[name],
            predicted_kw=masked_pred,
            predicted_on=nilm.classify(masked_pred, model.threshold_kw),
        )
    figures = metrics.export_figures(trace, disagg, eval_dir)

    cost = None if baseline else metrics.cost_report(trace, cfg.tariff, cfg.battery).as_dict()
    results = {
        "schema_version": RESULTS_SCHEMA_VERSION,
        "config_hash": cfg.config_hash(),
        "seed": seed,
        "lambda": lam,
        "profile": cfg.profile,
        "baseline": baseline,
        "env_day": cfg.holdout_day,
        "appliances": appliance_payload,
        "cost": cost,
    }
    results_path = eval_dir / "results.json"
    atomic_write_text(results_path, canonical_json(results) + "\n")
    return results_path


def cmd_evaluate(cfg: ExperimentConfig, policy_path: Path | None,
                 baseline: bool, eval_dir: Path | None = None) -> int:
    started = _now()
    if baseline:
        lam: float | None = None
        seed = cfg.seed
        tag = "baseline"
    else:
        if policy_path is None:
            raise ConfigError("evaluate needs --policy unless --baseline is set")
        loaded = agent.load_policy(policy_path)
        lam, seed = loaded.lam, loaded.seed
        tag = f"lam{lam:g}_seed{seed}"
    if eval_dir is None:
        eval_dir = cfg.out_dir / "eval" / tag
    results_path = _evaluate_to_dir(cfg, policy_path, cfg.out_dir / "nilm",
                                    eval_dir, lam, seed, baseline)
    log.info("results written to %s", results_path)
    _write_manifest(eval_dir, "evaluate", cfg, started, [results_path])
    return EXIT_OK


def _sweep_cell(args: tuple) -> str:
    """One (lambda, seed) sweep cell; runs in a worker process."""
    config_path, overrides, lam, seed = args
    cfg = load_config(config_path, **overrides)
    cell_dir = cfg.out_dir / "sweep" / f"lam{lam:g}_seed{seed}"
    household = data.load_dataset(cfg.data_dir)
    day = data.make_day(household, cfg.holdout_day)
    env = HouseholdEnv(day.demand, cfg.battery, cfg.tariff, cfg.action_space())
    engine = _make_engine(cfg, lam)
    result = agent.train(env, engine, cfg.agent_config(seed))
    cell_dir.mkdir(parents=True, exist_ok=True)
    ckpt = cell_dir / "policy.json"
    agent.save_policy(ckpt, result)
    agent.write_training_log(cell_dir / "training_log.csv", result.log)
    results = _evaluate_to_dir(cfg, ckpt, cfg.out_dir / "nilm", cell_dir,
                               lam, seed, baseline=False)
    return str(results)


def cmd_sweep(cfg: ExperimentConfig, config_path: Path | None,
              overrides: dict, workers: int) -> int:
    started = _now()
    cells = [(str(config_path) if config_path else None, overrides, lam, seed)
             for lam in cfg.lambdas for seed in cfg.seeds]
    log.info("sweep over %d cells (lambdas=%s, seeds=%s)",
             len(cells), list(cfg.lambdas), list(cfg.seeds))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            produced = list(pool.map(_sweep_cell, cells))
    else:
        produced = [_sweep_cell(c) for c in cells]
    _write_manifest(cfg.out_dir, "sweep", cfg, started, [Path(p) for p in produced])
    return cmd_report(cfg.out_dir / "sweep", cfg.out_dir / "sweep" / "summary.csv")


REPORT_COLUMNS = (
    "lambda", "seed", "baseline",
    "kettle_precision", "kettle_recall", "kettle_f1",
    "toaster_precision", "toaster_recall", "toaster_f1",
    "battery_cost_gbp", "remaining_pct", "compensated_cost_gbp",
)


def cmd_report(search_dir: Path, out_csv: Path | None = None) -> int:
    import json

    paths = sorted(search_dir.rglob("results.json"))
    if not paths:
        raise DataError(f"no results.json files under {search_dir}")
    rows = []
    for p in paths:
        doc = json.loads(p.read_text())
        row = {
            "lambda": doc.get("lambda"),
            "seed": doc.get("seed"),
            "baseline": doc.get("baseline"),
        }
        for name, reports in doc.get("appliances", {}).items():
            for key in ("precision", "recall", "f1"):
                row[f"{name}_{key}"] = reports["masked"][key]
        cost = doc.get("cost")
        row["battery_cost_gbp"] = None if cost is None else cost["battery_cost_gbp"]
        row["remaining_pct"] = None if cost is None else 100.0 * cost["remaining_fraction"]
        row["compensated_cost_gbp"] = None if cost is None else cost["compensated_cost_gbp"]
        rows.append(row)

    columns = sorted({k for r in rows for k in r}, key=lambda k: (k not in REPORT_COLUMNS, k))
    lines = [",".join(columns)]
    for row in rows:
        lines.append(",".join(_cell(row.get(c)) for c in columns))
    text = "\n".join(lines) + "\n"
    if out_csv is not None:
        atomic_write_text(out_csv, text)
        log.info("summary written to %s", out_csv)
    print(text, end="")
    return EXIT_OK


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


# --- argument parsing ----------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="loadshaper",
        description="Battery load-shaping privacy defense and its NILM adversary.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", type=Path, default=None, help="YAML config file")
        p.add_argument("--seed", type=int, default=None, help="master seed override")
        p.add_argument("--profile", choices=("desk", "paper"), default=None)
        p.add_argument("--out", type=Path, default=None, help="output directory override")

    p = sub.add_parser("gen-synthetic", help="generate the synthetic dataset")
    common(p)

    p = sub.add_parser("train-nilm", help="train the adversary on the training days")
    common(p)

    p = sub.add_parser("train-agent", help="train the load-shaping policy")
    common(p)
    p.add_argument("--lambda", dest="lam", type=float, default=None,
                   help="privacy/cost trade-off weight in [0, 1]")

    p = sub.add_parser("evaluate", help="roll the greedy policy and attack it")
    common(p)
    p.add_argument("--lambda", dest="lam", type=float, default=None)
    p.add_argument("--policy", type=Path, default=None, help="policy checkpoint")
    p.add_argument("--baseline", action="store_true",
                   help="evaluate the do-nothing policy (original load demand)")

    p = sub.add_parser("sweep", help="train+evaluate every (lambda, seed) cell")
    common(p)
    p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("report", help="aggregate results.json files into a table")
    p.add_argument("--dir", type=Path, required=True, help="directory to scan")
    p.add_argument("--out", type=Path, default=None, help="summary CSV path")
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        if args.command == "report":
            return cmd_report(args.dir, args.out)
        overrides = {
            "seed": args.seed,
            "profile": args.profile,
            "out_dir": args.out,
        }
        if getattr(args, "lam", None) is not None:
            overrides["lam"] = args.lam
        cfg = load_config(args.config, **overrides)
        if args.command == "gen-synthetic":
            return cmd_gen_synthetic(cfg)
        if args.command == "train-nilm":
            return cmd_train_nilm(cfg)
        if args.command == "train-agent":
            return cmd_train_agent(cfg)
        if args.command == "evaluate":
            return cmd_evaluate(cfg, args.policy, args.baseline)
        if args.command == "sweep":
            return cmd_sweep(cfg, args.config, overrides, args.workers)
        raise ConfigError(f"unknown command {args.command!r}")
    except (ConfigError, DataError, CheckpointError) as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    except TrainingDiverged as exc:
        log.error("training failed: %s", exc)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
