"""
file: experiment_cli.py
brief: declarative experiment runner: config validation, per-seed train and evaluate, run directories,
       theory checks and the command-line interface
usage: python3 -m ctxadapt run CONFIG [--seeds ...] [--steps N] [--out DIR] [--jobs N]
"""

from __future__ import annotations

import argparse
import copy
import glob
import json
import os
import subprocess  # nosec B404
import traceback
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import asdict, dataclass, field, is_dataclass

import numpy as np  # pylint: disable=import-error
import pandas as pd  # pylint: disable=import-error
import yaml  # pylint: disable=import-error

from .cmdp_envs import (
    ContextPipeline,
    ContextSchedule,
    DistractorSpec,
    build_context_sets,
    context_set_ids,
    make_env,
)
from .eval_harness import (
    SWEEP_KINDS,
    aggregate_curves,
    aggregate_reports,
    evaluate_policy,
    run_sweep,
    snapshot_records,
)
from .msg_utils import msg_err, msg_fatal, msg_info, msg_step, msg_warn, set_verbosity
from .nn_core import load_params, save_params
from .policy_zoo import KINDS, EnvDims, ParameterBudgetError, Policy, PolicyArch, equalize_parameters, param_shapes
from .sac_engine import SacConfig, train
from .theory_oracle import BRANCHES, sweep_theory, sweep_theory_close

CATALOG_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), "configs")
OUTPUT_ROOT_ENV = "CTXADAPT_OUTPUT_ROOT"
DEFAULT_OUTPUT_ROOT = "runs"
DEFAULT_SEEDS = 16
EXPERIMENT_KINDS = ("train", "theory")

DEFAULTS = {
    "experiment": {"id": None, "kind": "train", "master_seed": 0, "description": ""},
    "output": {"root": None},
}
TRAIN_DEFAULTS = {
    "env": {"name": None},
    "contexts": {
        "set": None,
        "normaliser": None,
        "train_noise": 0.0,
        "eval_noise": 0.0,
        "distractors": asdict(DistractorSpec()),
    },
    "arch": {},
    # no adapter width fits an unaware budget, so the adapter sets it
    "parity": {"enabled": True, "reference": "adapter", "tolerance": 0.05},
    "sac": {},
    "evaluation": {"episodes": 5, "group_size": 64, "curves": True},
    "sweep": {"kind": None, "values": None},
    "seeds": DEFAULT_SEEDS,
}
THEORY_DEFAULTS = {
    "theory": {
        "branch": "far",
        "gammas": [0.9, 0.95, 0.99],
        "ns": [2, 3, 4],
        "d_mins": [6, 10],
        "tau": 1,
        "taus": [3, 4, 5],
        "samples": 50,
        "seed": 0,
    },
}
SECTIONS = ("experiment", "output", *TRAIN_DEFAULTS, *THEORY_DEFAULTS)


class ConfigError(ValueError):
    """Invalid experiment config; field is the dotted path of the offending entry."""

    def __init__(self, field_path: str, message: str):
        super().__init__(f"{field_path}: {message}")
        self.field = field_path


def _plain(obj):
    """Dataclasses, tuples and numpy scalars as YAML/JSON-safe builtins."""
    if is_dataclass(obj):
        obj = asdict(obj)
    if isinstance(obj, dict):
        return {key: _plain(value) for key, value in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(value) for value in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _merge(defaults: dict, config: dict) -> dict:
    merged = copy.deepcopy(defaults)
    for key, value in config.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


@dataclass
class TheorySettings:
    branch: str = "far"
    gammas: list = field(default_factory=lambda: [0.9, 0.95, 0.99])
    ns: list = field(default_factory=lambda: [2, 3, 4])
    d_mins: list = field(default_factory=lambda: [6, 10])
    tau: int = 1
    taus: list = field(default_factory=lambda: [3, 4, 5])
    samples: int = 50
    seed: int = 0


# pylint: disable=too-many-instance-attributes
@dataclass
class ExperimentConfig:
    experiment_id: str
    kind: str
    master_seed: int
    description: str
    output_root: str | None
    resolved: dict
    env_name: str | None = None
    context_set: str | None = None
    normaliser: float | list | None = None
    train_noise: float = 0.0
    eval_noise: float = 0.0
    distractors: DistractorSpec = field(default_factory=DistractorSpec)
    arch: PolicyArch | None = None
    parity_enabled: bool = True
    parity_reference: str = "adapter"
    parity_tolerance: float = 0.05
    sac: SacConfig | None = None
    episodes: int = 5
    group_size: int = 64
    curves: bool = True
    sweep_kind: str | None = None
    sweep_values: list | None = None
    seeds: list = field(default_factory=list)
    theory: TheorySettings | None = None

    @classmethod
    def from_dict(cls, config: dict) -> ExperimentConfig:
        """Fill defaults, then validate every field; raises ConfigError naming the first bad field."""
        if not isinstance(config, dict):
            raise ConfigError("<root>", "the config must be a mapping of sections")
        unknown = sorted(set(config) - set(SECTIONS))
        if unknown:
            raise ConfigError(unknown[0], f"unknown section, expected some of {list(SECTIONS)}")
        for name, value in config.items():
            if name != "seeds" and value is not None and not isinstance(value, dict):
                raise ConfigError(name, "expected a mapping")
        kind = (config.get("experiment") or {}).get("kind", "train")
        if kind not in EXPERIMENT_KINDS:
            raise ConfigError("experiment.kind", f"'{kind}' is not one of {EXPERIMENT_KINDS}")
        defaults = {**DEFAULTS, **(TRAIN_DEFAULTS if kind == "train" else THEORY_DEFAULTS)}
        merged = _merge(defaults, {k: v for k, v in config.items() if v is not None})

        exp = merged["experiment"]
        if not isinstance(exp["id"], str) or not exp["id"]:
            raise ConfigError("experiment.id", "a non-empty experiment id is required")
        if not isinstance(exp["master_seed"], int) or exp["master_seed"] < 0:
            raise ConfigError("experiment.master_seed", "expected a non-negative integer")
        cfg = cls(
            experiment_id=exp["id"],
            kind=kind,
            master_seed=exp["master_seed"],
            description=str(exp.get("description") or ""),
            output_root=merged["output"]["root"],
            resolved=merged,
        )
        if kind == "theory":
            cfg._parse_theory(merged["theory"])
        else:
            cfg._parse_training(merged)
        return cfg

    def _parse_theory(self, section: dict):
        try:
            self.theory = TheorySettings(**section)
        except TypeError as exc:
            raise ConfigError("theory", str(exc)) from exc
        if self.theory.branch not in BRANCHES:
            raise ConfigError("theory.branch", f"'{self.theory.branch}' is not one of {BRANCHES}")
        if any(not 0.0 < g < 1.0 for g in self.theory.gammas):
            raise ConfigError("theory.gammas", "every discount must lie in (0, 1)")
        if self.theory.samples < 1:
            raise ConfigError("theory.samples", "expected a positive integer")

    def _parse_training(self, merged: dict):
        contexts = merged["contexts"]
        if contexts["set"] not in context_set_ids():
            raise ConfigError(
                "contexts.set", f"unknown context set '{contexts['set']}', expected one of {context_set_ids()}"
            )
        self.context_set = contexts["set"]
        set_env = build_context_sets(self.context_set).env
        self.env_name = merged["env"]["name"] or set_env
        merged["env"]["name"] = self.env_name
        if self.env_name != set_env:
            raise ConfigError(
                "env.name", f"context set '{self.context_set}' belongs to '{set_env}', not '{self.env_name}'"
            )

        normaliser = contexts["normaliser"]
        if normaliser is not None:
            values = np.atleast_1d(np.asarray(normaliser, dtype=np.float64))
            if np.any(values <= 0):
                raise ConfigError("contexts.normaliser", "divisors must be positive")
        self.normaliser = normaliser
        for key in ("train_noise", "eval_noise"):
            if not isinstance(contexts[key], (int, float)) or contexts[key] < 0:
                raise ConfigError(f"contexts.{key}", "expected a non-negative number")
        self.train_noise, self.eval_noise = float(contexts["train_noise"]), float(contexts["eval_noise"])
        try:
            self.distractors = DistractorSpec(**contexts["distractors"])
        except (TypeError, ValueError) as exc:
            raise ConfigError("contexts.distractors", str(exc)) from exc

        try:
            self.arch = PolicyArch.from_dict(merged["arch"])
        except (TypeError, ValueError) as exc:
            raise ConfigError("arch", str(exc)) from exc
        merged["arch"] = _plain(self.arch)

        parity = merged["parity"]
        if parity["reference"] not in KINDS:
            raise ConfigError("parity.reference", f"'{parity['reference']}' is not one of {KINDS}")
        if not 0.0 < float(parity["tolerance"]) < 1.0:
            raise ConfigError("parity.tolerance", "expected a fraction in (0, 1)")
        self.parity_enabled = bool(parity["enabled"])
        self.parity_reference = parity["reference"]
        self.parity_tolerance = float(parity["tolerance"])

        try:
            self.sac = SacConfig.from_dict(merged["sac"])
        except (TypeError, ValueError) as exc:
            raise ConfigError("sac", str(exc)) from exc
        merged["sac"] = self.sac.to_dict()

        evaluation = merged["evaluation"]
        for key in ("episodes", "group_size"):
            if not isinstance(evaluation[key], int) or evaluation[key] < 1:
                raise ConfigError(f"evaluation.{key}", "expected a positive integer")
        self.episodes, self.group_size = evaluation["episodes"], evaluation["group_size"]
        self.curves = bool(evaluation["curves"])

        sweep = merged["sweep"]
        if sweep["kind"] is not None and sweep["kind"] not in SWEEP_KINDS:
            raise ConfigError("sweep.kind", f"'{sweep['kind']}' is not one of {SWEEP_KINDS}")
        self.sweep_kind, self.sweep_values = sweep["kind"], sweep["values"]

        seeds = merged["seeds"]
        if isinstance(seeds, int) and not isinstance(seeds, bool):
            seeds = list(range(seeds))
        if not isinstance(seeds, list) or not seeds or any(not isinstance(s, int) or s < 0 for s in seeds):
            raise ConfigError("seeds", "expected a positive count or a list of non-negative integers")
        if len(set(seeds)) != len(seeds):
            raise ConfigError("seeds", "duplicate seeds")
        self.seeds = seeds
        merged["seeds"] = seeds

    def to_dict(self) -> dict:
        return _plain(self.resolved)


def list_experiments() -> dict[str, str]:
    """Catalog name -> description of the packaged experiment configs."""
    catalog = {}
    for path in sorted(glob.glob(os.path.join(CATALOG_DIR, "*.yml"))):
        with open(path, encoding="utf-8") as file:
            config = yaml.safe_load(file) or {}
        catalog[os.path.splitext(os.path.basename(path))[0]] = (config.get("experiment") or {}).get("description", "")
    return catalog


def load_config(name_or_path: str) -> dict:
    """Read a YAML config file, or a catalog entry by name."""
    path = name_or_path
    if not os.path.isfile(path):
        path = os.path.join(CATALOG_DIR, f"{name_or_path}.yml")
        if not os.path.isfile(path):
            raise ConfigError(
                "experiment.id", f"'{name_or_path}' is neither a file nor a catalog entry {sorted(list_experiments())}"
            )
    with open(path, encoding="utf-8") as file:
        try:
            return yaml.safe_load(file) or {}
        except yaml.YAMLError as exc:
            raise ConfigError("<root>", f"cannot parse {path}: {exc}") from exc


def apply_overrides(config: dict, seeds=None, steps=None, out=None) -> dict:
    config = copy.deepcopy(config)
    if seeds is not None:
        config["seeds"] = list(seeds)
    if steps is not None:
        config.setdefault("sac", {})
        config["sac"] = dict(config["sac"] or {}, total_timesteps=int(steps))
    if out is not None:
        config["output"] = dict(config.get("output") or {}, root=out)
    return config


def output_root(cfg: ExperimentConfig) -> str:
    return cfg.output_root or os.environ.get(OUTPUT_ROOT_ENV, DEFAULT_OUTPUT_ROOT)


def git_provenance() -> dict:
    """Revision and dirty flag of the checkout the package runs from, when it is a git work tree."""
    here = os.path.dirname(os.path.abspath(__file__))
    try:
        revision = subprocess.run(  # nosec B603 B607
            ["git", "rev-parse", "HEAD"], cwd=here, capture_output=True, text=True, check=True
        ).stdout.strip()
        status = subprocess.run(  # nosec B603 B607
            ["git", "status", "--porcelain"], cwd=here, capture_output=True, text=True, check=True
        ).stdout
    except (OSError, subprocess.CalledProcessError):
        return {"revision": "unknown", "dirty": None}
    return {"revision": revision, "dirty": bool(status.strip())}


# training runs


def build_pipeline(cfg: ExperimentConfig, context_set) -> ContextPipeline:
    if cfg.normaliser is None:
        divisors = context_set.default_normaliser()
    else:
        divisors = np.broadcast_to(np.asarray(cfg.normaliser, dtype=np.float64), (context_set.raw_dim,)).copy()
    return ContextPipeline(divisors, cfg.distractors, cfg.train_noise, cfg.eval_noise)


def resolve_arch(cfg: ExperimentConfig, dims: EnvDims, verbose: bool = True) -> PolicyArch:
    """The configured architecture, resized to the reference kind's parameter count when parity is on."""
    arch = cfg.arch
    if not cfg.parity_enabled or arch.kind == cfg.parity_reference:
        return arch
    reference = PolicyArch.from_dict({**_plain(arch), "kind": cfg.parity_reference})
    width = equalize_parameters(reference, arch, dims, cfg.parity_tolerance)
    if verbose:
        msg_info(f"Parameter parity: '{arch.kind}' hidden width {width} matches '{reference.kind}'")
    return arch.with_width(width)


def evaluation_seed(master_seed: int, seed: int) -> int:
    return int(np.random.SeedSequence([master_seed, seed, 1]).generate_state(1)[0])


def curve_columns(context_set) -> list[str]:
    return [context_set.context_names[d] for d in context_set.varying_dims]


def run_seed(config: dict, seed: int, seed_dir: str, quiet: bool = False) -> dict:
    """Train and evaluate one seed; artifacts go to seed_dir and report.json is written last."""
    if quiet:
        set_verbosity(False)
    try:
        cfg = ExperimentConfig.from_dict(config)
        os.makedirs(seed_dir, exist_ok=True)
        env = make_env(cfg.env_name)
        context_set = build_context_sets(cfg.context_set)
        pipeline = build_pipeline(cfg, context_set)
        dims = EnvDims(env.state_dim, env.action_dim, pipeline.policy_dim)
        arch = resolve_arch(cfg, dims, verbose=not quiet)
        schedule = ContextSchedule(context_set.train, env.training_starts())
        eval_seed = evaluation_seed(cfg.master_seed, seed)
        metadata = {"experiment": cfg.experiment_id, "seed": seed, "arch": arch.kind}

        def snapshot(agent, step):
            msg_step(f"Seed {seed}: evaluating at step {step}")
            report = evaluate_policy(
                agent.policy(), env, context_set, pipeline, cfg.episodes, eval_seed, cfg.group_size, metadata
            )
            msg_step(f"Seed {seed}: evaluating at step {step}", True)
            return snapshot_records(report, step)

        msg_info(f"Starting training --- {cfg.experiment_id}, seed {seed}")
        result = train(
            env, arch, cfg.sac, schedule, pipeline, seed, cfg.master_seed, snapshot if cfg.curves else None
        )
        columns = ["step", "context_id", *curve_columns(context_set), "mean_return"]
        pd.DataFrame(result.records, columns=columns).to_csv(os.path.join(seed_dir, "curve.csv"), index=False)
        save_params(result.agent.actor, os.path.join(seed_dir, "actor.ckpt"))
        report = evaluate_policy(
            result.agent.policy(),
            env,
            context_set,
            pipeline,
            cfg.episodes,
            eval_seed,
            cfg.group_size,
            {**metadata, "step": cfg.sac.total_timesteps, "num_updates": result.num_updates},
        )
        report.save(seed_dir)
        return {"seed": seed, "status": "completed", "aer_full": report.aer_full}
    except Exception:  # pylint: disable=broad-except
        return {"seed": seed, "status": "failed", "error": traceback.format_exc()}


def seed_directory(run_dir: str, seed: int) -> str:
    return os.path.join(run_dir, f"seed_{seed}")


def is_completed(run_dir: str, seed: int) -> bool:
    return os.path.isfile(os.path.join(seed_directory(run_dir, seed), "report.json"))


def _write_json(path: str, payload: dict):
    with open(path, "w", encoding="utf-8") as file:
        json.dump(_plain(payload), file, indent=2, sort_keys=True)


def _check_run_directory(run_dir: str, resolved: dict):
    """A run directory only ever holds one experiment definition; seeds may be added."""
    path = os.path.join(run_dir, "config.yml")
    if not os.path.isfile(path):
        return
    with open(path, encoding="utf-8") as file:
        previous = yaml.safe_load(file) or {}

    def strip(config):
        return {k: v for k, v in config.items() if k not in ("seeds", "output")}

    if strip(previous) != strip(resolved):
        raise ConfigError("output.root", f"{run_dir} already holds a run of a different config")


def run_training(cfg: ExperimentConfig, run_dir: str, jobs: int = 1) -> bool:
    """
    Run every seed of one (non-sweep) config into run_dir

    Returns
    -----------------
    - True when every seed completed; failures are recorded in manifest.json
    """
    os.makedirs(run_dir, exist_ok=True)
    resolved = cfg.to_dict()
    _check_run_directory(run_dir, resolved)
    with open(os.path.join(run_dir, "config.yml"), "w", encoding="utf-8") as file:
        yaml.safe_dump(resolved, file, sort_keys=False)

    manifest_path = os.path.join(run_dir, "manifest.json")
    manifest = {"experiment": cfg.experiment_id, "git": git_provenance(), "seeds": cfg.seeds, "status": {}}
    if os.path.isfile(manifest_path):
        with open(manifest_path, encoding="utf-8") as file:
            manifest["status"] = json.load(file).get("status", {})

    pending = []
    for seed in cfg.seeds:
        if is_completed(run_dir, seed):
            msg_warn(f"seed {seed} already completed in {run_dir}, not overwriting it")
            manifest["status"][str(seed)] = {"status": "completed"}
        else:
            pending.append(seed)
    _write_json(manifest_path, manifest)

    def record(outcome: dict):
        entry = {k: v for k, v in outcome.items() if k != "seed"}
        manifest["status"][str(outcome["seed"])] = entry
        _write_json(manifest_path, manifest)
        if outcome["status"] == "failed":
            msg_err(f"seed {outcome['seed']} failed, see {manifest_path}")

    if jobs > 1 and len(pending) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(run_seed, resolved, s, seed_directory(run_dir, s), True) for s in pending]
            for future in as_completed(futures):
                record(future.result())
    else:
        for seed in pending:
            record(run_seed(resolved, seed, seed_directory(run_dir, seed)))

    completed = [s for s in cfg.seeds if manifest["status"].get(str(s), {}).get("status") == "completed"]
    write_summary(cfg, run_dir, completed)
    return len(completed) == len(cfg.seeds)


def write_summary(cfg: ExperimentConfig, run_dir: str, seeds: list):
    """Aggregate (mean and std across seeds) of the final reports and learning curves."""
    summaries, curves = [], {}
    for seed in seeds:
        seed_dir = seed_directory(run_dir, seed)
        with open(os.path.join(seed_dir, "report.json"), encoding="utf-8") as file:
            summaries.append(json.load(file))
        curve_path = os.path.join(seed_dir, "curve.csv")
        if os.path.isfile(curve_path) and os.path.getsize(curve_path) > 0:
            curves[seed] = pd.read_csv(curve_path)
    context_set = build_context_sets(cfg.context_set)
    curve_summary = aggregate_curves({s: c for s, c in curves.items() if len(c)}, curve_columns(context_set))
    curve_summary.to_csv(os.path.join(run_dir, "curve_summary.csv"), index=False)
    payload = {"experiment": cfg.experiment_id, "seeds": seeds, **aggregate_reports(summaries)}
    _write_json(os.path.join(run_dir, "summary.json"), payload)


def run_theory(cfg: ExperimentConfig, run_dir: str) -> bool:
    os.makedirs(run_dir, exist_ok=True)
    with open(os.path.join(run_dir, "config.yml"), "w", encoding="utf-8") as file:
        yaml.safe_dump(cfg.to_dict(), file, sort_keys=False)
    theory = cfg.theory
    if theory.branch == "far":
        table = sweep_theory(theory.gammas, theory.ns, theory.d_mins, theory.tau)
    else:
        table = sweep_theory_close(theory.gammas, theory.ns, theory.taus, theory.samples, theory.seed)
    table.to_csv(os.path.join(run_dir, "theory.csv"), index=False)
    failed = int((~table["satisfied"].astype(bool)).sum())
    if failed:
        msg_warn(f"{failed} of {len(table)} worlds do not satisfy the {theory.branch}-branch bound")
    _write_json(
        os.path.join(run_dir, "manifest.json"),
        {"experiment": cfg.experiment_id, "git": git_provenance(), "rows": len(table), "unsatisfied": failed},
    )
    return True


def run(config: dict, jobs: int = 1) -> tuple[str, bool]:
    """Validate, expand the sweep if any, and execute; returns the run directory and overall success."""
    cfg = ExperimentConfig.from_dict(config)
    run_dir = os.path.join(output_root(cfg), cfg.experiment_id)
    msg_info(f"Starting experiment --- {cfg.experiment_id} -> {run_dir}")
    if cfg.kind == "theory":
        return run_dir, run_theory(cfg, run_dir)
    if cfg.sweep_kind is None:
        return run_dir, run_training(cfg, run_dir, jobs)

    base = cfg.to_dict()
    base["sweep"] = {"kind": None, "values": None}
    points = run_sweep(cfg.sweep_kind, base, cfg.sweep_values)
    ok = True
    for label, point in points:
        msg_info(f"Sweep point --- {label}")
        ok &= run_training(ExperimentConfig.from_dict(point), os.path.join(run_dir, label), jobs)
    _write_json(
        os.path.join(run_dir, "manifest.json"),
        {"experiment": cfg.experiment_id, "sweep": cfg.sweep_kind, "points": [label for label, _ in points]},
    )
    return run_dir, ok


def evaluate_checkpoint(checkpoint: str, config: dict, out_dir: str | None = None) -> str:
    """Re-evaluate a saved actor with the config's evaluation protocol; returns the output directory."""
    cfg = ExperimentConfig.from_dict(config)
    if cfg.kind != "train":
        raise ConfigError("experiment.kind", "only training experiments can be evaluated")
    env = make_env(cfg.env_name)
    context_set = build_context_sets(cfg.context_set)
    pipeline = build_pipeline(cfg, context_set)
    dims = EnvDims(env.state_dim, env.action_dim, pipeline.policy_dim)
    arch = resolve_arch(cfg, dims)
    params = load_params(checkpoint)
    expected = dict(param_shapes(arch, dims, "actor"))
    found = {name: params[name].shape for name in params.names()}
    if expected != found:
        raise ConfigError("arch", f"checkpoint {checkpoint} does not hold an actor of this architecture")
    out_dir = out_dir or os.path.join(os.path.dirname(os.path.abspath(checkpoint)), "reevaluation")
    os.makedirs(out_dir, exist_ok=True)
    report = evaluate_policy(
        Policy(arch, dims, params),
        env,
        context_set,
        pipeline,
        cfg.episodes,
        evaluation_seed(cfg.master_seed, 0),
        cfg.group_size,
        {"experiment": cfg.experiment_id, "checkpoint": os.path.abspath(checkpoint)},
    )
    report.save(out_dir)
    return out_dir


# command line


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ctxadapt", description="Context-conditioned RL experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    run_parser = sub.add_parser("run", help="train and evaluate an experiment")
    run_parser.add_argument("config", metavar="text", help="YAML config file or catalog name")
    run_parser.add_argument("--seeds", type=int, nargs="+", help="seeds to run (overrides the config)")
    run_parser.add_argument("--steps", type=int, help="total environment steps per seed")
    run_parser.add_argument("--out", help=f"output root (default ${OUTPUT_ROOT_ENV} or '{DEFAULT_OUTPUT_ROOT}')")
    run_parser.add_argument("--jobs", type=int, default=1, help="worker processes for the seeds")

    sub.add_parser("list", help="list the packaged experiments")

    theory_parser = sub.add_parser("verify-theory", help="check the unaware-value bound on grid worlds")
    theory_parser.add_argument("--branch", choices=BRANCHES, default="far")
    theory_parser.add_argument("--gamma", type=float, nargs="+", default=[0.9, 0.95, 0.99])
    theory_parser.add_argument("--n", type=int, nargs="+", default=[2, 3, 4])
    theory_parser.add_argument("--dmin", type=int, nargs="+", default=[6, 10])
    theory_parser.add_argument("--tau", type=int, nargs="+", default=None, help="goal radius in steps")
    theory_parser.add_argument("--out", help="output root")

    eval_parser = sub.add_parser("evaluate", help="evaluate a saved actor checkpoint")
    eval_parser.add_argument("checkpoint", help="actor.ckpt written by a run")
    eval_parser.add_argument("config", metavar="text", help="YAML config file or catalog name")
    eval_parser.add_argument("--out", help="directory for evaluation.csv and report.json")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)

    if args.command == "list":
        for name, description in list_experiments().items():
            print(f"{name:32s} {description}")
        return 0

    try:
        if args.command == "run":
            config = apply_overrides(load_config(args.config), args.seeds, args.steps, args.out)
            if args.jobs < 1:
                raise ConfigError("--jobs", "expected a positive integer")
            run_dir, ok = run(config, args.jobs)
            if not ok:
                msg_err(f"some seeds did not complete, see {os.path.join(run_dir, 'manifest.json')}")
                return 1
            msg_info(f"Experiment finished --- artifacts in {run_dir}")
            return 0

        if args.command == "verify-theory":
            taus = args.tau or ([1] if args.branch == "far" else [3, 4, 5])
            theory = {"branch": args.branch, "gammas": args.gamma, "ns": args.n, "d_mins": args.dmin}
            theory.update(tau=taus[0], taus=taus)
            config = {"experiment": {"id": "verify-theory", "kind": "theory"}, "theory": theory}
            run_dir, _ = run(apply_overrides(config, out=args.out))
            print(pd.read_csv(os.path.join(run_dir, "theory.csv")).to_string(index=False))
            return 0

        out_dir = evaluate_checkpoint(args.checkpoint, load_config(args.config), args.out)
        msg_info(f"Evaluation written to {out_dir}")
        return 0
    except ConfigError as exc:
        msg_fatal(f"invalid config, {exc}")
    except ParameterBudgetError as exc:
        msg_fatal(str(exc))
    return 1
