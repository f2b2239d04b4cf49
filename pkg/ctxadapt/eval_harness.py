"""
file: eval_harness.py
brief: per-context evaluation rollouts, the average evaluation reward (AER), split summaries,
       learning-curve aggregation and sweep expansion
"""

from __future__ import annotations

import copy
import json
import os
from dataclasses import dataclass, field

import numpy as np  # pylint: disable=import-error
import pandas as pd  # pylint: disable=import-error

from .cmdp_envs import LABEL_TRAIN, SPLITS, ContextPipeline, ContextSet, split_labels
from .policy_zoo import Policy

SWEEP_KINDS = ("distractor_fixed", "distractor_gaussian", "noise", "normalisation", "narrow_range")
SWEEP_DEFAULTS = {
    "distractor_fixed": (0, 1, 5, 10, 20, 50, 100),
    "distractor_gaussian": (0, 1, 5, 10, 20, 50, 100),
    "noise": (0.0, 0.05, 0.1, 0.2, 0.5, 1.0),
    "normalisation": (0.1, 1.0, 2.0, 5.0, 15.0),
    "narrow_range": ("a", "b", "c", "d", "e", "f", "g", "h"),
}
# divisor kept for every narrow training range so runs stay comparable
NARROW_NORMALISER = 5.0


def aer(contexts, returns) -> float:
    """
    Average evaluation reward

    Parameters
    -----------------
    - contexts: evaluation contexts, (n,) or (n, 1) strictly increasing for a 1-D grid,
      (n, k >= 2) for a uniform multi-dimensional grid
    - returns: mean return per context, (n,)

    Returns
    -----------------
    - trapezoid integral of the returns over the context range divided by the range (1-D),
      the grid mean otherwise
    """
    contexts = np.asarray(contexts, dtype=np.float64)
    returns = np.asarray(returns, dtype=np.float64)
    if contexts.ndim == 2 and contexts.shape[1] == 1:
        contexts = contexts[:, 0]
    if len(contexts) != len(returns):
        raise ValueError(f"{len(contexts)} contexts but {len(returns)} returns")
    if len(contexts) < 2:
        raise ValueError("AER needs at least two evaluation contexts")
    if contexts.ndim == 2:
        if len(np.unique(contexts, axis=0)) != len(contexts):
            raise ValueError("duplicate evaluation contexts")
        return float(returns.mean())
    steps = np.diff(contexts)
    if np.any(steps <= 0):
        raise ValueError("evaluation contexts must be strictly increasing")
    return float(np.sum(0.5 * (returns[1:] + returns[:-1]) * steps) / (contexts[-1] - contexts[0]))


def split_report(contexts, returns, train, varying_dims) -> dict:
    """Mean return per split (train / interpolation / extrapolation); None for an empty split."""
    labels = split_labels(np.asarray(contexts), np.asarray(train), varying_dims)
    returns = np.asarray(returns, dtype=np.float64)
    return {split: (float(returns[labels == split].mean()) if np.any(labels == split) else None) for split in SPLITS}


@dataclass
class EvaluationReport:
    contexts: np.ndarray
    returns: np.ndarray
    labels: np.ndarray
    varying_dims: tuple
    context_names: tuple
    aer_full: float
    aer_test_only: float | None
    splits: dict
    metadata: dict = field(default_factory=dict)

    def frame(self) -> pd.DataFrame:
        """One row per evaluation context: context values, mean return, split label."""
        data = {self.context_names[d]: self.contexts[:, d] for d in self.varying_dims}
        data["mean_return"] = self.returns
        data["split_label"] = self.labels
        return pd.DataFrame(data)

    def summary(self) -> dict:
        return {
            "aer_full": self.aer_full,
            "aer_test_only": self.aer_test_only,
            "splits": self.splits,
            "metadata": self.metadata,
        }

    def save(self, directory: str):
        self.frame().to_csv(os.path.join(directory, "evaluation.csv"), index=False)
        with open(os.path.join(directory, "report.json"), "w", encoding="utf-8") as file:
            json.dump(self.summary(), file, indent=2, sort_keys=True)


def rollout_returns(
    policy: Policy,
    env,
    raw_contexts: np.ndarray,
    pipeline: ContextPipeline,
    rng: np.random.Generator,
    phase: str = "eval",
) -> np.ndarray:
    """Undiscounted return of one mean-action episode per row of raw_contexts, all stepped together."""
    batch = len(raw_contexts)
    seen = pipeline.process(raw_contexts, phase, rng)
    states = env.reset(raw_contexts, rng)
    totals = np.zeros(batch)
    active = np.ones(batch, dtype=bool)
    for t in range(env.horizon):
        actions = policy.mean_action(states, seen)
        result = env.step(states, np.full(batch, t), actions, raw_contexts)
        totals += np.where(active, result.reward, 0.0)
        active &= ~result.done
        states = result.next_state
        if not active.any():
            break
    return totals


def evaluate_policy(
    policy: Policy,
    env,
    context_set: ContextSet,
    pipeline: ContextPipeline,
    n: int = 5,
    seed: int = 0,
    group_size: int = 64,
    metadata: dict | None = None,
) -> EvaluationReport:
    """
    Mean return over n episodes on every evaluation context, plus AER and split means

    The policy acts with its mean action; parameters are only read. Contexts are evaluated
    group_size at a time, each group with a fresh weight cache.
    """
    rng = np.random.default_rng(seed)
    contexts = context_set.eval
    returns = np.zeros(len(contexts))
    for first in range(0, len(contexts), group_size):
        group = contexts[first : first + group_size]
        raw = np.repeat(group, n, axis=0)
        fresh = Policy(policy.arch, policy.dims, policy.params)
        totals = rollout_returns(fresh, env, raw, pipeline, rng)
        returns[first : first + len(group)] = totals.reshape(-1, n).mean(axis=1)

    dims = list(context_set.varying_dims)
    grid = contexts[:, dims] if dims else np.arange(len(contexts), dtype=np.float64)[:, None]
    labels = context_set.labels
    test = labels != LABEL_TRAIN
    aer_test = aer(grid[test], returns[test]) if test.sum() >= 2 else None
    return EvaluationReport(
        contexts=contexts,
        returns=returns,
        labels=labels,
        varying_dims=tuple(dims),
        context_names=context_set.context_names,
        aer_full=aer(grid, returns),
        aer_test_only=aer_test,
        splits=split_report(contexts, returns, context_set.train, dims),
        metadata={"context_set": context_set.name, "episodes": n, "seed": seed, **(metadata or {})},
    )


def snapshot_records(report: EvaluationReport, step: int) -> list[dict]:
    """Learning-curve rows (step, context_id, context values, mean_return) for one snapshot."""
    frame = report.frame().drop(columns="split_label")
    frame.insert(0, "context_id", np.arange(len(frame)))
    frame.insert(0, "step", step)
    return frame.to_dict("records")


def curve_aer(curve: pd.DataFrame, context_columns: list[str]) -> pd.DataFrame:
    """AER per snapshot step of one learning curve."""
    rows = []
    for step, snap in curve.groupby("step", sort=True):
        snap = snap.sort_values("context_id")
        points = snap[context_columns].to_numpy() if context_columns else snap[["context_id"]].to_numpy()
        rows.append({"step": step, "aer": aer(points, snap["mean_return"].to_numpy())})
    return pd.DataFrame(rows, columns=["step", "aer"])


def aggregate_curves(curves: dict[int, pd.DataFrame], context_columns: list[str]) -> pd.DataFrame:
    """Mean and standard deviation of the AER across seeds at every snapshot step."""
    per_seed = [curve_aer(curve, context_columns).assign(seed=seed) for seed, curve in curves.items()]
    if not per_seed:
        return pd.DataFrame(columns=["step", "aer_mean", "aer_std", "n_seeds"])
    stacked = pd.concat(per_seed, ignore_index=True)
    grouped = stacked.groupby("step")["aer"]
    return pd.DataFrame(
        {"aer_mean": grouped.mean(), "aer_std": grouped.std(ddof=0), "n_seeds": grouped.count()}
    ).reset_index()


def aggregate_reports(summaries: list[dict]) -> dict:
    """Mean and standard deviation across seeds of every scalar in the report summaries."""

    def stats(values):
        values = [v for v in values if v is not None]
        if not values:
            return None
        return {"mean": float(np.mean(values)), "std": float(np.std(values)), "n": len(values)}

    out = {
        "aer_full": stats([s["aer_full"] for s in summaries]),
        "aer_test_only": stats([s["aer_test_only"] for s in summaries]),
        "splits": {split: stats([s["splits"][split] for s in summaries]) for split in SPLITS},
    }
    return out


def run_sweep(kind: str, base_config: dict, values=None) -> list[tuple[str, dict]]:
    """
    Expand one sweep axis into independent experiment configs

    Parameters
    -----------------
    - kind: one of SWEEP_KINDS
    - base_config: experiment config as a nested dict
    - values: axis values, SWEEP_DEFAULTS[kind] when None; an empty list keeps only the base

    Returns
    -----------------
    - list of (label, config) pairs, in axis order
    """
    if kind not in SWEEP_KINDS:
        raise ValueError(f"unknown sweep kind '{kind}', expected one of {SWEEP_KINDS}")
    values = SWEEP_DEFAULTS[kind] if values is None else list(values)
    if not values:
        return [("base", copy.deepcopy(base_config))]

    configs = []
    for value in values:
        config = copy.deepcopy(base_config)
        contexts = config.setdefault("contexts", {})
        if kind in ("distractor_fixed", "distractor_gaussian"):
            distractors = dict(contexts.get("distractors") or {})
            distractors.update(k=int(value), mode="fixed" if kind == "distractor_fixed" else "gaussian")
            contexts["distractors"] = distractors
        elif kind == "noise":
            contexts["eval_noise"] = float(value)
        elif kind == "normalisation":
            contexts["normaliser"] = float(value)
        else:
            contexts["set"] = f"ode1d-narrow-{value}"
            contexts["normaliser"] = NARROW_NORMALISER
        configs.append((f"{kind}={value}", config))
    return configs
