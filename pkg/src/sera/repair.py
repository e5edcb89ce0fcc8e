"""Closed-loop repair: pre-evaluate, analyse, recommend, reflect, refine, fine-tune.

The policy is fine-tuned by gradient descent on a failure loss estimated from
rollouts on routes generated from the refined scenario set.  Gradients are
central finite differences; the best iterate seen is returned, so the
training loss never ends above its starting value.
"""

from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from . import analysis, recommend as rec
from .bank import Bank
from .embed import Embedder
from .errors import ConfigError, SeraError, StageError
from .harness import (
    N_FEATURES, PerformanceLog, Route, aggregate, evaluate, pre_evaluate, run_route,
    scenario_to_route, simulate,
)

log = logging.getLogger(__name__)

LOSS_WEIGHTS = np.array([10.0, 5.0, 3.0, 1.0])  # collision, red_light, route_deviation, speeding
JERK_WEIGHT = 0.1

ANALYZERS = ("rules", "llm")
REFLECTIONS = ("rules", "llm", "off")
SELECTIONS = ("random", "initial", "full")
GRANULARITIES = ("batch", "per_route")


@dataclass
class RepairConfig:
    routes: str | None = None
    bank: str | None = None
    policy: str | None = None
    K: int = rec.DEFAULT_K
    analyzer: str = "rules"
    reflection: str = "rules"
    selection: str = "full"
    learning_rate: float = 0.5
    max_grad_steps: int = 200
    fd_step: float = 1.0
    episodes_per_scenario: int = 3
    granularity: str = "batch"
    seed: int = 0
    tau_cov: float = rec.DEFAULT_TAU_COV
    tau_dup: float = rec.DEFAULT_TAU_DUP
    beta: float = rec.DEFAULT_BETA
    early_stop_tol: float = 1e-4
    early_stop_patience: int = 10

    def __post_init__(self) -> None:
        checks = [
            (self.analyzer in ANALYZERS, f"analyzer must be one of {ANALYZERS}"),
            (self.reflection in REFLECTIONS, f"reflection must be one of {REFLECTIONS}"),
            (self.selection in SELECTIONS, f"selection must be one of {SELECTIONS}"),
            (self.granularity in GRANULARITIES, f"granularity must be one of {GRANULARITIES}"),
            (self.K >= 1, "K must be >= 1"),
            (self.learning_rate > 0, "learning_rate must be positive"),
            (self.max_grad_steps >= 1, "max_grad_steps must be positive"),
            (self.fd_step > 0, "fd_step must be positive"),
            (self.episodes_per_scenario >= 1, "episodes_per_scenario must be positive"),
            (self.early_stop_patience >= 1, "early_stop_patience must be positive"),
        ]
        for ok, message in checks:
            if not ok:
                raise ConfigError(message)

    def episode_seeds(self) -> list[int]:
        return [10_000 + 100 * self.seed + k for k in range(self.episodes_per_scenario)]

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any], base_dir: str | Path | None = None) -> RepairConfig:
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        data = dict(data)
        if base_dir is not None:
            for key in ("routes", "bank", "policy"):
                if data.get(key) and not Path(data[key]).is_absolute():
                    data[key] = str(Path(base_dir) / data[key])
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path: str | Path) -> RepairConfig:
        try:
            import tomllib
        except ModuleNotFoundError:  # Python < 3.11
            import tomli as tomllib
        try:
            with open(path, "rb") as f:
                data = tomllib.load(f)
        except (OSError, tomllib.TOMLDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(data, base_dir=Path(path).parent)


# --------------------------------------------------------------------------- loss


def episode_routes(refined: rec.RefinedSet | Sequence[str], bank: Bank, seeds: Sequence[int]) -> list[Route]:
    ids = refined.ids if isinstance(refined, rec.RefinedSet) else list(refined)
    return [scenario_to_route(bank.get(sid), seed) for sid in ids for seed in seeds]


def batch_losses(thetas: np.ndarray, routes: Sequence[Route]) -> np.ndarray:
    """Mean failure loss over ``routes`` for every row of ``thetas``."""
    thetas = np.atleast_2d(thetas)
    n_theta, n_routes = len(thetas), len(routes)
    res = simulate(np.repeat(thetas, n_routes, axis=0), list(routes) * n_theta)
    lengths = np.array([r.length_m for r in routes] * n_theta)
    per_episode = (
        res.counts @ LOSS_WEIGHTS
        + (1.0 - res.completion(lengths))
        + JERK_WEIGHT * res.mean_abs_jerk()
    )
    return per_episode.reshape(n_theta, n_routes).mean(axis=1)


def fail_loss(theta: Sequence[float], refined: rec.RefinedSet | Sequence[str], bank: Bank,
              seeds: Sequence[int]) -> float:
    """Failure risk of ``theta`` averaged over the refined scenarios and episode seeds."""
    routes = episode_routes(refined, bank, seeds)
    if not routes:
        raise SeraError("the refined set is empty")
    return float(batch_losses(np.asarray(theta, dtype=float), routes)[0])


@dataclass
class FineTuneResult:
    theta: np.ndarray
    initial_loss: float
    best_loss: float
    curve: list[float] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {
            "theta": self.theta.tolist(),
            "initial_loss": self.initial_loss,
            "best_loss": self.best_loss,
            "loss_curve": list(self.curve),
        }


def fine_tune(theta: Sequence[float], refined: rec.RefinedSet | Sequence[str], bank: Bank,
              cfg: RepairConfig) -> FineTuneResult:
    """Gradient descent with central finite differences on :func:`fail_loss`.

    ``curve`` holds the loss after each update.  Descent stops once
    ``early_stop_patience`` consecutive updates fail to improve the best loss
    by ``early_stop_tol``.
    """
    routes = episode_routes(refined, bank, cfg.episode_seeds())
    theta = np.asarray(theta, dtype=float).copy()
    if not routes:
        return FineTuneResult(theta, 0.0, 0.0)
    h, eye = cfg.fd_step, np.eye(N_FEATURES)
    best_theta, best_loss, initial_loss = theta.copy(), np.inf, 0.0
    curve: list[float] = []
    stall = 0
    for k in range(cfg.max_grad_steps + 1):
        last = k == cfg.max_grad_steps
        probes = theta[None, :] if last else np.vstack([theta, theta + h * eye, theta - h * eye])
        losses = batch_losses(probes, routes)
        loss = float(losses[0])
        if k == 0:
            initial_loss = best_loss = loss
        else:
            curve.append(loss)
            if loss < best_loss - cfg.early_stop_tol:
                stall = 0
            else:
                stall += 1
            if loss < best_loss:
                best_loss, best_theta = loss, theta.copy()
            if stall >= cfg.early_stop_patience:
                break
        if last:
            break
        grad = (losses[1:1 + N_FEATURES] - losses[1 + N_FEATURES:]) / (2.0 * h)
        theta = theta - cfg.learning_rate * grad
    return FineTuneResult(best_theta, initial_loss, best_loss, curve)


# --------------------------------------------------------------------------- pipeline


def _stage(name: str, fn: Callable[..., Any], *args: Any, **kwargs: Any) -> Any:
    try:
        return fn(*args, **kwargs)
    except StageError:
        raise
    except SeraError as exc:
        raise StageError(name, exc) from exc


def _logs_dict(logs: Sequence[PerformanceLog]) -> dict[str, Any]:
    return {"summary": aggregate(logs), "logs": [lg.to_dict() for lg in logs]}


def _iteration(theta: np.ndarray, logs: Sequence[PerformanceLog], bank: Bank, cfg: RepairConfig,
               embedder: Embedder, llm: Any, label: str) -> tuple[np.ndarray, dict[str, Any]]:
    record: dict[str, Any] = {"label": label}
    patterns = _stage("analyze", analysis.extract_patterns, logs, cfg.analyzer, llm)
    record["patterns"] = [p.to_dict() for p in patterns]
    if not patterns:
        record["skipped"] = "no failures"
        return theta, record

    if cfg.selection == "random":
        candidates = _stage("recommend", rec.random_candidates, bank, patterns, cfg.K, cfg.seed, embedder)
    else:
        candidates = _stage("recommend", rec.recommend, bank, patterns, cfg.K, embedder)
    record["candidates"] = candidates.to_dict()

    suggestions: list[rec.ReflectionSuggestion] = []
    if cfg.selection == "full" and cfg.reflection == "rules":
        suggestions = _stage("reflect", rec.reflect_rules, candidates, patterns, bank, embedder,
                             cfg.tau_cov, cfg.tau_dup)
    elif cfg.selection == "full" and cfg.reflection == "llm":
        suggestions = _stage("reflect", rec.reflect_llm, candidates, patterns, llm, bank, embedder)
    record["suggestions"] = [s.to_dict() for s in suggestions]

    if suggestions:
        refined = _stage("refine", rec.refine, candidates, suggestions, bank, patterns, embedder, cfg.beta)
    else:
        refined = rec.RefinedSet.from_candidates(candidates)
    record["refined"] = refined.to_dict()

    result = _stage("fine_tune", fine_tune, theta, refined, bank, cfg)
    record["fine_tune"] = result.to_dict()
    return result.theta, record


def repair(theta: Sequence[float], routes: Sequence[Route], bank: Bank, cfg: RepairConfig,
           llm: Any = None, embedder: Embedder | None = None) -> dict[str, Any]:
    """Run the repair loop in memory and return the report as a plain dict."""
    embedder = embedder or Embedder()
    theta0 = np.asarray(theta, dtype=float)
    if theta0.shape != (N_FEATURES,):
        raise ConfigError(f"policy must have {N_FEATURES} weights")
    before = _stage("pre_evaluate", pre_evaluate, theta0, routes)
    theta_cur = theta0.copy()
    iterations = []
    if cfg.granularity == "batch":
        theta_cur, record = _iteration(theta_cur, before, bank, cfg, embedder, llm, "batch")
        iterations.append(record)
    else:
        for route in routes:
            logs = [evaluate(run_route(theta_cur, route), route)]
            theta_cur, record = _iteration(theta_cur, logs, bank, cfg, embedder, llm, route.route_id)
            iterations.append(record)
    after = _stage("post_evaluate", pre_evaluate, theta_cur, routes)
    return {
        "config": cfg.to_dict(),
        "embedder_fingerprint": embedder.fingerprint,
        "initial_theta": theta0.tolist(),
        "final_theta": theta_cur.tolist(),
        "before": _logs_dict(before),
        "after": _logs_dict(after),
        "iterations": iterations,
    }


def run_repair(cfg: RepairConfig, llm: Any = None) -> dict[str, Any]:
    """Load the routes, bank and policy named in ``cfg`` and run :func:`repair`."""
    from .io import load_policy, load_routes

    if not cfg.routes or not cfg.bank:
        raise ConfigError("config must name a routes file and a bank file")
    routes = _stage("load", load_routes, cfg.routes)
    bank = _stage("load", Bank.load, cfg.bank)
    theta = _stage("load", load_policy, cfg.policy) if cfg.policy else None
    if theta is None:
        from .fixtures import BASELINE_THETA

        theta = BASELINE_THETA
    if cfg.analyzer == "llm" or cfg.reflection == "llm":
        if llm is None:
            from .llm import LlmHandle

            llm = LlmHandle.from_env()
    return repair(theta, routes, bank, cfg, llm)


def run_ablation(cfg: RepairConfig, llm: Any = None) -> dict[str, dict[str, Any]]:
    """Run the random / initial / full selection arms with identical seeds and budgets."""
    return {
        arm: run_repair(dataclasses.replace(cfg, selection=arm), llm)
        for arm in ("random", "initial", "full")
    }


def ablation_table(reports: dict[str, dict[str, Any]]) -> str:
    header = f"{'Method':<16}{'Driving Score':>15}{'Success Rate (%)':>18}{'Efficiency':>12}{'Comfortness':>13}"
    rows = [header, "-" * len(header)]
    first = next(iter(reports.values()))
    b = first["before"]["summary"]
    rows.append(f"{'Baseline':<16}{b['driving_score']:>15.2f}{b['success_rate']:>18.2f}"
                f"{b['efficiency']:>12.2f}{b['comfortness']:>13.2f}")
    names = {"random": "+ Random", "initial": "+ Initial Rec.", "full": "+ Full SERA"}
    for arm, report in reports.items():
        a = report["after"]["summary"]
        rows.append(f"{names.get(arm, arm):<16}{a['driving_score']:>15.2f}{a['success_rate']:>18.2f}"
                    f"{a['efficiency']:>12.2f}{a['comfortness']:>13.2f}")
    return "\n".join(rows)


def dumps_report(report: dict[str, Any]) -> str:
    return json.dumps(report, indent=2, ensure_ascii=False) + "\n"
