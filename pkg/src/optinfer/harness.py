"""Experiment orchestration: multi-seed runs, baselines, regret accounting, CSV logs.

Every run derives its random streams from (seed, episode, channel) seed
sequences, so the oracle replay that prices an episode's optimal return
consumes exactly the environment draws the agent saw (common random numbers),
and reruns of a config are byte-identical.  Wall-clock timings, when
requested, go to a separate table so the main CSVs stay deterministic.
"""

from __future__ import annotations

import csv
import hashlib
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from numpy.typing import NDArray

from .agent import AgentConfig, EpisodeLog, run_episode, warm_start
from .agent import infer_offline
from .linest import ConfidenceSpec, Estimator, FixedBeta, TheoreticalBeta
from .sfworld import (
    Constant,
    FeatureWorld,
    LinearRamp,
    PiecewiseConstant,
    RewardTask,
    SfOracle,
    drift_value,
    make_random_world,
    make_sphere_task,
)

SNAPSHOT_FORMAT = "optinfer-world-snapshot"
SNAPSHOT_VERSION = 1

_ENV, _NOISE, _AGENT = 0, 1, 2
_REQUIRED = object()


class ConfigError(ValueError):
    """Invalid experiment config; the message names the offending field."""


class DataBudgetError(ConfigError):
    """A requested evaluation budget exceeds the transitions available."""


# -- configuration -------------------------------------------------------------


@dataclass
class AgentSpec:
    """Named behavior cell: a decision rule plus its estimator hyperparameters."""

    name: str
    kind: str  # ucb | ts | random | oracle
    cfg: AgentConfig
    lam: float = 1.0
    rho: float = 1.0


@dataclass
class ExperimentConfig:
    world: dict
    task: dict
    agents: list
    n_episodes: int
    seeds: list
    timing: bool = False
    raw: dict = field(default_factory=dict)

    @property
    def config_hash(self) -> str:
        return hash_config(self.raw)


def _json_fallback(obj):
    if hasattr(obj, "tolist"):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(f"unhashable config value {obj!r}")


def hash_config(raw: dict) -> str:
    blob = json.dumps(raw, sort_keys=True, default=_json_fallback)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _get(section: dict, key: str, path: str, kind=None, default=_REQUIRED):
    name = f"{path}.{key}" if path else key
    if not isinstance(section, dict) or key not in section:
        if default is _REQUIRED:
            raise ConfigError(f"missing field '{name}'")
        return default
    value = section[key]
    if kind is not None:
        try:
            return kind(value)
        except (TypeError, ValueError):
            raise ConfigError(f"field '{name}' has invalid value {value!r}")
    return value


def parse_config(raw: dict) -> ExperimentConfig:
    """Validate a raw config mapping; raises ConfigError naming bad fields."""
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    world = _get(raw, "world", "")
    for key in ("n_states", "n_actions", "d", "gamma", "branching", "feat_bound", "seed"):
        _get(world, key, "world")
    task = _get(raw, "task", "")
    if "z_true" not in task:
        _get(task, "seed", "task")
    _get(task, "noise_sigma", "task")
    agents_raw = _get(raw, "agents", "")
    if not isinstance(agents_raw, dict) or not agents_raw:
        raise ConfigError("field 'agents' must be a nonempty mapping")
    agents = [parse_agent(name, spec) for name, spec in agents_raw.items()]
    run = _get(raw, "run", "")
    n_episodes = _get(run, "n_episodes", "run", int)
    seeds = [int(s) for s in _get(run, "seeds", "run")]
    if not seeds or len(set(seeds)) != len(seeds):
        raise ConfigError("field 'run.seeds' must be nonempty and distinct")
    timing = bool(_get(run, "timing", "run", default=False))
    return ExperimentConfig(
        world=world,
        task=task,
        agents=agents,
        n_episodes=n_episodes,
        seeds=seeds,
        timing=timing,
        raw=raw,
    )


def parse_confidence(spec, path: str) -> ConfidenceSpec:
    if isinstance(spec, (int, float)):
        return FixedBeta(float(spec))
    mode = _get(spec, "mode", path)
    if mode == "fixed":
        return FixedBeta(_get(spec, "beta", path, float))
    if mode == "theoretical":
        return TheoreticalBeta(
            delta=_get(spec, "delta", path, float),
            s_bound=_get(spec, "s_bound", path, float),
            sigma=_get(spec, "sigma", path, float),
        )
    raise ConfigError(f"field '{path}.mode' must be 'fixed' or 'theoretical'")


def parse_agent(name: str, spec: dict) -> AgentSpec:
    path = f"agents.{name}"
    kind = _get(spec, "variant", path)
    lam = float(_get(spec, "lam", path, default=1.0))
    rho = float(_get(spec, "rho", path, default=1.0))
    if kind in ("random", "oracle"):
        return AgentSpec(name=name, kind=kind, cfg=AgentConfig(), lam=lam, rho=rho)
    if kind not in ("ucb", "ts"):
        raise ConfigError(f"field '{path}.variant' must be ucb/ts/random/oracle")
    try:
        cfg = AgentConfig(
            variant=kind,
            candidates=int(_get(spec, "candidates", path, default=128)),
            radius_mult=float(_get(spec, "radius_mult", path, default=2.0)),
            confidence=parse_confidence(
                _get(spec, "confidence", path, default={"mode": "fixed", "beta": 0.1}),
                f"{path}.confidence",
            ),
            ts_sigma=float(_get(spec, "ts_sigma", path, default=0.1)),
            kappa=float(_get(spec, "kappa", path, default=0.0)),
            episodic=bool(_get(spec, "episodic", path, default=False)),
            normalize_z=bool(_get(spec, "normalize_z", path, default=False)),
        )
    except ValueError as exc:
        raise ConfigError(f"invalid agent '{name}': {exc}")
    return AgentSpec(name=name, kind=kind, cfg=cfg, lam=lam, rho=rho)


def build_world(world_cfg: dict) -> FeatureWorld:
    return make_random_world(
        n_states=int(world_cfg["n_states"]),
        n_actions=int(world_cfg["n_actions"]),
        d=int(world_cfg["d"]),
        gamma=float(world_cfg["gamma"]),
        branching=int(world_cfg["branching"]),
        feat_bound=float(world_cfg["feat_bound"]),
        seed=int(world_cfg["seed"]),
        horizon=int(world_cfg["horizon"]) if "horizon" in world_cfg else None,
    )


def _parse_drift(drift_cfg: Optional[dict], z_true: NDArray):
    if drift_cfg is None:
        return Constant()
    kind = _get(drift_cfg, "kind", "task.drift")
    if kind == "linear_ramp":
        return LinearRamp(
            start_z=z_true,
            end_z=np.asarray(_get(drift_cfg, "end_z", "task.drift"), dtype=float),
            burn_in_steps=_get(drift_cfg, "burn_in_steps", "task.drift", int),
            ramp_steps=_get(drift_cfg, "ramp_steps", "task.drift", int),
        )
    if kind == "piecewise":
        entries = _get(drift_cfg, "schedule", "task.drift")
        schedule = tuple((int(e["step"]), np.asarray(e["z"], dtype=float)) for e in entries)
        return PiecewiseConstant(schedule=schedule)
    raise ConfigError("field 'task.drift.kind' must be 'linear_ramp' or 'piecewise'")


def build_task(task_cfg: dict, world: FeatureWorld, oracle: Optional[SfOracle] = None) -> RewardTask:
    noise_sigma = float(task_cfg["noise_sigma"])
    s_bound = float(task_cfg.get("s_bound", 1.0))
    if "z_true" in task_cfg:
        z_true = np.asarray(task_cfg["z_true"], dtype=float)
    else:
        base = make_sphere_task(
            world,
            s_bound=s_bound,
            noise_sigma=noise_sigma,
            seed=int(task_cfg["seed"]),
            min_return=task_cfg.get("min_return"),
            oracle=oracle,
        )
        z_true = base.z_true
    drift = _parse_drift(task_cfg.get("drift"), z_true)
    return RewardTask(z_true=z_true, noise_sigma=noise_sigma, drift=drift, s_bound=s_bound)


# -- run logs -------------------------------------------------------------------


@dataclass
class RunLog:
    run_id: str
    agent: str
    seed: int
    episodes: list
    g_star: list
    step_seconds: Optional[list] = None

    @property
    def g_hat(self) -> NDArray:
        return np.array([ep.g_hat for ep in self.episodes])

    @property
    def regret_inc(self) -> NDArray:
        return np.asarray(self.g_star) - self.g_hat

    @property
    def regret_cum(self) -> NDArray:
        return np.cumsum(self.regret_inc)

    @property
    def labels_cum(self) -> NDArray:
        return np.cumsum([ep.labels_used for ep in self.episodes])


def rng_stream(seed: int, episode: int, channel: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((seed, episode, channel)))


def baseline_random(world: FeatureWorld, task: RewardTask):
    """Behavior that executes a fresh uniform-sphere embedding every step.

    The episode's draws are taken in one block at its first step so the
    oracle can solve them as a single batch; the per-step marginals are
    unchanged and everything remains a pure function of the stream.
    """
    pending: dict = {}

    def choose(est, oracle, state, rng, global_step):
        t = global_step % world.horizon
        if t == 0 or "zs" not in pending:
            g = rng.normal(size=(world.horizon, world.dim))
            zs = task.s_bound * g / np.linalg.norm(g, axis=1, keepdims=True)
            oracle.prepare(zs)
            pending["zs"] = zs
        return pending["zs"][t]

    return choose


def baseline_oracle(task: RewardTask):
    """Privileged behavior executing the true (possibly drifting) embedding."""

    def choose(est, oracle, state, rng, global_step):
        return drift_value(task, global_step)

    return choose


def prewarm_drift(oracle: SfOracle, task: RewardTask, total_steps: int) -> None:
    """Batch-solve every embedding the drift schedule will visit."""
    values = np.stack([drift_value(task, t) for t in range(total_steps)])
    oracle.prepare(np.unique(values, axis=0))


def run_single(
    world: FeatureWorld,
    task: RewardTask,
    spec: AgentSpec,
    n_episodes: int,
    seed: int,
    oracle: Optional[SfOracle] = None,
    timing: bool = False,
    label_gate_enabled: bool = True,
    warm_dataset: Optional[list] = None,
) -> RunLog:
    """One (agent, seed) cell: n_episodes with persistent estimator state.

    The per-episode optimal return G*_k is produced by replaying the episode's
    environment stream under the privileged policy, so an agent that matches
    the oracle's actions collects exactly zero regret.
    """
    oracle = oracle or SfOracle(world)
    prewarm_drift(oracle, task, n_episodes * world.horizon)
    est = Estimator(world.dim, lam=spec.lam, rho=spec.rho)
    if warm_dataset:
        scale = spec.cfg.ts_sigma if spec.kind == "ts" else 1.0
        warm_start(est, warm_dataset, world, scale=scale)
    choose_z = None
    collect = spec.kind in ("ucb", "ts")
    if spec.kind == "random":
        choose_z = baseline_random(world, task)
    elif spec.kind == "oracle":
        choose_z = baseline_oracle(task)
    episodes = []
    g_star = []
    step_seconds: Optional[list] = [] if timing else None
    star_behavior = baseline_oracle(task)
    for k in range(n_episodes):
        t0 = time.perf_counter()
        log = run_episode(
            spec.cfg,
            est,
            oracle,
            world,
            task,
            k,
            env_rng=rng_stream(seed, k, _ENV),
            noise_rng=rng_stream(seed, k, _NOISE),
            agent_rng=rng_stream(seed, k, _AGENT),
            choose_z=choose_z,
            collect_labels=collect,
            label_gate_enabled=label_gate_enabled,
        )
        if step_seconds is not None:
            elapsed = time.perf_counter() - t0
            step_seconds.extend([elapsed / world.horizon] * world.horizon)
        episodes.append(log)
        star = run_episode(
            spec.cfg,
            est,
            oracle,
            world,
            task,
            k,
            env_rng=rng_stream(seed, k, _ENV),
            noise_rng=rng_stream(seed, k, _NOISE),
            agent_rng=rng_stream(seed, k, _AGENT),
            choose_z=star_behavior,
            collect_labels=False,
        )
        g_star.append(star.g_hat)
    return RunLog(
        run_id=f"{spec.name}_s{seed}",
        agent=spec.name,
        seed=seed,
        episodes=episodes,
        g_star=g_star,
        step_seconds=step_seconds,
    )


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    world: FeatureWorld
    task: RewardTask
    runs: list

    def runs_for(self, agent: str) -> list:
        return [r for r in self.runs if r.agent == agent]


def _run_cell(raw_config: dict, agent_name: str, seed: int) -> RunLog:
    config = parse_config(raw_config)
    world = build_world(config.world)
    oracle = SfOracle(world)
    task = build_task(config.task, world, oracle)
    spec = next(a for a in config.agents if a.name == agent_name)
    return run_single(
        world, task, spec, config.n_episodes, seed, oracle=oracle, timing=config.timing
    )


def run_experiment(config: ExperimentConfig, jobs: int = 1) -> ExperimentResult:
    """Run every (agent, seed) cell; output is independent of scheduling."""
    world = build_world(config.world)
    oracle = SfOracle(world)
    task = build_task(config.task, world, oracle)
    cells = [(spec.name, seed) for spec in config.agents for seed in config.seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_run_cell, config.raw, name, seed) for name, seed in cells]
            runs = [f.result() for f in futures]
    else:
        runs = []
        for spec in config.agents:
            for seed in config.seeds:
                runs.append(
                    run_single(
                        world,
                        task,
                        spec,
                        config.n_episodes,
                        seed,
                        oracle=oracle,
                        timing=config.timing,
                    )
                )
    order = {cell: i for i, cell in enumerate(cells)}
    runs.sort(key=lambda r: order[(r.agent, r.seed)])
    return ExperimentResult(config=config, world=world, task=task, runs=runs)


# -- evaluation ------------------------------------------------------------------


def collect_transitions(runlog: RunLog) -> list:
    """Chronological (state, observed-or-None reward) pairs across episodes."""
    out = []
    for ep in runlog.episodes:
        for rec in ep.steps:
            out.append((rec.state, rec.reward))
    return out


def data_quality_eval(
    runlog: RunLog,
    world: FeatureWorld,
    task: RewardTask,
    oracle: SfOracle,
    budgets: list,
) -> list:
    """Refit the task embedding from run prefixes and price the resulting policy.

    Steps the run left unlabeled are labeled here with a fresh deterministic
    noise stream, so passive collectors (the random baseline) are comparable
    to active ones.  Returns rows (budget, expected_return, relative).
    """
    transitions = collect_transitions(runlog)
    relabel_rng = rng_stream(runlog.seed, 0, 9)
    dataset = []
    for state, reward in transitions:
        if reward is None:
            reward = float(world.features[state] @ task.z_true)
            if task.noise_sigma > 0:
                reward += task.noise_sigma * relabel_rng.standard_normal()
        dataset.append((state, reward))
    star = oracle.expected_return(task.z_true, task.z_true)
    rows = []
    for budget in budgets:
        if budget > len(dataset):
            raise DataBudgetError(
                f"budget {budget} exceeds the {len(dataset)} transitions available"
            )
        z_n = infer_offline(dataset[:budget], world)
        ret = oracle.expected_return(z_n, task.z_true)
        rows.append({"budget": int(budget), "return": ret, "relative": ret / star})
    return rows


def replay_label_gate(
    runlog: RunLog,
    world: FeatureWorld,
    kappa: float,
    lam: float = 1.0,
    rho: float = 1.0,
) -> int:
    """Count labels a gate at threshold kappa would request on a fixed trajectory."""
    est = Estimator(world.dim, lam=lam, rho=rho)
    labels = 0
    for state, reward in collect_transitions(runlog):
        phi = world.features[state]
        if est.d_gap(phi) >= kappa:
            if reward is None:
                raise ValueError("replay requires a fully labeled source trajectory")
            est.update(phi, reward)
            labels += 1
    return labels


def timing_probe(
    world: FeatureWorld,
    task: RewardTask,
    specs: list,
    measure_steps: int = 200,
    warmup_steps: int = 100,
) -> list:
    """Mean per-step wall seconds per agent, first `warmup_steps` calls discarded."""
    rows = []
    n_episodes = -(-(warmup_steps + measure_steps) // world.horizon)
    for spec in specs:
        run = run_single(world, task, spec, n_episodes, seed=0, timing=True)
        times = np.asarray(run.step_seconds)[warmup_steps:]
        rows.append({"agent": spec.name, "mean_step_seconds": float(times.mean())})
    return rows


# -- persistence -----------------------------------------------------------------


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def _write_csv(path: Path, header: list, rows: list, config_hash: str) -> None:
    try:
        with open(path, "w", newline="") as fh:
            fh.write(f"# config_hash={config_hash}\n")
            writer = csv.writer(fh)
            writer.writerow(header)
            writer.writerows(rows)
    except OSError as exc:
        raise RuntimeError(f"failed writing {path}: {exc}") from exc


def write_step_csv(path: Path, runlog: RunLog, dim: int, config_hash: str) -> None:
    header = ["run_id", "episode", "step", "state"]
    header += [f"z{i}" for i in range(dim)]
    header += ["labeled", "reward", "d_gap", "mahal_zr", "beta"]
    rows = []
    for ep in runlog.episodes:
        for rec in ep.steps:
            row = [runlog.run_id, rec.episode, rec.t, rec.state]
            row += [_fmt(v) for v in rec.z]
            row += [
                _fmt(rec.labeled),
                _fmt(rec.reward),
                _fmt(rec.d_gap),
                _fmt(rec.mahal_true),
                _fmt(rec.beta),
            ]
            rows.append(row)
    _write_csv(path, header, rows, config_hash)


def write_episode_csv(path: Path, runlog: RunLog, config_hash: str) -> None:
    header = ["run_id", "episode", "G_hat", "G_star", "regret_cum", "labels_cum", "zhat_err"]
    regret_cum = runlog.regret_cum
    labels_cum = runlog.labels_cum
    rows = []
    for k, ep in enumerate(runlog.episodes):
        rows.append(
            [
                runlog.run_id,
                k,
                _fmt(ep.g_hat),
                _fmt(runlog.g_star[k]),
                _fmt(regret_cum[k]),
                int(labels_cum[k]),
                _fmt(ep.zhat_err_end),
            ]
        )
    _write_csv(path, header, rows, config_hash)


def summarize(result: ExperimentResult) -> list:
    """Per-agent per-episode mean/min/max across seeds, recomputable from logs."""
    rows = []
    for spec in result.config.agents:
        runs = result.runs_for(spec.name)
        g = np.stack([r.g_hat for r in runs])  # (seeds, episodes)
        g_star = np.stack([np.asarray(r.g_star) for r in runs])
        regret = np.stack([r.regret_cum for r in runs])
        labels = np.stack([r.labels_cum for r in runs])
        for k in range(g.shape[1]):
            rows.append(
                {
                    "agent": spec.name,
                    "episode": k,
                    "g_hat_mean": float(g[:, k].mean()),
                    "g_hat_min": float(g[:, k].min()),
                    "g_hat_max": float(g[:, k].max()),
                    "g_star_mean": float(g_star[:, k].mean()),
                    "regret_cum_mean": float(regret[:, k].mean()),
                    "regret_cum_min": float(regret[:, k].min()),
                    "regret_cum_max": float(regret[:, k].max()),
                    "labels_cum_mean": float(labels[:, k].mean()),
                }
            )
    return rows


def write_summary_csv(path: Path, result: ExperimentResult) -> None:
    rows = summarize(result)
    header = list(rows[0].keys())
    body = [[_fmt(r[h]) if not isinstance(r[h], str) else r[h] for h in header] for r in rows]
    _write_csv(path, header, body, result.config.config_hash)


def write_timing_csv(path: Path, result: ExperimentResult) -> None:
    header = ["run_id", "agent", "seed", "mean_step_seconds"]
    rows = []
    for run in result.runs:
        if run.step_seconds is None:
            continue
        times = np.asarray(run.step_seconds)
        times = times[min(100, len(times) - 1) :]
        rows.append([run.run_id, run.agent, run.seed, _fmt(times.mean())])
    _write_csv(path, header, rows, result.config.config_hash)


def _drift_to_dict(task: RewardTask) -> dict:
    if isinstance(task.drift, Constant):
        return {"kind": "constant"}
    if isinstance(task.drift, LinearRamp):
        return {
            "kind": "linear_ramp",
            "start_z": task.drift.start_z.tolist() if hasattr(task.drift.start_z, "tolist") else list(task.drift.start_z),
            "end_z": list(np.asarray(task.drift.end_z, dtype=float)),
            "burn_in_steps": task.drift.burn_in_steps,
            "ramp_steps": task.drift.ramp_steps,
        }
    return {
        "kind": "piecewise",
        "schedule": [{"step": int(s), "z": np.asarray(z, dtype=float).tolist()} for s, z in task.drift.schedule],
    }


def write_snapshot(path: Path, result: ExperimentResult) -> None:
    """Self-describing world+task snapshot so a run is replayable byte-for-byte."""
    payload = {
        "format": SNAPSHOT_FORMAT,
        "version": SNAPSHOT_VERSION,
        "config_hash": result.config.config_hash,
        "config": result.config.raw,
        "world": result.world.to_dict(),
        "task": {
            "z_true": result.task.z_true.tolist(),
            "noise_sigma": result.task.noise_sigma,
            "s_bound": result.task.s_bound,
            "drift": _drift_to_dict(result.task),
        },
    }
    try:
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
    except OSError as exc:
        raise RuntimeError(f"failed writing {path}: {exc}") from exc


def load_snapshot(path: Path) -> tuple[FeatureWorld, RewardTask, dict]:
    try:
        with open(path) as fh:
            payload = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read snapshot {path}: {exc}") from exc
    if payload.get("format") != SNAPSHOT_FORMAT:
        raise ConfigError(f"{path} is not a world snapshot")
    world = FeatureWorld.from_dict(payload["world"])
    t = payload["task"]
    z_true = np.asarray(t["z_true"], dtype=float)
    drift_cfg = t["drift"]
    if drift_cfg["kind"] == "constant":
        drift = Constant()
    elif drift_cfg["kind"] == "linear_ramp":
        drift = LinearRamp(
            start_z=np.asarray(drift_cfg["start_z"], dtype=float),
            end_z=np.asarray(drift_cfg["end_z"], dtype=float),
            burn_in_steps=int(drift_cfg["burn_in_steps"]),
            ramp_steps=int(drift_cfg["ramp_steps"]),
        )
    else:
        drift = PiecewiseConstant(
            schedule=tuple(
                (int(e["step"]), np.asarray(e["z"], dtype=float)) for e in drift_cfg["schedule"]
            )
        )
    task = RewardTask(
        z_true=z_true, noise_sigma=float(t["noise_sigma"]), drift=drift, s_bound=float(t["s_bound"])
    )
    return world, task, payload


def persist_experiment(result: ExperimentResult, out_dir: Path) -> list:
    """Write step/episode CSVs per run, the summary, and the world snapshot."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    chash = result.config.config_hash
    dim = result.world.dim
    for run in result.runs:
        step_path = out_dir / f"steps_{run.run_id}.csv"
        write_step_csv(step_path, run, dim, chash)
        written.append(step_path)
        ep_path = out_dir / f"episodes_{run.run_id}.csv"
        write_episode_csv(ep_path, run, chash)
        written.append(ep_path)
    summary_path = out_dir / "summary.csv"
    write_summary_csv(summary_path, result)
    written.append(summary_path)
    snapshot_path = out_dir / "world.json"
    write_snapshot(snapshot_path, result)
    written.append(snapshot_path)
    if result.config.timing:
        timing_path = out_dir / "timing.csv"
        write_timing_csv(timing_path, result)
        written.append(timing_path)
    return written


def read_step_log(path: Path) -> list:
    """Parse a step CSV back into dict rows (comment line skipped)."""
    try:
        with open(path) as fh:
            lines = [ln for ln in fh if not ln.startswith("#")]
    except OSError as exc:
        raise ConfigError(f"cannot read step log {path}: {exc}") from exc
    reader = csv.DictReader(lines)
    rows = []
    for row in reader:
        rows.append(
            {
                "run_id": row["run_id"],
                "episode": int(row["episode"]),
                "step": int(row["step"]),
                "state": int(row["state"]),
                "labeled": row["labeled"] == "1",
                "reward": float(row["reward"]) if row["reward"] else None,
            }
        )
    return rows
