"""Online task-inference decision rules.

Two selection variants over the estimator's confidence geometry:

  * ucb: random-shooting maximization of the optimistic score
         psi(s, z)^T zhat + beta * ||psi(s, z)||_{V^{-1}}
    over candidates drawn from the confidence ellipsoid (the estimate itself
    is always a candidate, so exploitation is never sampled away).
  * ts: a single draw from the Gaussian posterior N(zhat, V^{-1}), where the
    estimator is fed scaled data (phi/sigma, r/sigma).

Both run inside a shared episode engine that handles acting through the
oracle's policies, information-gain gated reward labeling, and per-step
bookkeeping.  Selection can be per-step or frozen at episode starts.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from numpy.typing import NDArray
from scipy.linalg import solve_triangular

from .linest import ConfidenceSpec, Estimator, FixedBeta
from .sfworld import (
    FeatureWorld,
    RewardTask,
    SfOracle,
    drift_value,
    reward_sample,
    reward_true,
)


class SingularDataError(ValueError):
    """Offline inference hit a singular second-moment matrix with no ridge."""


@dataclass
class AgentConfig:
    variant: str = "ucb"  # "ucb" or "ts"
    candidates: int = 128
    radius_mult: float = 2.0
    confidence: ConfidenceSpec = field(default_factory=lambda: FixedBeta(0.1))
    ts_sigma: float = 0.1
    kappa: float = 0.0
    episodic: bool = False
    normalize_z: bool = False

    def __post_init__(self):
        if self.variant not in ("ucb", "ts"):
            raise ValueError(f"variant must be 'ucb' or 'ts', got {self.variant!r}")
        if self.candidates < 1:
            raise ValueError("candidates must be >= 1")
        if self.radius_mult <= 0:
            raise ValueError("radius_mult must be positive")
        if self.kappa < 0:
            raise ValueError("kappa must be nonnegative")
        if self.ts_sigma <= 0:
            raise ValueError("ts_sigma must be positive")


@dataclass
class StepRecord:
    episode: int
    t: int
    global_step: int
    state: int
    z: NDArray
    action: int
    labeled: bool
    reward: Optional[float]
    reward_true: float
    d_gap: float
    mahal_true: float
    beta: float
    zhat_err: float


@dataclass
class EpisodeLog:
    episode: int
    start_state: int
    g_hat: float
    steps: list

    @property
    def labels_used(self) -> int:
        return sum(1 for s in self.steps if s.labeled)

    @property
    def zhat_err_end(self) -> float:
        return self.steps[-1].zhat_err


def select_ucb(
    cfg: AgentConfig,
    est: Estimator,
    oracle: SfOracle,
    state: int,
    rng: np.random.Generator,
) -> NDArray:
    """Optimistic candidate with the best score; ties keep the first hit."""
    beta = est.beta(cfg.confidence)
    cands = est.sample_ellipsoid(cfg.radius_mult * beta, cfg.candidates, rng)
    cands = np.vstack([est.zhat[None, :], cands])
    oracle.prepare(cands)
    psi = np.stack([oracle.query(state, z)[0] for z in cands])  # (K, d)
    bonus = np.linalg.norm(
        solve_triangular(est.chol, psi.T, trans="T", lower=False, check_finite=False), axis=0
    )
    scores = psi @ est.zhat + beta * bonus
    return cands[int(np.argmax(scores))]


def select_ts(cfg: AgentConfig, est: Estimator, rng: np.random.Generator) -> NDArray:
    """One posterior draw; the estimator must carry 1/ts_sigma-scaled data."""
    return est.sample_posterior(rng)


def _to_oracle(cfg: AgentConfig, z: NDArray) -> NDArray:
    if cfg.normalize_z:
        norm = np.linalg.norm(z)
        if norm > 0:
            return z / norm
    return z


def step(
    cfg: AgentConfig,
    est: Estimator,
    oracle: SfOracle,
    world: FeatureWorld,
    task: RewardTask,
    state: int,
    global_step: int,
    env_rng: np.random.Generator,
    noise_rng: np.random.Generator,
    agent_rng: np.random.Generator,
    episode: int = 0,
    t: int = 0,
    z_reuse: Optional[NDArray] = None,
    label_gate_enabled: bool = True,
) -> tuple[StepRecord, int]:
    """One interaction step; mutates `est` in place when a label is taken.

    `z_reuse` carries the episode's frozen selection for the episodic
    variant; when None, selection runs per the configured variant.
    """
    if z_reuse is not None:
        z = z_reuse
    elif cfg.variant == "ucb":
        z = select_ucb(cfg, est, oracle, state, agent_rng)
    else:
        z = select_ts(cfg, est, agent_rng)

    _, action = oracle.query(state, _to_oracle(cfg, z))
    next_state = world.sample_next(state, action, env_rng)

    phi = world.features[state]
    gap = est.d_gap(phi)
    wants_label = (not label_gate_enabled) or gap >= cfg.kappa
    reward: Optional[float] = None
    if wants_label:
        reward = reward_sample(task, world, state, global_step, noise_rng)
        if cfg.variant == "ts":
            est.update(phi / cfg.ts_sigma, reward / cfg.ts_sigma)
        else:
            est.update(phi, reward)
    z_r = drift_value(task, global_step)
    record = StepRecord(
        episode=episode,
        t=t,
        global_step=global_step,
        state=state,
        z=z,
        action=action,
        labeled=wants_label,
        reward=reward,
        reward_true=reward_true(task, world, state, global_step),
        d_gap=gap,
        mahal_true=est.mahalanobis(z_r),
        beta=est.beta(cfg.confidence),
        zhat_err=float(np.linalg.norm(est.zhat - z_r)),
    )
    return record, next_state


def run_episode(
    cfg: AgentConfig,
    est: Estimator,
    oracle: SfOracle,
    world: FeatureWorld,
    task: RewardTask,
    episode: int,
    env_rng: np.random.Generator,
    noise_rng: np.random.Generator,
    agent_rng: np.random.Generator,
    choose_z: Optional[Callable] = None,
    collect_labels: bool = True,
    label_gate_enabled: bool = True,
) -> EpisodeLog:
    """One horizon-length episode; returns the log of the realized trajectory.

    Returns are accounted with noiseless rewards, while the estimator only
    ever sees the noisy labels.  `choose_z` overrides variant selection (used
    by the harness baselines, which also disable label collection).
    """
    state = world.sample_init(env_rng)
    records = []
    g_hat = 0.0
    episode_z: Optional[NDArray] = None
    for t in range(world.horizon):
        global_step = episode * world.horizon + t
        if choose_z is not None:
            z_override: Optional[NDArray] = np.asarray(
                choose_z(est, oracle, state, agent_rng, global_step), dtype=float
            )
        elif cfg.episodic and t > 0:
            z_override = episode_z
        else:
            z_override = None
        if not collect_labels:
            # Baseline path: act and log, never touch the estimator.
            z = z_override
            _, action = oracle.query(state, _to_oracle(cfg, z))
            next_state = world.sample_next(state, action, env_rng)
            z_r = drift_value(task, global_step)
            record = StepRecord(
                episode=episode,
                t=t,
                global_step=global_step,
                state=state,
                z=z,
                action=action,
                labeled=False,
                reward=None,
                reward_true=reward_true(task, world, state, global_step),
                d_gap=est.d_gap(world.features[state]),
                mahal_true=est.mahalanobis(z_r),
                beta=est.beta(cfg.confidence),
                zhat_err=float(np.linalg.norm(est.zhat - z_r)),
            )
        else:
            record, next_state = step(
                cfg,
                est,
                oracle,
                world,
                task,
                state,
                global_step,
                env_rng,
                noise_rng,
                agent_rng,
                episode=episode,
                t=t,
                z_reuse=z_override,
                label_gate_enabled=label_gate_enabled,
            )
        if t == 0:
            episode_z = record.z
        g_hat += (world.gamma**t) * record.reward_true
        records.append(record)
        state = next_state
    return EpisodeLog(episode=episode, start_state=records[0].state, g_hat=g_hat, steps=records)


def warm_start(
    est: Estimator,
    dataset: list,
    world: FeatureWorld,
    scale: float = 1.0,
) -> None:
    """Absorb labeled (state, reward) pairs in order; `scale` fits TS estimators."""
    for state, reward in dataset:
        est.update(world.features[state] / scale, reward / scale)


def infer_offline(
    dataset: list,
    world: FeatureWorld,
    ridge: Optional[float] = None,
) -> NDArray:
    """Batch task inference: solve (E[phi phi^T] + ridge*I) z = E[phi r].

    The default ridge is a vanishing fraction of the moment trace, just
    enough to guard against rank deficiency; ridge=0 requests the exact
    solve and raises SingularDataError when the moment matrix is singular.
    """
    if len(dataset) == 0:
        raise ValueError("dataset must be nonempty")
    states = np.array([s for s, _ in dataset], dtype=np.int64)
    rewards = np.array([r for _, r in dataset], dtype=float)
    phis = world.features[states]
    moment = phis.T @ phis / len(dataset)
    target = phis.T @ rewards / len(dataset)
    if ridge is None:
        ridge = 1e-10 * np.trace(moment) / world.dim
    system = moment + ridge * np.eye(world.dim)
    try:
        # Cholesky doubles as the positive-definiteness test.
        chol = np.linalg.cholesky(system)
    except np.linalg.LinAlgError as exc:
        raise SingularDataError(
            "second-moment matrix is singular; pass a positive ridge"
        ) from exc
    y = solve_triangular(chol, target, lower=True, check_finite=False)
    return solve_triangular(chol, y, trans="T", lower=True, check_finite=False)
