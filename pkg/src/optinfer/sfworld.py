"""Synthetic finite worlds with linear rewards and an exact successor-feature oracle.

A FeatureWorld is a finite MDP whose states carry feature vectors; rewards are
inner products of features with a (possibly drifting) task embedding.  The
SfOracle computes, for any task vector z, the greedy stationary policy for the
scalar reward phi(s)^T z together with its exact finite-horizon successor
features, so that expected discounted returns are available in closed form.
All generation and dynamic programming is a pure function of explicit seeds.
"""

from __future__ import annotations

import threading
from collections import OrderedDict
from dataclasses import dataclass, field, replace
from typing import Optional, Union

import numpy as np
from numpy.typing import NDArray


class WorldConfigError(ValueError):
    """Degenerate world configuration or failed dynamic-programming run."""


@dataclass
class FeatureWorld:
    """Finite MDP with per-state features; immutable after construction."""

    n_states: int
    n_actions: int
    transition: NDArray  # (S, A, S) rows sum to 1
    init_dist: NDArray  # (S,)
    gamma: float
    horizon: int
    features: NDArray  # (S, d)
    feat_bound: float

    def __post_init__(self):
        s, a = self.n_states, self.n_actions
        if self.transition.shape != (s, a, s):
            raise WorldConfigError(f"transition must have shape {(s, a, s)}")
        if self.init_dist.shape != (s,):
            raise WorldConfigError(f"init_dist must have shape {(s,)}")
        if not 0 <= self.gamma < 1:
            raise WorldConfigError(f"gamma must be in [0, 1), got {self.gamma}")
        if self.horizon < 1:
            raise WorldConfigError(f"horizon must be positive, got {self.horizon}")
        if np.any(self.transition < 0) or np.any(self.init_dist < 0):
            raise WorldConfigError("negative probabilities")
        if np.max(np.abs(self.transition.sum(axis=2) - 1.0)) > 1e-12:
            raise WorldConfigError("transition rows must sum to 1")
        if abs(self.init_dist.sum() - 1.0) > 1e-12:
            raise WorldConfigError("init_dist must sum to 1")
        norms = np.linalg.norm(self.features, axis=1)
        if np.any(norms > self.feat_bound + 1e-12):
            raise WorldConfigError("feature norms exceed feat_bound")
        # Cumulative distributions for O(log S) sampling in hot loops.
        self._trans_cdf = np.cumsum(self.transition, axis=2)
        self._init_cdf = np.cumsum(self.init_dist)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def sample_init(self, rng: np.random.Generator) -> int:
        idx = int(np.searchsorted(self._init_cdf, rng.random(), side="right"))
        return min(idx, self.n_states - 1)

    def sample_next(self, state: int, action: int, rng: np.random.Generator) -> int:
        cdf = self._trans_cdf[state, action]
        idx = int(np.searchsorted(cdf, rng.random(), side="right"))
        return min(idx, self.n_states - 1)

    def to_dict(self) -> dict:
        return {
            "n_states": self.n_states,
            "n_actions": self.n_actions,
            "transition": self.transition.tolist(),
            "init_dist": self.init_dist.tolist(),
            "gamma": self.gamma,
            "horizon": self.horizon,
            "features": self.features.tolist(),
            "feat_bound": self.feat_bound,
        }

    @classmethod
    def from_dict(cls, state: dict) -> "FeatureWorld":
        return cls(
            n_states=int(state["n_states"]),
            n_actions=int(state["n_actions"]),
            transition=np.asarray(state["transition"], dtype=float),
            init_dist=np.asarray(state["init_dist"], dtype=float),
            gamma=float(state["gamma"]),
            horizon=int(state["horizon"]),
            features=np.asarray(state["features"], dtype=float),
            feat_bound=float(state["feat_bound"]),
        )


def default_horizon(gamma: float, tail: float = 1e-4) -> int:
    """Smallest H with gamma^H <= tail, the point where truncation is negligible."""
    if gamma == 0.0:
        return 1
    return int(np.ceil(np.log(tail) / np.log(gamma)))


def make_random_world(
    n_states: int,
    n_actions: int,
    d: int,
    gamma: float,
    branching: int,
    feat_bound: float,
    seed: int,
    horizon: Optional[int] = None,
) -> FeatureWorld:
    """Generate a random world: sparse Dirichlet transitions, spherical features.

    Each (state, action) reaches `branching` distinct successors with
    Dirichlet(1) probabilities; each feature vector points in a uniformly
    random direction with radius drawn uniformly in (0, feat_bound].
    """
    if not (n_states >= 1 and n_actions >= 1 and d >= 1):
        raise WorldConfigError("n_states, n_actions and d must be positive")
    if not 1 <= branching <= n_states:
        raise WorldConfigError(f"branching must be in [1, {n_states}], got {branching}")
    if not feat_bound > 0:
        raise WorldConfigError("feat_bound must be positive")
    rng = np.random.default_rng(seed)
    transition = np.zeros((n_states, n_actions, n_states))
    for s in range(n_states):
        for a in range(n_actions):
            succ = rng.choice(n_states, size=branching, replace=False)
            if branching == 1:
                transition[s, a, succ] = 1.0
            else:
                transition[s, a, succ] = rng.dirichlet(np.ones(branching))
    init_dist = rng.dirichlet(np.ones(n_states))
    dirs = rng.normal(size=(n_states, d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    radii = feat_bound * rng.random(n_states)
    features = dirs * radii[:, None]
    if horizon is None:
        horizon = default_horizon(gamma)
    return FeatureWorld(
        n_states=n_states,
        n_actions=n_actions,
        transition=transition,
        init_dist=init_dist,
        gamma=gamma,
        horizon=horizon,
        features=features,
        feat_bound=feat_bound,
    )


# -- task definitions ---------------------------------------------------------


@dataclass(frozen=True)
class Constant:
    pass


@dataclass(frozen=True)
class PiecewiseConstant:
    """Step schedule of (step, z) pairs; entry i applies from its step onward."""

    schedule: tuple

    def __post_init__(self):
        if len(self.schedule) == 0:
            raise ValueError("schedule must be nonempty")
        steps = [int(s) for s, _ in self.schedule]
        if steps != sorted(steps) or steps[0] != 0:
            raise ValueError("schedule steps must be sorted and start at 0")


@dataclass(frozen=True)
class LinearRamp:
    start_z: NDArray
    end_z: NDArray
    burn_in_steps: int
    ramp_steps: int

    def __post_init__(self):
        if self.burn_in_steps < 0 or self.ramp_steps < 1:
            raise ValueError("burn_in_steps must be >= 0 and ramp_steps >= 1")


Drift = Union[Constant, PiecewiseConstant, LinearRamp]


@dataclass
class RewardTask:
    """Linear reward r(s) = phi(s)^T z(t) + Gaussian noise, z(t) set by `drift`."""

    z_true: NDArray
    noise_sigma: float = 0.0
    drift: Drift = field(default_factory=Constant)
    s_bound: Optional[float] = None

    def __post_init__(self):
        self.z_true = np.asarray(self.z_true, dtype=float)
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be nonnegative")
        norms = [np.linalg.norm(self.z_true)]
        if isinstance(self.drift, PiecewiseConstant):
            norms += [np.linalg.norm(z) for _, z in self.drift.schedule]
        elif isinstance(self.drift, LinearRamp):
            norms += [np.linalg.norm(self.drift.start_z), np.linalg.norm(self.drift.end_z)]
        if self.s_bound is None:
            self.s_bound = float(max(norms))
        elif max(norms) > self.s_bound + 1e-12:
            raise ValueError("task embedding norm exceeds s_bound")


def drift_value(task: RewardTask, step: int) -> NDArray:
    """True task embedding in effect at the given global step."""
    if step < 0:
        raise ValueError("step must be nonnegative")
    drift = task.drift
    if isinstance(drift, Constant):
        return task.z_true
    if isinstance(drift, PiecewiseConstant):
        value = drift.schedule[0][1]
        for start, z in drift.schedule:
            if step >= start:
                value = z
            else:
                break
        return np.asarray(value, dtype=float)
    if isinstance(drift, LinearRamp):
        start = np.asarray(drift.start_z, dtype=float)
        end = np.asarray(drift.end_z, dtype=float)
        alpha = (step - drift.burn_in_steps) / drift.ramp_steps
        alpha = min(max(alpha, 0.0), 1.0)
        return (1.0 - alpha) * start + alpha * end
    raise TypeError(f"unknown drift {drift!r}")


def reward_sample(
    task: RewardTask,
    world: FeatureWorld,
    state: int,
    step: int,
    rng: np.random.Generator,
) -> float:
    """Noisy reward observation at `state` under the task in effect at `step`."""
    mean = float(world.features[state] @ drift_value(task, step))
    if task.noise_sigma == 0.0:
        return mean
    return mean + task.noise_sigma * rng.standard_normal()


def reward_true(task: RewardTask, world: FeatureWorld, state: int, step: int) -> float:
    """Noiseless reward, used for return and regret accounting."""
    return float(world.features[state] @ drift_value(task, step))


# -- dynamic programming -------------------------------------------------------


def optimal_policies(
    world: FeatureWorld, z_batch: NDArray, vi_tol: float = 1e-8
) -> NDArray:
    """Greedy stationary policies for rewards phi^T z, one column per task.

    Value iteration on V of shape (S, K) until the sup-norm change drops
    below vi_tol; ties in the final greedy step break to the lowest action
    index.  Returns an integer array of shape (K, S).
    """
    z_batch = np.atleast_2d(np.asarray(z_batch, dtype=float))
    s, a = world.n_states, world.n_actions
    rewards = world.features @ z_batch.T  # (S, K)
    p2 = world.transition.reshape(s * a, s)
    v = np.zeros_like(rewards)
    span = float(np.abs(rewards).max()) / (1.0 - world.gamma) + 1.0
    if world.gamma == 0.0:
        max_iters = 2
    else:
        max_iters = max(500, int(4 * np.log(span / (vi_tol * (1.0 - world.gamma))) / -np.log(world.gamma)))
    for _ in range(max_iters):
        q = (p2 @ v).reshape(s, a, -1)
        v_new = rewards + world.gamma * q.max(axis=1)
        delta = float(np.abs(v_new - v).max())
        v = v_new
        if delta < vi_tol:
            break
    else:
        raise WorldConfigError(f"value iteration did not converge in {max_iters} iterations")
    q = (p2 @ v).reshape(s, a, -1)
    return np.argmax(q, axis=1).T.astype(np.int64)  # (K, S)


def optimal_policy(world: FeatureWorld, z: NDArray, vi_tol: float = 1e-8) -> NDArray:
    """Greedy stationary policy for the scalar reward phi^T z, shape (S,)."""
    return optimal_policies(world, np.asarray(z, dtype=float)[None, :], vi_tol)[0]


def successor_features_batch(world: FeatureWorld, policies: NDArray) -> tuple[NDArray, NDArray]:
    """H-step discounted feature sums under each policy.

    Backward recursion over the horizon:
        psi_1(s, a)   = phi(s)
        psi_h+1(s, a) = phi(s) + gamma * sum_s' P(s'|s,a) psi_h(s', pi(s'))

    Only the state-level tables are iterated (under pi the recursion closes
    on them); the (state, action) table is expanded once at the final stage.
    Returns (psi_sa, psi_s) with shapes (K, S, A, d) and (K, S, d).
    """
    policies = np.atleast_2d(np.asarray(policies, dtype=np.int64))
    k, s = policies.shape
    phi = world.features  # (S, d)
    if world.horizon == 1:
        psi_sa = np.broadcast_to(phi[None, :, None, :], (k, s, world.n_actions, world.dim))
        return np.array(psi_sa), np.tile(phi, (k, 1, 1))
    # On-policy transition kernels, one (S, S') matrix per task.
    p_pi = world.transition[np.arange(s)[None, :], policies]  # (K, S, S')
    psi_s = np.tile(phi, (k, 1, 1))  # stage 1
    for _ in range(world.horizon - 2):
        psi_s = phi[None, :, :] + world.gamma * (p_pi @ psi_s)
    # Final stage: expand over actions from the stage H-1 state table.
    future = np.tensordot(world.transition, psi_s, axes=([2], [1]))  # (S, A, K, d)
    psi_sa = phi[None, :, None, :] + world.gamma * future.transpose(2, 0, 1, 3)
    psi_s_final = np.take_along_axis(psi_sa, policies[:, :, None, None], axis=2)[:, :, 0, :]
    return psi_sa, psi_s_final


def successor_features(world: FeatureWorld, policy: NDArray) -> tuple[NDArray, NDArray]:
    """Successor-feature tables for one policy: ((S, A, d), (S, d))."""
    psi_sa, psi_s = successor_features_batch(world, np.asarray(policy, dtype=np.int64)[None, :])
    return psi_sa[0], psi_s[0]


@dataclass
class _CacheEntry:
    policy: NDArray
    psi_sa: NDArray
    psi_s: NDArray


class SfOracle:
    """Memoized policy/successor-feature provider for arbitrary task vectors.

    Entries are keyed by the exact bit pattern of z and evicted LRU-style
    beyond `capacity`.  The internal lock makes concurrent queries
    linearizable; results are identical to sequential execution because
    entries are immutable once inserted.
    """

    def __init__(self, world: FeatureWorld, vi_tol: float = 1e-8, capacity: int = 4096):
        self.world = world
        self.vi_tol = vi_tol
        self.capacity = capacity
        self.hits = 0
        self.misses = 0
        self._cache: OrderedDict[bytes, _CacheEntry] = OrderedDict()
        self._lock = threading.Lock()

    @staticmethod
    def _key(z: NDArray) -> bytes:
        return np.ascontiguousarray(z, dtype=float).tobytes()

    def prepare(self, z_batch: NDArray) -> None:
        """Ensure every row of z_batch is cached, solving misses in one batch."""
        z_batch = np.atleast_2d(np.asarray(z_batch, dtype=float))
        with self._lock:
            missing_idx = []
            missing_keys = []
            seen = set()
            for i in range(z_batch.shape[0]):
                key = self._key(z_batch[i])
                if key not in self._cache and key not in seen:
                    missing_idx.append(i)
                    missing_keys.append(key)
                    seen.add(key)
        if not missing_idx:
            return
        zs = z_batch[missing_idx]
        policies = optimal_policies(self.world, zs, self.vi_tol)
        psi_sa, psi_s = successor_features_batch(self.world, policies)
        with self._lock:
            for j, key in enumerate(missing_keys):
                self._insert(key, _CacheEntry(policies[j], psi_sa[j], psi_s[j]))

    def _insert(self, key: bytes, entry: _CacheEntry) -> None:
        self._cache[key] = entry
        self._cache.move_to_end(key)
        while len(self._cache) > self.capacity:
            self._cache.popitem(last=False)

    def _lookup(self, z: NDArray) -> _CacheEntry:
        key = self._key(z)
        with self._lock:
            entry = self._cache.get(key)
            if entry is not None:
                self._cache.move_to_end(key)
                self.hits += 1
                return entry
            self.misses += 1
        policy = optimal_policies(self.world, np.asarray(z, dtype=float)[None, :], self.vi_tol)[0]
        psi_sa, psi_s = successor_features_batch(self.world, policy[None, :])
        entry = _CacheEntry(policy, psi_sa[0], psi_s[0])
        with self._lock:
            self._insert(key, entry)
        return entry

    def query(self, state: int, z: NDArray) -> tuple[NDArray, int]:
        """State-level successor features psi(state, z) and the greedy action."""
        entry = self._lookup(z)
        return entry.psi_s[state], int(entry.policy[state])

    def policy(self, z: NDArray) -> NDArray:
        return self._lookup(z).policy

    def psi_states(self, z: NDArray) -> NDArray:
        """State-level successor-feature table psi(., z) of shape (S, d)."""
        return self._lookup(z).psi_s

    def expected_return(self, z_exec: NDArray, z_reward: NDArray) -> float:
        """Closed-form E_{s0~mu0}[psi(s0, z_exec)^T z_reward]."""
        psi_s = self._lookup(z_exec).psi_s
        return float(self.world.init_dist @ (psi_s @ np.asarray(z_reward, dtype=float)))


def make_sphere_task(
    world: FeatureWorld,
    s_bound: float,
    noise_sigma: float,
    seed: int,
    min_return: Optional[float] = None,
    oracle: Optional[SfOracle] = None,
    max_tries: int = 64,
) -> RewardTask:
    """Draw z_true uniformly from the radius-s_bound sphere.

    With `min_return`, redraws deterministically until the optimal expected
    return from the initial distribution is at least that floor, so that
    oracle-relative performance ratios stay well defined.
    """
    rng = np.random.default_rng(seed)
    oracle = oracle or SfOracle(world)
    for _ in range(max_tries):
        z = rng.normal(size=world.dim)
        z = s_bound * z / np.linalg.norm(z)
        if min_return is None or oracle.expected_return(z, z) >= min_return:
            return RewardTask(z_true=z, noise_sigma=noise_sigma, s_bound=s_bound)
    raise WorldConfigError(f"no task met the return floor {min_return} in {max_tries} draws")


def with_horizon(world: FeatureWorld, horizon: int) -> FeatureWorld:
    """Copy of the world with a different episode length."""
    return replace(world, horizon=horizon)
