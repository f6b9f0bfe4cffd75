"""Shared synthetic experiment suites.

Each suite is a deterministic factory from a pair seed to (world, task,
oracle).  The default suite is the workhorse for the regret, identification
and label-budget studies; lighter variants keep the slower per-step and
drift studies inside their runtime budgets.  Tasks are drawn on the unit
sphere with a positive floor on the optimal expected return, so
oracle-relative performance ratios are well defined.
"""

from __future__ import annotations

import numpy as np

from .sfworld import (
    FeatureWorld,
    LinearRamp,
    RewardTask,
    SfOracle,
    make_random_world,
    make_sphere_task,
)

_WORLD_SEED = 1000
_TASK_SEED = 2000
_DRIFT_SEED = 3000


def default_suite(pair_seed: int) -> tuple[FeatureWorld, RewardTask, SfOracle]:
    """20 states, 4 actions, d=8, gamma=0.95, H=30, sigma=0.1."""
    world = make_random_world(
        n_states=20,
        n_actions=4,
        d=8,
        gamma=0.95,
        horizon=30,
        branching=4,
        feat_bound=1.0,
        seed=_WORLD_SEED + pair_seed,
    )
    oracle = SfOracle(world)
    task = make_sphere_task(
        world,
        s_bound=1.0,
        noise_sigma=0.1,
        seed=_TASK_SEED + pair_seed,
        min_return=1.0,
        oracle=oracle,
    )
    return world, task, oracle


def light_suite(pair_seed: int) -> tuple[FeatureWorld, RewardTask, SfOracle]:
    """Smaller world for per-step variant comparisons: d=4, gamma=0.9."""
    world = make_random_world(
        n_states=10,
        n_actions=3,
        d=4,
        gamma=0.9,
        horizon=30,
        branching=3,
        feat_bound=1.0,
        seed=_WORLD_SEED + pair_seed,
    )
    oracle = SfOracle(world)
    task = make_sphere_task(
        world,
        s_bound=1.0,
        noise_sigma=0.1,
        seed=_TASK_SEED + pair_seed,
        min_return=0.8,
        oracle=oracle,
    )
    return world, task, oracle


def drift_suite(
    pair_seed: int, burn_in_steps: int = 300, ramp_steps: int = 300
) -> tuple[FeatureWorld, RewardTask, SfOracle]:
    """Light world with a linear ramp between two sphere tasks after burn-in."""
    world, base, oracle = light_suite(pair_seed)
    rng = np.random.default_rng(_DRIFT_SEED + pair_seed)
    end = rng.normal(size=world.dim)
    end /= np.linalg.norm(end)
    drift = LinearRamp(
        start_z=base.z_true,
        end_z=end,
        burn_in_steps=burn_in_steps,
        ramp_steps=ramp_steps,
    )
    task = RewardTask(z_true=base.z_true, noise_sigma=0.1, drift=drift, s_bound=1.0)
    return world, task, oracle


def coverage_suite(pair_seed: int = 0) -> tuple[FeatureWorld, RewardTask, SfOracle]:
    """Long-horizon world for confidence-coverage runs: H=100, d=6.

    The task norm equals s_bound exactly, so the theoretical radius uses the
    true norm bound.
    """
    world = make_random_world(
        n_states=10,
        n_actions=2,
        d=6,
        gamma=0.9,
        horizon=100,
        branching=3,
        feat_bound=1.0,
        seed=_WORLD_SEED + pair_seed,
    )
    oracle = SfOracle(world)
    task = make_sphere_task(
        world, s_bound=1.0, noise_sigma=0.1, seed=_TASK_SEED + pair_seed, oracle=oracle
    )
    return world, task, oracle
