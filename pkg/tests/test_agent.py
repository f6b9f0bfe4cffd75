import numpy as np
import pytest
from scipy.linalg import solve_triangular

from optinfer.agent import (
    AgentConfig,
    SingularDataError,
    infer_offline,
    run_episode,
    select_ts,
    select_ucb,
    step,
    warm_start,
)
from optinfer.linest import Estimator, FixedBeta
from optinfer.sfworld import (
    RewardTask,
    SfOracle,
    make_random_world,
    with_horizon,
)


def small_world(seed=0, **kw):
    defaults = dict(n_states=8, n_actions=2, d=4, gamma=0.85, branching=3, feat_bound=1.0, seed=seed)
    defaults.update(kw)
    return make_random_world(**defaults)


def sphere(dim, rng, radius=1.0):
    g = rng.normal(size=dim)
    return radius * g / np.linalg.norm(g)


def trained_estimator(world, z_r, n, rng, lam=1.0, sigma=0.1):
    est = Estimator(world.dim, lam=lam)
    for _ in range(n):
        s = int(rng.integers(world.n_states))
        phi = world.features[s]
        est.update(phi, float(phi @ z_r) + sigma * rng.standard_normal())
    return est


def streams(seed, episode=0):
    from optinfer.harness import rng_stream

    return rng_stream(seed, episode, 0), rng_stream(seed, episode, 1), rng_stream(seed, episode, 2)


# -- select_ucb -----------------------------------------------------------------


def test_select_ucb_degenerate_candidate_returns_estimate():
    world = small_world(1)
    oracle = SfOracle(world)
    rng = np.random.default_rng(2)
    est = trained_estimator(world, sphere(world.dim, rng), 10, rng)
    cfg = AgentConfig(variant="ucb", candidates=1, confidence=FixedBeta(0.0))
    z = select_ucb(cfg, est, oracle, 0, rng)
    assert np.array_equal(z, est.zhat)


def test_select_ucb_zero_beta_is_pure_exploitation():
    world = small_world(3)
    oracle = SfOracle(world)
    rng = np.random.default_rng(4)
    est = trained_estimator(world, sphere(world.dim, rng), 20, rng)
    cfg = AgentConfig(variant="ucb", candidates=32, confidence=FixedBeta(0.0))
    z = select_ucb(cfg, est, oracle, 2, rng)
    # With beta = 0 the radius collapses, every candidate equals zhat and the
    # score is exactly psi^T zhat.
    assert np.array_equal(z, est.zhat)


def test_select_ucb_score_dominates_estimate_score():
    world = small_world(5)
    oracle = SfOracle(world)
    rng = np.random.default_rng(6)
    est = trained_estimator(world, sphere(world.dim, rng), 15, rng)
    cfg = AgentConfig(variant="ucb", candidates=64, confidence=FixedBeta(0.5))
    beta = est.beta(cfg.confidence)

    def score(z):
        psi, _ = oracle.query(1, z)
        bonus = np.linalg.norm(
            solve_triangular(est.chol, psi, trans="T", lower=False, check_finite=False)
        )
        return psi @ est.zhat + beta * bonus

    z = select_ucb(cfg, est, oracle, 1, rng)
    assert score(z) >= score(est.zhat) - 1e-12


def test_select_ucb_matches_exhaustive_shoot():
    world = small_world(7)
    oracle = SfOracle(world)
    rng = np.random.default_rng(8)
    z_r = sphere(world.dim, rng)
    est = trained_estimator(world, z_r, 30, rng)
    cfg = AgentConfig(variant="ucb", candidates=128, confidence=FixedBeta(0.3))
    beta = est.beta(cfg.confidence)
    state = 4
    z = select_ucb(cfg, est, oracle, state, rng)
    # Independent dense shoot: ten thousand fresh ellipsoid samples.
    shoot = est.sample_ellipsoid(cfg.radius_mult * beta, 10_000, np.random.default_rng(999))
    oracle.prepare(shoot)
    psi = np.stack([oracle.query(state, c)[0] for c in shoot])
    bonus = np.linalg.norm(
        solve_triangular(est.chol, psi.T, trans="T", lower=False, check_finite=False), axis=0
    )
    best = float(np.max(psi @ est.zhat + beta * bonus))
    psi_z, _ = oracle.query(state, z)
    got = psi_z @ est.zhat + beta * np.linalg.norm(
        solve_triangular(est.chol, psi_z, trans="T", lower=False, check_finite=False)
    )
    assert got >= best - 0.01 * abs(best)


def test_ucb_bonus_upper_bounds_inner_products():
    # Cauchy-Schwarz: psi^T zhat + beta ||psi||_{V^-1} >= psi^T z inside the ellipsoid.
    world = small_world(9)
    rng = np.random.default_rng(10)
    est = trained_estimator(world, sphere(world.dim, rng), 25, rng)
    beta = 0.7
    zs = est.sample_ellipsoid(beta, 200, rng)
    for _ in range(20):
        psi = rng.normal(size=world.dim)
        bound = psi @ est.zhat + beta * np.linalg.norm(
            solve_triangular(est.chol, psi, trans="T", lower=False, check_finite=False)
        )
        assert np.all(psi @ zs.T <= bound + 1e-9)


# -- select_ts ------------------------------------------------------------------


def test_select_ts_prior_is_standard_normal():
    est = Estimator(5, lam=1.0)
    cfg = AgentConfig(variant="ts")
    rng = np.random.default_rng(11)
    draws = np.array([select_ts(cfg, est, rng) for _ in range(50_000)])
    assert np.allclose(draws.mean(axis=0), 0.0, atol=0.03)
    assert np.allclose(draws.var(axis=0), 1.0, rtol=0.05)


def test_select_ts_reproducible_under_fixed_seed():
    est = Estimator(4)
    cfg = AgentConfig(variant="ts")
    a = select_ts(cfg, est, np.random.default_rng(42))
    b = select_ts(cfg, est, np.random.default_rng(42))
    assert np.array_equal(a, b)


def test_select_ts_posterior_contracts_with_data():
    rng = np.random.default_rng(12)
    d, sigma = 6, 0.1
    z_r = sphere(d, rng)
    prior = Estimator(d, lam=1.0)
    posterior = Estimator(d, lam=1.0)
    for _ in range(1000):
        phi = rng.normal(size=d) / np.sqrt(d)
        posterior.update(phi / sigma, float(phi @ z_r) / sigma)
    cfg = AgentConfig(variant="ts", ts_sigma=sigma)
    prior_err = np.median(
        [np.linalg.norm(select_ts(cfg, prior, rng) - z_r) for _ in range(500)]
    )
    post_err = np.median(
        [np.linalg.norm(select_ts(cfg, posterior, rng) - z_r) for _ in range(500)]
    )
    assert prior_err >= 5.0 * post_err


# -- step -------------------------------------------------------------------------


def test_step_labels_every_step_at_zero_kappa():
    world = small_world(13)
    oracle = SfOracle(world)
    task = RewardTask(z_true=sphere(world.dim, np.random.default_rng(0)), noise_sigma=0.1)
    est = Estimator(world.dim)
    cfg = AgentConfig(variant="ucb", candidates=8, kappa=0.0)
    env, noise, agent = streams(0)
    state = world.sample_init(env)
    for t in range(10):
        rec, state = step(cfg, est, oracle, world, task, state, t, env, noise, agent, t=t)
        assert rec.labeled
    assert est.count == 10


def test_step_infinite_kappa_never_updates():
    world = small_world(14)
    oracle = SfOracle(world)
    task = RewardTask(z_true=sphere(world.dim, np.random.default_rng(1)), noise_sigma=0.1)
    est = Estimator(world.dim)
    cfg = AgentConfig(variant="ucb", candidates=8, kappa=float("inf"))
    env, noise, agent = streams(1)
    state = world.sample_init(env)
    for t in range(10):
        rec, state = step(cfg, est, oracle, world, task, state, t, env, noise, agent, t=t)
        assert not rec.labeled
    assert est.count == 0
    assert np.array_equal(est.zhat, np.zeros(world.dim))


def test_step_information_gain_decays_on_repeated_state():
    world = make_random_world(
        n_states=1, n_actions=1, d=3, gamma=0.5, branching=1, feat_bound=1.0, seed=15
    )
    oracle = SfOracle(world)
    task = RewardTask(z_true=np.array([0.5, 0.1, -0.2]), noise_sigma=0.05)
    est = Estimator(3)
    cfg = AgentConfig(variant="ucb", candidates=4)
    env, noise, agent = streams(2)
    gaps = []
    state = 0
    for t in range(8):
        rec, state = step(cfg, est, oracle, world, task, state, t, env, noise, agent, t=t)
        gaps.append(rec.d_gap)
    assert np.all(np.diff(gaps) < 0)


# -- run_episode --------------------------------------------------------------------


def test_single_step_episode_return_is_noiseless_reward():
    world = with_horizon(small_world(16), 1)
    oracle = SfOracle(world)
    task = RewardTask(z_true=sphere(world.dim, np.random.default_rng(2)), noise_sigma=0.3)
    cfg = AgentConfig(variant="ucb", candidates=4)
    env, noise, agent = streams(3)
    est = Estimator(world.dim)
    log = run_episode(cfg, est, oracle, world, task, 0, env, noise, agent)
    assert log.g_hat == pytest.approx(float(world.features[log.start_state] @ task.z_true))


def test_privileged_behavior_matches_closed_form_return():
    world = with_horizon(small_world(17), 12)
    oracle = SfOracle(world)
    rng = np.random.default_rng(3)
    task = RewardTask(z_true=sphere(world.dim, rng), noise_sigma=0.0)
    cfg = AgentConfig(variant="ucb", candidates=4)
    est = Estimator(world.dim)

    def privileged(est_, oracle_, state_, rng_, global_step_):
        return task.z_true

    returns = []
    for k in range(600):
        env, noise, agent = streams(100 + k)
        log = run_episode(
            cfg, est, oracle, world, task, 0, env, noise, agent, choose_z=privileged, collect_labels=False
        )
        returns.append(log.g_hat)
    returns = np.asarray(returns)
    expected = oracle.expected_return(task.z_true, task.z_true)
    se = returns.std(ddof=1) / np.sqrt(returns.size)
    assert abs(returns.mean() - expected) <= 3.5 * se


def test_episodic_flag_freezes_latent_within_episode():
    world = with_horizon(small_world(18), 10)
    oracle = SfOracle(world)
    task = RewardTask(z_true=sphere(world.dim, np.random.default_rng(4)), noise_sigma=0.1)
    for episodic in (True, False):
        cfg = AgentConfig(
            variant="ucb", candidates=16, confidence=FixedBeta(0.5), episodic=episodic
        )
        est = Estimator(world.dim)
        env, noise, agent = streams(5)
        log = run_episode(cfg, est, oracle, world, task, 0, env, noise, agent)
        zs = np.stack([rec.z for rec in log.steps])
        constant = np.all(zs == zs[0])
        assert constant == episodic


# -- warm_start -----------------------------------------------------------------------


def test_warm_start_empty_dataset_is_noop():
    world = small_world(19)
    est = Estimator(world.dim)
    warm_start(est, [], world)
    assert est.count == 0
    assert np.array_equal(est.zhat, np.zeros(world.dim))


def test_warm_start_ridge_bias_shrinks_with_lambda():
    world = small_world(20)
    rng = np.random.default_rng(5)
    z_r = sphere(world.dim, rng)
    states = [int(rng.integers(world.n_states)) for _ in range(200)]
    dataset = [(s, float(world.features[s] @ z_r)) for s in states]
    for lam in (1e-2, 1e-4):
        est = Estimator(world.dim, lam=lam)
        warm_start(est, dataset, world)
        phis = world.features[np.array(states)]
        gram = phis.T @ phis
        dense = np.linalg.solve(gram + lam * np.eye(world.dim), phis.T @ np.array([r for _, r in dataset]))
        assert np.allclose(est.zhat, dense, atol=1e-9)
        # Ridge bias of a noiseless fit: lam * ||(G + lam I)^-1 z_r||.
        bound = lam * np.linalg.norm(np.linalg.solve(gram + lam * np.eye(world.dim), z_r))
        assert np.linalg.norm(est.zhat - z_r) <= bound + 1e-9


def test_warm_start_error_shrinks_with_budget():
    world = small_world(21)
    budgets = [32, 128, 512]
    medians = []
    for n in budgets:
        errs = []
        for seed in range(50):
            rng = np.random.default_rng(1000 + seed)
            z_r = sphere(world.dim, rng)
            est = Estimator(world.dim)
            dataset = []
            for _ in range(n):
                s = int(rng.integers(world.n_states))
                dataset.append((s, float(world.features[s] @ z_r) + 0.1 * rng.standard_normal()))
            warm_start(est, dataset, world)
            errs.append(np.linalg.norm(est.zhat - z_r))
        medians.append(np.median(errs))
    assert medians[0] > medians[1] > medians[2]


# -- infer_offline -----------------------------------------------------------------------


def test_infer_offline_recovers_task_exactly_when_noiseless():
    world = small_world(22)
    rng = np.random.default_rng(6)
    z_r = sphere(world.dim, rng)
    dataset = [(s, float(world.features[s] @ z_r)) for s in range(world.n_states)] * 3
    z = infer_offline(dataset, world, ridge=0.0)
    assert np.linalg.norm(z - z_r) <= 1e-8


def test_infer_offline_singular_guard():
    world = small_world(23)
    dataset = [(2, 0.4)] * 10
    with pytest.raises(SingularDataError):
        infer_offline(dataset, world, ridge=0.0)
    z = infer_offline(dataset, world)  # default ridge keeps it finite
    assert np.all(np.isfinite(z))


def test_infer_offline_error_within_bootstrap_envelope():
    world = small_world(24)
    rng = np.random.default_rng(7)
    z_r = sphere(world.dim, rng)
    n = 10_000
    states = rng.integers(world.n_states, size=n)
    rewards = world.features[states] @ z_r + 0.1 * rng.standard_normal(n)
    dataset = list(zip(states.tolist(), rewards.tolist()))
    z_hat = infer_offline(dataset, world)
    # Resampling oracle: bootstrap the fit, take a generous quantile of the
    # deviation around the point estimate as the sampling-error envelope.
    boot_errs = []
    for _ in range(300):
        idx = rng.integers(n, size=n)
        boot = [(int(states[i]), float(rewards[i])) for i in idx]
        boot_errs.append(np.linalg.norm(infer_offline(boot, world) - z_hat))
    envelope = np.quantile(boot_errs, 0.995)
    assert np.linalg.norm(z_hat - z_r) <= envelope
