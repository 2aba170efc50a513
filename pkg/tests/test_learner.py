import math

import numpy as np
import pytest

from hierexplore import autodiff as ad
from hierexplore.errors import ConfigError, NumericError
from hierexplore.global_planner import ModelParams
from hierexplore.learner import (LOG_FIELDS, PPOConfig, RewardConfig, Trajectory, collect_rollout,
                                 gae, grad_check, log_csv, policy_distribution, ppo_loss,
                                 ppo_update, step_reward, train, _flatten)
from hierexplore.sim import Episode, SimConfig, generate_world

WORLD = generate_world(0, "small")


def episode(seed=0):
    return Episode(WORLD, SimConfig(), seed)


@pytest.fixture(scope="module")
def short_traj():
    cfg = PPOConfig(steps_per_episode=3)
    return collect_rollout(episode(), ModelParams.initialize(0), cfg, seed=1)


# -- reward --------------------------------------------------------------------------

def test_reward_examples():
    cfg = RewardConfig()
    assert step_reward(50, 50, cfg) == -1
    assert step_reward(100, 120, cfg) == 39
    assert step_reward(10, 500, RewardConfig(lam=0)) == -1


def test_config_validation():
    with pytest.raises(ConfigError):
        RewardConfig(r_time=0)
    with pytest.raises(ConfigError):
        RewardConfig(lam=-1)
    for kw in [dict(clip_ratio=0), dict(clip_ratio=1), dict(gamma=0), dict(gamma=1.1),
               dict(learning_rate=-1), dict(reward_scale=0), dict(gae_lambda=2)]:
        with pytest.raises(ConfigError):
            PPOConfig(**kw)


# -- policy head ---------------------------------------------------------------------

def test_policy_examples():
    s = policy_distribution([[0.0, 0.0]])
    np.testing.assert_allclose(s.probs[0], [0.5, 0.5])
    s = policy_distribution([[0.0, 0.0], [5.0, 0.0]], taken=[False, False],
                            rng=np.random.default_rng(0))
    first = s.actions[0]
    assert s.probs[1][first] == 0.0 and s.probs[1][1 - first] == 1.0
    assert s.actions[1] == 1 - first


def test_policy_no_op_when_exhausted():
    s = policy_distribution(np.zeros((3, 2)), rng=np.random.default_rng(1))
    assert sorted(s.actions[:2].tolist()) == [0, 1] and s.actions[2] == -1
    assert not s.masks[2].any()
    assert s.log_prob == pytest.approx(math.log(0.5))


def test_policy_seeded_replay_and_properties():
    rng = np.random.default_rng(3)
    for trial in range(50):
        a = rng.normal(size=(4, 6)) * 3
        reach = rng.random((4, 6)) > 0.2
        s1 = policy_distribution(a, rng=np.random.default_rng(trial), reachable=reach)
        s2 = policy_distribution(a, rng=np.random.default_rng(trial), reachable=reach)
        assert np.array_equal(s1.actions, s2.actions) and s1.log_prob == s2.log_prob
        chosen = s1.actions[s1.actions >= 0]
        assert len(set(chosen.tolist())) == len(chosen)
        logp = 0.0
        for i, p in enumerate(s1.probs):
            if s1.actions[i] >= 0:
                assert p.sum() == pytest.approx(1.0, abs=1e-9)
                assert np.all(p[~s1.masks[i]] == 0)
                logp += math.log(p[s1.actions[i]])
        assert s1.log_prob == pytest.approx(logp, abs=1e-12)


# -- rollouts -----------------------------------------------------------------------

def test_zero_step_rollout_is_empty():
    t = collect_rollout(episode(), ModelParams.initialize(0), PPOConfig(steps_per_episode=0))
    assert len(t) == 0 and t.total_return == 0


def test_rollout_replay_is_identical(short_traj):
    again = collect_rollout(episode(), ModelParams.initialize(0), PPOConfig(steps_per_episode=3),
                            seed=1)
    assert len(again) == len(short_traj) == 3
    for a, b in zip(again.steps, short_traj.steps):
        assert np.array_equal(a.actions, b.actions)
        assert (a.log_prob, a.reward, a.value, a.done) == (b.log_prob, b.reward, b.value, b.done)
    assert again.last_value == short_traj.last_value


def test_rewards_recompute_from_areas(short_traj):
    cfg = RewardConfig()
    for s in short_traj.steps:
        assert s.reward == step_reward(s.prev_area, s.new_area, cfg)
        assert math.isfinite(s.log_prob)
    areas = [s.prev_area for s in short_traj.steps]
    assert areas[1:] == [s.new_area for s in short_traj.steps[:-1]]


# -- advantages and losses -----------------------------------------------------------------

def gae_loop(rewards, values, dones, last, gamma, lam):
    n = len(rewards)
    adv = []
    for t in range(n):
        total, weight = 0.0, 1.0
        for u in range(t, n):
            nxt = values[u + 1] if u + 1 < n else last
            delta = rewards[u] + gamma * nxt * (1 - dones[u]) - values[u]
            total += weight * delta
            if dones[u]:
                break
            weight *= gamma * lam
        adv.append(total)
    return np.array(adv)


def test_gae_matches_direct_sum():
    rng = np.random.default_rng(0)
    r, v = rng.normal(size=7), rng.normal(size=7)
    d = [False] * 3 + [True] + [False] * 3
    adv, ret = gae(r, v, d, 0.4, 0.9, 0.8)
    np.testing.assert_allclose(adv, gae_loop(r, v, d, 0.4, 0.9, 0.8), atol=1e-12)
    np.testing.assert_allclose(ret, adv + v)


def fake_step(step, log_prob):
    return type(step)(step.obs, step.actions, step.masks, log_prob, step.reward, step.value,
                      step.done, step.prev_area, step.new_area)


def test_clip_factor_example(short_traj):
    # choose the stored log-probability so that the ratio is exactly 1.5
    params = ModelParams.initialize(0)
    cfg = PPOConfig()
    s = short_traj.steps[0]
    current = s.log_prob
    step = fake_step(s, current - math.log(1.5))
    _, (pl, _, _, cf) = ppo_loss(params, [step], np.array([2.0]), np.array([0.0]), cfg)
    assert pl == pytest.approx(-1.2 * 2.0, rel=1e-9)
    assert cf == 1.0
    _, (pl, _, _, _) = ppo_loss(params, [step], np.array([-2.0]), np.array([0.0]), cfg)
    assert pl == pytest.approx(1.5 * 2.0, rel=1e-9)


def test_zero_advantage_has_no_policy_gradient(short_traj):
    params = ModelParams.initialize(0)
    cfg = PPOConfig(value_coeff=0.0, entropy_coeff=0.0)
    n = len(short_traj)
    total, (pl, *_) = ppo_loss(params, short_traj.steps, np.zeros(n), np.zeros(n), cfg)
    total.backward()
    assert pl == 0.0
    assert all(np.all(g == 0) for g in params.grads().values())


def test_learning_rate_zero_keeps_params(short_traj):
    params = ModelParams.initialize(0)
    new, stats = ppo_update(params, [short_traj], PPOConfig(learning_rate=0.0))
    assert new.equal(params) and math.isfinite(stats.value_loss)
    moved, _ = ppo_update(params, [short_traj], PPOConfig(learning_rate=0.1))
    assert not moved.equal(params) and new.equal(ModelParams.initialize(0))


def test_update_rejects_empty_and_non_finite(short_traj):
    with pytest.raises(ConfigError):
        ppo_update(ModelParams.initialize(0), [], PPOConfig())
    bad = ModelParams.initialize(0)
    bad["critic.b2"].data[:] = np.nan
    with pytest.raises(NumericError):
        ppo_update(bad, [short_traj], PPOConfig())


def test_ppo_loss_gradient_check(short_traj):
    params = ModelParams.initialize(0)
    cfg = PPOConfig()
    tiny = Trajectory(short_traj.steps[:2], short_traj.last_value)
    steps, adv, ret = _flatten([tiny], cfg)
    err = grad_check(params, lambda p: ppo_loss(p, steps, adv, ret, cfg)[0], 1e-5, sample=500)
    assert err <= 1e-4


# -- gradient check harness ------------------------------------------------------------

def quadratic_setup():
    # a toy quadratic over the critic head; every other parameter has zero gradient
    p = ModelParams.initialize(0)
    rng = np.random.default_rng(1)
    target = {n: t.data + rng.choice([-1, 1], t.shape) * rng.uniform(0.5, 1.5, t.shape)
              for n, t in p if n.startswith("critic.b")}

    def loss(q):
        total = ad.as_tensor(0.0)
        for n, want in target.items():
            d = q[n] - want
            total = total + (d * d).sum()
        return total
    return p, loss


def test_grad_check_quadratic():
    p, loss = quadratic_setup()
    assert grad_check(p, loss, 1e-5, sample=600) <= 1e-8


def test_grad_check_negative_control():
    p, loss = quadratic_setup()
    p.zero_grad()
    loss(p).backward()
    grads = {n: g * 1.01 for n, g in p.grads().items()}
    p.zero_grad()
    assert grad_check(p, loss, 1e-5, sample=600, grads=grads) > 1e-4
    with pytest.raises(ConfigError):
        grad_check(p, loss, 0.0)


# -- training loop ------------------------------------------------------------------

def test_train_log_and_resume():
    cfg = PPOConfig(episodes=3, steps_per_episode=2)
    p0 = ModelParams.initialize(0)
    full, rows = train(p0, lambda i: episode(), cfg, seed=5)
    assert [r.episode for r in rows] == [0, 1, 2]
    half, first = train(p0, lambda i: episode(), PPOConfig(episodes=1, steps_per_episode=2), seed=5)
    rest_p, rest = train(half, lambda i: episode(), cfg, seed=5, start_episode=1)
    assert rest_p.equal(full)
    assert [r.fields() for r in first + rest] == [r.fields() for r in rows]
    text = log_csv(rows)
    lines = text.splitlines()
    assert lines[0].split(",") == LOG_FIELDS and len(lines) == 4
    assert float(lines[1].split(",")[2]) == pytest.approx(rows[0].ret, abs=1e-6)
