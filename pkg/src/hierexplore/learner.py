"""PPO training of the global planner.

Training samples assignments from the affinity matrix (robots in index order,
without replacement); evaluation uses Hungarian matching instead.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, NumericError
from .global_planner import GraphObservation, ModelParams, forward_observation

LOG_FIELDS = ["episode", "steps", "return", "coverage", "policy_loss", "value_loss", "entropy"]


@dataclass(frozen=True)
class RewardConfig:
    r_time: float = -1.0
    lam: float = 2.0

    def __post_init__(self):
        if not self.r_time < 0:
            raise ConfigError("r_time must be negative")
        if not self.lam >= 0:
            raise ConfigError("lambda must be non-negative")


@dataclass(frozen=True)
class PPOConfig:
    clip_ratio: float = 0.2
    learning_rate: float = 3e-4
    epochs_per_update: int = 4
    gamma: float = 0.99
    gae_lambda: float = 0.95
    entropy_coeff: float = 0.01
    value_coeff: float = 0.5
    max_grad_norm: float = 0.5
    episodes: int = 100
    steps_per_episode: int = 25
    normalize_advantages: bool = True
    reward_scale: float = 1e-3  # rewards are multiplied by this before GAE

    def __post_init__(self):
        if not 0 < self.clip_ratio < 1:
            raise ConfigError("clip_ratio must lie in (0, 1)")
        if not 0 < self.gamma <= 1:
            raise ConfigError("gamma must lie in (0, 1]")
        if not 0 <= self.gae_lambda <= 1:
            raise ConfigError("gae_lambda must lie in [0, 1]")
        if not self.reward_scale > 0:
            raise ConfigError("reward_scale must be positive")
        if self.learning_rate < 0 or self.epochs_per_update < 0:
            raise ConfigError("learning_rate and epochs_per_update must be non-negative")
        if self.episodes < 0 or self.steps_per_episode < 0:
            raise ConfigError("episodes and steps_per_episode must be non-negative")


def step_reward(prev_area: float, new_area: float, config: RewardConfig) -> float:
    return config.r_time + config.lam * (new_area - prev_area)


# -- stochastic policy ------------------------------------------------------------

@dataclass(eq=False)
class Sample:
    actions: np.ndarray   # (R,) cluster index, -1 for a no-op
    masks: np.ndarray     # (R, C) clusters available to each robot when it chose
    log_prob: float
    probs: list           # per-robot probability vectors (zeros for a no-op)


def _row_probs(row: np.ndarray, mask: np.ndarray) -> np.ndarray:
    z = np.where(mask, row, -np.inf)
    top = z.max()
    e = np.where(mask, np.exp(z - top), 0.0)
    return e / e.sum()


def policy_distribution(affinity, taken=None, rng: np.random.Generator | None = None,
                        reachable=None) -> Sample:
    """Sample one cluster per robot, in index order, without replacement.

    Robot ``i`` draws from a softmax over its affinity row with taken (and
    unreachable) clusters masked out.  A robot with nothing left takes a
    no-op with log-probability 0.  Without ``rng`` the most likely cluster
    is chosen at each stage.
    """
    a = np.asarray(affinity, dtype=np.float64)
    n_r, n_c = a.shape
    taken = np.zeros(n_c, dtype=bool) if taken is None else np.asarray(taken, dtype=bool).copy()
    allowed = np.ones((n_r, n_c), dtype=bool) if reachable is None else np.asarray(reachable, bool)
    actions = np.full(n_r, -1, dtype=np.int64)
    masks = np.zeros((n_r, n_c), dtype=bool)
    probs: list = []
    log_prob = 0.0
    for i in range(n_r):
        mask = allowed[i] & ~taken
        masks[i] = mask
        if not mask.any():
            probs.append(np.zeros(n_c))
            continue
        p = _row_probs(a[i], mask)
        probs.append(p)
        k = int(rng.choice(n_c, p=p)) if rng is not None else int(np.argmax(p))
        actions[i] = k
        taken[k] = True
        log_prob += math.log(p[k])
    return Sample(actions, masks, log_prob, probs)


# -- rollouts ---------------------------------------------------------------------

@dataclass(eq=False)
class StepRecord:
    obs: GraphObservation
    actions: np.ndarray
    masks: np.ndarray
    log_prob: float
    reward: float
    value: float
    done: bool
    prev_area: int
    new_area: int


@dataclass(eq=False)
class Trajectory:
    steps: list = field(default_factory=list)
    last_value: float = 0.0   # bootstrap value after a truncated final step
    coverage: float = 0.0

    def __len__(self):
        return len(self.steps)

    @property
    def rewards(self) -> np.ndarray:
        return np.array([s.reward for s in self.steps], dtype=np.float64)

    @property
    def total_return(self) -> float:
        return float(self.rewards.sum())


def collect_rollout(simulator, params: ModelParams, config: PPOConfig,
                    seed: int | Sequence[int] = 0,
                    reward: RewardConfig | None = None) -> Trajectory:
    """Run up to ``steps_per_episode`` planning steps on a live ``sim.Episode``."""
    reward = reward or RewardConfig()
    rng = np.random.default_rng(seed)
    traj = Trajectory()
    for _ in range(config.steps_per_episode):
        if simulator.done is not None:
            break
        state = simulator.state
        obs = state.observation()
        result = forward_observation(obs, params)
        sample = policy_distribution(result.logits.data, rng=rng, reachable=obs.reachable)
        assignment = [int(k) if k >= 0 else None for k in sample.actions]
        prev_area = state.area
        simulator.act(assignment)
        new_area = simulator.state.area
        done = simulator.done is not None and simulator.state.terminated is not None
        traj.steps.append(StepRecord(obs, sample.actions, sample.masks, sample.log_prob,
                                     step_reward(prev_area, new_area, reward),
                                     float(result.value.data), done, prev_area, new_area))
        for s in (sample.log_prob, traj.steps[-1].reward):
            if not math.isfinite(s):
                raise NumericError("non-finite value recorded in trajectory")
    if traj.steps and not traj.steps[-1].done and simulator.state.clusters \
            and simulator.state.dist is not None:
        traj.last_value = float(forward_observation(simulator.state.observation(),
                                                    params).value.data)
    traj.coverage = simulator.metrics.coverage
    return traj


def gae(rewards, values, dones, last_value: float, gamma: float, lam: float):
    """Generalized advantage estimates and returns for one trajectory."""
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    n = len(rewards)
    adv = np.zeros(n)
    running = 0.0
    for t in range(n - 1, -1, -1):
        nonterminal = 0.0 if dones[t] else 1.0
        nxt = values[t + 1] if t + 1 < n else last_value
        delta = rewards[t] + gamma * nxt * nonterminal - values[t]
        running = delta + gamma * lam * nonterminal * running
        adv[t] = running
    return adv, adv + values


# -- update -----------------------------------------------------------------------

@dataclass
class UpdateStats:
    policy_loss: float = 0.0
    value_loss: float = 0.0
    entropy: float = 0.0
    grad_norm: float = 0.0
    clip_fraction: float = 0.0


def _flatten(trajectories: Sequence[Trajectory], config: PPOConfig):
    steps, advs, rets = [], [], []
    for tr in trajectories:
        if not tr.steps:
            continue
        a, r = gae([config.reward_scale * s.reward for s in tr.steps], [s.value for s in tr.steps],
                   [s.done for s in tr.steps], tr.last_value, config.gamma, config.gae_lambda)
        steps.extend(tr.steps)
        advs.append(a)
        rets.append(r)
    if not steps:
        return [], np.zeros(0), np.zeros(0)
    adv = np.concatenate(advs)
    if config.normalize_advantages and len(adv) > 1:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    return steps, adv, np.concatenate(rets)


def ppo_loss(params: ModelParams, steps: Sequence[StepRecord], advantages, returns,
             config: PPOConfig):
    """Total loss to minimise plus its (policy, value, entropy, clip fraction) parts."""
    n = len(steps)
    policy_terms, value_terms, entropy_terms = [], [], []
    clipped = 0
    lo, hi = 1.0 - config.clip_ratio, 1.0 + config.clip_ratio
    for s, adv, ret in zip(steps, advantages, returns):
        result = forward_observation(s.obs, params)
        logp_all = ad.masked_log_softmax(result.logits, s.masks, axis=1)
        p_all = ad.masked_softmax(result.logits, s.masks, axis=1)
        acted = np.nonzero(s.actions >= 0)[0]
        if len(acted):
            logp = logp_all[acted, s.actions[acted]].sum()
        else:
            logp = ad.as_tensor(0.0)
        ratio = ad.exp(logp - s.log_prob)
        clipped += int(not lo <= ratio.item() <= hi)
        surrogate = ad.minimum(ratio * adv, ad.clip(ratio, lo, hi) * adv)
        policy_terms.append(surrogate)
        value_terms.append((result.value - ret) * (result.value - ret))
        entropy_terms.append(-(p_all * logp_all).sum())
    policy = -sum(policy_terms[1:], policy_terms[0]) / n
    value = sum(value_terms[1:], value_terms[0]) / n
    entropy = sum(entropy_terms[1:], entropy_terms[0]) / n
    total = policy + config.value_coeff * value - config.entropy_coeff * entropy
    return total, (policy.item(), value.item(), entropy.item(), clipped / n)


def ppo_update(params: ModelParams, trajectories: Sequence[Trajectory], config: PPOConfig):
    """Returns ``(new params, UpdateStats)``; the input parameters are not modified."""
    if not trajectories:
        raise ConfigError("ppo_update needs at least one trajectory")
    new = params.copy()
    steps, adv, ret = _flatten(trajectories, config)
    stats = UpdateStats()
    if not steps:
        return new, stats
    for _ in range(config.epochs_per_update):
        new.zero_grad()
        total, (pl, vl, ent, cf) = ppo_loss(new, steps, adv, ret, config)
        if not math.isfinite(total.item()):
            raise NumericError(f"non-finite PPO loss (policy {pl}, value {vl}, entropy {ent})")
        total.backward()
        grads = new.grads()
        norm = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
        if not math.isfinite(norm):
            raise NumericError("non-finite gradient norm")
        scale = min(1.0, config.max_grad_norm / norm) if norm > 0 else 1.0
        if config.learning_rate > 0:
            for name, t in new:
                t.data = t.data - config.learning_rate * scale * grads[name]
        stats = UpdateStats(pl, vl, ent, norm, cf)
    new.zero_grad()
    return new, stats


# -- gradient validation ----------------------------------------------------------

def grad_check(params: ModelParams, loss_fn: Callable[[ModelParams], "ad.Tensor"],
               perturbation: float = 1e-5, sample: int | None = 500, seed: int = 0,
               floor: float = 1e-5, grads=None) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``sample=None`` checks every scalar; otherwise a seeded sample spread over
    all parameter groups.  The relative error is ``|a - n| / max(|a|, |n|,
    floor)``.  ``grads`` overrides the analytic gradients (negative controls).
    """
    if perturbation <= 0:
        raise ConfigError("perturbation must be positive")
    if grads is None:
        params.zero_grad()
        loss_fn(params).backward()
        grads = params.grads()
        params.zero_grad()
    index = [(name, i) for name, t in params for i in range(t.data.size)]
    if sample is not None and sample < len(index):
        rng = np.random.default_rng(seed)
        # at least one entry per group, the rest uniformly
        picks = {0}
        start = 0
        for _, t in params:
            picks.add(start + int(rng.integers(t.data.size)))
            start += t.data.size
        rest = rng.permutation(len(index))
        for j in rest:
            if len(picks) >= sample:
                break
            picks.add(int(j))
        index = [index[j] for j in sorted(picks)]
    worst = 0.0
    for name, i in index:
        flat = params[name].data.reshape(-1)
        orig = flat[i]
        flat[i] = orig + perturbation
        up = loss_fn(params).item()
        flat[i] = orig - perturbation
        down = loss_fn(params).item()
        flat[i] = orig
        num = (up - down) / (2 * perturbation)
        ana = float(grads[name].reshape(-1)[i])
        err = abs(ana - num) / max(abs(ana), abs(num), floor)
        worst = max(worst, err)
    return worst


# -- training loop ----------------------------------------------------------------

@dataclass
class LogRow:
    episode: int
    steps: int
    ret: float
    coverage: float
    policy_loss: float
    value_loss: float
    entropy: float

    def fields(self) -> list:
        return [self.episode, self.steps, f"{self.ret:.6f}", f"{self.coverage:.6f}",
                f"{self.policy_loss:.6g}", f"{self.value_loss:.6g}", f"{self.entropy:.6g}"]


def train(params: ModelParams, make_episode: Callable[[int], object], config: PPOConfig,
          reward: RewardConfig | None = None, seed: int = 0, start_episode: int = 0,
          on_episode: Callable[[LogRow, ModelParams], None] | None = None):
    """One rollout and one PPO update per episode.

    ``make_episode(i)`` builds the simulator for episode ``i``; sampling uses
    the stream ``(seed, i)``.  Returns the final parameters and the log rows.
    """
    rows = []
    for i in range(start_episode, config.episodes):
        traj = collect_rollout(make_episode(i), params, config, [seed, i], reward)
        if traj.steps:
            params, stats = ppo_update(params, [traj], config)
        else:
            stats = UpdateStats()
        row = LogRow(i, len(traj), traj.total_return, traj.coverage, stats.policy_loss,
                     stats.value_loss, stats.entropy)
        rows.append(row)
        if on_episode is not None:
            on_episode(row, params)
    return params, rows


def log_csv(rows: Sequence[LogRow], header: bool = True) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    if header:
        writer.writerow(LOG_FIELDS)
    for r in rows:
        writer.writerow(r.fields())
    return buf.getvalue()
