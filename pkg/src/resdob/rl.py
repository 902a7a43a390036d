"""PPO-Lagrangian agent on tanh-squashed Gaussian policies.

The actor outputs the pre-squash mean; actions are ``tanh`` of a diagonal
Gaussian sample rescaled into the control box.  Training uses the log
probability of the executed (filtered) action, recovered by inverting the
squash.  A Lagrange multiplier trades reward advantage against cost
advantage and is pushed toward the target episode cost after each update.
"""
import json
from dataclasses import dataclass, field

import numpy as np

from resdob.nn import Adam, Mlp

LOG_2PI = float(np.log(2.0 * np.pi))
# Filtered actions on the box edge would invert to an infinite pre-squash value.
SQUASH_LIMIT = 0.999
LOG_STD_RANGE = (-5.0, 1.0)


@dataclass
class PpoConfig:
    hidden: tuple = (64, 64)
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip: float = 0.2
    epochs: int = 10
    minibatch: int = 100
    policy_lr: float = 3e-4
    value_lr: float = 1e-3
    lambda_lr: float = 0.05
    lambda_init: float = 1.0
    target_cost: float = 5.0
    init_log_std: float = -0.5
    entropy_coef: float = 0.0


class PolicyState:
    def __init__(self, policy_net, log_std, value_net, cost_value_net, lam, target_cost, lower, upper):
        self.policy_net = policy_net
        self.log_std = np.array(log_std, dtype=float)
        self.value_net = value_net
        self.cost_value_net = cost_value_net
        self.lam = float(lam)
        self.target_cost = float(target_cost)
        self.lower = np.array(lower, dtype=float)
        self.upper = np.array(upper, dtype=float)
        if self.lam < 0.0:
            raise ValueError("Lagrange multiplier must be >= 0")
        if self.log_std.shape != (policy_net.n_out,):
            raise ValueError("one log_std entry per action dimension expected")

    @classmethod
    def create(cls, obs_dim, lower, upper, rng, cfg=None):
        cfg = cfg or PpoConfig()
        m = len(lower)
        policy = Mlp.init((obs_dim, *cfg.hidden, m), rng, zero_output=True)
        value = Mlp.init((obs_dim, *cfg.hidden, 1), rng)
        cost_value = Mlp.init((obs_dim, *cfg.hidden, 1), rng)
        return cls(policy, np.full(m, cfg.init_log_std), value, cost_value, cfg.lambda_init,
                   cfg.target_cost, lower, upper)

    @property
    def obs_dim(self):
        return self.policy_net.n_in

    @property
    def half_range(self):
        return 0.5 * (self.upper - self.lower)

    @property
    def center(self):
        return 0.5 * (self.upper + self.lower)

    def squash(self, z):
        return self.center + self.half_range * np.tanh(z)

    def unsquash(self, u):
        a = (np.asarray(u, dtype=float) - self.center) / self.half_range
        return np.arctanh(np.clip(a, -SQUASH_LIMIT, SQUASH_LIMIT))

    def log_prob_pre(self, mean, z):
        """Density of ``u = squash(z)`` given the pre-squash mean (batched over rows)."""
        std = np.exp(self.log_std)
        t = (z - mean) / std
        gauss = -0.5 * t * t - self.log_std - 0.5 * LOG_2PI
        tanh_z = np.tanh(z)
        jac = np.log(1.0 - tanh_z * tanh_z) + np.log(self.half_range)
        return np.sum(gauss - jac, axis=-1)

    def log_prob(self, obs, u):
        mean = self.policy_net.forward(obs)
        return self.log_prob_pre(mean, self.unsquash(u))

    def act(self, obs, rng, deterministic=False):
        """Sample ``u_rl`` and its log-probability; ``deterministic`` returns the squashed mean."""
        mean = self.policy_net.forward(obs)
        if deterministic:
            z = mean
        else:
            z = mean + np.exp(self.log_std) * rng.standard_normal(mean.shape)
        logp = self.log_prob_pre(mean, z)
        return self.squash(z), (float(logp) if np.ndim(obs) == 1 else logp)

    def values(self, obs):
        obs = np.atleast_2d(obs)
        return self.value_net.forward(obs)[:, 0], self.cost_value_net.forward(obs)[:, 0]

    def to_dict(self):
        return {
            "format": "resdob.policy",
            "version": 1,
            "policy_net": self.policy_net.to_dict(),
            "log_std": self.log_std.tolist(),
            "value_net": self.value_net.to_dict(),
            "cost_value_net": self.cost_value_net.to_dict(),
            "lambda": self.lam,
            "target_cost": self.target_cost,
            "lower": self.lower.tolist(),
            "upper": self.upper.tolist(),
        }

    @classmethod
    def from_dict(cls, data):
        if data.get("format") != "resdob.policy":
            raise ValueError("not a policy checkpoint")
        return cls(Mlp.from_dict(data["policy_net"]), data["log_std"], Mlp.from_dict(data["value_net"]),
                   Mlp.from_dict(data["cost_value_net"]), data["lambda"], data["target_cost"],
                   data["lower"], data["upper"])

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class Transition:
    obs: np.ndarray
    u_safe: np.ndarray
    u_rl: np.ndarray
    reward: float
    cost: float
    log_prob: float
    done: bool

    def __post_init__(self):
        if self.cost not in (0.0, 1.0):
            raise ValueError("cost must be 0 or 1")


@dataclass
class RolloutBuffer:
    transitions: list = field(default_factory=list)
    # observation after the final step of each finished episode, for bootstrapping
    last_obs: list = field(default_factory=list)
    adv_r: np.ndarray = None
    adv_c: np.ndarray = None
    ret_r: np.ndarray = None
    ret_c: np.ndarray = None

    def add(self, tr, next_obs=None):
        self.transitions.append(tr)
        if tr.done:
            if next_obs is None:
                raise ValueError("episode end needs the following observation")
            self.last_obs.append(np.asarray(next_obs, dtype=float))

    def __len__(self):
        return len(self.transitions)

    def arrays(self):
        obs = np.array([t.obs for t in self.transitions])
        u = np.array([t.u_safe for t in self.transitions])
        rew = np.array([t.reward for t in self.transitions])
        cost = np.array([t.cost for t in self.transitions])
        logp = np.array([t.log_prob for t in self.transitions])
        done = np.array([t.done for t in self.transitions])
        return obs, u, rew, cost, logp, done

    def episode_costs(self):
        out, acc = [], 0.0
        for t in self.transitions:
            acc += t.cost
            if t.done:
                out.append(acc)
                acc = 0.0
        return out

    def episode_rewards(self):
        out, acc = [], 0.0
        for t in self.transitions:
            acc += t.reward
            if t.done:
                out.append(acc)
                acc = 0.0
        return out


def gae(rewards, values, dones, bootstrap, gamma=0.99, lam=0.95):
    """Generalised advantage estimates over concatenated episodes.

    ``values[k]`` is V(s_k); ``bootstrap`` holds V of the observation that
    follows each episode's last step (episodes end by time limit, so the
    tail is bootstrapped rather than treated as terminal).
    """
    n = len(rewards)
    adv = np.zeros(n)
    ends = np.flatnonzero(dones)
    if n and (len(ends) == 0 or ends[-1] != n - 1):
        raise ValueError("buffer must hold complete episodes")
    if len(bootstrap) != len(ends):
        raise ValueError("one bootstrap value per episode expected")
    start = 0
    for e, end in enumerate(ends):
        next_v = bootstrap[e]
        running = 0.0
        for k in range(end, start - 1, -1):
            delta = rewards[k] + gamma * next_v - values[k]
            running = delta + gamma * lam * running
            adv[k] = running
            next_v = values[k]
        start = end + 1
    return adv


def compute_advantages(buffer, policy, gamma=0.99, gae_lambda=0.95):
    obs, _, rew, cost, _, done = buffer.arrays()
    if len(buffer) == 0:
        buffer.adv_r = buffer.adv_c = buffer.ret_r = buffer.ret_c = np.zeros(0)
        return buffer
    v_r, v_c = policy.values(obs)
    b_r, b_c = policy.values(np.array(buffer.last_obs))
    adv_r = gae(rew, v_r, done, b_r, gamma, gae_lambda)
    adv_c = gae(cost, v_c, done, b_c, gamma, gae_lambda)
    buffer.ret_r = adv_r + v_r
    buffer.ret_c = adv_c + v_c
    std = adv_r.std()
    buffer.adv_r = (adv_r - adv_r.mean()) / (std if std > 1e-8 else 1.0)
    buffer.adv_c = adv_c
    return buffer


class PpoLagrangian:
    """Optimiser state around a :class:`PolicyState`."""

    def __init__(self, policy, cfg=None):
        self.policy = policy
        self.cfg = cfg or PpoConfig()
        self.actor_params = policy.policy_net.parameters() + [policy.log_std]
        self.actor_opt = Adam(self.actor_params, lr=self.cfg.policy_lr)
        self.value_opt = Adam(policy.value_net.parameters(), lr=self.cfg.value_lr)
        self.cost_opt = Adam(policy.cost_value_net.parameters(), lr=self.cfg.value_lr)

    def _actor_grads(self, obs, z, logp_old, adv):
        p = self.policy
        mean, cache = p.policy_net.forward_cached(obs)
        logp = p.log_prob_pre(mean, z)
        ratio = np.exp(logp - logp_old)
        clipped = np.clip(ratio, 1.0 - self.cfg.clip, 1.0 + self.cfg.clip)
        surr = np.minimum(ratio * adv, clipped * adv)
        n = len(adv)
        loss = -float(surr.mean())
        # the min picks the unclipped branch where it is the smaller value
        active = ratio * adv <= clipped * adv
        dlogp = np.where(active, -ratio * adv / n, 0.0)
        var = np.exp(2.0 * p.log_std)
        diff = z - mean
        g_mean = dlogp[:, None] * diff / var
        g_log_std = np.sum(dlogp[:, None] * (diff * diff / var - 1.0), axis=0)
        if self.cfg.entropy_coef:
            loss -= self.cfg.entropy_coef * float(np.sum(p.log_std))
            g_log_std = g_log_std - self.cfg.entropy_coef
        grads = p.policy_net.backward(obs, g_mean, cache)
        return loss, grads.weights + grads.biases + [g_log_std], ratio

    @staticmethod
    def _value_grads(net, obs, target):
        pred, cache = net.forward_cached(obs)
        err = pred[:, 0] - target
        n = len(target)
        grads = net.backward(obs, (err / n)[:, None], cache)
        return 0.5 * float(np.mean(err * err)), grads.weights + grads.biases

    def update(self, buffer, rng, mean_episode_cost=None):
        """One PPO-Lagrangian update; returns a stats dict.

        ``buffer`` must already carry advantages.  Minibatches whose loss or
        gradients are not finite are skipped and counted.
        """
        p = self.policy
        cfg = self.cfg
        obs, u, _, _, logp_old, _ = buffer.arrays()
        n = len(obs)
        stats = {"skipped_minibatches": 0, "policy_loss": float("nan"), "value_loss": float("nan"),
                 "cost_value_loss": float("nan")}
        if n == 0:
            stats.update(lam=p.lam, ratio_in_band=float("nan"), approx_kl=float("nan"))
            return stats
        z = p.unsquash(u)
        lam = p.lam
        adv = (buffer.adv_r - lam * buffer.adv_c) / (1.0 + lam)
        mb = min(cfg.minibatch, n)
        losses = []
        for _ in range(cfg.epochs):
            order = rng.permutation(n)
            for s in range(0, n, mb):
                idx = order[s:s + mb]
                loss, g_actor, _ = self._actor_grads(obs[idx], z[idx], logp_old[idx], adv[idx])
                lv, g_v = self._value_grads(p.value_net, obs[idx], buffer.ret_r[idx])
                lc, g_c = self._value_grads(p.cost_value_net, obs[idx], buffer.ret_c[idx])
                grads = g_actor + g_v + g_c
                if not (np.isfinite(loss + lv + lc) and all(np.all(np.isfinite(g)) for g in grads)):
                    stats["skipped_minibatches"] += 1
                    continue
                self.actor_opt.step(g_actor)
                np.clip(p.log_std, *LOG_STD_RANGE, out=p.log_std)
                self.value_opt.step(g_v)
                self.cost_opt.step(g_c)
                losses.append((loss, lv, lc))
        if losses:
            arr = np.array(losses)
            stats["policy_loss"], stats["value_loss"], stats["cost_value_loss"] = (float(v) for v in arr[-1])
        mean = p.policy_net.forward(obs)
        ratio = np.exp(p.log_prob_pre(mean, z) - logp_old)
        stats["ratio_in_band"] = float(np.mean((ratio >= 0.6) & (ratio <= 1.6)))
        stats["approx_kl"] = float(np.mean(logp_old - p.log_prob_pre(mean, z)))
        if mean_episode_cost is None:
            costs = buffer.episode_costs()
            mean_episode_cost = float(np.mean(costs)) if costs else 0.0
        self.update_lambda(mean_episode_cost)
        stats["lam"] = p.lam
        return stats

    def update_lambda(self, mean_episode_cost):
        p = self.policy
        p.lam = max(0.0, p.lam + self.cfg.lambda_lr * (mean_episode_cost - p.target_cost))
        return p.lam
