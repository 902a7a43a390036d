"""Desk-scale navigation tasks.

``goal``: a Goal1/Goal2-style region with moving circular hazards that
bounce off the region boundary; reaching the goal pays a bonus and a new
goal is drawn.  ``arena``: the RC-car commute between two endpoints inside a
walled square with one static hazard in the middle.
"""
from dataclasses import dataclass, field, replace
from math import atan2, cos, hypot, pi, sin

import numpy as np

from resdob.cbf import arena_walls
from resdob.disturbance import DEFAULT_WIND_MAGNITUDE, WindSpec, wind_at
from resdob.dynamics import (
    DEFAULT_PARAMS,
    DEFAULT_PLANT_EXTRAS,
    OMEGA,
    THETA,
    VX,
    VY,
    make_state,
    plant_step,
)

TASK_KINDS = ("goal", "arena")
N_NEAREST = 4
SEPARATION_MARGIN = 0.2
MAX_LAYOUT_TRIES = 1000


class LayoutError(RuntimeError):
    """Rejection sampling could not place the objects (configuration too dense)."""


@dataclass(frozen=True)
class TaskConfig:
    task_kind: str = "goal"
    robot_kind: str = "point"
    n_hazards: int = 4
    hazard_radius: float = 0.4
    hazard_speed: float = 0.2
    goal_radius: float = 0.3
    region_half_width: float = 3.0
    arena_half_width: float = 2.1
    robot_radius: float = 0.15
    episode_length: int = 400
    dt: float = 0.02
    wind: WindSpec = field(default_factory=lambda: WindSpec(DEFAULT_WIND_MAGNITUDE["point"], 5.0))
    mismatch_factor: float = 1.5
    plant_extras: bool = True
    control_bound: float = 1.0
    endpoint_offset: float = 1.5
    goal_bonus: float = 1.0

    def __post_init__(self):
        if self.task_kind not in TASK_KINDS:
            raise ValueError(f"task_kind must be one of {TASK_KINDS}")
        if self.robot_kind not in DEFAULT_PARAMS:
            raise ValueError(f"robot_kind must be one of {tuple(DEFAULT_PARAMS)}")
        if self.episode_length <= 0:
            raise ValueError("episode_length must be > 0")
        for name in ("hazard_radius", "goal_radius", "robot_radius", "region_half_width",
                     "arena_half_width", "dt", "control_bound", "mismatch_factor"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be > 0")
        if self.n_hazards < 0 or self.hazard_speed < 0.0:
            raise ValueError("n_hazards and hazard_speed must be >= 0")

    @property
    def nominal_params(self):
        return DEFAULT_PARAMS[self.robot_kind]

    @property
    def true_params(self):
        extras = DEFAULT_PLANT_EXTRAS[self.robot_kind] if self.plant_extras else {}
        return self.nominal_params.mismatched(self.mismatch_factor, **extras)

    @property
    def lower(self):
        return np.full(2, -self.control_bound)

    @property
    def upper(self):
        return np.full(2, self.control_bound)

    @property
    def obs_dim(self):
        return 10 + 4 * N_NEAREST


def preset(name, **overrides):
    """Named task layouts: ``goal1``, ``goal2``, ``arena``."""
    if name == "goal1":
        cfg = TaskConfig(task_kind="goal", n_hazards=4)
    elif name == "goal2":
        cfg = TaskConfig(task_kind="goal", n_hazards=8)
    elif name == "arena":
        cfg = TaskConfig(
            task_kind="arena",
            robot_kind="car",
            n_hazards=1,
            hazard_radius=0.8,
            hazard_speed=0.0,
            goal_radius=0.25,
            wind=WindSpec(DEFAULT_WIND_MAGNITUDE["car"], 5.0),
        )
    else:
        raise ValueError(f"unknown task preset {name!r}")
    return replace(cfg, **overrides)


@dataclass
class StepOutcome:
    obs: np.ndarray
    reward: float
    cost: float
    done: bool
    info: dict


class Env:
    def __init__(self, cfg):
        self.cfg = cfg
        self.kind = cfg.robot_kind
        self.true_params = cfg.true_params
        self.nominal_params = cfg.nominal_params
        if cfg.task_kind == "arena":
            self.walls = np.array([w.as_row() for w in arena_walls(cfg.arena_half_width, cfg.robot_radius)])
        else:
            self.walls = np.zeros((0, 3))
        self.rng = None
        self.x = None
        self.t = 0.0
        self.steps = 0
        self.hazard_pos = np.zeros((0, 2))
        self.hazard_vel = np.zeros((0, 2))
        self.goal = np.zeros(2)
        self.target_index = 1
        self.last_arrival_time = 0.0

    @property
    def min_center_gap(self):
        """Hazard centres never get closer than this: a robot plus margin always fits between."""
        cfg = self.cfg
        return 2.0 * (cfg.hazard_radius + cfg.robot_radius) + SEPARATION_MARGIN

    # layout -------------------------------------------------------------
    def reset(self, seed=None):
        """Sample a layout; ``seed`` may be an int, a SeedSequence or a Generator."""
        self.rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        cfg = self.cfg
        self.t = 0.0
        self.steps = 0
        self.last_arrival_time = 0.0
        if cfg.task_kind == "goal":
            self._sample_goal_layout()
        else:
            self._arena_layout()
        self._prev_dist = self._goal_distance()
        return self.observe()

    def _sample_goal_layout(self):
        cfg = self.cfg
        hw = cfg.region_half_width
        keep = cfg.hazard_radius + cfg.robot_radius + SEPARATION_MARGIN
        lim = hw - cfg.hazard_radius
        robot = self.rng.uniform(-hw + 0.5, hw - 0.5, size=2)
        hazards = np.zeros((cfg.n_hazards, 2))
        # objects are placed one at a time, each with its own try budget
        for i in range(cfg.n_hazards):
            for _ in range(MAX_LAYOUT_TRIES):
                c = self.rng.uniform(-lim, lim, size=2)
                if hypot(*(c - robot)) < keep:
                    continue
                if i and np.min(np.hypot(*(hazards[:i] - c).T)) < self.min_center_gap:
                    continue
                hazards[i] = c
                break
            else:
                raise LayoutError(f"could not place hazard {i} after {MAX_LAYOUT_TRIES} tries")
        theta = self.rng.uniform(-pi, pi)
        angles = self.rng.uniform(-pi, pi, size=cfg.n_hazards)
        self.x = make_state(robot[0], robot[1], theta)
        self.hazard_pos = hazards
        self.hazard_vel = cfg.hazard_speed * np.column_stack([np.cos(angles), np.sin(angles)])
        self.goal = self._sample_goal()

    def _sample_goal(self):
        cfg = self.cfg
        hw = cfg.region_half_width
        for _ in range(MAX_LAYOUT_TRIES):
            goal = self.rng.uniform(-hw + 0.5, hw - 0.5, size=2)
            if hypot(*(goal - self.x[:2])) < 1.0:
                continue
            if cfg.n_hazards and np.min(np.hypot(*(self.hazard_pos - goal).T)) < cfg.hazard_radius + cfg.goal_radius:
                continue
            return goal
        raise LayoutError(f"no valid goal after {MAX_LAYOUT_TRIES} tries")

    def _arena_layout(self):
        cfg = self.cfg
        e = cfg.endpoint_offset
        self.endpoints = np.array([[-e, 0.0], [e, 0.0]])
        start = self.endpoints[0] + self.rng.uniform(-0.1, 0.1, size=2)
        theta = self.rng.uniform(-pi / 6, pi / 6)
        self.x = make_state(start[0], start[1], theta)
        self.hazard_pos = np.zeros((cfg.n_hazards, 2))
        self.hazard_vel = np.zeros((cfg.n_hazards, 2))
        self.target_index = 1
        self.goal = self.endpoints[1].copy()

    # dynamics -----------------------------------------------------------
    @property
    def wind_now(self):
        return wind_at(self.cfg.wind, self.t)

    def barrier_rows(self):
        """Circle rows ``(cx, cy, vx, vy, r_i + r_p)`` and wall rows at the current time."""
        r = self.cfg.hazard_radius + self.cfg.robot_radius
        n = len(self.hazard_pos)
        circles = np.empty((n, 5))
        circles[:, :2] = self.hazard_pos
        circles[:, 2:4] = self.hazard_vel
        circles[:, 4] = r
        return circles, self.walls

    def barrier_values(self, x=None):
        x = self.x if x is None else x
        p = x[:2]
        r = self.cfg.hazard_radius + self.cfg.robot_radius
        vals = []
        if len(self.hazard_pos):
            vals.append(np.hypot(*(p - self.hazard_pos).T) - r)
        if len(self.walls):
            vals.append(self.walls[:, :2] @ p + self.walls[:, 2])
        return np.concatenate(vals) if vals else np.zeros(0)

    def h_min(self, x=None):
        vals = self.barrier_values(x)
        return float(vals.min()) if vals.size else float("inf")

    def _goal_distance(self):
        return hypot(self.goal[0] - self.x[0], self.goal[1] - self.x[1])

    def _propagate_hazards(self, dt):
        if not len(self.hazard_pos):
            return
        self.hazard_pos = self.hazard_pos + dt * self.hazard_vel
        if self.cfg.task_kind != "goal":
            return
        limit = self.cfg.region_half_width - self.cfg.hazard_radius
        over = self.hazard_pos > limit
        under = self.hazard_pos < -limit
        if over.any() or under.any():
            self.hazard_pos = np.where(over, 2 * limit - self.hazard_pos, self.hazard_pos)
            self.hazard_pos = np.where(under, -2 * limit - self.hazard_pos, self.hazard_pos)
            self.hazard_vel = np.where(over | under, -self.hazard_vel, self.hazard_vel)
        self._bounce_hazards()

    def _bounce_hazards(self):
        """Equal-mass elastic exchange of the normal velocity for pairs that are too close and closing."""
        n = len(self.hazard_pos)
        gap = self.min_center_gap
        for i in range(n - 1):
            for j in range(i + 1, n):
                dx, dy = self.hazard_pos[j] - self.hazard_pos[i]
                dist = hypot(dx, dy)
                if dist >= gap or dist == 0.0:
                    continue
                nx, ny = dx / dist, dy / dist
                vi, vj = self.hazard_vel[i], self.hazard_vel[j]
                closing = (vj[0] - vi[0]) * nx + (vj[1] - vi[1]) * ny
                if closing < 0.0:
                    self.hazard_vel[i] = vi + closing * np.array([nx, ny])
                    self.hazard_vel[j] = vj - closing * np.array([nx, ny])

    def step(self, u):
        cfg = self.cfg
        u = np.clip(np.asarray(u, dtype=float), -cfg.control_bound, cfg.control_bound)
        wind = self.wind_now
        self.x = plant_step(self.kind, self.x, u, self.true_params, wind, cfg.dt)
        self.t = (self.steps + 1) * cfg.dt
        self.steps += 1
        self._propagate_hazards(cfg.dt)

        dist = self._goal_distance()
        reward = self._prev_dist - dist
        reached = dist < cfg.goal_radius
        commute = None
        if reached:
            reward += cfg.goal_bonus
            if cfg.task_kind == "goal":
                self.goal = self._sample_goal()
            else:
                commute = self.t - self.last_arrival_time
                self.last_arrival_time = self.t
                self.target_index = 1 - self.target_index
                self.goal = self.endpoints[self.target_index].copy()
            dist = self._goal_distance()
        self._prev_dist = dist
        h_min = self.h_min()
        cost = 1.0 if h_min < 0.0 else 0.0
        done = self.steps >= cfg.episode_length
        info = {"h_min": h_min, "goal_reached": reached, "commute_time": commute}
        return StepOutcome(self.observe(), reward, cost, done, info)

    # observation --------------------------------------------------------
    def observe(self):
        cfg = self.cfg
        x = self.x
        theta = x[THETA]
        c, s = cos(theta), sin(theta)
        scale = cfg.region_half_width if cfg.task_kind == "goal" else cfg.arena_half_width
        gx, gy = self.goal[0] - x[0], self.goal[1] - x[1]
        obs = np.zeros(cfg.obs_dim)
        obs[0] = x[0] / scale
        obs[1] = x[1] / scale
        obs[2] = s
        obs[3] = c
        obs[4] = x[VX]
        obs[5] = x[VY]
        obs[6] = x[OMEGA]
        obs[7] = (c * gx + s * gy) / scale
        obs[8] = (-s * gx + c * gy) / scale
        obs[9] = hypot(gx, gy) / scale
        if len(self.hazard_pos):
            rel = self.hazard_pos - x[:2]
            order = np.argsort(np.hypot(rel[:, 0], rel[:, 1]), kind="stable")[:N_NEAREST]
            for slot, i in enumerate(order):
                rx, ry = rel[i]
                vx, vy = self.hazard_vel[i]
                base = 10 + 4 * slot
                obs[base] = (c * rx + s * ry) / scale
                obs[base + 1] = (-s * rx + c * ry) / scale
                obs[base + 2] = c * vx + s * vy
                obs[base + 3] = -s * vx + c * vy
        return obs

    def heading_to_goal(self):
        return atan2(self.goal[1] - self.x[1], self.goal[0] - self.x[0])


def reset(cfg, seed):
    env = Env(cfg)
    obs = env.reset(seed)
    return env, obs


def step(env, u_safe):
    return env.step(u_safe)
