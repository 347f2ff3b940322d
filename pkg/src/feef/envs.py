"""Native continuous-control environments and the state-coverage metric.

Three reward regimes:

* ``mountain_car`` - sparse: reward 1 on reaching the goal, else 0.
* ``pendulum`` - dense and well shaped, maximum 0 at the upright rest point.
* ``point_maze`` - reward-free four-room maze; success is coverage.

Environments are deterministic given the reset seed.  ``transition`` is a
pure function of (state, action); ``step`` adds the episode time limit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .nets import ContractError


@dataclass(frozen=True)
class EnvSpec:
    name: str
    state_dim: int
    action_dim: int
    action_low: tuple
    action_high: tuple
    max_steps: int
    r_max: float
    coverage_dims: tuple
    coverage_low: tuple
    coverage_high: tuple
    coverage_bins: tuple = (20, 20)

    @property
    def low(self) -> np.ndarray:
        return np.asarray(self.action_low, dtype=float)

    @property
    def high(self) -> np.ndarray:
        return np.asarray(self.action_high, dtype=float)


class CoverageGrid:
    """Occupancy grid over a box in a subset of state dimensions."""

    def __init__(self, low, high, bins, dims=None):
        self.low = np.asarray(low, dtype=float)
        self.high = np.asarray(high, dtype=float)
        self.bins = np.asarray(bins, dtype=int)
        if not (self.low.shape == self.high.shape == self.bins.shape):
            raise ContractError("low, high and bins must have the same length")
        if np.any(self.high <= self.low) or np.any(self.bins < 1):
            raise ContractError("empty grid")
        self.dims = tuple(range(len(self.bins))) if dims is None else tuple(dims)
        self.occupied = np.zeros(tuple(self.bins), dtype=bool)

    @classmethod
    def for_env(cls, spec: EnvSpec) -> CoverageGrid:
        return cls(spec.coverage_low, spec.coverage_high, spec.coverage_bins, spec.coverage_dims)

    def cells(self, states) -> np.ndarray:
        x = np.atleast_2d(np.asarray(states, dtype=float))[:, self.dims]
        frac = (x - self.low) / (self.high - self.low)
        # out-of-range states land in the edge bins
        return np.clip(np.floor(frac * self.bins).astype(int), 0, self.bins - 1)

    def add(self, states) -> CoverageGrid:
        states = np.asarray(states, dtype=float)
        if states.size:
            idx = self.cells(states)
            self.occupied[tuple(idx.T)] = True
        return self

    def fraction(self) -> float:
        return float(self.occupied.mean())


def coverage_fraction(grid: CoverageGrid, states) -> float:
    return grid.add(states).fraction()


class Env:
    spec: EnvSpec

    def __init__(self):
        self.state = None
        self.steps = 0

    def initial_state(self, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def transition(self, state, action):
        """Pure dynamics: returns ``(next_state, reward, terminal)``."""
        raise NotImplementedError

    def reset(self, seed) -> np.ndarray:
        self.state = self.initial_state(np.random.default_rng(seed))
        self.steps = 0
        return self.state.copy()

    def clip_action(self, action) -> np.ndarray:
        a = np.asarray(action, dtype=float).reshape(self.spec.action_dim)
        return np.clip(a, self.spec.low, self.spec.high)

    def step(self, action):
        if self.state is None:
            raise ContractError("call reset() before step()")
        nxt, reward, terminal = self.transition(self.state, action)
        self.state = nxt
        self.steps += 1
        done = terminal or self.steps >= self.spec.max_steps
        return nxt.copy(), reward, done


class MountainCar(Env):
    """Under-powered car in a valley; the goal is the top of the right hill."""

    spec = EnvSpec(
        name="mountain_car", state_dim=2, action_dim=1, action_low=(-1.0,), action_high=(1.0,),
        max_steps=200, r_max=1.0, coverage_dims=(0, 1),
        coverage_low=(-1.2, -0.07), coverage_high=(0.6, 0.07),
    )
    min_position, max_position = -1.2, 0.6
    max_speed = 0.07
    goal_position = 0.45
    power = 0.0015
    gravity = 0.0025

    def initial_state(self, rng):
        return np.array([rng.uniform(-0.6, -0.4), 0.0])

    def transition(self, state, action):
        a = self.clip_action(action)[0]
        p, v = float(state[0]), float(state[1])
        v = v + self.power * a - self.gravity * math.cos(3.0 * p)
        v = min(max(v, -self.max_speed), self.max_speed)
        p = p + v
        p = min(max(p, self.min_position), self.max_position)
        if p == self.min_position and v < 0:
            v = 0.0
        terminal = p >= self.goal_position
        return np.array([p, v]), (1.0 if terminal else 0.0), terminal

    @classmethod
    def height(cls, position):
        return np.sin(3.0 * np.asarray(position)) / 3.0

    @classmethod
    def energy(cls, state):
        """Mechanical energy per unit mass in the car's own units."""
        return 0.5 * state[1] ** 2 + cls.gravity * cls.height(state[0])


class Pendulum(Env):
    """Torque-limited pendulum swing-up; angle 0 is upright, pi hangs down.

    Observed state is ``(cos(theta), sin(theta), omega)``.
    """

    spec = EnvSpec(
        name="pendulum", state_dim=3, action_dim=1, action_low=(-1.0,), action_high=(1.0,),
        max_steps=100, r_max=0.0, coverage_dims=(1, 2),
        coverage_low=(-1.0, -8.0), coverage_high=(1.0, 8.0),
    )
    g_over_l = 10.0
    torque_gain = 15.0
    dt = 0.05
    max_speed = 8.0

    def initial_state(self, rng):
        return self.observe(math.pi + rng.uniform(-0.1, 0.1), 0.0)

    @staticmethod
    def observe(theta, omega):
        return np.array([math.cos(theta), math.sin(theta), omega])

    @staticmethod
    def angle(state):
        return math.atan2(state[1], state[0])

    def transition(self, state, action):
        a = self.clip_action(action)[0]
        theta, omega = self.angle(state), float(state[2])
        acc = self.g_over_l * math.sin(theta) + self.torque_gain * a
        omega = min(max(omega + self.dt * acc, -self.max_speed), self.max_speed)
        theta = theta + self.dt * omega
        err = (theta + math.pi) % (2.0 * math.pi) - math.pi
        reward = -(err**2 + 0.1 * omega**2 + 0.001 * a**2)
        return self.observe(theta, omega), reward, False


def _segment_hits_box(p0, p1, lo, hi) -> bool:
    """Liang-Barsky test: does the segment p0->p1 touch the closed box [lo, hi]?"""
    t0, t1 = 0.0, 1.0
    d = p1 - p0
    for k in range(2):
        if d[k] == 0.0:
            if p0[k] < lo[k] or p0[k] > hi[k]:
                return False
            continue
        ta = (lo[k] - p0[k]) / d[k]
        tb = (hi[k] - p0[k]) / d[k]
        if ta > tb:
            ta, tb = tb, ta
        t0, t1 = max(t0, ta), min(t1, tb)
        if t0 > t1:
            return False
    return True


class PointMaze(Env):
    """Reward-free point mass in a four-room arena [-1, 1]^2.

    State is ``(x, y, vx, vy)``.  Velocity is damped and driven by the
    action; a move that would touch a wall or leave the arena is cancelled and
    the velocity zeroed.
    """

    half_thickness = 0.02
    door_half_width = 0.15
    damping = 0.75
    accel = 0.0125
    start = (-0.5, -0.5)

    spec = EnvSpec(
        name="point_maze", state_dim=4, action_dim=2, action_low=(-1.0, -1.0),
        action_high=(1.0, 1.0), max_steps=300, r_max=0.0, coverage_dims=(0, 1),
        coverage_low=(-1.0, -1.0), coverage_high=(1.0, 1.0),
    )

    def __init__(self):
        super().__init__()
        self.walls = self._build_walls()

    @classmethod
    def _build_walls(cls):
        h, w = cls.half_thickness, cls.door_half_width
        walls = []
        # vertical wall x=0 and horizontal wall y=0, each with doors centred at +-0.5
        for lo, hi in ((-1.0, -0.5 - w), (-0.5 + w, 0.5 - w), (0.5 + w, 1.0)):
            walls.append((np.array([-h, lo]), np.array([h, hi])))
            walls.append((np.array([lo, -h]), np.array([hi, h])))
        return walls

    def in_wall(self, position) -> bool:
        p = np.asarray(position, dtype=float)
        if np.any(np.abs(p) >= 1.0):
            return True
        return any(np.all(p >= lo) and np.all(p <= hi) for lo, hi in self.walls)

    def initial_state(self, rng):
        x, y = self.start
        return np.array([x + rng.uniform(-0.05, 0.05), y + rng.uniform(-0.05, 0.05), 0.0, 0.0])

    def transition(self, state, action):
        a = self.clip_action(action)
        p = np.asarray(state[:2], dtype=float)
        v = self.damping * np.asarray(state[2:], dtype=float) + self.accel * a
        q = p + v
        blocked = np.any(np.abs(q) >= 1.0) or any(_segment_hits_box(p, q, lo, hi) for lo, hi in self.walls)
        if blocked:
            q, v = p, np.zeros(2)
        return np.concatenate([q, v]), 0.0, False


REGISTRY = {
    "mountain_car": MountainCar,
    "pendulum": Pendulum,
    "point_maze": PointMaze,
}


def make_env(name: str) -> Env:
    try:
        return REGISTRY[name]()
    except KeyError:
        raise ContractError(f"unknown environment {name!r}; choose from {sorted(REGISTRY)}") from None
