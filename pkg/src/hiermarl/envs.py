"""Desk-scale benchmark environments.

Two cooperative tasks, both deterministic functions of (seed, actions),
both truncating episodes at 100 steps:

* SpreadEnv — N point-mass agents cover N landmarks while avoiding
  collisions (shared coverage reward, individual collision penalties).
* BalanceEnv — four agents hold a rigid plank carrying a sliding package
  and transport the package to a goal without tipping it off.

Plus the privileged greedy heuristic for SpreadEnv and a wrapper exposing
any multi-actor env as a single joint-action actor for monolithic agents.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import RangeError

Array = np.ndarray

MAX_EPISODE_STEPS = 100


@dataclass
class EnvStepOut:
    observations: list[Array]
    rewards: list[float]
    terminated: bool
    truncated: bool
    info: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# Spread: cooperative coverage
# ---------------------------------------------------------------------------

# action 0 = no-op, 1 = +x, 2 = -x, 3 = +y, 4 = -y
_SPREAD_ACCEL = np.array(
    [[0.0, 0.0], [1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]]
)


class SpreadEnv:
    """Velocity-damped point masses in the arena [-1, 1]^2.

    Dynamics per step (dt=0.1): v <- damping * v + a * dt, |v| clipped to
    max_speed, p <- clip(p + v * dt, -1, 1). Reward per agent = shared
    coverage term (minus the sum over landmarks of the distance to the
    closest agent) plus -1 for each pairwise collision the agent is in
    (distance < 2 * radius).
    """

    n_actions = 5
    action_kind = "discrete"

    def __init__(
        self,
        n_agents: int = 4,
        damping: float = 0.75,
        dt: float = 0.1,
        max_speed: float = 1.0,
        radius: float = 0.05,
        max_steps: int = MAX_EPISODE_STEPS,
    ):
        if not 1 <= n_agents <= 8:
            raise RangeError(f"n_agents must be in 1..8, got {n_agents}")
        self.n_agents = n_agents
        self.damping = damping
        self.dt = dt
        self.max_speed = max_speed
        self.radius = radius
        self.max_steps = max_steps
        self.positions = np.zeros((n_agents, 2))
        self.velocities = np.zeros((n_agents, 2))
        self.landmarks = np.zeros((n_agents, 2))
        self.steps = 0

    @property
    def n_actors(self) -> int:
        return self.n_agents

    @property
    def obs_dim(self) -> int:
        # [self vel, self pos, landmark offsets, other-agent offsets]
        return 4 + 2 * self.n_agents + 2 * (self.n_agents - 1)

    def reset(self, seed: int) -> list[Array]:
        rng = np.random.default_rng(seed)
        self.positions = rng.uniform(-1.0, 1.0, (self.n_agents, 2))
        self.velocities = np.zeros((self.n_agents, 2))
        self.landmarks = rng.uniform(-1.0, 1.0, (self.n_agents, 2))
        self.steps = 0
        return self._observations()

    def _observations(self) -> list[Array]:
        obs = []
        for i in range(self.n_agents):
            rel_landmarks = (self.landmarks - self.positions[i]).ravel()
            others = np.delete(self.positions, i, axis=0) - self.positions[i]
            obs.append(
                np.concatenate(
                    [self.velocities[i], self.positions[i], rel_landmarks, others.ravel()]
                )
            )
        return obs

    def state_header(self) -> list[str]:
        cols = ["step"]
        for i in range(self.n_agents):
            cols += [f"agent{i}_x", f"agent{i}_y", f"agent{i}_vx", f"agent{i}_vy"]
        for i in range(self.n_agents):
            cols += [f"landmark{i}_x", f"landmark{i}_y"]
        return cols

    def state_row(self) -> list[float]:
        row = [float(self.steps)]
        for i in range(self.n_agents):
            row += [*self.positions[i], *self.velocities[i]]
        for i in range(self.n_agents):
            row += [*self.landmarks[i]]
        return [float(v) for v in row]

    def step(self, actions: list[int]) -> EnvStepOut:
        if len(actions) != self.n_agents:
            raise RangeError(f"{len(actions)} actions for {self.n_agents} agents")
        accel = np.zeros((self.n_agents, 2))
        for i, a in enumerate(actions):
            a = int(a)
            if not 0 <= a < self.n_actions:
                raise RangeError(f"agent {i}: action {a} outside 0..4")
            accel[i] = _SPREAD_ACCEL[a]
        self.velocities = self.damping * self.velocities + accel * self.dt
        speed = np.linalg.norm(self.velocities, axis=1)
        fast = speed > self.max_speed
        if fast.any():
            self.velocities[fast] *= (self.max_speed / speed[fast])[:, None]
        self.positions = np.clip(self.positions + self.velocities * self.dt, -1.0, 1.0)
        self.steps += 1

        dists = np.linalg.norm(
            self.landmarks[:, None, :] - self.positions[None, :, :], axis=2
        )
        coverage = -float(dists.min(axis=1).sum())
        rewards = np.full(self.n_agents, coverage)
        for i in range(self.n_agents):
            for j in range(i + 1, self.n_agents):
                if np.linalg.norm(self.positions[i] - self.positions[j]) < 2 * self.radius:
                    rewards[i] -= 1.0
                    rewards[j] -= 1.0

        truncated = self.steps >= self.max_steps
        return EnvStepOut(self._observations(), list(rewards), False, truncated)


def spread_heuristic(positions: Array, landmarks: Array) -> list[int]:
    """Privileged greedy controller: repeatedly match the globally closest
    unassigned agent/landmark pair, then step each agent along the axis with
    the larger offset toward its landmark. Ties break toward lower indices
    and the x axis; an agent exactly on its landmark holds still."""
    n = positions.shape[0]
    dists = np.linalg.norm(positions[:, None, :] - landmarks[None, :, :], axis=2)
    free_agents = list(range(n))
    free_marks = list(range(n))
    assignment = [0] * n
    while free_agents:
        best = None
        for i in free_agents:
            for m in free_marks:
                key = (dists[i, m], i, m)
                if best is None or key < best:
                    best = key
        _, i, m = best  # type: ignore[misc]
        assignment[i] = m
        free_agents.remove(i)
        free_marks.remove(m)
    actions = []
    for i in range(n):
        dx, dy = landmarks[assignment[i]] - positions[i]
        if dx == 0.0 and dy == 0.0:
            actions.append(0)
        elif abs(dx) >= abs(dy):
            actions.append(1 if dx > 0 else 2)
        else:
            actions.append(3 if dy > 0 else 4)
    return actions


# ---------------------------------------------------------------------------
# Balance: coordinated transport of a package on a rigid plank
# ---------------------------------------------------------------------------

# action 0 = no-op, 1..8 = unit force toward compass direction k*45 degrees
# starting east: 1=E, 2=NE, 3=N, 4=NW, 5=W, 6=SW, 7=S, 8=SE.
_BALANCE_FORCE = np.zeros((9, 2))
for _k in range(8):
    _ang = _k * np.pi / 4.0
    _BALANCE_FORCE[_k + 1] = [np.cos(_ang), np.sin(_ang)]
_BALANCE_FORCE[np.abs(_BALANCE_FORCE) < 1e-12] = 0.0


class BalanceEnv:
    """Rigid plank under gravity, driven by forces at fixed attachment
    offsets; only those forces torque the plank. A point package slides
    along the plank with acceleration -g*sin(angle). The episode terminates
    (with a -10 penalty) when the package slides off or the plank tips past
    45 degrees; per-step reward is the decrease in package-to-goal distance.

    Semi-implicit Euler, dt=0.1: accelerations from the current state update
    the velocities, which then update the positions.
    """

    n_actions = 9
    action_kind = "discrete"

    def __init__(
        self,
        n_agents: int = 4,
        gravity: float = 1.0,
        dt: float = 0.1,
        plank_mass: float = 2.0,
        package_mass: float = 1.0,
        half_length: float = 0.5,
        force: float = 1.0,
        fall_penalty: float = -10.0,
        max_angle: float = float(np.pi / 4),
        max_steps: int = MAX_EPISODE_STEPS,
    ):
        self.n_agents = n_agents
        self.gravity = gravity
        self.dt = dt
        self.plank_mass = plank_mass
        self.package_mass = package_mass
        self.half_length = half_length
        self.force = force
        self.fall_penalty = fall_penalty
        self.max_angle = max_angle
        self.max_steps = max_steps
        self.inertia = plank_mass * (2 * half_length) ** 2 / 12.0
        # evenly spaced attachment offsets strictly inside the plank
        self.attachments = np.linspace(-0.75, 0.75, n_agents) * half_length
        self.pos = np.zeros(2)
        self.vel = np.zeros(2)
        self.angle = 0.0
        self.ang_vel = 0.0
        self.pkg_offset = 0.0
        self.pkg_vel = 0.0
        self.goal = np.zeros(2)
        self.steps = 0

    @property
    def n_actors(self) -> int:
        return self.n_agents

    @property
    def obs_dim(self) -> int:
        # [attachment, plank pos, angle, plank vel, ang vel, pkg offset,
        #  pkg slide vel, goal offset]
        return 11

    def reset(self, seed: int) -> list[Array]:
        rng = np.random.default_rng(seed)
        self.pos = np.zeros(2)
        self.vel = np.zeros(2)
        self.angle = 0.0
        self.ang_vel = 0.0
        self.pkg_offset = float(rng.uniform(-0.5, 0.5) * self.half_length)
        self.pkg_vel = 0.0
        self.goal = np.array([rng.uniform(-0.5, 0.5), rng.uniform(0.5, 1.0)])
        self.steps = 0
        return self._observations()

    def package_position(self) -> Array:
        direction = np.array([np.cos(self.angle), np.sin(self.angle)])
        return self.pos + self.pkg_offset * direction

    def _observations(self) -> list[Array]:
        base = np.concatenate(
            [
                self.pos,
                [self.angle],
                self.vel,
                [self.ang_vel, self.pkg_offset, self.pkg_vel],
                self.goal - self.pos,
            ]
        )
        return [np.concatenate([[a], base]) for a in self.attachments]

    def state_header(self) -> list[str]:
        return [
            "step", "plank_x", "plank_y", "angle", "vel_x", "vel_y", "ang_vel",
            "pkg_offset", "pkg_vel", "goal_x", "goal_y",
        ]

    def state_row(self) -> list[float]:
        return [
            float(self.steps), float(self.pos[0]), float(self.pos[1]),
            float(self.angle), float(self.vel[0]), float(self.vel[1]),
            float(self.ang_vel), float(self.pkg_offset), float(self.pkg_vel),
            float(self.goal[0]), float(self.goal[1]),
        ]

    def step(self, actions: list[int]) -> EnvStepOut:
        if len(actions) != self.n_agents:
            raise RangeError(f"{len(actions)} actions for {self.n_agents} agents")
        forces = np.zeros((self.n_agents, 2))
        for i, a in enumerate(actions):
            a = int(a)
            if not 0 <= a < self.n_actions:
                raise RangeError(f"agent {i}: action {a} outside 0..8")
            forces[i] = self.force * _BALANCE_FORCE[a]

        prev_dist = float(np.linalg.norm(self.package_position() - self.goal))

        total_mass = self.plank_mass + self.package_mass
        cos_t, sin_t = np.cos(self.angle), np.sin(self.angle)
        lin_acc = forces.sum(axis=0) / total_mass + np.array([0.0, -self.gravity])
        torque = float(
            (self.attachments * (cos_t * forces[:, 1] - sin_t * forces[:, 0])).sum()
        )
        ang_acc = torque / self.inertia
        pkg_acc = -self.gravity * sin_t

        self.vel = self.vel + lin_acc * self.dt
        self.pos = self.pos + self.vel * self.dt
        self.ang_vel += ang_acc * self.dt
        self.angle += self.ang_vel * self.dt
        self.pkg_vel += pkg_acc * self.dt
        self.pkg_offset += self.pkg_vel * self.dt
        self.steps += 1

        terminated = (
            abs(self.pkg_offset) > self.half_length or abs(self.angle) > self.max_angle
        )
        new_dist = float(np.linalg.norm(self.package_position() - self.goal))
        reward = prev_dist - new_dist
        if terminated:
            reward += self.fall_penalty
        rewards = [reward] * self.n_agents

        truncated = (not terminated) and self.steps >= self.max_steps
        return EnvStepOut(self._observations(), rewards, terminated, truncated)

    def mechanical_energy(self) -> float:
        """Model energy: plank+package translation and rotation about the
        plank center, package slide, gravity potentials."""
        total_mass = self.plank_mass + self.package_mass
        kinetic = (
            0.5 * total_mass * float(self.vel @ self.vel)
            + 0.5 * self.inertia * self.ang_vel**2
            + 0.5 * self.package_mass * self.pkg_vel**2
        )
        potential = total_mass * self.gravity * self.pos[1]
        potential += self.package_mass * self.gravity * self.pkg_offset * np.sin(self.angle)
        return kinetic + float(potential)


# ---------------------------------------------------------------------------
# Joint-action wrapper for monolithic agents
# ---------------------------------------------------------------------------


class JointActionWrapper:
    """Presents a multi-actor env as a single actor with the product action
    space; observations are concatenated, rewards summed."""

    action_kind = "discrete"
    n_actors = 1

    def __init__(self, env):
        self.env = env
        self.branch_sizes = [env.n_actions] * env.n_actors
        self.n_actions = int(np.prod(self.branch_sizes))

    @property
    def obs_dim(self) -> int:
        return self.env.obs_dim * self.env.n_actors

    def reset(self, seed: int) -> list[Array]:
        obs = self.env.reset(seed)
        return [np.concatenate(obs)]

    def step(self, actions: list[int]) -> EnvStepOut:
        from .agents import manager_joint_decompose

        (joint,) = actions
        joint = int(joint)
        if not 0 <= joint < self.n_actions:
            raise RangeError(f"joint action {joint} outside 0..{self.n_actions - 1}")
        per_agent = manager_joint_decompose(joint, self.branch_sizes)
        out = self.env.step(per_agent)
        return EnvStepOut(
            [np.concatenate(out.observations)],
            [float(sum(out.rewards))],
            out.terminated,
            out.truncated,
            out.info,
        )


class StateRecorder:
    """Wraps an environment and appends one state row per reset/step to a
    CSV file for offline plotting; everything else is proxied."""

    def __init__(self, env, path):
        self.env = env
        self._fh = open(path, "w", newline="")
        self._fh.write(",".join(env.state_header()) + "\n")

    def __getattr__(self, name):
        return getattr(self.env, name)

    def _write(self) -> None:
        self._fh.write(",".join(repr(v) for v in self.env.state_row()) + "\n")

    def reset(self, seed: int):
        obs = self.env.reset(seed)
        self._write()
        return obs

    def step(self, actions):
        out = self.env.step(actions)
        self._write()
        return out

    def close(self) -> None:
        self._fh.close()


ENVIRONMENTS = {"spread": SpreadEnv, "balance": BalanceEnv}


def make_env(env_id: str, n_agents: int, **overrides):
    from .errors import ConfigError

    key = env_id.lower()
    if key not in ENVIRONMENTS:
        raise ConfigError(f"unknown environment {env_id!r}")
    return ENVIRONMENTS[key](n_agents=n_agents, **overrides)
