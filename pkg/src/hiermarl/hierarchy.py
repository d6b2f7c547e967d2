"""Arbitrary-depth agent hierarchies.

Each level is presented to the level above as an environment: actions flow
down (shaping observations), messages and rewards flow up through per-agent
communication functions. A single step of the top level drives the whole
stack down to the real environment, with each level free to act at its own
frequency (a level refreshes the action it receives once per `period` of
its own decisions and holds it in between).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Protocol

import numpy as np

from .errors import (
    CheckpointError,
    ConfigError,
    ConnectivityError,
    DimensionError,
    ProtocolError,
)

Array = np.ndarray


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AgentRef:
    """Position of an agent: level 0 is the bottom, level L-1 the top."""

    level: int
    slot: int

    def name(self) -> str:
        return f"l{self.level}a{self.slot}"


@dataclass
class Connectivity:
    """Tree connectivity between adjacent levels.

    down[l][i] lists the subordinate slots of agent (l, i): slots at level
    l-1 for l >= 1, real-environment actor slots for l == 0. Each entry must
    partition the slot range below it. up is the inverse map for l >= 1.
    """

    down: list[list[list[int]]]
    up: list[dict[int, int]] = field(default_factory=list)

    def validate(self, level_sizes: list[int], n_env_actors: int) -> None:
        if len(self.down) != len(level_sizes):
            raise ConnectivityError("need one down-list group per level")
        for l, groups in enumerate(self.down):
            if len(groups) != level_sizes[l]:
                raise ConnectivityError(
                    f"level {l}: {len(groups)} down-lists for {level_sizes[l]} agents"
                )
            below = n_env_actors if l == 0 else level_sizes[l - 1]
            seen: list[int] = []
            for i, group in enumerate(groups):
                if not group:
                    raise ConnectivityError(f"agent l{l}a{i} has an empty down-list")
                seen.extend(group)
            if sorted(seen) != list(range(below)):
                raise ConnectivityError(
                    f"level {l} down-lists {groups} do not partition 0..{below - 1}"
                )
        self.up = []
        for l in range(1, len(self.down)):
            inv: dict[int, int] = {}
            for i, group in enumerate(self.down[l]):
                for j in group:
                    inv[j] = i
            self.up.append(inv)

    def superior_of(self, ref: AgentRef) -> AgentRef | None:
        if ref.level >= len(self.down) - 1:
            return None
        return AgentRef(ref.level + 1, self.up[ref.level][ref.slot])


@dataclass
class LevelState:
    """Per-level clock and the action currently held from above.

    The incoming action is refreshed once per `period` decisions of this
    level and held in between; `clock` counts this level's own decisions
    since reset.
    """

    clock: int = 0
    period: int = 1
    held_actions: Any = None
    last_obs: list[list[Array]] | None = None
    last_rewards: list[float] | None = None


@dataclass
class StepResult:
    """PettingZoo-style per-agent maps; all maps share one key set."""

    observations: dict[str, Array]
    rewards: dict[str, float]
    terminations: dict[str, bool]
    truncations: dict[str, bool]
    infos: dict[str, dict]

    @property
    def terminated(self) -> bool:
        return any(self.terminations.values())

    @property
    def truncated(self) -> bool:
        return any(self.truncations.values())


# ---------------------------------------------------------------------------
# Agent / communication / environment protocols (duck-typed)
# ---------------------------------------------------------------------------


class LevelAgent(Protocol):
    """What the hierarchy requires of an agent.

    incoming_kind: 'none' | 'discrete' | 'continuous'
    act() returns (components, record): one action component per
    subordinate in down-list order, plus an opaque record handed back to
    store() together with the decision's reward.
    """

    incoming_kind: str

    def act(
        self, obs_parts: list[Array], incoming: Any, training: bool, progress: float
    ) -> tuple[list[Any], Any]: ...

    def store(self, record: Any, reward: float, done: bool) -> None: ...

    def neutral_incoming(self) -> Any: ...


class CommFn(Protocol):
    """phi: (messages from below, rewards from below) -> (message, reward)."""

    out_dim: int

    def __call__(
        self, messages: list[Array], rewards: list[float], training: bool
    ) -> tuple[Array, float]: ...


class RealEnv(Protocol):
    n_actors: int

    def reset(self, seed: int) -> list[Array]: ...

    def step(self, actions: list[Any]): ...  # -> envs.EnvStepOut


# ---------------------------------------------------------------------------
# Free operations
# ---------------------------------------------------------------------------


def gate_and_hold(state: LevelState, incoming: Any) -> Any:
    """Refresh the held action once per `period` of this level's decisions.

    On clocks that are multiples of the period the incoming action replaces
    the held one and is returned; otherwise the held action is returned
    unchanged. The clock advances either way.
    """
    if state.period < 1:
        raise ConfigError(f"period must be >= 1, got {state.period}")
    if state.clock % state.period == 0:
        state.held_actions = incoming
    state.clock += 1
    return state.held_actions


def route_down(
    down_lists: list[list[int]], components: list[list[Any]], n_below: int
) -> list[Any]:
    """Deliver each manager's action components to its subordinates.

    components[i][k] goes to slot down_lists[i][k]; returns a list indexed
    by subordinate slot.
    """
    if len(components) != len(down_lists):
        raise DimensionError(
            f"{len(components)} component lists for {len(down_lists)} agents"
        )
    routed: list[Any] = [None] * n_below
    for group, comps in zip(down_lists, components):
        if len(comps) != len(group):
            raise DimensionError(
                f"{len(comps)} components for down-list of size {len(group)}"
            )
        for slot, comp in zip(group, comps):
            routed[slot] = comp
    return routed


# ---------------------------------------------------------------------------
# Trace recording
# ---------------------------------------------------------------------------

TRACE_COLUMNS = (
    "episode",
    "step",
    "level",
    "slot",
    "incoming_action",
    "action",
    "reward",
    "terminated",
)


def format_trace_value(value: Any) -> str:
    """Canonical trace cell formatting (documented: repr for floats,
    ';'-joined components for vectors, empty string for no action)."""
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, np.ndarray):
        return ";".join(repr(float(v)) for v in value.ravel())
    if isinstance(value, (list, tuple)):
        return ";".join(format_trace_value(v) for v in value)
    return str(value)


class TraceRecorder:
    """Collects one row per agent decision; optionally streams to a file."""

    def __init__(self, path=None):
        self.rows: list[tuple] = []
        self._fh = open(path, "w", newline="") if path is not None else None
        self._header_written = False
        if self._fh is not None:
            self._write_line(TRACE_COLUMNS)

    def _write_line(self, cells) -> None:
        assert self._fh is not None
        self._fh.write(",".join(str(c) for c in cells) + "\n")

    def record(
        self,
        episode: int,
        step: int,
        level: int,
        slot: int,
        incoming: Any,
        action: Any,
        reward: float,
        terminated: bool,
    ) -> None:
        row = (
            episode,
            step,
            level,
            slot,
            format_trace_value(incoming),
            format_trace_value(action),
            repr(float(reward)),
            "1" if terminated else "0",
        )
        if self._fh is not None:
            self._write_line(row)
        else:
            self.rows.append(row)

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None


# ---------------------------------------------------------------------------
# Hierarchy construction
# ---------------------------------------------------------------------------


@dataclass
class HierarchyConfig:
    """Static description of a hierarchy.

    level_sizes: agents per level, bottom first.
    down: subordinate slots per agent per level (level 0 points at real
      actors); None at level 0 means the identity partition.
    periods: periods[l] = decisions of level l-1 per decision of level l;
      periods[0] must be 1 (the bottom level drives the environment 1:1).
    """

    level_sizes: list[int]
    down: list[list[list[int]] | None]
    periods: list[int]

    def normalized(self, n_env_actors: int) -> "HierarchyConfig":
        if len(self.level_sizes) < 1:
            raise ConfigError("need at least one level")
        if any(n < 1 for n in self.level_sizes):
            raise ConfigError(f"empty level in {self.level_sizes}")
        if len(self.periods) != len(self.level_sizes):
            raise ConfigError("need one period per level")
        if self.periods[0] != 1:
            raise ConfigError("periods[0] must be 1")
        if any(p < 1 for p in self.periods):
            raise ConfigError(f"periods must be >= 1, got {self.periods}")
        if len(self.down) != len(self.level_sizes):
            raise ConfigError("need one down-list group per level (None for 1:1)")
        down: list[list[list[int]]] = []
        for l, group in enumerate(self.down):
            if group is None:
                if l == 0:
                    if self.level_sizes[0] != n_env_actors:
                        raise ConfigError(
                            "level 0 needs an explicit partition when its size "
                            f"({self.level_sizes[0]}) != actor count ({n_env_actors})"
                        )
                    group = [[i] for i in range(n_env_actors)]
                else:
                    raise ConfigError(f"level {l} down-lists missing")
            down.append([list(g) for g in group])
        return HierarchyConfig(list(self.level_sizes), down, list(self.periods))


class _Level:
    def __init__(
        self,
        index: int,
        agents: list,
        comms: list,
        down_lists: list[list[int]],
        period: int,
    ):
        self.index = index
        self.agents = agents
        self.comms = comms
        self.down_lists = down_lists
        self.state = LevelState(period=period)
        self.cached_obs: list[list[Array]] = []
        self.decisions = 0  # since reset
        self.decision_step = 0  # per-episode decision index for the trace
        self.reward_accum = 0.0  # sum of per-agent decision rewards since reset

    @property
    def names(self) -> list[str]:
        return [AgentRef(self.index, i).name() for i in range(len(self.agents))]


AgentFactory = Callable[[AgentRef, list[int], list[int]], tuple[Any, Any]]
# factory(ref, subordinate_slots, subordinate_message_dims) -> (agent, comm)


def build_hierarchy(
    config: HierarchyConfig,
    env,
    agent_factory: AgentFactory,
    trace: TraceRecorder | None = None,
) -> "Hierarchy":
    """Validate the topology, instantiate agents bottom-up and check that
    every declared width chains (subordinate message widths sum to each
    communication input, which plus the incoming-action encoding gives the
    policy input)."""
    cfg = config.normalized(env.n_actors)
    connectivity = Connectivity(down=cfg.down)
    connectivity.validate(cfg.level_sizes, env.n_actors)

    levels: list[_Level] = []
    below_dims = [getattr(env, "obs_dim", None)] * env.n_actors
    for l, size in enumerate(cfg.level_sizes):
        agents = []
        comms = []
        out_dims: list[int | None] = []
        for i in range(size):
            ref = AgentRef(l, i)
            subs = cfg.down[l][i]
            sub_dims = [below_dims[s] for s in subs]
            agent, comm = agent_factory(ref, subs, sub_dims)
            _check_dims(ref, agent, comm, sub_dims)
            agents.append(agent)
            comms.append(comm)
            out_dims.append(getattr(comm, "out_dim", None))
        period = cfg.periods[l + 1] if l + 1 < len(cfg.level_sizes) else 1
        levels.append(_Level(l, agents, comms, cfg.down[l], period))
        below_dims = out_dims
    return Hierarchy(env, levels, connectivity, cfg, trace)


def _check_dims(ref: AgentRef, agent, comm, sub_dims: list[int | None]) -> None:
    if any(d is None for d in sub_dims):
        return  # scripted pieces may leave widths undeclared
    total = sum(sub_dims)
    comm_in = getattr(comm, "in_dim", None)
    if comm_in is not None and comm_in != total:
        raise DimensionError(
            f"{ref.name()}: communication input {comm_in} != "
            f"sum of subordinate message widths {total}"
        )
    expected = getattr(agent, "input_dim", None)
    if expected is not None:
        width = getattr(agent, "incoming_width", 0)
        if expected != total + width:
            raise DimensionError(
                f"{ref.name()}: policy input {expected} != observation {total} "
                f"+ incoming encoding {width}"
            )
    n_subs = getattr(agent, "subordinate_count", None)
    if n_subs is not None and n_subs != len(sub_dims):
        raise DimensionError(
            f"{ref.name()}: agent emits {n_subs} components for "
            f"{len(sub_dims)} subordinates"
        )


# ---------------------------------------------------------------------------
# The hierarchy itself
# ---------------------------------------------------------------------------


class Hierarchy:
    """A self-contained stack of levels over one real environment.

    Single-threaded by design: run several seeded instances for parallelism.
    The harness only ever steps the top level; each level drives the one
    below it.
    """

    def __init__(
        self,
        env,
        levels: list[_Level],
        connectivity: Connectivity,
        config: HierarchyConfig,
        trace: TraceRecorder | None = None,
    ):
        self.env = env
        self.levels = levels
        self.connectivity = connectivity
        self.config = config
        self.trace = trace
        self.episode = -1
        self.env_steps = 0  # cumulative real-environment steps
        self._was_reset = False
        self._episode_done = False

    # -- properties ---------------------------------------------------------

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    @property
    def top(self) -> _Level:
        return self.levels[-1]

    def agent_names(self, level: int) -> list[str]:
        return self.levels[level].names

    def decision_counts(self) -> list[int]:
        """Fresh decisions per level since the last reset."""
        return [lvl.decisions for lvl in self.levels]

    def agents(self):
        for lvl in self.levels:
            yield from ((AgentRef(lvl.index, i), a) for i, a in enumerate(lvl.agents))

    # -- reset / step --------------------------------------------------------

    def reset(self, seed: int) -> dict[str, Array]:
        """Reset the real environment and propagate messages up through
        every communication function; clocks and held actions start fresh.
        Returns the top agents' initial observations (the concatenated
        messages routed to each of them from the level below)."""
        actor_obs = self.env.reset(seed)
        below_msgs: list[Array] = list(actor_obs)
        for lvl in self.levels:
            lvl.state.clock = 0
            lvl.state.held_actions = [a.neutral_incoming() for a in lvl.agents]
            lvl.decisions = 0
            lvl.decision_step = 0
            lvl.reward_accum = 0.0
            lvl.cached_obs = []
            msgs_out: list[Array] = []
            for i, (agent, comm) in enumerate(zip(lvl.agents, lvl.comms)):
                parts = [below_msgs[s] for s in lvl.down_lists[i]]
                message, _ = comm(parts, [0.0] * len(parts), False)
                lvl.cached_obs.append(parts)
                msgs_out.append(message)
            lvl.state.last_obs = [list(p) for p in lvl.cached_obs]
            lvl.state.last_rewards = [0.0] * len(lvl.agents)
            below_msgs = msgs_out
        self.episode += 1
        self._was_reset = True
        self._episode_done = False
        top = self.top
        return {
            name: np.concatenate(parts)
            for name, parts in zip(top.names, top.cached_obs)
        }

    def step(
        self,
        actions_from_above: dict[str, Any] | None = None,
        level: int | None = None,
        training: bool = True,
        progress: float = 0.0,
    ) -> StepResult:
        """One decision of the level above `level` (default: drive the top
        with the empty-action sentinel)."""
        if not self._was_reset:
            raise ProtocolError("step called before reset")
        if self._episode_done:
            raise ProtocolError("episode finished; reset before stepping again")
        if level is None:
            level = self.n_levels - 1
        lvl_names = self.levels[level].names
        incoming: list[Any]
        if actions_from_above:
            if set(actions_from_above) != set(lvl_names):
                raise DimensionError(
                    f"action keys {sorted(actions_from_above)} != agents {lvl_names}"
                )
            incoming = [actions_from_above[n] for n in lvl_names]
        else:
            incoming = [None] * len(lvl_names)
        result = self._step_level(level, incoming, training, progress)
        if result.terminated or result.truncated:
            self._episode_done = True
        return result

    def _step_level(
        self, l: int, incoming: list[Any], training: bool, progress: float
    ) -> StepResult:
        lvl = self.levels[l]
        n = len(lvl.agents)
        total_rewards = [0.0] * n
        messages: list[Array] = [np.zeros(0)] * n
        terminated = False
        truncated = False
        env_info: dict = {}

        for _ in range(lvl.state.period):
            held = gate_and_hold(lvl.state, incoming)
            components: list[list[Any]] = []
            records: list[Any] = []
            for i, agent in enumerate(lvl.agents):
                comps, rec = agent.act(
                    lvl.cached_obs[i], held[i], training, progress
                )
                components.append(comps)
                records.append(rec)
            n_below = (
                self.env.n_actors if l == 0 else len(self.levels[l - 1].agents)
            )
            routed = route_down(lvl.down_lists, components, n_below)

            if l == 0:
                out = self.env.step(routed)
                below_obs = out.observations
                below_rewards = out.rewards
                terminated = out.terminated
                truncated = out.truncated
                env_info = getattr(out, "info", {}) or {}
                self.env_steps += 1
            else:
                below = self._step_level(l - 1, routed, training, progress)
                names_below = self.levels[l - 1].names
                below_obs = [below.observations[nm] for nm in names_below]
                below_rewards = [below.rewards[nm] for nm in names_below]
                terminated = below.terminated
                truncated = below.truncated

            done = terminated or truncated
            for i, (agent, comm) in enumerate(zip(lvl.agents, lvl.comms)):
                parts = [below_obs[s] for s in lvl.down_lists[i]]
                part_rewards = [below_rewards[s] for s in lvl.down_lists[i]]
                message, reward = comm(parts, part_rewards, training)
                lvl.cached_obs[i] = parts
                messages[i] = message
                total_rewards[i] += reward
                lvl.reward_accum += reward
                if self.trace is not None:
                    self.trace.record(
                        self.episode, lvl.decision_step, l, i,
                        held[i], _action_repr(components[i]), reward, terminated,
                    )
                if training:
                    agent.store(records[i], reward, done)
            lvl.state.last_obs = [list(p) for p in lvl.cached_obs]
            lvl.state.last_rewards = list(total_rewards)
            lvl.decisions += 1
            lvl.decision_step += 1
            if done:
                break

        names = lvl.names
        return StepResult(
            observations={nm: messages[i] for i, nm in enumerate(names)},
            rewards={nm: total_rewards[i] for i, nm in enumerate(names)},
            terminations={nm: terminated for nm in names},
            truncations={nm: truncated for nm in names},
            infos={nm: dict(env_info) for nm in names},
        )

    # -- parameters ----------------------------------------------------------

    def parameters(self) -> dict[str, Array]:
        out: dict[str, Array] = {}
        for ref, agent in self.agents():
            getter = getattr(agent, "parameters", None)
            if getter is None:
                continue
            for key, arr in getter().items():
                out[f"{ref.name()}.{key}"] = arr
        for lvl in self.levels:
            for i, comm in enumerate(lvl.comms):
                getter = getattr(comm, "parameters", None)
                if getter is None:
                    continue
                for key, arr in getter().items():
                    out[f"{AgentRef(lvl.index, i).name()}.comm.{key}"] = arr
        return out

    def load_parameters(self, tensors: dict[str, Array]) -> None:
        own = self.parameters()
        if set(own) != set(tensors):
            mismatch = sorted(set(own) ^ set(tensors))[:4]
            raise CheckpointError(f"parameter name mismatch near {mismatch}")
        for name, arr in tensors.items():
            target = own[name]
            if target.shape != arr.shape:
                raise CheckpointError(
                    f"{name}: shape {arr.shape} != expected {target.shape}"
                )
            target[...] = arr


def _action_repr(components: list[Any]) -> Any:
    """Trace representation of an agent's decision: the single component
    for solo agents, the component list (';'-joined later) otherwise."""
    if len(components) == 1:
        return components[0]
    return list(components)
