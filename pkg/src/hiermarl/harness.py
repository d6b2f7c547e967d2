"""Training and evaluation harness.

Wires the published system topologies (two- and three-level PPO stacks,
heterogeneous MAPPO-over-PPO stacks, the learned-communication variant) and
the flat baselines (independent PPO, flat MAPPO, monolithic joint-action
PPO, the privileged heuristic) over the benchmark environments, runs seeded
experiments and persists metrics, evaluation curves, checkpoints and
decision traces. Every emitted file is a deterministic function of
(config, seed).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import nn
from .agents import (
    INCOMING_CONTINUOUS,
    INCOMING_DISCRETE,
    INCOMING_NONE,
    AutoEncoderComm,
    IdentityComm,
    MappoAgent,
    MappoConfig,
    PpoAgent,
    PpoConfig,
    ScriptedAgent,
)
from .config import ExperimentConfig
from .envs import StateRecorder, make_env, spread_heuristic
from .errors import CheckpointError, ConfigError
from .hierarchy import Hierarchy, HierarchyConfig, TraceRecorder, build_hierarchy

# Published training hyperparameters per system (PPO side / MAPPO side).
_PPO_2LEVEL = dict(
    learning_rate=1e-3, buffer_size=2048, num_minibatches=4, update_epochs=4,
    clip_coef=0.2, entropy_coef=0.0, target_kl=None,
)
_PPO_3LEVEL = dict(
    learning_rate=1e-3, buffer_size=2048, num_minibatches=8, update_epochs=4,
    clip_coef=0.1, entropy_coef=0.01, target_kl=0.015,
)
_MAPPO_PLAIN = dict(
    learning_rate=1e-3, buffer_size=10_000, num_minibatches=4, update_epochs=4,
    clip_coef=0.2, entropy_coef=0.0, target_kl=None,
)
_MAPPO_3LEVEL = dict(
    learning_rate=1e-3, buffer_size=10_000, num_minibatches=4, update_epochs=4,
    clip_coef=0.2, entropy_coef=0.01, target_kl=0.015,
)

SYSTEM_HYPERS: dict[str, dict] = {
    "2ppo": {"ppo": _PPO_2LEVEL},
    "3ppo": {"ppo": _PPO_3LEVEL},
    "3ppo-comm": {"ppo": _PPO_3LEVEL, "ae": dict(learning_rate=1e-3, epochs=50)},
    "mappo-ppo": {"ppo": _PPO_2LEVEL, "mappo": _MAPPO_PLAIN},
    "2mappo-ppo": {"ppo": _PPO_2LEVEL, "mappo": _MAPPO_3LEVEL},
    "ippo": {"ppo": _PPO_2LEVEL},
    "mappo": {"mappo": _MAPPO_PLAIN},
    "ppo-joint": {"ppo": _PPO_2LEVEL},
    "heuristic": {},
}


def _agent_rng(seed: int, level: int, slot: int) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence(entropy=seed, spawn_key=(level, slot))
    )


def _episode_seed(run_seed: int, episode: int) -> int:
    state = np.random.SeedSequence(entropy=(run_seed, 1000, episode)).generate_state(
        1, np.uint64
    )
    return int(state[0])


def _merge_ppo_config(system: str, level: int, overrides: dict) -> PpoConfig:
    base = dict(SYSTEM_HYPERS[system].get("ppo", {}))
    base.update(overrides.get(None, {}))
    base.update(overrides.get(level, {}))
    return PpoConfig(**base)


def _merge_mappo_config(system: str, overrides: dict) -> MappoConfig:
    base = dict(SYSTEM_HYPERS[system].get("mappo", {}))
    base.update(overrides)
    return MappoConfig(**base)


def _pair_partition(n: int) -> list[list[int]]:
    if n % 2 != 0:
        raise ConfigError(f"three-level systems need an even agent count, got {n}")
    return [[2 * i, 2 * i + 1] for i in range(n // 2)]


def make_system(
    system: str,
    env,
    seed: int,
    ppo_overrides: dict | None = None,
    mappo_overrides: dict | None = None,
    ae_overrides: dict | None = None,
    trace: TraceRecorder | None = None,
) -> Hierarchy:
    """Build one of the named systems over an environment instance.

    Hierarchical systems put one manager over the whole team (two-level) or
    pair bottom agents under middle managers under one top manager
    (three-level, upper levels acting every second step of the level
    below). Baselines are single-level systems.
    """
    system = system.lower()
    if system not in SYSTEM_HYPERS:
        raise ConfigError(f"unknown system {system!r}")
    ppo_overrides = ppo_overrides or {}
    mappo_overrides = mappo_overrides or {}
    ae_overrides = ae_overrides or {}
    n = env.n_actors
    k_env = env.n_actions

    def ppo(ref, subs, sub_dims, incoming_kind, incoming_width):
        cfg = _merge_ppo_config(system, ref.level, ppo_overrides)
        return PpoAgent(
            input_dim=sum(sub_dims) + incoming_width,
            branch_sizes=[k_env] * len(subs),
            rng=_agent_rng(seed, ref.level, ref.slot),
            incoming_kind=incoming_kind,
            incoming_width=incoming_width,
            config=cfg,
        )

    def mappo(ref, sub_dims, incoming_kind, incoming_width, head_kind):
        cfg = _merge_mappo_config(system, mappo_overrides)
        return MappoAgent(
            sub_obs_dims=list(sub_dims),
            rng=_agent_rng(seed, ref.level, ref.slot),
            head_kind=head_kind,
            action_dim=2,
            n_actions=k_env if head_kind == "categorical" else 0,
            incoming_kind=incoming_kind,
            incoming_width=incoming_width,
            config=cfg,
        )

    def ae_comm(ref, sub_dims):
        base = dict(SYSTEM_HYPERS[system].get("ae", {}))
        base.update(ae_overrides)
        return AutoEncoderComm(
            in_dim=sum(sub_dims),
            rng=_agent_rng(seed, ref.level, 1000 + ref.slot),
            **base,
        )

    if system in ("2ppo", "mappo-ppo"):
        hcfg = HierarchyConfig([n, 1], [None, [list(range(n))]], [1, 1])
        manager_kind = "ppo" if system == "2ppo" else "mappo"
        bottom_in = (INCOMING_DISCRETE, k_env) if manager_kind == "ppo" else (
            INCOMING_CONTINUOUS, 2,
        )

        def factory(ref, subs, sub_dims):
            if ref.level == 0:
                return ppo(ref, subs, sub_dims, *bottom_in), IdentityComm(sub_dims)
            if manager_kind == "ppo":
                agent = ppo(ref, subs, sub_dims, INCOMING_NONE, 0)
            else:
                agent = mappo(ref, sub_dims, INCOMING_NONE, 0, "gaussian")
            return agent, IdentityComm(sub_dims)

    elif system in ("3ppo", "3ppo-comm", "2mappo-ppo"):
        pairs = _pair_partition(n)
        n_mid = len(pairs)
        hcfg = HierarchyConfig(
            [n, n_mid, 1], [None, pairs, [list(range(n_mid))]], [1, 2, 2]
        )
        upper_kind = "mappo" if system == "2mappo-ppo" else "ppo"
        bottom_in = (INCOMING_DISCRETE, k_env) if upper_kind == "ppo" else (
            INCOMING_CONTINUOUS, 2,
        )
        mid_in = bottom_in  # middle agents receive the same encoding from the top

        def factory(ref, subs, sub_dims):
            if ref.level == 0:
                return ppo(ref, subs, sub_dims, *bottom_in), IdentityComm(sub_dims)
            incoming = mid_in if ref.level == 1 else (INCOMING_NONE, 0)
            if upper_kind == "ppo":
                agent = ppo(ref, subs, sub_dims, *incoming)
            else:
                agent = mappo(ref, sub_dims, *incoming, "gaussian")
            # learned messages only where a superior consumes them
            if system == "3ppo-comm" and ref.level == 1:
                comm = ae_comm(ref, sub_dims)
                agent.attached_comm = comm
            else:
                comm = IdentityComm(sub_dims)
            return agent, comm

    elif system == "ippo":
        hcfg = HierarchyConfig([n], [None], [1])

        def factory(ref, subs, sub_dims):
            return ppo(ref, subs, sub_dims, INCOMING_NONE, 0), IdentityComm(sub_dims)

    elif system == "ppo-joint":
        hcfg = HierarchyConfig([1], [[list(range(n))]], [1])

        def factory(ref, subs, sub_dims):
            return ppo(ref, subs, sub_dims, INCOMING_NONE, 0), IdentityComm(sub_dims)

    elif system == "mappo":
        hcfg = HierarchyConfig([1], [[list(range(n))]], [1])

        def factory(ref, subs, sub_dims):
            agent = mappo(ref, sub_dims, INCOMING_NONE, 0, "categorical")
            return agent, IdentityComm(sub_dims)

    elif system == "heuristic":
        if not hasattr(env, "positions"):
            raise ConfigError("the heuristic system only runs on spread")
        hcfg = HierarchyConfig([1], [[list(range(n))]], [1])

        def heuristic_policy(parts, incoming):
            return spread_heuristic(env.positions, env.landmarks)

        def factory(ref, subs, sub_dims):
            return ScriptedAgent(heuristic_policy), IdentityComm(sub_dims)

    else:  # pragma: no cover - guarded above
        raise ConfigError(f"unknown system {system!r}")

    return build_hierarchy(hcfg, env, factory, trace)


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


def evaluate_hierarchy(
    hier: Hierarchy, episodes: int, env_seed_base: int
) -> tuple[float, list[float]]:
    """Deterministic rollouts (argmax / mean actions), env seeds
    env_seed_base .. env_seed_base+episodes-1; training state untouched."""
    if episodes < 1:
        raise ConfigError("evaluation needs at least one episode")
    saved = (hier.env_steps, hier.episode, hier.trace)
    hier.trace = None
    returns: list[float] = []
    for k in range(episodes):
        hier.reset(env_seed_base + k)
        done = False
        while not done:
            res = hier.step(training=False)
            done = res.terminated or res.truncated
        returns.append(float(hier.levels[0].reward_accum))
    hier.env_steps, hier.episode, hier.trace = saved
    return float(np.mean(returns)), returns


def evaluate(
    checkpoint_path, episodes: int, seed: int = 0, render_path=None
) -> tuple[float, list[float]]:
    """Rebuild the system recorded in a checkpoint and evaluate it; with
    render_path set, per-step environment state is dumped as CSV."""
    if episodes < 1:
        raise ConfigError("episodes must be >= 1 (mean of zero episodes undefined)")
    tensors, meta = nn.load_checkpoint(checkpoint_path)
    recipe = meta.get("recipe")
    if not recipe:
        raise CheckpointError("checkpoint carries no rebuild recipe")
    env = make_env(recipe["env"], recipe["n_agents"], **recipe.get("env_overrides", {}))
    if render_path is not None:
        env = StateRecorder(env, render_path)
    hier = make_system(
        recipe["system"],
        env,
        seed=recipe.get("build_seed", 0),
        ppo_overrides=_overrides_from_json(recipe.get("ppo_overrides", {})),
        mappo_overrides=recipe.get("mappo_overrides", {}),
        ae_overrides=recipe.get("ae_overrides", {}),
    )
    hier.load_parameters(tensors)
    result = evaluate_hierarchy(hier, episodes, seed)
    if render_path is not None:
        env.close()
    return result


def _overrides_to_json(overrides: dict) -> dict:
    return {("all" if k is None else str(k)): v for k, v in overrides.items()}


def _overrides_from_json(payload: dict) -> dict:
    return {(None if k == "all" else int(k)): v for k, v in payload.items()}


# ---------------------------------------------------------------------------
# Experiment driver
# ---------------------------------------------------------------------------


def _fmt(x: float) -> str:
    return repr(float(x))


def _ci95(xs: list[float]) -> float:
    if len(xs) < 2:
        return 0.0
    return 1.96 * float(np.std(xs, ddof=1)) / float(np.sqrt(len(xs)))


METRICS_FIXED = (
    "global_step",
    "episode",
    "episode_return",
)
METRICS_STATS = ("policy_loss", "value_loss", "entropy", "approx_kl", "clip_fraction")


@dataclass
class SeedOutcome:
    seed: int
    mean_return: float
    ci95: float


def run_experiment(config: ExperimentConfig) -> Path:
    """Train every seed, then aggregate a summary with per-seed means and a
    95% confidence half-width column. Returns the run directory."""
    config.validate()
    if config.eval_episodes < 1:
        raise ConfigError("run_experiment needs eval_episodes >= 1")
    run_dir = Path(config.out_dir) / f"{config.system}_{config.env}"
    run_dir.mkdir(parents=True, exist_ok=True)
    outcomes: list[SeedOutcome] = []
    for idx, seed in enumerate(config.seeds):
        trace_on = config.trace == "all" or (config.trace == "first_seed" and idx == 0)
        outcome = _train_seed(config, seed, run_dir / f"seed_{seed}", trace_on)
        outcomes.append(outcome)

    with open(run_dir / "summary.csv", "w", newline="") as fh:
        fh.write("system,env,seed,mean_return,ci95_halfwidth\n")
        for o in outcomes:
            fh.write(
                f"{config.system},{config.env},{o.seed},{_fmt(o.mean_return)},{_fmt(o.ci95)}\n"
            )
        means = [o.mean_return for o in outcomes]
        fh.write(
            f"{config.system},{config.env},all,{_fmt(float(np.mean(means)))},{_fmt(_ci95(means))}\n"
        )
    return run_dir


def _train_seed(
    config: ExperimentConfig, seed: int, out_dir: Path, trace_on: bool
) -> SeedOutcome:
    out_dir.mkdir(parents=True, exist_ok=True)
    env = make_env(config.env, config.n_agents, **config.env_overrides)
    trace = TraceRecorder(out_dir / "trace.csv") if trace_on else None
    hier = make_system(
        config.system, env, seed,
        ppo_overrides=config.ppo_overrides,
        mappo_overrides=config.mappo_overrides,
        ae_overrides=config.ae_overrides,
        trace=trace,
    )
    n_levels = hier.n_levels
    level_cols = [f"reward_l{l}" for l in range(n_levels)]

    metrics_path = out_dir / "metrics.csv"
    eval_path = out_dir / "eval.csv"
    final_eval: tuple[float, list[float]] | None = None
    with open(metrics_path, "w", newline="") as mfh, open(eval_path, "w", newline="") as efh:
        mfh.write(",".join(METRICS_FIXED + tuple(level_cols) + METRICS_STATS) + "\n")
        efh.write("global_step,episodes,mean_return,ci95_halfwidth\n")
        episode = 0
        next_eval = config.eval_every
        while hier.env_steps < config.total_steps:
            hier.reset(_episode_seed(seed, episode))
            done = False
            while not done:
                progress = min(hier.env_steps / config.total_steps, 1.0)
                res = hier.step(training=True, progress=progress)
                done = res.terminated or res.truncated
            _write_metrics_row(mfh, hier, episode)
            episode += 1
            if hier.env_steps >= next_eval or hier.env_steps >= config.total_steps:
                mean_ret, rets = evaluate_hierarchy(hier, config.eval_episodes, seed)
                efh.write(
                    f"{hier.env_steps},{len(rets)},{_fmt(mean_ret)},{_fmt(_ci95(rets))}\n"
                )
                final_eval = (mean_ret, rets)
                while next_eval <= hier.env_steps:
                    next_eval += config.eval_every
    if trace is not None:
        trace.close()

    assert final_eval is not None
    recipe = {
        "system": config.system,
        "env": config.env,
        "n_agents": config.n_agents,
        "env_overrides": config.env_overrides,
        "ppo_overrides": _overrides_to_json(config.ppo_overrides),
        "mappo_overrides": config.mappo_overrides,
        "ae_overrides": config.ae_overrides,
        "build_seed": seed,
    }
    nn.save_checkpoint(
        out_dir / "checkpoint.bin", hier.parameters(), meta={"recipe": recipe}
    )
    mean_ret, rets = final_eval
    return SeedOutcome(seed, mean_ret, _ci95(rets))


def _write_metrics_row(fh, hier: Hierarchy, episode: int) -> None:
    level_means = []
    for lvl in hier.levels:
        denom = max(1, lvl.decisions * len(lvl.agents))
        level_means.append(lvl.reward_accum / denom)
    stats: dict[str, list[float]] = {k: [] for k in METRICS_STATS}
    for _, agent in hier.agents():
        last = getattr(agent, "last_stats", None)
        if not last:
            continue
        for key in METRICS_STATS:
            if key in last:
                stats[key].append(float(last[key]))
    cells = [
        str(hier.env_steps),
        str(episode),
        _fmt(hier.levels[0].reward_accum),
        *[_fmt(v) for v in level_means],
        *[_fmt(float(np.mean(stats[k])) if stats[k] else 0.0) for k in METRICS_STATS],
    ]
    fh.write(",".join(cells) + "\n")


def heuristic_returns(
    n_agents: int, episodes: int, seed_base: int = 0, render_path=None, **env_overrides
) -> tuple[float, list[float]]:
    """Mean return of the privileged heuristic (env seeds seed_base..+N-1)."""
    env = make_env("spread", n_agents, **env_overrides)
    if render_path is not None:
        env = StateRecorder(env, render_path)
    returns = []
    for k in range(episodes):
        env.reset(seed_base + k)
        total = 0.0
        done = False
        while not done:
            out = env.step(spread_heuristic(env.positions, env.landmarks))
            total += float(sum(out.rewards))
            done = out.terminated or out.truncated
        returns.append(total)
    if render_path is not None:
        env.close()
    return float(np.mean(returns)), returns
