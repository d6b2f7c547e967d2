"""Harness tests: config parsing, system wiring, experiment plumbing,
checkpoints, evaluation, determinism of emitted files, and the CLI."""

import numpy as np
import pytest

from hiermarl import nn
from hiermarl.agents import MappoAgent, PpoAgent, ScriptedAgent
from hiermarl.cli import main as cli_main
from hiermarl.config import ExperimentConfig, parse_config
from hiermarl.envs import BalanceEnv, SpreadEnv
from hiermarl.errors import CheckpointError, ConfigError
from hiermarl.harness import (
    evaluate,
    evaluate_hierarchy,
    heuristic_returns,
    make_system,
    run_experiment,
)

from test_envs import HEURISTIC_RETURN_4A


def smoke_config(tmp_path, **kw):
    defaults = dict(
        system="2ppo", env="spread", n_agents=2, total_steps=600,
        eval_every=300, eval_episodes=2, trace="all",
        out_dir=str(tmp_path / "runs"), seeds=[0, 1],
    )
    defaults.update(kw)
    return ExperimentConfig(**defaults)


# ---------------------------------------------------------------------------
# config file parsing
# ---------------------------------------------------------------------------


def test_parse_minimal_config(tmp_path):
    path = tmp_path / "c.cfg"
    path.write_text(
        "[experiment]\nsystem = 3ppo\nenv = spread\nn_agents = 4\n"
        "total_steps = 5000\n"
    )
    cfg = parse_config(path)
    assert cfg.system == "3ppo"
    assert cfg.total_steps == 5000
    assert cfg.eval_every == 10_000  # default


def test_parse_overrides_sections(tmp_path):
    path = tmp_path / "c.cfg"
    path.write_text(
        "[experiment]\nsystem = 3ppo\nenv = balance\n\n"
        "[env]\ngravity = 0.5\n\n"
        "[ppo]\nlearning_rate = 0.0005\n\n"
        "[ppo.level1]\nclip_coef = 0.3\n\n"
        "[ae]\nepochs = 25\n"
    )
    cfg = parse_config(path)
    assert cfg.env_overrides == {"gravity": 0.5}
    assert cfg.ppo_overrides[None] == {"learning_rate": 0.0005}
    assert cfg.ppo_overrides[1] == {"clip_coef": 0.3}
    assert cfg.ae_overrides == {"epochs": 25}


def test_parse_rejects_unknown_bits(tmp_path):
    path = tmp_path / "c.cfg"
    path.write_text("[experiment]\nsystem = 3ppo\nenv = spread\nwat = 1\n")
    with pytest.raises(ConfigError):
        parse_config(path)
    path.write_text("[experiment]\nsystem = 9ppo\nenv = spread\n")
    with pytest.raises(ConfigError):
        parse_config(path)
    path.write_text("[experiment]\nsystem = 3ppo\nenv = spread\n\n[oops]\nx = 1\n")
    with pytest.raises(ConfigError):
        parse_config(path)
    with pytest.raises(ConfigError):
        parse_config(tmp_path / "missing.cfg")


def test_shipped_configs_parse():
    from pathlib import Path

    for path in sorted(Path("configs").glob("*.cfg")):
        cfg = parse_config(path)
        assert cfg.total_steps == 2_000_000


# ---------------------------------------------------------------------------
# make_system topologies
# ---------------------------------------------------------------------------


def test_make_system_3ppo_spread_topology():
    env = SpreadEnv(n_agents=4)
    hier = make_system("3ppo", env, seed=0)
    assert [len(l.agents) for l in hier.levels] == [4, 2, 1]
    middle = hier.levels[1].agents[0]
    assert isinstance(middle, PpoAgent)
    assert middle.n_actions == 25  # two subordinates, five input actions each
    top = hier.levels[2].agents[0]
    assert top.n_actions == 25
    # upper levels act every two steps of the level below
    assert hier.levels[0].state.period == 2
    assert hier.levels[1].state.period == 2
    assert hier.levels[2].state.period == 1


def test_make_system_2ppo_balance_joint_count():
    env = BalanceEnv(n_agents=4)
    hier = make_system("2ppo", env, seed=0)
    top = hier.levels[1].agents[0]
    # product rule over four 9-action subordinates (9^4), kept internally
    # consistent rather than matching any smaller published figure
    assert top.n_actions == 6561


def test_make_system_2ppo_widths():
    env = SpreadEnv(n_agents=4)
    hier = make_system("2ppo", env, seed=0)
    bottom = hier.levels[0].agents[0]
    assert bottom.input_dim == 18 + 5  # obs + one-hot incoming
    top = hier.levels[1].agents[0]
    assert top.input_dim == 4 * 18
    assert top.n_actions == 625


def test_make_system_mappo_ppo_manager():
    env = SpreadEnv(n_agents=4)
    hier = make_system("mappo-ppo", env, seed=0)
    top = hier.levels[1].agents[0]
    assert isinstance(top, MappoAgent)
    assert top.critic.in_dim == 4 * 18
    assert top.head_kind == "gaussian"
    bottom = hier.levels[0].agents[0]
    assert bottom.incoming_kind == "continuous"
    assert bottom.input_dim == 18 + 2


def test_make_system_3ppo_comm_uses_bottleneck_messages():
    env = SpreadEnv(n_agents=4)
    hier = make_system("3ppo-comm", env, seed=0)
    from hiermarl.agents import AutoEncoderComm

    assert all(isinstance(c, AutoEncoderComm) for c in hier.levels[1].comms)
    # top observes two 8-wide learned messages
    top = hier.levels[2].agents[0]
    assert top.input_dim == 16
    mid = hier.levels[1].agents[0]
    assert mid.attached_comm is hier.levels[1].comms[0]


def test_make_system_baselines_are_single_level():
    env = SpreadEnv(n_agents=4)
    for system in ("ippo", "mappo", "ppo-joint", "heuristic"):
        hier = make_system(system, env, seed=0)
        assert hier.n_levels == 1
    assert len(make_system("ippo", env, 0).levels[0].agents) == 4
    joint = make_system("ppo-joint", env, 0).levels[0].agents[0]
    assert joint.n_actions == 625
    flat = make_system("mappo", env, 0).levels[0].agents[0]
    assert isinstance(flat, MappoAgent) and flat.head_kind == "categorical"


def test_make_system_heuristic_needs_spread():
    with pytest.raises(ConfigError):
        make_system("heuristic", BalanceEnv(), seed=0)


def test_make_system_3level_needs_even_team():
    with pytest.raises(ConfigError):
        make_system("3ppo", SpreadEnv(n_agents=3), seed=0)


def test_make_system_ppo_override_reaches_agents():
    env = SpreadEnv(n_agents=2)
    hier = make_system("2ppo", env, seed=0, ppo_overrides={None: {"clip_coef": 0.07}})
    assert hier.levels[0].agents[0].cfg.clip_coef == 0.07


# ---------------------------------------------------------------------------
# experiment runs
# ---------------------------------------------------------------------------


def test_run_experiment_smoke_outputs(tmp_path):
    cfg = smoke_config(tmp_path)
    run_dir = run_experiment(cfg)
    assert (run_dir / "summary.csv").exists()
    for seed in (0, 1):
        seed_dir = run_dir / f"seed_{seed}"
        assert (seed_dir / "metrics.csv").exists()
        assert (seed_dir / "eval.csv").exists()
        assert (seed_dir / "trace.csv").exists()
        assert (seed_dir / "checkpoint.bin").exists()
    lines = (run_dir / "summary.csv").read_text().strip().splitlines()
    assert lines[0] == "system,env,seed,mean_return,ci95_halfwidth"
    assert len(lines) == 4  # two seeds + aggregate
    assert lines[-1].split(",")[2] == "all"


def test_run_experiment_step_accounting(tmp_path):
    cfg = smoke_config(tmp_path, seeds=[0], trace="off")
    run_dir = run_experiment(cfg)
    rows = (run_dir / "seed_0" / "metrics.csv").read_text().strip().splitlines()
    last_step = int(rows[-1].split(",")[0])
    assert cfg.total_steps <= last_step < cfg.total_steps + 100


def test_run_experiment_deterministic_bytes(tmp_path):
    cfg_a = smoke_config(tmp_path / "a")
    cfg_b = smoke_config(tmp_path / "b")
    dir_a = run_experiment(cfg_a)
    dir_b = run_experiment(cfg_b)
    for rel in ("seed_0/metrics.csv", "seed_0/eval.csv", "seed_0/trace.csv",
                "seed_1/metrics.csv", "summary.csv"):
        assert (dir_a / rel).read_bytes() == (dir_b / rel).read_bytes(), rel


def test_run_experiment_trace_first_seed_only(tmp_path):
    cfg = smoke_config(tmp_path, trace="first_seed")
    run_dir = run_experiment(cfg)
    assert (run_dir / "seed_0" / "trace.csv").exists()
    assert not (run_dir / "seed_1" / "trace.csv").exists()


def test_run_experiment_heuristic_matches_frozen_constant(tmp_path):
    cfg = smoke_config(
        tmp_path, system="heuristic", n_agents=4, seeds=[0],
        total_steps=100, eval_every=100, eval_episodes=10, trace="off",
    )
    run_dir = run_experiment(cfg)
    lines = (run_dir / "summary.csv").read_text().strip().splitlines()
    all_row = lines[-1].split(",")
    assert float(all_row[3]) == pytest.approx(HEURISTIC_RETURN_4A, abs=1e-9)


# ---------------------------------------------------------------------------
# evaluation and checkpoints
# ---------------------------------------------------------------------------


def test_evaluate_hierarchy_repeatable_and_side_effect_free():
    env = SpreadEnv(n_agents=2)
    hier = make_system("ippo", env, seed=3)
    hier.reset(0)
    steps_before = hier.env_steps
    m1, r1 = evaluate_hierarchy(hier, 3, env_seed_base=5)
    m2, r2 = evaluate_hierarchy(hier, 3, env_seed_base=5)
    assert r1 == r2 and m1 == m2
    assert hier.env_steps == steps_before
    for _, agent in hier.agents():
        assert agent.buffer.ptr == 0


def test_evaluate_checkpoint_roundtrip(tmp_path):
    cfg = smoke_config(tmp_path, seeds=[0], trace="off")
    run_dir = run_experiment(cfg)
    ckpt = run_dir / "seed_0" / "checkpoint.bin"
    m1, r1 = evaluate(ckpt, episodes=3, seed=0)
    m2, r2 = evaluate(ckpt, episodes=3, seed=0)
    assert m1 == m2 and r1 == r2
    assert len(r1) == 3


def test_evaluate_checkpoint_shape_mismatch(tmp_path):
    cfg = smoke_config(tmp_path, seeds=[0], trace="off")
    run_dir = run_experiment(cfg)
    ckpt = run_dir / "seed_0" / "checkpoint.bin"
    tensors, meta = nn.load_checkpoint(ckpt)
    meta["recipe"]["n_agents"] = 4  # rebuilt nets won't match saved shapes
    doctored = tmp_path / "doctored.bin"
    nn.save_checkpoint(doctored, tensors, meta)
    with pytest.raises(CheckpointError):
        evaluate(doctored, episodes=1, seed=0)


def test_evaluate_zero_episodes_rejected(tmp_path):
    with pytest.raises(ConfigError):
        evaluate(tmp_path / "nope.bin", episodes=0)


def test_heuristic_returns_matches_eval_path():
    env_mean, _ = heuristic_returns(4, 10, seed_base=0)
    env = SpreadEnv(n_agents=4)
    hier = make_system("heuristic", env, seed=0)
    hier.reset(0)
    hier_mean, _ = evaluate_hierarchy(hier, 10, env_seed_base=0)
    assert hier_mean == pytest.approx(env_mean, abs=1e-9)


# ---------------------------------------------------------------------------
# CLI
# ---------------------------------------------------------------------------


def test_cli_train_eval_analyze_heuristic(tmp_path, capsys):
    cfg_path = tmp_path / "smoke.cfg"
    cfg_path.write_text(
        "[experiment]\nsystem = 2ppo\nenv = spread\nn_agents = 2\n"
        "total_steps = 300\neval_every = 300\neval_episodes = 2\ntrace = all\n"
    )
    out = tmp_path / "runs"
    assert cli_main(["train", "--config", str(cfg_path), "--seeds", "0",
                     "--out", str(out)]) == 0
    run_dir = out / "2ppo_spread"
    assert cli_main(["eval", "--ckpt", str(run_dir / "seed_0" / "checkpoint.bin"),
                     "--episodes", "2"]) == 0
    assert cli_main(["analyze", "--trace", str(run_dir / "seed_0" / "trace.csv"),
                     "--bottom", "l0:a0", "--out", str(tmp_path / "table.csv")]) == 0
    assert (tmp_path / "table.csv").read_text().startswith("episode,bottom_action")
    assert cli_main(["heuristic", "--episodes", "2", "--n-agents", "2"]) == 0
    capsys.readouterr()


def test_cli_error_codes(tmp_path):
    missing = tmp_path / "missing.cfg"
    assert cli_main(["train", "--config", str(missing)]) == 2
    bad = tmp_path / "bad.cfg"
    bad.write_text("[experiment]\nsystem = wat\nenv = spread\n")
    assert cli_main(["train", "--config", str(bad)]) == 2
    assert cli_main(["eval", "--ckpt", str(tmp_path / "none.bin")]) == 3


def test_render_trace_dumps_state_rows(tmp_path, capsys):
    out = tmp_path / "state.csv"
    assert cli_main(["heuristic", "--episodes", "1", "--n-agents", "2",
                     "--render-trace", str(out)]) == 0
    capsys.readouterr()
    lines = out.read_text().strip().splitlines()
    header = lines[0].split(",")
    assert header[0] == "step"
    assert "agent0_x" in header and "landmark1_y" in header
    # one row at reset plus one per step of the 100-step episode
    assert len(lines) == 1 + 1 + 100


def test_render_trace_from_checkpoint(tmp_path, capsys):
    cfg = smoke_config(tmp_path, seeds=[0], trace="off")
    run_dir = run_experiment(cfg)
    out = tmp_path / "state.csv"
    mean_ret, _ = evaluate(
        run_dir / "seed_0" / "checkpoint.bin", episodes=1, seed=0,
        render_path=out,
    )
    lines = out.read_text().strip().splitlines()
    assert len(lines) == 1 + 1 + 100
    capsys.readouterr()
