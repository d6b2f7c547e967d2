"""Agent-layer tests: input composition, the joint-action codec, identity
and autoencoder communication, PPO decisions/updates, and MAPPO managers."""

import numpy as np
import pytest

from hiermarl import nn
from hiermarl.agents import (
    AutoEncoderComm,
    IdentityComm,
    MappoAgent,
    MappoConfig,
    PpoAgent,
    PpoConfig,
    compose_policy_input,
    identity_comm,
    manager_joint_decompose,
    manager_joint_recompose,
)
from hiermarl.errors import DimensionError, RangeError


# ---------------------------------------------------------------------------
# compose_policy_input
# ---------------------------------------------------------------------------


def test_compose_none_is_unchanged():
    obs = np.arange(6.0)
    out = compose_policy_input(obs, None, "none")
    assert np.array_equal(out, obs)


def test_compose_continuous_appends_raw():
    obs = np.zeros(24)
    out = compose_policy_input(obs, np.array([0.3, -0.7]), "continuous", 2)
    assert out.shape == (26,)
    assert out[-2] == 0.3 and out[-1] == -0.7


def test_compose_discrete_one_hot():
    out = compose_policy_input(np.zeros(3), 2, "discrete", 5)
    assert np.array_equal(out[3:], np.array([0.0, 0.0, 1.0, 0.0, 0.0]))


def test_compose_width_always_adds_encoding():
    rng = np.random.default_rng(0)
    for width in (2, 5, 9):
        obs = rng.standard_normal(int(rng.integers(1, 40)))
        out = compose_policy_input(obs, 1, "discrete", width)
        assert out.shape[0] == obs.shape[0] + width


def test_compose_errors():
    with pytest.raises(DimensionError):
        compose_policy_input(np.zeros(3), 7, "discrete", 5)
    with pytest.raises(DimensionError):
        compose_policy_input(np.zeros(3), np.zeros(3), "continuous", 2)
    with pytest.raises(DimensionError):
        compose_policy_input(np.zeros(3), 0, "mystery", 1)


# ---------------------------------------------------------------------------
# joint-action codec
# ---------------------------------------------------------------------------


def test_decompose_zero():
    assert manager_joint_decompose(0, [5, 5]) == [0, 0]


def test_decompose_max_index_四_branches():
    assert manager_joint_decompose(624, [5, 5, 5, 5]) == [4, 4, 4, 4]


def test_decompose_most_significant_first():
    assert manager_joint_decompose(7, [5, 5]) == [1, 2]


def test_decompose_matches_nested_loop_enumeration():
    # the joint index enumerates subordinate actions odometer-style
    expected = [[a, b] for a in range(5) for b in range(5)]
    got = [manager_joint_decompose(j, [5, 5]) for j in range(25)]
    assert got == expected


def test_decompose_recompose_bijection_mixed_radix():
    rng = np.random.default_rng(1)
    for _ in range(20):
        branches = list(rng.integers(1, 7, size=int(rng.integers(1, 5))))
        total = int(np.prod(branches))
        seen = set()
        for j in range(total):
            digits = manager_joint_decompose(j, branches)
            assert manager_joint_recompose(digits, branches) == j
            seen.add(tuple(digits))
        assert len(seen) == total


def test_decompose_range_error():
    with pytest.raises(RangeError):
        manager_joint_decompose(25, [5, 5])
    with pytest.raises(RangeError):
        manager_joint_decompose(-1, [5, 5])


# ---------------------------------------------------------------------------
# identity communication
# ---------------------------------------------------------------------------


def test_identity_comm_singleton():
    msg, reward = identity_comm([np.array([1.0, 2.0])], [0.5])
    assert np.array_equal(msg, np.array([1.0, 2.0]))
    assert reward == 0.5


def test_identity_comm_sums_rewards():
    _, reward = identity_comm([np.zeros(1), np.zeros(1)], [1.5, -0.5])
    assert reward == 1.0


def test_identity_comm_concat_width():
    msg, _ = identity_comm([np.zeros(17), np.zeros(17)], [0.0, 0.0])
    assert msg.shape == (34,)


def test_identity_comm_empty_error():
    with pytest.raises(DimensionError):
        identity_comm([], [])


def test_identity_comm_class_latches_widths():
    comm = IdentityComm()
    comm([np.zeros(3), np.zeros(2)], [0.0, 0.0])
    with pytest.raises(DimensionError):
        comm([np.zeros(3), np.zeros(5)], [0.0, 0.0])


# ---------------------------------------------------------------------------
# autoencoder communication
# ---------------------------------------------------------------------------


def test_ae_message_strictly_inside_unit_interval():
    ae = AutoEncoderComm(25, np.random.default_rng(0))
    rng = np.random.default_rng(1)
    for _ in range(10):
        msg = ae.encode(rng.standard_normal(25) * 3)
        assert np.all(msg > 0.0) and np.all(msg < 1.0)


def test_ae_encode_deterministic_and_side_effect_free():
    ae = AutoEncoderComm(10, np.random.default_rng(0))
    obs = np.random.default_rng(2).standard_normal(10)
    a = ae.encode(obs)
    b = ae.encode(obs)
    assert np.array_equal(a, b)
    assert ae._batch == []  # encode alone buffers nothing


def test_ae_message_width_constant_eight():
    for in_dim in (25, 34):
        ae = AutoEncoderComm(in_dim, np.random.default_rng(0))
        assert ae.encode(np.zeros(in_dim)).shape == (8,)


def test_ae_call_buffers_only_when_training():
    ae = AutoEncoderComm(4, np.random.default_rng(0))
    ae([np.zeros(2), np.zeros(2)], [1.0, 2.0], training=False)
    assert ae._batch == []
    msg, reward = ae([np.zeros(2), np.zeros(2)], [1.0, 2.0], training=True)
    assert len(ae._batch) == 1
    assert reward == 3.0
    assert msg.shape == (8,)


def test_ae_training_halves_mse_on_random_batch():
    ae = AutoEncoderComm(25, np.random.default_rng(3))
    batch = np.random.default_rng(4).random((256, 25))
    losses = ae.train(batch)
    assert len(losses) == 50
    assert losses[-1] <= 0.5 * losses[0]


def test_ae_training_constant_batch_improves():
    ae = AutoEncoderComm(6, np.random.default_rng(5))
    batch = np.tile(np.linspace(0.1, 0.9, 6), (32, 1))
    losses = ae.train(batch)
    assert losses[-1] < losses[0]


def test_ae_zero_batch_zero_decoder_is_fixed_point():
    ae = AutoEncoderComm(5, np.random.default_rng(6))
    for arr in ae.decoder.weights + ae.decoder.biases:
        arr[...] = 0.0
    losses = ae.train(np.zeros((8, 5)))
    assert losses[0] == 0.0 and losses[-1] == 0.0


# ---------------------------------------------------------------------------
# PPO agent
# ---------------------------------------------------------------------------


def make_ppo(seed=0, **cfg):
    config = PpoConfig(**{"buffer_size": 64, "num_minibatches": 4, **cfg})
    return PpoAgent(
        input_dim=6, branch_sizes=[5], rng=np.random.default_rng(seed), config=config
    )


def test_ppo_eval_argmax_with_forced_logits():
    agent = make_ppo()
    agent.actor.weights[-1][...] = 0.0
    agent.actor.biases[-1][...] = 0.0
    agent.actor.biases[-1][3] = 10.0
    action, logp, _ = agent.policy_step(np.zeros(6), training=False)
    assert action == 3
    assert logp == pytest.approx(0.0, abs=1e-3)  # ~certain


def test_ppo_sampling_reproducible():
    a1 = make_ppo(seed=7)
    a2 = make_ppo(seed=7)
    x = np.random.default_rng(1).standard_normal(6)
    seq1 = [a1.policy_step(x, training=True)[0] for _ in range(10)]
    seq2 = [a2.policy_step(x, training=True)[0] for _ in range(10)]
    assert seq1 == seq2


def test_ppo_log_prob_matches_softmax_oracle():
    agent = make_ppo(seed=3)
    x = np.random.default_rng(2).standard_normal(6)
    action, logp, _ = agent.policy_step(x, training=True)
    logits, _ = nn.mlp_forward(agent.actor, x)
    probs = np.exp(logits - logits.max())
    probs /= probs.sum()
    assert logp == pytest.approx(float(np.log(probs[action])), abs=1e-12)


def test_ppo_eval_is_pure():
    agent = make_ppo(seed=5)
    x = np.random.default_rng(3).standard_normal(6)
    first = agent.policy_step(x, training=False)
    second = agent.policy_step(x, training=False)
    assert first == second
    assert agent.buffer.ptr == 0


def _fill_buffer(agent, seed=0, reward_fn=None):
    rng = np.random.default_rng(seed)
    while not agent.buffer.full:
        x = rng.standard_normal(agent.input_dim)
        action, logp, value = agent.policy_step(x, training=True)
        reward = float(rng.standard_normal()) if reward_fn is None else reward_fn(x, action)
        agent.store((x, action, logp, value), reward, bool(rng.random() < 0.05))


def test_ppo_zero_advantage_batch_only_moves_critic():
    agent = make_ppo(seed=11, entropy_coef=0.0)
    x = np.ones(6)
    action, logp, value = agent.policy_step(x, training=True)
    # one-step episodes make every advantage identical
    while not agent.buffer.full:
        agent.store((x, action, logp, value), 1.0, True)
    actor_before = [w.copy() for w in agent.actor.flat()]
    critic_before = [w.copy() for w in agent.critic.flat()]
    agent.update(last_value=value)
    # identical transitions -> constant advantages -> normalization guard
    # centers them to ~0 -> no meaningful policy/entropy gradient; only the
    # value term moves parameters (actor residue is Adam-epsilon noise)
    actor_drift = max(
        float(np.abs(w - b).max()) for w, b in zip(agent.actor.flat(), actor_before)
    )
    critic_drift = max(
        float(np.abs(w - b).max()) for w, b in zip(agent.critic.flat(), critic_before)
    )
    assert actor_drift < 1e-9
    assert critic_drift > 1e-4


def test_ppo_update_reduces_full_batch_loss_in_most_trials():
    wins = 0
    for seed in range(9):
        agent = make_ppo(seed=100 + seed)
        _fill_buffer(agent, seed=seed)
        buf = agent.buffer
        n = buf.ptr
        obs = buf.observations[:n].copy()
        actions = buf.actions[:n].copy()
        logp_old = buf.log_probs[:n].copy()
        values_old = buf.values[:n].copy()
        adv, ret = nn.gae(
            buf.rewards[:n], buf.values[:n], 0.0, agent.cfg.gamma,
            agent.cfg.gae_lambda, buf.dones[:n],
        )
        adv = nn.normalize_advantages(adv)

        def full_batch_loss():
            logits, _ = nn.mlp_forward(agent.actor, obs)
            values, _ = nn.mlp_forward(agent.critic, obs)
            logp_new, entropy = nn.categorical_eval(logits, actions)
            return nn.ppo_loss(
                logp_new, logp_old, adv, values[:, 0], ret,
                agent.cfg.clip_coef, agent.cfg.value_coef, agent.cfg.entropy_coef,
                entropy, values_old,
            ).total

        before = full_batch_loss()
        agent.update(last_value=0.0)
        after = full_batch_loss()
        if after < before:
            wins += 1
    assert wins >= 6  # >= 2/3 of seeded trials


def test_ppo_target_kl_early_stop_with_adversarial_lr():
    agent = make_ppo(seed=21, learning_rate=1.0, anneal_lr=False, target_kl=0.015)
    _fill_buffer(agent, seed=2)
    stats = agent.update(last_value=0.0)
    max_passes = agent.cfg.update_epochs * agent.cfg.num_minibatches
    assert stats["early_stop"]
    assert stats["minibatch_passes"] < max_passes


def test_ppo_update_triggers_on_next_act_and_clears():
    agent = make_ppo(seed=31)
    _fill_buffer(agent, seed=3)
    assert agent.buffer.full
    comps, rec = agent.act([np.zeros(6)], None, training=True)
    assert agent.last_stats is not None
    assert agent.buffer.ptr == 0
    assert len(comps) == 1


def test_ppo_params_finite_after_update():
    agent = make_ppo(seed=41, learning_rate=0.1)
    _fill_buffer(agent, seed=4)
    agent.update(last_value=0.0)
    for arr in agent._params():
        assert np.all(np.isfinite(arr))


def test_ppo_anneal_sets_lr_from_progress():
    agent = make_ppo(seed=51)
    _fill_buffer(agent, seed=5)
    agent.update(last_value=0.0, progress=0.25)
    assert agent.optimizer.lr == pytest.approx(0.75 * agent.cfg.learning_rate)


def test_ppo_manager_decomposes_joint_action():
    agent = PpoAgent(
        input_dim=4, branch_sizes=[5, 5], rng=np.random.default_rng(0),
        config=PpoConfig(buffer_size=8),
    )
    comps, (x, action, logp, value) = agent.act(
        [np.zeros(2), np.zeros(2)], None, training=False
    )
    assert len(comps) == 2
    assert manager_joint_recompose(comps, [5, 5]) == action


# ---------------------------------------------------------------------------
# MAPPO agent
# ---------------------------------------------------------------------------


def make_mappo(sub_dims, seed=0, **cfg):
    config = MappoConfig(**{"buffer_size": 32, "num_minibatches": 4, **cfg})
    return MappoAgent(
        sub_obs_dims=sub_dims, rng=np.random.default_rng(seed), config=config
    )


def test_mappo_centralized_critic_width():
    agent = make_mappo([24, 24, 24, 24])
    assert agent.critic.in_dim == 96


def test_mappo_single_subordinate_degenerate():
    agent = make_mappo([10])
    assert agent.critic.in_dim == 10
    comps, rec = agent.act([np.zeros(10)], None, training=False)
    assert len(comps) == 1
    assert comps[0].shape == (2,)


def test_mappo_emits_one_2dim_action_per_subordinate():
    agent = make_mappo([6, 6])
    comps, rec = agent.act([np.zeros(6), np.ones(6)], None, training=True)
    assert len(comps) == 2
    assert all(c.shape == (2,) for c in comps)


def test_mappo_eval_uses_mean_action():
    agent = make_mappo([4])
    x = np.random.default_rng(0).standard_normal(4)
    comps, _ = agent.act([x], None, training=False)
    mean, _ = nn.mlp_forward(agent.actors[0], x)
    assert np.array_equal(comps[0], mean)


def test_mappo_update_finite_and_clears():
    agent = make_mappo([5, 5], seed=9)
    rng = np.random.default_rng(1)
    while not agent.full:
        parts = [rng.standard_normal(5), rng.standard_normal(5)]
        comps, rec = agent.act(parts, None, training=True)
        agent.store(rec, float(rng.standard_normal()), bool(rng.random() < 0.05))
    stats = agent.update(last_value=0.0)
    assert agent.ptr == 0
    for arr in agent._params():
        assert np.all(np.isfinite(arr))
    assert "approx_kl" in stats


def test_mappo_categorical_head_for_flat_control():
    agent = MappoAgent(
        sub_obs_dims=[4, 4], rng=np.random.default_rng(0),
        head_kind="categorical", n_actions=5,
        config=MappoConfig(buffer_size=16),
    )
    comps, _ = agent.act([np.zeros(4), np.zeros(4)], None, training=True)
    assert all(isinstance(c, int) and 0 <= c < 5 for c in comps)


def test_mappo_gaussian_logp_grad_matches_finite_difference_through_actor():
    # end-to-end: d mean(logp) / d actor-params against central differences
    agent = make_mappo([3], seed=13)
    rng = np.random.default_rng(2)
    xs = rng.standard_normal((4, 3))
    acts = rng.standard_normal((4, 2))

    def scalar():
        out, _ = nn.mlp_forward(agent.actors[0], xs)
        logp, _ = nn.gaussian_eval(out, agent.log_stds[0], acts)
        return float(logp.mean())

    out, tape = nn.mlp_forward(agent.actors[0], xs)
    d_mean, d_ls = nn.gaussian_grads(
        out, agent.log_stds[0], acts, np.full(4, 0.25), np.zeros(4)
    )
    w_grads, b_grads, _ = nn.backward(tape, d_mean)
    analytic = []
    for w, b in zip(w_grads, b_grads):
        analytic.extend([w, b])
    h = 1e-6
    for arr, grad in zip(agent.actors[0].flat(), analytic):
        for i in range(min(arr.size, 10)):
            orig = arr.flat[i]
            arr.flat[i] = orig + h
            up = scalar()
            arr.flat[i] = orig - h
            down = scalar()
            arr.flat[i] = orig
            fd = (up - down) / (2 * h)
            assert fd == pytest.approx(grad.flat[i], rel=1e-6, abs=1e-8)
    # and the state-independent log-std gradient
    for j in range(2):
        orig = agent.log_stds[0][j]
        agent.log_stds[0][j] = orig + h
        up = scalar()
        agent.log_stds[0][j] = orig - h
        down = scalar()
        agent.log_stds[0][j] = orig
        assert (up - down) / (2 * h) == pytest.approx(d_ls[j], rel=1e-6, abs=1e-8)
