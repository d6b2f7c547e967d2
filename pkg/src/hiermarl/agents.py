"""Agents and communication functions that plug into the hierarchy.

PPO agents drive either a single subordinate or several (in which case
their discrete action is the mixed-radix composition of one component per
subordinate). MAPPO agents emit one action per subordinate from separate
actor heads and share a centralized critic over the concatenated
subordinate observations. Communication upward is either the identity
(concatenate messages, sum rewards) or a learned autoencoder bottleneck.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable

import numpy as np

from . import nn
from .errors import DimensionError, ProtocolError, RangeError

Array = np.ndarray

INCOMING_NONE = "none"
INCOMING_DISCRETE = "discrete"  # encoded one-hot into the policy input
INCOMING_CONTINUOUS = "continuous"  # appended raw


# ---------------------------------------------------------------------------
# Input composition and joint-action codec
# ---------------------------------------------------------------------------


def compose_policy_input(
    obs_below: Array, incoming: Any, encoding: str, width: int = 0
) -> Array:
    """[observation from below || encoded incoming action].

    'none' leaves the observation untouched (top-level agents),
    'discrete' appends a one-hot of the given width, 'continuous' appends
    the raw action vector (checked against width).
    """
    obs = np.asarray(obs_below, dtype=np.float64)
    if encoding == INCOMING_NONE:
        return obs
    if encoding == INCOMING_DISCRETE:
        idx = int(incoming)
        if not 0 <= idx < width:
            raise DimensionError(f"incoming action {idx} outside one-hot width {width}")
        one_hot = np.zeros(width)
        one_hot[idx] = 1.0
        return np.concatenate([obs, one_hot])
    if encoding == INCOMING_CONTINUOUS:
        vec = np.asarray(incoming, dtype=np.float64).ravel()
        if vec.shape[0] != width:
            raise DimensionError(f"incoming width {vec.shape[0]} != declared {width}")
        return np.concatenate([obs, vec])
    raise DimensionError(f"unknown incoming encoding {encoding!r}")


def manager_joint_decompose(joint_index: int, branch_sizes: list[int]) -> list[int]:
    """Mixed-radix digits of a joint action, most-significant digit first
    (= first subordinate in down-list order). Bijective over the product."""
    total = int(np.prod(branch_sizes))
    joint_index = int(joint_index)
    if not 0 <= joint_index < total:
        raise RangeError(f"joint index {joint_index} outside 0..{total - 1}")
    digits = [0] * len(branch_sizes)
    rest = joint_index
    for k in range(len(branch_sizes) - 1, -1, -1):
        digits[k] = rest % branch_sizes[k]
        rest //= branch_sizes[k]
    return digits


def manager_joint_recompose(digits: list[int], branch_sizes: list[int]) -> int:
    """Inverse of manager_joint_decompose."""
    if len(digits) != len(branch_sizes):
        raise DimensionError("one digit per branch required")
    joint = 0
    for d, size in zip(digits, branch_sizes):
        if not 0 <= d < size:
            raise RangeError(f"digit {d} outside 0..{size - 1}")
        joint = joint * size + d
    return joint


# ---------------------------------------------------------------------------
# Communication functions
# ---------------------------------------------------------------------------


def identity_comm(messages: list[Array], rewards: list[float]) -> tuple[Array, float]:
    """Concatenate messages in down-list order; sum the rewards."""
    if not messages:
        raise DimensionError("identity communication needs at least one message")
    return np.concatenate([np.asarray(m, dtype=np.float64) for m in messages]), float(
        sum(rewards)
    )


class IdentityComm:
    """Stateless identity communication with latched width checking."""

    def __init__(self, part_dims: list[int] | None = None):
        self._part_dims = list(part_dims) if part_dims is not None else None

    @property
    def in_dim(self) -> int | None:
        return None if self._part_dims is None else sum(self._part_dims)

    @property
    def out_dim(self) -> int | None:
        return self.in_dim

    def __call__(
        self, messages: list[Array], rewards: list[float], training: bool = False
    ) -> tuple[Array, float]:
        dims = [np.asarray(m).shape[-1] for m in messages]
        if self._part_dims is None:
            self._part_dims = dims
        elif dims != self._part_dims:
            raise DimensionError(
                f"message widths {dims} changed from {self._part_dims}"
            )
        return identity_comm(messages, rewards)


class AutoEncoderComm:
    """Learned bottleneck message: 2-layer encoder (relu, sigmoid feature
    space) mirrored by a 2-layer decoder, trained to reconstruct its input
    under MSE on the same batches its co-located agent updates on.

    The reward side stays the plain sum of subordinate rewards.
    """

    def __init__(
        self,
        in_dim: int,
        rng: np.random.Generator,
        feature_dim: int = 8,
        hidden: int = 32,
        learning_rate: float = 1e-3,
        epochs: int = 50,
    ):
        self.in_dim = in_dim
        self.out_dim = feature_dim
        self.epochs = epochs
        self.encoder = nn.mlp_init([in_dim, hidden, feature_dim], ("relu", "sigmoid"), rng)
        self.decoder = nn.mlp_init([feature_dim, hidden, in_dim], ("relu", "none"), rng)
        self.optimizer = nn.adam_init(
            self.encoder.flat() + self.decoder.flat(), learning_rate, max_grad_norm=None
        )
        self._batch: list[Array] = []
        self.loss_history: list[float] = []

    def encode(self, obs: Array) -> Array:
        """Pure feature-space projection of one observation."""
        obs = np.asarray(obs, dtype=np.float64)
        if obs.shape[-1] != self.in_dim:
            raise DimensionError(f"obs width {obs.shape[-1]} != {self.in_dim}")
        features, _ = nn.mlp_forward(self.encoder, obs)
        return features

    def __call__(
        self, messages: list[Array], rewards: list[float], training: bool = False
    ) -> tuple[Array, float]:
        obs = np.concatenate([np.asarray(m, dtype=np.float64) for m in messages])
        if training:
            self._batch.append(obs)
        return self.encode(obs), float(sum(rewards))

    def train(self, batch: Array) -> list[float]:
        """Full-batch reconstruction training; returns per-epoch MSE."""
        batch = np.asarray(batch, dtype=np.float64)
        if batch.ndim != 2 or batch.shape[0] == 0:
            raise DimensionError("training batch must be a non-empty matrix")
        params = self.encoder.flat() + self.decoder.flat()
        losses = []
        for _ in range(self.epochs):
            features, enc_tape = nn.mlp_forward(self.encoder, batch)
            recon, dec_tape = nn.mlp_forward(self.decoder, features)
            err = recon - batch
            losses.append(float((err * err).mean()))
            d_recon = 2.0 * err / err.size
            dw_d, db_d, d_feat = nn.backward(dec_tape, d_recon)
            dw_e, db_e, _ = nn.backward(enc_tape, d_feat)
            grads = _interleave(dw_e, db_e) + _interleave(dw_d, db_d)
            nn.adam_step(self.optimizer, params, grads)
        self.loss_history.extend(losses)
        return losses

    def train_from_buffer(self) -> list[float]:
        if not self._batch:
            return []
        batch = np.stack(self._batch)
        self._batch.clear()
        return self.train(batch)

    def parameters(self) -> dict[str, Array]:
        out = {}
        for prefix, net in (("enc", self.encoder), ("dec", self.decoder)):
            for k, (w, b) in enumerate(zip(net.weights, net.biases)):
                out[f"{prefix}.w{k}"] = w
                out[f"{prefix}.b{k}"] = b
        return out


def _interleave(w_grads: list[Array], b_grads: list[Array]) -> list[Array]:
    out: list[Array] = []
    for w, b in zip(w_grads, b_grads):
        out.append(w)
        out.append(b)
    return out


# ---------------------------------------------------------------------------
# Rollout storage
# ---------------------------------------------------------------------------


class RolloutBuffer:
    """Fixed-capacity on-policy buffer; the owning agent updates exactly
    when it fills and clears it afterwards."""

    def __init__(self, capacity: int, obs_dim: int, action_shape: tuple = ()):
        self.capacity = capacity
        self.observations = np.zeros((capacity, obs_dim))
        self.actions = np.zeros((capacity, *action_shape), dtype=np.int64 if not action_shape else np.float64)
        self.log_probs = np.zeros(capacity)
        self.values = np.zeros(capacity)
        self.rewards = np.zeros(capacity)
        self.dones = np.zeros(capacity, dtype=bool)
        self.ptr = 0

    @property
    def full(self) -> bool:
        return self.ptr >= self.capacity

    def add(self, obs, action, log_prob, value, reward, done) -> None:
        if self.full:
            raise ProtocolError("buffer full; update before storing more")
        i = self.ptr
        self.observations[i] = obs
        self.actions[i] = action
        self.log_probs[i] = log_prob
        self.values[i] = value
        self.rewards[i] = reward
        self.dones[i] = done
        self.ptr += 1

    def clear(self) -> None:
        self.ptr = 0


# ---------------------------------------------------------------------------
# PPO agent
# ---------------------------------------------------------------------------


@dataclass
class PpoConfig:
    learning_rate: float = 1e-3
    anneal_lr: bool = True
    max_grad_norm: float = 0.5
    buffer_size: int = 2048
    num_minibatches: int = 4
    update_epochs: int = 4
    gamma: float = 0.99
    gae_lambda: float = 0.95
    norm_advantage: bool = True
    clip_coef: float = 0.2
    clip_value_loss: bool = True
    entropy_coef: float = 0.0
    value_coef: float = 0.5
    target_kl: float | None = None
    hidden: int = 64


class PpoAgent:
    """Discrete-action PPO worker/manager.

    With several subordinates the policy's action space is the product of
    the per-subordinate input spaces (branch_sizes) and each sampled joint
    action is decomposed most-significant-first in down-list order.
    """

    def __init__(
        self,
        input_dim: int,
        branch_sizes: list[int],
        rng: np.random.Generator,
        incoming_kind: str = INCOMING_NONE,
        incoming_width: int = 0,
        config: PpoConfig | None = None,
    ):
        self.cfg = config or PpoConfig()
        self.input_dim = input_dim
        self.branch_sizes = list(branch_sizes)
        self.n_actions = int(np.prod(branch_sizes))
        self.incoming_kind = incoming_kind
        self.incoming_width = incoming_width
        self.rng = rng
        h = self.cfg.hidden
        self.actor = nn.mlp_init(
            [input_dim, h, h, self.n_actions], ("tanh", "tanh", "none"), rng,
            output_gain=0.01,
        )
        self.critic = nn.mlp_init(
            [input_dim, h, h, 1], ("tanh", "tanh", "none"), rng, output_gain=1.0
        )
        self.buffer = RolloutBuffer(self.cfg.buffer_size, input_dim)
        self.optimizer = nn.adam_init(
            self._params(), self.cfg.learning_rate, self.cfg.max_grad_norm
        )
        self.attached_comm: AutoEncoderComm | None = None
        self.last_stats: dict | None = None

    @property
    def subordinate_count(self) -> int:
        return len(self.branch_sizes)

    def _params(self) -> list[Array]:
        return self.actor.flat() + self.critic.flat()

    def neutral_incoming(self) -> Any:
        if self.incoming_kind == INCOMING_DISCRETE:
            return 0
        if self.incoming_kind == INCOMING_CONTINUOUS:
            return np.zeros(self.incoming_width)
        return None

    # -- decision ------------------------------------------------------------

    def policy_step(
        self, policy_input: Array, training: bool, rng: np.random.Generator | None = None
    ) -> tuple[int, float, float]:
        """(action, log_prob, value): sampled when training, argmax when not."""
        x = np.asarray(policy_input, dtype=np.float64)
        if x.shape[-1] != self.input_dim:
            raise DimensionError(f"input width {x.shape[-1]} != {self.input_dim}")
        logits, _ = nn.mlp_forward(self.actor, x)
        value, _ = nn.mlp_forward(self.critic, x)
        if training:
            action, log_prob, _ = nn.categorical_sample(logits, rng or self.rng)
        else:
            action = int(np.argmax(logits))
            log_prob = float(nn.log_softmax(logits)[action])
        return action, log_prob, float(value[0])

    def act(
        self, obs_parts: list[Array], incoming: Any, training: bool, progress: float = 0.0
    ) -> tuple[list[int], tuple]:
        x = compose_policy_input(
            np.concatenate(obs_parts), incoming, self.incoming_kind, self.incoming_width
        )
        if training and self.buffer.full:
            value, _ = nn.mlp_forward(self.critic, x)
            self.update(float(value[0]), progress)
        action, log_prob, value = self.policy_step(x, training)
        return manager_joint_decompose(action, self.branch_sizes), (x, action, log_prob, value)

    def store(self, record: tuple, reward: float, done: bool) -> None:
        x, action, log_prob, value = record
        self.buffer.add(x, action, log_prob, value, reward, done)

    # -- learning --------------------------------------------------------------

    def update(self, last_value: float, progress: float = 0.0) -> dict:
        """GAE + normalized advantages, then clipped-surrogate epochs over
        minibatches with optional target-KL early stop; clears the buffer."""
        cfg = self.cfg
        buf = self.buffer
        n = buf.ptr
        advantages, returns = nn.gae(
            buf.rewards[:n], buf.values[:n], last_value,
            cfg.gamma, cfg.gae_lambda, buf.dones[:n],
        )
        if cfg.norm_advantage:
            advantages = nn.normalize_advantages(advantages)
        if cfg.anneal_lr:
            self.optimizer.lr = cfg.learning_rate * max(0.0, 1.0 - progress)

        obs = buf.observations[:n]
        actions = buf.actions[:n]
        logp_old = buf.log_probs[:n]
        values_old = buf.values[:n]
        mb_size = max(1, n // cfg.num_minibatches)
        stats_rows: list[nn.PpoLossStats] = []
        passes = 0
        stop = False
        for _ in range(cfg.update_epochs):
            order = self.rng.permutation(n)
            for start in range(0, n, mb_size):
                mb = order[start : start + mb_size]
                stats = self._minibatch_step(
                    obs[mb], actions[mb], logp_old[mb], advantages[mb],
                    returns[mb], values_old[mb],
                )
                stats_rows.append(stats)
                passes += 1
                if cfg.target_kl is not None and stats.approx_kl > cfg.target_kl:
                    stop = True
                    break
            if stop:
                break

        buf.clear()
        if self.attached_comm is not None:
            self.attached_comm.train_from_buffer()
        self.last_stats = {
            "policy_loss": float(np.mean([s.policy for s in stats_rows])),
            "value_loss": float(np.mean([s.value for s in stats_rows])),
            "entropy": float(np.mean([s.entropy for s in stats_rows])),
            "approx_kl": stats_rows[-1].approx_kl,
            "clip_fraction": float(np.mean([s.clip_fraction for s in stats_rows])),
            "minibatch_passes": passes,
            "early_stop": stop,
        }
        return self.last_stats

    def _minibatch_step(
        self, obs, actions, logp_old, advantages, returns, values_old
    ) -> nn.PpoLossStats:
        cfg = self.cfg
        logits, actor_tape = nn.mlp_forward(self.actor, obs)
        values, critic_tape = nn.mlp_forward(self.critic, obs)
        values = values[:, 0]
        logp_new, entropy = nn.categorical_eval(logits, actions)
        old_v = values_old if cfg.clip_value_loss else None
        stats = nn.ppo_loss(
            logp_new, logp_old, advantages, values, returns,
            cfg.clip_coef, cfg.value_coef, cfg.entropy_coef, entropy, old_v,
        )
        d_logp, d_values, d_entropy = nn.ppo_loss_grads(
            logp_new, logp_old, advantages, values, returns,
            cfg.clip_coef, cfg.value_coef, cfg.entropy_coef, old_v,
        )
        d_logits = nn.categorical_grads(logits, actions, d_logp, d_entropy)
        aw, ab, _ = nn.backward(actor_tape, d_logits)
        cw, cb, _ = nn.backward(critic_tape, d_values[:, None])
        grads = _interleave(aw, ab) + _interleave(cw, cb)
        nn.adam_step(self.optimizer, self._params(), grads)
        return stats

    # -- persistence ------------------------------------------------------------

    def parameters(self) -> dict[str, Array]:
        out = {}
        for prefix, net in (("actor", self.actor), ("critic", self.critic)):
            for k, (w, b) in enumerate(zip(net.weights, net.biases)):
                out[f"{prefix}.w{k}"] = w
                out[f"{prefix}.b{k}"] = b
        return out


# ---------------------------------------------------------------------------
# MAPPO agent (centralized critic, one actor head per subordinate)
# ---------------------------------------------------------------------------


@dataclass
class MappoConfig:
    learning_rate: float = 1e-3
    anneal_lr: bool = True
    max_grad_norm: float = 0.5
    buffer_size: int = 10_000
    num_minibatches: int = 4
    update_epochs: int = 4
    gamma: float = 0.99
    gae_lambda: float = 0.95
    norm_advantage: bool = True
    clip_coef: float = 0.2
    clip_value_loss: bool = True
    entropy_coef: float = 0.0
    value_coef: float = 0.5
    target_kl: float | None = None
    hidden: int = 64


class MappoAgent:
    """Manager with one actor per connected subordinate and a centralized
    critic over the concatenation of all subordinate observations.

    head_kind 'gaussian' emits a 2-d continuous action per subordinate
    (state-independent log-std, mean head initialized at gain 0.01);
    'categorical' emits a discrete action per subordinate (flat baseline).
    """

    def __init__(
        self,
        sub_obs_dims: list[int],
        rng: np.random.Generator,
        head_kind: str = "gaussian",
        action_dim: int = 2,
        n_actions: int = 0,
        incoming_kind: str = INCOMING_NONE,
        incoming_width: int = 0,
        config: MappoConfig | None = None,
    ):
        self.cfg = config or MappoConfig()
        self.sub_obs_dims = list(sub_obs_dims)
        self.central_dim = sum(sub_obs_dims)
        self.head_kind = head_kind
        self.action_dim = action_dim if head_kind == "gaussian" else 1
        self.out_size = action_dim if head_kind == "gaussian" else n_actions
        if head_kind == "categorical" and n_actions < 1:
            raise DimensionError("categorical head needs n_actions >= 1")
        self.incoming_kind = incoming_kind
        self.incoming_width = incoming_width
        self.rng = rng
        h = self.cfg.hidden
        self.actors = [
            nn.mlp_init(
                [d + incoming_width, h, h, self.out_size],
                ("relu", "relu", "none"), rng, output_gain=0.01,
            )
            for d in sub_obs_dims
        ]
        self.log_stds = (
            [np.zeros(action_dim) for _ in sub_obs_dims]
            if head_kind == "gaussian"
            else []
        )
        self.critic = nn.mlp_init(
            [self.central_dim, h, h, 1], ("relu", "relu", "none"), rng, output_gain=1.0
        )
        self.optimizer = nn.adam_init(
            self._params(), self.cfg.learning_rate, self.cfg.max_grad_norm
        )

        cap = self.cfg.buffer_size
        s = len(sub_obs_dims)
        self._obs = [np.zeros((cap, d + incoming_width)) for d in sub_obs_dims]
        self._central = np.zeros((cap, self.central_dim))
        if head_kind == "gaussian":
            self._actions = np.zeros((cap, s, action_dim))
        else:
            self._actions = np.zeros((cap, s), dtype=np.int64)
        self._logps = np.zeros((cap, s))
        self._values = np.zeros(cap)
        self._rewards = np.zeros(cap)
        self._dones = np.zeros(cap, dtype=bool)
        self.ptr = 0
        self.attached_comm: AutoEncoderComm | None = None
        self.last_stats: dict | None = None

    @property
    def subordinate_count(self) -> int:
        return len(self.sub_obs_dims)

    @property
    def input_dim(self) -> int:
        # validated against sum of subordinate message widths + encoding
        return self.central_dim + self.incoming_width

    def _params(self) -> list[Array]:
        params: list[Array] = []
        for actor in self.actors:
            params.extend(actor.flat())
        params.extend(self.log_stds)
        params.extend(self.critic.flat())
        return params

    def neutral_incoming(self) -> Any:
        if self.incoming_kind == INCOMING_DISCRETE:
            return 0
        if self.incoming_kind == INCOMING_CONTINUOUS:
            return np.zeros(self.incoming_width)
        return None

    @property
    def full(self) -> bool:
        return self.ptr >= self.cfg.buffer_size

    # -- decision ------------------------------------------------------------

    def act(
        self, obs_parts: list[Array], incoming: Any, training: bool, progress: float = 0.0
    ) -> tuple[list[Any], tuple]:
        if len(obs_parts) != len(self.actors):
            raise DimensionError(
                f"{len(obs_parts)} observation parts for {len(self.actors)} heads"
            )
        central = np.concatenate([np.asarray(p, dtype=np.float64) for p in obs_parts])
        if central.shape[0] != self.central_dim:
            raise DimensionError(
                f"central width {central.shape[0]} != {self.central_dim}"
            )
        if training and self.full:
            value, _ = nn.mlp_forward(self.critic, central)
            self.update(float(value[0]), progress)
        value, _ = nn.mlp_forward(self.critic, central)
        inputs = []
        components: list[Any] = []
        logps = np.zeros(len(self.actors))
        for s, actor in enumerate(self.actors):
            x = compose_policy_input(
                obs_parts[s], incoming, self.incoming_kind, self.incoming_width
            )
            inputs.append(x)
            out, _ = nn.mlp_forward(actor, x)
            if self.head_kind == "gaussian":
                if training:
                    action, logp, _ = nn.gaussian_sample(out, self.log_stds[s], self.rng)
                else:
                    action = out.copy()
                    logp, _ = nn.gaussian_eval(out, self.log_stds[s], action)
                components.append(action)
                logps[s] = float(logp)
            else:
                if training:
                    action, logp, _ = nn.categorical_sample(out, self.rng)
                else:
                    action = int(np.argmax(out))
                    logp = float(nn.log_softmax(out)[action])
                components.append(action)
                logps[s] = logp
        rec = (inputs, central, components, logps, float(value[0]))
        return components, rec

    def store(self, record: tuple, reward: float, done: bool) -> None:
        if self.full:
            raise ProtocolError("buffer full; update before storing more")
        inputs, central, components, logps, value = record
        i = self.ptr
        for s, x in enumerate(inputs):
            self._obs[s][i] = x
        self._central[i] = central
        for s, c in enumerate(components):
            self._actions[i, s] = c
        self._logps[i] = logps
        self._values[i] = value
        self._rewards[i] = reward
        self._dones[i] = done
        self.ptr += 1

    # -- learning --------------------------------------------------------------

    def update(self, last_value: float, progress: float = 0.0) -> dict:
        cfg = self.cfg
        n = self.ptr
        advantages, returns = nn.gae(
            self._rewards[:n], self._values[:n], last_value,
            cfg.gamma, cfg.gae_lambda, self._dones[:n],
        )
        if cfg.norm_advantage:
            advantages = nn.normalize_advantages(advantages)
        if cfg.anneal_lr:
            self.optimizer.lr = cfg.learning_rate * max(0.0, 1.0 - progress)

        mb_size = max(1, n // cfg.num_minibatches)
        kl_rows: list[float] = []
        loss_rows: list[float] = []
        passes = 0
        stop = False
        for _ in range(cfg.update_epochs):
            order = self.rng.permutation(n)
            for start in range(0, n, mb_size):
                mb = order[start : start + mb_size]
                kl, loss = self._minibatch_step(mb, advantages, returns)
                kl_rows.append(kl)
                loss_rows.append(loss)
                passes += 1
                if cfg.target_kl is not None and kl > cfg.target_kl:
                    stop = True
                    break
            if stop:
                break

        self.ptr = 0
        if self.attached_comm is not None:
            self.attached_comm.train_from_buffer()
        self.last_stats = {
            "approx_kl": kl_rows[-1],
            "loss": float(np.mean(loss_rows)),
            "minibatch_passes": passes,
            "early_stop": stop,
        }
        return self.last_stats

    def _minibatch_step(self, mb: Array, advantages: Array, returns: Array) -> tuple[float, float]:
        cfg = self.cfg
        m = mb.shape[0]
        adv = advantages[mb]
        ret = returns[mb]
        values_old = self._values[mb]

        values, critic_tape = nn.mlp_forward(self.critic, self._central[mb])
        values = values[:, 0]
        err = values - ret
        if cfg.clip_value_loss:
            v_clip = values_old + np.clip(values - values_old, -cfg.clip_coef, cfg.clip_coef)
            use_unclipped = err * err >= (v_clip - ret) ** 2
            inside = np.abs(values - values_old) < cfg.clip_coef
            d_val = np.where(use_unclipped, err, np.where(inside, v_clip - ret, 0.0))
            value_loss = float(0.5 * np.maximum(err * err, (v_clip - ret) ** 2).mean())
        else:
            d_val = err
            value_loss = float(0.5 * (err * err).mean())
        d_values = cfg.value_coef * d_val / m

        grads: list[Array] = []
        kl_parts = []
        total_loss = value_loss * cfg.value_coef
        gaussian = self.head_kind == "gaussian"
        d_log_stds: list[Array] = []
        for s, actor in enumerate(self.actors):
            out, tape = nn.mlp_forward(actor, self._obs[s][mb])
            logp_old = self._logps[mb, s]
            if gaussian:
                acts = self._actions[mb, s]
                logp_new, entropy = nn.gaussian_eval(out, self.log_stds[s], acts)
            else:
                acts = self._actions[mb, s]
                logp_new, entropy = nn.categorical_eval(out, acts)
            ratio = np.exp(logp_new - logp_old)
            unclipped = ratio * adv
            clipped = np.clip(ratio, 1.0 - cfg.clip_coef, 1.0 + cfg.clip_coef) * adv
            policy_loss = float(-np.minimum(unclipped, clipped).mean())
            total_loss += policy_loss - cfg.entropy_coef * float(np.mean(entropy))
            active = unclipped <= clipped
            d_logp = np.where(active, -ratio * adv, 0.0) / m
            d_entropy = np.full(m, -cfg.entropy_coef / m)
            if gaussian:
                d_mean, d_ls = nn.gaussian_grads(
                    out, self.log_stds[s], acts, d_logp, d_entropy
                )
                d_out = d_mean
                d_log_stds.append(d_ls)
            else:
                d_out = nn.categorical_grads(out, acts, d_logp, d_entropy)
            aw, ab, _ = nn.backward(tape, d_out)
            grads.extend(_interleave(aw, ab))
            kl_parts.append(float((logp_old - logp_new).mean()))
        grads.extend(d_log_stds)
        cw, cb, _ = nn.backward(critic_tape, d_values[:, None])
        grads.extend(_interleave(cw, cb))
        nn.adam_step(self.optimizer, self._params(), grads)
        return float(np.mean(kl_parts)), total_loss

    # -- persistence ------------------------------------------------------------

    def parameters(self) -> dict[str, Array]:
        out = {}
        for s, actor in enumerate(self.actors):
            for k, (w, b) in enumerate(zip(actor.weights, actor.biases)):
                out[f"actor{s}.w{k}"] = w
                out[f"actor{s}.b{k}"] = b
        for s, ls in enumerate(self.log_stds):
            out[f"actor{s}.log_std"] = ls
        for k, (w, b) in enumerate(zip(self.critic.weights, self.critic.biases)):
            out[f"critic.w{k}"] = w
            out[f"critic.b{k}"] = b
        return out


# ---------------------------------------------------------------------------
# Scripted pieces (tests, heuristics, oracles)
# ---------------------------------------------------------------------------


class ScriptedAgent:
    """Deterministic policy callback; learns nothing."""

    def __init__(
        self,
        policy: Callable[[list[Array], Any], list[Any]],
        incoming_kind: str = INCOMING_NONE,
        incoming_width: int = 0,
    ):
        self.policy = policy
        self.incoming_kind = incoming_kind
        self.incoming_width = incoming_width

    def act(self, obs_parts, incoming, training: bool, progress: float = 0.0):
        return self.policy(obs_parts, incoming), None

    def store(self, record, reward: float, done: bool) -> None:
        pass

    def neutral_incoming(self) -> Any:
        if self.incoming_kind == INCOMING_DISCRETE:
            return 0
        if self.incoming_kind == INCOMING_CONTINUOUS:
            return np.zeros(self.incoming_width)
        return None


class ScriptedComm:
    """Communication callback for tests; defaults to the identity."""

    def __init__(self, fn: Callable[[list[Array], list[float]], tuple[Array, float]] | None = None, out_dim: int | None = None):
        self.fn = fn
        self.out_dim = out_dim

    def __call__(self, messages, rewards, training: bool = False):
        if self.fn is None:
            return identity_comm(messages, rewards)
        return self.fn(messages, rewards)
