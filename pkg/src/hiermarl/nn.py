"""Dense-network numerical core.

Small fully-connected nets in float64 with hand-rolled reverse-mode
gradients, orthogonal initialization, Adam with global-norm clipping,
stochastic policy heads, generalized advantage estimation and the
clipped surrogate objective. Everything here is a pure function of its
explicit inputs (parameters, optimizer state, rng), which is what makes
the finite-difference and determinism tests strict.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import CheckpointError, DimensionError

Array = np.ndarray

ACTIVATIONS = ("tanh", "relu", "sigmoid", "none")

LOG_2PI = float(np.log(2.0 * np.pi))


# ---------------------------------------------------------------------------
# MLP parameters, forward pass and backward pass
# ---------------------------------------------------------------------------


@dataclass
class MlpParams:
    """Weights/biases of a dense net. Layer k maps (in_k,) -> (out_k,) via
    x @ weights[k] + biases[k] followed by activations[k]."""

    weights: list[Array]
    biases: list[Array]
    activations: tuple[str, ...]

    def __post_init__(self) -> None:
        if not (len(self.weights) == len(self.biases) == len(self.activations)):
            raise DimensionError("weights, biases and activations must align")
        for act in self.activations:
            if act not in ACTIVATIONS:
                raise DimensionError(f"unknown activation {act!r}")
        for k in range(len(self.weights) - 1):
            if self.weights[k].shape[1] != self.weights[k + 1].shape[0]:
                raise DimensionError(
                    f"layer {k} output {self.weights[k].shape[1]} does not chain "
                    f"into layer {k + 1} input {self.weights[k + 1].shape[0]}"
                )
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if b.shape != (w.shape[1],):
                raise DimensionError(f"bias {k} shape {b.shape} != ({w.shape[1]},)")

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[1]

    def flat(self) -> list[Array]:
        """Parameter arrays in a fixed order (W0, b0, W1, b1, ...)."""
        out: list[Array] = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def copy(self) -> "MlpParams":
        return MlpParams(
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.activations,
        )


@dataclass
class Tape:
    """Intermediate values of one forward pass, enough for backward()."""

    params: MlpParams
    inputs: list[Array]  # inputs[k]: (B, in_k) input fed to layer k
    outputs: list[Array]  # outputs[k]: (B, out_k) post-activation output of layer k
    squeeze: bool  # forward input was 1-D


def _apply_activation(z: Array, act: str) -> Array:
    if act == "tanh":
        return np.tanh(z)
    if act == "relu":
        return np.maximum(z, 0.0)
    if act == "sigmoid":
        return 1.0 / (1.0 + np.exp(-z))
    return z


def _activation_grad(out: Array, act: str) -> Array:
    # Expressed in terms of the post-activation value so the tape does not
    # need to keep pre-activations around.
    if act == "tanh":
        return 1.0 - out * out
    if act == "relu":
        return (out > 0.0).astype(np.float64)
    if act == "sigmoid":
        return out * (1.0 - out)
    return np.ones_like(out)


def mlp_forward(params: MlpParams, x: Array) -> tuple[Array, Tape]:
    """Run the net on a single vector (D,) or a batch (B, D)."""
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != params.in_dim:
        raise DimensionError(
            f"input width {x.shape[-1]} != net input width {params.in_dim}"
        )
    inputs: list[Array] = []
    outputs: list[Array] = []
    h = x
    for w, b, act in zip(params.weights, params.biases, params.activations):
        inputs.append(h)
        h = _apply_activation(h @ w + b, act)
        outputs.append(h)
    y = h[0] if squeeze else h
    return y, Tape(params, inputs, outputs, squeeze)


def backward(tape: Tape, output_grad: Array) -> tuple[list[Array], list[Array], Array]:
    """Reverse pass over a tape.

    Returns (weight_grads, bias_grads, input_grad), each matching the
    shapes of the corresponding parameters / forward input.
    """
    g = np.asarray(output_grad, dtype=np.float64)
    if tape.squeeze:
        g = g[None, :]
    if g.shape != tape.outputs[-1].shape:
        raise DimensionError(
            f"output_grad shape {g.shape} != output shape {tape.outputs[-1].shape}"
        )
    params = tape.params
    n = len(params.weights)
    w_grads: list[Array] = [None] * n  # type: ignore[list-item]
    b_grads: list[Array] = [None] * n  # type: ignore[list-item]
    for k in range(n - 1, -1, -1):
        gz = g * _activation_grad(tape.outputs[k], params.activations[k])
        w_grads[k] = tape.inputs[k].T @ gz
        b_grads[k] = gz.sum(axis=0)
        g = gz @ params.weights[k].T
    input_grad = g[0] if tape.squeeze else g
    return w_grads, b_grads, input_grad


# ---------------------------------------------------------------------------
# Initializers
# ---------------------------------------------------------------------------


def orthogonal_init(shape: tuple[int, int], gain: float, rng: np.random.Generator) -> Array:
    """Orthogonal matrix scaled by gain; every singular value equals gain."""
    rows, cols = shape
    flat = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(flat)
    q = q * np.sign(np.diag(r))  # make the factorization unique
    if rows < cols:
        q = q.T
    return np.ascontiguousarray(gain * q[:rows, :cols])


def mlp_init(
    sizes: list[int],
    activations: tuple[str, ...],
    rng: np.random.Generator,
    output_gain: float = 1.0,
    hidden_gain: float = float(np.sqrt(2.0)),
) -> MlpParams:
    """Orthogonal weights (hidden gain sqrt(2), configurable output gain),
    zero biases."""
    if len(sizes) - 1 != len(activations):
        raise DimensionError("need one activation per layer")
    weights = []
    biases = []
    for k in range(len(sizes) - 1):
        gain = output_gain if k == len(sizes) - 2 else hidden_gain
        weights.append(orthogonal_init((sizes[k], sizes[k + 1]), gain, rng))
        biases.append(np.zeros(sizes[k + 1]))
    return MlpParams(weights, biases, tuple(activations))


# ---------------------------------------------------------------------------
# Stochastic policy heads
# ---------------------------------------------------------------------------


def log_softmax(logits: Array) -> Array:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax(logits: Array) -> Array:
    return np.exp(log_softmax(logits))


def categorical_sample(logits: Array, rng: np.random.Generator) -> tuple[int, float, float]:
    """Sample an action index; returns (action, log_prob, entropy)."""
    logp = log_softmax(np.asarray(logits, dtype=np.float64))
    p = np.exp(logp)
    u = rng.random()
    action = int(np.searchsorted(np.cumsum(p), u, side="right"))
    action = min(action, p.size - 1)  # guard against cumsum rounding
    entropy = float(-(p * logp).sum())
    return action, float(logp[action]), entropy


def categorical_eval(logits: Array, actions: Array) -> tuple[Array, Array]:
    """Batch log-probs of given actions and entropies. logits: (B, K)."""
    logp_all = log_softmax(logits)
    p = np.exp(logp_all)
    idx = np.arange(logits.shape[0])
    logp = logp_all[idx, actions]
    entropy = -(p * logp_all).sum(axis=1)
    return logp, entropy


def categorical_grads(
    logits: Array, actions: Array, d_logp: Array, d_entropy: Array
) -> Array:
    """d(loss)/d(logits) given upstream grads w.r.t. log_prob and entropy.

    d logp[a] / d z_k = 1[k=a] - p_k
    d H / d z_k       = -p_k (log p_k + H)
    """
    logp_all = log_softmax(logits)
    p = np.exp(logp_all)
    idx = np.arange(logits.shape[0])
    one_hot = np.zeros_like(p)
    one_hot[idx, actions] = 1.0
    entropy = -(p * logp_all).sum(axis=1, keepdims=True)
    g = d_logp[:, None] * (one_hot - p)
    g += d_entropy[:, None] * (-p * (logp_all + entropy))
    return g


def gaussian_sample(
    mean: Array, log_std: Array, rng: np.random.Generator
) -> tuple[Array, float, float]:
    """Sample from a diagonal gaussian; returns (action, log_prob, entropy)."""
    mean = np.asarray(mean, dtype=np.float64)
    std = np.exp(log_std)
    action = mean + std * rng.standard_normal(mean.shape)
    logp, entropy = gaussian_eval(mean, log_std, action)
    return action, float(logp), float(entropy)


def gaussian_eval(mean: Array, log_std: Array, actions: Array) -> tuple[Array, Array]:
    """Log-density and entropy of diagonal gaussians; broadcasts over a batch."""
    mean = np.asarray(mean, dtype=np.float64)
    z = (actions - mean) * np.exp(-log_std)
    logp = (-0.5 * z * z - log_std - 0.5 * LOG_2PI).sum(axis=-1)
    entropy_scalar = float((log_std + 0.5 * (LOG_2PI + 1.0)).sum())
    entropy = np.full(np.shape(logp), entropy_scalar) if np.ndim(logp) else entropy_scalar
    return logp, entropy


def gaussian_grads(
    mean: Array, log_std: Array, actions: Array, d_logp: Array, d_entropy: Array
) -> tuple[Array, Array]:
    """Upstream grads -> (d mean, d log_std).

    d logp / d mean    = (a - mean) / std^2
    d logp / d log_std = ((a - mean)/std)^2 - 1
    d H / d log_std    = 1 per dimension
    """
    inv_var = np.exp(-2.0 * log_std)
    diff = actions - mean
    d_mean = d_logp[:, None] * diff * inv_var
    d_ls = (d_logp[:, None] * (diff * diff * inv_var - 1.0)).sum(axis=0)
    d_ls += float(np.sum(d_entropy)) * np.ones_like(log_std)
    return d_mean, d_ls


@dataclass
class PolicyHead:
    """Distribution head on top of an actor net.

    kind "categorical": actor output = logits over n_actions.
    kind "gaussian": actor output = mean; log_std is a trainable
    state-independent vector (init 0).
    """

    kind: str
    n_actions: int = 0
    log_std: Array | None = None

    @classmethod
    def categorical(cls, n_actions: int) -> "PolicyHead":
        return cls(kind="categorical", n_actions=n_actions)

    @classmethod
    def gaussian(cls, dim: int) -> "PolicyHead":
        return cls(kind="gaussian", n_actions=dim, log_std=np.zeros(dim))


# ---------------------------------------------------------------------------
# Advantage estimation and the clipped objective
# ---------------------------------------------------------------------------


def gae(
    rewards: Array,
    values: Array,
    last_value: float,
    gamma: float,
    lam: float,
    terminated: Array,
) -> tuple[Array, Array]:
    """Generalized advantage estimation with bootstrap and termination cuts.

    terminated[t] true means no value flows across t -> t+1.
    Returns (advantages, returns) with returns = advantages + values.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    terminated = np.asarray(terminated, dtype=bool)
    if not (rewards.shape == values.shape == terminated.shape):
        raise DimensionError("rewards, values and terminated must share a length")
    n = rewards.shape[0]
    advantages = np.zeros(n)
    carry = 0.0
    for t in range(n - 1, -1, -1):
        next_value = last_value if t == n - 1 else values[t + 1]
        mask = 0.0 if terminated[t] else 1.0
        delta = rewards[t] + gamma * next_value * mask - values[t]
        carry = delta + gamma * lam * mask * carry
        advantages[t] = carry
    return advantages, advantages + values


def normalize_advantages(advantages: Array, std_floor: float = 1e-8) -> Array:
    """Zero-mean unit-std;  skips the division for degenerate batches."""
    centered = advantages - advantages.mean()
    std = advantages.std()
    if std < std_floor:
        return centered
    return centered / std


@dataclass
class PpoLossStats:
    total: float
    policy: float
    value: float
    entropy: float
    clip_fraction: float
    approx_kl: float


def ppo_loss(
    logp_new: Array,
    logp_old: Array,
    advantages: Array,
    values_new: Array,
    returns: Array,
    clip: float,
    value_coef: float,
    entropy_coef: float,
    entropy: Array,
    values_old: Array | None = None,
) -> PpoLossStats:
    """Clipped-surrogate objective.

    total = policy + value_coef * value - entropy_coef * mean(entropy).
    When values_old is given the value loss is clipped around it; otherwise
    it is the plain squared error. approx_kl = mean(logp_old - logp_new).
    """
    ratio = np.exp(logp_new - logp_old)
    unclipped = ratio * advantages
    clipped = np.clip(ratio, 1.0 - clip, 1.0 + clip) * advantages
    policy = float(-np.minimum(unclipped, clipped).mean())

    err = values_new - returns
    if values_old is not None:
        v_clip = values_old + np.clip(values_new - values_old, -clip, clip)
        value = float(0.5 * np.maximum(err * err, (v_clip - returns) ** 2).mean())
    else:
        value = float(0.5 * (err * err).mean())

    entropy_mean = float(np.mean(entropy))
    total = policy + value_coef * value - entropy_coef * entropy_mean
    clip_fraction = float((np.abs(ratio - 1.0) > clip).mean())
    approx_kl = float((logp_old - logp_new).mean())
    return PpoLossStats(total, policy, value, entropy_mean, clip_fraction, approx_kl)


def ppo_loss_grads(
    logp_new: Array,
    logp_old: Array,
    advantages: Array,
    values_new: Array,
    returns: Array,
    clip: float,
    value_coef: float,
    entropy_coef: float,
    values_old: Array | None = None,
) -> tuple[Array, Array, Array]:
    """Analytic d(total)/d(logp_new), d/d(values_new), d/d(entropy).

    The clipped min kills the policy gradient exactly where the clipped
    branch is strictly better, matching d ppo_loss / d logp_new.
    """
    n = logp_new.shape[0]
    ratio = np.exp(logp_new - logp_old)
    unclipped = ratio * advantages
    clipped = np.clip(ratio, 1.0 - clip, 1.0 + clip) * advantages
    active = unclipped <= clipped
    d_logp = np.where(active, -ratio * advantages, 0.0) / n

    err = values_new - returns
    if values_old is not None:
        v_clip = values_old + np.clip(values_new - values_old, -clip, clip)
        use_unclipped = err * err >= (v_clip - returns) ** 2
        inside = np.abs(values_new - values_old) < clip
        d_val = np.where(use_unclipped, err, np.where(inside, v_clip - returns, 0.0))
    else:
        d_val = err
    d_values = value_coef * d_val / n

    d_entropy = np.full(n, -entropy_coef / n)
    return d_logp, d_values, d_entropy


# ---------------------------------------------------------------------------
# Adam with global-norm clipping
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    max_grad_norm: float | None = 0.5
    step: int = 0
    m: list[Array] = field(default_factory=list)
    v: list[Array] = field(default_factory=list)


def adam_init(
    params: list[Array], lr: float, max_grad_norm: float | None = 0.5
) -> AdamState:
    return AdamState(
        lr=lr,
        max_grad_norm=max_grad_norm,
        m=[np.zeros_like(p) for p in params],
        v=[np.zeros_like(p) for p in params],
    )


def clip_global_norm(grads: list[Array], max_norm: float) -> tuple[list[Array], float]:
    """Scale the whole gradient list so its global L2 norm is <= max_norm."""
    norm = float(np.sqrt(sum(float((g * g).sum()) for g in grads)))
    if norm > max_norm and norm > 0.0:
        scale = max_norm / norm
        grads = [g * scale for g in grads]
    return grads, norm


def adam_step(state: AdamState, params: list[Array], grads: list[Array]) -> list[Array]:
    """One Adam update (in place). Gradients are globally clipped first."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise DimensionError("params, grads and optimizer state must align")
    if state.max_grad_norm is not None:
        grads, _ = clip_global_norm(grads, state.max_grad_norm)
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    bias1 = 1.0 - b1 ** state.step
    bias2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.lr * (m / bias1) / (np.sqrt(v / bias2) + state.eps)
    return params


# ---------------------------------------------------------------------------
# Checkpoint container: JSON header + contiguous float64 payload
# ---------------------------------------------------------------------------

CHECKPOINT_MAGIC = b"HMC1"


def save_checkpoint(path, tensors: dict[str, Array], meta: dict | None = None) -> None:
    """Flat binary container: magic, header length, JSON header, raw bytes."""
    header: dict = {"version": 1, "meta": meta or {}, "tensors": {}}
    payload = bytearray()
    offset = 0
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr, dtype=np.float64)
        raw = arr.tobytes()
        header["tensors"][name] = {
            "shape": list(arr.shape),
            "dtype": "float64",
            "offset": offset,
            "nbytes": len(raw),
        }
        payload.extend(raw)
        offset += len(raw)
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(bytes(payload))


def load_checkpoint(path) -> tuple[dict[str, Array], dict]:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointError(f"bad magic {magic!r}")
        (blob_len,) = struct.unpack("<Q", fh.read(8))
        try:
            header = json.loads(fh.read(blob_len).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError("corrupt header") from exc
        payload = fh.read()
    tensors: dict[str, Array] = {}
    for name, info in header["tensors"].items():
        start, nbytes = info["offset"], info["nbytes"]
        raw = payload[start : start + nbytes]
        if len(raw) != nbytes:
            raise CheckpointError(f"truncated payload for {name}")
        tensors[name] = np.frombuffer(raw, dtype=np.float64).reshape(info["shape"]).copy()
    return tensors, header.get("meta", {})
