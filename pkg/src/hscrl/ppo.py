"""PPO over independent Bernoulli activation bits, in plain numpy.

Actor and critic are separate tanh MLPs (two hidden layers). Gradients of the
clipped-surrogate loss are computed by explicit backpropagation; the test-suite
checks them against central finite differences.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from hscrl.demand import DemandParams, DemandSeries, generate_series
from hscrl.env import Action, HSCEnv, MismatchMode
from hscrl.errors import ConfigurationError, NumericError
from hscrl.network import NetworkInstance
from hscrl.records import atomic_write_bytes
from hscrl.streams import ENV, INIT, POLICY, SHUFFLE, RandomStream, make_stream

METRICS = ("reward", "avg_satisfaction", "efficiency", "cost", "avg_inventory")

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    gamma: float = 0.999
    gae_lambda: float = 0.95
    clip_epsilon: float = 0.2
    learning_rate: float = 1e-4
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    minibatch_size: int = 64
    epochs_per_update: int = 10
    rollout_episodes_per_update: int = 4
    total_steps: int = 20000
    max_grad_norm: float = 0.5
    hidden: int = 64
    normalize_values: bool = True
    horizon: int = 100
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise ConfigurationError("gamma must lie in (0, 1]")
        if self.clip_epsilon <= 0:
            raise ConfigurationError("clip_epsilon must be > 0")
        if self.minibatch_size < 1 or self.epochs_per_update < 0 or self.rollout_episodes_per_update < 1:
            raise ConfigurationError("batch sizes and epoch counts must be positive")
        if self.horizon < 1 or self.hidden < 1:
            raise ConfigurationError("horizon and hidden must be >= 1")

    def with_(self, **changes) -> "TrainConfig":
        return replace(self, **changes)


# ---------------------------------------------------------------------------
# network
# ---------------------------------------------------------------------------



@dataclass
class PolicyParams:
    """Weights keyed ``actor.W1`` ... ``critic.b3``."""

    weights: dict[str, np.ndarray]

    @property
    def obs_size(self) -> int:
        return self.weights["actor.W1"].shape[0]

    @property
    def n_bits(self) -> int:
        return self.weights["actor.W3"].shape[1]

    def copy(self) -> "PolicyParams":
        return PolicyParams({k: v.copy() for k, v in self.weights.items()})

    def flat(self) -> np.ndarray:
        return np.concatenate([self.weights[k].ravel() for k in sorted(self.weights)])

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.weights.values())


def _orthogonal(rng: RandomStream, shape, gain: float) -> np.ndarray:
    a = rng.standard_normal((max(shape), min(shape)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if shape[0] < shape[1]:
        q = q.T
    return gain * q[: shape[0], : shape[1]]


def init_params(obs_size: int, n_bits: int, hidden: int = 64, rng: RandomStream | None = None,
                output_gain: float = 0.01) -> PolicyParams:
    """Orthogonal init: gain sqrt(2) for hidden layers, ``output_gain`` for both heads."""
    rng = rng if rng is not None else make_stream(0, INIT)
    w = {}
    for net, out in (("actor", n_bits), ("critic", 1)):
        w[f"{net}.W1"] = _orthogonal(rng, (obs_size, hidden), math.sqrt(2))
        w[f"{net}.b1"] = np.zeros(hidden)
        w[f"{net}.W2"] = _orthogonal(rng, (hidden, hidden), math.sqrt(2))
        w[f"{net}.b2"] = np.zeros(hidden)
        w[f"{net}.W3"] = _orthogonal(rng, (hidden, out), output_gain)
        w[f"{net}.b3"] = np.zeros(out)
    return PolicyParams(w)


def _mlp(w, net, x):
    h1 = np.tanh(x @ w[f"{net}.W1"] + w[f"{net}.b1"])
    h2 = np.tanh(h1 @ w[f"{net}.W2"] + w[f"{net}.b2"])
    return h1, h2, h2 @ w[f"{net}.W3"] + w[f"{net}.b3"]


def _mlp_backward(w, net, x, h1, h2, dout, grads):
    grads[f"{net}.W3"] = h2.T @ dout
    grads[f"{net}.b3"] = dout.sum(axis=0)
    da2 = (dout @ w[f"{net}.W3"].T) * (1.0 - h2**2)
    grads[f"{net}.W2"] = h1.T @ da2
    grads[f"{net}.b2"] = da2.sum(axis=0)
    da1 = (da2 @ w[f"{net}.W2"].T) * (1.0 - h1**2)
    grads[f"{net}.W1"] = x.T @ da1
    grads[f"{net}.b1"] = da1.sum(axis=0)


def policy_forward(params: PolicyParams, obs: np.ndarray):
    """Return ``(logits, value)`` for one observation or a batch."""
    obs = np.asarray(obs, dtype=np.float64)
    if obs.shape[-1] != params.obs_size:
        raise ConfigurationError(f"observation length {obs.shape[-1]} != network input {params.obs_size}")
    single = obs.ndim == 1
    x = obs[None] if single else obs
    _, _, logits = _mlp(params.weights, "actor", x)
    _, _, value = _mlp(params.weights, "critic", x)
    value = value[:, 0]
    return (logits[0], value[0]) if single else (logits, value)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def bernoulli_log_prob(logits, bits):
    """Joint log-probability of ``bits`` under independent Bernoulli(sigmoid(logits))."""
    logits = np.asarray(logits, dtype=np.float64)
    return (bits * logits - np.logaddexp(0.0, logits)).sum(axis=-1)


def bernoulli_entropy(logits):
    """Per-bit entropy, same shape as ``logits``; each entry lies in [0, ln 2]."""
    logits = np.asarray(logits, dtype=np.float64)
    return np.logaddexp(0.0, logits) - logits * _sigmoid(logits)


def sample_action(logits, rng: RandomStream, n_centers: int | None = None):
    """Draw every bit independently; returns ``(Action | bits, log_prob)``."""
    logits = np.asarray(logits, dtype=np.float64)
    bits = (rng.random(logits.shape) < _sigmoid(logits)).astype(np.int64)
    logp = float(bernoulli_log_prob(logits, bits))
    if n_centers is None:
        return bits, logp
    return Action.from_bits(bits, n_centers), logp


# ---------------------------------------------------------------------------
# advantages and loss
# ---------------------------------------------------------------------------

def compute_gae(rewards, values, bootstrap: float, gamma: float, lam: float):
    """Backward GAE recursion over one episode. Returns ``(advantages, returns)``."""
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if rewards.shape != values.shape:
        raise ConfigurationError("rewards and values must have the same length")
    n = len(rewards)
    adv = np.zeros(n)
    next_value, running = float(bootstrap), 0.0
    for t in range(n - 1, -1, -1):
        delta = rewards[t] + gamma * next_value - values[t]
        running = delta + gamma * lam * running
        adv[t] = running
        next_value = values[t]
    return adv, adv + values


@dataclass
class Batch:
    obs: np.ndarray  # (N, D)
    actions: np.ndarray  # (N, K) in {0, 1}
    old_log_probs: np.ndarray  # (N,)
    advantages: np.ndarray  # (N,), normalized
    returns: np.ndarray  # (N,)

    def __len__(self):
        return len(self.obs)

    def subset(self, idx) -> "Batch":
        return Batch(self.obs[idx], self.actions[idx], self.old_log_probs[idx],
                     self.advantages[idx], self.returns[idx])


@dataclass
class LossInfo:
    loss: float
    policy_loss: float
    value_loss: float
    entropy: float  # mean per-bit entropy
    clip_fraction: float
    approx_kl: float


def ppo_loss(params: PolicyParams, batch: Batch, config: TrainConfig):
    """Clipped-surrogate loss and its exact gradient.

    loss = -mean(min(r*A, clip(r)*A)) + value_coef * mean((V - G)^2)
           - entropy_coef * mean(sum_bits H)

    Returns ``(loss, grads, info)``; ``grads`` has the same keys as ``params.weights``.
    """
    w = params.weights
    x = batch.obs
    n = len(batch)
    eps = config.clip_epsilon

    a1, a2, logits = _mlp(w, "actor", x)
    c1, c2, vout = _mlp(w, "critic", x)
    value = vout[:, 0]

    sig = _sigmoid(logits)
    logp = (batch.actions * logits - np.logaddexp(0.0, logits)).sum(axis=1)
    ratio = np.exp(logp - batch.old_log_probs)
    adv = batch.advantages
    surr1 = ratio * adv
    surr2 = np.clip(ratio, 1.0 - eps, 1.0 + eps) * adv
    unclipped = surr1 <= surr2
    policy_loss = -np.mean(np.minimum(surr1, surr2))

    err = value - batch.returns
    value_loss = np.mean(err**2)

    ent_bits = np.logaddexp(0.0, logits) - logits * sig
    entropy = ent_bits.sum(axis=1).mean()

    loss = policy_loss + config.value_coef * value_loss - config.entropy_coef * entropy
    if not np.isfinite(loss):
        raise NumericError(
            f"non-finite PPO loss: policy={policy_loss} value={value_loss} entropy={entropy} "
            f"max|logit|={np.abs(logits).max()} max ratio={ratio.max()}"
        )

    dlogp = np.where(unclipped, -ratio * adv / n, 0.0)
    dlogits = dlogp[:, None] * (batch.actions - sig)
    dlogits += (config.entropy_coef / n) * logits * sig * (1.0 - sig)
    dvalue = (2.0 * config.value_coef / n) * err

    grads: dict[str, np.ndarray] = {}
    _mlp_backward(w, "actor", x, a1, a2, dlogits, grads)
    _mlp_backward(w, "critic", x, c1, c2, dvalue[:, None], grads)

    info = LossInfo(
        loss=float(loss),
        policy_loss=float(policy_loss),
        value_loss=float(value_loss),
        entropy=float(ent_bits.mean()),
        clip_fraction=float(np.mean(np.abs(ratio - 1.0) > eps)),
        approx_kl=float(np.mean(batch.old_log_probs - logp)),
    )
    return float(loss), grads, info


# ---------------------------------------------------------------------------
# optimizer and update
# ---------------------------------------------------------------------------

@dataclass
class Adam:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def step(self, weights: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        if self.lr == 0:
            return
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        corr1 = 1.0 - b1**self.step_count
        corr2 = 1.0 - b2**self.step_count
        for k, g in grads.items():
            m = self.m.setdefault(k, np.zeros_like(g))
            v = self.v.setdefault(k, np.zeros_like(g))
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            weights[k] -= self.lr * (m / corr1) / (np.sqrt(v / corr2) + self.eps)


def clip_grad_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / (total + 1e-12)
        for g in grads.values():
            g *= scale
    return total


@dataclass
class TrajectoryBuffer:
    obs: list = field(default_factory=list)
    actions: list = field(default_factory=list)
    log_probs: list = field(default_factory=list)
    rewards: list = field(default_factory=list)
    values: list = field(default_factory=list)
    episode_starts: list = field(default_factory=list)
    advantages: np.ndarray | None = None
    returns: np.ndarray | None = None

    def __len__(self):
        return len(self.rewards)

    def add(self, obs, bits, log_prob, reward, value):
        self.obs.append(obs)
        self.actions.append(bits)
        self.log_probs.append(log_prob)
        self.rewards.append(reward)
        self.values.append(value)

    def start_episode(self):
        self.episode_starts.append(len(self.rewards))

    def finish(self, gamma: float, lam: float) -> None:
        """Fill advantages and returns; each episode ends with a zero bootstrap."""
        rewards = np.asarray(self.rewards, dtype=np.float64)
        values = np.asarray(self.values, dtype=np.float64)
        bounds = list(self.episode_starts) + [len(rewards)]
        adv = np.zeros(len(rewards))
        ret = np.zeros(len(rewards))
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            adv[lo:hi], ret[lo:hi] = compute_gae(rewards[lo:hi], values[lo:hi], 0.0, gamma, lam)
        if not np.all(np.isfinite(adv)):
            raise NumericError("non-finite advantages in trajectory buffer")
        self.advantages, self.returns = adv, ret

    def to_batch(self, value_norm: "RunningNorm | None" = None) -> Batch:
        """Normalized advantages; returns are mapped through ``value_norm`` when given."""
        if self.advantages is None:
            raise ConfigurationError("call finish() before to_batch()")
        adv = self.advantages
        norm = (adv - adv.mean()) / (adv.std() + 1e-8)
        returns = self.returns.copy() if value_norm is None else value_norm.normalize(self.returns)
        return Batch(
            obs=np.asarray(self.obs, dtype=np.float64),
            actions=np.asarray(self.actions, dtype=np.float64),
            old_log_probs=np.asarray(self.log_probs, dtype=np.float64),
            advantages=norm,
            returns=returns,
        )


@dataclass
class RunningNorm:
    """Running mean/std of value targets (parallel-merge form).

    The critic regresses normalized returns; ``denormalize`` maps its output
    back to reward units before advantages are computed.
    """

    mean: float = 0.0
    var: float = 1.0
    count: float = 1e-4

    def update(self, x: np.ndarray) -> None:
        x = np.asarray(x, dtype=np.float64)
        n, m, v = len(x), float(x.mean()), float(x.var())
        total = self.count + n
        delta = m - self.mean
        self.mean += delta * n / total
        self.var = (self.var * self.count + v * n + delta**2 * self.count * n / total) / total
        self.count = total

    @property
    def std(self) -> float:
        return math.sqrt(self.var) + 1e-8

    def normalize(self, x):
        return (np.asarray(x) - self.mean) / self.std

    def denormalize(self, x):
        return np.asarray(x) * self.std + self.mean


def update(params: PolicyParams, batch: Batch, config: TrainConfig, optimizer: Adam | None = None,
           rng: RandomStream | None = None) -> tuple[PolicyParams, list[LossInfo]]:
    """Run ``epochs_per_update`` passes of shuffled minibatches; returns new params."""
    new = params.copy()
    optimizer = optimizer if optimizer is not None else Adam(config.learning_rate)
    rng = rng if rng is not None else make_stream(config.seed, SHUFFLE)
    infos = []
    n = len(batch)
    for _ in range(config.epochs_per_update):
        order = rng.permutation(n)
        for lo in range(0, n, config.minibatch_size):
            mb = batch.subset(order[lo: lo + config.minibatch_size])
            _, grads, info = ppo_loss(new, mb, config)
            clip_grad_norm(grads, config.max_grad_norm)
            optimizer.step(new.weights, grads)
            infos.append(info)
    if not new.all_finite():
        raise NumericError("non-finite weights after PPO update")
    return new, infos


# ---------------------------------------------------------------------------
# training and evaluation
# ---------------------------------------------------------------------------

@dataclass
class EpisodeMetrics:
    reward: float
    avg_satisfaction: float
    efficiency: float
    cost: float
    avg_inventory: float

    def as_tuple(self):
        return tuple(getattr(self, m) for m in METRICS)


def _as_series(demand, horizon: int, n_points: int) -> DemandSeries:
    if isinstance(demand, DemandSeries):
        return demand
    return generate_series(demand, horizon, n_points)


def run_episode(env: HSCEnv, params: PolicyParams, policy_rng: RandomStream, env_seed: int,
                buffer: TrajectoryBuffer | None = None, value_norm: RunningNorm | None = None,
                actions: list | None = None):
    """Play one episode with the stochastic policy; returns per-step metric rows.

    Sampled actions are appended to ``actions`` when a list is given.
    """
    obs = env.reset(env_seed)
    C = env.instance.n_centers
    rows = []
    if buffer is not None:
        buffer.start_episode()
    done = False
    while not done:
        logits, value = policy_forward(params, obs)
        bits, logp = sample_action(logits, policy_rng)
        action = Action.from_bits(bits, C)
        next_obs, out, done = env.step(action)
        if actions is not None:
            actions.append(action)
        if buffer is not None:
            if value_norm is not None:
                value = float(value_norm.denormalize(value))
            buffer.add(obs, bits, logp, out.reward, value)
        rows.append((out.reward, out.avg_satisfaction, out.efficiency, out.cost, out.avg_inventory))
        obs = next_obs
    return np.asarray(rows)


def train(instance: NetworkInstance, demand: DemandParams | DemandSeries, config: TrainConfig,
          mismatch_mode=MismatchMode.CURRENT, progress=None):
    """Train from scratch. Returns ``(params, metrics)`` where ``metrics`` has one
    :class:`EpisodeMetrics` (per-step means) per episode."""
    series = _as_series(demand, config.horizon, instance.n_points)
    env = HSCEnv(instance, series, horizon=config.horizon, mismatch_mode=mismatch_mode)
    params = init_params(env.obs_size, instance.n_facilities, config.hidden, make_stream(config.seed, INIT))
    optimizer = Adam(config.learning_rate)
    value_norm = RunningNorm() if config.normalize_values else None
    policy_rng = make_stream(config.seed, POLICY)
    shuffle_rng = make_stream(config.seed, SHUFFLE)

    n_episodes = config.total_steps // config.horizon
    metrics: list[EpisodeMetrics] = []
    episode = 0
    while episode < n_episodes:
        buffer = TrajectoryBuffer()
        for _ in range(min(config.rollout_episodes_per_update, n_episodes - episode)):
            env_seed = int(make_stream(config.seed, ENV, episode).integers(2**31))
            rows = run_episode(env, params, policy_rng, env_seed, buffer, value_norm)
            metrics.append(EpisodeMetrics(*rows.mean(axis=0)))
            episode += 1
        buffer.finish(config.gamma, config.gae_lambda)
        if value_norm is not None:
            value_norm.update(buffer.returns)
        params, _ = update(params, buffer.to_batch(value_norm), config, optimizer, shuffle_rng)
        if progress is not None:
            progress(episode, n_episodes, metrics[-1])
    return params, metrics


def evaluate(params: PolicyParams, instance: NetworkInstance, series: DemandSeries, n_episodes: int = 1,
             seed: int = 0, horizon: int | None = None, mismatch_mode=MismatchMode.CURRENT) -> list[np.ndarray]:
    """Roll the stochastic policy without learning.

    Returns one ``(T, 5)`` array per episode; columns follow ``METRICS``.
    Episode 0 uses ``seed`` itself as the environment seed, so it sees the same
    environment noise as ``rollout(..., seed)`` and the heuristic evaluations.
    """
    env = HSCEnv(instance, series, horizon=horizon, mismatch_mode=mismatch_mode)
    policy_rng = make_stream(seed, POLICY)
    out = []
    for i in range(n_episodes):
        out.append(run_episode(env, params, policy_rng, eval_env_seed(seed, i)))
    return out


def eval_env_seed(seed: int, episode: int = 0) -> int:
    return seed if episode == 0 else int(make_stream(seed, ENV, episode).integers(2**31))


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def dumps_checkpoint(params: PolicyParams, config: TrainConfig) -> bytes:
    """Versioned JSON header line followed by raw little-endian float64 weights."""
    keys = sorted(params.weights)
    header = {
        "format": "hscrl-ppo",
        "version": CHECKPOINT_VERSION,
        "config": asdict(config),
        "tensors": [[k, list(params.weights[k].shape)] for k in keys],
    }
    body = b"".join(np.ascontiguousarray(params.weights[k], dtype="<f8").tobytes() for k in keys)
    return json.dumps(header, sort_keys=True).encode() + b"\n" + body


def loads_checkpoint(data: bytes) -> tuple[PolicyParams, TrainConfig]:
    head, sep, body = data.partition(b"\n")
    try:
        header = json.loads(head)
    except ValueError:
        raise ConfigurationError("checkpoint header is not valid JSON") from None
    if header.get("format") != "hscrl-ppo" or header.get("version") != CHECKPOINT_VERSION:
        raise ConfigurationError(f"unsupported checkpoint: {header.get('format')} v{header.get('version')}")
    sizes = [int(np.prod(shape)) * 8 for _, shape in header["tensors"]]
    if sum(sizes) != len(body):
        raise ConfigurationError("checkpoint body length does not match its header")
    weights, offset = {}, 0
    for (key, shape), n in zip(header["tensors"], sizes):
        weights[key] = np.frombuffer(body[offset:offset + n], dtype="<f8").astype(np.float64).reshape(shape)
        offset += n
    return PolicyParams(weights), TrainConfig(**header["config"])


def save_checkpoint(params: PolicyParams, config: TrainConfig, path: str | Path) -> None:
    atomic_write_bytes(path, dumps_checkpoint(params, config))


def load_checkpoint(path: str | Path) -> tuple[PolicyParams, TrainConfig]:
    return loads_checkpoint(Path(path).read_bytes())
