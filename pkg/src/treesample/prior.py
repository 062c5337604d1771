"""State-action value priors: the closed-form uniform-target heuristic and a
trainable MLP regressed onto search values.

A prior maps a prefix of length n to the K-vector of default values for the
next variable. Priors are free to evaluate: they never touch the budget.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .logmath import logsumexp, sample_softmax
from .model import FactorGraph, Prefix, REWARD_EVAL

CHECKPOINT_FORMAT = "treesample-mlp-v1"


class HeuristicPrior:
    """Values of the all-factors-vanish target: (N - n - 1) * log K after an
    n-prefix, i.e. the log-volume of the remaining configurations."""

    def evaluate(self, graph: FactorGraph, prefix) -> np.ndarray:
        steps_left = graph.num_variables - len(prefix) - 1
        if steps_left < 0:
            raise ValueError("prefix already complete")
        return np.full(graph.num_states, steps_left * math.log(graph.num_states))

    def evaluate_batch(self, graph: FactorGraph, prefixes) -> np.ndarray:
        return np.stack([self.evaluate(graph, p) for p in prefixes])


def encode_prefix(graph: FactorGraph, prefix) -> np.ndarray:
    """Fixed-width encoding: per variable, K one-hot slots plus an
    unassigned flag in slot K+1. Injective over prefixes."""
    n, k = graph.num_variables, graph.num_states
    out = np.zeros(n * (k + 1))
    assigned = {graph.ordering[d]: prefix[d] for d in range(len(prefix))}
    for v in range(1, n + 1):
        base = (v - 1) * (k + 1)
        if v in assigned:
            out[base + assigned[v] - 1] = 1.0
        else:
            out[base + k] = 1.0
    return out


def encode_batch(graph: FactorGraph, prefixes) -> np.ndarray:
    return np.stack([encode_prefix(graph, p) for p in prefixes])


class MLPValueFunction:
    """Plain fully connected ReLU network in float64 numpy.

    Architecture: input -> [hidden x num_hidden_layers] -> K linear outputs.
    """

    def __init__(
        self,
        input_dim: int,
        output_dim: int,
        hidden_units: int = 256,
        num_hidden_layers: int = 4,
        seed: int = 0,
    ):
        self.input_dim = input_dim
        self.output_dim = output_dim
        self.hidden_units = hidden_units
        self.num_hidden_layers = num_hidden_layers
        rng = np.random.default_rng(seed)
        dims = [input_dim] + [hidden_units] * num_hidden_layers + [output_dim]
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            scale = math.sqrt(2.0 / fan_in)
            self.weights.append(rng.normal(scale=scale, size=(fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))

    # -- parameter plumbing ------------------------------------------------

    def parameters(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def get_flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.parameters()])

    def set_flat(self, flat: np.ndarray) -> None:
        i = 0
        for p in self.parameters():
            p[...] = flat[i : i + p.size].reshape(p.shape)
            i += p.size
        if i != flat.size:
            raise ValueError("flat parameter vector has the wrong length")

    # -- forward / backward ------------------------------------------------

    def forward(self, x: np.ndarray) -> np.ndarray:
        """(B, input_dim) -> (B, output_dim)."""
        h = x
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            h = np.maximum(h @ w + b, 0.0)
        out = h @ self.weights[-1] + self.biases[-1]
        if np.any(np.isnan(out)):
            raise FloatingPointError("MLP produced NaN outputs")
        return out

    def _forward_cached(self, x: np.ndarray):
        acts = [x]
        h = x
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            h = np.maximum(h @ w + b, 0.0)
            acts.append(h)
        out = h @ self.weights[-1] + self.biases[-1]
        return out, acts

    def loss_and_gradients(self, x: np.ndarray, targets: np.ndarray):
        """Mean squared-L2 regression loss and its parameter gradients."""
        out, acts = self._forward_cached(x)
        batch = x.shape[0]
        diff = out - targets
        loss = float(np.sum(diff * diff) / batch)
        grad_ws = [np.empty_like(w) for w in self.weights]
        grad_bs = [np.empty_like(b) for b in self.biases]
        delta = 2.0 * diff / batch
        for layer in range(len(self.weights) - 1, -1, -1):
            grad_ws[layer] = acts[layer].T @ delta
            grad_bs[layer] = delta.sum(axis=0)
            if layer > 0:
                delta = (delta @ self.weights[layer].T) * (acts[layer] > 0.0)
        grads = []
        for gw, gb in zip(grad_ws, grad_bs):
            grads.extend((gw, gb))
        return loss, grads

    # -- prior interface ---------------------------------------------------

    def evaluate(self, graph: FactorGraph, prefix) -> np.ndarray:
        return self.forward(encode_prefix(graph, prefix)[None, :])[0]

    def evaluate_batch(self, graph: FactorGraph, prefixes) -> np.ndarray:
        return self.forward(encode_batch(graph, prefixes))


class Adam:
    """Adam with standard moment defaults; state aligned with a parameter list."""

    def __init__(self, params: list[np.ndarray], learning_rate: float = 3e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        self.step_count += 1
        b1c = 1.0 - self.beta1**self.step_count
        b2c = 1.0 - self.beta2**self.step_count
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.learning_rate * (m / b1c) / (np.sqrt(v / b2c) + self.eps)


class ReplayBuffer:
    """FIFO ring of (encoded prefix, target vector) pairs, uniform sampling."""

    def __init__(self, capacity: int, input_dim: int, output_dim: int):
        self.capacity = capacity
        self.inputs = np.zeros((capacity, input_dim))
        self.targets = np.zeros((capacity, output_dim))
        self.size = 0
        self._next = 0

    def __len__(self) -> int:
        return self.size

    def add(self, encoded: np.ndarray, target: np.ndarray) -> None:
        self.inputs[self._next] = encoded
        self.targets[self._next] = target
        self._next = (self._next + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample_batch(self, batch_size: int, rng: np.random.Generator):
        idx = rng.integers(0, self.size, size=batch_size)
        return self.inputs[idx], self.targets[idx]


def train_step(
    mlp: MLPValueFunction,
    replay: ReplayBuffer,
    batch_size: int,
    adam: Adam,
    rng: np.random.Generator,
    clamp_floor: float = -50.0,
) -> float:
    """One uniform minibatch, one Adam update; returns the pre-update loss.

    Zero-mass (-inf) targets are clamped to the floor so the squared loss
    stays defined while the action ranking is preserved.
    """
    if len(replay) < batch_size:
        raise ValueError("replay buffer smaller than the batch size")
    x, y = replay.sample_batch(batch_size, rng)
    y = np.maximum(y, clamp_floor)
    loss, grads = mlp.loss_and_gradients(x, y)
    adam.step(mlp.parameters(), grads)
    return loss


@dataclass
class TrainConfig:
    episodes: int = 4000
    budget_per_episode: int = 2500
    samples_per_episode: int = 128
    batch_size: int = 128
    learning_rate: float = 3e-4
    seed: int = 0
    replay_capacity: int = 10_000
    clamp_floor: float = -50.0
    c: float = 2.0
    epsilon: float = 0.1
    smc_threshold: float = 0.5
    cost_mode: str = REWARD_EVAL
    metric_samples: int = 128

    def __post_init__(self):
        for name in ("episodes", "budget_per_episode", "samples_per_episode",
                     "batch_size", "learning_rate", "replay_capacity", "metric_samples"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    def to_json_dict(self) -> dict:
        return {
            "episodes": self.episodes,
            "budget_per_episode": self.budget_per_episode,
            "samples_per_episode": self.samples_per_episode,
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "seed": self.seed,
            "replay_capacity": self.replay_capacity,
            "clamp_floor": self.clamp_floor,
            "c": self.c,
            "epsilon": self.epsilon,
            "smc_threshold": self.smc_threshold,
            "cost_mode": self.cost_mode,
            "metric_samples": self.metric_samples,
        }


class PriorDistribution:
    """Ancestral sampler that uses only the prior's softmax at every step."""

    def __init__(self, graph: FactorGraph, prior):
        self.graph = graph
        self.prior = prior

    def sample(self, rng) -> Prefix:
        x: list[int] = []
        for _ in range(self.graph.num_variables):
            q = self.prior.evaluate(self.graph, tuple(x))
            x.append(sample_softmax(q, rng) + 1)
        return tuple(x)

    def log_density(self, x) -> float:
        total = 0.0
        for depth, a in enumerate(x):
            q = self.prior.evaluate(self.graph, tuple(x[:depth]))
            total += float(q[a - 1]) - logsumexp(q)
        return total


def _delta_kl_by_sampling(dist, graph: FactorGraph, num_samples: int, rng) -> float:
    total = 0.0
    for _ in range(num_samples):
        x = dist.sample(rng)
        total += dist.log_density(x) - graph.log_unnormalized_density(x)
    return total / num_samples


def _smc_step_targets(atoms, weights, num_particles: int, k: int):
    """Smoothed log empirical conditionals at every prefix hit by an atom."""
    masses: dict[Prefix, np.ndarray] = {}
    for x, w in zip(atoms, weights):
        for n in range(len(x)):
            vec = masses.get(x[:n])
            if vec is None:
                vec = np.zeros(k)
                masses[x[:n]] = vec
            vec[x[n] - 1] += w
    smooth = 1.0 / (k * num_particles)
    targets = {}
    for prefix, vec in masses.items():
        p = vec + smooth
        targets[prefix] = np.log(p / p.sum())
    return targets


def train_loop(graph: FactorGraph, algo: str, config: TrainConfig,
               mlp: MLPValueFunction | None = None, adam: Adam | None = None,
               start_episode: int = 0, progress=None):
    """Alternating data generation and optimizer passes on one fixed graph.

    Per episode: build an approximation with the current value function as
    prior/proposal, draw samples, write per-step value targets to replay,
    then run one optimizer step per sample drawn. Returns the trained network
    and one metrics row per episode.
    """
    from .baselines import DegenerateSampleError, smc
    from .search import build_tree

    if algo not in ("treesample", "smc"):
        raise ValueError("algo must be 'treesample' or 'smc'")
    n, k = graph.num_variables, graph.num_states
    input_dim = n * (k + 1)
    if mlp is None:
        mlp = MLPValueFunction(input_dim, k, seed=config.seed)
    if adam is None:
        adam = Adam(mlp.parameters(), learning_rate=config.learning_rate)
    replay = ReplayBuffer(config.replay_capacity, input_dim, k)
    master = np.random.default_rng(config.seed)
    history: list[dict] = []
    # burn replay/rng state forward so a resumed run keeps drawing fresh seeds
    for _ in range(start_episode):
        master.integers(0, 2**63 - 1, size=3)

    for episode in range(start_episode, config.episodes):
        seeds = master.integers(0, 2**63 - 1, size=3)
        build_seed, draw_seed, learn_seed = (int(s) for s in seeds)
        draw_rng = np.random.default_rng(draw_seed)
        degenerate = False
        delta_kl = math.nan
        pairs: list[tuple[Prefix, np.ndarray]] = []

        if algo == "treesample":
            tree = build_tree(graph, mlp, config.budget_per_episode, c=config.c,
                              epsilon=config.epsilon, seed=build_seed,
                              cost_mode=config.cost_mode)
            total = 0.0
            for _ in range(config.samples_per_episode):
                x = tree.sample(draw_rng)
                total += tree.log_density(x) - graph.log_unnormalized_density(x)
                for d in range(n):
                    node = tree.nodes.get(x[:d])
                    if node is not None:
                        pairs.append((x[:d], node.q.copy()))
            delta_kl = total / config.samples_per_episode
        else:
            try:
                result = smc(graph, mlp, config.budget_per_episode,
                             resample_threshold=config.smc_threshold,
                             seed=build_seed, cost_mode=config.cost_mode)
            except DegenerateSampleError:
                degenerate = True
                result = None
            if result is not None:
                from .metrics import delta_kl_atoms

                delta_kl = delta_kl_atoms(result, graph)
                targets = _smc_step_targets(result.atoms, result.weights,
                                            result.num_particles or len(result.atoms), k)
                w = np.asarray(result.weights)
                for _ in range(config.samples_per_episode):
                    i = int(draw_rng.choice(len(result.atoms), p=w))
                    x = result.atoms[i]
                    for d in range(n):
                        t = targets.get(x[:d])
                        if t is not None:
                            pairs.append((x[:d], t))

        for prefix, target in pairs:
            replay.add(encode_prefix(graph, prefix), target)

        learn_rng = np.random.default_rng(learn_seed)
        losses = []
        if len(replay) >= config.batch_size:
            for _ in range(config.samples_per_episode):
                losses.append(train_step(mlp, replay, config.batch_size, adam,
                                         learn_rng, config.clamp_floor))

        prior_dist = PriorDistribution(graph, mlp)
        delta_kl_prior = _delta_kl_by_sampling(
            prior_dist, graph, config.metric_samples, np.random.default_rng(draw_seed + 1)
        )
        row = {
            "episode": episode,
            "delta_kl": delta_kl,
            "delta_kl_prior": delta_kl_prior,
            "mean_loss": float(np.mean(losses)) if losses else math.nan,
            "train_steps": len(losses),
            "replay_size": len(replay),
            "degenerate": degenerate,
        }
        history.append(row)
        if progress is not None:
            progress(row)
    return mlp, history


# ---------------------------------------------------------------------------
# Checkpoints: one JSON header line, then raw little-endian float64 blocks
# (parameters, Adam first moments, Adam second moments). Loads bit-exactly.
# ---------------------------------------------------------------------------


def save_checkpoint(path, mlp: MLPValueFunction, adam: Adam, episode: int,
                    config: TrainConfig) -> None:
    header = {
        "format": CHECKPOINT_FORMAT,
        "input_dim": mlp.input_dim,
        "output_dim": mlp.output_dim,
        "hidden_units": mlp.hidden_units,
        "num_hidden_layers": mlp.num_hidden_layers,
        "num_parameters": mlp.num_parameters(),
        "adam_step": adam.step_count,
        "episode": episode,
        "config": config.to_json_dict(),
    }
    flat = mlp.get_flat()
    m = np.concatenate([a.ravel() for a in adam.m])
    v = np.concatenate([a.ravel() for a in adam.v])
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode("utf-8"))
        fh.write(b"\n")
        fh.write(flat.astype("<f8").tobytes())
        fh.write(m.astype("<f8").tobytes())
        fh.write(v.astype("<f8").tobytes())


def load_checkpoint(path):
    """Returns (mlp, adam, episode, config) rebuilt bit-exactly."""
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        if header.get("format") != CHECKPOINT_FORMAT:
            raise ValueError("unrecognized checkpoint format")
        count = header["num_parameters"]
        blob = fh.read()
    expected = 3 * count * 8
    if len(blob) != expected:
        raise ValueError(f"checkpoint block size {len(blob)} != expected {expected}")
    flat = np.frombuffer(blob[: count * 8], dtype="<f8")
    m_flat = np.frombuffer(blob[count * 8 : 2 * count * 8], dtype="<f8")
    v_flat = np.frombuffer(blob[2 * count * 8 :], dtype="<f8")
    config = TrainConfig(**header["config"])
    mlp = MLPValueFunction(
        header["input_dim"],
        header["output_dim"],
        hidden_units=header["hidden_units"],
        num_hidden_layers=header["num_hidden_layers"],
        seed=config.seed,
    )
    mlp.set_flat(flat.copy())
    adam = Adam(mlp.parameters(), learning_rate=config.learning_rate)
    adam.step_count = header["adam_step"]
    i = 0
    for a_m, a_v in zip(adam.m, adam.v):
        a_m[...] = m_flat[i : i + a_m.size].reshape(a_m.shape)
        a_v[...] = v_flat[i : i + a_v.size].reshape(a_v.shape)
        i += a_m.size
    return mlp, adam, header["episode"], config
