"""Brake/obstacle toy problem: data generator, SGD training and the
causality metric c = log p(a=1|s_obstacle) - log p(a=1|s_brake_light).

Observations have 5 features: obstacle bit, brake-light bit (the previous
action, a non-causal correlate) and 3 uniform noise distractors. The optimal
policy brakes iff the obstacle bit is set, so labels equal the obstacle bit
by construction.

Networks are tiny sigmoid-output MLPs trained with batch-size-1 SGD on
binary cross entropy. Everything is plain numpy with hand-written gradients
(checked against finite differences in the tests), and all arrays carry a
leading axis so that independent replicas (one per seed) train in lockstep
vectorized form.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

N_FEATURES = 5


@dataclass(frozen=True)
class ToyEnvConfig:
    obstacle_spawn_prob: float = 0.05
    persistence_min: int = 2
    persistence_max: int = 6

    def __post_init__(self):
        if not 0.0 < self.obstacle_spawn_prob < 1.0:
            raise ValueError("obstacle_spawn_prob must be in (0, 1)")
        if not 1 <= self.persistence_min <= self.persistence_max:
            raise ValueError("bad persistence range")


class ToySimulator:
    """Vectorized stream of (observation, optimal action) pairs.

    Obstacles spawn with a fixed per-frame probability and persist for a
    uniformly drawn number of frames; the brake light at t mirrors the
    (optimal) action at t-1, creating the confound.
    """

    def __init__(self, cfg: ToyEnvConfig, n_streams: int, rng: np.random.Generator):
        self.cfg = cfg
        self.rng = rng
        self.remaining = np.zeros(n_streams, dtype=np.int64)
        self.prev_action = np.zeros(n_streams, dtype=np.float64)

    def step(self):
        cfg, rng = self.cfg, self.rng
        n = len(self.remaining)
        spawn = (self.remaining == 0) & (rng.uniform(size=n) < cfg.obstacle_spawn_prob)
        self.remaining[spawn] = rng.integers(
            cfg.persistence_min, cfg.persistence_max + 1, size=int(spawn.sum())
        )
        obstacle = (self.remaining > 0).astype(np.float64)
        obs = np.empty((n, N_FEATURES))
        obs[:, 0] = obstacle
        obs[:, 1] = self.prev_action
        obs[:, 2:] = rng.uniform(size=(n, 3))
        label = obstacle.copy()
        self.remaining = np.maximum(self.remaining - 1, 0)
        self.prev_action = label
        return obs, label


def generate_toy_dataset(cfg: ToyEnvConfig, n_steps: int, rng: np.random.Generator):
    """Yield n_steps (observation[5], optimal action) pairs from one stream."""
    if n_steps <= 0:
        raise ValueError("n_steps must be > 0")
    sim = ToySimulator(cfg, 1, rng)
    for _ in range(n_steps):
        obs, label = sim.step()
        yield obs[0], float(label[0])


def _sigmoid(z):
    return np.where(z >= 0, 1.0 / (1.0 + np.exp(-z)), np.exp(z) / (1.0 + np.exp(z)))


@dataclass
class ToyNet:
    """ReLU MLP with sigmoid output, replicated over a leading seed axis.

    depth counts hidden layers; depth 0 is a linear model with bias. Weight
    arrays are [n_nets, fan_in, fan_out], biases [n_nets, fan_out].
    """

    weights: list = field(default_factory=list)
    biases: list = field(default_factory=list)

    @classmethod
    def create(cls, depth: int, width: int, rng: np.random.Generator, n_nets: int = 1):
        dims = [N_FEATURES] + [width] * depth + [1]
        weights, biases = [], []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            scale = np.sqrt(2.0 / fan_in)
            weights.append(rng.normal(0.0, scale, size=(n_nets, fan_in, fan_out)))
            biases.append(np.zeros((n_nets, fan_out)))
        return cls(weights=weights, biases=biases)

    @property
    def depth(self) -> int:
        return len(self.weights) - 1

    @property
    def n_nets(self) -> int:
        return self.weights[0].shape[0]

    def _forward_cached(self, x: np.ndarray):
        """x: [n_nets, n_features] -> (p [n_nets], pre/post activations)."""
        acts = [x]
        h = x
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            h = np.maximum(np.einsum("nio,ni->no", w, h) + b, 0.0)
            acts.append(h)
        z = np.einsum("nio,ni->no", self.weights[-1], h) + self.biases[-1]
        return _sigmoid(z[:, 0]), acts

    def predict(self, x: np.ndarray) -> np.ndarray:
        """p(a=1 | s) for x of shape [n_features] or [n_nets, n_features]."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = np.broadcast_to(x, (self.n_nets, N_FEATURES))
        p, _ = self._forward_cached(x)
        return p

    def gradients(self, x: np.ndarray, y) -> tuple:
        """Per-net BCE gradients for a single sample per net.

        x: [n_nets, n_features], y: scalar or [n_nets]. Returns
        (grad_weights, grad_biases) matching the parameter shapes.
        """
        x = np.asarray(x, dtype=np.float64)
        y = np.broadcast_to(np.asarray(y, dtype=np.float64), (self.n_nets,))
        p, acts = self._forward_cached(x)
        # dBCE/dz for sigmoid output
        delta = (p - y)[:, None]  # [n, 1]
        grad_w, grad_b = [], []
        for layer in range(len(self.weights) - 1, -1, -1):
            grad_w.append(np.einsum("ni,no->nio", acts[layer], delta))
            grad_b.append(delta)
            if layer > 0:
                delta = np.einsum("nio,no->ni", self.weights[layer], delta)
                delta = delta * (acts[layer] > 0)
        grad_w.reverse()
        grad_b.reverse()
        return grad_w, grad_b


def sgd_step(net: ToyNet, sample: tuple, lr: float) -> ToyNet:
    """One batch-size-1 BCE gradient step (in place; the net is returned)."""
    if lr < 0:
        raise ValueError("lr must be >= 0")
    x, y = sample
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = np.broadcast_to(x, (net.n_nets, N_FEATURES))
    grad_w, grad_b = net.gradients(x, y)
    for g in grad_w + grad_b:
        if not np.all(np.isfinite(g)):
            raise FloatingPointError("non-finite gradient in sgd_step")
    for w, g in zip(net.weights, grad_w):
        w -= lr * g
    for b, g in zip(net.biases, grad_b):
        b -= lr * g
    return net


@dataclass(frozen=True)
class CausalityProbe:
    """Probe states for the causality metric.

    s_o has the obstacle bit set and the brake light off; s_b the reverse.
    The 3 distractor features are averaged over n_noise_draws fresh draws,
    and probabilities are clamped so c stays finite.
    """

    n_noise_draws: int = 256
    clamp: float = 1e-6


def causality_metric(
    net: ToyNet, probe: CausalityProbe, rng: np.random.Generator
) -> np.ndarray:
    """c per net, in nats. Positive c = the net brakes for the obstacle,
    not for the brake light."""
    eps = probe.clamp
    total = np.zeros(net.n_nets)
    for _ in range(probe.n_noise_draws):
        noise = rng.uniform(size=3)
        s_o = np.concatenate(([1.0, 0.0], noise))
        s_b = np.concatenate(([0.0, 1.0], noise))
        p_o = np.clip(net.predict(s_o), eps, 1.0 - eps)
        p_b = np.clip(net.predict(s_b), eps, 1.0 - eps)
        total += np.log(p_o) - np.log(p_b)
    return total / probe.n_noise_draws


@dataclass(frozen=True)
class ToyRunConfig:
    depths: tuple = (0, 1, 3)
    steps: int = 200_000
    lr: float = 0.1
    width: int = 32
    n_seeds: int = 5
    eval_every: int = 1000
    env: ToyEnvConfig = field(default_factory=ToyEnvConfig)
    probe: CausalityProbe = field(default_factory=CausalityProbe)
    base_seed: int = 0


def run_toy_experiment(cfg: ToyRunConfig) -> list:
    """Train per-depth nets and sample the causality metric during training.

    Returns rows (depth, seed, step, c); step 0 is the initialization point.
    The n_seeds replicas of one depth run vectorized in lockstep, each with
    its own data stream and init.
    """
    if not cfg.depths:
        raise ValueError("depths must be nonempty")
    rows = []
    for depth in cfg.depths:
        rng = np.random.default_rng([cfg.base_seed, depth])
        eval_rng = np.random.default_rng([cfg.base_seed, depth, 7])
        net = ToyNet.create(depth, cfg.width, rng, n_nets=cfg.n_seeds)
        sim = ToySimulator(cfg.env, cfg.n_seeds, rng)

        def record(step):
            c = causality_metric(net, cfg.probe, eval_rng)
            for seed in range(cfg.n_seeds):
                rows.append((depth, seed, step, float(c[seed])))

        record(0)
        for step in range(1, cfg.steps + 1):
            obs, label = sim.step()
            sgd_step(net, (obs, label), cfg.lr)
            if step % cfg.eval_every == 0:
                record(step)
    return rows


def write_toy_csv(rows, path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["depth", "seed", "step", "c"])
        writer.writerows(rows)


def final_mean_c(rows) -> dict:
    """Mean c over seeds at the last recorded step, per depth."""
    last_step: dict = {}
    for depth, _, step, _ in rows:
        last_step[depth] = max(last_step.get(depth, 0), step)
    sums: dict = {}
    counts: dict = {}
    for depth, _, step, c in rows:
        if step == last_step[depth]:
            sums[depth] = sums.get(depth, 0.0) + c
            counts[depth] = counts.get(depth, 0) + 1
    return {d: sums[d] / counts[d] for d in sums}
