"""Agent A (active communicator) and Agent B (responder).

Every head is a tanh MLP with two hidden layers. Messages enter networks as
``embed_aim``: the concatenated rows of the frozen shared codebook, so no RL
gradient ever reaches the VQ-VAE.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from aimlab import diffcore as dc
from aimlab.checkpoint import Checkpoint
from aimlab.errors import ConfigError


@dataclass
class AgentConfig:
    K: int = 64
    D: int = 8
    L: int = 2
    label_dim: int = 8
    hidden: int = 64
    n_labels: int = 10

    @property
    def aim_dim(self) -> int:
        return self.L * self.D

    @property
    def latent_dim(self) -> int:
        # the encoder emits one D-vector per slot
        return self.L * self.D


@dataclass
class ActOutcome:
    aim: np.ndarray  # (B, L) tokens
    log_prob: dc.Tensor  # (B,) summed over tokens
    entropy: dc.Tensor  # (B,) summed over tokens
    logits: np.ndarray  # (B, L, K)


def embed_aim(aim, codebook: np.ndarray) -> np.ndarray:
    """Concatenate codebook rows for each token: (..., L) -> (..., L*D)."""
    aim = np.asarray(aim, dtype=np.int64)
    K = codebook.shape[0]
    if aim.size and (aim.min() < 0 or aim.max() >= K):
        raise ConfigError(f"AIM token out of range [0, {K})")
    rows = codebook[aim]
    return rows.reshape(*aim.shape[:-1], -1)


def sample_aim(logits: dc.Tensor, L: int, K: int, rng: np.random.Generator) -> ActOutcome:
    """Sample L independent tokens from (B, L*K) logits."""
    b = logits.shape[0]
    shaped = dc.reshape(logits, (b * L, K))
    logp = dc.log_softmax(shaped)
    tokens, _, _ = dc.categorical_sample(shaped.value, rng)
    log_prob = dc.reshape(dc.pick(logp, tokens), (b, L)).sum(axis=1)
    ent = dc.reshape(dc.entropy(shaped), (b, L)).sum(axis=1)
    return ActOutcome(tokens.reshape(b, L), log_prob, ent, shaped.value.reshape(b, L, K))


def _batch(z_e, labels, aim=None):
    z_e = np.atleast_2d(np.asarray(z_e, dtype=np.float64))
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if aim is None:
        return z_e, labels
    return z_e, labels, np.atleast_2d(np.asarray(aim, dtype=np.int64))


class _Agent:
    prefix = "agent"

    def __init__(self, codebook: np.ndarray, cfg: AgentConfig, rng: np.random.Generator):
        if codebook.shape != (cfg.K, cfg.D):
            raise ConfigError(f"codebook shape {codebook.shape} != ({cfg.K}, {cfg.D})")
        self.codebook = codebook
        self.cfg = cfg
        self.label_embedding = dc.Parameter(rng.uniform(-1.0, 1.0, (cfg.n_labels, cfg.label_dim)), f"{self.prefix}.label_embedding")
        self.heads: dict[str, dc.MLP] = {}

    def _head(self, name: str, n_in: int, n_out: int, rng) -> dc.MLP:
        h = self.cfg.hidden
        net = dc.MLP([n_in, h, h, n_out], rng, f"{self.prefix}.{name}")
        self.heads[name] = net
        return net

    def parameters(self, heads=None) -> list[dc.Parameter]:
        names = self.heads if heads is None else heads
        params = [self.label_embedding]
        for name in names:
            params.extend(self.heads[name].parameters())
        return params

    def named_parameters(self) -> dict[str, dc.Parameter]:
        return {p.name: p for p in self.parameters()}

    def labels(self, labels) -> dc.Tensor:
        return dc.embedding(self.label_embedding, labels)

    def embed(self, aim) -> np.ndarray:
        return embed_aim(aim, self.codebook)


class AgentA(_Agent):
    """Speaks first from its own view of the image and label."""

    prefix = "agent_a"

    def __init__(self, codebook, cfg: AgentConfig, rng):
        super().__init__(codebook, cfg, rng)
        state = cfg.latent_dim + cfg.label_dim
        self.policy_input_dim = state
        self.critic_input_dim = state + cfg.aim_dim
        self.policy = self._head("policy", state, cfg.L * cfg.K, rng)
        self.central_value_net = self._head("central_value", self.critic_input_dim, 1, rng)
        self.aim_value_net = self._head("aim_value", cfg.aim_dim + state, 1, rng)
        self.opponent_reward_net = self._head("opponent_reward", cfg.aim_dim + state, 1, rng)
        self.opponent_aim_net = self._head("opponent_aim", cfg.aim_dim + cfg.label_dim, cfg.L * cfg.K, rng)
        self.intent_net = self._head("intent", cfg.aim_dim + cfg.label_dim, 2, rng)

    def state(self, z_e, labels) -> dc.Tensor:
        return dc.concat([z_e, self.labels(labels)])

    def policy_logits(self, z_e, labels) -> dc.Tensor:
        z_e, labels = _batch(z_e, labels)
        return self.policy(self.state(z_e, labels))

    def act(self, z_e, labels, rng) -> ActOutcome:
        return sample_aim(self.policy_logits(z_e, labels), self.cfg.L, self.cfg.K, rng)

    def central_value(self, z_e, labels, aim_b, detach_inputs: bool = False) -> dc.Tensor:
        z_e, labels, aim_b = _batch(z_e, labels, aim_b)
        state = self.state(z_e, labels)
        if detach_inputs:
            state = dc.stop_gradient(state)
        return self.central_value_net(dc.concat([state, self.embed(aim_b)]))[:, 0]

    def predict_aim_value(self, aim, z_e, labels) -> dc.Tensor:
        z_e, labels, aim = _batch(z_e, labels, aim)
        return self.aim_value_net(dc.concat([self.embed(aim), self.state(z_e, labels)]))[:, 0]

    def predict_opponent_reward(self, aim, z_e, labels) -> dc.Tensor:
        z_e, labels, aim = _batch(z_e, labels, aim)
        return self.opponent_reward_net(dc.concat([self.embed(aim), self.state(z_e, labels)]))[:, 0]

    def predict_opponent_aim(self, own_aim, labels, z_e=None) -> dc.Tensor:
        own_aim = np.atleast_2d(own_aim)
        labels = np.atleast_1d(labels)
        out = self.opponent_aim_net(dc.concat([self.embed(own_aim), self.labels(labels)]))
        return dc.reshape(out, (len(own_aim), self.cfg.L, self.cfg.K))

    def predict_intent(self, aim, labels, z_e=None) -> dc.Tensor:
        aim = np.atleast_2d(aim)
        labels = np.atleast_1d(labels)
        return self.intent_net(dc.concat([self.embed(aim), self.labels(labels)]))


class AgentB(_Agent):
    """Answers Agent A's message, also seeing the label and the image latent."""

    prefix = "agent_b"

    def __init__(self, codebook, cfg: AgentConfig, rng):
        super().__init__(codebook, cfg, rng)
        state = cfg.label_dim + cfg.latent_dim
        self.policy_input_dim = cfg.aim_dim + state
        self.policy = self._head("policy", self.policy_input_dim, cfg.L * cfg.K, rng)
        self.aim_value_net = self._head("aim_value", cfg.aim_dim + state, 1, rng)
        self.opponent_reward_net = self._head("opponent_reward", cfg.aim_dim + state, 1, rng)
        self.opponent_aim_net = self._head("opponent_aim", cfg.aim_dim + state, cfg.L * cfg.K, rng)
        self.intent_net = self._head("intent_decoder", cfg.aim_dim + state, 2, rng)

    def state(self, z_e, labels) -> dc.Tensor:
        return dc.concat([self.labels(labels), z_e])

    def _with_message(self, aim_a, z_e, labels) -> dc.Tensor:
        z_e, labels, aim_a = _batch(z_e, labels, aim_a)
        return dc.concat([self.embed(aim_a), self.state(z_e, labels)])

    def policy_logits(self, aim_a, labels, z_e) -> dc.Tensor:
        return self.policy(self._with_message(aim_a, z_e, labels))

    def act(self, aim_a, labels, z_e, rng) -> ActOutcome:
        return sample_aim(self.policy_logits(aim_a, labels, z_e), self.cfg.L, self.cfg.K, rng)

    def predict_aim_value(self, aim_a, z_e, labels) -> dc.Tensor:
        return self.aim_value_net(self._with_message(aim_a, z_e, labels))[:, 0]

    def predict_opponent_reward(self, aim_a, z_e, labels) -> dc.Tensor:
        return self.opponent_reward_net(self._with_message(aim_a, z_e, labels))[:, 0]

    def predict_opponent_aim(self, aim_a, labels, z_e) -> dc.Tensor:
        out = self.opponent_aim_net(self._with_message(aim_a, z_e, labels))
        return dc.reshape(out, (out.shape[0], self.cfg.L, self.cfg.K))

    def predict_intent(self, aim_a, labels, z_e) -> dc.Tensor:
        return self.intent_net(self._with_message(aim_a, z_e, labels))


def assert_shared_codebook(a: _Agent, b: _Agent) -> None:
    if a.codebook.tobytes() != b.codebook.tobytes():
        raise ConfigError("agents must read the same codebook")


def make_agents(codebook: np.ndarray, cfg: AgentConfig, rng: np.random.Generator) -> tuple[AgentA, AgentB]:
    codebook = np.array(codebook, dtype=np.float64)
    codebook.setflags(write=False)
    a, b = AgentA(codebook, cfg, rng), AgentB(codebook, cfg, rng)
    assert_shared_codebook(a, b)
    return a, b


def agents_checkpoint(a: _Agent, b: _Agent, beta: float = 0.0) -> Checkpoint:
    cfg = a.cfg
    arrays = {"meta.codebook": a.codebook}
    for agent in (a, b):
        arrays.update({k: p.value for k, p in agent.named_parameters().items()})
    return Checkpoint(cfg.K, cfg.D, cfg.L, beta, arrays)


def load_agents_into(ckpt: Checkpoint, *agents: _Agent) -> None:
    for agent in agents:
        for name, p in agent.named_parameters().items():
            if name not in ckpt.arrays or ckpt.arrays[name].shape != p.shape:
                raise ConfigError(f"checkpoint missing or misshapen array {name!r}")
            p.value[...] = ckpt.arrays[name]
