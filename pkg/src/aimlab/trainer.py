"""REINFORCE with reflection losses for the AIM agent pair, and the message-as-action baseline."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from aimlab import diffcore as dc
from aimlab.agents import AgentA, AgentB, AgentConfig, make_agents, sample_aim
from aimlab.env import Action, Dataset, actions_of, payoff_arrays
from aimlab.errors import ConfigError, TrainingError
from aimlab.runlog import EpisodeRecord, RunLog, RunLogWriter

log = logging.getLogger(__name__)

STRATEGIES = ("none", "aim_context_value", "predictive_bias", "both")
CONTEXT_SOURCES = ("label_parity", "iteration_index")
TERMS = ("policy", "value", "entropy", "intent", "predictive", "opponent_aim", "total")


@dataclass
class TrainConfig:
    episodes: int = 2000
    seed: int = 0
    lr: float = 1e-2
    optimizer: str = "adam"
    lambda_entropy: float = 0.01
    lambda_reflect: float = 0.1
    strategy: str = "both"
    K: int = 64
    D: int = 8
    L: int = 2
    batch_size: int = 16
    context_source: str = "label_parity"
    b_value_head: bool = True
    opponent_aim_loss: bool = False
    label_dim: int = 8
    hidden: int = 64

    def validate(self) -> None:
        if self.episodes < 1:
            raise ConfigError("train.episodes must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("train.batch_size must be >= 1")
        if self.lambda_entropy < 0 or self.lambda_reflect < 0:
            raise ConfigError("train lambdas must be >= 0")
        if not self.lr > 0:
            raise ConfigError("train.lr must be > 0")
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"train.strategy must be one of {STRATEGIES}")
        if self.context_source not in CONTEXT_SOURCES:
            raise ConfigError(f"train.context_source must be one of {CONTEXT_SOURCES}")

    def agent_config(self, n_labels: int = 10) -> AgentConfig:
        return AgentConfig(self.K, self.D, self.L, self.label_dim, self.hidden, n_labels)


# ------------------------------------------------------------------ loss terms


def policy_loss(log_prob, joint_reward):
    """REINFORCE surrogate ``-log_prob * R``; the reward is a constant."""
    if isinstance(log_prob, dc.Tensor):
        return log_prob * (-np.asarray(joint_reward, dtype=float))
    return -float(log_prob) * float(joint_reward)


@dataclass
class Batch:
    """One batch of played games plus the differentiable pieces needed for the losses."""

    episodes: np.ndarray
    labels: np.ndarray
    parity: np.ndarray
    z_e: np.ndarray
    out_a: object
    out_b: object
    r_a: np.ndarray
    r_b: np.ndarray

    @property
    def joint(self) -> np.ndarray:
        return self.r_a + self.r_b


def _zeros(n: int) -> dc.Tensor:
    return dc.Tensor(np.zeros(n))


def _sq(pred: dc.Tensor, target: np.ndarray) -> dc.Tensor:
    return dc.square(pred - target)


def reflection_losses(agent_a: AgentA, agent_b: AgentB, batch: Batch, strategy: str, b_value_head: bool = True) -> dict[str, dc.Tensor]:
    """Per-episode squared errors for the value and opponent-reward heads.

    Value heads regress the joint reward from the sent message (A) or the
    received one (B). Opponent-reward heads regress the other agent's
    individual reward. Terms outside ``strategy`` are exact zeros.
    """
    if strategy not in STRATEGIES:
        raise ConfigError(f"unknown strategy {strategy!r}")
    n = len(batch.labels)
    aim_a = batch.out_a.aim
    out = {k: _zeros(n) for k in ("a_value", "b_value", "a_predictive", "b_predictive")}
    if strategy in ("aim_context_value", "both"):
        out["a_value"] = _sq(agent_a.predict_aim_value(aim_a, batch.z_e, batch.labels), batch.joint)
        if b_value_head:
            out["b_value"] = _sq(agent_b.predict_aim_value(aim_a, batch.z_e, batch.labels), batch.joint)
    if strategy in ("predictive_bias", "both"):
        out["a_predictive"] = _sq(agent_a.predict_opponent_reward(aim_a, batch.z_e, batch.labels), batch.r_b)
        out["b_predictive"] = _sq(agent_b.predict_opponent_reward(aim_a, batch.z_e, batch.labels), batch.r_a)
    return out


def total_losses(terms_a: dict[str, dc.Tensor], terms_b: dict[str, dc.Tensor], cfg: TrainConfig):
    """Per-episode totals for both agents from their named terms.

    total = policy + value + lambda_entropy * entropy
            + lambda_reflect * (intent + predictive [+ opponent_aim])
    where the ``entropy`` term is the negated policy entropy.
    """
    out = []
    for t in (terms_a, terms_b):
        total = t["policy"] + t["value"]
        if cfg.lambda_entropy:
            total = total + cfg.lambda_entropy * t["entropy"]
        if cfg.lambda_reflect:
            aux = t["intent"] + t["predictive"]
            if cfg.opponent_aim_loss:
                aux = aux + t["opponent_aim"]
            total = total + cfg.lambda_reflect * aux
        out.append(total)
    return tuple(out)


def loss_terms(agent_a: AgentA, agent_b: AgentB, batch: Batch, cfg: TrainConfig):
    """All named per-episode loss terms for A and B plus the central-value monitor loss."""
    n = len(batch.labels)
    joint = batch.joint
    aim_a, aim_b = batch.out_a.aim, batch.out_b.aim
    refl = reflection_losses(agent_a, agent_b, batch, cfg.strategy, cfg.b_value_head)
    intent_target = (~actions_of(aim_a, cfg.K)).astype(np.int64)  # 0 = C, 1 = D
    ta = {
        "policy": policy_loss(batch.out_a.log_prob, joint),
        "value": refl["a_value"],
        "entropy": -batch.out_a.entropy,
        "predictive": refl["a_predictive"],
        "intent": _zeros(n),
        "opponent_aim": _zeros(n),
    }
    tb = {
        "policy": policy_loss(batch.out_b.log_prob, joint),
        "value": refl["b_value"],
        "entropy": -batch.out_b.entropy,
        "predictive": refl["b_predictive"],
        "intent": _zeros(n),
        "opponent_aim": _zeros(n),
    }
    if cfg.lambda_reflect:
        ta["intent"] = dc.cross_entropy_loss(agent_a.predict_intent(aim_a, batch.labels), intent_target, reduction="none")
        tb["intent"] = dc.cross_entropy_loss(agent_b.predict_intent(aim_a, batch.labels, batch.z_e), intent_target, reduction="none")
        if cfg.opponent_aim_loss:
            ta["opponent_aim"] = _aim_ce(agent_a.predict_opponent_aim(aim_a, batch.labels), aim_b)
            tb["opponent_aim"] = _aim_ce(agent_b.predict_opponent_aim(aim_a, batch.labels, batch.z_e), aim_a)
    ta["total"], tb["total"] = total_losses(ta, tb, cfg)
    # the central critic is a monitor: its inputs are detached so it never shapes the policy
    critic = _sq(agent_a.central_value(batch.z_e, batch.labels, aim_b, detach_inputs=True), joint)
    return ta, tb, critic


def _aim_ce(logits: dc.Tensor, target: np.ndarray) -> dc.Tensor:
    """Per-episode cross-entropy summed over the L positions."""
    b, L, K = logits.shape
    ce = dc.cross_entropy_loss(dc.reshape(logits, (b * L, K)), np.asarray(target).reshape(-1), reduction="none")
    return dc.reshape(ce, (b, L)).sum(axis=1)


# ---------------------------------------------------------------------- game


def _parity(cfg: TrainConfig, labels: np.ndarray, episodes: np.ndarray) -> np.ndarray:
    if cfg.context_source == "label_parity":
        return labels % 2
    return episodes % 2


def play_batch(agent_a: AgentA, agent_b: AgentB, z_e: np.ndarray, labels: np.ndarray, episodes: np.ndarray,
               cfg: TrainConfig, rng: np.random.Generator) -> Batch:
    out_a = agent_a.act(z_e, labels, rng)
    out_b = agent_b.act(out_a.aim, labels, z_e, rng)
    parity = _parity(cfg, labels, episodes)
    r_a, r_b = payoff_arrays(actions_of(out_a.aim, cfg.K), actions_of(out_b.aim, cfg.K), parity)
    return Batch(episodes, labels, parity, z_e, out_a, out_b, r_a, r_b)


def run_episode(agent_a: AgentA, agent_b: AgentB, dataset: Dataset, encode: Callable, rng: np.random.Generator,
                cfg: TrainConfig, episode: int = 0) -> EpisodeRecord:
    """Play one game without learning: sample a signal, exchange AIMs, score."""
    i = int(rng.integers(len(dataset)))
    labels = dataset.labels[i : i + 1]
    z_e = np.atleast_2d(encode(dataset.images[i]))
    batch = play_batch(agent_a, agent_b, z_e, labels, np.array([episode]), cfg, rng)
    return _records(batch, cfg, None, None)[0]


def _action(coop: bool) -> str:
    return Action.C.value if coop else Action.D.value


def _records(batch: Batch, cfg: TrainConfig, ta, tb) -> list[EpisodeRecord]:
    coop_a, coop_b = actions_of(batch.out_a.aim, cfg.K), actions_of(batch.out_b.aim, cfg.K)
    lp_a, lp_b = batch.out_a.log_prob.value, batch.out_b.log_prob.value
    recs = []
    for i in range(len(batch.labels)):
        recs.append(EpisodeRecord(
            episode=int(batch.episodes[i]),
            label=int(batch.labels[i]),
            context_bit=int(batch.parity[i]),
            aim_a=tuple(int(t) for t in batch.out_a.aim[i]),
            aim_b=tuple(int(t) for t in batch.out_b.aim[i]),
            action_a=_action(coop_a[i]),
            action_b=_action(coop_b[i]),
            r_a=float(batch.r_a[i]),
            r_b=float(batch.r_b[i]),
            joint=float(batch.r_a[i] + batch.r_b[i]),
            log_prob_a=float(lp_a[i]),
            log_prob_b=float(lp_b[i]),
            losses_a={k: float(v.value[i]) for k, v in ta.items()} if ta else {},
            losses_b={k: float(v.value[i]) for k, v in tb.items()} if tb else {},
        ))
    return recs


# --------------------------------------------------------------------- train


def _loop(cfg: TrainConfig, dataset: Dataset, step_fn, kind: str, writer_path=None, on_window=None) -> RunLog:
    """Shared episode loop: sample a batch of signals, let ``step_fn`` play and update."""
    cfg.validate()
    if len(dataset) == 0:
        raise ConfigError("training dataset is empty")
    rng = np.random.default_rng([cfg.seed, 1])
    runlog = RunLog(asdict(cfg), kind)
    writer = RunLogWriter(writer_path, runlog.config, kind) if writer_path else None
    try:
        for start in range(0, cfg.episodes, cfg.batch_size):
            n = min(cfg.batch_size, cfg.episodes - start)
            idx = rng.integers(len(dataset), size=n)
            episodes = np.arange(start, start + n)
            recs = step_fn(idx, episodes, rng)
            runlog.records.extend(recs)
            if writer:
                for r in recs:
                    writer.append(r)
            if on_window is not None:
                on_window(runlog)
        if writer:
            from aimlab.analysis import run_summary

            runlog.summary = run_summary(runlog)
            writer.close(runlog.summary)
    finally:
        if writer:
            writer.close()
    return runlog


def _check_finite(value: float, episode: int) -> None:
    if not np.isfinite(value):
        raise TrainingError("non-finite training loss", episode)


@dataclass
class AimTrainer:
    """Holds the agent pair and optimizer; ``train`` drives it."""

    cfg: TrainConfig
    codebook: np.ndarray
    n_labels: int = 10
    agent_a: AgentA = field(init=False)
    agent_b: AgentB = field(init=False)

    def __post_init__(self):
        self.cfg.validate()
        rng = np.random.default_rng([self.cfg.seed, 0])
        self.agent_a, self.agent_b = make_agents(self.codebook, self.cfg.agent_config(self.n_labels), rng)
        self.optimizer = dc.make_optimizer(
            self.cfg.optimizer, self.agent_a.parameters() + self.agent_b.parameters(), self.cfg.lr
        )

    def step(self, z_e: np.ndarray, labels: np.ndarray, episodes: np.ndarray, rng) -> list[EpisodeRecord]:
        batch = play_batch(self.agent_a, self.agent_b, z_e, labels, episodes, self.cfg, rng)
        ta, tb, critic = loss_terms(self.agent_a, self.agent_b, batch, self.cfg)
        objective = ta["total"].mean() + tb["total"].mean() + critic.mean()
        _check_finite(objective.item(), int(episodes[0]))
        dc.backward(objective)
        self.optimizer.step()
        ta["central_value"] = critic
        return _records(batch, self.cfg, ta, tb)


def train(cfg: TrainConfig, dataset: Dataset, encoder: Callable, codebook: np.ndarray,
          log_path=None, trainer: AimTrainer | None = None) -> RunLog:
    """Run ``cfg.episodes`` games of the AIM pair, one optimizer step per batch.

    ``encoder`` is the frozen VQ-VAE encoder (images -> latents); latents are
    computed once for the whole dataset.
    """
    cfg.validate()
    if codebook.shape != (cfg.K, cfg.D):
        raise ConfigError(f"codebook {codebook.shape} does not match K={cfg.K}, D={cfg.D}")
    trainer = trainer or AimTrainer(cfg, codebook, int(dataset.labels.max()) + 1)
    latents = np.asarray(encoder(dataset.images))
    if latents.shape[1] != cfg.L * cfg.D:
        raise ConfigError(f"encoder emits {latents.shape[1]} values, expected L*D = {cfg.L * cfg.D}")

    def step(idx, episodes, rng):
        return trainer.step(latents[idx], dataset.labels[idx], episodes, rng)

    runlog = _loop(cfg, dataset, step, "aim", log_path)
    runlog.trainer = trainer
    return runlog


# ------------------------------------------------------------------ baseline


class BaselineSpeaker:
    """Plain policy head over raw pixels and label: emits L tokens from an alphabet of K."""

    prefix = "baseline_a"

    def __init__(self, n_pixels: int, cfg: TrainConfig, n_labels: int, rng):
        self.cfg = cfg
        self.label_embedding = dc.Parameter(rng.uniform(-1, 1, (n_labels, cfg.label_dim)), f"{self.prefix}.label_embedding")
        h = cfg.hidden
        self.policy = dc.MLP([n_pixels + cfg.label_dim, h, h, cfg.L * cfg.K], rng, f"{self.prefix}.policy")

    def parameters(self):
        return [self.label_embedding] + self.policy.parameters()

    def policy_logits(self, pixels, labels) -> dc.Tensor:
        return self.policy(dc.concat([pixels, dc.embedding(self.label_embedding, labels)]))

    def act(self, pixels, labels, rng):
        return sample_aim(self.policy_logits(pixels, labels), self.cfg.L, self.cfg.K, rng)


class BaselineListener(BaselineSpeaker):
    """Reads the speaker's raw message as one-hot tokens, plus label and pixels."""

    prefix = "baseline_b"

    def __init__(self, n_pixels: int, cfg: TrainConfig, n_labels: int, rng):
        self.cfg = cfg
        self.label_embedding = dc.Parameter(rng.uniform(-1, 1, (n_labels, cfg.label_dim)), f"{self.prefix}.label_embedding")
        h = cfg.hidden
        self.message_dim = cfg.L * cfg.K
        self.policy = dc.MLP([self.message_dim + cfg.label_dim + n_pixels, h, h, cfg.L * cfg.K], rng, f"{self.prefix}.policy")

    def one_hot(self, message: np.ndarray) -> np.ndarray:
        message = np.atleast_2d(message)
        out = np.zeros((len(message), self.cfg.L, self.cfg.K))
        np.put_along_axis(out, message[..., None], 1.0, axis=-1)
        return out.reshape(len(message), -1)

    def policy_logits(self, message, labels, pixels) -> dc.Tensor:
        x = dc.concat([self.one_hot(message), dc.embedding(self.label_embedding, labels), pixels])
        return self.policy(x)

    def act(self, message, labels, pixels, rng):
        return sample_aim(self.policy_logits(message, labels, pixels), self.cfg.L, self.cfg.K, rng)

    def ignore_message(self) -> None:
        """Zero the first-layer weights reading the message."""
        self.policy.layers[0][0].value[:, : self.message_dim] = 0.0


@dataclass
class BaselineTrainer:
    cfg: TrainConfig
    n_pixels: int
    n_labels: int = 10

    def __post_init__(self):
        self.cfg.validate()
        rng = np.random.default_rng([self.cfg.seed, 0])
        self.speaker = BaselineSpeaker(self.n_pixels, self.cfg, self.n_labels, rng)
        self.listener = BaselineListener(self.n_pixels, self.cfg, self.n_labels, rng)
        self.optimizer = dc.make_optimizer(
            self.cfg.optimizer, self.speaker.parameters() + self.listener.parameters(), self.cfg.lr
        )
        self.frozen_message_weights = False

    def step(self, pixels, labels, episodes, rng, learn: bool = True) -> list[EpisodeRecord]:
        cfg = self.cfg
        out_a = self.speaker.act(pixels, labels, rng)
        out_b = self.listener.act(out_a.aim, labels, pixels, rng)
        parity = _parity(cfg, labels, episodes)
        r_a, r_b = payoff_arrays(actions_of(out_a.aim, cfg.K), actions_of(out_b.aim, cfg.K), parity)
        batch = Batch(episodes, labels, parity, pixels, out_a, out_b, r_a, r_b)
        n = len(labels)
        terms = []
        for out in (out_a, out_b):
            t = {k: _zeros(n) for k in ("value", "intent", "predictive", "opponent_aim")}
            t["policy"] = policy_loss(out.log_prob, batch.joint)
            t["entropy"] = -out.entropy
            t["total"] = t["policy"] + cfg.lambda_entropy * t["entropy"] if cfg.lambda_entropy else t["policy"]
            terms.append(t)
        ta, tb = terms
        if learn:
            objective = ta["total"].mean() + tb["total"].mean()
            _check_finite(objective.item(), int(episodes[0]))
            dc.backward(objective)
            if self.frozen_message_weights:
                self.listener.policy.layers[0][0].grad[:, : self.listener.message_dim] = 0.0
            self.optimizer.step()
        return _records(batch, cfg, ta, tb)


def train_baseline(cfg: TrainConfig, dataset: Dataset, log_path=None, trainer: BaselineTrainer | None = None) -> RunLog:
    """Same game and REINFORCE loop with raw messages: no codebook, no reflection heads."""
    cfg.validate()
    pixels = dataset.images.reshape(len(dataset), -1)
    trainer = trainer or BaselineTrainer(cfg, pixels.shape[1], int(dataset.labels.max()) + 1)

    def step(idx, episodes, rng):
        return trainer.step(pixels[idx], dataset.labels[idx], episodes, rng)

    runlog = _loop(cfg, dataset, step, "baseline", log_path)
    runlog.trainer = trainer
    return runlog
