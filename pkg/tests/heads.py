"""Per-head scalar losses shared by the agent tests and the acceptance suite."""

import numpy as np

from aimlab.agents import AgentConfig, make_agents

SMALL = AgentConfig(K=64, D=8, L=2, label_dim=4, hidden=6, n_labels=10)


def build(seed: int, cfg: AgentConfig = SMALL, batch: int = 3):
    rng = np.random.default_rng(seed)
    codebook = rng.uniform(-1, 1, (cfg.K, cfg.D))
    a, b = make_agents(codebook, cfg, rng)
    z_e = rng.normal(size=(batch, cfg.latent_dim))
    labels = rng.integers(0, cfg.n_labels, size=batch)
    aim_a = rng.integers(0, cfg.K, size=(batch, cfg.L))
    aim_b = rng.integers(0, cfg.K, size=(batch, cfg.L))
    return rng, a, b, z_e, labels, aim_a, aim_b


def head_losses(seed: int):
    """name -> (loss_fn, params): a random projection of each head's output."""
    rng, a, b, z_e, labels, aim_a, aim_b = build(seed)
    n, L, K = len(labels), SMALL.L, SMALL.K
    w = {k: rng.normal(size=s) for k, s in [("lk", (n, L * K)), ("lk3", (n, L, K)), ("1", (n,)), ("2", (n, 2))]}
    cases = {
        "A.policy": (lambda: (a.policy_logits(z_e, labels) * w["lk"]).sum(), a, "policy"),
        "A.central_value": (lambda: (a.central_value(z_e, labels, aim_b) * w["1"]).sum(), a, "central_value"),
        "A.aim_value": (lambda: (a.predict_aim_value(aim_a, z_e, labels) * w["1"]).sum(), a, "aim_value"),
        "A.opponent_reward": (lambda: (a.predict_opponent_reward(aim_a, z_e, labels) * w["1"]).sum(), a, "opponent_reward"),
        "A.opponent_aim": (lambda: (a.predict_opponent_aim(aim_a, labels) * w["lk3"]).sum(), a, "opponent_aim"),
        "A.intent": (lambda: (a.predict_intent(aim_a, labels) * w["2"]).sum(), a, "intent"),
        "B.policy": (lambda: (b.policy_logits(aim_a, labels, z_e) * w["lk"]).sum(), b, "policy"),
        "B.aim_value": (lambda: (b.predict_aim_value(aim_a, z_e, labels) * w["1"]).sum(), b, "aim_value"),
        "B.opponent_reward": (lambda: (b.predict_opponent_reward(aim_a, z_e, labels) * w["1"]).sum(), b, "opponent_reward"),
        "B.opponent_aim": (lambda: (b.predict_opponent_aim(aim_a, labels, z_e) * w["lk3"]).sum(), b, "opponent_aim"),
        "B.intent": (lambda: (b.predict_intent(aim_a, labels, z_e) * w["2"]).sum(), b, "intent_decoder"),
    }
    return {name: (fn, agent.parameters([head])) for name, (fn, agent, head) in cases.items()}
