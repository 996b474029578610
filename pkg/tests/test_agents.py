import numpy as np
import pytest

from aimlab import diffcore as dc
from aimlab.agents import AgentConfig, agents_checkpoint, embed_aim, load_agents_into, make_agents, sample_aim
from aimlab.checkpoint import Checkpoint
from aimlab.errors import ConfigError

from heads import SMALL, build, head_losses


def test_embed_aim_concatenates_rows():
    cb = np.arange(12.0).reshape(4, 3)
    np.testing.assert_array_equal(embed_aim([2, 0], cb), [6, 7, 8, 0, 1, 2])
    assert embed_aim(np.zeros((5, 2), int), cb).shape == (5, 6)
    with pytest.raises(ConfigError):
        embed_aim([4, 0], cb)


def test_shapes():
    rng, a, b, z_e, labels, aim_a, aim_b = build(0)
    out = a.act(z_e, labels, rng)
    assert out.aim.shape == (3, 2) and out.log_prob.shape == (3,) and out.logits.shape == (3, 2, 64)
    out_b = b.act(out.aim, labels, z_e, rng)
    assert out_b.aim.shape == (3, 2)
    assert a.predict_intent(aim_a, labels).shape == (3, 2)
    assert b.predict_opponent_aim(aim_a, labels, z_e).shape == (3, 2, 64)
    assert a.policy_input_dim == SMALL.latent_dim + SMALL.label_dim
    assert b.policy_input_dim == SMALL.aim_dim + SMALL.label_dim + SMALL.latent_dim


def test_sample_aim_log_prob_matches_logits(rng):
    logits = dc.Tensor(rng.normal(size=(4, 2 * 5)))
    out = sample_aim(logits, 2, 5, rng)
    logp = dc.log_softmax(dc.Tensor(logits.value.reshape(8, 5))).value.reshape(4, 2, 5)
    want = np.take_along_axis(logp, out.aim[..., None], -1)[..., 0].sum(1)
    np.testing.assert_allclose(out.log_prob.value, want)


@pytest.mark.parametrize("name", sorted(head_losses(0)))
def test_head_grad_check(name):
    fn, params = head_losses(11)[name]
    assert dc.grad_check(fn, params) < 1e-5


def test_shared_codebook_is_frozen_and_shared():
    rng, a, b, *_ = build(1)
    assert a.codebook is b.codebook
    with pytest.raises(ValueError):
        a.codebook[0, 0] = 0.0


def test_codebook_shape_checked():
    with pytest.raises(ConfigError):
        make_agents(np.zeros((3, 8)), SMALL, np.random.default_rng(0))


def test_central_value_detached_inputs_block_label_grad():
    rng, a, b, z_e, labels, aim_a, aim_b = build(2)
    dc.backward(a.central_value(z_e, labels, aim_b, detach_inputs=True).sum())
    assert np.abs(a.label_embedding.grad).sum() == 0
    assert np.abs(a.central_value_net.layers[0][0].grad).sum() > 0


def test_checkpoint_round_trip():
    _, a, b, z_e, labels, aim_a, _ = build(3)
    blob = agents_checkpoint(a, b, 0.25).to_bytes()
    ckpt = Checkpoint.from_bytes(blob)
    a2, b2 = make_agents(ckpt.arrays["meta.codebook"], SMALL, np.random.default_rng(9))
    load_agents_into(ckpt, a2, b2)
    np.testing.assert_array_equal(a.policy_logits(z_e, labels).value, a2.policy_logits(z_e, labels).value)
    np.testing.assert_array_equal(b.policy_logits(aim_a, labels, z_e).value, b2.policy_logits(aim_a, labels, z_e).value)


def test_load_rejects_wrong_shapes():
    _, a, b, *_ = build(3)
    blob = agents_checkpoint(a, b).to_bytes()
    other_cfg = AgentConfig(K=64, D=8, L=2, label_dim=4, hidden=7)
    _, a2, b2, *_ = build(0, other_cfg)
    with pytest.raises(ConfigError):
        load_agents_into(Checkpoint.from_bytes(blob), a2)
