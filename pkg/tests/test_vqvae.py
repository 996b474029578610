import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aimlab import diffcore as dc
from aimlab.checkpoint import Checkpoint
from aimlab.env import synthetic_glyphs
from aimlab.errors import ConfigError
from aimlab.vqvae import (
    FAIL, PASS, WARN, VQConfig, VQVAE, pretrain, quantize, standards_check, vq_losses,
)


def brute_force(z, cb):
    best, best_d = 0, np.inf
    for k, row in enumerate(cb):
        d = float(((z - row) ** 2).sum())
        if d < best_d:
            best, best_d = k, d
    return best


@given(st.integers(0, 2**32 - 1), st.integers(1, 16), st.integers(1, 6))
@settings(max_examples=60, deadline=None)
def test_quantize_matches_brute_force(seed, K, D):
    rng = np.random.default_rng(seed)
    cb, z = rng.normal(size=(K, D)), rng.normal(size=D)
    idx, zq = quantize(z, cb)
    assert idx == brute_force(z, cb)
    assert zq.tobytes() == cb[idx].tobytes()


def test_quantize_tie_picks_lowest_index():
    cb = np.array([[1.0, 0.0], [-1.0, 0.0], [1.0, 0.0]])
    assert quantize(np.zeros(2), cb)[0] == 0
    assert quantize(np.array([1.0, 0.0]), cb)[0] == 0


def test_quantize_batched_shapes(rng):
    cb = rng.normal(size=(8, 3))
    idx, zq = quantize(rng.normal(size=(5, 2, 3)), cb)
    assert idx.shape == (5, 2) and zq.shape == (5, 2, 3)


def test_quantize_dim_mismatch():
    with pytest.raises(ConfigError):
        quantize(np.zeros(3), np.zeros((4, 2)))


def test_vq_losses_values():
    z_e = np.array([[[1.0, 0.0]]])
    z_q = np.array([[[0.0, 0.0]]])
    out = vq_losses(np.ones((1, 4)), np.zeros((1, 4)), z_e, z_q, 0.25)
    assert (out.recon, out.commit, out.codebook) == (1.0, 0.25, 1.0)
    assert out.total == 2.25


def test_vq_losses_bad_beta():
    with pytest.raises(ConfigError):
        vq_losses(np.ones(2), np.ones(2), np.ones((1, 2)), np.ones((1, 2)), 0.0)


def small_model(seed=0):
    return VQVAE(VQConfig(K=6, D=2, L=2, hidden=5), (1, 3, 3), np.random.default_rng(seed))


def test_codebook_init_range():
    m = VQVAE(VQConfig(), (1, 16, 16), np.random.default_rng(0))
    assert np.abs(m.codebook.value).max() <= 1 / 64


def test_straight_through_gradient_split(rng):
    m = small_model()
    x = rng.uniform(size=(4, 1, 3, 3))
    (recon, commit, codebook), _ = m.forward(x)
    dc.backward(recon)
    # reconstruction reaches the encoder through the straight-through path but never the codebook
    assert np.abs(m.codebook.grad).sum() == 0
    assert np.abs(m.encoder.layers[0][0].grad).sum() > 0
    for p in m.parameters():
        p.zero_grad()
    (recon, commit, codebook), _ = m.forward(x)
    dc.backward(codebook)
    assert np.abs(m.encoder.layers[0][0].grad).sum() == 0
    assert np.abs(m.codebook.grad).sum() > 0


def test_codebook_and_commit_grad_split(rng):
    m = small_model(3)
    x = rng.uniform(size=(3, 1, 3, 3))
    flat = x.reshape(3, -1)
    _, codes = m.forward(x)

    def raw_sq():
        z_e = dc.reshape(m.encoder(flat), (3, 2, 2))
        return dc.square(z_e - dc.embedding(m.codebook, codes)).sum(axis=-1).mean()

    def grads(loss):
        for p in m.parameters():
            p.zero_grad()
        dc.backward(loss)
        return {k: p.grad.copy() for k, p in m.named_parameters().items()}

    assert dc.grad_check(raw_sq, m.parameters()) < 1e-6
    (_, commit, codebook), _ = m.forward(x)
    split = grads(commit + codebook)
    full = grads(raw_sq())
    for name, g in split.items():
        # encoder sees beta times the raw gradient, the codebook sees all of it
        scale = 0.25 if name.startswith("encoder") else 1.0 if name == "codebook" else 0.0
        np.testing.assert_allclose(g, scale * full[name], atol=1e-12)


def test_encode_decode_shapes(rng):
    m = small_model()
    x = rng.uniform(size=(5, 1, 3, 3))
    assert m.encode(x).shape == (5, 4) and m.encode(x[0]).shape == (4,)
    assert m.encode_to_aim(x).shape == (5, 2)
    assert m.reconstruct(x).shape == x.shape
    with pytest.raises(ConfigError):
        m.decode(np.zeros((3, 2)))


def test_checkpoint_round_trip(rng):
    m = small_model(2)
    blob = m.to_checkpoint().to_bytes()
    m2 = VQVAE.from_checkpoint(Checkpoint.from_bytes(blob))
    x = rng.uniform(size=(2, 1, 3, 3))
    np.testing.assert_array_equal(m.reconstruct(x), m2.reconstruct(x))
    assert m2.to_checkpoint().to_bytes() == blob


def test_checkpoint_rejects_garbage():
    with pytest.raises(ConfigError):
        Checkpoint.from_bytes(b"nope")
    blob = small_model().to_checkpoint().to_bytes()
    with pytest.raises(ConfigError):
        Checkpoint.from_bytes(blob[:-9])


def test_frozen_codebook_is_read_only():
    cb = small_model().frozen_codebook()
    with pytest.raises(ValueError):
        cb[0, 0] = 1.0


def good_metrics(**over):
    m = dict(avg_unique_codes=50, recon_loss=0.1, commit_loss=0.1, codebook_loss=0.2,
             entropy_loss=0.7 * np.log(64) * 64, avg_loss=0.6)
    m.update(over)
    return m


def test_standards_all_pass():
    r = standards_check(good_metrics(), 64, 64)
    assert r.worst == PASS


@pytest.mark.parametrize("field,value,verdict", [
    ("recon_loss", 0.18, WARN), ("recon_loss", 0.3, FAIL), ("recon_loss", 0.05, WARN),
    ("commit_loss", 1.1, WARN), ("commit_loss", 2.0, FAIL),
    ("avg_unique_codes", 25, WARN), ("avg_unique_codes", 10, FAIL),
    ("avg_loss", 0.95, WARN), ("recon_loss", float("nan"), FAIL),
])
def test_standards_bands(field, value, verdict):
    r = standards_check(good_metrics(**{field: value}), 64, 64)
    key = "avg_unique_codes_ratio" if field == "avg_unique_codes" else field
    assert r.metrics[key].verdict == verdict


def test_standards_codebook_trend():
    r = standards_check(good_metrics(codebook_loss_history=[0.1, 0.2, 0.4]), 64, 64)
    assert r.metrics["codebook_loss"].verdict == WARN


def test_standards_missing_metric():
    m = good_metrics()
    del m["avg_loss"]
    with pytest.raises(ConfigError, match="avg_loss"):
        standards_check(m, 64, 64)


def test_pretrain_tiny_is_deterministic_and_improves():
    ds = synthetic_glyphs(60, seed=1)
    cfg = VQConfig(K=8, D=2, L=2, hidden=16, epochs=6, batch_size=16)
    a, b = pretrain(ds, cfg), pretrain(ds, cfg)
    assert a.model.to_checkpoint().to_bytes() == b.model.to_checkpoint().to_bytes()
    assert a.history[-1]["recon_loss"] < a.history[0]["recon_loss"]
    assert set(a.report.to_dict()["metrics"]) >= {"recon_loss", "commit_loss", "avg_unique_codes_ratio"}


def test_config_validation():
    with pytest.raises(ConfigError):
        VQConfig(K=1).validate()
    with pytest.raises(ConfigError):
        VQConfig(beta=0).validate()
