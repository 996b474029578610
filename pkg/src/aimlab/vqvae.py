"""The shared symbol system: encoder, nearest-code quantizer, decoder, pretraining."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from aimlab import diffcore as dc
from aimlab.checkpoint import Checkpoint
from aimlab.env import Dataset
from aimlab.errors import ConfigError, TrainingError

log = logging.getLogger(__name__)


@dataclass
class VQConfig:
    K: int = 64
    D: int = 8
    L: int = 2
    beta: float = 0.25
    hidden: int = 128
    epochs: int = 30
    lr: float = 2e-3
    batch_size: int = 32
    seed: int = 0
    optimizer: str = "adam"
    # re-seed codes unused for a whole epoch onto random encoder outputs
    restart_dead_codes: bool = False

    def validate(self) -> None:
        for name in ("K", "D", "L", "hidden", "epochs", "batch_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"vqvae.{name} must be >= 1")
        if self.K < 2:
            raise ConfigError("vqvae.K must be >= 2")
        if not self.beta > 0:
            raise ConfigError("vqvae.beta must be > 0")
        if not self.lr > 0:
            raise ConfigError("vqvae.lr must be > 0")


@dataclass(frozen=True)
class VqLosses:
    recon: float
    commit: float
    codebook: float

    @property
    def total(self) -> float:
        return self.recon + self.commit + self.codebook


def quantize(z_e: np.ndarray, codebook: np.ndarray) -> tuple[np.ndarray | int, np.ndarray]:
    """Nearest codebook row by squared Euclidean distance, lowest index on ties.

    ``z_e`` is (D,) or (..., D). Returns ``(index, z_q)`` where ``z_q`` is the
    selected codebook row itself (bit-identical).
    """
    z_e = np.asarray(z_e, dtype=np.float64)
    codebook = np.asarray(codebook, dtype=np.float64)
    if codebook.ndim != 2 or len(codebook) == 0:
        raise ConfigError("codebook must be a nonempty (K, D) matrix")
    if z_e.shape[-1] != codebook.shape[1]:
        raise ConfigError(f"latent dim {z_e.shape[-1]} != codebook dim {codebook.shape[1]}")
    dist = ((z_e[..., None, :] - codebook) ** 2).sum(axis=-1)
    idx = dist.argmin(axis=-1)
    if z_e.ndim == 1:
        return int(idx), codebook[int(idx)]
    return idx, codebook[idx]


class VQVAE:
    """MLP encoder emitting ``L*D`` values split into ``L`` slots, one codebook, MLP decoder."""

    def __init__(self, cfg: VQConfig, image_shape=(1, 16, 16), rng: np.random.Generator | None = None):
        cfg.validate()
        self.cfg = cfg
        self.image_shape = tuple(int(s) for s in image_shape)
        rng = rng if rng is not None else np.random.default_rng(cfg.seed)
        n_pix = int(np.prod(self.image_shape))
        self.encoder = dc.MLP([n_pix, cfg.hidden, cfg.L * cfg.D], rng, "encoder")
        self.codebook = dc.Parameter(rng.uniform(-1.0 / cfg.K, 1.0 / cfg.K, (cfg.K, cfg.D)), "codebook")
        self.decoder = dc.MLP([cfg.L * cfg.D, cfg.hidden, n_pix], rng, "decoder")

    K = property(lambda self: self.cfg.K)
    D = property(lambda self: self.cfg.D)
    L = property(lambda self: self.cfg.L)

    @property
    def latent_dim(self) -> int:
        return self.cfg.L * self.cfg.D

    def named_parameters(self) -> dict[str, dc.Parameter]:
        out = {p.name: p for p in self.encoder.parameters()}
        out["codebook"] = self.codebook
        out.update({p.name: p for p in self.decoder.parameters()})
        return out

    def parameters(self) -> list[dc.Parameter]:
        return list(self.named_parameters().values())

    # -------------------------------------------------------------- numeric API

    def _flatten(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        single = x.shape == self.image_shape
        if not single and x.shape[1:] != self.image_shape:
            raise ConfigError(f"image shape {x.shape} does not match {self.image_shape}")
        return x.reshape(1 if single else len(x), -1), single

    def encode(self, x) -> np.ndarray:
        """Continuous latent of length ``L*D`` per image."""
        flat, single = self._flatten(x)
        z = self.encoder(flat).value
        return z[0] if single else z

    def encode_to_aim(self, x) -> np.ndarray:
        z = self.encode(x)
        slots = z.reshape(*z.shape[:-1], self.L, self.D)
        idx, _ = quantize(slots, self.codebook.value)
        return np.asarray(idx, dtype=np.int64)

    def decode(self, z_q) -> np.ndarray:
        """Reconstruct images from ``L`` quantized vectors (``(L, D)`` or ``(N, L, D)``)."""
        z_q = np.asarray(z_q, dtype=np.float64)
        single = z_q.ndim == 2
        if z_q.shape[-2:] != (self.L, self.D):
            raise ConfigError(f"decode expects (..., {self.L}, {self.D}), got {z_q.shape}")
        flat = z_q.reshape(1 if single else len(z_q), -1)
        out = dc.sigmoid(self.decoder(flat)).value.reshape(-1, *self.image_shape)
        return out[0] if single else out

    def reconstruct(self, x) -> np.ndarray:
        z = self.encode(x)
        slots = z.reshape(*z.shape[:-1], self.L, self.D)
        _, z_q = quantize(slots, self.codebook.value)
        return self.decode(z_q)

    # ----------------------------------------------------------- training graph

    def forward(self, x_batch: np.ndarray):
        """Differentiable pass. Returns ``(losses, codes)`` with Tensor losses."""
        flat, _ = self._flatten(x_batch)
        n = len(flat)
        z_e = dc.reshape(self.encoder(flat), (n, self.L, self.D))
        codes, _ = quantize(z_e.value, self.codebook.value)
        z_q = dc.embedding(self.codebook, codes)
        # straight-through: decoder sees z_q, gradient lands on z_e
        z_st = z_e + dc.stop_gradient(z_q - z_e)
        x_hat = dc.sigmoid(self.decoder(dc.reshape(z_st, (n, -1))))
        losses = vq_losses(flat, x_hat, z_e, z_q, self.cfg.beta)
        return losses, codes

    # --------------------------------------------------------------- checkpoint

    def to_checkpoint(self) -> Checkpoint:
        arrays = {"meta.image_shape": np.array(self.image_shape, dtype=float),
                  "meta.hidden": np.array([self.cfg.hidden], dtype=float)}
        arrays.update({k: p.value for k, p in self.named_parameters().items()})
        return Checkpoint(self.K, self.D, self.L, self.cfg.beta, arrays)

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint) -> "VQVAE":
        shape = tuple(int(s) for s in ckpt.arrays["meta.image_shape"])
        cfg = VQConfig(K=ckpt.K, D=ckpt.D, L=ckpt.L, beta=ckpt.beta, hidden=int(ckpt.arrays["meta.hidden"][0]))
        model = cls(cfg, shape, np.random.default_rng(0))
        for name, p in model.named_parameters().items():
            if name not in ckpt.arrays or ckpt.arrays[name].shape != p.shape:
                raise ConfigError(f"checkpoint missing or misshapen array {name!r}")
            p.value[...] = ckpt.arrays[name]
        return model

    def frozen_codebook(self) -> np.ndarray:
        cb = self.codebook.value.copy()
        cb.setflags(write=False)
        return cb


def vq_losses(x, x_hat, z_e, z_q, beta: float):
    """Reconstruction, commitment and codebook losses.

    ``z_e``/``z_q`` are (..., L, D). Commitment pulls ``z_e`` toward a frozen
    ``z_q``; the codebook term pulls ``z_q`` toward a frozen ``z_e``. Both are
    summed over D, averaged over slots and batch. With plain arrays returns a
    :class:`VqLosses` of floats; with Tensors returns Tensors.
    """
    if not beta > 0:
        raise ConfigError("beta must be > 0")
    if not isinstance(z_e, dc.Tensor):
        x, x_hat, z_e, z_q = (np.asarray(a, dtype=np.float64) for a in (x, x_hat, z_e, z_q))
        if x.shape != x_hat.shape or z_e.shape != z_q.shape:
            raise ConfigError("vq_losses: shape mismatch")
        sq = ((z_e - z_q) ** 2).sum(axis=-1).mean()
        return VqLosses(float(((x - x_hat) ** 2).mean()), float(beta * sq), float(sq))
    x_hat = dc.as_tensor(x_hat)
    if x_hat.shape != np.shape(x) or z_e.shape != z_q.shape:
        raise ConfigError("vq_losses: shape mismatch")
    recon = dc.mse_loss(x_hat, x)
    codebook = dc.square(dc.stop_gradient(z_e) - z_q).sum(axis=-1).mean()
    commit = beta * dc.square(z_e - dc.stop_gradient(z_q)).sum(axis=-1).mean()
    return recon, commit, codebook


# ------------------------------------------------------------------- standards


PASS, WARN, FAIL = "pass", "warn", "fail"
REQUIRED_METRICS = ("avg_unique_codes", "recon_loss", "commit_loss", "codebook_loss", "entropy_loss", "avg_loss")


@dataclass(frozen=True)
class StandardsBands:
    unique_pass: float = 0.60
    unique_warn: float = 0.30
    recon_pass: tuple[float, float] = (0.08, 0.15)
    recon_warn: float = 0.2
    commit_pass: float = 1.0
    commit_warn: float = 1.2
    codebook_pass: float = 0.8
    # entropy per token as a fraction of ln K
    entropy_pass: tuple[float, float] = (0.5, 1.0)
    entropy_warn: tuple[float, float] = (0.3, 1.0)
    avg_loss_pass: tuple[float, float] = (0.5, 0.8)
    # commit/codebook split: codebook = ||sg(z_e) - z_q||^2, commit = beta * ||z_e - sg(z_q)||^2
    codebook_definition: str = "stopgrad-split"


@dataclass(frozen=True)
class MetricVerdict:
    value: float
    band: str
    verdict: str


@dataclass
class StandardsReport:
    metrics: dict[str, MetricVerdict] = field(default_factory=dict)
    codebook_definition: str = "stopgrad-split"

    @property
    def worst(self) -> str:
        verdicts = {m.verdict for m in self.metrics.values()}
        return FAIL if FAIL in verdicts else WARN if WARN in verdicts else PASS

    def to_dict(self) -> dict:
        return {
            "overall": self.worst,
            "codebook_definition": self.codebook_definition,
            "metrics": {k: asdict(v) for k, v in self.metrics.items()},
        }

    def format(self) -> str:
        lines = [f"{k:<24} {v.value:>10.4f}  {v.band:<28} {v.verdict}" for k, v in self.metrics.items()]
        return "\n".join(lines + [f"overall: {self.worst}"])


def _slope(values) -> float:
    values = np.asarray(values, dtype=float)
    if len(values) < 2:
        return 0.0
    return float(np.polyfit(np.arange(len(values)), values, 1)[0])


def standards_check(metrics: dict, K: int, tokens_per_batch: int, bands: StandardsBands | None = None) -> StandardsReport:
    """Grade pretraining metrics against the VQ-VAE training-data bands.

    ``metrics`` needs the six keys in :data:`REQUIRED_METRICS`;
    ``codebook_loss_history`` (per epoch) is optional and drives the trend test.
    """
    b = bands or StandardsBands()
    missing = [k for k in REQUIRED_METRICS if k not in metrics]
    if missing:
        raise ConfigError(f"standards_check: missing metrics {missing}")
    vals = {k: float(metrics[k]) for k in REQUIRED_METRICS}
    out: dict[str, MetricVerdict] = {}

    def finite_or_fail(name, verdict):
        return verdict if math.isfinite(vals[name]) else FAIL

    ratio = vals["avg_unique_codes"] / K
    v = PASS if ratio >= b.unique_pass else WARN if ratio >= b.unique_warn else FAIL
    out["avg_unique_codes_ratio"] = MetricVerdict(ratio, f">= {b.unique_pass} (warn >= {b.unique_warn})", v)

    r = vals["recon_loss"]
    lo, hi = b.recon_pass
    v = PASS if lo <= r <= hi else WARN if r <= b.recon_warn else FAIL
    out["recon_loss"] = MetricVerdict(r, f"[{lo}, {hi}] (warn <= {b.recon_warn})", finite_or_fail("recon_loss", v))

    c = vals["commit_loss"]
    v = PASS if c < b.commit_pass else WARN if c < b.commit_warn else FAIL
    out["commit_loss"] = MetricVerdict(c, f"< {b.commit_pass} (warn < {b.commit_warn})", finite_or_fail("commit_loss", v))

    cb = vals["codebook_loss"]
    trend = _slope(metrics.get("codebook_loss_history", [cb]))
    steady = trend <= 1e-3
    v = PASS if cb < b.codebook_pass and steady else WARN if cb < b.codebook_pass or steady else FAIL
    out["codebook_loss"] = MetricVerdict(cb, f"< {b.codebook_pass}, non-increasing", finite_or_fail("codebook_loss", v))

    per_token = vals["entropy_loss"] / (math.log(K) * tokens_per_batch)
    lo, hi = b.entropy_pass
    wlo, whi = b.entropy_warn
    v = PASS if lo <= per_token <= hi else WARN if wlo <= per_token <= whi else FAIL
    out["entropy_loss"] = MetricVerdict(vals["entropy_loss"], f"[{lo}, {hi}] x ln(K) x {tokens_per_batch}", v)

    a = vals["avg_loss"]
    lo, hi = b.avg_loss_pass
    v = PASS if lo <= a <= hi else WARN
    out["avg_loss"] = MetricVerdict(a, f"[{lo}, {hi}]", finite_or_fail("avg_loss", v))
    return StandardsReport(out, b.codebook_definition)


# ------------------------------------------------------------------- pretrain


@dataclass
class PretrainResult:
    model: VQVAE
    report: StandardsReport
    history: list[dict]

    @property
    def codebook(self) -> np.ndarray:
        return self.model.frozen_codebook()


def _usage_entropy(codes: np.ndarray, K: int) -> float:
    counts = np.bincount(codes.reshape(-1), minlength=K)
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log(p)).sum())


def pretrain(dataset: Dataset, cfg: VQConfig, on_epoch=None) -> PretrainResult:
    """Minimise recon + commit + codebook loss; grade the last epoch."""
    cfg.validate()
    if len(dataset) == 0:
        raise ConfigError("pretrain: empty dataset")
    rng = np.random.default_rng(cfg.seed)
    model = VQVAE(cfg, dataset.image_shape, rng)
    opt = dc.make_optimizer(cfg.optimizer, model.parameters(), cfg.lr)
    n = len(dataset)
    tokens_per_batch = min(cfg.batch_size, n) * cfg.L
    history: list[dict] = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        sums = np.zeros(3)
        entropies, uniques, all_codes = [], [], []
        n_batches = 0
        for start in range(0, n, cfg.batch_size):
            batch = dataset.images[order[start : start + cfg.batch_size]]
            (recon, commit, codebook), codes = model.forward(batch)
            total = recon + commit + codebook
            if not np.isfinite(total.value):
                raise TrainingError("VQ-VAE loss became non-finite", epoch)
            vals = (recon.item(), commit.item(), codebook.item())
            dc.backward(total)
            opt.step()
            sums += vals
            n_batches += 1
            all_codes.append(codes)
            entropies.append(_usage_entropy(all_codes[-1], cfg.K) * all_codes[-1].size)
            uniques.append(len(np.unique(all_codes[-1])))
        codes = np.concatenate([c.reshape(-1) for c in all_codes])
        used = np.bincount(codes, minlength=cfg.K)
        mean = sums / n_batches
        row = {
            "epoch": epoch,
            "recon_loss": float(mean[0]),
            "commit_loss": float(mean[1]),
            "codebook_loss": float(mean[2]),
            "avg_loss": float(mean.sum()),
            "entropy_loss": float(np.mean(entropies)),
            "unique_codes": int((used > 0).sum()),
            "avg_unique_codes_per_batch": float(np.mean(uniques)),
        }
        history.append(row)
        log.info("epoch %d recon %.4f commit %.4f codebook %.4f unique %d", epoch, *mean, row["unique_codes"])
        if on_epoch is not None:
            on_epoch(row)
        if cfg.restart_dead_codes and epoch < cfg.epochs - 1:
            _restart_dead_codes(model, dataset, used, rng)
    last = history[-1]
    metrics = {
        "avg_unique_codes": last["unique_codes"],
        "recon_loss": last["recon_loss"],
        "commit_loss": last["commit_loss"],
        "codebook_loss": last["codebook_loss"],
        "entropy_loss": last["entropy_loss"],
        "avg_loss": last["avg_loss"],
        "codebook_loss_history": [h["codebook_loss"] for h in history[-max(3, cfg.epochs // 3):]],
    }
    return PretrainResult(model, standards_check(metrics, cfg.K, tokens_per_batch), history)


def _restart_dead_codes(model: VQVAE, dataset: Dataset, used: np.ndarray, rng: np.random.Generator) -> None:
    dead = np.flatnonzero(used == 0)
    if len(dead) == 0:
        return
    pick = rng.choice(len(dataset), size=len(dead), replace=len(dead) > len(dataset))
    slot = rng.integers(model.L, size=len(dead))
    z = model.encode(dataset.images[pick]).reshape(len(dead), model.L, model.D)
    model.codebook.value[dead] = z[np.arange(len(dead)), slot]
