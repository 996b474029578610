"""Contextual Prisoner's Dilemma: task signals, the AIM-to-action rule, payoffs."""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from aimlab.errors import ConfigError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class Action(str, enum.Enum):
    C = "C"
    D = "D"


@dataclass(frozen=True)
class TaskSignal:
    image: np.ndarray
    label: int

    @property
    def context_bit(self) -> int:
        return self.label % 2


@dataclass(frozen=True)
class RewardPair:
    r_a: float
    r_b: float

    @property
    def joint(self) -> float:
        return self.r_a + self.r_b

    # the individual rewards used as opponent-prediction targets
    @property
    def r_a_indiv(self) -> float:
        return self.r_a

    @property
    def r_b_indiv(self) -> float:
        return self.r_b


@dataclass(frozen=True)
class Dataset:
    images: np.ndarray  # (N, C, H, W) in [0, 1]
    labels: np.ndarray  # (N,) int

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise ConfigError("dataset: image and label counts differ")
        self.images.setflags(write=False)
        self.labels.setflags(write=False)

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return tuple(self.images.shape[1:])

    def signal(self, i: int) -> TaskSignal:
        return TaskSignal(self.images[i], int(self.labels[i]))


def sample_signal(dataset: Dataset, rng: np.random.Generator) -> TaskSignal:
    if len(dataset) == 0:
        raise ConfigError("cannot sample from an empty dataset")
    return dataset.signal(int(rng.integers(len(dataset))))


def action_of(aim, K: int) -> Action:
    """C when the first token lies in the lower half of the codebook."""
    return Action.C if int(aim[0]) < K / 2 else Action.D


def actions_of(aims: np.ndarray, K: int) -> np.ndarray:
    """Vectorised :func:`action_of`: True where the action is C."""
    return np.asarray(aims)[..., 0] < K / 2


def payoff(a_a: Action, a_b: Action, parity: int) -> RewardPair:
    # parity 0 = even context. On even parity the temptation payoff (5) equals
    # the mutual-cooperation payoff (5); kept as-is.
    if parity not in (0, 1):
        raise ConfigError(f"parity must be 0 or 1, got {parity!r}")
    even, odd = int(parity == 0), int(parity == 1)
    a_a, a_b = Action(a_a), Action(a_b)
    if a_a is Action.C and a_b is Action.C:
        return RewardPair(4.0 + even, 4.0 + even)
    if a_a is Action.C:
        return RewardPair(-1.0 - odd, 5.0)
    if a_b is Action.C:
        return RewardPair(5.0, -1.0 - odd)
    return RewardPair(0.0, 0.0)


def payoff_arrays(coop_a: np.ndarray, coop_b: np.ndarray, parity: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Batched payoff over boolean cooperate masks."""
    even = (parity == 0).astype(float)
    odd = 1.0 - even
    r_a = np.where(coop_a, np.where(coop_b, 4.0 + even, -1.0 - odd), np.where(coop_b, 5.0, 0.0))
    r_b = np.where(coop_b, np.where(coop_a, 4.0 + even, -1.0 - odd), np.where(coop_a, 5.0, 0.0))
    return r_a, r_b


# ---------------------------------------------------------------- datasets

# 5x7 bitmaps for digits 0-9, one string per row
_FONT = {
    0: ["01110", "10001", "10011", "10101", "11001", "10001", "01110"],
    1: ["00100", "01100", "00100", "00100", "00100", "00100", "01110"],
    2: ["01110", "10001", "00001", "00010", "00100", "01000", "11111"],
    3: ["11111", "00010", "00100", "00010", "00001", "10001", "01110"],
    4: ["00010", "00110", "01010", "10010", "11111", "00010", "00010"],
    5: ["11111", "10000", "11110", "00001", "00001", "10001", "01110"],
    6: ["00110", "01000", "10000", "11110", "10001", "10001", "01110"],
    7: ["11111", "00001", "00010", "00100", "01000", "01000", "01000"],
    8: ["01110", "10001", "10001", "01110", "10001", "10001", "01110"],
    9: ["01110", "10001", "10001", "01111", "00001", "00010", "01100"],
}

GLYPH_SIZE = 16


def glyph(digit: int) -> np.ndarray:
    """Clean 16x16 bitmap of ``digit``: the 5x7 font scaled by 2 and centred."""
    rows = np.array([[int(c) for c in r] for r in _FONT[digit]], dtype=float)
    big = np.kron(rows, np.ones((2, 2)))  # 14 x 10
    img = np.zeros((GLYPH_SIZE, GLYPH_SIZE))
    top, left = (GLYPH_SIZE - big.shape[0]) // 2, (GLYPH_SIZE - big.shape[1]) // 2
    img[top : top + big.shape[0], left : left + big.shape[1]] = big
    return img


def synthetic_glyphs(count: int = 1000, seed: int = 0, noise: float = 0.1, max_shift: int = 1) -> Dataset:
    """Balanced 10-class glyph set with seeded jitter and additive pixel noise."""
    if count < 1:
        raise ConfigError("synthetic dataset count must be >= 1")
    rng = np.random.default_rng(seed)
    labels = np.arange(count) % 10
    rng.shuffle(labels)
    base = np.stack([glyph(d) for d in range(10)])
    images = np.empty((count, 1, GLYPH_SIZE, GLYPH_SIZE))
    for i, lab in enumerate(labels):
        dy, dx = rng.integers(-max_shift, max_shift + 1, size=2)
        img = np.roll(base[lab], (dy, dx), axis=(0, 1))
        img = img + rng.normal(0.0, noise, img.shape)
        images[i, 0] = np.clip(img, 0.0, 1.0)
    return Dataset(images, labels.astype(np.int64))


def _read_idx(path: Path, magic: int) -> tuple[tuple[int, ...], bytes]:
    data = Path(path).read_bytes()
    if len(data) < 8:
        raise ConfigError(f"{path}: too short for an IDX header")
    (got,) = struct.unpack(">I", data[:4])
    if got != magic:
        raise ConfigError(f"{path}: bad IDX magic 0x{got:08x}, expected 0x{magic:08x}")
    ndim = got & 0xFF
    dims = struct.unpack(f">{ndim}I", data[4 : 4 + 4 * ndim])
    body = data[4 + 4 * ndim :]
    if len(body) != int(np.prod(dims)):
        raise ConfigError(f"{path}: payload size {len(body)} does not match dims {dims}")
    return dims, body


def load_idx(images_path, labels_path, limit: int | None = None) -> Dataset:
    """Read an IDX image/label pair (MNIST layout); pixels scaled to [0, 1]."""
    (n, h, w), body = _read_idx(images_path, IDX_IMAGES_MAGIC)
    (m,), lbody = _read_idx(labels_path, IDX_LABELS_MAGIC)
    if n != m:
        raise ConfigError(f"IDX files disagree on item count: {n} images, {m} labels")
    images = np.frombuffer(body, dtype=np.uint8).reshape(n, 1, h, w).astype(np.float64) / 255.0
    labels = np.frombuffer(lbody, dtype=np.uint8).astype(np.int64)
    if limit is not None:
        images, labels = images[:limit], labels[:limit]
    return Dataset(images.copy(), labels.copy())


def write_idx(images_path, labels_path, images: np.ndarray, labels: np.ndarray) -> None:
    """Write uint8 IDX files; ``images`` is (N, H, W) with values in [0, 1] or uint8."""
    images = np.asarray(images)
    if images.dtype != np.uint8:
        images = np.round(np.clip(images, 0, 1) * 255).astype(np.uint8)
    n, h, w = images.shape
    Path(images_path).write_bytes(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, h, w) + images.tobytes())
    Path(labels_path).write_bytes(
        struct.pack(">II", IDX_LABELS_MAGIC, len(labels)) + np.asarray(labels, dtype=np.uint8).tobytes()
    )
