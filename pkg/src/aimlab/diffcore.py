"""Small reverse-mode autodiff over float64 numpy arrays.

Every op builds a new :class:`Tensor` that remembers its parents and a closure
mapping the output gradient to parent gradients. The graph reachable from a
loss is the computation record; :func:`backward` replays it in reverse
topological order, accumulates into :class:`Parameter` gradients and then
drops the graph so it cannot be replayed twice.

Only what the networks in this package need is here: dense layers, tanh and
sigmoid, concatenation/slicing, embeddings, log-softmax, and the usual
reductions.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from aimlab.errors import ConfigError, NumericalError, UsageError

DTYPE = np.float64


class Tensor:
    __array_priority__ = 100

    def __init__(self, value, parents: tuple = (), backward_fn: Callable | None = None):
        self.value = np.asarray(value, dtype=DTYPE)
        self.grad: np.ndarray | None = None
        self._parents = parents
        self._backward_fn = backward_fn
        self.requires_grad = bool(parents)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def item(self) -> float:
        return float(self.value)

    def __repr__(self) -> str:
        return f"{type(self).__name__}(shape={self.shape})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, -as_tensor(other))

    def __rsub__(self, other):
        return add(as_tensor(other), -self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, other: float):
        return mul(self, 1.0 / float(other))

    def __getitem__(self, key):
        return index(self, key)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return tmean(self, axis)


class Parameter(Tensor):
    """A trainable leaf. ``grad`` always exists and accumulates across backward calls."""

    def __init__(self, value, name: str = ""):
        super().__init__(np.array(value, dtype=DTYPE, copy=True))
        self.name = name
        self.grad = np.zeros_like(self.value)
        self.requires_grad = True

    def zero_grad(self) -> None:
        self.grad[...] = 0.0

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(value, parents: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    live = tuple(p for p in parents if p.requires_grad)
    if not live:
        return Tensor(value)
    return Tensor(value, tuple(parents), backward_fn)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(
        a.value + b.value,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(
        a.value * b.value,
        (a, b),
        lambda g: (_unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)),
    )


def square(x: Tensor) -> Tensor:
    return _node(x.value**2, (x,), lambda g: (2.0 * x.value * g,))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.value)
    return _node(y, (x,), lambda g: (g * (1.0 - y * y),))


def sigmoid(x: Tensor) -> Tensor:
    y = 0.5 * (1.0 + np.tanh(0.5 * x.value))
    return _node(y, (x,), lambda g: (g * y * (1.0 - y),))


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.value)
    return _node(y, (x,), lambda g: (g * y,))


def stop_gradient(x: Tensor) -> Tensor:
    """Same value, no path back to ``x``."""
    return Tensor(x.value.copy())


# ------------------------------------------------------------------ structure


def tsum(x: Tensor, axis=None) -> Tensor:
    def back(g):
        if axis is None:
            return (np.broadcast_to(g, x.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),)

    return _node(x.value.sum(axis=axis), (x,), back)


def tmean(x: Tensor, axis=None) -> Tensor:
    n = x.value.size if axis is None else x.shape[axis]
    return tsum(x, axis) / n


def reshape(x: Tensor, shape) -> Tensor:
    return _node(x.value.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def index(x: Tensor, key) -> Tensor:
    def back(g):
        full = np.zeros_like(x.value)
        np.add.at(full, key, g)
        return (full,)

    return _node(x.value[key], (x,), back)


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]
    return _node(
        np.concatenate([t.value for t in tensors], axis=axis),
        tensors,
        lambda g: tuple(np.split(g, cuts, axis=axis)),
    )


def embedding(table: Tensor, ids) -> Tensor:
    """Rows of ``table`` selected by integer ``ids`` (any shape)."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ConfigError(f"embedding index out of range [0, {table.shape[0]})")

    def back(g):
        full = np.zeros_like(table.value)
        np.add.at(full, ids, g)
        return (full,)

    return _node(table.value[ids], (table,), back)


# --------------------------------------------------------------------- layers


def linear(x, weight: Tensor, bias: Tensor) -> Tensor:
    """``weight @ x + bias`` with ``weight`` of shape (out, in); batched over leading axis."""
    x = as_tensor(x)
    if x.shape[-1] != weight.shape[1]:
        raise ConfigError(f"linear: input has {x.shape[-1]} features, weight expects {weight.shape[1]}")
    if bias.shape != (weight.shape[0],):
        raise ConfigError(f"linear: bias shape {bias.shape} does not match {weight.shape[0]} outputs")
    xv, wv = x.value, weight.value

    def back(g):
        if xv.ndim == 1:
            gw = np.outer(g, xv)
        else:
            gw = g.reshape(-1, g.shape[-1]).T @ xv.reshape(-1, xv.shape[-1])
        return g @ wv, gw, _unbroadcast(g, bias.shape)

    return _node(xv @ wv.T + bias.value, (x, weight, bias), back)


def log_softmax(x: Tensor) -> Tensor:
    """Log-softmax along the last axis."""
    z = x.value - x.value.max(axis=-1, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    p = np.exp(out)
    return _node(out, (x,), lambda g: (g - p * g.sum(axis=-1, keepdims=True),))


def softmax_np(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def pick(x: Tensor, ids) -> Tensor:
    """``x[..., ids]`` one entry per row along the last axis."""
    ids = np.asarray(ids, dtype=np.int64)
    if x.ndim == 1:
        return index(x, int(ids))
    rows = np.arange(x.shape[0])
    return index(x, (rows, ids))


def entropy(logits: Tensor) -> Tensor:
    """Shannon entropy (nats) of softmax(logits) along the last axis."""
    logp = log_softmax(logits)
    return -tsum(exp(logp) * logp, axis=-1)


# --------------------------------------------------------------------- losses


def mse_loss(prediction, target) -> Tensor:
    prediction = as_tensor(prediction)
    target = np.asarray(target.value if isinstance(target, Tensor) else target, dtype=DTYPE)
    if prediction.shape != target.shape:
        raise ConfigError(f"mse_loss: shape {prediction.shape} vs {target.shape}")
    return tmean(square(prediction - target))


def cross_entropy_loss(logits: Tensor, target, reduction: str = "mean") -> Tensor:
    """``-log softmax(logits)[target]``; batched over the leading axis when logits are 2-D."""
    k = logits.shape[-1]
    target = np.asarray(target, dtype=np.int64)
    if target.size and (target.min() < 0 or target.max() >= k):
        raise ConfigError(f"cross_entropy_loss: target out of range [0, {k})")
    nll = -pick(log_softmax(logits), target)
    if logits.ndim == 1 or reduction == "none":
        return nll
    return tmean(nll)


# ------------------------------------------------------------------- backward


def _topological(loss: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, seed: float = 1.0) -> None:
    """Accumulate d(seed * loss)/d(parameter) into every Parameter reachable from ``loss``.

    The graph is consumed: intermediate nodes lose their parents afterwards.
    """
    if loss._backward_fn is None:
        raise UsageError("backward called on a tensor with no recorded forward pass")
    if loss.value.size != 1:
        raise UsageError(f"backward needs a scalar loss, got shape {loss.shape}")
    order = _topological(loss)
    loss.grad = np.full(loss.shape, seed, dtype=DTYPE)
    for node in reversed(order):
        if node._backward_fn is None or node.grad is None:
            continue
        for parent, g in zip(node._parents, node._backward_fn(node.grad)):
            if not parent.requires_grad or g is None:
                continue
            if parent.grad is None:
                parent.grad = np.array(g, dtype=DTYPE)
            else:
                parent.grad = parent.grad + g
    for node in order:
        if not isinstance(node, Parameter):
            node._parents = ()
            node._backward_fn = None
            node.grad = None


# ------------------------------------------------------------------ sampling


def categorical_sample(logits, rng: np.random.Generator):
    """Draw one index per row of ``logits``.

    Returns ``(index, log_prob, entropy)``; scalars for 1-D logits, arrays for
    batched logits. Inverse-CDF sampling from one uniform per row keeps draws
    reproducible from the generator state.
    """
    logits = np.asarray(logits.value if isinstance(logits, Tensor) else logits, dtype=DTYPE)
    if logits.shape[-1] < 2:
        raise ConfigError("categorical_sample needs at least 2 classes")
    if not np.all(np.isfinite(logits)):
        raise NumericalError("categorical_sample: non-finite logits")
    z = logits - logits.max(axis=-1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    p = np.exp(logp)
    u = rng.random(logits.shape[:-1])
    cdf = np.cumsum(p, axis=-1)
    idx = np.minimum((cdf < np.expand_dims(u, -1)).sum(axis=-1), logits.shape[-1] - 1)
    lp = np.take_along_axis(logp, np.expand_dims(idx, -1), axis=-1)[..., 0]
    ent = -(p * logp).sum(axis=-1)
    if logits.ndim == 1:
        return int(idx), float(lp), float(ent)
    return idx.astype(np.int64), lp, ent


# ---------------------------------------------------------------- grad check


def grad_check(loss_fn: Callable[[], Tensor], params: Iterable[Parameter], eps: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``loss_fn`` must rebuild the forward pass from the current parameter
    values each time it is called.
    """
    params = list(params)
    if not 0 < eps <= 1e-2:
        raise ConfigError("grad_check: eps must be in (0, 1e-2]")
    for p in params:
        p.zero_grad()
    loss = loss_fn()
    if loss._backward_fn is not None:
        backward(loss)
    worst = 0.0
    for p in params:
        analytic = p.grad.copy()
        flat = p.value.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = loss_fn().item()
            flat[i] = orig - eps
            down = loss_fn().item()
            flat[i] = orig
            numeric = (up - down) / (2 * eps)
            a = analytic.reshape(-1)[i]
            denom = max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, abs(a - numeric) / denom)
        p.zero_grad()
    return worst


# ----------------------------------------------------------------- optimizers


def uniform_init(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class SGD:
    def __init__(self, params: Iterable[Parameter], lr: float):
        if lr <= 0:
            raise ConfigError("learning rate must be positive")
        self.params = list(params)
        self.lr = lr

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        for p in self.params:
            p.value -= self.lr * p.grad
        self.zero_grad()


class Adam(SGD):
    """Adam with bias correction. One moment pair per registered parameter."""

    def __init__(self, params, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        super().__init__(params, lr)
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * p.grad
            v *= self.b2
            v += (1.0 - self.b2) * p.grad**2
            p.value -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        self.zero_grad()


def make_optimizer(name: str, params, lr: float):
    if name == "adam":
        return Adam(params, lr)
    if name == "sgd":
        return SGD(params, lr)
    raise ConfigError(f"unknown optimizer {name!r}")


class MLP:
    """tanh MLP: ``sizes[0] -> ... -> sizes[-1]``; last layer linear."""

    def __init__(self, sizes: Sequence[int], rng: np.random.Generator, name: str = "mlp"):
        if len(sizes) < 2:
            raise ConfigError("MLP needs at least input and output size")
        self.sizes = list(sizes)
        self.layers: list[tuple[Parameter, Parameter]] = []
        for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            w = Parameter(uniform_init(rng, (n_out, n_in), n_in), f"{name}.w{i}")
            b = Parameter(uniform_init(rng, (n_out,), n_in), f"{name}.b{i}")
            self.layers.append((w, b))

    @property
    def in_dim(self) -> int:
        return self.sizes[0]

    @property
    def out_dim(self) -> int:
        return self.sizes[-1]

    def parameters(self) -> list[Parameter]:
        return [p for layer in self.layers for p in layer]

    def __call__(self, x) -> Tensor:
        h = as_tensor(x)
        for i, (w, b) in enumerate(self.layers):
            h = linear(h, w, b)
            if i < len(self.layers) - 1:
                h = tanh(h)
        return h

    def zero_(self) -> None:
        for p in self.parameters():
            p.value[...] = 0.0
