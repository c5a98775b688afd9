"""Dense float64 layers with hand-written reverse-mode gradients.

Only the layer set the grasp-flow networks need: affine, SiLU, ReLU,
batch normalization, plus a mean-squared-error loss and an Adam optimizer.
Activations are 2-D numpy arrays of shape (batch, features).

A forward pass given a :class:`GradTape` records each op together with the
values its backward rule needs; :meth:`GradTape.backward` replays the record
in reverse and accumulates into each :class:`Param`'s ``grad``.
"""

from __future__ import annotations

import numpy as np


class NumericalError(FloatingPointError):
    """A NaN or infinity showed up in a forward value or gradient."""


def _check_finite(a: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(a)):
        raise NumericalError(f"non-finite values in {what}")
    return a


def as_matrix(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2:
        raise ValueError(f"expected a 2-D array, got shape {x.shape}")
    return x


class Param:
    __slots__ = ("name", "value", "grad")

    def __init__(self, name: str, value: np.ndarray):
        self.name = name
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)

    def zero_grad(self):
        self.grad[...] = 0.0

    def __repr__(self):
        return f"Param({self.name!r}, shape={self.value.shape})"


class GradTape:
    """Ordered record of forward ops; backward visits it in exact reverse."""

    def __init__(self):
        self._entries: list[tuple[Layer, tuple]] = []

    def record(self, layer: "Layer", cache: tuple):
        self._entries.append((layer, cache))

    def __len__(self):
        return len(self._entries)

    def backward(self, grad_out) -> np.ndarray:
        """Propagate ``grad_out`` (dL/d output) back; returns dL/d input."""
        if not self._entries:
            raise RuntimeError("backward called on an empty tape; run a forward pass first")
        grad = np.asarray(grad_out, dtype=np.float64)
        for layer, cache in reversed(self._entries):
            grad = layer.backward(cache, grad)
        self._entries.clear()
        return grad


class Layer:
    """Base class. Subclasses implement ``_forward`` returning (y, cache) and ``backward``."""

    def params(self) -> list[Param]:
        return []

    def buffers(self) -> list[np.ndarray]:
        return []

    def forward(self, x: np.ndarray, train: bool = False, tape: GradTape | None = None) -> np.ndarray:
        y, cache = self._forward(x, train)
        _check_finite(y, type(self).__name__ + " output")
        if tape is not None:
            tape.record(self, cache)
        return y

    def _forward(self, x, train):
        raise NotImplementedError

    def backward(self, cache, grad):
        raise NotImplementedError


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class Affine(Layer):
    """``y = x @ W + b`` with ``W`` of shape (in, out)."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator | None = None, name: str = "affine"):
        self.n_in, self.n_out = n_in, n_out
        w = glorot_uniform(rng, n_in, n_out) if rng is not None else np.zeros((n_in, n_out))
        self.W = Param(name + ".W", w)
        self.b = Param(name + ".b", np.zeros(n_out))

    def params(self):
        return [self.W, self.b]

    def _forward(self, x, train):
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise ValueError(f"affine expects (batch, {self.n_in}) input, got {x.shape}")
        return x @ self.W.value + self.b.value, (x,)

    def backward(self, cache, grad):
        (x,) = cache
        self.W.grad += x.T @ grad
        self.b.grad += grad.sum(axis=0)
        return grad @ self.W.value.T


def sigmoid(x):
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def silu(x):
    x = np.asarray(x, dtype=np.float64)
    return x * sigmoid(x)


def relu(x):
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


class SiLU(Layer):
    def _forward(self, x, train):
        s = sigmoid(x)
        return x * s, (x, s)

    def backward(self, cache, grad):
        x, s = cache
        return grad * (s * (1.0 + x * (1.0 - s)))


class ReLU(Layer):
    def _forward(self, x, train):
        return np.maximum(x, 0.0), (x > 0,)

    def backward(self, cache, grad):
        (mask,) = cache
        return grad * mask


class Identity(Layer):
    def _forward(self, x, train):
        return x, ()

    def backward(self, cache, grad):
        return grad


class Standardize(Layer):
    """Fixed per-feature ``(x - shift) / scale``; the statistics are buffers, not trained."""

    def __init__(self, n: int):
        self.n = n
        self.shift = np.zeros(n)
        self.scale = np.ones(n)

    def buffers(self):
        return [self.shift, self.scale]

    def fit(self, x: np.ndarray, min_scale: float = 1e-8):
        x = as_matrix(x)
        self.shift[...] = x.mean(axis=0)
        std = x.std(axis=0)
        self.scale[...] = np.where(std > min_scale, std, 1.0)

    def _forward(self, x, train):
        return (x - self.shift) / self.scale, ()

    def backward(self, cache, grad):
        return grad / self.scale


class Destandardize(Standardize):
    """Fixed per-feature ``x * scale + shift``, the inverse of :class:`Standardize`."""

    def fit(self, x: np.ndarray, min_scale: float = 0.0):
        # nothing divides by the scale here, so a constant feature keeps scale 0
        # and is reproduced exactly as its mean
        x = as_matrix(x)
        self.shift[...] = x.mean(axis=0)
        std = x.std(axis=0)
        self.scale[...] = np.where(std > min_scale, std, 0.0)

    def _forward(self, x, train):
        return x * self.scale + self.shift, ()

    def backward(self, cache, grad):
        return grad * self.scale


class BatchNorm(Layer):
    """Per-feature batch normalization.

    Train mode normalizes by the batch mean and (biased) variance and moves
    the running statistics toward them by ``momentum``; eval mode uses the
    running statistics.
    """

    def __init__(self, n: int, momentum: float = 0.1, eps: float = 1e-5, name: str = "bn"):
        if eps <= 0:
            raise ValueError("batchnorm epsilon must be positive")
        self.n = n
        self.momentum = momentum
        self.eps = eps
        self.gamma = Param(name + ".gamma", np.ones(n))
        self.beta = Param(name + ".beta", np.zeros(n))
        self.running_mean = np.zeros(n)
        self.running_var = np.ones(n)

    def params(self):
        return [self.gamma, self.beta]

    def buffers(self):
        return [self.running_mean, self.running_var]

    def _forward(self, x, train):
        if x.ndim != 2 or x.shape[1] != self.n:
            raise ValueError(f"batchnorm expects (batch, {self.n}) input, got {x.shape}")
        if train:
            if x.shape[0] < 2:
                raise ValueError("batchnorm in train mode needs a batch of at least 2")
            mean = x.mean(axis=0)
            var = x.var(axis=0)
            m = self.momentum
            self.running_mean *= 1.0 - m
            self.running_mean += m * mean
            self.running_var *= 1.0 - m
            self.running_var += m * var
        else:
            mean, var = self.running_mean, self.running_var
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean) * inv_std
        return self.gamma.value * xhat + self.beta.value, (xhat, inv_std, train)

    def backward(self, cache, grad):
        xhat, inv_std, train = cache
        self.gamma.grad += (grad * xhat).sum(axis=0)
        self.beta.grad += grad.sum(axis=0)
        dxhat = grad * self.gamma.value
        if not train:
            return dxhat * inv_std
        n = grad.shape[0]
        return (inv_std / n) * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))


def mse(pred, target) -> tuple[float, np.ndarray]:
    """Mean over every entry of the squared difference, and its gradient w.r.t. ``pred``."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred - target
    loss = float(np.mean(diff * diff))
    return loss, (2.0 / diff.size) * diff


class Sequential:
    """A fixed stack of layers sharing one forward/backward interface."""

    def __init__(self, layers: list[Layer]):
        self.layers = list(layers)

    def forward(self, x, train: bool = False, tape: GradTape | None = None) -> np.ndarray:
        x = _check_finite(as_matrix(x), "network input")
        for layer in self.layers:
            x = layer.forward(x, train=train, tape=tape)
        return x

    __call__ = forward

    def params(self) -> list[Param]:
        return [p for layer in self.layers for p in layer.params()]

    def zero_grad(self):
        for p in self.params():
            p.zero_grad()

    def state_arrays(self) -> list[np.ndarray]:
        """Every stored array in forward order: params of a layer, then its buffers."""
        out = []
        for layer in self.layers:
            out.extend(p.value for p in layer.params())
            out.extend(layer.buffers())
        return out

    def n_values(self) -> int:
        return sum(a.size for a in self.state_arrays())

    def get_flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.state_arrays()])

    def set_flat(self, flat: np.ndarray):
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != self.n_values():
            raise ValueError(f"parameter blob has {flat.size} values, network needs {self.n_values()}")
        i = 0
        for a in self.state_arrays():
            a[...] = flat[i:i + a.size].reshape(a.shape)
            i += a.size


class Adam:
    """Adam with bias correction. A non-finite gradient aborts the step before any update."""

    def __init__(self, params: list[Param], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]
        self.t = 0

    def step(self):
        for p in self.params:
            if not np.all(np.isfinite(p.grad)):
                raise NumericalError(f"non-finite gradient for {p.name}; step aborted")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * p.grad
            v *= b2
            v += (1.0 - b2) * p.grad * p.grad
            p.value -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
