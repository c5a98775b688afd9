"""Central finite-difference checks for the hand-written backward rules."""

from __future__ import annotations

import numpy as np

from .autodiff import GradTape


FLOOR = 1e-5


def relative_error(a, b, floor: float = FLOOR) -> float:
    """``max|a - b|`` over the larger of ``max|a|``, ``max|b|`` and ``floor``.

    The floor keeps arrays whose true gradient is exactly zero (a bias feeding
    batch norm in train mode) from dividing finite-difference noise by zero.
    """
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    scale = max(np.max(np.abs(a)), np.max(np.abs(b)), floor)
    return float(np.max(np.abs(a - b)) / scale)


def numeric_grad(f, x: np.ndarray, h: float = 1e-5, entries=None) -> np.ndarray:
    """Central differences of scalar ``f()`` w.r.t. ``x`` (modified in place and restored).

    ``entries`` restricts the probe to those flat indices; other entries stay zero.
    """
    grad = np.zeros_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in (range(flat.size) if entries is None else entries):
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * h)
    return grad


def check_module(forward, params, x: np.ndarray, rng: np.random.Generator, h: float = 1e-5,
                 max_entries: int | None = None) -> dict[str, float]:
    """Relative error of reverse-mode vs finite-difference gradients for the input and every param.

    ``forward(x, tape)`` must return the module output. The scalar probed is
    ``sum(output * R)`` for a fixed random ``R``, whose output gradient is ``R``.
    ``max_entries`` caps how many entries of each array are probed (chosen at random).
    """
    x = np.array(x, dtype=np.float64)
    out = forward(x, None)
    R = rng.standard_normal(out.shape)

    def loss():
        return float(np.sum(forward(x, None) * R))

    for p in params:
        p.zero_grad()
    tape = GradTape()
    forward(x, tape)
    gx = tape.backward(R)

    def pick(a):
        if max_entries is None or a.size <= max_entries:
            return None
        return rng.choice(a.size, size=max_entries, replace=False)

    errors = {}
    idx = pick(x)
    num = numeric_grad(loss, x, h, idx)
    ana = gx if idx is None else _masked(gx, idx)
    errors["input"] = relative_error(ana, num)
    for p in params:
        idx = pick(p.value)
        num = numeric_grad(loss, p.value, h, idx)
        ana = p.grad if idx is None else _masked(p.grad, idx)
        errors[p.name] = relative_error(ana, num)
    return errors


def _masked(a, idx):
    out = np.zeros(a.size)
    out[idx] = a.reshape(-1)[idx]
    return out.reshape(a.shape)
