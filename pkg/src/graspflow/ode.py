"""Explicit ODE integration over progression time: adaptive Dormand-Prince 5(4)
plus fixed-step RK4 and Euler references.

Fields are callables ``f(t, y) -> dy/dt`` on 1-D float64 state vectors.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])

SAFETY = 0.9
MIN_FACTOR = 0.2
MAX_FACTOR = 5.0

METHODS = ("dopri5", "rk4", "euler")


class IntegrationError(RuntimeError):
    """Step-size underflow, step budget exhausted, or a non-finite field value."""


@dataclass
class IntegratorConfig:
    method: str = "dopri5"
    rtol: float = 1e-5
    atol: float = 1e-7
    initial_step: float = 0.05
    max_steps: int = 10000
    min_step: float = 1e-10

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown integration method {self.method!r}; choose from {METHODS}")
        if self.rtol <= 0 or self.atol <= 0:
            raise ValueError("rtol and atol must be positive")
        if self.max_steps < 1:
            raise ValueError("max_steps must be at least 1")
        if not 0 < self.initial_step <= 1:
            raise ValueError("initial_step must lie in (0, 1]")


@dataclass
class FlowTrajectory:
    """Accepted states from t=0 to t=1, plus a log of every attempted step."""

    times: list[float] = field(default_factory=list)
    states: list[np.ndarray] = field(default_factory=list)
    # one (t, h, error, accepted) tuple per attempt, rejected ones included
    attempts: list[tuple[float, float, float, bool]] = field(default_factory=list)

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    @property
    def n_accepted(self) -> int:
        return len(self.times) - 1

    @property
    def n_rejected(self) -> int:
        return sum(1 for a in self.attempts if not a[3])

    def as_array(self) -> np.ndarray:
        """(n, 1 + dim) array with the time in column 0."""
        return np.column_stack([np.asarray(self.times), np.vstack(self.states)])


def _eval(f, t, y):
    dy = np.asarray(f(t, y), dtype=np.float64)
    if dy.shape != y.shape:
        raise IntegrationError(f"field returned shape {dy.shape}, state has {y.shape}")
    if not np.all(np.isfinite(dy)):
        raise IntegrationError(f"non-finite field value at t={t}")
    return dy


def _dopri5_stages(f, t, y, h):
    k = []
    for i in range(7):
        yi = y.copy()
        for j, a in enumerate(_A[i]):
            if a != 0.0:
                yi += h * a * k[j]
        k.append(_eval(f, t + _C[i] * h, yi))
    y5 = y.copy()
    y4 = y.copy()
    for i in range(7):
        if _B5[i] != 0.0:
            y5 += h * _B5[i] * k[i]
        y4 += h * _B4[i] * k[i]
    return y5, y4


def error_norm(y, y_new, err, rtol, atol) -> float:
    scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
    return float(np.sqrt(np.mean((err / scale) ** 2)))


def dopri5_step(f, t: float, y, h: float, rtol: float, atol: float):
    """One embedded Dormand-Prince attempt.

    Returns ``(y_next, error, h_next, accepted)``; ``y_next`` is the
    fifth-order solution, ``error`` the scaled RMS of the 5(4) difference.
    """
    if h <= 0:
        raise ValueError("step size must be positive")
    y = np.asarray(y, dtype=np.float64)
    y5, y4 = _dopri5_stages(f, t, y, h)
    err = error_norm(y, y5, y5 - y4, rtol, atol)
    accepted = err <= 1.0
    if err == 0.0:
        factor = MAX_FACTOR
    else:
        factor = min(MAX_FACTOR, max(MIN_FACTOR, SAFETY * err ** -0.2))
    if not accepted:
        factor = min(factor, 1.0)
    return y5, err, h * factor, accepted


def rk4_step(f, t, y, h):
    k1 = _eval(f, t, y)
    k2 = _eval(f, t + h / 2, y + h / 2 * k1)
    k3 = _eval(f, t + h / 2, y + h / 2 * k2)
    k4 = _eval(f, t + h, y + h * k3)
    return y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def euler_step(f, t, y, h):
    return y + h * _eval(f, t, y)


def _dopri5_fixed(f, t, y, h):
    return _dopri5_stages(f, t, y, h)[0]


_FIXED = {"euler": euler_step, "rk4": rk4_step, "dopri5": _dopri5_fixed}


def integrate_fixed(f, y0, method: str, n_steps: int, t0: float = 0.0, t1: float = 1.0) -> FlowTrajectory:
    step = _FIXED[method]
    y = np.array(y0, dtype=np.float64)
    h = (t1 - t0) / n_steps
    traj = FlowTrajectory(times=[t0], states=[y.copy()])
    for i in range(n_steps):
        t = t0 + i * h
        y = step(f, t, y, h)
        t_next = t1 if i == n_steps - 1 else t0 + (i + 1) * h
        traj.times.append(t_next)
        traj.states.append(y.copy())
        traj.attempts.append((t, h, 0.0, True))
    return traj


def integrate(f, y0, cfg: IntegratorConfig | None = None, t0: float = 0.0, t1: float = 1.0) -> FlowTrajectory:
    """Integrate ``y' = f(t, y)`` from ``t0`` to exactly ``t1``."""
    cfg = cfg or IntegratorConfig()
    if cfg.method != "dopri5":
        n = max(1, int(np.ceil((t1 - t0) / cfg.initial_step - 1e-12)))
        if n > cfg.max_steps:
            raise IntegrationError(f"{n} fixed steps exceed max_steps={cfg.max_steps}")
        return integrate_fixed(f, y0, cfg.method, n, t0, t1)

    y = np.array(y0, dtype=np.float64)
    t = t0
    h = cfg.initial_step
    traj = FlowTrajectory(times=[t0], states=[y.copy()])
    while t < t1:
        if len(traj.attempts) >= cfg.max_steps:
            raise IntegrationError(f"exceeded max_steps={cfg.max_steps} at t={t}")
        last = t + h >= t1
        h_try = t1 - t if last else h
        y_new, err, h_next, accepted = dopri5_step(f, t, y, h_try, cfg.rtol, cfg.atol)
        traj.attempts.append((t, h_try, err, accepted))
        if accepted:
            t = t1 if last else t + h_try
            y = y_new
            traj.times.append(t)
            traj.states.append(y.copy())
        if h_next < cfg.min_step:
            raise IntegrationError(f"step size {h_next:.3e} fell below min_step at t={t}")
        h = h_next
    return traj


def convergence_order(f, y0, exact_final, method: str, n_steps: int = 8, t0: float = 0.0, t1: float = 1.0) -> float:
    """Observed order from the error ratio between ``n_steps`` and ``2*n_steps`` fixed steps."""
    e1 = np.linalg.norm(integrate_fixed(f, y0, method, n_steps, t0, t1).final - exact_final)
    e2 = np.linalg.norm(integrate_fixed(f, y0, method, 2 * n_steps, t0, t1).final - exact_final)
    return float(np.log2(e1 / e2))


def integrate_flow(net, g0, c, cfg: IntegratorConfig | None = None):
    """Carry a rigid 7-vector along the learned field from t=0 to t=1.

    ``net`` is anything with ``forward(g, t, c, train=False)`` returning (1, 7);
    it is evaluated in eval mode. Returns the renormalized end pose and the
    raw trajectory.
    """
    from .pose import GraspPose

    c = np.asarray(c, dtype=np.float64).reshape(1, -1)

    def field_fn(t, y):
        return net.forward(y[None, :], t, c, train=False)[0]

    traj = integrate(field_fn, np.asarray(g0, dtype=np.float64), cfg)
    return GraspPose.from_vec7(traj.final), traj
