import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from graspflow.ode import (IntegrationError, IntegratorConfig, convergence_order, dopri5_step, integrate,
                           integrate_fixed, integrate_flow)
from graspflow.pose import normalize_quat


def decay(t, y):
    return -y


class ConstantField:
    def __init__(self, u):
        self.u = np.asarray(u, dtype=np.float64)

    def forward(self, g, t, c, train=False):
        return np.tile(self.u, (len(g), 1))


class Contraction:
    def __init__(self, target):
        self.target = np.asarray(target, dtype=np.float64)

    def forward(self, g, t, c, train=False):
        return self.target - g


def test_zero_field_step():
    y = np.array([0.3, -1.2])
    y_next, err, _, accepted = dopri5_step(lambda t, y: np.zeros_like(y), 0.0, y, 0.1, 1e-6, 1e-9)
    assert np.array_equal(y_next, y) and err == 0.0 and accepted


def test_constant_field_step():
    k = np.array([0.5, -2.0, 3.0])
    y = np.array([1.0, 2.0, 3.0])
    y_next, err, _, accepted = dopri5_step(lambda t, y: k, 0.0, y, 0.1, 1e-6, 1e-9)
    assert np.max(np.abs(y_next - (y + 0.1 * k))) < 1e-15
    assert err < 1e-6 and accepted


def test_decay_to_one_at_tight_tolerance():
    traj = integrate(decay, np.array([1.0]), IntegratorConfig(rtol=1e-8, atol=1e-8))
    assert abs(traj.final[0] - np.exp(-1)) < 1e-8
    assert traj.times[0] == 0.0 and traj.times[-1] == 1.0


@pytest.mark.parametrize("method, n, lo, hi", [("euler", 16, 0.8, 1.2), ("rk4", 8, 3.7, 4.3),
                                               ("dopri5", 4, 4.5, 5.5)])
def test_convergence_order(method, n, lo, hi):
    order = convergence_order(decay, np.array([1.0]), np.array([np.exp(-1)]), method, n_steps=n)
    assert lo <= order <= hi


@pytest.mark.parametrize("method", ["dopri5", "rk4", "euler"])
@pytest.mark.parametrize("step", [0.05, 0.3, 1.0])
def test_constant_flow_is_exact(method, step):
    g0 = np.array([0.9, 0.1, -0.2, 0.3, 0.05, -0.02, 0.1])
    u = np.array([-0.1, 0.2, 0.05, -0.3, 0.01, 0.0, -0.04])
    pose, traj = integrate_flow(ConstantField(u), g0, np.zeros(128), IntegratorConfig(method=method, initial_step=step))
    assert np.max(np.abs(traj.final - (g0 + u))) < 1e-12
    assert np.allclose(pose.orientation, normalize_quat((g0 + u)[:4]), atol=1e-15)
    assert traj.times[0] == 0.0 and traj.times[-1] == 1.0


def test_contraction_flow():
    g0 = np.array([1.0, 0, 0, 0, 0.1, 0.0, 0.2])
    g1 = np.array([0.0, 1.0, 0, 0, 0.0, 0.0, 0.1])
    _, traj = integrate_flow(Contraction(g1), g0, np.zeros(128), IntegratorConfig(rtol=1e-8, atol=1e-10))
    exact = g1 + (g0 - g1) * np.exp(-1)
    assert np.max(np.abs(traj.final - exact)) < 1e-8
    assert np.linalg.norm(traj.final - g1) <= np.exp(-1) * np.linalg.norm(g1 - g0) + 1e-8


@settings(max_examples=25, deadline=None)
@given(st.floats(0.2, 3.0), st.floats(1e-6, 1e-3))
def test_tighter_tolerance_never_worse(rate, rtol):
    f = lambda t, y: -rate * y
    exact = np.exp(-rate)
    loose = abs(integrate(f, np.array([1.0]), IntegratorConfig(rtol=rtol, atol=rtol * 1e-2)).final[0] - exact)
    tight = abs(integrate(f, np.array([1.0]), IntegratorConfig(rtol=rtol / 100, atol=rtol * 1e-4)).final[0] - exact)
    assert tight <= loose


def test_adaptive_controller_rejects_and_recovers():
    # a sharp transient forces rejections on the default first step
    f = lambda t, y: -200.0 * (y - np.cos(t))
    traj = integrate(f, np.array([0.0]), IntegratorConfig(initial_step=0.5, rtol=1e-6, atol=1e-9))
    assert traj.n_rejected > 0
    assert traj.times[-1] == 1.0
    assert all(b > a for a, b in zip(traj.times, traj.times[1:]))


def test_failures_are_reported():
    with pytest.raises(IntegrationError):
        integrate(lambda t, y: y * np.nan, np.array([1.0]))
    with pytest.raises(IntegrationError):
        integrate(lambda t, y: np.zeros(3), np.array([1.0]))
    with pytest.raises(IntegrationError):
        integrate(decay, np.array([1.0]), IntegratorConfig(max_steps=2, initial_step=0.01, rtol=1e-12, atol=1e-14))
    with pytest.raises(ValueError):
        IntegratorConfig(method="midpoint")


def test_fixed_step_grid_ends_exactly_at_one():
    traj = integrate_fixed(decay, np.array([1.0]), "rk4", 7)
    assert traj.times[-1] == 1.0 and len(traj.times) == 8
    arr = traj.as_array()
    assert arr.shape == (8, 2) and np.array_equal(arr[:, 0], traj.times)
