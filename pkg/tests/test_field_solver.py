import math

import numpy as np
import pytest

from decouple.errors import OrderExceededError
from decouple.field_solver import (
    FieldStack,
    backward_step,
    derivative_consistency,
    init_terminal,
    monitor_singularity,
    quadrature,
    scaling_transform,
    solve,
    solve_z0,
)
from decouple.grid import GridSpec
from decouple.registry import coupled_scalar, registry_get


def test_quadrature_moments():
    w, a = quadrature(2, 5)
    assert a.sum() == pytest.approx(1.0, abs=1e-14)
    np.testing.assert_allclose(a @ w, 0, atol=1e-14)
    np.testing.assert_allclose(np.einsum("q,qi,qj->ij", a, w, w), np.eye(2), atol=1e-13)
    assert a @ w[:, 0] ** 4 == pytest.approx(3.0)


class TestInitTerminal:
    def test_skorokhod_levels(self):
        p = registry_get("skorokhod")
        g = GridSpec([(-2, 2), (-1, 1)], [9, 5])
        s = init_terminal(p, g, 2)
        X = g.points()
        np.testing.assert_allclose(s.fields[0][:, 0], np.tanh(X[:, 0]) - 0.1 * np.tanh(X[:, 1]), atol=1e-14)
        assert s.fields[1].shape == (45, 1, 2) and s.fields[2].shape == (45, 1, 2, 2)
        np.testing.assert_allclose(s.fields[1][:, 0, 0], 1 - np.tanh(X[:, 0]) ** 2, atol=1e-14)
        assert s.t == p.T and len(s.lip_estimates) == 3

    def test_order_limit(self):
        p = registry_get("linear")
        with pytest.raises(OrderExceededError):
            init_terminal(p, GridSpec([(-1, 1)], [8]), p.k_max)


class TestSolveZ0:
    def test_constant_sigma_single_iteration(self):
        p = registry_get("skorokhod")
        du = np.array([[0.3, -0.2]])
        z, its = solve_z0(p, du, 0.0, np.zeros(2), np.zeros(1))
        assert its == 1
        np.testing.assert_allclose(z, [[0.3]], atol=1e-15)

    def test_zero_gradient(self):
        p = coupled_scalar()
        z, its = solve_z0(p, np.zeros((1, 1)), 0.0, np.zeros(1), np.zeros(1))
        assert its == 1 and not np.any(z)

    def test_affine_sigma_fixed_point(self):
        p = coupled_scalar(sigma0=1.0, sigma_slope=0.5)
        z, its = solve_z0(p, np.array([[0.5]]), 0.0, np.zeros(1), np.zeros(1))
        assert z[0, 0] == pytest.approx(2 / 3, abs=1e-12)
        assert its > 1


def test_linear_problem_exact():
    p = registry_get("linear", mu=0.3)
    g = GridSpec([(-2.0, 2.0)], [21])
    traj = solve(p, 2, g, 0.05)
    assert traj.status == "complete"
    last = traj.snapshots[-1]
    X = g.points()
    for i in range(3):
        np.testing.assert_allclose(last.fields[i], p.exact(i, 0.0, X), atol=1e-12)


@pytest.fixture(scope="module")
def burgers_run():
    p = registry_get("burgers_blowup")
    g = GridSpec(p.hints["box"], p.hints["nodes"])
    return p, solve(p, 1, g, 1e-3, save_every=10)


def test_burgers_tracks_characteristics(burgers_run):
    p, traj = burgers_run
    X = traj.grid.points()
    checked = 0
    for s in traj.snapshots:
        if 1 - (p.T - s.t) < 0.2:
            continue
        for i in (0, 1):
            ex = p.exact(i, s.t, X)
            assert np.max(np.abs(s.fields[i] - ex)) <= 1e-2 * np.max(np.abs(ex))
        checked += 1
    assert checked > 50


def test_burgers_early_stop(burgers_run):
    p, traj = burgers_run
    assert traj.status == "singularity" and traj.triggered == "E0"
    assert 0.45 <= traj.s_min <= 0.55
    assert traj.interval == (traj.s_min, p.T)
    assert traj.diagnostics[-1].triggered == "E0"


def test_smin_monotone_in_threshold():
    p = registry_get("burgers_blowup")
    g = GridSpec(p.hints["box"], p.hints["nodes"])
    s = [solve(p, 1, g, 2e-3, save_every=1000, lip_blowup=lb).s_min for lb in (1e1, 1e2, 1e3)]
    assert s[0] >= s[1] >= s[2]


def _stack(lips, sups=None):
    g = GridSpec([(0, 1)], [4])
    s = FieldStack(0.5, [np.zeros((4, 1))] * len(lips), g)
    s.lip_estimates = list(lips)
    s.sup_norms = sups or [0.0] * len(lips)
    return s


class TestMonitor:
    def test_quiet(self):
        d = monitor_singularity(_stack([0.5, 1.0, 1.0]), L_sigma_z=0.5)
        assert d.triggered == "none" and d.s_min is None
        assert d.e0_margin == pytest.approx(1.5)

    def test_e0_margin(self):
        assert monitor_singularity(_stack([1.995, 0, 0]), 0.5).triggered == "E0"
        assert monitor_singularity(_stack([1.97, 0, 0]), 0.5).triggered == "none"
        assert monitor_singularity(_stack([1.97, 0, 0]), 0.5, e0_margin=0.1).triggered == "E0"

    def test_e1_e2(self):
        assert monitor_singularity(_stack([0.1, 2e3, 0]), 0.5).triggered == "E1"
        d = monitor_singularity(_stack([0.1, 1.0, 2e3]), 0.5)
        assert d.triggered == "E2" and d.s_min == 0.5

    def test_uncoupled_sigma(self):
        d = monitor_singularity(_stack([50.0, 1.0]), 0.0)
        assert d.triggered == "none" and d.e0_margin == math.inf and not d.e2_essential
        assert monitor_singularity(_stack([2e3, 1.0]), 0.0).triggered == "E0"

    def test_nonfinite_triggers(self):
        assert monitor_singularity(_stack([math.nan, 1.0]), 0.5).triggered == "E0"
        assert monitor_singularity(_stack([0.1, math.inf]), 0.5).triggered == "E1"


class TestScaling:
    def test_identity(self):
        p = registry_get("heat")
        g = GridSpec([(-math.pi, math.pi)], [32], "periodic")
        s = init_terminal(p, g, 2)
        out = scaling_transform(s, 1.0)
        for a, b in zip(s.fields, out.fields):
            np.testing.assert_array_equal(a, b)
        assert out.grid == g

    def test_linear_commutes(self):
        p = registry_get("linear", mu=0.2)
        g = GridSpec([(-2.0, 2.0)], [21])
        lam = 2.0
        a = scaling_transform(solve(p, 2, g, 0.05).snapshots[-1], lam)
        b = solve(p.scaled(lam), 2, g.scaled(lam), 0.05).snapshots[-1]
        for u, v in zip(a.fields, b.fields):
            np.testing.assert_allclose(u, v, atol=1e-12)

    def test_rejects_nonpositive(self):
        s = init_terminal(registry_get("linear"), GridSpec([(-1, 1)], [8]), 1)
        with pytest.raises(ValueError):
            scaling_transform(s, 0.0)


def test_backward_step_heat_one_step():
    p = registry_get("heat")
    g = GridSpec([(-math.pi, math.pi)], [256], "periodic")
    s = backward_step(p, init_terminal(p, g, 1), 0.01)
    X = g.points()
    assert s.t == pytest.approx(p.T - 0.01)
    np.testing.assert_allclose(s.fields[0], p.exact(0, s.t, X), atol=1e-7)


def test_skorokhod_coarse_sweep_bounded():
    p = registry_get("skorokhod")
    g = GridSpec([(-8, 8), (-4, 4)], [81, 26])
    traj = solve(p, 2, g, 2e-2, save_every=10)
    assert traj.status == "complete" and traj.triggered == "none"
    for s in traj.snapshots:
        assert s.lip_estimates[0] <= 1.0 + 0.1 + 5e-2  # Lip(xi) with both coordinates
        assert s.sup_norms[1] <= 1.05
    assert max(derivative_consistency(traj)) < 5e-2


def test_bad_dt():
    p = registry_get("linear")
    with pytest.raises(ValueError):
        solve(p, 1, GridSpec([(-1, 1)], [8]), 0.3)
